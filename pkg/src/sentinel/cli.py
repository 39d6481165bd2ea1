"""Command-line entry point chaining the pipeline stages through files."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from . import preprocess as pp
from . import synth as synthmod
from .calibration import ThresholdCalibration, calibrate
from .config import RunConfig, load_config
from .embedding import MetaTask, TaskModel, schema_hash, train_task_model
from .errors import (
    EmptyTrainingSet, LengthMismatch, MissingThreshold, ProvenanceMismatch, SchemaMismatch,
    SentinelError,
)
from .flows import build_flows, write_flows
from .fusion import QualityReport, fuse, read_flows, read_packets, write_fused
from .inference import SupportSet, build_support_set, canonical_classes, detect
from .metrics import compute_metrics, per_unknown_report, render_table
from .packets import packet_row, write_packets
from .pcap import DecodeReport, decode_all, read_capture
from .schema import CATEGORICAL, LABEL, UNKNOWN, feature_columns
from .tables import read_frame, write_frame

log = logging.getLogger("sentinel")

MANIFEST = "manifest.json"
PIPELINE = "pipeline.json"
SUPPORT = "support.csv"


class Outputs:
    """Stage files next to their targets and move them into place only on success."""

    def __init__(self):
        self.staged = []
        self.committed = []
        self.created = []

    def file(self, path) -> Path:
        path = Path(path)
        self.mkdir(path.parent)
        tmp = path.with_name(path.name + ".partial")
        self.staged.append((tmp, path))
        return tmp

    def mkdir(self, path) -> None:
        missing = []
        p = Path(path)
        while not p.exists():
            missing.append(p)
            p = p.parent
        for d in reversed(missing):
            d.mkdir()
            self.created.append(d)

    def commit(self) -> None:
        for tmp, path in self.staged:
            os.replace(tmp, path)
            self.committed.append(path)
        self.staged = []

    def abort(self) -> None:
        # a multi-stage run removes what earlier stages already moved into place
        for tmp, _ in self.staged:
            tmp.unlink(missing_ok=True)
        for path in self.committed:
            path.unlink(missing_ok=True)
        for d in reversed(self.created):
            try:
                d.rmdir()
            except OSError:
                pass


# ---- provenance ----

def meta_path(path) -> Path:
    return Path(str(path) + ".meta.json")


def write_meta(out: Outputs, path, cfg: RunConfig, producer: str) -> None:
    doc = {"config_hash": cfg.config_hash, "seed": cfg.seed, "producer": producer}
    out.file(meta_path(path)).write_text(json.dumps(doc, sort_keys=True) + "\n")


def read_meta(path) -> Optional[dict]:
    p = meta_path(path)
    return json.loads(p.read_text()) if p.exists() else None


def require_hash(found: Optional[str], cfg: RunConfig, what: str) -> None:
    if found != cfg.config_hash:
        raise ProvenanceMismatch(f"{what} was produced under config {found}, current config is {cfg.config_hash}")


# ---- table helpers ----

def read_table(path) -> pd.DataFrame:
    if not Path(path).exists():
        raise FileNotFoundError(f"no such file: {path}")
    return read_frame(path, categorical=list(CATEGORICAL) + [LABEL])


def feature_rows(pipe: pp.PreprocessPipeline, frame: pd.DataFrame) -> pd.DataFrame:
    missing = [c for c in pipe.input_columns if c not in frame.columns]
    if missing:
        raise SchemaMismatch(f"table lacks pipeline columns {missing}")
    return frame[list(pipe.input_columns)]


def features(pipe: pp.PreprocessPipeline, frame: pd.DataFrame) -> np.ndarray:
    return pp.apply(pipe, feature_rows(pipe, frame))


# ---- stages ----

def stage_extract(pcap, out_dir, name, cfg, out: Outputs) -> tuple:
    report = DecodeReport()
    packets = decode_all(read_capture(pcap), report)
    flows = build_flows(packets)
    name = name or Path(pcap).stem
    flow_path = Path(out_dir) / f"{name}.flows.csv"
    packet_path = Path(out_dir) / f"{name}.packets.csv"
    write_flows(out.file(flow_path), flows)
    write_packets(out.file(packet_path), [packet_row(p) for p in packets])
    write_meta(out, flow_path, cfg, "extract")
    write_meta(out, packet_path, cfg, "extract")
    log.info("extracted %d packets into %d flows", len(packets), len(flows))
    return flow_path, packet_path


def stage_fuse(flows_path, packets_path, out_path, label, cfg, out: Outputs) -> Path:
    report = QualityReport()
    rows = fuse(read_flows(flows_path), read_packets(packets_path), label, report)
    write_fused(out.file(out_path), rows)
    write_meta(out, out_path, cfg, "fuse")
    log.info("fused %d flows; %d without packets, %d packets unmatched",
             len(rows), len(report.empty_flows), report.unmatched_packets)
    return Path(out_path)


def stage_preprocess(train_path, out_path, cfg: RunConfig, out: Outputs) -> pp.PreprocessPipeline:
    train = read_table(train_path)
    columns = [c for c in feature_columns(cfg.feature_set)]
    missing = [c for c in columns if c not in train.columns]
    if missing:
        raise SchemaMismatch(f"training table lacks {missing}")
    pipe = pp.fit(train[columns + [LABEL]] if LABEL in train.columns else train[columns],
                  threshold=cfg.importance_threshold, columns=columns, forest=cfg.forest())
    pipe.config_hash = cfg.config_hash
    out.file(out_path).write_text(pipe.to_json())
    log.info("selected %d of %d encoded columns", sum(pipe.selected_mask), len(pipe.selected_mask))
    return pipe


def load_pipeline(path, cfg) -> pp.PreprocessPipeline:
    pipe = pp.PreprocessPipeline.load(path)
    require_hash(pipe.config_hash, cfg, f"pipeline {path}")
    return pipe


def stage_train(pipe_path, train_path, models_dir, cfg: RunConfig, out: Outputs) -> dict:
    pipe = load_pipeline(pipe_path, cfg)
    train = read_table(train_path)
    if LABEL not in train.columns or len(train) == 0:
        raise EmptyTrainingSet("training table needs labeled rows")
    labels = train[LABEL].astype(str).tolist()
    classes = canonical_classes(labels, cfg.benign_label)
    X = features(pipe, train)
    models_dir = Path(models_dir)
    shash = schema_hash(pipe.selected_columns)
    files = {}
    for attack in classes[1:]:
        keep = [i for i, y in enumerate(labels) if y in (cfg.benign_label, attack)]
        model = train_task_model(MetaTask(cfg.benign_label, attack), X[keep],
                                 [labels[i] for i in keep], cfg.train_config())
        model.schema_hash = shash
        model.config_hash = cfg.config_hash
        fname = f"task-{len(files):02d}.model"
        out.file(models_dir / fname).write_bytes(model.to_bytes())
        files[attack] = fname
        log.info("task %s: loss %.4f -> %.4f", attack, model.initial_loss, model.final_loss)

    support = build_support_set(X, labels, k=cfg.support_k, classes=classes, seed=cfg.seed)
    rows = train.iloc[support.indices][list(pipe.input_columns)].copy()
    rows[LABEL] = support.labels
    rows.insert(0, "train_index", support.indices)
    write_frame(out.file(models_dir / SUPPORT), rows)
    write_meta(out, models_dir / SUPPORT, cfg, "train")
    out.file(models_dir / PIPELINE).write_text(pipe.to_json())
    manifest = {
        "kind": "sentinel-models", "version": 1, "config_hash": cfg.config_hash, "seed": cfg.seed,
        "benign": cfg.benign_label, "classes": classes, "models": files,
        "schema_hash": shash, "support": {"file": SUPPORT, "k": cfg.support_k,
                                          "method": support.method, "seed": cfg.seed},
    }
    out.file(models_dir / MANIFEST).write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest


class ModelBundle:
    def __init__(self, models_dir, cfg: RunConfig, support_path=None):
        models_dir = Path(models_dir)
        path = models_dir / MANIFEST
        if not path.exists():
            raise FileNotFoundError(f"no model manifest in {models_dir}")
        self.manifest = json.loads(path.read_text())
        require_hash(self.manifest.get("config_hash"), cfg, f"models in {models_dir}")
        self.pipe = load_pipeline(models_dir / PIPELINE, cfg)
        self.classes = self.manifest["classes"]
        self.models = {}
        for attack, fname in self.manifest["models"].items():
            model = TaskModel.load(models_dir / fname)
            require_hash(model.config_hash, cfg, f"model {fname}")
            if model.schema_hash != self.manifest["schema_hash"]:
                raise SchemaMismatch(f"model {fname} was trained on a different feature schema")
            self.models[attack] = model
        support_path = Path(support_path) if support_path else models_dir / SUPPORT
        meta = read_meta(support_path)
        require_hash(meta and meta.get("config_hash"), cfg, f"support set {support_path}")
        frame = read_table(support_path)
        X = features(self.pipe, frame)
        self.support = SupportSet(X, frame[LABEL].astype(str).tolist(), list(self.classes),
                                  frame["train_index"].astype(int).tolist(),
                                  k=self.manifest["support"]["k"], seed=self.manifest["support"]["seed"])

    @property
    def ordered_models(self) -> list:
        return [self.models[c] for c in self.classes[1:]]


def stage_calibrate(models_dir, train_path, out_path, cfg: RunConfig, out: Outputs) -> ThresholdCalibration:
    bundle = ModelBundle(models_dir, cfg)
    train = read_table(train_path)
    labels = np.asarray(train[LABEL].astype(str).tolist())
    X = features(bundle.pipe, train)
    benign = X[labels == cfg.benign_label]
    per_class = {c: X[labels == c] for c in bundle.classes[1:]}
    calib = calibrate({c: bundle.models[c] for c in bundle.classes[1:]}, bundle.support, benign,
                      per_class, cfg.grid(), bundle.classes, cfg.reduction)
    calib.config_hash = cfg.config_hash
    out.file(out_path).write_text(calib.to_json())
    log.info("tau* = %r", calib.tau_star)
    return calib


def prediction_frame(preds, attack_classes, support_classes) -> pd.DataFrame:
    data = {"id": [p.query_id for p in preds], LABEL: [p.label for p in preds],
            "mean_similarity": [p.mean_similarity for p in preds]}
    for j, c in enumerate(attack_classes):
        data[f"s:{c}"] = [p.per_model[j][0] for p in preds]
        data[f"y:{c}"] = [p.per_model[j][1] for p in preds]
    for c in support_classes:
        data[f"score:{c}"] = [p.class_scores[c] for p in preds]
    data[f"score:{UNKNOWN}"] = [-p.mean_similarity for p in preds]
    return pd.DataFrame(data)


def stage_detect(models_dir, calib_path, queries_path, out_path, cfg: RunConfig, out: Outputs,
                 support_path=None) -> pd.DataFrame:
    if calib_path is None or not Path(calib_path).exists():
        raise MissingThreshold("no calibration artifact; run `sentinel calibrate` first")
    calib = ThresholdCalibration.load(calib_path)
    require_hash(calib.config_hash, cfg, f"calibration {calib_path}")
    bundle = ModelBundle(models_dir, cfg, support_path)
    queries = read_table(queries_path)
    Q = features(bundle.pipe, queries)
    ids = queries["id"].tolist() if "id" in queries.columns else list(range(len(queries)))
    preds = detect(Q, bundle.ordered_models, bundle.support, calib.tau_star, bundle.classes,
                   cfg.reduction, ids)
    frame = prediction_frame(preds, bundle.classes[1:], bundle.support.classes)
    write_frame(out.file(out_path), frame)
    write_meta(out, out_path, cfg, "detect")
    return frame


def stage_evaluate(pred_path, truth_path, out_path, out: Outputs, table_path=None) -> dict:
    pred = read_table(pred_path)
    truth = read_table(truth_path)
    if len(truth) != len(pred):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(truth)} truth rows")
    if "id" in truth.columns:
        if sorted(truth["id"].tolist()) != sorted(pred["id"].tolist()):
            raise LengthMismatch("prediction ids and truth ids differ")
        truth = truth.set_index("id").loc[pred["id"].tolist()]
    y_true = truth[LABEL].astype(str).tolist()
    y_pred = pred[LABEL].astype(str).tolist()
    scores = {c.split(":", 1)[1]: pred[c].astype(float).tolist() for c in pred.columns if c.startswith("score:")}
    report = compute_metrics(y_true, y_pred, scores)
    rows = per_unknown_report(y_true, y_pred, truth["origin"].astype(str).tolist()) if "origin" in truth.columns else []
    meta = read_meta(pred_path) or {}
    doc = {"kind": "sentinel-report", "config_hash": meta.get("config_hash"), "seed": meta.get("seed"),
           "metrics": report.to_dict(), "per_unknown": rows}
    out.file(out_path).write_text(json.dumps(doc, indent=1) + "\n")
    text = report.to_text() + ("\n" + render_table(rows) if rows else "")
    if table_path:
        out.file(table_path).write_text(text)
    print(text, end="")
    return doc


def stage_synth(spec_arg, out_dir, cfg: RunConfig, out: Outputs, pcap: bool = False) -> None:
    spec = synthmod.acceptance_spec(cfg.seed) if spec_arg == "acceptance" else synthmod.SynthSpec.load(spec_arg)
    train, test, truth = synthmod.generate(spec)
    out_dir = Path(out_dir)
    for name, frame in (("train.csv", train), ("test.csv", test), ("truth.csv", truth)):
        write_frame(out.file(out_dir / name), frame)
        write_meta(out, out_dir / name, cfg, "synth")
    out.file(out_dir / "spec.json").write_text(json.dumps(spec.to_dict(), indent=1) + "\n")
    if pcap:
        synthmod.write_capture(out.file(out_dir / "synthetic.pcap"), synthmod.synthetic_capture(spec.seed))


# ---- argument handling ----

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sentinel", description="Open-set network intrusion detection pipeline.")
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="decode a pcap into flow and packet CSVs")
    p.add_argument("--pcap", required=True)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--name")

    p = sub.add_parser("fuse", help="join flow and packet CSVs into fused records")
    p.add_argument("--flows", required=True)
    p.add_argument("--packets", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--label")

    p = sub.add_parser("preprocess", help="fit the encoding/scaling/selection pipeline")
    p.add_argument("--fit", required=True)
    p.add_argument("--threshold", help="none, 0.01 or 0.02 (overrides config)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one task model per known attack class")
    p.add_argument("--pipeline", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--out", required=True, help="models directory")

    p = sub.add_parser("calibrate", help="select the unknown-rejection threshold")
    p.add_argument("--models", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("detect", help="classify queries as benign, known attack or unknown")
    p.add_argument("--models", required=True)
    p.add_argument("--support")
    p.add_argument("--calib")
    p.add_argument("--queries", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="score predictions against truth labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--table", help="also write the text report here")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="JSON spec file, or 'acceptance'")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--pcap", action="store_true", help="also write a small synthetic capture")

    p = sub.add_parser("run", help="preprocess, train, calibrate, detect and evaluate in one go")
    p.add_argument("--train", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--truth")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def dispatch(args, cfg: RunConfig, out: Outputs) -> None:
    cmd = args.command
    if cmd == "extract":
        stage_extract(args.pcap, args.out_dir, args.name, cfg, out)
    elif cmd == "fuse":
        stage_fuse(args.flows, args.packets, args.out, args.label, cfg, out)
    elif cmd == "preprocess":
        if args.threshold is not None:
            cfg.importance_threshold = None if args.threshold.lower() == "none" else float(args.threshold)
            cfg.validate()
        stage_preprocess(args.fit, args.out, cfg, out)
    elif cmd == "train":
        stage_train(args.pipeline, args.train, args.out, cfg, out)
    elif cmd == "calibrate":
        stage_calibrate(args.models, args.train, args.out, cfg, out)
    elif cmd == "detect":
        stage_detect(args.models, args.calib, args.queries, args.out, cfg, out, args.support)
    elif cmd == "evaluate":
        stage_evaluate(args.pred, args.truth, args.out, out, args.table)
    elif cmd == "synth":
        stage_synth(args.spec, args.out, cfg, out, args.pcap)
    elif cmd == "run":
        run_all(args.train, args.queries, args.truth, args.out, cfg, out)


def run_all(train, queries, truth, out_dir, cfg: RunConfig, out: Outputs) -> None:
    # each stage reads what the previous one committed
    d = Path(out_dir)
    stage_preprocess(train, d / PIPELINE, cfg, out)
    out.commit()
    stage_train(d / PIPELINE, train, d / "models", cfg, out)
    out.commit()
    stage_calibrate(d / "models", train, d / "calibration.json", cfg, out)
    out.commit()
    stage_detect(d / "models", d / "calibration.json", queries, d / "predictions.csv", cfg, out)
    out.commit()
    if truth:
        stage_evaluate(d / "predictions.csv", truth, d / "report.json", out, d / "report.txt")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Outputs()
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        dispatch(args, cfg, out)
        out.commit()
    except SentinelError as exc:
        out.abort()
        print(f"sentinel: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        out.abort()
        print(f"sentinel: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
