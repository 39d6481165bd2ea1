"""Open-set threshold selection by pseudo-unknown simulation."""
from __future__ import annotations

import json
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import EmptyClassData, EmptyModelSet, SchemaMismatch, TooFewModels
from .schema import UNKNOWN

STRATEGY = "similarity-average+majority-vote"


@dataclass(frozen=True)
class ThresholdGrid:
    start: float = 0.10
    end: float = 0.80
    step: float = 0.05

    @property
    def values(self) -> list:
        count = int(round((self.end - self.start) / self.step)) + 1
        return [round(self.start + k * self.step, 10) for k in range(count)]


def mean_similarity(sims: Sequence[float]) -> float:
    """Left-to-right sum divided by the count; audit trails reproduce it exactly."""
    total = 0.0
    for s in sims:
        total += float(s)
    return total / len(sims)


def majority_vote(labels: Sequence[str], sims: Sequence[float], class_order: Sequence[str]) -> str:
    """Most frequent label; ties go to the higher summed similarity, then canonical order."""
    counts, sums = {}, {}
    for y, s in zip(labels, sims):
        counts[y] = counts.get(y, 0) + 1
        sums[y] = sums.get(y, 0.0) + float(s)
    rank = {c: i for i, c in enumerate(class_order)}
    return min(counts, key=lambda y: (-counts[y], -sums[y], rank.get(y, len(rank))))


def class_scores(model, support, X: np.ndarray, reduction: str = "nearest") -> np.ndarray:
    """Per-class similarity of each row under one model: (rows, support classes)."""
    E = model.embed(X)
    S = model.embed(support.X)
    out = np.empty((len(E), len(support.classes)))
    labels = np.asarray(support.labels)
    for c, name in enumerate(support.classes):
        members = S[labels == name]
        if reduction == "nearest":
            out[:, c] = (E @ members.T).max(axis=1)
        elif reduction == "prototype":
            proto = members.mean(axis=0)
            proto = proto / max(np.linalg.norm(proto), 1e-12)
            out[:, c] = E @ proto
        else:
            raise ValueError(f"unknown reduction {reduction!r}")
    return out


def model_prediction(scores: np.ndarray, classes: Sequence[str], allowed: Optional[Sequence[bool]] = None):
    """(max similarity, predicted class) per row; ties resolve to the earliest class."""
    masked = scores if allowed is None else np.where(np.asarray(allowed)[None, :], scores, -np.inf)
    best = np.argmax(masked, axis=1)
    return masked[np.arange(len(scores)), best], [classes[b] for b in best]


def combine(per_model: Sequence[tuple], class_order: Sequence[str]):
    """Fold per-model (similarity, label) pairs for one sample into (mean similarity, vote)."""
    if not per_model:
        raise EmptyModelSet("no models to aggregate")
    sims = [s for s, _ in per_model]
    labels = [y for _, y in per_model]
    return mean_similarity(sims), majority_vote(labels, sims, class_order)


def score_sample(models: Sequence, support, x, class_order: Sequence[str],
                 exclude: Sequence[str] = (), reduction: str = "nearest"):
    """Mean best-match similarity and majority-voted class of one sample over a model subset."""
    if not models:
        raise EmptyModelSet("score_sample needs at least one model")
    allowed = [c not in exclude for c in support.classes]
    per_model = []
    for m in models:
        sims, preds = model_prediction(class_scores(m, support, np.atleast_2d(x), reduction),
                                       support.classes, allowed)
        per_model.append((float(sims[0]), preds[0]))
    return combine(per_model, class_order)


def unknown_f1(y_true_unknown: Sequence[bool], y_pred: Sequence[str]) -> float:
    tp = fp = fn = 0
    for truth, pred in zip(y_true_unknown, y_pred):
        flagged = pred == UNKNOWN
        if flagged and truth:
            tp += 1
        elif flagged:
            fp += 1
        elif truth:
            fn += 1
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2 * tp / denom


@dataclass
class HeldOutScores:
    """Per-sample aggregated scores for one pseudo-unknown class."""

    held_out: str
    mean_sims: list
    votes: list
    is_unknown: list


def predict(mean_sims: Sequence[float], votes: Sequence[str], tau: float) -> list:
    return [UNKNOWN if s < tau else v for s, v in zip(mean_sims, votes)]


@dataclass
class ThresholdCalibration:
    grid: list
    per_class: dict = field(default_factory=dict)
    tau_star: float = 0.0
    strategy: str = STRATEGY
    config_hash: str = ""

    def to_json(self) -> str:
        doc = {
            "kind": "sentinel-calibration",
            "version": 1,
            "config_hash": self.config_hash,
            "strategy": self.strategy,
            "grid": self.grid,
            "per_class": self.per_class,
            "tau_star": self.tau_star,
        }
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ThresholdCalibration":
        doc = json.loads(text)
        if doc.get("kind") != "sentinel-calibration":
            raise SchemaMismatch("not a calibration artifact")
        return cls(grid=doc["grid"], per_class=doc["per_class"], tau_star=doc["tau_star"],
                   strategy=doc["strategy"], config_hash=doc["config_hash"])

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "ThresholdCalibration":
        return cls.from_json(Path(path).read_text())


def select_thresholds(tables: Sequence[HeldOutScores], grid: Sequence[float]) -> ThresholdCalibration:
    """Best unknown-F1 threshold per held-out class (smallest on ties) and their mean."""
    grid = list(grid)
    calib = ThresholdCalibration(grid=grid)
    taus = []
    for t in tables:
        curve = [unknown_f1(t.is_unknown, predict(t.mean_sims, t.votes, tau)) for tau in grid]
        best = max(range(len(grid)), key=lambda k: (curve[k], -k))
        calib.per_class[t.held_out] = {"tau": grid[best], "best_f1": curve[best], "curve": curve}
        taus.append(grid[best])
    # exact rational mean rounded once, so it never leaves the grid range
    calib.tau_star = float(sum(map(Fraction, taus)) / len(taus))
    return calib


def check_calibration_inputs(names: Sequence[str], benign_count: int, counts: Mapping[str, int]) -> None:
    if len(names) < 2:
        raise TooFewModels(f"calibration needs at least two task models, got {len(names)}")
    if benign_count == 0:
        raise EmptyClassData("no benign samples for calibration")
    for name in names:
        if counts.get(name, 0) == 0:
            raise EmptyClassData(f"no samples for class {name}")


def tables_from_scores(scored: Mapping[str, np.ndarray], support_classes: Sequence[str],
                       benign_count: int, counts: Mapping[str, int],
                       class_order: Sequence[str]) -> list[HeldOutScores]:
    """Build held-out score tables from per-model class-score matrices.

    Each matrix covers the benign rows first, then each model's class rows in
    model order; columns follow ``support_classes``.
    """
    names = list(scored)
    check_calibration_inputs(names, benign_count, counts)
    offsets = np.cumsum([0, benign_count] + [counts[n] for n in names])
    tables = []
    for i, held in enumerate(names):
        rows = np.r_[offsets[i + 1]:offsets[i + 2], 0:benign_count]
        truth = [True] * counts[held] + [False] * benign_count
        allowed = [c != held for c in support_classes]
        per_model = [model_prediction(scored[other][rows], support_classes, allowed)
                     for other in names if other != held]
        mean_sims, votes = [], []
        for k in range(len(rows)):
            s, v = combine([(float(sims[k]), preds[k]) for sims, preds in per_model], class_order)
            mean_sims.append(s)
            votes.append(v)
        tables.append(HeldOutScores(held, mean_sims, votes, truth))
    return tables


def held_out_scores(models: Mapping[str, object], support, benign: np.ndarray,
                    classes: Mapping[str, np.ndarray], class_order: Sequence[str],
                    reduction: str = "nearest") -> list[HeldOutScores]:
    names = list(models)
    counts = {n: len(classes[n]) if n in classes else 0 for n in names}
    check_calibration_inputs(names, len(benign), counts)
    # one scoring pass per model over every evaluation row
    everything = np.vstack([np.asarray(benign)] + [np.asarray(classes[n]) for n in names])
    scored = {n: class_scores(models[n], support, everything, reduction) for n in names}
    return tables_from_scores(scored, support.classes, len(benign), counts, class_order)


def calibrate(models: Mapping[str, object], support, benign: np.ndarray,
              classes: Mapping[str, np.ndarray], grid: ThresholdGrid = ThresholdGrid(),
              class_order: Optional[Sequence[str]] = None, reduction: str = "nearest") -> ThresholdCalibration:
    """Hold out each known attack class in turn and pick the threshold maximizing unknown-F1.

    ``models`` maps each attack class to its task model. The held-out class is
    removed from the support set so the remaining models cannot match it directly.
    """
    class_order = list(class_order) if class_order is not None else list(support.classes)
    tables = held_out_scores(models, support, benign, classes, class_order, reduction)
    return select_thresholds(tables, grid.values)


def calibrate_from_scores(scored: Mapping[str, np.ndarray], support_classes: Sequence[str],
                          benign_count: int, counts: Mapping[str, int],
                          grid: ThresholdGrid = ThresholdGrid(),
                          class_order: Optional[Sequence[str]] = None) -> ThresholdCalibration:
    """Calibration over precomputed class-score matrices (see ``tables_from_scores``)."""
    class_order = list(class_order) if class_order is not None else list(support_classes)
    tables = tables_from_scores(scored, support_classes, benign_count, counts, class_order)
    return select_thresholds(tables, grid.values)
