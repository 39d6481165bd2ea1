"""Multiclass and open-set metrics computed in exact rational arithmetic."""
from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from .errors import LengthMismatch, UnknownLabel
from .schema import UNKNOWN


def default_labels(*columns: Sequence[str]) -> list:
    seen = {str(y) for col in columns for y in col}
    rest = sorted(seen - {"benign", UNKNOWN})
    return (["benign"] if "benign" in seen else []) + rest + [UNKNOWN]


def ratio(num: int, den: int) -> Fraction:
    return Fraction(num, den) if den else Fraction(0)


def roc_auc(pos: Sequence[float], neg: Sequence[float]) -> float:
    """Area under the ROC curve; tied scores count half (Mann-Whitney form)."""
    if not pos or not neg:
        raise ValueError("AUC needs positive and negative samples")
    ranked = sorted([(s, 1) for s in pos] + [(s, 0) for s in neg], key=lambda t: t[0])
    # twice the midrank, kept integral
    twice_rank_sum = 0
    i = 0
    while i < len(ranked):
        j = i
        while j < len(ranked) and ranked[j][0] == ranked[i][0]:
            j += 1
        twice_mid = i + 1 + j
        twice_rank_sum += twice_mid * sum(flag for _, flag in ranked[i:j])
        i = j
    n_pos, n_neg = len(pos), len(neg)
    u = Fraction(twice_rank_sum, 2) - Fraction(n_pos * (n_pos + 1), 2)
    return float(u / (n_pos * n_neg))


@dataclass
class MetricsReport:
    labels: list
    confusion: list
    accuracy: float
    precision: dict
    recall: dict
    f1: dict
    support: dict
    undefined: dict
    weighted_f1: float
    unknown_precision: float
    unknown_recall: float
    unknown_f1: float
    auc: Optional[float] = None
    per_class_auc: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "labels": self.labels, "confusion": self.confusion, "accuracy": self.accuracy,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "support": self.support, "undefined": self.undefined,
            "weighted_f1": self.weighted_f1, "unknown_precision": self.unknown_precision,
            "unknown_recall": self.unknown_recall, "unknown_f1": self.unknown_f1,
            "auc": self.auc, "per_class_auc": self.per_class_auc,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def to_text(self) -> str:
        lines = [f"{'class':<16}{'P':>8}{'R':>8}{'F1':>8}{'n':>6}"]
        for c in self.labels:
            flag = "  undefined" if self.undefined[c] else ""
            lines.append(f"{c:<16}{self.precision[c]:>8.4f}{self.recall[c]:>8.4f}{self.f1[c]:>8.4f}"
                         f"{self.support[c]:>6}{flag}")
        lines.append(f"accuracy {self.accuracy:.4f}  W-F1 {self.weighted_f1:.4f}  "
                     f"U-Pr {self.unknown_precision:.4f}  U-Rc {self.unknown_recall:.4f}  "
                     f"U-F1 {self.unknown_f1:.4f}")
        if self.auc is not None:
            lines.append(f"macro AUC {self.auc:.4f}")
        return "\n".join(lines) + "\n"


def compute_metrics(y_true: Sequence[str], y_pred: Sequence[str],
                    scores: Optional[Mapping[str, Sequence[float]]] = None,
                    labels: Optional[Sequence[str]] = None) -> MetricsReport:
    """Accuracy, per-class P/R/F1, support-weighted F1 (unknown included) and unknown-class metrics.

    ``scores`` maps a class to one score per sample for one-vs-rest AUC; classes
    lacking positives or negatives are skipped in the macro average.
    """
    y_true = [str(y) for y in y_true]
    y_pred = [str(y) for y in y_pred]
    if len(y_true) != len(y_pred):
        raise LengthMismatch(f"{len(y_true)} truth labels vs {len(y_pred)} predictions")
    labels = list(labels) if labels is not None else default_labels(y_true, y_pred)
    index = {c: i for i, c in enumerate(labels)}
    stray = sorted({y for y in y_true + y_pred if y not in index})
    if stray:
        raise UnknownLabel(f"labels outside the declared class set: {stray}")

    confusion = [[0] * len(labels) for _ in labels]
    for t, p in zip(y_true, y_pred):
        confusion[index[t]][index[p]] += 1
    n = len(y_true)
    correct = sum(confusion[i][i] for i in range(len(labels)))

    prec, rec, f1, support, undefined = {}, {}, {}, {}, {}
    weighted = Fraction(0)
    for c, i in index.items():
        tp = confusion[i][i]
        predicted = sum(row[i] for row in confusion)
        actual = sum(confusion[i])
        p, r = ratio(tp, predicted), ratio(tp, actual)
        f = ratio(2 * tp, predicted + actual)
        prec[c], rec[c], f1[c] = float(p), float(r), float(f)
        support[c] = actual
        undefined[c] = predicted == 0 or actual == 0
        weighted += actual * f

    per_class_auc = {}
    if scores:
        for c, vals in scores.items():
            pos = [float(v) for v, t in zip(vals, y_true) if t == c]
            neg = [float(v) for v, t in zip(vals, y_true) if t != c]
            if pos and neg:
                per_class_auc[c] = roc_auc(pos, neg)

    u = labels.index(UNKNOWN) if UNKNOWN in index else None
    return MetricsReport(
        labels=labels, confusion=confusion, accuracy=float(ratio(correct, n)),
        precision=prec, recall=rec, f1=f1, support=support, undefined=undefined,
        weighted_f1=float(ratio(1, n) * weighted) if n else 0.0,
        unknown_precision=prec[UNKNOWN] if u is not None else 0.0,
        unknown_recall=rec[UNKNOWN] if u is not None else 0.0,
        unknown_f1=f1[UNKNOWN] if u is not None else 0.0,
        auc=statistics.mean(per_class_auc.values()) if per_class_auc else None,
        per_class_auc=per_class_auc,
    )


def per_unknown_report(y_true: Sequence[str], y_pred: Sequence[str], origin: Sequence[str]) -> list:
    """One row per withheld class (known rows plus that class's rows) and an average row."""
    y_true, y_pred, origin = [str(v) for v in y_true], [str(v) for v in y_pred], [str(v) for v in origin]
    names = sorted({o for t, o in zip(y_true, origin) if t == UNKNOWN})
    rows = []
    for name in names:
        keep = [k for k, (t, o) in enumerate(zip(y_true, origin)) if t != UNKNOWN or o == name]
        rep = compute_metrics([y_true[k] for k in keep], [y_pred[k] for k in keep])
        rows.append({"unknown_class": name, "w_f1": rep.weighted_f1, "u_precision": rep.unknown_precision,
                     "u_recall": rep.unknown_recall, "u_f1": rep.unknown_f1})
    if rows:
        avg = {"unknown_class": "Average"}
        for key in ("w_f1", "u_precision", "u_recall", "u_f1"):
            avg[key] = statistics.mean(r[key] for r in rows)
        rows.append(avg)
    return rows


def render_table(rows: Sequence[Mapping]) -> str:
    lines = [f"{'Unknown class':<20}{'W-F1':>8}{'U-Pr':>8}{'U-Rc':>8}{'U-F1':>8}"]
    for r in rows:
        lines.append(f"{r['unknown_class']:<20}{r['w_f1']:>8.3f}{r['u_precision']:>8.3f}"
                     f"{r['u_recall']:>8.3f}{r['u_f1']:>8.3f}")
    return "\n".join(lines) + "\n"
