"""Known/unknown classification of query flows against a shared support set."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .calibration import class_scores, combine, mean_similarity, model_prediction
from .errors import MissingClass, MissingThreshold, SchemaMismatch
from .schema import UNKNOWN

DEFAULT_K = 10


def canonical_classes(labels: Sequence[str], benign: str = "benign") -> list:
    """Benign first, then attack classes in sorted order."""
    rest = sorted({str(y) for y in labels} - {benign})
    return [benign] + rest


def farthest_point_order(X: np.ndarray, k: int) -> list:
    """Medoid first, then repeatedly the row farthest from everything chosen so far."""
    n = len(X)
    k = min(k, n)
    if k == 0:
        return []
    # row by row keeps memory linear and distances exact for identical rows
    totals = np.array([np.linalg.norm(X - X[i], axis=1).sum() for i in range(n)])
    chosen = [int(np.argmin(totals))]
    nearest = np.linalg.norm(X - X[chosen[0]], axis=1)
    nearest[chosen[0]] = -np.inf
    while len(chosen) < k:
        nxt = int(np.argmax(nearest))
        chosen.append(nxt)
        nearest = np.minimum(nearest, np.linalg.norm(X - X[nxt], axis=1))
        nearest[chosen] = -np.inf
    return chosen


@dataclass
class SupportSet:
    X: np.ndarray
    labels: list
    classes: list
    indices: list
    k: int = DEFAULT_K
    method: str = "medoid+farthest-point"
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "X": [[float(v) for v in row] for row in self.X],
            "labels": self.labels, "classes": self.classes, "indices": self.indices,
            "k": self.k, "method": self.method, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SupportSet":
        X = np.asarray(doc["X"], dtype=np.float64).reshape(len(doc["labels"]), -1)
        return cls(X, list(doc["labels"]), list(doc["classes"]), list(doc["indices"]),
                   doc["k"], doc["method"], doc["seed"])


def build_support_set(X: np.ndarray, labels: Sequence[str], k: int = DEFAULT_K,
                      classes: Optional[Sequence[str]] = None, seed: int = 0) -> SupportSet:
    """Pick up to ``k`` diverse training rows per class.

    Selection is deterministic; ``seed`` is recorded for provenance only.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = [str(y) for y in labels]
    classes = list(classes) if classes is not None else canonical_classes(labels)
    indices, chosen_labels = [], []
    for c in classes:
        members = [i for i, y in enumerate(labels) if y == c]
        if not members:
            raise MissingClass(f"class {c} has no training rows for the support set")
        for j in farthest_point_order(X[members], k):
            indices.append(members[j])
            chosen_labels.append(c)
    return SupportSet(X[indices], chosen_labels, classes, indices, k, seed=seed)


@dataclass
class Prediction:
    query_id: object
    label: str
    mean_similarity: float
    per_model: list = field(default_factory=list)
    class_scores: dict = field(default_factory=dict)


def decide(sims: Sequence[float], votes: Sequence[str], tau_star: float, class_order: Sequence[str]):
    """Unknown when the mean similarity falls strictly below the threshold, else the vote."""
    s_bar, vote = combine(list(zip(sims, votes)), class_order)
    return (UNKNOWN if s_bar < tau_star else vote), s_bar


def detect(queries: np.ndarray, models: Sequence, support: SupportSet, tau_star: Optional[float],
           class_order: Optional[Sequence[str]] = None, reduction: str = "nearest",
           ids: Optional[Sequence] = None) -> list[Prediction]:
    if tau_star is None:
        raise MissingThreshold("no calibrated threshold; run calibration first")
    Q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    width = support.X.shape[1]
    if Q.shape[1] != width:
        raise SchemaMismatch(f"queries have {Q.shape[1]} features, support has {width}")
    for m in models:
        if getattr(m, "input_dim", width) != width:
            raise SchemaMismatch(f"model expects {m.input_dim} features, support has {width}")
    class_order = list(class_order) if class_order is not None else list(support.classes)
    ids = list(ids) if ids is not None else list(range(len(Q)))

    scored = [class_scores(m, support, Q, reduction) for m in models]
    picks = [model_prediction(s, support.classes) for s in scored]
    out = []
    for q in range(len(Q)):
        sims = [float(p[0][q]) for p in picks]
        votes = [p[1][q] for p in picks]
        label, s_bar = decide(sims, votes, tau_star, class_order)
        per_class = {c: mean_similarity([s[q, j] for s in scored]) for j, c in enumerate(support.classes)}
        out.append(Prediction(ids[q], label, s_bar, list(zip(sims, votes)), per_class))
    return out
