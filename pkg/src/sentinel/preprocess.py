"""One-hot encoding, MinMax scaling and forest-importance feature selection."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.ensemble import RandomForestClassifier

from .errors import EmptyTrainingSet, SchemaMismatch, SingleClassTraining
from .schema import CATEGORICAL, FEATURES, LABEL

SCHEMA_VERSION = 1
HISTORY_BUCKET = 4
ALLOWED_THRESHOLDS = (None, 0.01, 0.02)


def category(column: str, value) -> str:
    """Canonical string for a categorical cell (ints and integral floats agree)."""
    if isinstance(value, (float, np.floating)) and float(value).is_integer():
        value = int(value)
    elif isinstance(value, np.integer):
        value = int(value)
    text = str(value)
    if column == "history":
        text = text[:HISTORY_BUCKET]
    return text


@dataclass
class ForestParams:
    n_estimators: int = 50
    max_depth: int = 12
    seed: int = 0


@dataclass
class PreprocessPipeline:
    input_columns: list
    categorical_maps: dict
    minmax_bounds: dict
    selected_mask: list
    importance_threshold: Optional[float] = None
    importances: Optional[list] = None
    forest: ForestParams = field(default_factory=ForestParams)
    schema_version: int = SCHEMA_VERSION
    config_hash: str = ""

    @property
    def expanded_columns(self) -> list:
        cols = []
        for c in self.input_columns:
            if c in self.categorical_maps:
                cols.extend(f"{c}={v}" for v in self.categorical_maps[c])
            else:
                cols.append(c)
        return cols

    @property
    def selected_columns(self) -> list:
        return [c for c, keep in zip(self.expanded_columns, self.selected_mask) if keep]

    def expand(self, rows: pd.DataFrame) -> np.ndarray:
        """Encode and scale without applying the selection mask."""
        check_columns(rows, self.input_columns)
        blocks = []
        for c in self.input_columns:
            if c in self.categorical_maps:
                cats = self.categorical_maps[c]
                index = {v: i for i, v in enumerate(cats)}
                block = np.zeros((len(rows), len(cats)))
                for r, value in enumerate(rows[c].tolist()):
                    j = index.get(category(c, value))
                    if j is not None:
                        block[r, j] = 1.0
                blocks.append(block)
            else:
                lo, hi = self.minmax_bounds[c]
                x = rows[c].to_numpy(dtype=np.float64)
                if hi > lo:
                    scaled = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
                else:
                    scaled = np.zeros_like(x)
                blocks.append(scaled.reshape(-1, 1))
        if not blocks:
            return np.zeros((len(rows), 0))
        return np.hstack(blocks)

    def to_json(self) -> str:
        doc = {
            "kind": "sentinel-preprocess-pipeline",
            "schema_version": self.schema_version,
            "config_hash": self.config_hash,
            "input_columns": self.input_columns,
            "categorical_maps": self.categorical_maps,
            "minmax_bounds": {k: list(v) for k, v in self.minmax_bounds.items()},
            "importance_threshold": self.importance_threshold,
            "importances": self.importances,
            "forest": vars(self.forest),
            "selected_mask": self.selected_mask,
        }
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PreprocessPipeline":
        doc = json.loads(text)
        if doc.get("kind") != "sentinel-preprocess-pipeline":
            raise SchemaMismatch("not a preprocessing pipeline artifact")
        if doc["schema_version"] != SCHEMA_VERSION:
            raise SchemaMismatch(f"pipeline schema version {doc['schema_version']} unsupported")
        return cls(
            input_columns=doc["input_columns"],
            categorical_maps=doc["categorical_maps"],
            minmax_bounds={k: tuple(v) for k, v in doc["minmax_bounds"].items()},
            selected_mask=doc["selected_mask"],
            importance_threshold=doc["importance_threshold"],
            importances=doc["importances"],
            forest=ForestParams(**doc["forest"]),
            config_hash=doc["config_hash"],
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "PreprocessPipeline":
        return cls.from_json(Path(path).read_text())


def check_columns(rows: pd.DataFrame, expected: Sequence[str]) -> None:
    present = [c for c in rows.columns if c != LABEL]
    missing = [c for c in expected if c not in present]
    extra = [c for c in present if c not in expected]
    if missing or extra:
        raise SchemaMismatch(f"missing columns {missing}, unexpected columns {extra}")


def importance_mask(importances: Sequence[float], threshold: Optional[float]) -> list:
    if threshold is None:
        return [True] * len(importances)
    mask = [bool(v >= threshold) for v in importances]
    if importances and not any(mask):
        # an empty feature space is unusable downstream; keep the strongest column
        mask[int(np.argmax(importances))] = True
    return mask


def fit(train: pd.DataFrame, threshold: Optional[float] = None,
        columns: Optional[Sequence[str]] = None, forest: Optional[ForestParams] = None) -> PreprocessPipeline:
    """Fit encoders and scalers on labeled training rows, then select by importance."""
    if len(train) == 0:
        raise EmptyTrainingSet("training table has no rows")
    if LABEL not in train.columns:
        raise SchemaMismatch("training table needs a label column")
    columns = list(columns) if columns is not None else [c for c in FEATURES if c in train.columns]
    forest = forest or ForestParams()
    check_columns(train, columns)

    cat_maps, bounds = {}, {}
    for c in columns:
        if c in CATEGORICAL:
            cat_maps[c] = sorted({category(c, v) for v in train[c].tolist()})
        else:
            x = train[c].to_numpy(dtype=np.float64)
            bounds[c] = (float(x.min()), float(x.max()))
    pipe = PreprocessPipeline(columns, cat_maps, bounds, selected_mask=[],
                              importance_threshold=threshold, forest=forest)
    width = len(pipe.expanded_columns)

    if threshold is None:
        pipe.selected_mask = [True] * width
        return pipe

    labels = train[LABEL].astype(str).to_numpy()
    if len(np.unique(labels)) < 2:
        raise SingleClassTraining("feature importance needs at least two classes")
    X = pipe.expand(train)
    clf = RandomForestClassifier(
        n_estimators=forest.n_estimators, max_depth=forest.max_depth, criterion="gini",
        max_features="sqrt", bootstrap=True, random_state=forest.seed, n_jobs=1,
    )
    clf.fit(X, labels)
    imp = np.asarray(clf.feature_importances_, dtype=np.float64)
    total = imp.sum()
    if total > 0:
        imp = imp / total
    pipe.importances = [float(v) for v in imp]
    pipe.selected_mask = importance_mask(pipe.importances, threshold)
    return pipe


def apply(pipe: PreprocessPipeline, rows: pd.DataFrame) -> np.ndarray:
    """Encode, scale into [0, 1] and drop masked columns; never mutates the pipeline."""
    X = pipe.expand(rows)
    return X[:, np.asarray(pipe.selected_mask, dtype=bool)]
