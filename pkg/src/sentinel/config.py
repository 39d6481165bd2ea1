"""Run configuration: flat ``key = value`` files, environment seed override, config hash."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

from .calibration import ThresholdGrid
from .embedding import TrainConfig
from .errors import ConfigError
from .preprocess import ALLOWED_THRESHOLDS, ForestParams
from .schema import FEATURE_SETS

SEED_ENV = "SENTINEL_SEED"


@dataclass
class RunConfig:
    feature_set: str = "flow+packet+derived"
    importance_threshold: Optional[float] = 0.01
    token_length: int = 512
    margin: float = 0.3
    epochs: int = 30
    triplets_per_epoch: int = 256
    batch: int = 32
    step: float = 0.01
    dim: int = 64
    hidden: int = 64
    support_k: int = 10
    reduction: str = "nearest"
    grid_start: float = 0.1
    grid_end: float = 0.8
    grid_step: float = 0.05
    forest_trees: int = 50
    forest_depth: int = 12
    benign_label: str = "benign"
    seed: int = 0
    # locations are bookkeeping only and stay out of the hash
    paths: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.feature_set not in FEATURE_SETS:
            raise ConfigError(f"feature_set must be one of {sorted(FEATURE_SETS)}")
        if self.importance_threshold not in ALLOWED_THRESHOLDS:
            raise ConfigError("importance_threshold must be none, 0.01 or 0.02")
        if self.token_length not in (256, 512):
            raise ConfigError("token_length must be 256 or 512")
        if self.reduction not in ("nearest", "prototype"):
            raise ConfigError("reduction must be nearest or prototype")
        for name in ("epochs", "triplets_per_epoch", "batch", "dim", "hidden", "support_k",
                     "forest_trees", "forest_depth"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.margin < 0 or self.step <= 0:
            raise ConfigError("margin must be >= 0 and step > 0")
        if not (0 < self.grid_step and self.grid_start <= self.grid_end):
            raise ConfigError("threshold grid bounds are inconsistent")

    def hashed_fields(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "paths"}

    @property
    def config_hash(self) -> str:
        text = json.dumps(self.hashed_fields(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def train_config(self) -> TrainConfig:
        return TrainConfig(margin=self.margin, epochs=self.epochs, triplets_per_epoch=self.triplets_per_epoch,
                           batch_size=self.batch, step_size=self.step, dim=self.dim, hidden=self.hidden,
                           seed=self.seed)

    def forest(self) -> ForestParams:
        return ForestParams(n_estimators=self.forest_trees, max_depth=self.forest_depth, seed=self.seed)

    def grid(self) -> ThresholdGrid:
        return ThresholdGrid(self.grid_start, self.grid_end, self.grid_step)

    def dumps(self) -> str:
        lines = []
        for key, value in self.hashed_fields().items():
            lines.append(f"{key} = {'none' if value is None else value}")
        return "\n".join(lines) + "\n"


def _coerce(name: str, text: str):
    default = getattr(RunConfig, name, None)
    text = text.strip()
    try:
        if name == "importance_threshold":
            return None if text.lower() == "none" else float(text)
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None
    return text


def parse_config(text: str) -> RunConfig:
    known = {f.name for f in dataclasses.fields(RunConfig)} - {"paths"}
    values, paths = {}, {}
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("path."):
            paths[key[5:]] = value
        elif key in known:
            values[key] = _coerce(key, value)
        else:
            raise ConfigError(f"line {number}: unknown key {key!r}")
    cfg = RunConfig(**values, paths=paths)
    return cfg


def load_config(path=None, env: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Defaults, then the file (if any), then ``SENTINEL_SEED``."""
    env = os.environ if env is None else env
    cfg = parse_config(Path(path).read_text()) if path else RunConfig()
    if env.get(SEED_ENV):
        try:
            cfg.seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    cfg.validate()
    return cfg
