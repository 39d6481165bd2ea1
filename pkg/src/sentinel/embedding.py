"""Prompt serialization, embedding backends and triplet-loss task training."""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .errors import BackendUnavailable, InsufficientSamples, NonFiniteLoss, SchemaMismatch

MODEL_MAGIC = b"SNTLMDL1"
MODEL_FORMAT_VERSION = 1
_NORM_EPS = 1e-12


# -- prompts -----------------------------------------------------------------

def _render(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            raise SchemaMismatch(f"non-finite value {value} cannot be serialized")
        return repr(value)
    text = str(value)
    if any(ch in text for ch in ',="') or _parse_value(text) != text:
        return json.dumps(text)
    return text


def _parse_value(text: str):
    if text.startswith('"'):
        return json.loads(text)
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def serialize_prompt(row: Mapping, columns: Optional[Sequence[str]] = None) -> str:
    """Render a feature row as ``name=value`` pairs in schema order."""
    if not row:
        raise SchemaMismatch("cannot serialize an empty row")
    columns = list(columns) if columns is not None else list(row)
    missing = [c for c in columns if c not in row]
    if missing:
        raise SchemaMismatch(f"row is missing columns {missing}")
    return ",".join(f"{c}={_render(row[c])}" for c in columns)


def parse_prompt(text: str) -> dict:
    out = {}
    for part in _split_pairs(text):
        name, _, value = part.partition("=")
        out[name] = _parse_value(value)
    return out


def _split_pairs(text: str):
    parts, buf, quoted, escaped = [], [], False, False
    for ch in text:
        if quoted:
            buf.append(ch)
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                quoted = False
        elif ch == '"':
            quoted = True
            buf.append(ch)
        elif ch == ",":
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
    parts.append("".join(buf))
    return parts


# -- backends ----------------------------------------------------------------

def normalize(Z: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(Z, axis=-1, keepdims=True)
    return Z / np.maximum(norms, _NORM_EPS)


@dataclass
class ReferenceEncoder:
    """Two affine layers with a tanh between them, followed by L2 normalization."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    kind: str = "reference-encoder"

    @property
    def dim(self) -> int:
        return self.W2.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @classmethod
    def initialize(cls, input_dim: int, hidden: int, dim: int, rng: np.random.Generator,
                   center: Optional[np.ndarray] = None) -> "ReferenceEncoder":
        W1 = rng.standard_normal((hidden, input_dim)) / math.sqrt(max(input_dim, 1))
        W2 = rng.standard_normal((dim, hidden)) / math.sqrt(hidden)
        # bias centers the first layer on the training centroid
        b1 = -W1 @ center if center is not None else np.zeros(hidden)
        return cls(W1, b1, W2, np.zeros(dim))

    def forward(self, X: np.ndarray):
        H = np.tanh(X @ self.W1.T + self.b1)
        Z = H @ self.W2.T + self.b2
        return H, Z

    def raw(self, X: np.ndarray) -> np.ndarray:
        return self.forward(np.atleast_2d(np.asarray(X, dtype=np.float64)))[1]

    def embed(self, X) -> np.ndarray:
        return normalize(self.raw(X))

    def params(self):
        return (self.W1, self.b1, self.W2, self.b2)

    def copy(self) -> "ReferenceEncoder":
        return ReferenceEncoder(*(p.copy() for p in self.params()))


@dataclass
class ExternalBackend:
    """Adapter for an out-of-process encoder taking prompt text and returning ``dim`` floats."""

    endpoint: Optional[Callable[[str], Sequence[float]]]
    dim: int
    columns: Sequence[str]
    token_length: int = 512
    kind: str = "external"

    def embed(self, X) -> np.ndarray:
        if self.endpoint is None:
            raise BackendUnavailable("no endpoint configured for the external backend")
        rows = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.empty((len(rows), self.dim))
        for i, row in enumerate(rows):
            prompt = serialize_prompt(dict(zip(self.columns, row.tolist())), self.columns)
            try:
                vec = np.asarray(self.endpoint(prompt), dtype=np.float64)
            except (OSError, ConnectionError, TimeoutError) as exc:
                raise BackendUnavailable(f"external backend failed: {exc}") from exc
            if vec.shape != (self.dim,):
                raise BackendUnavailable(f"external backend returned shape {vec.shape}, expected ({self.dim},)")
            out[i] = vec
        return normalize(out)


def embed(backend, rows) -> np.ndarray:
    return backend.embed(rows)


# -- triplets ----------------------------------------------------------------

class Triplet(NamedTuple):
    anchor: int
    positive: int
    negative: int
    task: str = ""


def create_triplets(labels: Sequence, count: int, seed, task: str = "") -> list[Triplet]:
    """Sample random (anchor, positive, negative) index triplets over a two-class task.

    Sampling depends only on the class partition, never on the class names.
    """
    labels = list(labels)
    members = {}
    for i, y in enumerate(labels):
        members.setdefault(y, []).append(i)
    if len(members) != 2:
        raise InsufficientSamples(f"a task needs exactly two classes, got {len(members)}")
    if min(len(m) for m in members.values()) < 2:
        raise InsufficientSamples("each task class needs at least two samples")
    rng = np.random.default_rng(seed)
    (ca, ma), (cb, mb) = members.items()
    other = {ca: mb, cb: ma}
    out = []
    for _ in range(count):
        a = int(rng.integers(len(labels)))
        same = members[labels[a]]
        k = int(rng.integers(len(same) - 1))
        pos_rank = same.index(a)
        p = same[k + 1] if k >= pos_rank else same[k]
        opp = other[labels[a]]
        n = opp[int(rng.integers(len(opp)))]
        out.append(Triplet(a, p, n, task))
    return out


# -- loss --------------------------------------------------------------------

def _cosine_and_grads(U: np.ndarray, V: np.ndarray):
    nu = np.linalg.norm(U, axis=-1, keepdims=True)
    nv = np.linalg.norm(V, axis=-1, keepdims=True)
    s = np.sum(U * V, axis=-1, keepdims=True) / (nu * nv)
    dU = V / (nu * nv) - s * U / nu ** 2
    dV = U / (nu * nv) - s * V / nv ** 2
    return s[..., 0], dU, dV


def batch_triplet_loss(A: np.ndarray, P: np.ndarray, N: np.ndarray, margin: float):
    """Per-row hinge on cosine similarities, with gradients w.r.t. the unnormalized rows."""
    s_ap, dA_p, dP = _cosine_and_grads(A, P)
    s_an, dA_n, dN = _cosine_and_grads(A, N)
    loss = np.maximum(0.0, s_an - s_ap + margin)
    active = (loss > 0)[:, None]
    gA = np.where(active, dA_n - dA_p, 0.0)
    gP = np.where(active, -dP, 0.0)
    gN = np.where(active, dN, 0.0)
    return loss, (gA, gP, gN)


def triplet_loss(a, p, n, margin: float = 0.3):
    loss, (ga, gp, gn) = batch_triplet_loss(
        np.atleast_2d(a), np.atleast_2d(p), np.atleast_2d(n), margin)
    return float(loss[0]), (ga[0], gp[0], gn[0])


def cosine(u, v) -> float:
    u, v = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


# -- training ----------------------------------------------------------------

@dataclass
class TrainConfig:
    margin: float = 0.3
    epochs: int = 30
    triplets_per_epoch: int = 256
    batch_size: int = 32
    step_size: float = 0.01
    dim: int = 64
    hidden: int = 64
    seed: int = 0


@dataclass(frozen=True)
class MetaTask:
    benign: str
    attack: str

    @property
    def task_id(self) -> str:
        return f"{self.benign}|{self.attack}"


@dataclass
class TaskModel:
    task: MetaTask
    encoder: ReferenceEncoder
    config: TrainConfig
    loss_curve: list = field(default_factory=list)
    initial_loss: float = 0.0
    final_loss: float = 0.0
    schema_hash: str = ""
    config_hash: str = ""

    @property
    def input_dim(self) -> int:
        return self.encoder.input_dim

    def embed(self, X) -> np.ndarray:
        return self.encoder.embed(X)

    def to_bytes(self) -> bytes:
        enc = self.encoder
        header = {
            "format_version": MODEL_FORMAT_VERSION,
            "schema_hash": self.schema_hash,
            "config_hash": self.config_hash,
            "task_id": self.task.task_id,
            "benign": self.task.benign,
            "attack": self.task.attack,
            "dim": enc.dim,
            "hidden": enc.W1.shape[0],
            "input_dim": enc.input_dim,
            "train_config": vars(self.config),
            "loss_curve": self.loss_curve,
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
        }
        blob = json.dumps(header, sort_keys=True).encode()
        body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in enc.params())
        return MODEL_MAGIC + struct.pack("<I", len(blob)) + blob + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "TaskModel":
        if data[:8] != MODEL_MAGIC:
            raise SchemaMismatch("not a task model file")
        (n,) = struct.unpack_from("<I", data, 8)
        header = json.loads(data[12:12 + n])
        if header["format_version"] != MODEL_FORMAT_VERSION:
            raise SchemaMismatch(f"model format {header['format_version']} unsupported")
        h, d, k = header["hidden"], header["input_dim"], header["dim"]
        shapes = [(h, d), (h,), (k, h), (k,)]
        arrays, pos = [], 12 + n
        for shape in shapes:
            size = int(np.prod(shape))
            arrays.append(np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).copy())
            pos += 8 * size
        if pos != len(data):
            raise SchemaMismatch("model file has trailing or missing bytes")
        return cls(
            task=MetaTask(header["benign"], header["attack"]),
            encoder=ReferenceEncoder(*arrays),
            config=TrainConfig(**header["train_config"]),
            loss_curve=header["loss_curve"],
            initial_loss=header["initial_loss"],
            final_loss=header["final_loss"],
            schema_hash=header["schema_hash"],
            config_hash=header["config_hash"],
        )

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "TaskModel":
        return cls.from_bytes(Path(path).read_bytes())


def schema_hash(columns: Sequence[str]) -> str:
    return hashlib.sha256("\x1f".join(columns).encode()).hexdigest()[:16]


def _triplet_batch_step(enc: ReferenceEncoder, X: np.ndarray, batch: Sequence[Triplet], margin: float):
    """Mean loss over a batch and the gradients of that mean w.r.t. encoder parameters."""
    idx = np.array([[t.anchor, t.positive, t.negative] for t in batch])
    m = len(batch)
    stacked = X[idx.T.reshape(-1)]
    H, Z = enc.forward(stacked)
    loss, (gA, gP, gN) = batch_triplet_loss(Z[:m], Z[m:2 * m], Z[2 * m:], margin)
    dZ = np.vstack([gA, gP, gN]) / m
    dW2 = dZ.T @ H
    db2 = dZ.sum(axis=0)
    dPre = (dZ @ enc.W2) * (1.0 - H * H)
    dW1 = dPre.T @ stacked
    db1 = dPre.sum(axis=0)
    return float(loss.mean()), (dW1, db1, dW2, db2)


def mean_triplet_loss(enc: ReferenceEncoder, X: np.ndarray, triplets: Sequence[Triplet], margin: float) -> float:
    idx = np.array([[t.anchor, t.positive, t.negative] for t in triplets])
    Z = enc.raw(X)
    loss, _ = batch_triplet_loss(Z[idx[:, 0]], Z[idx[:, 1]], Z[idx[:, 2]], margin)
    return float(loss.mean())


def train_task_model(task: MetaTask, X: np.ndarray, labels: Sequence, config: TrainConfig) -> TaskModel:
    """Fit one shared-weight encoder for a (benign, attack) pair with SGD on triplet loss."""
    X = np.asarray(X, dtype=np.float64)
    labels = list(labels)
    if set(labels) != {task.benign, task.attack}:
        raise InsufficientSamples(f"task {task.task_id} needs samples of both classes, got {sorted(set(map(str, labels)))}")
    rng = np.random.default_rng(config.seed)
    enc = ReferenceEncoder.initialize(X.shape[1], config.hidden, config.dim, rng, center=X.mean(axis=0))

    probe = create_triplets(labels, config.triplets_per_epoch, [config.seed, 0], task.task_id)
    initial = mean_triplet_loss(enc, X, probe, config.margin)
    curve = []
    for epoch in range(config.epochs):
        triplets = probe if epoch == 0 else create_triplets(
            labels, config.triplets_per_epoch, [config.seed, epoch], task.task_id)
        losses = []
        for start in range(0, len(triplets), config.batch_size):
            batch = triplets[start:start + config.batch_size]
            loss, grads = _triplet_batch_step(enc, X, batch, config.margin)
            if not math.isfinite(loss) or not all(np.isfinite(g).all() for g in grads):
                raise NonFiniteLoss(f"task {task.task_id}: non-finite loss {loss} at epoch {epoch}, batch {start // config.batch_size}")
            for param, grad in zip(enc.params(), grads):
                param -= config.step_size * grad
            losses.append(loss * len(batch))
        curve.append(sum(losses) / len(triplets))
    final = mean_triplet_loss(enc, X, probe, config.margin)
    return TaskModel(task, enc, config, loss_curve=curve, initial_loss=initial, final_loss=final)
