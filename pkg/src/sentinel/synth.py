"""Seeded synthetic fused tables and packet captures."""
from __future__ import annotations

import ipaddress
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .errors import InvalidSpec
from .pcap import RawPacket, write_capture
from .schema import CATEGORICAL, FEATURES, LABEL, UNKNOWN

ORIGIN = "origin"

# value every sample takes for a categorical column unless the class overrides it
CATEGORICAL_DEFAULTS = {
    "conn_state": "SF",
    "history": "ShADdFf",
    "service": "none",
    "tunnel_parents": "",
    "Protocol Type": 6,
    "src_port": 40000,
    "dst_port": 80,
    "IPv": 4,
}
NUMERIC = [c for c in FEATURES if c not in CATEGORICAL]


@dataclass
class ClassSpec:
    name: str
    count: int
    test_count: int = 0
    gaussian: dict = field(default_factory=dict)     # feature -> (mean, sigma)
    categorical: dict = field(default_factory=dict)  # feature -> {value: weight}


@dataclass
class SynthSpec:
    classes: list
    unknown_classes: list = field(default_factory=list)
    seed: int = 0
    background: tuple = (0.0, 1.0)

    def validate(self) -> None:
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise InvalidSpec("duplicate class names")
        if UNKNOWN in names:
            raise InvalidSpec(f"class name {UNKNOWN!r} is reserved")
        missing = set(self.unknown_classes) - set(names)
        if missing:
            raise InvalidSpec(f"withheld classes not declared: {sorted(missing)}")
        if not self.background[1] > 0:
            raise InvalidSpec("background sigma must be positive")
        for c in self.classes:
            if c.count < 2 or c.test_count < 0:
                raise InvalidSpec(f"class {c.name}: need count >= 2 and test_count >= 0")
            for feat, (mu, sigma) in c.gaussian.items():
                if feat not in NUMERIC:
                    raise InvalidSpec(f"class {c.name}: {feat!r} is not a numeric feature")
                if not (math.isfinite(mu) and sigma > 0 and math.isfinite(sigma)):
                    raise InvalidSpec(f"class {c.name}: invalid Gaussian for {feat}")
            for feat, weights in c.categorical.items():
                if feat not in CATEGORICAL:
                    raise InvalidSpec(f"class {c.name}: {feat!r} is not categorical")
                w = list(weights.values())
                if not w or any(v < 0 for v in w) or abs(sum(w) - 1.0) > 1e-9:
                    raise InvalidSpec(f"class {c.name}: weights for {feat} must sum to 1")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "background": list(self.background),
            "unknown_classes": list(self.unknown_classes),
            "classes": [
                {"name": c.name, "count": c.count, "test_count": c.test_count,
                 "gaussian": {k: list(v) for k, v in c.gaussian.items()},
                 "categorical": c.categorical}
                for c in self.classes
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        try:
            classes = [ClassSpec(c["name"], int(c["count"]), int(c.get("test_count", 0)),
                                 {k: tuple(v) for k, v in c.get("gaussian", {}).items()},
                                 dict(c.get("categorical", {})))
                       for c in doc["classes"]]
            return cls(classes, list(doc.get("unknown_classes", [])), int(doc.get("seed", 0)),
                       tuple(doc.get("background", (0.0, 1.0))))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidSpec(f"malformed synth spec: {exc}") from exc

    @classmethod
    def load(cls, path) -> "SynthSpec":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidSpec(f"spec is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)


def _draw(spec: ClassSpec, n: int, background, rng: np.random.Generator) -> dict:
    cols = {}
    for feat in FEATURES:
        if feat in CATEGORICAL:
            weights = spec.categorical.get(feat)
            if weights:
                values = list(weights)
                picks = rng.choice(len(values), size=n, p=np.asarray(list(weights.values()), float))
                cols[feat] = [values[k] for k in picks]
            else:
                cols[feat] = [CATEGORICAL_DEFAULTS[feat]] * n
        else:
            mu, sigma = spec.gaussian.get(feat, background)
            cols[feat] = rng.normal(mu, sigma, n)
    return cols


def generate(spec: SynthSpec):
    """Return (train, test, truth).

    ``train`` carries known classes only, with a label column. ``test`` holds
    the query features. ``truth`` gives each test row's label, with withheld
    classes mapped to U, plus the originating class name.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    train_parts, test_parts, truth_label, truth_origin = [], [], [], []
    for c in spec.classes:
        withheld = c.name in spec.unknown_classes
        # both splits are always drawn so adding a test draw never shifts the train stream
        tr = _draw(c, c.count, spec.background, rng)
        te = _draw(c, c.test_count, spec.background, rng)
        if not withheld:
            tr[LABEL] = [c.name] * c.count
            train_parts.append(pd.DataFrame(tr, columns=list(FEATURES) + [LABEL]))
        test_parts.append(pd.DataFrame(te, columns=list(FEATURES)))
        truth_label += [UNKNOWN if withheld else c.name] * c.test_count
        truth_origin += [c.name] * c.test_count
    train = pd.concat(train_parts, ignore_index=True) if train_parts else pd.DataFrame(columns=list(FEATURES) + [LABEL])
    test = pd.concat(test_parts, ignore_index=True)
    truth = pd.DataFrame({"id": range(len(test)), LABEL: truth_label, ORIGIN: truth_origin})
    return train, test, truth


def cluster_means(names: Sequence[str], separation: float, sigma: float, features: Sequence[str],
                  rng: np.random.Generator) -> dict:
    """Class centroids with every pairwise distance equal to ``separation * sigma``.

    Centroids sit on orthonormal directions, so pairwise distances are
    separation * sigma regardless of the dimension.
    """
    k, d = len(names), len(features)
    if k > d:
        raise InvalidSpec(f"{k} clusters need at least {k} numeric features")
    q, _ = np.linalg.qr(rng.standard_normal((d, k)))
    offset = rng.uniform(-5, 5, d)
    radius = separation * sigma / math.sqrt(2)
    return {name: offset + radius * q[:, i] for i, name in enumerate(names)}


def gaussian_cluster_spec(names: Sequence[str], unknown: Sequence[str], count: int = 100,
                          test_count: int = 100, separation: float = 6.0, sigma: float = 1.0,
                          seed: int = 0, features: Optional[Sequence[str]] = None) -> SynthSpec:
    features = list(features) if features is not None else list(NUMERIC)
    means = cluster_means(names, separation, sigma, features, np.random.default_rng(seed))
    classes = [ClassSpec(n, count, test_count, {f: (float(m), sigma) for f, m in zip(features, means[n])})
               for n in names]
    return SynthSpec(classes, list(unknown), seed, background=(0.0, sigma))


def min_pairwise_separation(spec: SynthSpec) -> float:
    """Smallest centroid distance in units of the largest per-class sigma."""
    def centroid(c):
        return np.array([c.gaussian.get(f, spec.background)[0] for f in NUMERIC])

    def spread(c):
        return max([c.gaussian.get(f, spec.background)[1] for f in NUMERIC])

    best = math.inf
    for i, a in enumerate(spec.classes):
        for b in spec.classes[i + 1:]:
            dist = float(np.linalg.norm(centroid(a) - centroid(b)))
            best = min(best, dist / max(spread(a), spread(b)))
    return best


def acceptance_spec(seed: int = 42) -> SynthSpec:
    """Benign, four known attacks and one withheld attack.

    Class centroids differ in the first ten numeric features only and sit
    10 sigma apart; the remaining numeric features are shared noise.
    """
    names = ["benign", "ddos", "recon", "spoofing", "bruteforce", "mirai"]
    return gaussian_cluster_spec(names, ["mirai"], count=100, test_count=100, separation=10.0,
                                 seed=seed, features=NUMERIC[:10])


# ---- packet captures ----

FIN, SYN, RST, PSH, ACK = 0x01, 0x02, 0x04, 0x08, 0x10


def _ethernet(payload: bytes) -> bytes:
    return bytes.fromhex("020000000002") + bytes.fromhex("020000000001") + b"\x08\x00" + payload


def _ipv4(src: str, dst: str, proto: int, body: bytes, ttl: int) -> bytes:
    header = struct.pack("!BBHHHBBH4s4s", 0x45, 0, 20 + len(body), 0, 0, ttl, proto, 0,
                         ipaddress.IPv4Address(src).packed, ipaddress.IPv4Address(dst).packed)
    return header + body


def tcp_packet(src, sport, dst, dport, flags, payload=0, ttl=64) -> bytes:
    seg = struct.pack("!HHIIBBHHH", sport, dport, 0, 0, 5 << 4, flags, 65535, 0, 0) + bytes(payload)
    return _ethernet(_ipv4(src, dst, 6, seg, ttl))


def udp_packet(src, sport, dst, dport, payload=0, ttl=64) -> bytes:
    seg = struct.pack("!HHHH", sport, dport, 8 + payload, 0) + bytes(payload)
    return _ethernet(_ipv4(src, dst, 17, seg, ttl))


def synthetic_capture(seed: int = 0, sessions: int = 10, probes: int = 5, start: float = 1_600_000_000.0):
    """Complete TCP sessions and unanswered UDP probes between random hosts."""
    rng = np.random.default_rng(seed)
    events = []
    t = start
    for s in range(sessions):
        client = f"192.168.{rng.integers(0, 256)}.{rng.integers(1, 255)}"
        server = f"10.{rng.integers(0, 256)}.{rng.integers(0, 256)}.{rng.integers(1, 255)}"
        sport, dport = int(rng.integers(1024, 65536)), int(rng.choice([22, 80, 443]))
        steps = [
            (client, sport, server, dport, SYN, 0),
            (server, dport, client, sport, SYN | ACK, 0),
            (client, sport, server, dport, ACK, 0),
            (client, sport, server, dport, PSH | ACK, int(rng.integers(1, 600))),
            (server, dport, client, sport, PSH | ACK, int(rng.integers(1, 1400))),
            (client, sport, server, dport, FIN | ACK, 0),
            (server, dport, client, sport, FIN | ACK, 0),
        ]
        for src, sp, dst, dp, flags, payload in steps:
            t += float(rng.uniform(0.001, 0.05))
            events.append((t, tcp_packet(src, sp, dst, dp, flags, payload)))
        t += 1.0
    for p in range(probes):
        t += float(rng.uniform(0.01, 0.5))
        client = f"192.168.0.{rng.integers(1, 255)}"
        events.append((t, udp_packet(client, int(rng.integers(1024, 65536)), "10.0.0.53", 53,
                                     int(rng.integers(10, 60)))))
    out = []
    for ts, frame in events:
        micros = int(round(ts * 1_000_000))
        out.append(RawPacket(micros // 1_000_000, micros % 1_000_000, len(frame), len(frame), frame))
    return out


def write_synthetic_capture(path, seed: int = 0, sessions: int = 10, probes: int = 5) -> None:
    write_capture(path, synthetic_capture(seed, sessions, probes))
