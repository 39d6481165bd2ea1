"""Join packet rows onto flows and aggregate them into 60-feature fused records."""
from __future__ import annotations

import csv
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import pandas as pd

from . import flows as flowmod
from . import packets as pktmod
from .flows import DerivedFeatures, FlowRecord, derive
from .packets import PacketRecord
from .schema import (
    COUNT_FIELDS, DERIVED_FEATURES, FEATURES, FLAG_FIELDS, FLOW_FEATURES, INDICATORS,
    LABEL, PACKET_FEATURES,
)
from .tables import write_rows

logger = logging.getLogger(__name__)

_MODE_ATTRS = {"Protocol Type": "protocol_type", "src_port": "src_port",
               "dst_port": "dst_port", "IPv": "ip_version"}
_MEAN_ATTRS = {"Header_Length": "header_length", "Time_To_Live": "ttl", "Tot size": "total_size"}


def _endpoint_key(ip_a, port_a, ip_b, port_b, proto):
    a, b = (str(ip_a), int(port_a)), (str(ip_b), int(port_b))
    return (min(a, b), max(a, b), int(proto))


def _flow_endpoints(flow: FlowRecord):
    k = flow.key
    return _endpoint_key(k.orig_ip, k.orig_port, k.resp_ip, k.resp_port, k.protocol_type)


def _packet_endpoints(pkt: PacketRecord):
    return _endpoint_key(pkt.src_ip, pkt.src_port, pkt.dst_ip, pkt.dst_port, pkt.protocol_type)


def in_window(flow: FlowRecord, t: float) -> bool:
    # t - ts mirrors how duration was computed, so the last packet lands exactly on the bound
    offset = t - flow.ts
    return 0.0 <= offset <= flow.duration


def match_packets(flow: FlowRecord, packets: Sequence[PacketRecord]) -> list[PacketRecord]:
    """Packets sharing the flow's five-tuple (either orientation) inside [ts, ts + duration]."""
    ends = _flow_endpoints(flow)
    return [p for p in packets if _packet_endpoints(p) == ends and in_window(flow, p.timestamp)]


def assign_packets(flows: Sequence[FlowRecord], packets: Sequence[PacketRecord]) -> list[list[PacketRecord]]:
    """Partition packets over flows; overlapping candidates go to the latest-starting flow."""
    by_key = defaultdict(list)
    for i, f in enumerate(flows):
        by_key[_flow_endpoints(f)].append(i)
    matched = [[] for _ in flows]
    for p in packets:
        best = None
        for i in by_key.get(_packet_endpoints(p), ()):
            if in_window(flows[i], p.timestamp) and (best is None or flows[i].ts > flows[best].ts):
                best = i
        if best is not None:
            matched[best].append(p)
    return matched


def _mode(values):
    counts = Counter(values)
    top = max(counts.values())
    return min(v for v, c in counts.items() if c == top)


def _mean(values):
    return math.fsum(values) / len(values)


def aggregate(flow: FlowRecord, derived: DerivedFeatures, matched: Sequence[PacketRecord],
              label: Optional[str] = None) -> dict:
    """Build one fused record; packet order does not affect any value."""
    rec = {
        "conn_state": flow.conn_state, "duration": flow.duration, "history": flow.history,
        "local_orig": int(flow.local_orig), "local_resp": int(flow.local_resp),
        "missed_bytes": flow.missed_bytes, "orig_bytes": flow.orig_bytes,
        "orig_ip_bytes": flow.orig_ip_bytes, "orig_pkts": flow.orig_pkts,
        "service": flow.service, "resp_bytes": flow.resp_bytes,
        "resp_ip_bytes": flow.resp_ip_bytes, "resp_pkts": flow.resp_pkts,
        "tunnel_parents": flow.tunnel_parents,
        "byte_ratio": derived.byte_ratio, "direction": derived.direction,
        "orig_byte_rate": derived.orig_byte_rate, "orig_pkt_rate": derived.orig_pkt_rate,
    }
    n = len(matched)
    if n == 0:
        rec.update({c: 0 for c in PACKET_FEATURES})
    else:
        sizes = [p.total_size for p in matched]
        avg = _mean(sizes)
        var = math.fsum((s - avg) ** 2 for s in sizes) / n
        times = sorted(p.timestamp for p in matched)
        gaps = [b - a for a, b in zip(times, times[1:])]
        rec.update({
            "AVG": avg, "Min": min(sizes), "Max": max(sizes), "Std": math.sqrt(var),
            "Variance": var, "Tot sum": sum(sizes), "Number": n,
            "IAT": _mean(gaps) if gaps else 0.0,
            "Rate": n / (flow.duration + 1.0),
            "duration_time_interval": times[-1] - times[0],
        })
        for col, attr in _MEAN_ATTRS.items():
            rec[col] = _mean([getattr(p, attr) for p in matched])
        for col, attr in _MODE_ATTRS.items():
            rec[col] = _mode([getattr(p, attr) for p in matched])
        for col in COUNT_FIELDS:
            rec[col] = sum(getattr(p, col) for p in matched)
        for col in FLAG_FIELDS:
            rec[col] = _mean([getattr(p, col) for p in matched])
        for col in INDICATORS:
            rec[col] = max(getattr(p, col) for p in matched)
    out = {c: rec[c] for c in FEATURES}
    if label is not None:
        out[LABEL] = label
    return out


@dataclass
class QualityReport:
    """Flows that received no packets from the join."""

    empty_flows: list = field(default_factory=list)
    unmatched_packets: int = 0


def fuse(flows: Sequence[FlowRecord], packets: Sequence[PacketRecord],
         label: Optional[str] = None, report: Optional[QualityReport] = None) -> list[dict]:
    ordered = sorted(flows, key=lambda f: (f.ts, tuple(map(str, f.key))))
    groups = assign_packets(ordered, packets)
    rows = []
    for flow, matched in zip(ordered, groups):
        if not matched:
            logger.warning("flow %s matched no packets", flow.uid)
            if report is not None:
                report.empty_flows.append(flow.uid)
        rows.append(aggregate(flow, derive(flow), matched, label))
    if report is not None:
        report.unmatched_packets = len(packets) - sum(len(g) for g in groups)
    return rows


def fused_frame(rows: Sequence[dict]) -> pd.DataFrame:
    columns = list(FEATURES)
    if rows and LABEL in rows[0]:
        columns.append(LABEL)
    return pd.DataFrame(list(rows), columns=columns)


def write_fused(path, rows: Sequence[dict]) -> None:
    columns = list(FEATURES)
    if rows and LABEL in rows[0]:
        columns.append(LABEL)
    write_rows(path, columns, ([r[c] for c in columns] for r in rows))


def _read_dicts(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def read_flows(path) -> list[FlowRecord]:
    return [flowmod.record_from_row(r) for r in _read_dicts(path)]


def read_packets(path) -> list[PacketRecord]:
    return [pktmod.record_from_row(r) for r in _read_dicts(path)]


__all__ = [
    "FLOW_FEATURES", "DERIVED_FEATURES", "QualityReport", "aggregate", "assign_packets",
    "fuse", "fused_frame", "match_packets", "read_flows", "read_packets", "write_fused",
]
