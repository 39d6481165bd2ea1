"""Bidirectional flow assembly with Zeek-style connection summaries."""
from __future__ import annotations

import enum
import hashlib
import ipaddress
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional

from .pcap import PROTO_TCP, ParsedPacket, Proto, TcpFlag
from .schema import DERIVED_FEATURES, FLOW_FEATURES, FLOW_ID_COLUMNS
from .tables import write_rows

TCP_IDLE_TIMEOUT = 300.0
OTHER_IDLE_TIMEOUT = 60.0

_LOCAL_NETS = tuple(
    ipaddress.ip_network(n)
    for n in ("10.0.0.0/8", "172.16.0.0/12", "192.168.0.0/16", "fc00::/7")
)

# service enum in priority order
SERVICES = (
    (Proto.HTTP, "http"),
    (Proto.HTTPS, "https"),
    (Proto.DNS, "dns"),
    (Proto.DHCP, "dhcp"),
    (Proto.SSH, "ssh"),
    (Proto.TELNET, "telnet"),
    (Proto.SMTP, "smtp"),
    (Proto.IRC, "irc"),
)

PROTO_NAMES = {1: "icmp", 2: "igmp", 6: "tcp", 17: "udp", 58: "icmp"}
_NAME_TO_PROTO = {"icmp": 1, "igmp": 2, "tcp": 6, "udp": 17}


class ConnState(str, enum.Enum):
    S0 = "S0"
    S1 = "S1"
    SF = "SF"
    REJ = "REJ"
    RSTO = "RSTO"
    RSTR = "RSTR"
    OTH = "OTH"


class FlowKey(NamedTuple):
    orig_ip: str
    orig_port: int
    resp_ip: str
    resp_port: int
    protocol_type: int

    def reversed(self) -> "FlowKey":
        return FlowKey(self.resp_ip, self.resp_port, self.orig_ip, self.orig_port, self.protocol_type)

    @classmethod
    def of(cls, pkt: ParsedPacket) -> "FlowKey":
        return cls(pkt.src_ip, pkt.src_port, pkt.dst_ip, pkt.dst_port, pkt.protocol_type)


@dataclass
class FlowRecord:
    key: FlowKey
    ts: float
    duration: float
    orig_bytes: int
    resp_bytes: int
    orig_ip_bytes: int
    resp_ip_bytes: int
    orig_pkts: int
    resp_pkts: int
    conn_state: str
    history: str
    service: str
    local_orig: bool
    local_resp: bool
    missed_bytes: int = 0
    tunnel_parents: str = ""
    uid: str = ""


@dataclass(frozen=True)
class DerivedFeatures:
    byte_ratio: float
    orig_pkt_rate: float
    orig_byte_rate: float
    direction: int


def derive(rec: FlowRecord) -> DerivedFeatures:
    duration = float(rec.duration)
    return DerivedFeatures(
        byte_ratio=float(rec.orig_bytes) / (float(rec.resp_bytes) + 1.0),
        orig_pkt_rate=float(rec.orig_pkts) / (duration + 1.0),
        orig_byte_rate=float(rec.orig_ip_bytes) / (duration + 1.0),
        direction=int(rec.orig_bytes) - int(rec.resp_bytes),
    )


def is_local(addr: Optional[str]) -> bool:
    if not addr:
        return False
    ip = ipaddress.ip_address(addr)
    return any(ip.version == net.version and ip in net for net in _LOCAL_NETS)


@dataclass
class FlowState:
    """Mutable per-flow accumulator; finalized into a FlowRecord."""

    key: FlowKey
    ts: float
    last_ts: float
    orig_pkts: int = 0
    resp_pkts: int = 0
    orig_bytes: int = 0
    resp_bytes: int = 0
    orig_ip_bytes: int = 0
    resp_ip_bytes: int = 0
    history: str = ""
    orig_syn: bool = False
    resp_synack: bool = False
    established: bool = False
    orig_fin: bool = False
    resp_fin: bool = False
    first_rst: Optional[str] = None
    indicators: Proto = Proto(0)
    seq: int = 0

    @property
    def closed(self) -> bool:
        return (self.orig_fin and self.resp_fin) or self.first_rst is not None

    def _mark(self, letter: str, from_orig: bool):
        letter = letter.upper() if from_orig else letter.lower()
        if letter not in self.history:
            self.history += letter

    def update(self, pkt: ParsedPacket, from_orig: bool):
        self.last_ts = max(self.last_ts, pkt.timestamp)
        if from_orig:
            self.orig_pkts += 1
            self.orig_bytes += pkt.payload_length
            self.orig_ip_bytes += pkt.ip_length
        else:
            self.resp_pkts += 1
            self.resp_bytes += pkt.payload_length
            self.resp_ip_bytes += pkt.ip_length
        self.indicators |= pkt.protocol_indicators
        if self.key.protocol_type == PROTO_TCP:
            self._update_tcp(pkt, from_orig)

    def _update_tcp(self, pkt: ParsedPacket, from_orig: bool):
        f = pkt.tcp_flags
        syn, ack = bool(f & TcpFlag.SYN), bool(f & TcpFlag.ACK)
        fin, rst = bool(f & TcpFlag.FIN), bool(f & TcpFlag.RST)
        if syn and not ack:
            if from_orig:
                self.orig_syn = True
                self._mark("s", True)
        elif syn and ack:
            if not from_orig and self.orig_syn:
                self.resp_synack = True
                self._mark("h", False)
        else:
            if from_orig and ack and self.resp_synack:
                self.established = True
            if pkt.payload_length > 0:
                self._mark("d", from_orig)
            elif ack and not fin and not rst:
                self._mark("a", from_orig)
        if fin:
            self._mark("f", from_orig)
            if from_orig:
                self.orig_fin = True
            else:
                self.resp_fin = True
        if rst:
            self._mark("r", from_orig)
            if self.first_rst is None:
                self.first_rst = "orig" if from_orig else "resp"

    def conn_state(self) -> ConnState:
        if self.key.protocol_type != PROTO_TCP or not self.orig_syn:
            return ConnState.OTH
        if self.resp_pkts == 0 and self.first_rst is None:
            return ConnState.S0
        if self.first_rst == "resp" and not self.resp_synack:
            return ConnState.REJ
        if self.established:
            if self.first_rst == "orig":
                return ConnState.RSTO
            if self.first_rst == "resp":
                return ConnState.RSTR
            if self.orig_fin and self.resp_fin:
                return ConnState.SF
            return ConnState.S1
        return ConnState.OTH

    def service(self) -> str:
        for flag, name in SERVICES:
            if self.indicators & flag:
                return name
        return "none"


def finalize_flow(state: FlowState) -> FlowRecord:
    key = state.key
    uid_src = f"{state.ts!r}|{key.orig_ip}|{key.orig_port}|{key.resp_ip}|{key.resp_port}|{key.protocol_type}|{state.seq}"
    return FlowRecord(
        key=key,
        ts=state.ts,
        duration=state.last_ts - state.ts,
        orig_bytes=state.orig_bytes,
        resp_bytes=state.resp_bytes,
        orig_ip_bytes=state.orig_ip_bytes,
        resp_ip_bytes=state.resp_ip_bytes,
        orig_pkts=state.orig_pkts,
        resp_pkts=state.resp_pkts,
        conn_state=state.conn_state().value,
        history=state.history,
        service=state.service(),
        local_orig=is_local(key.orig_ip),
        local_resp=is_local(key.resp_ip),
        uid="C" + hashlib.sha1(uid_src.encode()).hexdigest()[:17],
    )


def idle_timeout(protocol: int, tcp_timeout: float = TCP_IDLE_TIMEOUT,
                 other_timeout: float = OTHER_IDLE_TIMEOUT) -> float:
    return tcp_timeout if protocol == PROTO_TCP else other_timeout


@dataclass
class FlowTable:
    """Single-writer table of live flows keyed by originator-oriented five-tuple."""

    tcp_timeout: float = TCP_IDLE_TIMEOUT
    other_timeout: float = OTHER_IDLE_TIMEOUT
    live: dict = field(default_factory=dict)
    finished: list = field(default_factory=list)
    _next_id: int = 0

    def _close(self, key: FlowKey):
        self.finished.append(finalize_flow(self.live.pop(key)))

    def assign(self, pkt: ParsedPacket) -> Optional[int]:
        """Add an IP packet to its flow and return the flow's sequence id.

        Non-IP frames (ARP, LLC) carry no five-tuple and are ignored.
        """
        if not pkt.is_ip:
            return None
        fwd = FlowKey.of(pkt)
        rev = fwd.reversed()
        key = fwd if fwd in self.live else rev if rev in self.live else None
        if key is not None:
            state = self.live[key]
            timeout = idle_timeout(key.protocol_type, self.tcp_timeout, self.other_timeout)
            new_syn = (pkt.tcp_flags & TcpFlag.SYN) and not (pkt.tcp_flags & TcpFlag.ACK)
            if pkt.timestamp - state.last_ts > timeout or (state.closed and new_syn):
                self._close(key)
                key = None
        if key is None:
            key = fwd
            self.live[key] = FlowState(key=key, ts=pkt.timestamp, last_ts=pkt.timestamp, seq=self._next_id)
            self._next_id += 1
        state = self.live[key]
        state.update(pkt, from_orig=(key == fwd))
        return state.seq

    def flush(self) -> list[FlowRecord]:
        """Finalize every live flow (end of capture) and return all records sorted by (ts, key)."""
        for key in list(self.live):
            self._close(key)
        records = sorted(self.finished, key=lambda r: (r.ts, tuple(map(str, r.key))))
        self.finished = []
        return records


def assign_packet(table: FlowTable, pkt: ParsedPacket) -> Optional[int]:
    return table.assign(pkt)


def build_flows(packets: Iterable[ParsedPacket], **timeouts) -> list[FlowRecord]:
    table = FlowTable(**timeouts)
    for pkt in packets:
        table.assign(pkt)
    return table.flush()


FLOW_CSV_COLUMNS = FLOW_ID_COLUMNS + FLOW_FEATURES + DERIVED_FEATURES


def proto_name(protocol: int) -> str:
    return PROTO_NAMES.get(protocol, str(protocol))


def proto_number(name: str) -> int:
    return _NAME_TO_PROTO[name] if name in _NAME_TO_PROTO else int(name)


def flow_row(rec: FlowRecord) -> list:
    d = derive(rec)
    values = {
        "ts": rec.ts, "uid": rec.uid,
        "id.orig_h": rec.key.orig_ip, "id.orig_p": rec.key.orig_port,
        "id.resp_h": rec.key.resp_ip, "id.resp_p": rec.key.resp_port,
        "proto": proto_name(rec.key.protocol_type),
        "conn_state": rec.conn_state, "duration": rec.duration, "history": rec.history,
        "local_orig": rec.local_orig, "local_resp": rec.local_resp,
        "missed_bytes": rec.missed_bytes, "orig_bytes": rec.orig_bytes,
        "orig_ip_bytes": rec.orig_ip_bytes, "orig_pkts": rec.orig_pkts,
        "service": rec.service, "resp_bytes": rec.resp_bytes,
        "resp_ip_bytes": rec.resp_ip_bytes, "resp_pkts": rec.resp_pkts,
        "tunnel_parents": rec.tunnel_parents,
        "byte_ratio": d.byte_ratio, "direction": d.direction,
        "orig_byte_rate": d.orig_byte_rate, "orig_pkt_rate": d.orig_pkt_rate,
    }
    return [values[c] for c in FLOW_CSV_COLUMNS]


def write_flows(path, records: Iterable[FlowRecord]) -> None:
    write_rows(path, FLOW_CSV_COLUMNS, (flow_row(r) for r in records))


def record_from_row(row: dict) -> FlowRecord:
    """Rebuild a FlowRecord from a flow-CSV row (values as parsed strings or numbers)."""
    key = FlowKey(str(row["id.orig_h"]), int(row["id.orig_p"]), str(row["id.resp_h"]),
                  int(row["id.resp_p"]), proto_number(str(row["proto"])))
    return FlowRecord(
        key=key, ts=float(row["ts"]), duration=float(row["duration"]),
        orig_bytes=int(row["orig_bytes"]), resp_bytes=int(row["resp_bytes"]),
        orig_ip_bytes=int(row["orig_ip_bytes"]), resp_ip_bytes=int(row["resp_ip_bytes"]),
        orig_pkts=int(row["orig_pkts"]), resp_pkts=int(row["resp_pkts"]),
        conn_state=str(row["conn_state"]), history=str(row["history"]),
        service=str(row["service"]), local_orig=bool(int(row["local_orig"])),
        local_resp=bool(int(row["local_resp"])), missed_bytes=int(row["missed_bytes"]),
        tunnel_parents=str(row["tunnel_parents"]), uid=str(row["uid"]),
    )
