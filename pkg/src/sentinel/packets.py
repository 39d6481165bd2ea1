"""Per-packet feature rows (flags, counts, protocol indicators)."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Iterable

from .pcap import ParsedPacket, Proto, TcpFlag
from .schema import PACKET_COLUMNS
from .tables import write_rows

_FLAG_BITS = {
    "fin_flag_number": TcpFlag.FIN,
    "syn_flag_number": TcpFlag.SYN,
    "rst_flag_number": TcpFlag.RST,
    "psh_flag_number": TcpFlag.PSH,
    "ack_flag_number": TcpFlag.ACK,
    "ece_flag_number": TcpFlag.ECE,
    "cwr_flag_number": TcpFlag.CWR,
}
_COUNT_BITS = {
    "ack_count": TcpFlag.ACK,
    "syn_count": TcpFlag.SYN,
    "fin_count": TcpFlag.FIN,
    "rst_count": TcpFlag.RST,
}
_INDICATOR_BITS = {
    "ARP": Proto.ARP, "LLC": Proto.LLC, "HTTP": Proto.HTTP, "HTTPS": Proto.HTTPS,
    "DNS": Proto.DNS, "DHCP": Proto.DHCP, "SSH": Proto.SSH, "Telnet": Proto.TELNET,
    "SMTP": Proto.SMTP, "IRC": Proto.IRC, "ICMP": Proto.ICMP, "IGMP": Proto.IGMP,
    "TCP": Proto.TCP, "UDP": Proto.UDP,
}


@dataclass(frozen=True)
class PacketRecord:
    timestamp: float
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol_type: int
    header_length: int
    total_size: int
    ttl: int
    ip_version: int
    fin_flag_number: int = 0
    syn_flag_number: int = 0
    rst_flag_number: int = 0
    psh_flag_number: int = 0
    ack_flag_number: int = 0
    ece_flag_number: int = 0
    cwr_flag_number: int = 0
    ack_count: int = 0
    syn_count: int = 0
    fin_count: int = 0
    rst_count: int = 0
    ARP: int = 0
    LLC: int = 0
    HTTP: int = 0
    HTTPS: int = 0
    DNS: int = 0
    DHCP: int = 0
    SSH: int = 0
    Telnet: int = 0
    SMTP: int = 0
    IRC: int = 0
    ICMP: int = 0
    IGMP: int = 0
    TCP: int = 0
    UDP: int = 0

    @property
    def IPv(self) -> int:
        return self.ip_version


def packet_row(pkt: ParsedPacket) -> PacketRecord:
    bits = {name: int(bool(pkt.tcp_flags & b)) for name, b in _FLAG_BITS.items()}
    bits.update({name: int(bool(pkt.tcp_flags & b)) for name, b in _COUNT_BITS.items()})
    bits.update({name: int(bool(pkt.protocol_indicators & b)) for name, b in _INDICATOR_BITS.items()})
    return PacketRecord(
        timestamp=pkt.timestamp,
        src_ip=pkt.src_ip or "",
        dst_ip=pkt.dst_ip or "",
        src_port=pkt.src_port,
        dst_port=pkt.dst_port,
        protocol_type=pkt.protocol_type,
        header_length=pkt.header_length,
        total_size=pkt.total_size,
        ttl=pkt.ttl,
        ip_version=pkt.ip_version or 0,
        **bits,
    )


# CSV column name -> PacketRecord attribute
_CSV_ATTRS = {
    "ts": "timestamp", "src_ip": "src_ip", "dst_ip": "dst_ip",
    "Header_Length": "header_length", "IPv": "ip_version", "Protocol Type": "protocol_type",
    "Time_To_Live": "ttl", "Tot size": "total_size",
}


def _attr(column: str) -> str:
    return _CSV_ATTRS.get(column, column)


def record_values(rec: PacketRecord) -> list:
    return [getattr(rec, _attr(c)) for c in PACKET_COLUMNS]


def write_packets(path, records: Iterable[PacketRecord]) -> None:
    write_rows(path, PACKET_COLUMNS, (record_values(r) for r in records))


def record_from_row(row: dict) -> PacketRecord:
    """Rebuild a PacketRecord from a packet-CSV row."""
    kwargs = {}
    for f in fields(PacketRecord):
        column = next((c for c, a in _CSV_ATTRS.items() if a == f.name), f.name)
        value = row[column]
        if f.name == "timestamp":
            kwargs[f.name] = float(value)
        elif f.name in ("src_ip", "dst_ip"):
            kwargs[f.name] = "" if value is None else str(value)
        else:
            kwargs[f.name] = int(value)
    return PacketRecord(**kwargs)


def as_dict(rec: PacketRecord) -> dict:
    return asdict(rec)

