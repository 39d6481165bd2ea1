"""Classic libpcap reading/writing and Ethernet header decoding.

Only outer-layer headers are parsed. Payload bytes are measured, never kept.
"""
from __future__ import annotations

import enum
import ipaddress
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .errors import DecodeError, TruncatedFile, UnsupportedFormat

logger = logging.getLogger(__name__)

LINKTYPE_ETHERNET = 1

# first four file bytes -> (struct byte order, subsecond resolution)
_MAGICS = {
    b"\xd4\xc3\xb2\xa1": ("<", 1_000_000),
    b"\xa1\xb2\xc3\xd4": (">", 1_000_000),
    b"\x4d\x3c\xb2\xa1": ("<", 1_000_000_000),
    b"\xa1\xb2\x3c\x4d": (">", 1_000_000_000),
}
_PCAPNG_MAGIC = b"\x0a\x0d\x0d\x0a"

ETH_HEADER_LEN = 14
ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_ARP = 0x0806
ETHERTYPE_VLAN = 0x8100
ETHERTYPE_QINQ = 0x88A8
ETHERTYPE_IPV6 = 0x86DD

PROTO_ICMP = 1
PROTO_IGMP = 2
PROTO_TCP = 6
PROTO_UDP = 17
PROTO_ICMPV6 = 58

_IPV6_EXT_HEADERS = {0, 43, 60}
_IPV6_FRAGMENT = 44


class LinkType(enum.IntEnum):
    ETHERNET = LINKTYPE_ETHERNET


class TcpFlag(enum.IntFlag):
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10
    URG = 0x20
    ECE = 0x40
    CWR = 0x80


class Proto(enum.IntFlag):
    """Binary protocol-presence indicators."""

    ARP = enum.auto()
    LLC = enum.auto()
    HTTP = enum.auto()
    HTTPS = enum.auto()
    DNS = enum.auto()
    DHCP = enum.auto()
    SSH = enum.auto()
    TELNET = enum.auto()
    SMTP = enum.auto()
    IRC = enum.auto()
    ICMP = enum.auto()
    IGMP = enum.auto()
    TCP = enum.auto()
    UDP = enum.auto()


# (indicator, transport protocols, ports); a rule fires when either port matches
PORT_RULES = (
    (Proto.HTTP, (PROTO_TCP,), (80,)),
    (Proto.HTTPS, (PROTO_TCP,), (443,)),
    (Proto.DNS, (PROTO_TCP, PROTO_UDP), (53,)),
    (Proto.DHCP, (PROTO_UDP,), (67, 68)),
    (Proto.SSH, (PROTO_TCP,), (22,)),
    (Proto.TELNET, (PROTO_TCP,), (23,)),
    (Proto.SMTP, (PROTO_TCP,), (25,)),
    (Proto.IRC, (PROTO_TCP,), (6667,)),
)


@dataclass(frozen=True)
class RawPacket:
    ts_sec: int
    ts_subsec: int
    captured_length: int
    original_length: int
    data: bytes
    link_type: LinkType = LinkType.ETHERNET
    resolution: int = 1_000_000

    def __post_init__(self):
        if self.captured_length != len(self.data):
            raise ValueError("captured_length must equal len(data)")
        if self.captured_length > self.original_length:
            raise ValueError("captured_length exceeds original_length")

    @property
    def timestamp(self) -> float:
        return self.ts_sec + self.ts_subsec / self.resolution


@dataclass
class ParsedPacket:
    timestamp: float
    src_ip: Optional[str] = None
    dst_ip: Optional[str] = None
    src_port: int = 0
    dst_port: int = 0
    protocol_type: int = 0
    header_length: int = 0
    total_size: int = 0
    ttl: int = 0
    ip_version: Optional[int] = None
    tcp_flags: TcpFlag = TcpFlag(0)
    payload_length: int = 0
    ip_length: int = 0
    protocol_indicators: Proto = Proto(0)

    @property
    def is_ip(self) -> bool:
        return self.ip_version in (4, 6)


def iter_capture(path) -> Iterator[RawPacket]:
    """Stream records from a classic pcap file in file order."""
    buf = Path(path).read_bytes()
    if len(buf) >= 4 and buf[:4] == _PCAPNG_MAGIC:
        raise UnsupportedFormat("pcapng files are not supported")
    if len(buf) < 4:
        raise TruncatedFile("file shorter than the pcap global header")
    try:
        order, resolution = _MAGICS[buf[:4]]
    except KeyError:
        raise UnsupportedFormat(f"bad magic {buf[:4].hex()}") from None
    if len(buf) < 24:
        raise TruncatedFile("file shorter than the pcap global header")
    linktype = struct.unpack(order + "I", buf[20:24])[0]
    if linktype != LINKTYPE_ETHERNET:
        raise UnsupportedFormat(f"unsupported link type {linktype}")

    offset = 24
    rec = struct.Struct(order + "IIII")
    while offset < len(buf):
        if len(buf) - offset < rec.size:
            raise TruncatedFile(f"record header at byte {offset} exceeds remaining bytes")
        ts_sec, ts_sub, incl_len, orig_len = rec.unpack_from(buf, offset)
        offset += rec.size
        if incl_len > len(buf) - offset:
            raise TruncatedFile(f"record body at byte {offset} exceeds remaining bytes")
        if incl_len > orig_len:
            raise UnsupportedFormat(f"record at byte {offset} has incl_len > orig_len")
        data = buf[offset:offset + incl_len]
        offset += incl_len
        yield RawPacket(ts_sec, ts_sub, incl_len, orig_len, data, LinkType.ETHERNET, resolution)


def read_capture(path) -> list[RawPacket]:
    return list(iter_capture(path))


def write_capture(path, packets: Iterable[RawPacket], *, byteorder: str = "<",
                  nanosecond: bool = False, snaplen: int = 65535) -> None:
    magic = 0xA1B23C4D if nanosecond else 0xA1B2C3D4
    resolution = 1_000_000_000 if nanosecond else 1_000_000
    out = bytearray(struct.pack(byteorder + "IHHiIII", magic, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET))
    for p in packets:
        sub = p.ts_subsec * resolution // p.resolution
        out += struct.pack(byteorder + "IIII", p.ts_sec, sub, p.captured_length, p.original_length)
        out += p.data
    Path(path).write_bytes(bytes(out))


def port_indicators(protocol: int, sport: int, dport: int) -> Proto:
    flags = Proto(0)
    for indicator, protos, ports in PORT_RULES:
        if protocol in protos and (sport in ports or dport in ports):
            flags |= indicator
    return flags


def decode_packet(pkt: RawPacket) -> ParsedPacket:
    """Decode Ethernet -> ARP/IPv4/IPv6 -> TCP/UDP/ICMP/IGMP headers.

    Raises DecodeError when the frame is too short for its header chain or an
    IP header is internally inconsistent. Any other input yields a packet with
    absent layers left at zero/None.
    """
    if pkt.link_type != LinkType.ETHERNET:
        raise DecodeError(f"unsupported link type {pkt.link_type}")
    data = pkt.data
    out = ParsedPacket(timestamp=pkt.timestamp, total_size=pkt.original_length)
    if len(data) < ETH_HEADER_LEN:
        raise DecodeError("frame shorter than Ethernet header")
    offset = ETH_HEADER_LEN
    ethertype = struct.unpack_from("!H", data, 12)[0]
    if ethertype == ETHERTYPE_QINQ:
        raise DecodeError("stacked VLAN tags are not supported")
    if ethertype == ETHERTYPE_VLAN:
        if len(data) < offset + 4:
            raise DecodeError("frame shorter than 802.1Q tag")
        ethertype = struct.unpack_from("!H", data, offset + 2)[0]
        offset += 4
        if ethertype in (ETHERTYPE_VLAN, ETHERTYPE_QINQ):
            raise DecodeError("stacked VLAN tags are not supported")

    if ethertype <= 1500:
        # 802.3 length field followed by an LLC header (DSAP, SSAP, control)
        if len(data) < offset + 3:
            raise DecodeError("frame shorter than LLC header")
        out.header_length = offset + 3
        out.payload_length = max(0, ethertype - 3)
        out.protocol_indicators = Proto.LLC
        return out
    if ethertype == ETHERTYPE_ARP:
        return _decode_arp(data, offset, out)
    if ethertype == ETHERTYPE_IPV4:
        return _decode_ipv4(data, offset, out)
    if ethertype == ETHERTYPE_IPV6:
        return _decode_ipv6(data, offset, out)
    out.header_length = offset
    return out


def _decode_arp(data: bytes, offset: int, out: ParsedPacket) -> ParsedPacket:
    if len(data) < offset + 8:
        raise DecodeError("frame shorter than ARP header")
    _htype, ptype, hlen, plen = struct.unpack_from("!HHBB", data, offset)
    arp_len = 8 + 2 * hlen + 2 * plen
    if len(data) < offset + arp_len:
        raise DecodeError("frame shorter than ARP body")
    if ptype == ETHERTYPE_IPV4 and plen == 4:
        spa = offset + 8 + hlen
        tpa = spa + plen + hlen
        out.src_ip = str(ipaddress.IPv4Address(data[spa:spa + 4]))
        out.dst_ip = str(ipaddress.IPv4Address(data[tpa:tpa + 4]))
    out.header_length = offset + arp_len
    out.protocol_indicators = Proto.ARP
    return out


def _decode_ipv4(data: bytes, offset: int, out: ParsedPacket) -> ParsedPacket:
    if len(data) < offset + 20:
        raise DecodeError("frame shorter than IPv4 header")
    ver_ihl, _tos, total_len, _ident, frag, ttl, proto = struct.unpack_from("!BBHHHBB", data, offset)
    if ver_ihl >> 4 != 4:
        raise DecodeError(f"IPv4 ethertype carries version {ver_ihl >> 4}")
    ihl = (ver_ihl & 0x0F) * 4
    if ihl < 20:
        raise DecodeError(f"IPv4 header length {ihl} below minimum")
    if len(data) < offset + ihl:
        raise DecodeError("frame shorter than declared IPv4 header length")
    if total_len < ihl:
        raise DecodeError(f"IPv4 total length {total_len} below header length {ihl}")
    out.ip_version = 4
    out.ttl = ttl
    out.protocol_type = proto
    out.ip_length = total_len
    out.src_ip = str(ipaddress.IPv4Address(data[offset + 12:offset + 16]))
    out.dst_ip = str(ipaddress.IPv4Address(data[offset + 16:offset + 20]))
    first_fragment = (frag & 0x1FFF) == 0
    return _decode_transport(data, offset + ihl, total_len - ihl, proto, first_fragment, out)


def _decode_ipv6(data: bytes, offset: int, out: ParsedPacket) -> ParsedPacket:
    if len(data) < offset + 40:
        raise DecodeError("frame shorter than IPv6 header")
    vtf, payload_len, nxt, hop = struct.unpack_from("!IHBB", data, offset)
    if vtf >> 28 != 6:
        raise DecodeError(f"IPv6 ethertype carries version {vtf >> 28}")
    out.ip_version = 6
    out.ttl = hop
    out.ip_length = 40 + payload_len
    out.src_ip = str(ipaddress.IPv6Address(data[offset + 8:offset + 24]))
    out.dst_ip = str(ipaddress.IPv6Address(data[offset + 24:offset + 40]))
    pos = offset + 40
    remaining = payload_len
    first_fragment = True
    while nxt in _IPV6_EXT_HEADERS or nxt == _IPV6_FRAGMENT:
        if len(data) < pos + 8:
            raise DecodeError("frame shorter than IPv6 extension header")
        if nxt == _IPV6_FRAGMENT:
            ext_len = 8
            first_fragment = (struct.unpack_from("!H", data, pos + 2)[0] >> 3) == 0
        else:
            ext_len = (data[pos + 1] + 1) * 8
        if ext_len > remaining:
            raise DecodeError("IPv6 extension header exceeds payload length")
        nxt = data[pos]
        pos += ext_len
        remaining -= ext_len
    out.protocol_type = nxt
    return _decode_transport(data, pos, remaining, nxt, first_fragment, out)


def _decode_transport(data: bytes, offset: int, ip_payload: int, proto: int,
                      first_fragment: bool, out: ParsedPacket) -> ParsedPacket:
    l4_len = 0
    flags = Proto(0)
    if proto == PROTO_TCP:
        flags |= Proto.TCP
    elif proto == PROTO_UDP:
        flags |= Proto.UDP
    elif proto in (PROTO_ICMP, PROTO_ICMPV6):
        flags |= Proto.ICMP
    elif proto == PROTO_IGMP:
        flags |= Proto.IGMP

    if first_fragment:
        if proto == PROTO_TCP:
            if len(data) < offset + 20:
                raise DecodeError("frame shorter than TCP header")
            sport, dport = struct.unpack_from("!HH", data, offset)
            l4_len = (data[offset + 12] >> 4) * 4
            if l4_len < 20 or len(data) < offset + l4_len:
                raise DecodeError(f"inconsistent TCP data offset {l4_len}")
            out.src_port, out.dst_port = sport, dport
            out.tcp_flags = TcpFlag(data[offset + 13])
        elif proto == PROTO_UDP:
            if len(data) < offset + 8:
                raise DecodeError("frame shorter than UDP header")
            out.src_port, out.dst_port = struct.unpack_from("!HH", data, offset)
            l4_len = 8
        elif proto in (PROTO_ICMP, PROTO_ICMPV6, PROTO_IGMP):
            if len(data) < offset + 8:
                raise DecodeError("frame shorter than ICMP/IGMP header")
            l4_len = 8
        flags |= port_indicators(proto, out.src_port, out.dst_port)

    out.header_length = offset + l4_len
    out.payload_length = max(0, ip_payload - l4_len)
    out.protocol_indicators = flags
    return out


@dataclass
class DecodeReport:
    """Packets that failed decoding, kept so callers can surface them."""

    errors: list = field(default_factory=list)

    def add(self, index: int, exc: DecodeError):
        self.errors.append((index, exc.reason))

    def __len__(self):
        return len(self.errors)


def decode_all(raw: Iterable[RawPacket], report: Optional[DecodeReport] = None) -> list[ParsedPacket]:
    """Decode every packet, recording (never silently dropping) failures."""
    parsed = []
    for i, pkt in enumerate(raw):
        try:
            parsed.append(decode_packet(pkt))
        except DecodeError as exc:
            logger.warning("skipping packet %d: %s", i, exc.reason)
            if report is not None:
                report.add(i, exc)
    return parsed
