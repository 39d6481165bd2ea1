import dataclasses

from sentinel.packets import packet_row, record_from_row, record_values
from sentinel.pcap import RawPacket, decode_packet
from sentinel.schema import FLAG_FIELDS, INDICATORS, PACKET_COLUMNS

from frames import ACK, SYN, arp_request, tcp_frame, udp_frame


def row(frame):
    return packet_row(decode_packet(RawPacket(1, 0, len(frame), len(frame), frame)))


def test_syn_projection():
    r = row(tcp_frame("10.0.0.1", 1234, "10.0.0.2", 80, SYN))
    assert r.syn_flag_number == 1 and r.syn_count == 1
    assert r.ack_flag_number == 0
    assert (r.TCP, r.UDP, r.HTTP) == (1, 0, 1)
    assert r.IPv == 4


def test_dns_projection():
    r = row(udp_frame("10.0.0.1", 5353, "10.0.0.2", 53, 12))
    assert (r.DNS, r.UDP, r.TCP) == (1, 1, 0)
    assert all(getattr(r, f) == 0 for f in FLAG_FIELDS)


def test_arp_projection():
    r = row(arp_request("10.0.0.1", "10.0.0.9"))
    assert r.ARP == 1
    assert (r.protocol_type, r.src_port, r.dst_port, r.ttl, r.ip_version) == (0, 0, 0, 0, 0)


def test_binary_fields_and_counts_match_flags():
    for frame in (tcp_frame("1.1.1.1", 1, "2.2.2.2", 2, SYN | ACK), udp_frame("1.1.1.1", 1, "2.2.2.2", 2)):
        r = row(frame)
        for f in FLAG_FIELDS + INDICATORS:
            assert getattr(r, f) in (0, 1)
        assert r.syn_count == r.syn_flag_number and r.ack_count == r.ack_flag_number
        assert r.TCP + r.UDP <= 1


def test_injective_on_projected_fields():
    a = row(tcp_frame("1.1.1.1", 1, "2.2.2.2", 2, SYN))
    b = row(tcp_frame("1.1.1.1", 1, "2.2.2.2", 3, SYN))
    assert record_values(a) != record_values(b)
    assert dataclasses.replace(a) == a


def test_csv_round_trip():
    r = row(tcp_frame("1.1.1.1", 1, "2.2.2.2", 443, SYN | ACK))
    as_text = dict(zip(PACKET_COLUMNS, map(str, record_values(r))))
    assert record_from_row(as_text) == r
