from hypothesis import given, settings
from hypothesis import strategies as st

from sentinel.flows import (
    FlowRecord, FlowKey, FlowTable, assign_packet, build_flows, derive,
)
from sentinel.pcap import RawPacket, decode_packet

from frames import ACK, FIN, PSH, RST, SYN, golden_records, tcp_frame, udp_frame

A, B = "10.0.0.1", "10.0.0.2"


def pkt(frame, t):
    sec = int(t)
    return decode_packet(RawPacket(sec, round((t - sec) * 1e6), len(frame), len(frame), frame))


def tcp_pkt(t, src, sport, dst, dport, flags, payload=0):
    return pkt(tcp_frame(src, sport, dst, dport, flags, payload), t)


def test_orientation_by_first_packet():
    table = FlowTable()
    i = assign_packet(table, tcp_pkt(0, A, 1234, B, 80, SYN))
    j = assign_packet(table, tcp_pkt(0.1, B, 80, A, 1234, SYN | ACK))
    assert i == j
    (rec,) = table.flush()
    assert rec.key == FlowKey(A, 1234, B, 80, 6)
    assert (rec.orig_pkts, rec.resp_pkts) == (1, 1)


def test_idle_timeout_splits_flows():
    p1 = pkt(udp_frame(A, 5000, B, 9999), 0)
    p2 = pkt(udp_frame(A, 5000, B, 9999), 61)
    recs = build_flows([p1, p2])
    assert len(recs) == 2
    assert len(build_flows([p1, pkt(udp_frame(A, 5000, B, 9999), 59)])) == 1
    t1 = tcp_pkt(0, A, 1, B, 2, ACK)
    assert len(build_flows([t1, tcp_pkt(301, A, 1, B, 2, ACK)])) == 2
    assert len(build_flows([t1, tcp_pkt(299, A, 1, B, 2, ACK)])) == 1


def test_one_sided_udp():
    (rec,) = build_flows([pkt(udp_frame(A, 5000, B, 161, 20), 5)])
    assert rec.resp_pkts == 0 and rec.orig_pkts == 1
    assert rec.conn_state == "OTH"
    assert rec.duration == 0.0


def test_lone_syn_is_s0():
    (rec,) = build_flows([tcp_pkt(1, A, 1234, B, 80, SYN)])
    assert (rec.conn_state, rec.duration, rec.orig_pkts) == ("S0", 0.0, 1)
    assert rec.history == "S"


def test_rejected():
    recs = build_flows([tcp_pkt(1, A, 1234, B, 80, SYN), tcp_pkt(1.5, B, 80, A, 1234, RST | ACK)])
    assert recs[0].conn_state == "REJ"
    assert recs[0].history == "Sr"


def _handshake(t0=0.0):
    return [
        tcp_pkt(t0, A, 1234, B, 80, SYN),
        tcp_pkt(t0 + 0.1, B, 80, A, 1234, SYN | ACK),
        tcp_pkt(t0 + 0.2, A, 1234, B, 80, ACK),
    ]


def test_established_states():
    assert build_flows(_handshake())[0].conn_state == "S1"
    rsto = _handshake() + [tcp_pkt(1, A, 1234, B, 80, RST)]
    assert build_flows(rsto)[0].conn_state == "RSTO"
    rstr = _handshake() + [tcp_pkt(1, B, 80, A, 1234, RST)]
    assert build_flows(rstr)[0].conn_state == "RSTR"


def test_complete_session_sf():
    # handshake + data each way + FIN/FIN + final ACK, state table applied by hand
    pkts = _handshake() + [
        tcp_pkt(0.3, A, 1234, B, 80, PSH | ACK, 50),
        tcp_pkt(0.4, B, 80, A, 1234, PSH | ACK, 70),
        tcp_pkt(0.5, A, 1234, B, 80, FIN | ACK),
        tcp_pkt(0.6, B, 80, A, 1234, FIN | ACK),
        tcp_pkt(0.7, A, 1234, B, 80, ACK),
    ]
    (rec,) = build_flows(pkts)
    assert rec.conn_state == "SF"
    assert rec.history == "ShADdFf"
    assert (rec.orig_pkts, rec.resp_pkts) == (5, 3)
    assert (rec.orig_bytes, rec.resp_bytes) == (50, 70)
    assert rec.orig_ip_bytes == 4 * 40 + 90
    assert rec.service == "http"


def test_new_syn_after_close_starts_new_flow():
    closed = _handshake() + [tcp_pkt(0.5, A, 1234, B, 80, RST)]
    recs = build_flows(closed + _handshake(t0=2.0))
    assert [r.conn_state for r in recs] == ["RSTO", "S1"]


def test_local_flags_and_service_priority():
    (rec,) = build_flows([pkt(udp_frame("192.168.0.5", 53, "8.8.8.8", 67), 0)])
    assert rec.local_orig and not rec.local_resp
    assert rec.service == "dns"  # dns precedes dhcp


def test_derive_examples():
    rec = FlowRecord(FlowKey(A, 1, B, 2, 6), 0.0, 4.0, 500, 499, 600, 600, 10, 1,
                     "SF", "", "none", False, False)
    d = derive(rec)
    assert d.byte_ratio == 1.0
    assert d.orig_pkt_rate == 2.0
    assert d.direction == 1
    zero = FlowRecord(FlowKey(A, 1, B, 2, 6), 0.0, 0.0, 0, 0, 0, 0, 1, 0, "S0", "S", "none", False, False)
    assert derive(zero).byte_ratio == 0.0 and derive(zero).direction == 0
    assert derive(rec) == derive(rec)


packet_strategy = st.tuples(
    st.floats(0, 1000, allow_nan=False),
    st.booleans(),
    st.sampled_from([SYN, SYN | ACK, ACK, PSH | ACK, FIN | ACK, RST, 0]),
    st.integers(0, 400),
    st.sampled_from([6, 17]),
    st.integers(0, 2),
)


@given(st.lists(packet_strategy, min_size=1, max_size=40))
@settings(max_examples=100, deadline=None)
def test_conservation_and_determinism(spec):
    pkts = []
    for t, fwd, flags, payload, proto, port in sorted(spec, key=lambda s: s[0]):
        ends = (A, 1000 + port, B, 80) if fwd else (B, 80, A, 1000 + port)
        frame = tcp_frame(*ends, flags, payload) if proto == 6 else udp_frame(*ends, payload)
        pkts.append(pkt(frame, round(t, 6)))
    table = FlowTable()
    ids = [assign_packet(table, p) for p in pkts]
    recs = table.flush()
    assert recs == build_flows(pkts)
    by_seq = {}
    for i, p in zip(ids, pkts):
        by_seq.setdefault(i, []).append(p)
    assert len(recs) == len(by_seq)
    assert sum(r.orig_pkts + r.resp_pkts for r in recs) == len(pkts)
    assert sum(r.orig_ip_bytes + r.resp_ip_bytes for r in recs) == sum(p.ip_length for p in pkts)
    for r in recs:
        assert r.duration >= 0
        assert r.orig_pkts + r.resp_pkts >= 1
        assert r.orig_bytes <= r.orig_ip_bytes and r.resp_bytes <= r.resp_ip_bytes
        d = derive(r)
        assert (d.direction > 0) == (r.orig_bytes > r.resp_bytes)
        assert min(d.byte_ratio, d.orig_pkt_rate, d.orig_byte_rate) >= 0


def test_golden_session_counters():
    pkts = [pkt(f, sec + sub / 1e6) for sec, sub, f in golden_records()]
    tcp_flow, udp_flow = build_flows(pkts)
    assert tcp_flow.key.protocol_type == 6
    assert (tcp_flow.orig_pkts, tcp_flow.resp_pkts) == (4, 3)
    assert (tcp_flow.orig_bytes, tcp_flow.resp_bytes) == (100, 292)
    assert (tcp_flow.orig_ip_bytes, tcp_flow.resp_ip_bytes) == (260, 412)
    assert tcp_flow.conn_state == "SF"
    assert udp_flow.conn_state == "OTH"
