import math

from hypothesis import given, settings
from hypothesis import strategies as st

from sentinel.flows import FlowKey, FlowRecord, derive
from sentinel.fusion import QualityReport, aggregate, assign_packets, fuse, match_packets
from sentinel.packets import PacketRecord
from sentinel.schema import FEATURES, PACKET_FEATURES

A, B = "10.0.0.1", "10.0.0.2"

GOLDEN_HEADER = (
    "conn_state,duration,history,local_orig,local_resp,missed_bytes,orig_bytes,orig_ip_bytes,"
    "orig_pkts,service,resp_bytes,resp_ip_bytes,resp_pkts,tunnel_parents,ARP,AVG,DHCP,DNS,HTTP,"
    "HTTPS,Header_Length,IAT,ICMP,IGMP,IPv,IRC,LLC,Max,Min,Number,Protocol Type,Rate,SMTP,SSH,"
    "Std,TCP,Telnet,Time_To_Live,Tot size,Tot sum,UDP,Variance,ack_count,ack_flag_number,"
    "cwr_flag_number,dst_port,src_port,fin_count,duration_time_interval,ece_flag_number,"
    "fin_flag_number,psh_flag_number,rst_count,rst_flag_number,syn_count,syn_flag_number,"
    "byte_ratio,direction,orig_byte_rate,orig_pkt_rate"
)


def flow(ts=100.0, duration=5.0, proto=6, sport=1234, dport=80):
    return FlowRecord(FlowKey(A, sport, B, dport, proto), ts, duration, 10, 20, 50, 60, 2, 2,
                      "SF", "ShADdFf", "http", True, True)


def prec(t, size=60, fwd=True, proto=6, sport=1234, dport=80, **kw):
    ends = (A, B, sport, dport) if fwd else (B, A, dport, sport)
    return PacketRecord(t, ends[0], ends[1], ends[2], ends[3], proto, 54, size, 64, 4, **kw)


def test_schema_lock():
    assert ",".join(FEATURES) == GOLDEN_HEADER
    assert len(FEATURES) == 60 == len(set(FEATURES))


def test_match_window_examples():
    f = flow()
    assert match_packets(f, [prec(103.2)]) == [prec(103.2)]
    assert match_packets(f, [prec(105.1)]) == []
    assert match_packets(f, [prec(101.0, fwd=False)]) == [prec(101.0, fwd=False)]
    assert match_packets(f, [prec(101.0, dport=81)]) == []
    assert match_packets(f, [prec(99.9)]) == []


def test_window_inclusive_of_float_duration():
    ts, last = 100.1, 105.3
    f = flow(ts=ts, duration=last - ts)
    assert match_packets(f, [prec(last)]) == [prec(last)]


def test_aggregate_examples():
    pkts = [prec(0.0, 60), prec(0.5, 60), prec(2.0, 1500)]
    r = aggregate(flow(ts=0.0, duration=2.0), derive(flow()), pkts)
    assert (r["AVG"], r["Min"], r["Max"], r["Tot sum"], r["Number"]) == (540.0, 60, 1500, 1620, 3)
    assert r["IAT"] == 1.0
    assert r["duration_time_interval"] == 2.0
    assert r["Rate"] == 1.0
    modes = [prec(0, proto=6), prec(1, proto=6), prec(2, proto=17)]
    assert aggregate(flow(), derive(flow()), modes)["Protocol Type"] == 6


def test_mode_tie_breaks_to_smallest():
    pkts = [prec(0, sport=9), prec(1, sport=3)]
    assert aggregate(flow(), derive(flow()), pkts)["src_port"] == 3


def test_zero_packet_flow_reported():
    report = QualityReport()
    (row,) = fuse([flow()], [], report=report)
    assert row["Number"] == 0
    assert all(row[c] == 0 for c in PACKET_FEATURES)
    assert report.empty_flows == [flow().uid]


def test_latest_start_wins():
    early, late = flow(ts=100.0, duration=10.0), flow(ts=104.0, duration=10.0)
    groups = assign_packets([early, late], [prec(102.0), prec(105.0), prec(112.0)])
    assert [p.timestamp for p in groups[0]] == [102.0]
    assert [p.timestamp for p in groups[1]] == [105.0, 112.0]


row_packets = st.lists(
    st.tuples(st.floats(0, 10, allow_nan=False), st.integers(40, 1514), st.booleans(),
              st.integers(0, 1), st.integers(0, 1)),
    min_size=1, max_size=30,
)


@given(row_packets, st.randoms(use_true_random=False))
@settings(max_examples=150, deadline=None)
def test_permutation_invariance_and_stats(spec, rnd):
    pkts = [prec(t, s, fwd, syn_flag_number=sy, syn_count=sy, ack_flag_number=ak, ack_count=ak)
            for t, s, fwd, sy, ak in spec]
    f = flow(ts=0.0, duration=10.0)
    base = aggregate(f, derive(f), pkts)
    shuffled = list(pkts)
    rnd.shuffle(shuffled)
    assert aggregate(f, derive(f), shuffled) == base
    assert base["Min"] <= base["AVG"] <= base["Max"]
    assert math.isclose(base["Variance"], base["Std"] ** 2, rel_tol=1e-9, abs_tol=1e-12)
    assert math.isclose(base["Tot sum"], base["AVG"] * base["Number"], rel_tol=1e-9)
    assert base["IAT"] >= 0 and base["Number"] >= 1
    assert 0 <= base["syn_flag_number"] <= 1
    assert list(base) == list(FEATURES)


@given(st.lists(st.tuples(st.floats(0, 50, allow_nan=False), st.floats(0, 20, allow_nan=False)),
                min_size=1, max_size=6),
       st.lists(st.floats(0, 80, allow_nan=False), max_size=40))
@settings(max_examples=100, deadline=None)
def test_partition_property(windows, times):
    flows = [flow(ts=ts, duration=d) for ts, d in windows]
    pkts = [prec(t, fwd=bool(i % 2)) for i, t in enumerate(times)]
    groups = assign_packets(flows, pkts)
    seen = [id(p) for g in groups for p in g]
    assert len(seen) == len(set(seen))
    for f, g in zip(flows, groups):
        for p in g:
            assert p in match_packets(f, [p])
