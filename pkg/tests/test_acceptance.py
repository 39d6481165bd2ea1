"""Acceptance criteria, each reported as one PASS/FAIL line in the terminal summary."""
import functools
import hashlib
import json
import math
import random
import time

import numpy as np
import pytest

from sentinel.cli import main
from sentinel.embedding import triplet_loss
from sentinel.flows import FlowKey, FlowRecord, derive
from sentinel.schema import FEATURES

from frames import HOST_A, HOST_B, HOST_C, golden_records, pcap_bytes
from test_calibration import run_oracle_equivalence
from test_embedding import active_probe, finite_difference, rel_err
from test_inference import run_decision_table
from test_metrics import check_fixture
from test_preprocess import check_invariants

RESULTS = []


def criterion(name, budget=None):
    """Record outcome, detail and runtime; a blown time budget fails the criterion."""
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            start = time.perf_counter()
            try:
                detail = fn(*args, **kwargs) or ""
                elapsed = time.perf_counter() - start
                if budget is not None and elapsed >= budget:
                    raise AssertionError(f"took {elapsed:.2f}s, budget {budget}s")
            except BaseException as exc:
                RESULTS.append(("FAIL", name, f"{type(exc).__name__}: {exc}"[:200]))
                raise
            RESULTS.append(("PASS", name, f"{detail} ({elapsed:.2f}s)".strip()))
        return run
    return wrap


# ---- golden capture ----

def uid(ts, orig, oport, resp, rport, proto, seq):
    text = f"{ts!r}|{orig}|{oport}|{resp}|{rport}|{proto}|{seq}"
    return "C" + hashlib.sha1(text.encode()).hexdigest()[:17]


FLOW_HEADER = ("ts,uid,id.orig_h,id.orig_p,id.resp_h,id.resp_p,proto,conn_state,duration,history,"
               "local_orig,local_resp,missed_bytes,orig_bytes,orig_ip_bytes,orig_pkts,service,resp_bytes,"
               "resp_ip_bytes,resp_pkts,tunnel_parents,byte_ratio,direction,orig_byte_rate,orig_pkt_rate")


def expected_flow_csv():
    # TCP: 4 originator packets carrying 100 payload bytes, 3 responder packets carrying 292
    tcp = ["1000.0", uid(1000.0, HOST_A, 40000, HOST_B, 80, 6, 0), HOST_A, "40000", HOST_B, "80", "tcp",
           "SF", "0.875", "ShADdFf", "1", "0", "0", "100", "260", "4", "http", "292", "412", "3", "",
           repr(100 / 293), "-192", repr(260 / 1.875), repr(4 / 1.875)]
    udp = ["1000.5", uid(1000.5, HOST_A, 50000, HOST_C, 161, 17, 1), HOST_A, "50000", HOST_C, "161", "udp",
           "OTH", "0.0", "", "1", "1", "0", "20", "48", "1", "none", "0", "0", "0", "",
           "20.0", "20", "48.0", "1.0"]
    return "\n".join([FLOW_HEADER, ",".join(tcp), ",".join(udp)]) + "\n"


def expected_fused_csv():
    tcp = {
        "conn_state": "SF", "duration": "0.875", "history": "ShADdFf", "local_orig": "1", "local_resp": "0",
        "missed_bytes": "0", "orig_bytes": "100", "orig_ip_bytes": "260", "orig_pkts": "4", "service": "http",
        "resp_bytes": "292", "resp_ip_bytes": "412", "resp_pkts": "3", "tunnel_parents": "",
        # frame sizes: five bare 54-byte segments, then 154 and 346 with payload
        "AVG": "110.0", "Min": "54", "Max": "346", "Tot sum": "770", "Number": "7",
        "Variance": repr(73312 / 7), "Std": repr(math.sqrt(73312 / 7)),
        "IAT": repr(0.875 / 6), "Rate": repr(7 / 1.875), "duration_time_interval": "0.875",
        "Header_Length": "54.0", "Time_To_Live": repr(640 / 7), "Tot size": "110.0",
        "Protocol Type": "6", "src_port": "40000", "dst_port": "80", "IPv": "4",
        "ack_count": "6", "syn_count": "2", "fin_count": "2", "rst_count": "0",
        "fin_flag_number": repr(2 / 7), "syn_flag_number": repr(2 / 7), "rst_flag_number": "0.0",
        "psh_flag_number": repr(2 / 7), "ack_flag_number": repr(6 / 7), "ece_flag_number": "0.0",
        "cwr_flag_number": "0.0", "HTTP": "1", "TCP": "1",
        "byte_ratio": repr(100 / 293), "direction": "-192", "orig_byte_rate": repr(260 / 1.875),
        "orig_pkt_rate": repr(4 / 1.875),
    }
    udp = {
        "conn_state": "OTH", "duration": "0.0", "history": "", "local_orig": "1", "local_resp": "1",
        "missed_bytes": "0", "orig_bytes": "20", "orig_ip_bytes": "48", "orig_pkts": "1", "service": "none",
        "resp_bytes": "0", "resp_ip_bytes": "0", "resp_pkts": "0", "tunnel_parents": "",
        "AVG": "62.0", "Min": "62", "Max": "62", "Tot sum": "62", "Number": "1", "Variance": "0.0",
        "Std": "0.0", "IAT": "0.0", "Rate": "1.0", "duration_time_interval": "0.0",
        "Header_Length": "42.0", "Time_To_Live": "64.0", "Tot size": "62.0",
        "Protocol Type": "17", "src_port": "50000", "dst_port": "161", "IPv": "4",
        "ack_count": "0", "syn_count": "0", "fin_count": "0", "rst_count": "0",
        "fin_flag_number": "0.0", "syn_flag_number": "0.0", "rst_flag_number": "0.0",
        "psh_flag_number": "0.0", "ack_flag_number": "0.0", "ece_flag_number": "0.0",
        "cwr_flag_number": "0.0", "UDP": "1",
        "byte_ratio": "20.0", "direction": "20", "orig_byte_rate": "48.0", "orig_pkt_rate": "1.0",
    }
    indicators = ["ARP", "LLC", "HTTP", "HTTPS", "DNS", "DHCP", "SSH", "Telnet", "SMTP", "IRC",
                  "ICMP", "IGMP", "TCP", "UDP"]
    lines = [",".join(list(FEATURES) + ["label"])]
    for row in (tcp, udp):
        for ind in indicators:
            row.setdefault(ind, "0")
        assert set(row) == set(FEATURES)
        lines.append(",".join([row[c] for c in FEATURES] + ["benign"]))
    return "\n".join(lines) + "\n"


@criterion("golden pcap: flow and fused CSV bit-exact", budget=1.0)
def check_golden(tmp_path):
    pcap = tmp_path / "golden.pcap"
    pcap.write_bytes(pcap_bytes(golden_records()))
    assert main(["extract", "--pcap", str(pcap), "--out-dir", str(tmp_path)]) == 0
    assert main(["fuse", "--flows", str(tmp_path / "golden.flows.csv"),
                 "--packets", str(tmp_path / "golden.packets.csv"),
                 "--out", str(tmp_path / "golden.fused.csv"), "--label", "benign"]) == 0
    assert (tmp_path / "golden.flows.csv").read_text() == expected_flow_csv()
    assert (tmp_path / "golden.fused.csv").read_text() == expected_fused_csv()
    return "2 flows, 60 features"


def test_golden_pcap(tmp_path):
    check_golden(tmp_path)


# ---- derived features ----

def naive_derived(r):
    return (r.orig_bytes / (r.resp_bytes + 1), r.orig_pkts / (r.duration + 1),
            r.orig_ip_bytes / (r.duration + 1), r.orig_bytes - r.resp_bytes)


def ulp_distance(a, b):
    if a == b:
        return 0
    return abs(int(np.float64(a).view(np.int64)) - int(np.float64(b).view(np.int64)))


@criterion("derived features: 1000 records, 0 ULP")
def check_derived():
    rng = random.Random(7)
    worst = 0
    for _ in range(1000):
        ob, rb = rng.randrange(0, 10**9), rng.randrange(0, 10**9)
        rec = FlowRecord(FlowKey("10.0.0.1", 1, "10.0.0.2", 2, 6), ts=rng.uniform(0, 2e9),
                         duration=rng.choice([0.0, rng.uniform(0, 1e4), rng.expovariate(1.0)]),
                         orig_bytes=ob, resp_bytes=rb, orig_ip_bytes=ob + 40 * rng.randrange(1, 100),
                         resp_ip_bytes=rb, orig_pkts=rng.randrange(1, 10**6), resp_pkts=rng.randrange(0, 10**6),
                         conn_state="SF", history="", service="none", local_orig=True, local_resp=False)
        d = derive(rec)
        got = (d.byte_ratio, d.orig_pkt_rate, d.orig_byte_rate, d.direction)
        want = naive_derived(rec)
        assert got[3] == want[3]
        worst = max(worst, *(ulp_distance(g, w) for g, w in zip(got[:3], want[:3])))
    assert worst == 0
    return f"max ULP {worst}"


def test_derived_features():
    check_derived()


# ---- gradient check ----

@criterion("triplet-loss gradient: 150 probes, rel err < 1e-4", budget=10.0)
def check_gradient():
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(150):
        a, p, n = active_probe(rng, 24, 0.3)
        _, grads = triplet_loss(a, p, n, 0.3)
        fds = (finite_difference(lambda x: triplet_loss(x, p, n, 0.3)[0], a),
               finite_difference(lambda x: triplet_loss(a, x, n, 0.3)[0], p),
               finite_difference(lambda x: triplet_loss(a, p, x, 0.3)[0], n))
        worst = max(worst, *(rel_err(g, fd) for g, fd in zip(grads, fds)))
    assert worst < 1e-4
    return f"max rel err {worst:.2e}"


def test_gradient_check():
    check_gradient()


# ---- threshold selection and decision rule ----

@criterion("threshold selection: 100 instances equal the enumeration oracle", budget=30.0)
def check_threshold_oracle():
    run_oracle_equivalence(range(100))
    return "100/100 identical"


def test_threshold_oracle():
    check_threshold_oracle()


@criterion("decision rule: boundary and vote-tie table up to 4 models")
def check_decision_rule():
    return f"{run_decision_table()} cases"


def test_decision_rule():
    check_decision_rule()


@criterion("metrics: 20-sample fixture exact")
def check_metrics():
    check_fixture()


def test_metrics_fixture():
    check_metrics()


# ---- end to end ----

def full_run(root, tag):
    data, out = root / "data", root / tag
    start = time.perf_counter()
    if not data.exists():
        assert main(["--seed", "42", "synth", "--spec", "acceptance", "--out", str(data)]) == 0
    code = main(["--seed", "42", "run", "--train", str(data / "train.csv"), "--queries", str(data / "test.csv"),
                 "--truth", str(data / "truth.csv"), "--out", str(out)])
    assert code == 0
    return out, time.perf_counter() - start


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    first, elapsed = full_run(root, "run1")
    second, _ = full_run(root, "run2")
    return first, second, elapsed


@criterion("end-to-end synthetic run: U-F1 >= 0.80, W-F1 >= 0.85, < 5 min")
def check_end_to_end(runs):
    first, _, elapsed = runs
    assert elapsed < 300
    report = json.loads((first / "report.json").read_text())["metrics"]
    u_f1, w_f1 = report["unknown_f1"], report["weighted_f1"]
    assert u_f1 >= 0.80 and w_f1 >= 0.85, (u_f1, w_f1)
    return f"U-F1 {u_f1:.4f}, W-F1 {w_f1:.4f}, chain {elapsed:.1f}s"


def test_end_to_end(runs):
    check_end_to_end(runs)


@criterion("determinism: identical models, calibration and predictions")
def check_determinism(runs):
    first, second, _ = runs
    files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
    assert any(str(f).endswith(".model") for f in files)
    for rel in files:
        assert (first / rel).read_bytes() == (second / rel).read_bytes(), rel
    return f"{len(files)} files identical"


def test_determinism(runs):
    check_determinism(runs)


@criterion("preprocessing invariants: 50 random tables")
def check_preprocessing():
    for seed in range(50):
        check_invariants(seed)
    return "50/50"


def test_preprocessing_invariants():
    check_preprocessing()
