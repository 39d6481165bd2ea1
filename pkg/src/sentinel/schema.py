"""Column names and feature-set groupings for the 60-feature flow record."""

FLOW_FEATURES = (
    "conn_state", "duration", "history", "local_orig", "local_resp", "missed_bytes",
    "orig_bytes", "orig_ip_bytes", "orig_pkts", "service", "resp_bytes",
    "resp_ip_bytes", "resp_pkts", "tunnel_parents",
)

PACKET_FEATURES = (
    "ARP", "AVG", "DHCP", "DNS", "HTTP", "HTTPS", "Header_Length", "IAT", "ICMP",
    "IGMP", "IPv", "IRC", "LLC", "Max", "Min", "Number", "Protocol Type", "Rate",
    "SMTP", "SSH", "Std", "TCP", "Telnet", "Time_To_Live", "Tot size", "Tot sum",
    "UDP", "Variance", "ack_count", "ack_flag_number", "cwr_flag_number", "dst_port",
    "src_port", "fin_count", "duration_time_interval", "ece_flag_number",
    "fin_flag_number", "psh_flag_number", "rst_count", "rst_flag_number",
    "syn_count", "syn_flag_number",
)

DERIVED_FEATURES = ("byte_ratio", "direction", "orig_byte_rate", "orig_pkt_rate")

FEATURES = FLOW_FEATURES + PACKET_FEATURES + DERIVED_FEATURES
assert len(FEATURES) == 60

LABEL = "label"
UNKNOWN = "U"

# Zeek identifier columns kept in the flow CSV for the join, dropped from fused output
FLOW_ID_COLUMNS = ("ts", "uid", "id.orig_h", "id.orig_p", "id.resp_h", "id.resp_p", "proto")

INDICATORS = (
    "ARP", "LLC", "HTTP", "HTTPS", "DNS", "DHCP", "SSH", "Telnet", "SMTP", "IRC",
    "ICMP", "IGMP", "TCP", "UDP",
)
FLAG_FIELDS = (
    "fin_flag_number", "syn_flag_number", "rst_flag_number", "psh_flag_number",
    "ack_flag_number", "ece_flag_number", "cwr_flag_number",
)
COUNT_FIELDS = ("ack_count", "syn_count", "fin_count", "rst_count")
MODE_FIELDS = ("Protocol Type", "src_port", "dst_port", "IPv")
MEAN_FIELDS = ("Header_Length", "Time_To_Live", "Tot size")
WINDOW_STATS = (
    "AVG", "Min", "Max", "Std", "Variance", "Tot sum", "Number", "IAT", "Rate",
    "duration_time_interval",
)

# per-packet columns, in the order they appear among the packet features
PACKET_ROW_FIELDS = tuple(
    c for c in PACKET_FEATURES if c not in WINDOW_STATS
)
PACKET_ID_COLUMNS = ("ts", "src_ip", "dst_ip")
PACKET_COLUMNS = PACKET_ID_COLUMNS + PACKET_ROW_FIELDS

CATEGORICAL = (
    "conn_state", "history", "service", "tunnel_parents",
    "Protocol Type", "src_port", "dst_port", "IPv",
)

FEATURE_SETS = {
    "flow": FLOW_FEATURES,
    "packet": PACKET_FEATURES,
    "flow+derived": FLOW_FEATURES + DERIVED_FEATURES,
    "packet+derived": PACKET_FEATURES + DERIVED_FEATURES,
    "flow+packet": FLOW_FEATURES + PACKET_FEATURES,
    "flow+packet+derived": FEATURES,
}


def feature_columns(feature_set: str) -> tuple:
    try:
        cols = set(FEATURE_SETS[feature_set])
    except KeyError:
        raise ValueError(f"unknown feature set {feature_set!r}") from None
    return tuple(c for c in FEATURES if c in cols)
