"""Per-flow statistics: 6 identifier fields + 63 numeric features.

Conventions:

* times are reported in seconds, sizes in bytes; "packet length" is the
  transport payload length;
* every (min, max, mean, std) group is all zeros for an empty sample, and
  std is the sample standard deviation (n - 1), zero below two samples;
* rates divide by the flow duration and are zero for zero-length flows;
* active/idle periods split the packet timeline at gaps longer than the
  activity threshold; subflows split it at gaps longer than the subflow gap;
* down/up ratio is backward bytes over forward bytes, zero when no
  forward bytes were sent;
* initial window is the TCP window of the first packet in that direction.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .packets import Protocol, TCPFlag
from .table import FlowState

DEFAULT_ACTIVITY_THRESHOLD_S = 5.0
DEFAULT_SUBFLOW_GAP_S = 5.0

ID_COLUMNS = ("flow_id", "src_ip", "dst_ip", "src_port", "dst_port", "timestamp_us")


def _quad(prefix: str) -> tuple[str, ...]:
    return tuple(f"{prefix}_{s}" for s in ("min", "max", "mean", "std"))


TIMING_COLUMNS = (
    *_quad("fwd_iat"), "fwd_pkts_per_s",
    *_quad("bwd_iat"), "bwd_pkts_per_s",
    "flow_duration", *_quad("flow_iat"), "flow_pkts_per_s", "flow_bytes_per_s",
    *_quad("active"), *_quad("idle"),
)


def _directional(d: str) -> tuple[str, ...]:
    return (f"{d}_pkts", *_quad(f"{d}_pkt_len"), f"{d}_psh_cnt", f"{d}_urg_cnt",
            f"{d}_header_len", f"{d}_init_win", f"{d}_avg_seg_size",
            f"{d}_subflow_pkts", f"{d}_subflow_bytes")


FLAG_ORDER = (TCPFlag.FIN, TCPFlag.SYN, TCPFlag.RST, TCPFlag.PSH,
              TCPFlag.ACK, TCPFlag.URG, TCPFlag.CWR, TCPFlag.ECE)

PROTOCOL_COLUMNS = (
    *_directional("fwd"), *_directional("bwd"),
    *_quad("pkt_len"),
    *(f"{f.name.lower()}_cnt" for f in FLAG_ORDER),
    "down_up_ratio", "protocol",
)

STAT_COLUMNS = TIMING_COLUMNS + PROTOCOL_COLUMNS
CSV_COLUMNS = ID_COLUMNS + STAT_COLUMNS + ("label",)
STAT_INDEX = {name: i for i, name in enumerate(STAT_COLUMNS)}
N_STATS = len(STAT_COLUMNS)

assert len(TIMING_COLUMNS) == 25 and len(PROTOCOL_COLUMNS) == 38 and N_STATS == 63

PAYLOAD_COLUMNS = (
    *_quad("fwd_pkt_len"), *_quad("bwd_pkt_len"), *_quad("pkt_len"),
    "flow_bytes_per_s", "fwd_avg_seg_size", "bwd_avg_seg_size",
    "fwd_subflow_bytes", "bwd_subflow_bytes", "down_up_ratio",
)
PAYLOAD_INDICES = tuple(STAT_INDEX[c] for c in PAYLOAD_COLUMNS)

# Trainable layout: the 62 numeric stats followed by a protocol one-hot.
PROTOCOL_INDEX = STAT_INDEX["protocol"]
ONE_HOT_PROTOCOLS = (Protocol.TCP, Protocol.UDP, Protocol.OTHER)
MODEL_COLUMNS = tuple(c for c in STAT_COLUMNS if c != "protocol") + tuple(
    f"proto_{p.name.lower()}" for p in ONE_HOT_PROTOCOLS)
N_MODEL_FEATURES = len(MODEL_COLUMNS)


@dataclass
class FeatureVector:
    flow_id: str
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    timestamp_us: int
    stats: np.ndarray = field(repr=False)
    label: str = "benign"

    def __getitem__(self, name: str) -> float:
        return float(self.stats[STAT_INDEX[name]])

    @property
    def protocol(self) -> Protocol:
        return Protocol(int(self.stats[PROTOCOL_INDEX]))


def _stats4(x: np.ndarray) -> list[float]:
    n = x.size
    if n == 0:
        return [0.0, 0.0, 0.0, 0.0]
    std = float(x.std(ddof=1)) if n > 1 else 0.0
    return [float(x.min()), float(x.max()), float(x.mean()), std]


def _rate(count: float, seconds: float) -> float:
    return count / seconds if seconds > 0 else 0.0


def activity_periods(times_us: np.ndarray, threshold_us: float) -> tuple[list[int], list[int]]:
    """Split a timeline into (active, idle) period lengths in microseconds."""
    active: list[int] = []
    idle: list[int] = []
    if times_us.size == 0:
        return active, idle
    start = last = int(times_us[0])
    for t in times_us[1:]:
        t = int(t)
        if t - last > threshold_us:
            if last > start:
                active.append(last - start)
            idle.append(t - last)
            start = t
        last = t
    if last > start:
        active.append(last - start)
    return active, idle


def make_flow_id(flow: FlowState) -> str:
    k = flow.key
    return f"{k.src_ip}-{k.dst_ip}-{k.src_port}-{k.dst_port}-{int(k.protocol)}-{flow.start_us}"


def extract_features(flow: FlowState,
                     activity_threshold_s: float = DEFAULT_ACTIVITY_THRESHOLD_S,
                     subflow_gap_s: float = DEFAULT_SUBFLOW_GAP_S) -> FeatureVector:
    if not flow.complete:
        raise ValueError("extract_features needs a completed flow")
    if not flow.packets:
        raise ValueError("flow has no packets")

    pkts = flow.packets
    fwd_mask = np.array(flow.forward, dtype=bool)
    ts = np.array([p.timestamp_us for p in pkts], dtype=np.int64)
    plen = np.array([p.payload_len_bytes for p in pkts], dtype=np.float64)
    hlen = np.array([p.header_len_bytes for p in pkts], dtype=np.float64)
    flags = np.array([p.tcp_flags for p in pkts], dtype=np.int64)

    duration_s = (ts.max() - ts.min()) / 1e6
    flow_iat = np.diff(ts) / 1e6
    active, idle = activity_periods(ts, activity_threshold_s * 1e6)
    n_subflows = 1 + int(np.count_nonzero(np.diff(ts) > subflow_gap_s * 1e6))

    timing: list[float] = []
    per_dir: dict[bool, list[float]] = {}
    dir_bytes: dict[bool, float] = {}
    for fwd in (True, False):
        m = fwd_mask if fwd else ~fwd_mask
        d_ts = ts[m]
        d_len = plen[m]
        count = int(m.sum())
        timing += _stats4(np.diff(d_ts) / 1e6) + [_rate(count, duration_s)]
        total = float(d_len.sum())
        dir_bytes[fwd] = total
        first = next((p for p, f in zip(pkts, flow.forward) if f == fwd), None)
        per_dir[fwd] = [
            float(count), *_stats4(d_len),
            float(np.count_nonzero(flags[m] & TCPFlag.PSH)),
            float(np.count_nonzero(flags[m] & TCPFlag.URG)),
            float(hlen[m].sum()),
            float(first.tcp_window) if first is not None else 0.0,
            total / count if count else 0.0,
            count / n_subflows,
            total / n_subflows,
        ]

    total_bytes = float(plen.sum())
    timing += [duration_s, *_stats4(flow_iat), _rate(len(pkts), duration_s),
               _rate(total_bytes, duration_s)]
    timing += _stats4(np.array(active, dtype=np.float64) / 1e6)
    timing += _stats4(np.array(idle, dtype=np.float64) / 1e6)

    flag_counts = [float(np.count_nonzero(flags & f)) for f in FLAG_ORDER]
    down_up = dir_bytes[False] / dir_bytes[True] if dir_bytes[True] > 0 else 0.0
    protocol_part = (per_dir[True] + per_dir[False] + _stats4(plen) + flag_counts
                     + [down_up, float(int(flow.key.protocol))])

    stats = np.array(timing + protocol_part, dtype=np.float64)
    k = flow.key
    return FeatureVector(make_flow_id(flow), k.src_ip, k.dst_ip, k.src_port, k.dst_port,
                         flow.start_us, stats)


def to_model_row(stats: np.ndarray) -> np.ndarray:
    """63 stats -> 65 trainable values (protocol code replaced by one-hot)."""
    stats = np.asarray(stats, dtype=np.float64)
    numeric = np.delete(stats, PROTOCOL_INDEX, axis=-1)
    code = stats[..., PROTOCOL_INDEX]
    onehot = np.stack([code == int(p) for p in ONE_HOT_PROTOCOLS[:2]]
                      + [(code != int(Protocol.TCP)) & (code != int(Protocol.UDP))],
                      axis=-1).astype(np.float64)
    return np.concatenate([numeric, onehot], axis=-1)


# ---------------------------------------------------------------------------
# CSV and feature dictionary

def write_flow_csv(flows: Iterable[FeatureVector], path: str | os.PathLike) -> int:
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for fv in flows:
            w.writerow([fv.flow_id, fv.src_ip, fv.dst_ip, fv.src_port, fv.dst_port,
                        fv.timestamp_us, *(repr(float(v)) for v in fv.stats), fv.label])
            n += 1
    return n


def read_flow_csv(path: str | os.PathLike) -> Iterator[FeatureVector]:
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None:
            return
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"{path}: not a flow CSV (header mismatch)")
        for row in r:
            yield FeatureVector(row[0], row[1], row[2], int(row[3]), int(row[4]), int(row[5]),
                                np.array([float(v) for v in row[6:6 + N_STATS]]), row[-1])


_DESCRIPTIONS = {
    "iat": "inter-arrival time between consecutive packets (s)",
    "pkts_per_s": "packets per second of flow duration",
    "flow_duration": "last minus first packet timestamp (s)",
    "flow_bytes_per_s": "payload bytes per second of flow duration",
    "active": "active period length (s), gaps above the activity threshold split periods",
    "idle": "idle gap length (s), gaps above the activity threshold",
    "pkts": "packet count",
    "pkt_len": "transport payload length (bytes)",
    "psh_cnt": "packets with PSH set",
    "urg_cnt": "packets with URG set",
    "header_len": "summed IP + transport header bytes",
    "init_win": "TCP window of the first packet in this direction",
    "avg_seg_size": "payload bytes / packets",
    "subflow_pkts": "packets / number of subflows",
    "subflow_bytes": "payload bytes / number of subflows",
    "down_up_ratio": "backward payload bytes / forward payload bytes (0 if no forward bytes)",
    "protocol": "IP protocol code: 6 TCP, 17 UDP, 0 other (one-hot encoded for training)",
    "cnt": "packets with this TCP flag set, both directions",
}


def _describe(col: str) -> str:
    for key in sorted(_DESCRIPTIONS, key=len, reverse=True):
        if key in col:
            desc = _DESCRIPTIONS[key]
            break
    else:
        desc = ""
    if col.startswith("fwd_"):
        desc = "forward: " + desc
    elif col.startswith("bwd_"):
        desc = "backward: " + desc
    for s in ("_min", "_max", "_mean", "_std"):
        if col.endswith(s):
            desc += f" [{s[1:]}]"
    return desc


def feature_dictionary() -> list[dict[str, str]]:
    rows = []
    for i, col in enumerate(CSV_COLUMNS):
        if col in ID_COLUMNS:
            group = "id"
        elif col == "label":
            group = "label"
        elif col in TIMING_COLUMNS:
            group = "timing"
        else:
            group = "protocol"
        rows.append({"index": str(i), "column": col, "group": group,
                     "payload_related": str(col in PAYLOAD_COLUMNS).lower(),
                     "description": _describe(col) if group in ("timing", "protocol") else ""})
    return rows


def write_feature_dictionary(path: str | os.PathLike) -> None:
    rows = feature_dictionary()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
