"""Payload-feature augmentation for single-request HTTP DoS sequences.

A pool of simulated request/response exchanges (the AugBase) supplies
payload statistics. For each eligible training sequence one pool entry is
drawn, repeated over the real timesteps, perturbed with per-cell Gaussian
noise and written over the sequence's payload columns. Timing columns,
labels and padding are left alone. Everything happens in raw feature
units, before normalization.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .flows.features import (PAYLOAD_COLUMNS, PAYLOAD_INDICES, STAT_INDEX,
                             extract_features)
from .flows.packets import PacketRecord, Protocol, TCPFlag
from .flows.table import FlowKey, FlowState
from .rng import substream
from .sequences import FlowSequence

AUGBASE_SIZE = 2000
REQUEST_RANGE = (100, 400)
RESPONSE_RANGE = (100, 15000)
NOISE_STD = 5.0
MSS = 1460

# single-request HTTP floods; slow-rate attacks are excluded on purpose
AUGMENTABLE_LABELS = frozenset({
    "dos_http", "dos_hulk", "dos_goldeneye", "dos_loic_http", "ddos_loic_http", "ddos_hoic",
})

_BYTES_PER_S = PAYLOAD_COLUMNS.index("flow_bytes_per_s")
_DURATION = STAT_INDEX["flow_duration"]

_ACK, _SYN, _FIN, _PSH = TCPFlag.ACK, TCPFlag.SYN, TCPFlag.FIN, TCPFlag.PSH
TCP_HEADER = 40          # IPv4 + TCP without options


def segment(n_bytes: int, mss: int = MSS) -> list[int]:
    full, rest = divmod(int(n_bytes), mss)
    return [mss] * full + ([rest] if rest else [])


def single_exchange_packets(request_bytes: int, response_bytes: int, *, src_ip: str = "10.0.0.1",
                            dst_ip: str = "10.0.0.2", src_port: int = 40000, dst_port: int = 80,
                            start_us: int = 0, gap_us: int | Sequence[int] = 1000,
                            window: int = 64240) -> list[PacketRecord]:
    """One TCP connection carrying a single request and its response.

    Handshake, request segments (forward), response segments (backward),
    a client ACK, then a four-way close. ``gap_us`` is either one spacing
    for every packet or a per-gap sequence.
    """
    fwd, bwd = (src_ip, dst_ip, src_port, dst_port), (dst_ip, src_ip, dst_port, src_port)
    plan: list[tuple[tuple, int, int]] = [(fwd, _SYN, 0), (bwd, _SYN | _ACK, 0), (fwd, _ACK, 0)]
    req = segment(request_bytes)
    for i, n in enumerate(req):
        plan.append((fwd, _ACK | (_PSH if i == len(req) - 1 else 0), n))
    resp = segment(response_bytes)
    for i, n in enumerate(resp):
        plan.append((bwd, _ACK | (_PSH if i == len(resp) - 1 else 0), n))
    plan += [(fwd, _ACK, 0), (fwd, _FIN | _ACK, 0), (bwd, _ACK, 0), (bwd, _FIN | _ACK, 0), (fwd, _ACK, 0)]
    gaps = [gap_us] * (len(plan) - 1) if isinstance(gap_us, int) else list(gap_us)
    if len(gaps) != len(plan) - 1:
        raise ValueError(f"need {len(plan) - 1} gaps, got {len(gaps)}")
    out, t = [], start_us
    for k, ((s, d, sp, dp), flags, n) in enumerate(plan):
        if k:
            t += int(gaps[k - 1])
        out.append(PacketRecord(t, s, d, sp, dp, Protocol.TCP, int(flags), TCP_HEADER, n, window))
    return out


def exchange_packet_count(request_bytes: int, response_bytes: int) -> int:
    return 8 + len(segment(request_bytes)) + len(segment(response_bytes))


def exchange_payload_features(request_bytes: int, response_bytes: int) -> np.ndarray:
    """The 18 payload features of one simulated exchange (bytes/sec left 0)."""
    pkts = single_exchange_packets(request_bytes, response_bytes)
    flow = FlowState(FlowKey.of(pkts[0]))
    for p in pkts:
        flow.add(p)
    fv = extract_features(flow)
    row = fv.stats[list(PAYLOAD_INDICES)].copy()
    row[_BYTES_PER_S] = 0.0           # recomputed per target sequence
    return row


@dataclass
class AugBase:
    request_bytes: np.ndarray      # (n,) int
    response_bytes: np.ndarray     # (n,) int
    payload: np.ndarray            # (n, 18) raw units
    seed: int

    def __len__(self) -> int:
        return len(self.request_bytes)

    def total_bytes(self, i: int) -> float:
        return float(self.request_bytes[i] + self.response_bytes[i])


def build_augbase(seed: int, size: int = AUGBASE_SIZE) -> AugBase:
    rng = substream(seed, "augbase")
    req = rng.integers(REQUEST_RANGE[0], REQUEST_RANGE[1], size=size, endpoint=True)
    resp = rng.integers(RESPONSE_RANGE[0], RESPONSE_RANGE[1], size=size, endpoint=True)
    payload = np.stack([exchange_payload_features(int(a), int(b)) for a, b in zip(req, resp)])
    return AugBase(req.astype(np.int64), resp.astype(np.int64), payload, seed)


def is_augmentable(seq: FlowSequence) -> bool:
    labels = seq.real_labels()
    return bool(labels) and all(lab in AUGMENTABLE_LABELS for lab in labels)


def augment_sequence(seq: FlowSequence, base: AugBase, rng: np.random.Generator,
                     noise_std: float = NOISE_STD) -> FlowSequence:
    if not is_augmentable(seq):
        raise ValueError(f"sequence labels {seq.real_labels()} are not single-request HTTP DoS")
    n = seq.n_real
    i = int(rng.integers(len(base)))
    row = base.payload[i].copy()
    durations = seq.stats[:n, _DURATION]
    mean_dur = float(durations.mean())
    row[_BYTES_PER_S] = base.total_bytes(i) / mean_dur if mean_dur > 0 else 0.0
    block = np.repeat(row[None, :], n, axis=0)
    block += rng.normal(0.0, noise_std, size=block.shape)
    np.maximum(block, 0.0, out=block)   # byte counts and ratios stay non-negative
    stats = seq.stats.copy()
    stats[:n, list(PAYLOAD_INDICES)] = block
    return seq.replace_stats(stats)


def augment_training_set(seqs: Iterable[FlowSequence], base: AugBase,
                         rng: np.random.Generator) -> list[FlowSequence]:
    return [augment_sequence(s, base, rng) if is_augmentable(s) else s for s in seqs]


# ---------------------------------------------------------------------------
# persistence

_CSV_HEAD = ("request_bytes", "response_bytes") + PAYLOAD_COLUMNS


def write_augbase(base: AugBase, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# augbase seed={base.seed}\n")
        w = csv.writer(fh)
        w.writerow(_CSV_HEAD)
        for a, b, row in zip(base.request_bytes, base.response_bytes, base.payload):
            w.writerow([int(a), int(b)] + [repr(float(v)) for v in row])


def read_augbase(path: str | os.PathLike) -> AugBase:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("# augbase seed="):
            raise ValueError(f"{path}: missing augbase header")
        seed = int(first.split("=", 1)[1])
        r = csv.reader(fh)
        if tuple(next(r)) != _CSV_HEAD:
            raise ValueError(f"{path}: unexpected columns")
        rows = [row for row in r if row]
    req = np.array([int(x[0]) for x in rows], dtype=np.int64)
    resp = np.array([int(x[1]) for x in rows], dtype=np.int64)
    payload = np.array([[float(v) for v in x[2:]] for x in rows], dtype=np.float64)
    return AugBase(req, resp, payload.reshape(len(rows), len(PAYLOAD_COLUMNS)), seed)
