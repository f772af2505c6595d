"""Group flows into fixed-length host-pair sequences.

Flows are buffered per (src_ip, dst_ip, protocol). A buffer is emitted as
soon as it holds ``alpha`` flows. Independently, every ``tau`` seconds of
stream time the whole table is flushed and short buffers are zero-padded
to ``alpha`` rows. The stream clock is the start timestamp of the flows
being pushed, so replays are deterministic.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np

from .flows.features import N_STATS, FeatureVector
from .flows.packets import Protocol

DEFAULT_ALPHA = 10
DEFAULT_TAU_S = 30.0
SEQUENCE_FORMAT_VERSION = 1


@dataclass(frozen=True, slots=True)
class SequenceKey:
    src_ip: str
    dst_ip: str
    protocol: Protocol

    @classmethod
    def of(cls, fv: FeatureVector) -> "SequenceKey":
        return cls(fv.src_ip, fv.dst_ip, fv.protocol)


@dataclass
class FlowSequence:
    """``alpha`` rows of raw stats; real flows first, zero rows after."""

    key: SequenceKey
    stats: np.ndarray            # (alpha, 63), raw units
    pad_mask: np.ndarray         # (alpha,) bool, True = real flow
    flow_ids: list[str]
    labels: list[str]
    emitted_at_us: int

    @property
    def alpha(self) -> int:
        return len(self.pad_mask)

    @property
    def n_real(self) -> int:
        return int(self.pad_mask.sum())

    def real_labels(self) -> list[str]:
        return self.labels[:self.n_real]

    def replace_stats(self, stats: np.ndarray) -> "FlowSequence":
        return FlowSequence(self.key, stats, self.pad_mask.copy(), list(self.flow_ids),
                            list(self.labels), self.emitted_at_us)

    @classmethod
    def from_flows(cls, key: SequenceKey, flows: list[FeatureVector], alpha: int,
                   emitted_at_us: int) -> "FlowSequence":
        if not 1 <= len(flows) <= alpha:
            raise ValueError(f"need 1..{alpha} flows, got {len(flows)}")
        stats = np.zeros((alpha, N_STATS))
        for i, fv in enumerate(flows):
            stats[i] = fv.stats
        mask = np.arange(alpha) < len(flows)
        ids = [fv.flow_id for fv in flows] + [""] * (alpha - len(flows))
        labels = [fv.label for fv in flows] + [""] * (alpha - len(flows))
        return cls(key, stats, mask, ids, labels, emitted_at_us)


class ConnectionTable:
    def __init__(self, alpha: int = DEFAULT_ALPHA, tau_s: Optional[float] = DEFAULT_TAU_S):
        if alpha < 1:
            raise ValueError("alpha must be >= 1")
        self.alpha = alpha
        self.tau_us = None if tau_s is None else int(round(tau_s * 1e6))
        self.buffers: dict[SequenceKey, list[FeatureVector]] = {}
        self.window_start_us: Optional[int] = None
        self.clock_us = 0
        self.flush_times: list[int] = []

    def __len__(self) -> int:
        return len(self.buffers)

    def push(self, fv: FeatureVector) -> list[FlowSequence]:
        """Add one flow; return sequences emitted by it (timed flushes first)."""
        out: list[FlowSequence] = []
        ts = fv.timestamp_us
        self.clock_us = max(self.clock_us, ts)
        if self.tau_us is not None:
            if self.window_start_us is None:
                self.window_start_us = ts
            while self.clock_us - self.window_start_us >= self.tau_us:
                self.window_start_us += self.tau_us
                self.flush_times.append(self.window_start_us)
                out.extend(self.flush(self.window_start_us))
        key = SequenceKey.of(fv)
        buf = self.buffers.setdefault(key, [])
        buf.append(fv)
        if len(buf) == self.alpha:
            del self.buffers[key]
            out.append(FlowSequence.from_flows(key, buf, self.alpha, self.clock_us))
        return out

    def flush(self, at_us: Optional[int] = None) -> list[FlowSequence]:
        at = self.clock_us if at_us is None else at_us
        out = [FlowSequence.from_flows(k, buf, self.alpha, at)
               for k, buf in self.buffers.items() if buf]
        self.buffers.clear()
        return out


def push_flow(table: ConnectionTable, fv: FeatureVector) -> list[FlowSequence]:
    return table.push(fv)


def flush(table: ConnectionTable) -> list[FlowSequence]:
    return table.flush()


def generate_sequences(flows: Iterable[FeatureVector], alpha: int = DEFAULT_ALPHA,
                       tau_s: Optional[float] = DEFAULT_TAU_S) -> list[FlowSequence]:
    """Replay flows (in the given order) and return every emitted sequence."""
    table = ConnectionTable(alpha, tau_s)
    out: list[FlowSequence] = []
    for fv in flows:
        out.extend(table.push(fv))
    out.extend(table.flush())
    return out


# ---------------------------------------------------------------------------
# JSON-lines dump

def sequence_to_record(seq: FlowSequence, matrix: Optional[np.ndarray] = None) -> dict:
    rec = {
        "version": SEQUENCE_FORMAT_VERSION,
        "key": {"src_ip": seq.key.src_ip, "dst_ip": seq.key.dst_ip,
                "protocol": seq.key.protocol.name},
        "alpha": seq.alpha,
        "emitted_at_us": seq.emitted_at_us,
        "flow_ids": seq.flow_ids,
        "labels": seq.labels,
        "pad_mask": [bool(b) for b in seq.pad_mask],
        "stats": seq.stats.tolist(),
    }
    if matrix is not None:
        rec["matrix"] = np.asarray(matrix).tolist()
    return rec


def sequence_from_record(rec: dict) -> FlowSequence:
    if rec.get("version") != SEQUENCE_FORMAT_VERSION:
        raise ValueError(f"unsupported sequence record version {rec.get('version')}")
    k = rec["key"]
    return FlowSequence(SequenceKey(k["src_ip"], k["dst_ip"], Protocol[k["protocol"]]),
                        np.array(rec["stats"], dtype=np.float64),
                        np.array(rec["pad_mask"], dtype=bool),
                        list(rec["flow_ids"]), list(rec["labels"]), int(rec["emitted_at_us"]))


def write_sequences(seqs: Iterable[FlowSequence], path: str | os.PathLike,
                    matrices: Optional[Iterable[np.ndarray]] = None) -> int:
    n = 0
    mats = iter(matrices) if matrices is not None else None
    with open(path, "w", encoding="utf-8") as fh:
        for seq in seqs:
            m = next(mats) if mats is not None else None
            fh.write(json.dumps(sequence_to_record(seq, m)))
            fh.write("\n")
            n += 1
    return n


def read_sequences(path: str | os.PathLike) -> Iterator[FlowSequence]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield sequence_from_record(json.loads(line))
