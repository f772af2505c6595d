"""Slow-down evasion: stretch attacker-side packet gaps by a fixed multiplier."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .dataset import LabelRule, find_rule
from .evaluation import percentage_error_f1
from .flows.packets import PacketRecord
from .flows.table import FlowState, iter_flows

MULTIPLIERS = (1, 2, 4, 8)


def slow_down(packets: Sequence[PacketRecord], attacker_ip: str, m: float) -> list[PacketRecord]:
    """Retime one flow's packets.

    The gap before every packet sent by ``attacker_ip`` is multiplied by
    ``m`` (integer microseconds, rounded to nearest); the gap before every
    other packet is kept, so victim responses stay the same distance from
    what precedes them. Counts, sizes, flags and order are unchanged.
    """
    if m <= 0:
        raise ValueError("multiplier must be positive")
    if not packets:
        return []
    ips = {p.src_ip for p in packets} | {p.dst_ip for p in packets}
    if attacker_ip not in ips:
        raise ValueError(f"attacker {attacker_ip} does not take part in this flow")
    if m == 1:
        return list(packets)
    out = [packets[0]]
    t = packets[0].timestamp_us
    for prev, cur in zip(packets, packets[1:]):
        gap = cur.timestamp_us - prev.timestamp_us
        if cur.src_ip == attacker_ip:
            gap = int(round(gap * m))
        t += gap
        out.append(replace(cur, timestamp_us=t))
    return out


def attacker_of(flow: FlowState, rule: LabelRule) -> str:
    k = flow.key
    if k.src_ip in rule.attacker_ips:
        return k.src_ip
    if k.dst_ip in rule.attacker_ips:
        return k.dst_ip
    raise ValueError(f"cannot tell attacker for flow {k} under rule {rule.attack_name}")


@dataclass
class RetimeStats:
    flows: int = 0
    altered_flows: int = 0
    packets: int = 0


def slow_down_corpus(packets: Iterable[PacketRecord], rules: Sequence[LabelRule], m: float,
                     flow_timeout_us: int = 30_000_000) -> tuple[list[PacketRecord], RetimeStats]:
    """Retime every malicious flow of a packet stream; benign flows pass through.

    Flows are recovered with the flow table, then the stream is re-merged
    by timestamp (stable, so equal timestamps keep their original order).
    """
    stats = RetimeStats()
    packets = list(packets)
    arrival = {id(p): i for i, p in enumerate(packets)}
    tagged: list[tuple[int, int, PacketRecord]] = []
    for flow in iter_flows(packets, flow_timeout_us):
        stats.flows += 1
        rule = find_rule(rules, flow.key.src_ip, flow.key.dst_ip, flow.start_us)
        new = flow.packets
        if rule is not None and m != 1:
            new = slow_down(flow.packets, attacker_of(flow, rule), m)
            stats.altered_flows += 1
        for old, p in zip(flow.packets, new):
            tagged.append((p.timestamp_us, arrival[id(old)], p))
    tagged.sort(key=lambda t: (t[0], t[1]))   # ties keep original arrival order
    out = [p for _, _, p in tagged]
    stats.packets = len(out)
    return out, stats


@dataclass
class RobustnessResult:
    multipliers: tuple[int, ...]
    f1: np.ndarray        # [train i, test j]
    pe: np.ndarray        # percent; NaN marks an invalid cell


def robustness_matrix(multipliers: Sequence[int], train_fn: Callable[[int], object],
                      eval_fn: Callable[[object, int], float]) -> RobustnessResult:
    """Train on each variant, test on every variant, report PE per cell.

    ``train_fn(m)`` returns a model (or raises); ``eval_fn(model, m)``
    returns binarized F1 on variant m's test data.
    """
    n = len(multipliers)
    f1 = np.full((n, n), np.nan)
    pe = np.full((n, n), np.nan)
    for i, mi in enumerate(multipliers):
        try:
            model = train_fn(mi)
        except Exception:       # a failed cell is reported, not fatal
            continue
        for j, mj in enumerate(multipliers):
            f1[i, j] = eval_fn(model, mj)
        for j in range(n):
            if f1[i, i] > 0:
                pe[i, j] = 0.0 if i == j else percentage_error_f1(f1[i, j], f1[i, i])
    return RobustnessResult(tuple(multipliers), f1, pe)
