"""Packet and flow builders shared by the test modules."""

from __future__ import annotations

import numpy as np

from flowseq.flows import FeatureVector, PacketRecord, Protocol, TCPFlag
from flowseq.flows.features import N_STATS, STAT_INDEX

S, SA, A, PA, FA, R, RA = (TCPFlag.SYN, TCPFlag.SYN | TCPFlag.ACK, TCPFlag.ACK,
                           TCPFlag.PSH | TCPFlag.ACK, TCPFlag.FIN | TCPFlag.ACK,
                           TCPFlag.RST, TCPFlag.RST | TCPFlag.ACK)


def pkt(t, src, dst, sport, dport, flags=0, payload=0, proto=Protocol.TCP, win=0, hdr=None):
    if hdr is None:
        hdr = 40 if proto is Protocol.TCP else 28 if proto is Protocol.UDP else 20
    return PacketRecord(int(t), src, dst, sport, dport, proto, int(flags), hdr, payload, win)


def tcp_session(t0, cli, srv, cport, sport, payloads=((100, 200),), step=1000, close=True):
    """Handshake, request/response pairs, optional four-way close."""
    c, s = (cli, srv, cport, sport), (srv, cli, sport, cport)
    out = []
    t = t0

    def emit(side, flags, n=0):
        nonlocal t
        out.append(pkt(t, *side, flags=flags, payload=n, win=64240 if side is c else 65160))
        t += step

    emit(c, S)
    emit(s, SA)
    emit(c, A)
    for req, resp in payloads:
        emit(c, PA, req)
        emit(s, PA, resp)
    if close:
        emit(c, FA)
        emit(s, A)
        emit(s, FA)
        emit(c, A)
    return out


def random_flow_packets(rng: np.random.Generator, n: int, t0: int = 1_000_000):
    """An open-ended packet train with random directions, gaps, sizes and flags.

    No FIN/RST, so the flow only ends at end-of-input; gaps occasionally
    exceed the 5 s activity threshold.
    """
    cli, srv = ("10.1.0.5", 40000), ("10.2.0.9", 443)
    t = t0
    out = []
    flag_pool = [0, TCPFlag.ACK, PA, TCPFlag.URG | TCPFlag.ACK, TCPFlag.ECE, TCPFlag.CWR | TCPFlag.ACK]
    for i in range(n):
        fwd = i == 0 or rng.random() < 0.55
        src, dst = (cli, srv) if fwd else (srv, cli)
        flags = TCPFlag.SYN if i == 0 else flag_pool[rng.integers(len(flag_pool))]
        out.append(PacketRecord(t, src[0], dst[0], src[1], dst[1], Protocol.TCP, int(flags),
                                int(rng.choice([20, 32, 40, 52])) + 20,
                                int(rng.integers(0, 1500)), int(rng.integers(0, 65536))))
        gap = rng.exponential(50_000) if rng.random() > 0.05 else rng.uniform(5.5e6, 9e6)
        t += int(gap) + 1
    return out


def fv(ts_us, src="10.0.0.1", dst="10.0.0.2", proto=Protocol.TCP, label="benign", fid=None,
       stats=None):
    if stats is None:
        stats = np.zeros(N_STATS)
    stats = np.array(stats, dtype=float)
    stats[STAT_INDEX["protocol"]] = int(proto)
    return FeatureVector(fid or f"{src}-{dst}-{ts_us}", src, dst, 1000, 80, int(ts_us), stats, label)
