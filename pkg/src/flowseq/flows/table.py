"""Bidirectional flow aggregation.

A TCP flow ends when its four-way teardown completes (FIN, ACK, FIN, ACK
across the two sides, in either interleaving), when either side sends RST,
or when it has been idle longer than the flow timeout. A FIN on its own
never ends a flow. UDP and other protocols end only by timeout.

Packets are consumed in file order; nothing is re-sorted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Optional

from .packets import PacketRecord, Protocol, TCPFlag

DEFAULT_FLOW_TIMEOUT_US = 30_000_000
_SWEEP_INTERVAL_US = 1_000_000


@dataclass(frozen=True, slots=True)
class FlowKey:
    """5-tuple oriented by the packet that opened the flow."""

    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: Protocol

    @classmethod
    def of(cls, pkt: PacketRecord) -> "FlowKey":
        return cls(pkt.src_ip, pkt.dst_ip, pkt.src_port, pkt.dst_port, pkt.protocol)

    def reversed(self) -> "FlowKey":
        return FlowKey(self.dst_ip, self.src_ip, self.dst_port, self.src_port, self.protocol)

    def is_forward(self, pkt: PacketRecord) -> bool:
        return pkt.src_ip == self.src_ip and pkt.src_port == self.src_port


class TCPPhase(Enum):
    OPEN = 0
    FIN_WAIT_1 = 1      # one side has sent FIN
    FIN_WAIT_2 = 2      # first FIN acknowledged
    CLOSING = 3         # both FINs seen, waiting for the last ACK
    CLOSED = 4


@dataclass
class FlowState:
    key: FlowKey
    packets: list[PacketRecord] = field(default_factory=list)
    forward: list[bool] = field(default_factory=list)
    tcp_phase: TCPPhase = TCPPhase.OPEN
    first_fin_forward: Optional[bool] = None
    last_seen_us: int = 0
    end_reason: Optional[str] = None     # "fin", "rst", "timeout", "eof"

    @property
    def start_us(self) -> int:
        return self.packets[0].timestamp_us

    @property
    def fwd_packets(self) -> list[PacketRecord]:
        return [p for p, f in zip(self.packets, self.forward) if f]

    @property
    def bwd_packets(self) -> list[PacketRecord]:
        return [p for p, f in zip(self.packets, self.forward) if not f]

    @property
    def complete(self) -> bool:
        return self.end_reason is not None

    def add(self, pkt: PacketRecord) -> None:
        fwd = self.key.is_forward(pkt)
        self.packets.append(pkt)
        self.forward.append(fwd)
        self.last_seen_us = pkt.timestamp_us
        if self.key.protocol is Protocol.TCP:
            self._advance_tcp(pkt, fwd)

    def _advance_tcp(self, pkt: PacketRecord, fwd: bool) -> None:
        if pkt.has(TCPFlag.RST):
            self.tcp_phase = TCPPhase.CLOSED
            self.end_reason = "rst"
            return
        fin, ack = pkt.has(TCPFlag.FIN), pkt.has(TCPFlag.ACK)
        phase = self.tcp_phase
        if phase is TCPPhase.OPEN:
            if fin:
                self.tcp_phase = TCPPhase.FIN_WAIT_1
                self.first_fin_forward = fwd
        elif phase is TCPPhase.FIN_WAIT_1:
            if fwd != self.first_fin_forward:
                if fin:
                    self.tcp_phase = TCPPhase.CLOSING
                elif ack:
                    self.tcp_phase = TCPPhase.FIN_WAIT_2
        elif phase is TCPPhase.FIN_WAIT_2:
            if fin and fwd != self.first_fin_forward:
                self.tcp_phase = TCPPhase.CLOSING
        elif phase is TCPPhase.CLOSING:
            # last ACK comes from the side that sent the first FIN
            if ack and not fin and fwd == self.first_fin_forward:
                self.tcp_phase = TCPPhase.CLOSED
                self.end_reason = "fin"


class FlowTable:
    """Active-flow table; feed packets with :meth:`ingest`.

    ``flow_timeout_us`` is an idle timeout measured against the stream
    clock (the latest packet timestamp seen).
    """

    def __init__(self, flow_timeout_us: int = DEFAULT_FLOW_TIMEOUT_US):
        self.flow_timeout_us = flow_timeout_us
        self.active: dict[FlowKey, FlowState] = {}
        self.clock_us = 0
        self._next_sweep_us: Optional[int] = None

    def __len__(self) -> int:
        return len(self.active)

    def _lookup(self, pkt: PacketRecord) -> Optional[FlowState]:
        key = FlowKey.of(pkt)
        flow = self.active.get(key)
        if flow is None:
            flow = self.active.get(key.reversed())
        return flow

    def ingest(self, pkt: PacketRecord) -> list[FlowState]:
        """Absorb one packet; return flows completed as a consequence."""
        done: list[FlowState] = []
        self.clock_us = max(self.clock_us, pkt.timestamp_us)
        if self._next_sweep_us is None:
            self._next_sweep_us = self.clock_us + _SWEEP_INTERVAL_US
        elif self.clock_us >= self._next_sweep_us:
            done.extend(self._sweep())
            self._next_sweep_us = self.clock_us + _SWEEP_INTERVAL_US

        flow = self._lookup(pkt)
        if flow is not None and pkt.timestamp_us - flow.last_seen_us > self.flow_timeout_us:
            flow.end_reason = "timeout"
            del self.active[flow.key]
            done.append(flow)
            flow = None
        if flow is None:
            flow = FlowState(FlowKey.of(pkt))
            self.active[flow.key] = flow
        flow.add(pkt)
        if flow.tcp_phase is TCPPhase.CLOSED:
            del self.active[flow.key]
            done.append(flow)
        return done

    def _sweep(self) -> list[FlowState]:
        expired = [f for f in self.active.values()
                   if self.clock_us - f.last_seen_us > self.flow_timeout_us]
        for f in expired:
            f.end_reason = "timeout"
            del self.active[f.key]
        return expired

    def flush(self) -> list[FlowState]:
        """End of input: every remaining flow is treated as timed out."""
        rest = list(self.active.values())
        for f in rest:
            f.end_reason = "eof"
        self.active.clear()
        return rest


def ingest_packet(table: FlowTable, pkt: PacketRecord) -> list[FlowState]:
    return table.ingest(pkt)


def iter_flows(packets: Iterable[PacketRecord],
               flow_timeout_us: int = DEFAULT_FLOW_TIMEOUT_US) -> Iterator[FlowState]:
    """Completed flows in completion order, then the end-of-input remainder."""
    table = FlowTable(flow_timeout_us)
    for pkt in packets:
        yield from table.ingest(pkt)
    yield from table.flush()


def aggregate(packets: Iterable[PacketRecord],
              flow_timeout_us: int = DEFAULT_FLOW_TIMEOUT_US) -> list[FlowState]:
    """All flows of a packet stream, ordered by start time."""
    flows = list(iter_flows(packets, flow_timeout_us))
    flows.sort(key=lambda f: (f.start_us, f.key.src_ip, f.key.src_port))
    return flows
