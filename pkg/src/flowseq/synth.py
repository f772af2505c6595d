"""Deterministic labeled traffic for desk-scale experiments.

Benign traffic mixes web page loads, API polling, DNS, NTP, interactive
SSH and FTP sessions from a pool of internal clients. Malicious traffic
comes in episodes, each covered by one :class:`LabelRule`:

* HTTP floods: many short single-request connections with a constant
  request/response size per tool;
* slow-rate DoS: long connections dribbling partial headers;
* port scans: SYN probes over many ports (1 to 3 packets per flow);
* FTP/SSH credential guessing: repeated near-identical login exchanges;
* bot beacons: periodic small HTTP posts from an infected host.

Episodes are spread over the whole timeline so a time-ordered split
leaves every behavior on both sides.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

from .augment import segment, single_exchange_packets
from .dataset import LabelRule
from .flows.packets import PacketRecord, Protocol, TCPFlag
from .rng import substream

_ACK, _SYN, _FIN, _PSH, _RST = TCPFlag.ACK, TCPFlag.SYN, TCPFlag.FIN, TCPFlag.PSH, TCPFlag.RST
TCP_HDR = 40
UDP_HDR = 28
MS = 1000
S = 1_000_000

WEB_SERVERS = ("10.0.0.10", "10.0.0.11")
API_SERVER = "10.0.0.12"
DNS_SERVER = "10.0.0.53"
NTP_SERVER = "10.0.0.123"
SSH_SERVER = "10.0.0.22"
FTP_SERVER = "10.0.0.21"
C2_SERVER = "198.51.100.200"

DEFAULT_DOS_PAYLOADS = {
    "dos_hulk": (180, 620),
    "dos_goldeneye": (230, 540),
    "dos_loic_http": (150, 700),
    "ddos_hoic": (260, 480),
    "ddos_loic_http": (200, 660),
}
CROSS_DOS_PAYLOADS = {
    "dos_hulk": (340, 5200),
    "dos_goldeneye": (310, 7400),
    "dos_loic_http": (280, 4100),
    "ddos_hoic": (360, 9800),
    "ddos_loic_http": (320, 6300),
}


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 0
    duration_s: float = 7200.0
    n_clients: int = 40
    # benign flow counts
    web: int = 5400
    api: int = 3000
    dns: int = 1800
    ntp: int = 600
    ssh: int = 600
    ftp: int = 600
    # malicious flow counts
    dos: int = 4000
    dos_episodes: int = 10
    slowloris: int = 200
    portscan: int = 2000
    bruteforce: int = 1200
    bot: int = 600
    dos_payloads: tuple[tuple[str, int, int], ...] = tuple(
        (k, a, b) for k, (a, b) in DEFAULT_DOS_PAYLOADS.items())
    latency_scale: float = 1.0          # benign server latency / RTT multiplier

    def __post_init__(self):
        if self.n_clients < 1:
            raise ValueError("need at least one client host")
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")
        if min(self.web, self.api, self.dns, self.ntp, self.ssh, self.ftp, self.dos,
               self.slowloris, self.portscan, self.bruteforce, self.bot) < 0:
            raise ValueError("flow counts must be non-negative")
        if self.dos and (self.dos_episodes < 1 or not self.dos_payloads):
            raise ValueError("DoS flows need at least one episode and one tool")

    @property
    def total_flows(self) -> int:
        return (self.web + self.api + self.dns + self.ntp + self.ssh + self.ftp + self.dos
                + self.slowloris + self.portscan + self.bruteforce + self.bot)


PRESETS = {
    "default": ScenarioSpec(),
    "cross-domain": ScenarioSpec(
        seed=1, latency_scale=1.3,
        dos_payloads=tuple((k, a, b) for k, (a, b) in CROSS_DOS_PAYLOADS.items())),
    "small": ScenarioSpec(duration_s=900, n_clients=10, web=300, api=150, dns=100, ntp=30,
                          ssh=20, ftp=20, dos=200, dos_episodes=2, slowloris=20, portscan=100,
                          bruteforce=60, bot=30),
}


def preset(name: str, **overrides) -> ScenarioSpec:
    try:
        base = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(base, **overrides) if overrides else base


@dataclass
class SynthCorpus:
    packets: list[PacketRecord]
    rules: list[LabelRule]
    flow_counts: dict[str, int]          # specific label -> generated flows
    spec: ScenarioSpec


# ---------------------------------------------------------------------------
# packet building

class _Ports:
    def __init__(self):
        self._next: dict[str, int] = {}

    def take(self, host: str) -> int:
        p = self._next.get(host, 32768)
        self._next[host] = 32768 if p >= 60999 else p + 1
        return p


def _us(x: float) -> int:
    return max(1, int(round(x)))


class _Conv:
    """Hand-built TCP conversation between a client and a server."""

    def __init__(self, client: str, server: str, cport: int, sport: int, t0: int,
                 window: int = 64240):
        self.c, self.s, self.cp, self.sp = client, server, cport, sport
        self.t = t0
        self.window = window
        self.pkts: list[PacketRecord] = []

    def send(self, from_client: bool, flags: int, payload: int, gap_us: float) -> None:
        if self.pkts:
            self.t += _us(gap_us)
        if from_client:
            p = PacketRecord(self.t, self.c, self.s, self.cp, self.sp, Protocol.TCP,
                             int(flags), TCP_HDR, int(payload), self.window)
        else:
            p = PacketRecord(self.t, self.s, self.c, self.sp, self.cp, Protocol.TCP,
                             int(flags), TCP_HDR, int(payload), self.window)
        self.pkts.append(p)

    def open(self, rtt: float) -> None:
        self.send(True, _SYN, 0, 0)
        self.send(False, _SYN | _ACK, 0, rtt)
        self.send(True, _ACK, 0, rtt * 0.05)

    def data(self, from_client: bool, n_bytes: int, first_gap: float, rng) -> None:
        segs = segment(n_bytes)
        for i, n in enumerate(segs):
            flags = _ACK | (_PSH if i == len(segs) - 1 else 0)
            self.send(from_client, flags, n, first_gap if i == 0 else rng.uniform(20, 300))

    def close(self, rtt: float, delay: float, client_first: bool = True) -> None:
        a = client_first
        self.send(a, _FIN | _ACK, 0, delay)
        self.send(not a, _ACK, 0, rtt / 2)
        self.send(not a, _FIN | _ACK, 0, 200)
        self.send(a, _ACK, 0, rtt / 2)


def _exchange_gaps(n_req: int, n_resp: int, rtt: float, latency: float, close_delay: float,
                   rng: np.random.Generator) -> list[int]:
    """Gap list matching :func:`single_exchange_packets` packet order."""
    gaps = [rtt, rng.uniform(50, 300)]
    gaps += [rng.uniform(50, 500)] + [rng.uniform(10, 100) for _ in range(n_req - 1)]
    gaps += [latency] + [rng.uniform(20, 300) for _ in range(n_resp - 1)]
    gaps += [rtt / 2, close_delay, rtt / 2, rng.uniform(50, 1000), rtt / 2]
    return [_us(g) for g in gaps]


def _exchange(client: str, server: str, cport: int, sport: int, t0: int, req: int, resp: int,
              rtt: float, latency: float, close_delay: float, rng) -> list[PacketRecord]:
    gaps = _exchange_gaps(len(segment(req)), len(segment(resp)), rtt, latency, close_delay, rng)
    return single_exchange_packets(req, resp, src_ip=client, dst_ip=server, src_port=cport,
                                   dst_port=sport, start_us=t0, gap_us=gaps)


def _udp_pair(client: str, server: str, cport: int, sport: int, t0: int, q: int, r: int,
              gap: float) -> list[PacketRecord]:
    return [PacketRecord(t0, client, server, cport, sport, Protocol.UDP, 0, UDP_HDR, q),
            PacketRecord(t0 + _us(gap), server, client, sport, cport, Protocol.UDP, 0, UDP_HDR, r)]


# ---------------------------------------------------------------------------
# generator

class _Builder:
    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        self.rng = substream(spec.seed, "synth")
        self.ports = _Ports()
        self.flows: list[tuple[int, int, list[PacketRecord]]] = []   # (start, order, pkts)
        self.rules: list[LabelRule] = []
        self.counts: dict[str, int] = {}
        self.horizon = int(spec.duration_s * S)
        self.clients = [f"10.0.1.{i + 10}" for i in range(spec.n_clients)]
        self._attacker_seq = 0

    # helpers
    def emit(self, label: str, pkts: list[PacketRecord]) -> None:
        self.flows.append((pkts[0].timestamp_us, len(self.flows), pkts))
        self.counts[label] = self.counts.get(label, 0) + 1

    def attacker(self) -> str:
        self._attacker_seq += 1
        return f"203.0.113.{self._attacker_seq}"

    def rtt(self) -> float:
        return self.rng.uniform(1 * MS, 5 * MS) * self.spec.latency_scale

    def latency(self) -> float:
        return self.rng.uniform(5 * MS, 60 * MS) * self.spec.latency_scale

    def rule(self, name: str, attackers, victims, start: int, end: int) -> None:
        self.rules.append(LabelRule(frozenset(attackers), frozenset(victims), start, end + 1, name))

    def client_starts(self, n: int) -> Iterator[tuple[str, int]]:
        """n (client, start time) pairs, uniform over the timeline."""
        times = np.sort(self.rng.uniform(0, self.horizon * 0.995, size=n)).astype(np.int64)
        for t in times:
            yield self.clients[int(self.rng.integers(len(self.clients)))], int(t)

    # benign ----------------------------------------------------------------
    def web(self) -> None:
        left = self.spec.web
        while left > 0:
            client = self.clients[int(self.rng.integers(len(self.clients)))]
            server = WEB_SERVERS[int(self.rng.integers(len(WEB_SERVERS)))]
            t = int(self.rng.uniform(0, self.horizon * 0.99))
            burst = min(left, int(self.rng.integers(4, 15)))
            for _ in range(burst):
                small = self.rng.random() < 0.4
                req = int(self.rng.integers(450, 1201))
                resp = (int(self.rng.integers(100, 1401)) if small
                        else int(np.exp(self.rng.uniform(np.log(16000), np.log(64000)))))
                pk = _exchange(client, server, self.ports.take(client), 80, t, req, resp,
                               self.rtt(), self.latency(), self.rng.uniform(0.1 * MS, 5 * MS),
                               self.rng)
                self.emit("benign", pk)
                t += _us(self.rng.exponential(150 * MS))
            left -= burst

    def api(self) -> None:
        for client, t in self.client_starts(self.spec.api):
            req = int(self.rng.integers(100, 401))
            resp = int(self.rng.integers(100, 15001))
            pk = _exchange(client, API_SERVER, self.ports.take(client), 8443, t, req, resp,
                           self.rtt(), self.latency(), self.rng.uniform(2 * S, 4 * S), self.rng)
            self.emit("benign", pk)

    def dns(self) -> None:
        for client, t in self.client_starts(self.spec.dns):
            self.emit("benign", _udp_pair(client, DNS_SERVER, self.ports.take(client), 53, t,
                                          int(self.rng.integers(30, 61)),
                                          int(self.rng.integers(60, 301)),
                                          self.rng.uniform(0.5 * MS, 20 * MS) * self.spec.latency_scale))

    def ntp(self) -> None:
        for client, t in self.client_starts(self.spec.ntp):
            self.emit("benign", _udp_pair(client, NTP_SERVER, self.ports.take(client), 123, t,
                                          48, 48, self.rng.uniform(1 * MS, 30 * MS)))

    def ssh(self) -> None:
        for client, t in self.client_starts(self.spec.ssh):
            cv = _Conv(client, SSH_SERVER, self.ports.take(client), 22, t)
            rtt = self.rtt()
            cv.open(rtt)
            self._ssh_preamble(cv, rtt)
            cv.send(True, _ACK | _PSH, int(self.rng.integers(80, 160)), self.rng.uniform(0.2 * S, 2 * S))
            cv.send(False, _ACK | _PSH, int(self.rng.integers(40, 80)), self.rng.uniform(50 * MS, 200 * MS))
            for _ in range(int(self.rng.integers(10, 80))):
                cv.send(True, _ACK | _PSH, int(self.rng.choice([36, 52, 68, 100])),
                        self.rng.uniform(0.1 * S, 3 * S))
                cv.send(False, _ACK | _PSH, int(self.rng.integers(36, 600)), rtt)
            cv.close(rtt, self.rng.uniform(0.5 * S, 3 * S))
            self.emit("benign", cv.pkts)

    def _ssh_preamble(self, cv: _Conv, rtt: float) -> None:
        cv.send(False, _ACK | _PSH, int(self.rng.integers(21, 41)), rtt)
        cv.send(True, _ACK | _PSH, int(self.rng.integers(21, 41)), 300)
        cv.send(True, _ACK | _PSH, int(self.rng.integers(1000, 1460)), 200)
        cv.send(False, _ACK | _PSH, int(self.rng.integers(700, 1100)), rtt)
        cv.send(True, _ACK | _PSH, int(self.rng.integers(40, 60)), 2 * MS)
        cv.send(False, _ACK | _PSH, int(self.rng.integers(400, 600)), self.latency())

    def ftp(self) -> None:
        for client, t in self.client_starts(self.spec.ftp):
            cv = _Conv(client, FTP_SERVER, self.ports.take(client), 21, t)
            rtt = self.rtt()
            cv.open(rtt)
            cv.send(False, _ACK | _PSH, int(self.rng.integers(30, 61)), self.latency())
            cv.send(True, _ACK | _PSH, int(self.rng.integers(10, 21)), self.rng.uniform(0.5 * S, 2 * S))
            cv.send(False, _ACK | _PSH, 34, rtt)
            cv.send(True, _ACK | _PSH, int(self.rng.integers(12, 25)), self.rng.uniform(1 * S, 3 * S))
            cv.send(False, _ACK | _PSH, 23, self.latency())
            for _ in range(int(self.rng.integers(2, 8))):
                cv.send(True, _ACK | _PSH, int(self.rng.integers(6, 40)), self.rng.uniform(0.5 * S, 5 * S))
                cv.data(False, int(self.rng.integers(30, 3000)), self.latency(), self.rng)
            cv.close(rtt, self.rng.uniform(0.2 * S, 2 * S))
            self.emit("benign", cv.pkts)

    # malicious -------------------------------------------------------------
    def _episode_starts(self, n: int, lo: float = 0.03, hi: float = 0.95) -> list[int]:
        fr = np.linspace(lo, hi, n) if n > 1 else np.array([lo])
        jitter = self.rng.uniform(-0.01, 0.01, size=n)
        return [int(np.clip(f + j, 0, 0.97) * self.horizon) for f, j in zip(fr, jitter)]

    def dos(self) -> None:
        n, eps = self.spec.dos, self.spec.dos_episodes
        tools = list(self.spec.dos_payloads)
        sizes = [n // eps + (1 if i < n % eps else 0) for i in range(eps)]
        victim = WEB_SERVERS[0]
        for e, (t, size) in enumerate(zip(self._episode_starts(eps), sizes)):
            name, req, resp = tools[e % len(tools)]
            attackers = [self.attacker() for _ in range(3 if name.startswith("ddos") else 1)]
            start = t
            for k in range(size):
                a = attackers[k % len(attackers)]
                pk = _exchange(a, victim, self.ports.take(a), 80, t, req, resp,
                               self.rng.uniform(1 * MS, 5 * MS), self.rng.uniform(5 * MS, 60 * MS),
                               self.rng.uniform(0.1 * MS, 5 * MS), self.rng)
                self.emit(name, pk)
                t += _us(self.rng.uniform(20 * MS, 120 * MS))
            self.rule(name, attackers, [victim], start, t)

    def slowloris(self) -> None:
        n = self.spec.slowloris
        eps = 2 if n >= 2 else n
        victim = WEB_SERVERS[1]
        for e, t in enumerate(self._episode_starts(eps, 0.2, 0.8)):
            size = n // eps + (1 if e < n % eps else 0)
            a = self.attacker()
            start = t
            for _ in range(size):
                cv = _Conv(a, victim, self.ports.take(a), 80, t)
                rtt = self.rng.uniform(1 * MS, 5 * MS)
                cv.open(rtt)
                cv.send(True, _ACK | _PSH, int(self.rng.integers(200, 260)), 300)
                cv.send(False, _ACK, 0, rtt / 2)
                for _ in range(int(self.rng.integers(4, 9))):
                    cv.send(True, _ACK | _PSH, int(self.rng.integers(10, 30)), self.rng.uniform(1 * S, 3 * S))
                    cv.send(False, _ACK, 0, rtt / 2)
                cv.send(True, _RST | _ACK, 0, self.rng.uniform(1 * S, 3 * S))
                self.emit("dos_slowloris", cv.pkts)
                t += _us(self.rng.uniform(50 * MS, 300 * MS))
            self.rule("dos_slowloris", [a], [victim], start, t)

    def portscan(self) -> None:
        n = self.spec.portscan
        eps = min(4, n) if n else 0
        open_ports = {21, 22, 80, 443}
        for e, t in enumerate(self._episode_starts(eps, 0.1, 0.85)):
            size = n // eps + (1 if e < n % eps else 0)
            a = self.attacker()
            victim = self.clients[int(self.rng.integers(len(self.clients)))]
            sport = int(self.rng.integers(40000, 60000))
            ports = self.rng.permutation(np.arange(1, 1025))[:size] if size <= 1024 else \
                self.rng.integers(1, 65536, size=size)
            start = t
            for port in ports:
                port = int(port)
                cv = _Conv(a, victim, sport, port, t, window=1024)
                cv.send(True, _SYN, 0, 0)
                r = self.rng.random()
                if port in open_ports:
                    cv.send(False, _SYN | _ACK, 0, self.rng.uniform(0.2 * MS, 2 * MS))
                    cv.send(True, _RST, 0, self.rng.uniform(20, 200))
                elif r < 0.85:
                    cv.send(False, _RST | _ACK, 0, self.rng.uniform(0.2 * MS, 2 * MS))
                self.emit("portscan", cv.pkts)
                t += _us(self.rng.uniform(5 * MS, 20 * MS))
            self.rule("portscan", [a], [victim], start, t)

    def bruteforce(self) -> None:
        n = self.spec.bruteforce
        eps = min(4, n) if n else 0
        for e, t in enumerate(self._episode_starts(eps, 0.15, 0.9)):
            size = n // eps + (1 if e < n % eps else 0)
            kind = "ftp_bruteforce" if e % 2 == 0 else "ssh_bruteforce"
            server = FTP_SERVER if kind == "ftp_bruteforce" else SSH_SERVER
            a = self.attacker()
            start = t
            for _ in range(size):
                cv = _Conv(a, server, self.ports.take(a), 21 if kind == "ftp_bruteforce" else 22, t)
                rtt = self.rng.uniform(1 * MS, 5 * MS)
                cv.open(rtt)
                if kind == "ftp_bruteforce":
                    cv.send(False, _ACK | _PSH, 42, self.rng.uniform(5 * MS, 60 * MS))
                    for _ in range(3):
                        cv.send(True, _ACK | _PSH, int(self.rng.integers(12, 16)), self.rng.uniform(0.5 * MS, 3 * MS))
                        cv.send(False, _ACK | _PSH, 34, rtt)
                        cv.send(True, _ACK | _PSH, int(self.rng.integers(13, 19)), self.rng.uniform(0.5 * MS, 3 * MS))
                        cv.send(False, _ACK | _PSH, 22, self.rng.uniform(0.3 * S, 0.8 * S))
                else:
                    self._ssh_preamble(cv, rtt)
                    for _ in range(3):
                        cv.send(True, _ACK | _PSH, int(self.rng.integers(100, 120)), self.rng.uniform(0.5 * MS, 3 * MS))
                        cv.send(False, _ACK | _PSH, 52, self.rng.uniform(0.3 * S, 0.8 * S))
                cv.close(rtt, self.rng.uniform(0.5 * MS, 3 * MS))
                self.emit(kind, cv.pkts)
                t = cv.t + _us(self.rng.uniform(50 * MS, 400 * MS))
            self.rule(kind, [a], [server], start, t)

    def bot(self) -> None:
        n = self.spec.bot
        hosts = min(3, n) if n else 0
        for h in range(hosts):
            size = n // hosts + (1 if h < n % hosts else 0)
            victim = self.clients[(7 * h + 3) % len(self.clients)]
            lo, hi = h / hosts * self.horizon, (h + 1) / hosts * self.horizon * 0.99
            period = (hi - lo) / max(size, 1)
            t = int(lo + self.rng.uniform(0, period))
            start = t
            for _ in range(size):
                pk = _exchange(victim, C2_SERVER, self.ports.take(victim), 8080, t,
                               int(self.rng.integers(220, 241)), int(self.rng.integers(100, 131)),
                               self.rng.uniform(20 * MS, 40 * MS), self.rng.uniform(50 * MS, 150 * MS),
                               self.rng.uniform(0.1 * MS, 2 * MS), self.rng)
                self.emit("bot", pk)
                t += _us(period * self.rng.uniform(0.9, 1.1))
            self.rule("bot", [C2_SERVER], [victim], start, t)

    def build(self) -> SynthCorpus:
        for part in (self.web, self.api, self.dns, self.ntp, self.ssh, self.ftp,
                     self.dos, self.slowloris, self.portscan, self.bruteforce, self.bot):
            part()
        streams = [((p.timestamp_us, order, i), p) for start, order, pkts in self.flows
                   for i, p in enumerate(pkts)]
        streams.sort(key=lambda x: x[0])
        return SynthCorpus([p for _, p in streams], self.rules, dict(self.counts), self.spec)


def generate(spec: ScenarioSpec) -> SynthCorpus:
    return _Builder(spec).build()
