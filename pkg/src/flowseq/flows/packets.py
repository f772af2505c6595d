"""Packet records and capture I/O.

Reads classic pcap and pcapng files with the standard library only. Link
types handled: Ethernet (with 802.1Q/802.1ad tags), BSD loopback, raw IP
and Linux cooked capture. Only the IP/TCP/UDP header fields needed for
flow statistics are decoded; payload bytes are never inspected.
"""

from __future__ import annotations

import csv
import ipaddress
import logging
import os
import struct
from dataclasses import dataclass
from enum import IntEnum, IntFlag
from typing import Callable, Iterable, Iterator, Optional

log = logging.getLogger(__name__)


class Protocol(IntEnum):
    OTHER = 0
    TCP = 6
    UDP = 17

    @classmethod
    def from_ip_proto(cls, number: int) -> "Protocol":
        if number == 6:
            return cls.TCP
        if number == 17:
            return cls.UDP
        return cls.OTHER


class TCPFlag(IntFlag):
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10
    URG = 0x20
    ECE = 0x40
    CWR = 0x80


@dataclass(frozen=True, slots=True)
class PacketRecord:
    """One parsed packet. Sizes are in bytes, time in integer microseconds."""

    timestamp_us: int
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: Protocol
    tcp_flags: int = 0
    header_len_bytes: int = 0
    payload_len_bytes: int = 0
    tcp_window: int = 0

    def has(self, flag: TCPFlag) -> bool:
        return bool(self.tcp_flags & flag)


PACKET_CSV_COLUMNS = (
    "timestamp_us", "src_ip", "dst_ip", "src_port", "dst_port", "protocol",
    "tcp_flags", "header_len_bytes", "payload_len_bytes", "tcp_window",
)


# ---------------------------------------------------------------------------
# header decoding

_ETH_IPV4 = 0x0800
_ETH_IPV6 = 0x86DD
_ETH_VLAN = (0x8100, 0x88A8, 0x9100)

LINKTYPE_NULL = 0
LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_LINUX_SLL = 113
LINKTYPE_IPV4 = 228
LINKTYPE_IPV6 = 229


class NotIP(Exception):
    """Frame carries no IPv4/IPv6 packet."""


class Malformed(Exception):
    """Frame is truncated or inconsistent."""


def _network_layer(frame: bytes, linktype: int) -> tuple[int, bytes]:
    """Return (ip_version, ip_bytes) for a link-layer frame."""
    if linktype == LINKTYPE_ETHERNET:
        if len(frame) < 14:
            raise Malformed("short ethernet header")
        ethertype = struct.unpack_from("!H", frame, 12)[0]
        off = 14
        while ethertype in _ETH_VLAN:
            if len(frame) < off + 4:
                raise Malformed("short vlan tag")
            ethertype = struct.unpack_from("!H", frame, off + 2)[0]
            off += 4
        if ethertype == _ETH_IPV4:
            return 4, frame[off:]
        if ethertype == _ETH_IPV6:
            return 6, frame[off:]
        raise NotIP(hex(ethertype))
    if linktype == LINKTYPE_LINUX_SLL:
        if len(frame) < 16:
            raise Malformed("short sll header")
        ethertype = struct.unpack_from("!H", frame, 14)[0]
        if ethertype == _ETH_IPV4:
            return 4, frame[16:]
        if ethertype == _ETH_IPV6:
            return 6, frame[16:]
        raise NotIP(hex(ethertype))
    if linktype == LINKTYPE_NULL:
        if len(frame) < 4:
            raise Malformed("short loopback header")
        family = struct.unpack_from("<I", frame, 0)[0]
        if family > 0xFFFF:
            family = struct.unpack_from(">I", frame, 0)[0]
        if family == 2:
            return 4, frame[4:]
        if family in (24, 28, 30):
            return 6, frame[4:]
        raise NotIP(f"af {family}")
    if linktype in (LINKTYPE_RAW, LINKTYPE_IPV4, LINKTYPE_IPV6):
        if not frame:
            raise Malformed("empty raw frame")
        version = frame[0] >> 4
        if version in (4, 6):
            return version, frame
        raise NotIP(f"ip version {version}")
    raise NotIP(f"linktype {linktype}")


def decode_frame(frame: bytes, linktype: int, timestamp_us: int) -> PacketRecord:
    """Decode one captured frame. Raises NotIP or Malformed."""
    version, ip = _network_layer(frame, linktype)
    if version == 4:
        if len(ip) < 20:
            raise Malformed("short ipv4 header")
        ihl = (ip[0] & 0x0F) * 4
        total_len, = struct.unpack_from("!H", ip, 2)
        frag = struct.unpack_from("!H", ip, 6)[0] & 0x1FFF
        proto = ip[9]
        if ihl < 20 or total_len < ihl:
            raise Malformed("bad ipv4 lengths")
        src = str(ipaddress.IPv4Address(ip[12:16]))
        dst = str(ipaddress.IPv4Address(ip[16:20]))
        ip_hdr = ihl
        ip_payload_len = total_len - ihl
        transport = ip[ihl:total_len]
        if frag:
            # later fragments carry no transport header
            return PacketRecord(timestamp_us, src, dst, 0, 0, Protocol.OTHER, 0,
                                ip_hdr, ip_payload_len, 0)
    else:
        if len(ip) < 40:
            raise Malformed("short ipv6 header")
        payload_len, = struct.unpack_from("!H", ip, 4)
        proto = ip[6]
        src = str(ipaddress.IPv6Address(ip[8:24]))
        dst = str(ipaddress.IPv6Address(ip[24:40]))
        ip_hdr = 40
        ip_payload_len = payload_len
        transport = ip[40:40 + payload_len]

    protocol = Protocol.from_ip_proto(proto)
    if protocol is Protocol.TCP:
        if len(transport) < 20:
            raise Malformed("short tcp header")
        sport, dport = struct.unpack_from("!HH", transport, 0)
        data_off = (transport[12] >> 4) * 4
        flags = transport[13]
        window, = struct.unpack_from("!H", transport, 14)
        if data_off < 20 or data_off > ip_payload_len:
            raise Malformed("bad tcp data offset")
        return PacketRecord(timestamp_us, src, dst, sport, dport, protocol, flags,
                            ip_hdr + data_off, ip_payload_len - data_off, window)
    if protocol is Protocol.UDP:
        if len(transport) < 8:
            raise Malformed("short udp header")
        sport, dport = struct.unpack_from("!HH", transport, 0)
        if ip_payload_len < 8:
            raise Malformed("bad udp length")
        return PacketRecord(timestamp_us, src, dst, sport, dport, protocol, 0,
                            ip_hdr + 8, ip_payload_len - 8, 0)
    return PacketRecord(timestamp_us, src, dst, 0, 0, Protocol.OTHER, 0,
                        ip_hdr, ip_payload_len, 0)


# ---------------------------------------------------------------------------
# container formats

_PCAP_MAGICS = {
    b"\xd4\xc3\xb2\xa1": ("<", 1),
    b"\xa1\xb2\xc3\xd4": (">", 1),
    b"\x4d\x3c\xb2\xa1": ("<", 1000),   # nanosecond variant, divisor to us
    b"\xa1\xb2\x3c\x4d": (">", 1000),
}
_PCAPNG_SHB = 0x0A0D0D0A


class CaptureReader:
    """Iterate PacketRecords from a pcap/pcapng file.

    ``skipped`` counts non-IP frames, ``malformed`` counts frames that could
    not be decoded. Both are final once iteration finishes.
    """

    def __init__(self, path: str | os.PathLike,
                 predicate: Optional[Callable[[PacketRecord], bool]] = None):
        self.path = os.fspath(path)
        self.predicate = predicate
        self.skipped = 0
        self.malformed = 0
        self.emitted = 0
        with open(self.path, "rb") as fh:
            head = fh.read(4)
        if head in _PCAP_MAGICS:
            self._frames = self._pcap_frames
        elif len(head) == 4 and struct.unpack("<I", head)[0] == _PCAPNG_SHB:
            self._frames = self._pcapng_frames
        else:
            raise ValueError(f"{self.path}: not a pcap or pcapng capture")

    def __iter__(self) -> Iterator[PacketRecord]:
        for linktype, ts_us, frame in self._frames():
            try:
                pkt = decode_frame(frame, linktype, ts_us)
            except NotIP:
                self.skipped += 1
                continue
            except (Malformed, struct.error, ValueError):
                self.malformed += 1
                continue
            if self.predicate is not None and not self.predicate(pkt):
                continue
            self.emitted += 1
            yield pkt

    def _pcap_frames(self):
        with open(self.path, "rb") as fh:
            head = fh.read(24)
            if len(head) < 24:
                return
            endian, divisor = _PCAP_MAGICS[head[:4]]
            linktype = struct.unpack(endian + "I", head[20:24])[0] & 0x0FFFFFFF
            rec = struct.Struct(endian + "IIII")
            while True:
                hdr = fh.read(16)
                if len(hdr) < 16:
                    if hdr:
                        self.malformed += 1
                    return
                sec, frac, incl, _orig = rec.unpack(hdr)
                frame = fh.read(incl)
                if len(frame) < incl:
                    self.malformed += 1
                    return
                yield linktype, sec * 1_000_000 + frac // divisor, frame

    def _pcapng_frames(self):
        with open(self.path, "rb") as fh:
            data = fh.read()
        off = 0
        endian = "<"
        interfaces: list[tuple[int, int]] = []   # (linktype, ticks per second)
        while off + 12 <= len(data):
            btype = struct.unpack_from(endian + "I", data, off)[0]
            if btype == _PCAPNG_SHB:
                bom = data[off + 8:off + 12]
                endian = "<" if bom == b"\x4d\x3c\x2b\x1a" else ">"
                interfaces = []
            blen = struct.unpack_from(endian + "I", data, off + 4)[0]
            if blen < 12 or off + blen > len(data):
                self.malformed += 1
                return
            body = data[off + 8:off + blen - 4]
            if btype == 1:      # interface description
                linktype = struct.unpack_from(endian + "H", body, 0)[0]
                interfaces.append((linktype, _pcapng_tsresol(body[8:], endian)))
            elif btype == 6:    # enhanced packet
                iface, ts_hi, ts_lo, cap_len = struct.unpack_from(endian + "IIII", body, 0)
                if iface >= len(interfaces):
                    self.malformed += 1
                else:
                    linktype, ticks = interfaces[iface]
                    ts = (ts_hi << 32) | ts_lo
                    yield linktype, ts * 1_000_000 // ticks, body[20:20 + cap_len]
            elif btype == 3:    # simple packet: no timestamp
                if interfaces:
                    yield interfaces[0][0], 0, body[4:]
            off += blen


def _pcapng_tsresol(options: bytes, endian: str) -> int:
    off = 0
    while off + 4 <= len(options):
        code, length = struct.unpack_from(endian + "HH", options, off)
        if code == 0:
            break
        if code == 9 and length >= 1:
            v = options[off + 4]
            return 2 ** (v & 0x7F) if v & 0x80 else 10 ** v
        off += 4 + ((length + 3) & ~3)
    return 1_000_000


def parse_capture(path: str | os.PathLike,
                  predicate: Optional[Callable[[PacketRecord], bool]] = None) -> CaptureReader:
    """Open a capture; iterate the result for PacketRecords in file order."""
    return CaptureReader(path, predicate)


def write_pcap(packets: Iterable[PacketRecord], path: str | os.PathLike) -> int:
    """Write header-only Ethernet/IPv4 frames (zero-filled payload).

    Used for fixtures and for synthetic corpora; returns the frame count.
    """
    n = 0
    with open(path, "wb") as fh:
        fh.write(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, LINKTYPE_ETHERNET))
        for pkt in packets:
            frame = _build_frame(pkt)
            sec, usec = divmod(pkt.timestamp_us, 1_000_000)
            fh.write(struct.pack("<IIII", sec, usec, len(frame), len(frame)))
            fh.write(frame)
            n += 1
    return n


def _build_frame(pkt: PacketRecord) -> bytes:
    eth = b"\x02\x00\x00\x00\x00\x02" + b"\x02\x00\x00\x00\x00\x01" + struct.pack("!H", _ETH_IPV4)
    if pkt.protocol is Protocol.TCP:
        tcp_len = max(20, pkt.header_len_bytes - 20)
        tcp_len -= tcp_len % 4
        transport = struct.pack("!HHIIBBHHH", pkt.src_port, pkt.dst_port, 0, 0,
                                (tcp_len // 4) << 4, pkt.tcp_flags & 0xFF,
                                pkt.tcp_window, 0, 0)
        transport += b"\x01" * (tcp_len - 20)   # NOP options
        proto = 6
    elif pkt.protocol is Protocol.UDP:
        transport = struct.pack("!HHHH", pkt.src_port, pkt.dst_port,
                                8 + pkt.payload_len_bytes, 0)
        proto = 17
    else:
        transport = b""
        proto = 1
    body = transport + bytes(pkt.payload_len_bytes)
    total = 20 + len(body)
    ip = struct.pack("!BBHHHBBH4s4s", 0x45, 0, total, 0, 0, 64, proto, 0,
                     ipaddress.IPv4Address(pkt.src_ip).packed,
                     ipaddress.IPv4Address(pkt.dst_ip).packed)
    return eth + ip + body


# ---------------------------------------------------------------------------
# packet CSV: the capture-derived intermediate format

def write_packet_csv(packets: Iterable[PacketRecord], path: str | os.PathLike) -> int:
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PACKET_CSV_COLUMNS)
        for p in packets:
            w.writerow((p.timestamp_us, p.src_ip, p.dst_ip, p.src_port, p.dst_port,
                        p.protocol.name, p.tcp_flags, p.header_len_bytes,
                        p.payload_len_bytes, p.tcp_window))
            n += 1
    return n


def read_packet_csv(path: str | os.PathLike) -> Iterator[PacketRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None:
            return
        if tuple(header) != PACKET_CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected packet CSV header {header}")
        for row in r:
            yield PacketRecord(int(row[0]), row[1], row[2], int(row[3]), int(row[4]),
                               Protocol[row[5]], int(row[6]), int(row[7]), int(row[8]),
                               int(row[9]))


def read_packets(path: str | os.PathLike) -> Iterable[PacketRecord]:
    """Dispatch on content: packet CSV or pcap/pcapng."""
    with open(path, "rb") as fh:
        head = fh.read(len(PACKET_CSV_COLUMNS[0]))
    if head == PACKET_CSV_COLUMNS[0].encode():
        return read_packet_csv(path)
    return parse_capture(path)
