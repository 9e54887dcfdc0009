"""Out-of-band packet inspection baseline.

The tap copies each packet the UPF sees into a bounded queue. A separate
thread then works in fixed ticks, the way a capture daemon and a dissector
cooperate through capture files:

1. packets queued since the last tick are wrapped as they would appear on
   the N3 link (IPv4/UDP/GTP-U) and appended to a spool file as one closed
   segment;
2. segments closed at earlier ticks are read back and every packet is
   dissected from raw bytes (IPv4, UDP, GTP-U, inner header), and the
   results land in ``<sink>/dpi/<ne>.json``.

So a packet waits for its segment to close and then for the dissector to
reach it, while the inline path only waits for its collector's next flush.
"""

from __future__ import annotations

import json
import logging
import os
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .cn.gtp import GTPU_PORT, GtpParseError, decode_gpdu
from .probe import RecordSink
from .telemetry import now_ns

log = logging.getLogger(__name__)

IPV4 = struct.Struct("!BBHHHBBH4s4s")
UDP = struct.Struct("!HHHH")
SPOOL_REC = struct.Struct("!QI")  # t_enter_ns, caplen

# The N3 endpoints the synthetic outer headers claim.
GNB_ADDR = bytes([192, 168, 70, 2])
UPF_ADDR = bytes([192, 168, 70, 10])

HEADER_FIELDS = ("teid", "flow_id", "pkt_id", "length")


class CaptureQueueFull(OverflowError):
    pass


class DissectError(ValueError):
    pass


@dataclass
class CaptureRecord:
    t_enter_ns: int
    t_parsed_ns: int = 0
    t_stored_ns: int = 0
    fields: dict = field(default_factory=dict)
    error: str = ""
    packet: bytes | None = None

    @property
    def pkt_id(self) -> int | None:
        return self.fields.get("pkt_id")

    @property
    def latency_ns(self) -> int:
        return self.t_stored_ns - self.t_enter_ns

    def to_json(self, ne_id: str) -> dict:
        d = {"ne": ne_id, "t_enter_ns": self.t_enter_ns, "t_parsed_ns": self.t_parsed_ns,
             "t_stored_ns": self.t_stored_ns, "fields": self.fields}
        if self.error:
            d["error"] = self.error
        return d

    @classmethod
    def from_json(cls, d: dict) -> "CaptureRecord":
        return cls(d["t_enter_ns"], d["t_parsed_ns"], d["t_stored_ns"], dict(d.get("fields", {})),
                   d.get("error", ""))


def _checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\0"
    s = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def wrap_n3(gtp: bytes, ident: int = 0) -> bytes:
    """IPv4/UDP framing for a G-PDU, as seen on the wire."""
    udp_len = UDP.size + len(gtp)
    total = IPV4.size + udp_len
    hdr = IPV4.pack(0x45, 0, total, ident & 0xFFFF, 0x4000, 64, 17, 0, GNB_ADDR, UPF_ADDR)
    hdr = hdr[:10] + struct.pack("!H", _checksum(hdr)) + hdr[12:]
    return hdr + UDP.pack(GTPU_PORT, GTPU_PORT, udp_len, 0) + gtp


def dissect(frame: bytes) -> dict:
    """Walk IPv4, UDP, GTP-U and the inner header of one captured frame."""
    if len(frame) < IPV4.size:
        raise DissectError("truncated IPv4 header")
    vihl, _, total, _, _, _, proto, _, src, dst = IPV4.unpack_from(frame)
    if vihl >> 4 != 4:
        raise DissectError(f"IP version {vihl >> 4}")
    ihl = (vihl & 0x0F) * 4
    if ihl < IPV4.size or total != len(frame):
        raise DissectError("bad IPv4 lengths")
    if _checksum(frame[:ihl]) != 0:
        raise DissectError("IPv4 checksum mismatch")
    if proto != 17:
        raise DissectError(f"IP protocol {proto}")
    if len(frame) < ihl + UDP.size:
        raise DissectError("truncated UDP header")
    sport, dport, ulen, _ = UDP.unpack_from(frame, ihl)
    if dport != GTPU_PORT:
        raise DissectError(f"UDP port {dport}")
    if ulen != len(frame) - ihl:
        raise DissectError("bad UDP length")
    try:
        g = decode_gpdu(frame[ihl + UDP.size:])
    except GtpParseError as exc:
        raise DissectError(f"GTP-U: {exc}") from None
    return {"teid": g.teid, "flow_id": g.flow_id, "pkt_id": g.pkt_id, "length": g.length,
            "src_ip": g.src_ip, "dst_ip": g.dst_ip, "outer_src": ".".join(map(str, src)),
            "outer_dst": ".".join(map(str, dst))}


class PcapWriter:
    """Nanosecond pcap with raw IPv4 link type; for inspection only."""

    MAGIC_NS = 0xA1B23C4D
    LINKTYPE_IPV4 = 228

    def __init__(self, path: str | os.PathLike, snaplen: int = 65535) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._f = open(self.path, "wb")
        self._f.write(struct.pack("<IHHiIII", self.MAGIC_NS, 2, 4, 0, 0, snaplen, self.LINKTYPE_IPV4))

    def write(self, t_ns: int, frame: bytes) -> None:
        self._f.write(struct.pack("<IIII", t_ns // 10**9, t_ns % 10**9, len(frame), len(frame)))
        self._f.write(frame)

    def close(self) -> None:
        self._f.close()


class DpiCapture:
    """Tap plus the tick-driven spool/dissect thread for one NE.

    ``capture`` is safe to call from one producer thread while the worker
    runs. ``keep_records`` keeps every CaptureRecord in ``records``.
    """

    def __init__(self, ne_id: str, sink_dir: str | os.PathLike, capacity: int = 1 << 16,
                 interval: float = 0.1, pcap_out: str | os.PathLike | None = None,
                 keep_records: bool = True) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.ne_id = ne_id
        self.capacity = capacity
        self.interval = interval
        self.sink_dir = Path(sink_dir)
        self.out_path = self.sink_dir / "dpi" / f"{ne_id}.json"
        self.spool_path = self.sink_dir / "dpi" / f"{ne_id}.spool"
        self.pcap_out = pcap_out
        self.keep_records = keep_records
        self._q: deque = deque()
        self.captured = 0
        self.drops = 0
        self.parsed = 0
        self.errors = 0
        self.records: list[CaptureRecord] = []
        self._closed: list[tuple[int, int]] = []  # (offset, size) of spooled segments
        self._spool = None
        self._sink: RecordSink | None = None
        self._pcap: PcapWriter | None = None
        self._ident = 0
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._lock = threading.Lock()

    def capture(self, packet: bytes, t_enter_ns: int) -> None:
        if len(self._q) >= self.capacity:
            self.drops += 1
            raise CaptureQueueFull(f"{self.ne_id}: capture queue full")
        self._q.append((t_enter_ns, bytes(packet)))
        self.captured += 1

    __call__ = capture

    def _open(self) -> None:
        if self._spool is None:
            self.spool_path.parent.mkdir(parents=True, exist_ok=True)
            self._spool = open(self.spool_path, "w+b")
            self._sink = RecordSink(self.out_path)
            if self.pcap_out is not None:
                self._pcap = PcapWriter(self.pcap_out)

    def spool(self) -> int:
        """Close a segment holding everything queued so far."""
        q = self._q
        n = len(q)
        if not n:
            return 0
        parts = []
        for _ in range(n):
            t, pkt = q.popleft()
            frame = wrap_n3(pkt, self._ident)
            self._ident += 1
            parts.append(SPOOL_REC.pack(t, len(frame)))
            parts.append(frame)
            if self._pcap is not None:
                self._pcap.write(t, frame)
        blob = b"".join(parts)
        f = self._spool
        f.seek(0, os.SEEK_END)
        off = f.tell()
        f.write(blob)
        f.flush()
        self._closed.append((off, len(blob)))
        return n

    def dissect_closed(self) -> int:
        """Dissect every closed segment and store the results."""
        segs, self._closed = self._closed, []
        if not segs:
            return 0
        out: list[CaptureRecord] = []
        f = self._spool
        for off, size in segs:
            f.seek(off)
            blob = f.read(size)
            pos = 0
            while pos < len(blob):
                t_enter, caplen = SPOOL_REC.unpack_from(blob, pos)
                pos += SPOOL_REC.size
                frame = blob[pos:pos + caplen]
                pos += caplen
                try:
                    fields = dissect(frame)
                    err = ""
                except DissectError as exc:
                    fields, err = {}, str(exc)
                    self.errors += 1
                out.append(CaptureRecord(t_enter, now_ns(), 0, fields, err))
        t_stored = now_ns()
        for r in out:
            r.t_stored_ns = t_stored
        self._sink.append_line(json.dumps([r.to_json(self.ne_id) for r in out], separators=(",", ":")))
        self.parsed += len(out)
        if self.keep_records:
            with self._lock:
                self.records.extend(out)
        return len(out)

    def tick(self) -> None:
        self._open()
        self.dissect_closed()
        self.spool()

    def dpi_parse_loop(self) -> None:
        """Tick every ``interval`` until stopped, then drain."""
        self._open()
        nxt = time.monotonic() + self.interval
        while not self._stop.wait(max(0.0, nxt - time.monotonic())):
            try:
                self.tick()
            except Exception:
                log.exception("dpi %s tick failed", self.ne_id)
            nxt += self.interval
            now = time.monotonic()
            if nxt < now:
                nxt = now + self.interval
        self.spool()
        self.dissect_closed()

    def start(self) -> "DpiCapture":
        if self._thread is None:
            self._stop.clear()
            self._thread = threading.Thread(target=self.dpi_parse_loop, name=f"dpi-{self.ne_id}", daemon=True)
            self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
            self._thread = None
        else:
            self._open()
            self.spool()
            self.dissect_closed()
        for h in (self._spool, self._sink, self._pcap):
            if h is not None:
                h.close()
        self._spool = self._sink = self._pcap = None

    def stats(self) -> dict[str, int]:
        return {"captured": self.captured, "dropped": self.drops, "parsed": self.parsed,
                "errors": self.errors, "in_queue": len(self._q)}


def read_dpi_file(path: str | os.PathLike) -> list[CaptureRecord]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.endswith("\n"):
                out.extend(CaptureRecord.from_json(d) for d in json.loads(line))
    return out


class UnmatchedPackets(list):
    """Packet ids present on only one side of a comparison."""


@dataclass
class LatencyReport:
    """Latency statistics in milliseconds; ``reduction_pct`` compares means."""

    mean: float
    p50: float
    p99: float
    dpi_mean: float
    dpi_p50: float
    dpi_p99: float
    reduction_pct: float
    matched: int
    unmatched: UnmatchedPackets = field(default_factory=UnmatchedPackets)

    def to_json(self) -> dict:
        return {"inline": {"mean_ms": self.mean, "p50_ms": self.p50, "p99_ms": self.p99},
                "dpi": {"mean_ms": self.dpi_mean, "p50_ms": self.dpi_p50, "p99_ms": self.dpi_p99},
                "reduction_pct": self.reduction_pct, "matched": self.matched,
                "unmatched": len(self.unmatched)}


def _latencies(records) -> dict[int, float]:
    """pkt_id -> latency in ns, from a mapping or from records."""
    if isinstance(records, Mapping):
        return {int(k): float(v) for k, v in records.items()}
    out = {}
    for r in records:
        if isinstance(r, CaptureRecord):
            if r.error or r.pkt_id is None:
                continue
            out[r.pkt_id] = float(r.latency_ns)
        else:
            pid, t_enter, t_stored = r
            out[pid] = float(t_stored - t_enter)
    return out


def compare_latency(inline_records, dpi_records) -> LatencyReport:
    """Match by packet id. Either side may be a ``{pkt_id: latency_ns}``
    mapping, CaptureRecords, or ``(pkt_id, t_enter_ns, t_stored_ns)`` tuples."""
    a = _latencies(inline_records)
    b = _latencies(dpi_records)
    common = sorted(a.keys() & b.keys())
    unmatched = UnmatchedPackets(sorted(a.keys() ^ b.keys()))
    if not common:
        raise ValueError("no packet appears in both record sets")
    x = np.array([a[k] for k in common]) / 1e6
    y = np.array([b[k] for k in common]) / 1e6
    ym = float(y.mean())
    red = 0.0 if ym == 0 else (ym - float(x.mean())) / ym * 100.0
    return LatencyReport(float(x.mean()), float(np.percentile(x, 50)), float(np.percentile(x, 99)),
                         ym, float(np.percentile(y, 50)), float(np.percentile(y, 99)), red,
                         len(common), unmatched)


def header_fields(records: Iterable) -> dict[int, tuple]:
    """pkt_id -> the header fields both paths extract, for equivalence checks."""
    out = {}
    for r in records:
        f = r.fields if isinstance(r, CaptureRecord) else dict(r.fields)
        if "pkt_id" in f and not (isinstance(r, CaptureRecord) and r.error):
            out[f["pkt_id"]] = tuple(f[k] for k in HEADER_FIELDS)
    return out
