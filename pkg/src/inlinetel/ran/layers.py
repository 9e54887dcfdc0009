"""Layer algorithms: RLC segmentation/reassembly, the PDCP receive window and
the PHY scrambling transform."""

from __future__ import annotations

import random
from typing import NamedTuple


class MissingSegment(ValueError):
    pass


class StaleSeq(ValueError):
    pass


class RlcSegment(NamedTuple):
    offset: int
    sdu_len: int
    last: bool
    data: bytes


def rlc_segment(payload: bytes, max_pdu: int) -> list[RlcSegment]:
    """Split into ``ceil(len / max_pdu)`` segments, the last one flagged."""
    if max_pdu < 1:
        raise ValueError("max_pdu must be >= 1")
    n = len(payload)
    return [RlcSegment(off, n, off + max_pdu >= n, bytes(payload[off:off + max_pdu]))
            for off in range(0, n, max_pdu)]


def rlc_reassemble(segments) -> bytes:
    """Inverse of :func:`rlc_segment`; segments may arrive in any order."""
    segs = sorted(segments, key=lambda s: s.offset)
    if not segs:
        return b""
    sdu_len = segs[0].sdu_len
    pos = 0
    parts = []
    for s in segs:
        if s.sdu_len != sdu_len:
            raise MissingSegment(f"segments disagree on SDU length ({s.sdu_len} vs {sdu_len})")
        if s.offset != pos:
            raise MissingSegment(f"gap at byte {pos} (next segment starts at {s.offset})")
        parts.append(s.data)
        pos += len(s.data)
    if pos != sdu_len or not segs[-1].last:
        raise MissingSegment(f"have {pos} of {sdu_len} bytes")
    return b"".join(parts)


class RlcReassembler:
    """Receive-side buffer keyed by (logical channel, RLC SN)."""

    def __init__(self) -> None:
        self._pending: dict[tuple, list] = {}  # key -> [sdu_len, {offset: data}, have_bytes, ctx]

    def add(self, key: tuple, seg: RlcSegment, ctx=None) -> tuple[bytes, object] | None:
        """Returns ``(sdu, ctx)`` once ``key`` is complete, else None."""
        if seg.offset == 0 and seg.last and len(seg.data) == seg.sdu_len:
            self._pending.pop(key, None)
            return seg.data, ctx
        ent = self._pending.get(key)
        if ent is None:
            ent = self._pending[key] = [seg.sdu_len, {}, 0, ctx]
        if seg.offset not in ent[1]:
            ent[1][seg.offset] = seg
            ent[2] += len(seg.data)
        if ctx is not None:
            ent[3] = ctx
        if ent[2] < ent[0]:
            return None
        try:
            sdu = rlc_reassemble(ent[1].values())
        except MissingSegment:
            return None
        del self._pending[key]
        return sdu, ent[3]

    @property
    def pending_segments(self) -> int:
        return sum(len(e[1]) for e in self._pending.values())


SEQ_MOD = 1 << 32


class PdcpWindow:
    """Receive window: in-order delivery from ``next_seq``, buffering anything
    ahead of it by less than ``size``. Arithmetic is modulo 2**32."""

    def __init__(self, size: int = 2048, start: int = 0) -> None:
        if not 1 <= size <= SEQ_MOD // 2:
            raise ValueError("window size out of range")
        self.size = size
        self.next_seq = start % SEQ_MOD
        self.buffer: dict[int, object] = {}
        self.reorder_count = 0
        self.stale_count = 0

    def offer(self, seq: int, pdu) -> list:
        d = (seq - self.next_seq) % SEQ_MOD
        if d >= self.size or seq in self.buffer:
            self.stale_count += 1
            where = "duplicate" if seq in self.buffer else ("behind window" if d >= SEQ_MOD // 2 else "beyond window")
            raise StaleSeq(f"seq {seq} {where} (next {self.next_seq})")
        if d:
            self.buffer[seq] = pdu
            self.reorder_count += 1
            return []
        out = [pdu]
        nxt = (seq + 1) % SEQ_MOD
        buf = self.buffer
        while nxt in buf:
            out.append(buf.pop(nxt))
            nxt = (nxt + 1) % SEQ_MOD
        self.next_seq = nxt
        return out


def pdcp_reorder(window: PdcpWindow, pdu) -> list:
    """Offer ``pdu`` (anything with a ``seq`` attribute or a ``(seq, data)`` pair)."""
    seq = pdu.seq if hasattr(pdu, "seq") else pdu[0]
    return window.offer(seq, pdu)


_KS_LEN = 1 << 16
_keystreams: dict[int, bytes] = {}


def _keystream(mcs: int) -> bytes:
    ks = _keystreams.get(mcs)
    if ks is None:
        ks = _keystreams[mcs] = random.Random(0x5EED0000 + mcs).randbytes(_KS_LEN)
    return ks


def scramble(data: bytes, mcs: int) -> bytes:
    """XOR with a keystream fixed by ``mcs``; applying it twice is the identity."""
    n = len(data)
    if n == 0:
        return b""
    if n > _KS_LEN:
        return b"".join(scramble(data[i:i + _KS_LEN], mcs) for i in range(0, n, _KS_LEN))
    ks = int.from_bytes(_keystream(mcs)[:n], "big")
    return (int.from_bytes(data, "big") ^ ks).to_bytes(n, "big")
