"""Toy per-layer headers. Bit layouts are tabulated in docs/wire.md.

Every header starts with the same 12-byte common part::

    layer u8 | flags u8 | spec u16 | seq u32 | length u32

``length`` counts the bytes after the whole header (common part plus the
layer's extension, if any). ``spec`` is layer specific:
PDCP flow id, RLC max PDU data size (TX descriptors only), MAC logical
channel id, unused for PHY.
"""

from __future__ import annotations

import struct
from enum import IntEnum
from typing import NamedTuple

COMMON = struct.Struct("!BBHII")
RLC_EXT = struct.Struct("!II")   # segment offset, SDU length
PHY_EXT = struct.Struct("!BxH")  # mcs, pad, prb count

FLAG_LAST = 0x01   # RLC: segment ends the SDU
FLAG_DL = 0x10     # set on downlink PDUs
MAX_MCS = 28


class Layer(IntEnum):
    PDCP = 1
    RLC = 2
    MAC = 3
    PHY = 4


HEADER_SIZE = {
    Layer.PDCP: COMMON.size,
    Layer.RLC: COMMON.size + RLC_EXT.size,
    Layer.MAC: COMMON.size,
    Layer.PHY: COMMON.size + PHY_EXT.size,
}


class HeaderParseError(ValueError):
    def __init__(self, layer: Layer, msg: str) -> None:
        super().__init__(f"{layer.name}: {msg}")
        self.layer = layer


class LayerHeader(NamedTuple):
    layer: Layer
    flags: int
    spec: int
    seq: int
    length: int
    offset: int = 0     # RLC
    sdu_len: int = 0    # RLC
    mcs: int = 0        # PHY
    prb: int = 0        # PHY

    @property
    def size(self) -> int:
        return HEADER_SIZE[self.layer]

    @property
    def last(self) -> bool:
        return bool(self.flags & FLAG_LAST)

    def pack(self, length: int | None = None) -> bytes:
        n = self.length if length is None else length
        out = COMMON.pack(self.layer, self.flags, self.spec, self.seq & 0xFFFFFFFF, n)
        if self.layer is Layer.RLC:
            out += RLC_EXT.pack(self.offset, self.sdu_len)
        elif self.layer is Layer.PHY:
            out += PHY_EXT.pack(self.mcs, self.prb)
        return out


def parse_header(layer: Layer, data: bytes | memoryview, pos: int = 0) -> LayerHeader:
    """Parse ``layer``'s header at ``pos`` and check it against the buffer."""
    size = HEADER_SIZE[layer]
    if len(data) - pos < size:
        raise HeaderParseError(layer, f"truncated header ({len(data) - pos} < {size} bytes)")
    lid, flags, spec, seq, length = COMMON.unpack_from(data, pos)
    if lid != layer:
        raise HeaderParseError(layer, f"layer id {lid} where {int(layer)} expected")
    rest = len(data) - pos - size
    if length != rest:
        raise HeaderParseError(layer, f"length field {length} but {rest} bytes follow")
    if layer is Layer.RLC:
        offset, sdu_len = RLC_EXT.unpack_from(data, pos + COMMON.size)
        return LayerHeader(layer, flags, spec, seq, length, offset=offset, sdu_len=sdu_len)
    if layer is Layer.PHY:
        mcs, prb = PHY_EXT.unpack_from(data, pos + COMMON.size)
        if mcs > MAX_MCS:
            raise HeaderParseError(layer, f"mcs {mcs} out of range")
        if prb == 0:
            raise HeaderParseError(layer, "zero PRB allocation")
        return LayerHeader(layer, flags, spec, seq, length, mcs=mcs, prb=prb)
    return LayerHeader(layer, flags, spec, seq, length)


def prb_for(nbytes: int, mcs: int) -> int:
    """Toy resource estimate: PRBs needed for ``nbytes`` at ``mcs``."""
    per_prb = 4 * (mcs + 1)
    return max(1, -(-nbytes // per_prb))


def ldpc_blocks(nbytes: int) -> int:
    return max(1, -(-nbytes * 8 // 8448))


def relength(stack: bytes, payload_len: int) -> bytes:
    """Rewrite the length fields of a run of headers for a new payload size."""
    out = bytearray(stack)
    n = len(out)
    pos = 0
    while pos < n:
        size = _SIZE_BY_ID[out[pos]]
        _LEN.pack_into(out, pos + 8, n - pos - size + payload_len)
        pos += size
    return bytes(out)


_SIZE_BY_ID = {int(k): v for k, v in HEADER_SIZE.items()}
_LEN = struct.Struct("!I")
