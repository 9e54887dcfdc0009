"""GTP-U (v1, G-PDU only) framing plus the small inner user header carried by
test traffic. Layouts are tabulated in docs/wire.md."""

from __future__ import annotations

import ipaddress
import struct
from typing import NamedTuple

GTP_HDR = struct.Struct("!BBHI")  # flags, type, length, teid
INNER_HDR = struct.Struct("!IIIQ")  # src ip, dst ip, flow id, packet id
GTP_FLAGS = 0x30  # version 1, protocol type GTP, no optional fields
GTP_GPDU = 0xFF
GTPU_PORT = 2152


class GtpParseError(ValueError):
    pass


class GtpPacket(NamedTuple):
    teid: int
    src_ip: int
    dst_ip: int
    flow_id: int
    pkt_id: int
    payload_len: int  # bytes after the inner header

    @property
    def length(self) -> int:
        """Length of the G-PDU body (inner header + payload)."""
        return INNER_HDR.size + self.payload_len


def ip_to_int(ip: str | int) -> int:
    return int(ipaddress.IPv4Address(ip))


def int_to_ip(v: int) -> str:
    return str(ipaddress.IPv4Address(v))


_FILL = bytes(range(256)) * 64


def encode_gpdu(teid: int, src_ip: int, dst_ip: int, flow_id: int, pkt_id: int,
                payload: bytes | int = 0) -> bytes:
    """Build a G-PDU; an int ``payload`` means that many filler bytes."""
    if isinstance(payload, int):
        n = payload
        payload = _FILL[:n] if n <= len(_FILL) else bytes(n)
    body_len = INNER_HDR.size + len(payload)
    if body_len > 0xFFFF:
        raise ValueError("G-PDU body too large")
    return (GTP_HDR.pack(GTP_FLAGS, GTP_GPDU, body_len, teid)
            + INNER_HDR.pack(src_ip, dst_ip, flow_id, pkt_id) + payload)


def decode_gpdu(data: bytes) -> GtpPacket:
    if len(data) < GTP_HDR.size + INNER_HDR.size:
        raise GtpParseError(f"short packet ({len(data)} bytes)")
    flags, mtype, length, teid = GTP_HDR.unpack_from(data)
    if flags >> 5 != 1:
        raise GtpParseError(f"unsupported GTP version {flags >> 5}")
    if flags & 0x07:
        raise GtpParseError("optional header fields are not supported")
    if mtype != GTP_GPDU:
        raise GtpParseError(f"not a G-PDU (type {mtype:#x})")
    if length != len(data) - GTP_HDR.size:
        raise GtpParseError(f"length field {length} != body {len(data) - GTP_HDR.size}")
    src, dst, flow, pkt = INNER_HDR.unpack_from(data, GTP_HDR.size)
    return GtpPacket(teid, src, dst, flow, pkt, length - INNER_HDR.size)


def retunnel(data: bytes, teid: int) -> bytes:
    """Same G-PDU with a new TEID (the FAR's outer header creation)."""
    return data[:4] + struct.pack("!I", teid) + data[8:]


def encap(teid: int, body: bytes) -> bytes:
    """G-PDU around an already built inner packet (inner header + payload)."""
    if len(body) > 0xFFFF:
        raise ValueError("G-PDU body too large")
    return GTP_HDR.pack(GTP_FLAGS, GTP_GPDU, len(body), teid) + body


def decap(data: bytes) -> tuple[int, bytes]:
    """``(teid, body)`` of a G-PDU after validating its framing."""
    pkt = decode_gpdu(data)
    return pkt.teid, data[GTP_HDR.size:]


def inner_packet(src_ip: int, dst_ip: int, flow_id: int, pkt_id: int, payload: bytes) -> bytes:
    return INNER_HDR.pack(src_ip, dst_ip, flow_id, pkt_id) + payload
