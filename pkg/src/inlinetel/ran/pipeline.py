"""Layer-by-layer bitstream processing with one probe per layer.

A bitstream carries one header per layer, in the order its pipeline
processes them: PDCP, RLC, MAC, PHY for a transmit (downlink at the base
station) pipeline and PHY, MAC, RLC, PDCP for a receive (uplink) pipeline.
Each layer parses its header from the front, does its work, emits one record
per PDU it handled and hands the remainder on.

The transmit PHY stage emits the over-the-air frame, whose header order is
the receive order, so a receive pipeline at the far end undoes it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from ..probe import AggregationRule as R
from ..probe import Granularity, Probe
from ..telemetry import Source, TelemetryRecord, now_ns
from .layers import PdcpWindow, RlcReassembler, RlcSegment, StaleSeq, rlc_segment, scramble
from .wire import (
    FLAG_DL,
    FLAG_LAST,
    HEADER_SIZE,
    HeaderParseError,
    Layer,
    LayerHeader,
    ldpc_blocks,
    parse_header,
    prb_for,
    relength,
)

log = logging.getLogger(__name__)

TX_ORDER = (Layer.PDCP, Layer.RLC, Layer.MAC, Layer.PHY)
RX_ORDER = (Layer.PHY, Layer.MAC, Layer.RLC, Layer.PDCP)
SOURCE = {Layer.PDCP: Source.PDCP, Layer.RLC: Source.RLC, Layer.MAC: Source.MAC, Layer.PHY: Source.PHY}

OK = {"error": 0}

LAYER_RULES = {
    Layer.PDCP: (
        R("pdcp_txpdu_count", event="pdcp_tx", where=OK),
        R("pdcp_txpdu_bytes", "sum", event="pdcp_tx", where=OK, field="data_bytes"),
        R("pdcp_rxpdu_count", event="pdcp_rx", where=OK),
        R("pdcp_rxpdu_bytes", "sum", event="pdcp_rx", where=OK, field="data_bytes"),
        R("pdcp_rxpdu_reorder_count", event="pdcp_rx", where={"buffered": 1}),
        R("pdcp_rxpdu_stale_count", event="pdcp_rx", where={"stale": 1}),
        R("pdcp_header_error_count", component="PDCP", where={"error": 1}),
    ),
    Layer.RLC: (
        R("rlc_txpdu_transmit_bytes", "sum", event="rlc_tx", where=OK, field="data_bytes"),
        R("rlc_txpdu_count", event="rlc_tx", where=OK),
        R("rlc_txsdu_count", event="rlc_tx", where={"error": 0, "last": 1}),
        R("rlc_rxpdu_bytes", "sum", event="rlc_rx", where=OK, field="data_bytes"),
        R("rlc_rxpdu_count", event="rlc_rx", where=OK),
        R("rlc_rxsdu_reassembled", event="rlc_rx", where={"sdu_done": 1}),
        R("rlc_header_error_count", component="RLC", where={"error": 1}),
        R("rlc_rx_pending_segments", "last", event="rlc_rx", field="pending"),
    ),
    Layer.MAC: (
        R("mac_sched_dl_bytes", "sum", component="MAC", where={"error": 0, "dl": 1}, field="data_bytes"),
        R("mac_sched_ul_bytes", "sum", component="MAC", where={"error": 0, "dl": 0}, field="data_bytes"),
        R("mac_sched_dl_pdus", component="MAC", where={"error": 0, "dl": 1}),
        R("mac_sched_ul_pdus", component="MAC", where={"error": 0, "dl": 0}),
        R("mac_sched_pucch_size", "last", component="MAC", field="pucch_size"),
        R("mac_sched_lcid_last", "last", component="MAC", field="lcid"),
        R("mac_header_error_count", component="MAC", where={"error": 1}),
    ),
    Layer.PHY: (
        R("phy_tx_prb_total", "sum", event="phy_tx", where=OK, field="prb"),
        R("phy_rx_prb_total", "sum", event="phy_rx", where=OK, field="prb"),
        R("phy_mcs_last", "last", component="PHY", field="mcs"),
        R("phy_ldpc_encode_blocks", "sum", event="phy_tx", where=OK, field="ldpc_blocks"),
        R("phy_ldpc_decode_blocks", "sum", event="phy_rx", where=OK, field="ldpc_blocks"),
        R("phy_header_error_count", component="PHY", where={"error": 1}),
    ),
}

# Configuration values exported as constant gauges.
PHY_STATIC = {"phy_rx_total_gain_dB": 125.0, "phy_max_ldpc_iterations": 8.0,
              "phy_ofdm_offset_divisor": 8.0, "phy_max_num_pucch": 8.0}

SLOTS_PER_FRAME = 20


class Direction(str, Enum):
    UPLINK = "uplink"
    DOWNLINK = "downlink"


@dataclass
class Bitstream:
    direction: Direction
    flow_id: int
    data: bytes


@dataclass
class ProcessedBitstream:
    direction: Direction
    flow_id: int
    outputs: list[bytes] = field(default_factory=list)
    dropped_at: Layer | None = None
    error: str = ""
    records: int = 0


class LayerPipeline:
    """One direction of one node's protocol stack.

    ``mode`` is ``"tx"`` or ``"rx"``. With a probe, every layer gets its own
    collector (``ran/<ne>/<layer>.json``) and this pipeline its own producer
    buffer on it; without one, nothing is recorded and the bytes produced
    are the same.
    """

    def __init__(self, ne_id: str, mode: str, direction: Direction | str, probe: Probe | None = None,
                 deliver: Callable[[list[bytes]], None] | None = None, window: int = 2048) -> None:
        if mode not in ("tx", "rx"):
            raise ValueError("mode must be 'tx' or 'rx'")
        self.ne_id = ne_id
        self.mode = mode
        self.direction = Direction(direction)
        self.order = TX_ORDER if mode == "tx" else RX_ORDER
        self.deliver = deliver
        self.dl = 1 if self.direction is Direction.DOWNLINK else 0
        self.events = {ly: f"{ly.name.lower()}_{mode}" for ly in Layer}
        self.emit: dict[Layer, Callable | None] = {ly: None for ly in Layer}
        if probe is not None:
            for ly in self.order:
                gran = Granularity.KEY_DATA_ONLY if ly is Layer.PHY else Granularity.FULL_METADATA
                coll = probe.collector(f"ran/{ne_id}/{ly.name.lower()}", LAYER_RULES[ly], granularity=gran)
                self.emit[ly] = coll.buffer().emit
                for r in LAYER_RULES[ly]:
                    probe.table.declare(r.kpi, r.labels)
            for k, v in PHY_STATIC.items():
                probe.table.set(k, v)
        self.processed = {ly: 0 for ly in Layer}
        self.drops = {ly: 0 for ly in Layer}
        self._tx_next: dict[int, int] = {}
        self._windows: dict[int, PdcpWindow] = {}
        self._window_size = window
        self._rlc = RlcReassembler()
        self._slot = 0
        self._stages = {
            ("tx", Layer.PDCP): self._pdcp_tx, ("tx", Layer.RLC): self._rlc_tx,
            ("tx", Layer.MAC): self._mac_tx, ("tx", Layer.PHY): self._phy_tx,
            ("rx", Layer.PHY): self._phy_rx, ("rx", Layer.MAC): self._mac_rx,
            ("rx", Layer.RLC): self._rlc_rx, ("rx", Layer.PDCP): self._pdcp_rx,
        }
        self._below = {}
        for i, ly in enumerate(self.order):
            self._below[ly] = sum(HEADER_SIZE[x] for x in self.order[i + 1:])

    def _record(self, layer: Layer, fields: tuple) -> None:
        em = self.emit[layer]
        if em is not None:
            em(TelemetryRecord(now_ns(), self.ne_id, SOURCE[layer], self.events[layer], fields))

    def process_bitstream(self, bs: Bitstream | bytes) -> ProcessedBitstream:
        if isinstance(bs, (bytes, bytearray)):
            bs = Bitstream(self.direction, 0, bytes(bs))
        out = ProcessedBitstream(bs.direction, bs.flow_id)
        units = [(bs.data, ())]
        for layer in self.order:
            stage = self._stages[(self.mode, layer)]
            nxt = []
            for data, ctx in units:
                try:
                    produced, records = stage(data, ctx)
                except HeaderParseError as exc:
                    self.drops[layer] += 1
                    out.dropped_at = layer
                    out.error = str(exc)
                    self._record(layer, (("error", 1), ("reason", str(exc)), ("dl", self.dl)))
                    out.records += 1
                    continue
                for fields in records:
                    self._record(layer, fields)
                self.processed[layer] += len(records)
                out.records += len(records)
                nxt.extend(produced)
            units = nxt
            if not units:
                break
        out.outputs = [d for d, _ in units]
        if out.outputs and self.deliver is not None:
            self.deliver(out.outputs)
        return out

    # transmit stages: units are (remaining bitstream, parsed upper headers)

    def _pdcp_tx(self, data, ctx):
        h = parse_header(Layer.PDCP, data)
        flow = h.spec
        expected = self._tx_next.get(flow, h.seq)
        self._tx_next[flow] = (h.seq + 1) & 0xFFFFFFFF
        rest = data[h.size:]
        fields = (("error", 0), ("seq", h.seq), ("flow_id", flow), ("pdu_bytes", h.length),
                  ("data_bytes", h.length - self._below[Layer.PDCP]), ("seq_gap", int(h.seq != expected)),
                  ("dl", self.dl))
        return [(rest, (h,))], [fields]

    def _rlc_tx(self, data, ctx):
        h = parse_header(Layer.RLC, data)
        below = self._below[Layer.RLC]
        lower, payload = data[h.size:h.size + below], data[h.size + below:]
        if h.offset != 0 or h.sdu_len != len(payload):
            raise HeaderParseError(Layer.RLC, f"descriptor offset/sdu_len {h.offset}/{h.sdu_len} "
                                              f"do not match a {len(payload)}-byte SDU")
        max_pdu = h.spec or max(1, len(payload))
        segs = rlc_segment(payload, max_pdu) or [RlcSegment(0, 0, True, b"")]
        produced, records = [], []
        for s in segs:
            flags = (h.flags & ~FLAG_LAST) | (FLAG_LAST if s.last else 0)
            seg_hdr = h._replace(flags=flags, offset=s.offset, length=0)
            produced.append((relength(lower, len(s.data)) + s.data, ctx + (seg_hdr,)))
            records.append((("error", 0), ("seq", h.seq), ("offset", s.offset), ("sdu_len", h.sdu_len),
                            ("data_bytes", len(s.data)), ("last", int(s.last)), ("segments", len(segs)),
                            ("dl", self.dl)))
        return produced, records

    def _mac_tx(self, data, ctx):
        h = parse_header(Layer.MAC, data)
        slot = self._slot
        self._slot = (slot + 1) % SLOTS_PER_FRAME
        nbytes = h.length - self._below[Layer.MAC]
        fields = (("error", 0), ("seq", h.seq), ("lcid", h.spec), ("slot", slot), ("data_bytes", nbytes),
                  ("pucch_size", 2 + min(nbytes // 512, 9)), ("dl", self.dl))
        return [(data[h.size:], ctx + (h,))], [fields]

    def _phy_tx(self, data, ctx):
        h = parse_header(Layer.PHY, data)
        payload = data[h.size:]
        pdcp, rlc, mac = ctx
        # Receive order below PHY: MAC | RLC | PDCP | payload.
        inner_hdrs = relength(mac.pack(0) + rlc.pack(0) + pdcp.pack(0), len(payload))
        inner = inner_hdrs + payload
        frame = h.pack(len(inner)) + scramble(inner, h.mcs)
        fields = (("error", 0), ("seq", h.seq), ("mcs", h.mcs), ("prb", h.prb), ("tb_bytes", len(inner)),
                  ("ldpc_blocks", ldpc_blocks(len(inner))), ("dl", self.dl))
        return [(frame, ())], [fields]

    # receive stages

    def _phy_rx(self, data, ctx):
        h = parse_header(Layer.PHY, data)
        inner = scramble(data[h.size:], h.mcs)
        fields = (("error", 0), ("seq", h.seq), ("mcs", h.mcs), ("prb", h.prb), ("tb_bytes", len(inner)),
                  ("ldpc_blocks", ldpc_blocks(len(inner))), ("dl", self.dl))
        return [(inner, ())], [fields]

    def _mac_rx(self, data, ctx):
        h = parse_header(Layer.MAC, data)
        nbytes = h.length - self._below[Layer.MAC]
        fields = (("error", 0), ("seq", h.seq), ("lcid", h.spec), ("data_bytes", nbytes),
                  ("pucch_size", 2 + min(nbytes // 512, 9)), ("dl", self.dl))
        return [(data[h.size:], (h.spec,))], [fields]

    def _rlc_rx(self, data, ctx):
        h = parse_header(Layer.RLC, data)
        psize = HEADER_SIZE[Layer.PDCP]
        body = data[h.size:]
        if len(body) < psize:
            raise HeaderParseError(Layer.RLC, "segment too short to carry the PDCP header")
        pdcp_hdr, seg = body[:psize], body[psize:]
        end = h.offset + len(seg)
        if end > h.sdu_len or (h.last and end != h.sdu_len):
            raise HeaderParseError(Layer.RLC, f"segment [{h.offset}, {end}) inconsistent with SDU "
                                              f"length {h.sdu_len}")
        lcid = ctx[0] if ctx else 0
        done = self._rlc.add((lcid, h.seq), RlcSegment(h.offset, h.sdu_len, h.last, bytes(seg)), pdcp_hdr)
        produced = []
        if done is not None:
            sdu, phdr = done
            produced.append((relength(phdr, len(sdu)) + sdu, ()))
        fields = (("error", 0), ("seq", h.seq), ("offset", h.offset), ("sdu_len", h.sdu_len),
                  ("data_bytes", len(seg)), ("last", int(h.last)), ("sdu_done", int(done is not None)),
                  ("pending", self._rlc.pending_segments), ("dl", self.dl))
        return produced, [fields]

    def _pdcp_rx(self, data, ctx):
        h = parse_header(Layer.PDCP, data)
        win = self._windows.get(h.spec)
        if win is None:
            win = self._windows[h.spec] = PdcpWindow(self._window_size, h.seq)
        sdu = data[h.size:]
        stale = 0
        try:
            delivered = win.offer(h.seq, sdu)
        except StaleSeq:
            delivered = []
            stale = 1
        fields = (("error", 0), ("seq", h.seq), ("flow_id", h.spec), ("data_bytes", len(sdu)),
                  ("buffered", int(not stale and not delivered)), ("delivered", len(delivered)),
                  ("stale", stale), ("dl", self.dl))
        return [(d, ()) for d in delivered], [fields]


class Framer:
    """Builds transmit-order bitstreams for one flow (the sender's SDAP role)."""

    def __init__(self, flow_id: int, direction: Direction | str, lcid: int = 4, mcs: int = 16,
                 max_pdu: int = 0) -> None:
        self.flow_id = flow_id & 0xFFFF
        self.direction = Direction(direction)
        self.lcid = lcid
        self.mcs = mcs
        self.max_pdu = max_pdu
        self.pdcp_seq = 0
        self.rlc_sn = 0
        self.mac_seq = 0
        self.phy_seq = 0

    def frame(self, payload: bytes, mcs: int | None = None) -> Bitstream:
        mcs = self.mcs if mcs is None else mcs
        dl = FLAG_DL if self.direction is Direction.DOWNLINK else 0
        hdrs = (LayerHeader(Layer.PDCP, dl, self.flow_id, self.pdcp_seq, 0).pack()
                + LayerHeader(Layer.RLC, dl | FLAG_LAST, self.max_pdu, self.rlc_sn, 0,
                              offset=0, sdu_len=len(payload)).pack()
                + LayerHeader(Layer.MAC, dl, self.lcid, self.mac_seq, 0).pack()
                + LayerHeader(Layer.PHY, dl, 0, self.phy_seq, 0, mcs=mcs,
                              prb=min(0xFFFF, prb_for(len(payload), mcs))).pack())
        self.pdcp_seq = (self.pdcp_seq + 1) & 0xFFFFFFFF
        self.rlc_sn = (self.rlc_sn + 1) & 0xFFFFFFFF
        self.mac_seq = (self.mac_seq + 1) & 0xFFFFFFFF
        self.phy_seq = (self.phy_seq + 1) & 0xFFFFFFFF
        return Bitstream(self.direction, self.flow_id, relength(hdrs, len(payload)) + payload)
