"""Simulated RAN: toy PDCP/RLC/MAC/PHY stacks with per-layer probes."""

from .layers import (MissingSegment, PdcpWindow, RlcReassembler, RlcSegment, StaleSeq, pdcp_reorder,
                     rlc_reassemble, rlc_segment, scramble)
from .node import BaseStation, UserEquipment
from .pipeline import (LAYER_RULES, PHY_STATIC, Bitstream, Direction, Framer, LayerPipeline,
                       ProcessedBitstream)
from .wire import HEADER_SIZE, HeaderParseError, Layer, LayerHeader, parse_header

__all__ = [
    "BaseStation", "Bitstream", "Direction", "Framer", "HEADER_SIZE", "HeaderParseError", "LAYER_RULES",
    "Layer", "LayerHeader", "LayerPipeline", "MissingSegment", "PHY_STATIC", "PdcpWindow",
    "ProcessedBitstream", "RlcReassembler", "RlcSegment", "StaleSeq", "UserEquipment", "parse_header",
    "pdcp_reorder", "rlc_reassemble", "rlc_segment", "scramble",
]
