"""Base stations and UEs built from two layer pipelines each."""

from __future__ import annotations

from pathlib import Path

from ..probe import Probe, ProbeConfig
from .pipeline import Direction, Framer, LayerPipeline


class BaseStation:
    """Receives uplink air frames and transmits downlink ones.

    Both pipelines are instrumented when ``probes`` is true.
    """

    def __init__(self, name: str, sink_dir: str | Path | None = None, probes: bool = True,
                 probe_config: ProbeConfig | None = None, mcs: int = 16, max_pdu: int = 0) -> None:
        self.name = name
        self.probe: Probe | None = None
        if probes:
            cfg = probe_config or ProbeConfig(sink_dir or "telemetry")
            if sink_dir is not None:
                cfg = ProbeConfig(sink_dir, cfg.capacity, cfg.flush_interval, cfg.granularity, cfg.fsync)
            self.probe = Probe(name, cfg)
        self.ul_rx = LayerPipeline(name, "rx", Direction.UPLINK, self.probe)
        self.dl_tx = LayerPipeline(name, "tx", Direction.DOWNLINK, self.probe)
        self.mcs = mcs
        self.max_pdu = max_pdu
        self._framers: dict[int, Framer] = {}

    def receive(self, frame: bytes) -> list[bytes]:
        return self.ul_rx.process_bitstream(frame).outputs

    def transmit(self, flow_id: int, payload: bytes) -> list[bytes]:
        fr = self._framers.get(flow_id)
        if fr is None:
            fr = self._framers[flow_id] = Framer(flow_id, Direction.DOWNLINK, mcs=self.mcs, max_pdu=self.max_pdu)
        return self.dl_tx.process_bitstream(fr.frame(payload)).outputs

    def start(self) -> "BaseStation":
        if self.probe is not None:
            self.probe.start()
        return self

    def stop(self) -> None:
        if self.probe is not None:
            self.probe.stop()


class UserEquipment:
    """Uninstrumented endpoint: uplink transmit and downlink receive."""

    def __init__(self, name: str, flow_id: int, mcs: int = 16, max_pdu: int = 0) -> None:
        self.name = name
        self.flow_id = flow_id
        self.framer = Framer(flow_id, Direction.UPLINK, mcs=mcs, max_pdu=max_pdu)
        self.ul_tx = LayerPipeline(name, "tx", Direction.UPLINK)
        self.dl_rx = LayerPipeline(name, "rx", Direction.DOWNLINK)
        self.received: list[bytes] = []
        self.keep = False

    def send(self, payload: bytes) -> list[bytes]:
        return self.ul_tx.process_bitstream(self.framer.frame(payload)).outputs

    def receive(self, frame: bytes) -> list[bytes]:
        out = self.dl_rx.process_bitstream(frame).outputs
        if self.keep:
            self.received.extend(out)
        return out
