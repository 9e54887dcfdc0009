"""The AMF/SMF/UPF trio on one bus, each with its own probe and endpoint."""

from __future__ import annotations

from pathlib import Path

from ..exposition import MetricsServer, probe_source
from ..probe import Probe, ProbeConfig
from .amf import Amf
from .sbi import SbiBus, SbiResponse
from .smf import Smf
from .upf import Upf


class CoreNetwork:
    def __init__(self, sink_dir: str | Path | None = None, probes: bool = True,
                 probe_config: ProbeConfig | None = None, amf: str = "amf-0", smf: str = "smf-0",
                 upf: str = "upf-0", bus_timeout: float = 5.0) -> None:
        self.bus = SbiBus(bus_timeout)
        self.probes: dict[str, Probe] = {}
        if probes:
            cfg = probe_config or ProbeConfig(sink_dir or "telemetry")
            if sink_dir is not None:
                cfg = ProbeConfig(sink_dir, cfg.capacity, cfg.flush_interval, cfg.granularity, cfg.fsync)
            self.probes = {n: Probe(n, cfg) for n in (amf, smf, upf)}
        self.amf = Amf(amf, self.bus, self.probes.get(amf))
        self.smf = Smf(smf, self.bus, self.probes.get(smf), amf=amf, upf=upf)
        self.upf = Upf(upf, self.bus, self.probes.get(upf), smf=smf)
        self.servers: dict[str, MetricsServer] = {}
        self._started = False

    @property
    def nfs(self):
        return (self.amf, self.smf, self.upf)

    def start(self) -> "CoreNetwork":
        for p in self.probes.values():
            p.start()
        for nf in self.nfs:
            nf.start()
        self._started = True
        return self

    def serve_metrics(self, host: str = "127.0.0.1", ports: dict | None = None) -> dict[str, str]:
        """Start one ``/metrics`` endpoint per NF; returns name -> URL."""
        ports = ports or {}
        for name, p in self.probes.items():
            if name not in self.servers:
                self.servers[name] = MetricsServer(probe_source(p), host, ports.get(name, 0)).start()
        return {n: s.url for n, s in self.servers.items()}

    def request(self, producer: str, service: str, payload: dict | None = None,
                consumer: str = "driver") -> SbiResponse:
        return self.bus.call(consumer, producer, service, payload)

    def quiesce(self) -> None:
        """Flush every collector once; call only while no requests are in flight."""
        for p in self.probes.values():
            p.quiesce()

    def counters(self) -> dict[str, float]:
        """Per-KPI totals across all NFs."""
        out: dict[str, float] = {}
        for p in self.probes.values():
            for name, _, v in p.table.snapshot():
                out[name] = out.get(name, 0.0) + v
        return out

    def stop(self) -> None:
        # Shutdown order: NFs first, then collectors drain, then endpoints.
        if self._started:
            for nf in self.nfs:
                nf.stop()
        for p in self.probes.values():
            p.stop()
        for s in self.servers.values():
            s.stop()
        self.servers.clear()
        self._started = False

    def __enter__(self) -> "CoreNetwork":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
