"""The two-UE testbed: UE1 -> BS1 -> UPF -> BS2 -> UE2, with the CN trio,
per-NE metrics endpoints, a system monitor and the aggregator."""

from __future__ import annotations

import itertools
import logging
import os
import sys
from pathlib import Path
from typing import Callable

from ..aggregator import Aggregator, ScrapeConfig
from ..cn import CoreNetwork
from ..cn.gtp import INNER_HDR, GtpParseError, decap, encap, inner_packet, ip_to_int
from ..dpi import DpiCapture
from ..exposition import MetricsServer, probe_source
from ..probe import ProbeConfig
from ..ran import BaseStation, UserEquipment
from ..sysmon import DeploymentManifest, PodSpec, SystemMonitor
from .config import TopologyConfig

log = logging.getLogger(__name__)


class AttachFailed(RuntimeError):
    pass


class Testbed:
    """Builds and owns every component of one run.

    ``probes`` overrides the config; ``dpi`` taps the UPF with the
    out-of-band baseline; ``serve`` starts metrics endpoints and the
    aggregator.
    """

    def __init__(self, config: TopologyConfig, out_dir: str | Path, probes: bool | None = None,
                 dpi: bool = False, serve: bool = True) -> None:
        self.config = config
        self.out_dir = Path(out_dir)
        self.sink_dir = self.out_dir / "telemetry"
        self.probes = config.probes if probes is None else probes
        ps = config.probe
        pcfg = ProbeConfig(self.sink_dir, ps.capacity, ps.flush_interval, ps.granularity)
        self.probe_config = pcfg
        self.core = CoreNetwork(self.sink_dir, self.probes, pcfg, config.amf, config.smf, config.upf)
        bs_ul, bs_dl = config.base_stations
        self.bs_ul = BaseStation(bs_ul, self.sink_dir, self.probes, pcfg, config.mcs, config.max_pdu)
        self.bs_dl = BaseStation(bs_dl, self.sink_dir, self.probes, pcfg, config.mcs, config.max_pdu)
        self.client = UserEquipment(config.ues[0], 1, config.mcs, config.max_pdu)
        self.server = UserEquipment(config.ues[1], 2, config.mcs, config.max_pdu)
        self.dpi = DpiCapture(config.upf, self.sink_dir, interval=ps.flush_interval) if dpi else None
        self.serve = serve
        self.sessions: dict[str, dict] = {}
        self._dl_route: dict[int, UserEquipment] = {}
        self._pkt_ids = itertools.count()
        self.sent_bytes = 0
        self.recv_bytes = 0
        self.on_receive: Callable[[int], None] | None = None
        self.servers: dict[str, MetricsServer] = {}
        self.sysmon: SystemMonitor | None = None
        self.aggregator: Aggregator | None = None
        self._started = False
        self._saved_switch: float | None = None

    # lifecycle

    def start(self) -> "Testbed":
        if self.config.switch_interval > 0 and self._saved_switch is None:
            self._saved_switch = sys.getswitchinterval()
            sys.setswitchinterval(self.config.switch_interval)
        self.core.start()
        self.bs_ul.start()
        self.bs_dl.start()
        if self.dpi is not None:
            self.core.upf.capture = self.dpi
            self.dpi.start()
        if self.serve:
            self._serve()
        self._started = True
        return self

    def _serve(self) -> None:
        cfg = self.config
        ports = cfg.ports
        self.servers.update({n: MetricsServer(probe_source(p), cfg.host, ports.get(n, 0)).start()
                             for n, p in self.core.probes.items()})
        for bs in (self.bs_ul, self.bs_dl):
            if bs.probe is not None:
                self.servers[bs.name] = MetricsServer(probe_source(bs.probe), cfg.host, ports.get(bs.name, 0)).start()
        if cfg.sysmon:
            pods = [PodSpec(n, 1000, 512 << 20, True, os.getpid())
                    for n in (cfg.amf, cfg.smf, cfg.upf) + cfg.base_stations]
            self.sysmon = SystemMonitor(DeploymentManifest(pods), cfg.scrape_interval,
                                        synthetic_rx=lambda: self.recv_bytes).start()
            self.servers["sysmon"] = MetricsServer(self.sysmon.snapshot, cfg.host, ports.get("sysmon", 0)).start()
        targets = [s.url for s in self.servers.values()]
        self.aggregator = Aggregator(ScrapeConfig(targets, cfg.scrape_interval, cfg.scrape_timeout),
                                     cfg.host, cfg.aggregator_port).start()

    def stop(self) -> None:
        # Traffic is the caller's; then NEs, collectors (drained in stop), endpoints, aggregator.
        self.core.stop()
        self.bs_ul.stop()
        self.bs_dl.stop()
        if self.dpi is not None:
            self.dpi.stop()
        if self.sysmon is not None:
            self.sysmon.stop()
        for s in self.servers.values():
            s.stop()
        self.servers.clear()
        if self.aggregator is not None:
            self.aggregator.stop()
        if self._saved_switch is not None:
            sys.setswitchinterval(self._saved_switch)
            self._saved_switch = None
        self._started = False

    def __enter__(self) -> "Testbed":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def quiesce(self) -> None:
        self.core.quiesce()
        for bs in (self.bs_ul, self.bs_dl):
            if bs.probe is not None:
                bs.probe.quiesce()

    @property
    def endpoints(self) -> dict[str, str]:
        out = {n: s.url for n, s in self.servers.items()}
        if self.aggregator is not None:
            out["aggregator"] = self.aggregator.url
        return out

    # control plane

    def attach(self) -> dict[str, dict]:
        """Register both UEs and open one PDU session each."""
        cfg = self.config
        self.core.amf.provision(list(cfg.ues))
        for ue in (self.client, self.server):
            rsp = self.core.request(cfg.amf, "registration", {"supi": ue.name})
            if not rsp.ok:
                raise AttachFailed(f"{ue.name}: registration {rsp.result}: {rsp.cause}")
            rsp = self.core.request(cfg.smf, "pdu_session_create", {"supi": ue.name, "psi": 1})
            if not rsp.ok:
                raise AttachFailed(f"{ue.name}: PDU session {rsp.result}: {rsp.cause}")
            sess = dict(rsp.body)
            sess["ue_ip_int"] = ip_to_int(sess["ue_ip"])
            self.sessions[ue.name] = sess
            self._dl_route[int(sess["dl_teid"])] = ue
        return self.sessions

    # user plane

    def send(self, payload: bytes) -> int:
        """Push one datagram from the client UE to the server UE; returns
        the payload bytes delivered."""
        src = self.sessions[self.client.name]
        dst = self.sessions[self.server.name]
        pkt = inner_packet(src["ue_ip_int"], dst["ue_ip_int"], self.client.flow_id, next(self._pkt_ids), payload)
        self.sent_bytes += len(payload)
        got = 0
        for frame in self.client.send(pkt):
            for sdu in self.bs_ul.receive(frame):
                out = self.core.upf.forward(encap(src["ul_teid"], sdu))
                if out.packet is None:
                    continue
                try:
                    teid, body = decap(out.packet)
                except GtpParseError:
                    continue
                ue = self._dl_route.get(teid)
                if ue is None:
                    continue
                for f2 in self.bs_dl.transmit(ue.flow_id, body):
                    for ip in ue.receive(f2):
                        got += len(ip) - INNER_HDR.size
        if got:
            self.recv_bytes += got
            if self.on_receive is not None:
                self.on_receive(got)
        return got
