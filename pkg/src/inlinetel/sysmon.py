"""System-status source: per-process resource usage dressed as container and
pod metrics, plus static pod facts from a JSON deployment manifest.

Manifest layout::

    {"pods": [{"name": "upf-0", "status": "ready", "pid": 1234,
               "limits": {"cpu": "500m", "memory": "256Mi"}}]}

``pid`` is optional; pods without one are reported from the manifest only.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import psutil

from .exposition import Entry, MetricsServer
from .telemetry import default_registry, now_ns

log = logging.getLogger(__name__)

KpiId = tuple  # (name, labels)


class NoSuchProcess(LookupError):
    def __init__(self, pid: int) -> None:
        super().__init__(f"no such process: {pid}")
        self.pid = pid


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ProcessSample:
    pid: int
    cpu_seconds_total: float
    memory_bytes: int
    timestamp_ns: int


def sample_process(pid: int) -> ProcessSample:
    """Cumulative user+system CPU and resident memory of ``pid``."""
    try:
        p = psutil.Process(pid)
        with p.oneshot():
            ct = p.cpu_times()
            rss = p.memory_info().rss
    except (psutil.NoSuchProcess, psutil.ZombieProcess):
        raise NoSuchProcess(pid) from None
    return ProcessSample(pid, ct.user + ct.system, int(rss), now_ns())


_MEM_UNITS = {"": 1, "k": 10**3, "m": 10**6, "g": 10**9, "ki": 2**10, "mi": 2**20, "gi": 2**30}


def parse_cpu(value) -> int:
    """Kubernetes CPU quantity to millicores: ``"500m"`` -> 500, ``"2"`` -> 2000."""
    s = str(value).strip()
    try:
        if s.endswith("m"):
            n = int(s[:-1])
        else:
            n = round(float(s) * 1000)
    except ValueError:
        raise ManifestError(f"bad cpu quantity {value!r}") from None
    if n < 0:
        raise ManifestError(f"negative cpu quantity {value!r}")
    return n


def parse_memory(value) -> int:
    m = re.fullmatch(r"(\d+)([kKmMgG]i?)?", str(value).strip())
    if not m:
        raise ManifestError(f"bad memory quantity {value!r}")
    return int(m.group(1)) * _MEM_UNITS[(m.group(2) or "").lower()]


@dataclass
class PodSpec:
    name: str
    cpu_millicores: int
    memory_bytes: int
    ready: bool = True
    pid: int | None = None


@dataclass
class DeploymentManifest:
    pods: list[PodSpec] = field(default_factory=list)

    def __post_init__(self) -> None:
        names = [p.name for p in self.pods]
        if len(set(names)) != len(names):
            raise ManifestError("pod names must be unique")

    @classmethod
    def from_json(cls, obj: dict) -> "DeploymentManifest":
        pods = []
        for i, p in enumerate(obj.get("pods", [])):
            try:
                limits = p.get("limits", {})
                status = p.get("status", "ready")
                if status not in ("ready", "not_ready"):
                    raise ManifestError(f"pod {i}: status must be ready or not_ready")
                pods.append(PodSpec(p["name"], parse_cpu(limits.get("cpu", "0")),
                                    parse_memory(limits.get("memory", "0")), status == "ready", p.get("pid")))
            except KeyError as exc:
                raise ManifestError(f"pod {i}: missing {exc}") from None
        return cls(pods)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "DeploymentManifest":
        try:
            obj = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ManifestError(f"{path}: {exc}") from None
        return cls.from_json(obj)


def host_network_rx_bytes() -> int | None:
    try:
        c = psutil.net_io_counters()
    except (OSError, RuntimeError):
        return None
    return None if c is None else int(c.bytes_recv)


def export_system_metrics(samples: dict[str, ProcessSample], manifest: DeploymentManifest,
                          rx_bytes: int | None = None, synthetic_rx: bool = False) -> list[tuple[KpiId, float]]:
    """Map samples (keyed by pod name) and the manifest onto KPI series."""
    out: list[tuple[KpiId, float]] = []
    for pod in sorted(samples):
        s = samples[pod]
        lab = (("pod", pod),)
        out.append((("container_cpu_usage_seconds_total", lab), s.cpu_seconds_total))
        out.append((("container_memory_usage_bytes", lab), float(s.memory_bytes)))
    for p in manifest.pods:
        out.append((("kube_pod_container_status_ready", (("pod", p.name),)), 1.0 if p.ready else 0.0))
        out.append((("kube_pod_container_resource_limits", (("pod", p.name), ("resource", "cpu"))),
                    p.cpu_millicores / 1000.0))
        out.append((("kube_pod_container_resource_limits", (("pod", p.name), ("resource", "memory"))),
                    float(p.memory_bytes)))
    if rx_bytes is not None:
        lab = (("synthetic", "true"),) if synthetic_rx else ()
        out.append((("node_network_receive_bytes_total", lab), float(rx_bytes)))
    return out


class SystemMonitor:
    """Samples every pod with a pid on its own thread.

    ``synthetic_rx`` is a callable returning a byte count, used for the node
    receive counter when the host has no interface counters.
    """

    def __init__(self, manifest: DeploymentManifest, interval: float = 1.0, synthetic_rx=None) -> None:
        self.manifest = manifest
        self.interval = interval
        self.synthetic_rx = synthetic_rx
        self.samples: dict[str, ProcessSample] = {}
        self._export: list[tuple[KpiId, float]] = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.peak_memory: dict[str, int] = {}

    def sample(self) -> list[tuple[KpiId, float]]:
        fresh = dict(self.samples)
        for p in self.manifest.pods:
            if p.pid is None:
                continue
            try:
                s = sample_process(p.pid)
            except NoSuchProcess:
                log.debug("pod %s: pid %d gone", p.name, p.pid)
                continue
            prev = fresh.get(p.name)
            if prev is not None and prev.pid == s.pid and s.cpu_seconds_total < prev.cpu_seconds_total:
                s = ProcessSample(s.pid, prev.cpu_seconds_total, s.memory_bytes, s.timestamp_ns)
            fresh[p.name] = s
            self.peak_memory[p.name] = max(self.peak_memory.get(p.name, 0), s.memory_bytes)
        rx = host_network_rx_bytes()
        synthetic = False
        if rx is None and self.synthetic_rx is not None:
            rx, synthetic = int(self.synthetic_rx()), True
        exp = export_system_metrics(fresh, self.manifest, rx, synthetic)
        with self._lock:
            self.samples = fresh
            self._export = exp
        return exp

    def snapshot(self) -> list[Entry]:
        """Exposition entries for the latest export."""
        reg = default_registry()
        with self._lock:
            exp = list(self._export)
        return [Entry(reg.get(name), labels, value) for (name, labels), value in exp]

    def _run(self) -> None:
        while True:
            try:
                self.sample()
            except Exception:
                log.exception("system sample failed")
            if self._stop.wait(self.interval):
                return

    def start(self) -> "SystemMonitor":
        if self._thread is None:
            self._stop.clear()
            self._thread = threading.Thread(target=self._run, name="sysmon", daemon=True)
            self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
            self._thread = None


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="inlinetel-sysmon", description="Serve system-status metrics.")
    ap.add_argument("--manifest", required=True, help="deployment manifest (JSON)")
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=9101)
    ap.add_argument("--interval", type=float, default=1.0)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        manifest = DeploymentManifest.load(args.manifest)
    except ManifestError as exc:
        log.error("%s", exc)
        return 2
    mon = SystemMonitor(manifest, args.interval).start()
    srv = MetricsServer(mon.snapshot, args.host, args.port).start()
    log.info("serving %s", srv.url)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        srv.stop()
        mon.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
