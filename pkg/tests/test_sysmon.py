import json
import os
import subprocess
import sys
import time

import pytest

from inlinetel.exposition import render
from inlinetel.aggregator.expfmt import parse_exposition
from inlinetel.sysmon import (
    DeploymentManifest, ManifestError, NoSuchProcess, PodSpec, ProcessSample, SystemMonitor,
    export_system_metrics, main, parse_cpu, parse_memory, sample_process,
)
from inlinetel.telemetry import default_registry


def test_cpu_grows_under_load():
    a = sample_process(os.getpid())
    t = time.process_time() + 0.1
    while time.process_time() < t:
        pass
    b = sample_process(os.getpid())
    assert b.cpu_seconds_total > a.cpu_seconds_total and b.memory_bytes > 0


def test_idle_child_is_cheap():
    p = subprocess.Popen([sys.executable, "-c", "import time; time.sleep(5)"])
    try:
        time.sleep(0.2)
        assert sample_process(p.pid).cpu_seconds_total < 0.5
    finally:
        p.kill()
        p.wait()


def test_dead_pid():
    p = subprocess.Popen([sys.executable, "-c", "pass"])
    p.wait()
    with pytest.raises(NoSuchProcess):
        sample_process(p.pid)


@pytest.mark.parametrize("q,m", [("500m", 500), ("2", 2000), ("0.25", 250), (1, 1000)])
def test_parse_cpu(q, m):
    assert parse_cpu(q) == m


@pytest.mark.parametrize("q,b", [("128Mi", 128 * 2**20), ("1Gi", 2**30), ("1k", 1000), ("77", 77)])
def test_parse_memory(q, b):
    assert parse_memory(q) == b


@pytest.mark.parametrize("bad", ["x", "-1", "5m5"])
def test_bad_quantities(bad):
    with pytest.raises(ManifestError):
        parse_cpu(bad) if bad != "5m5" else parse_memory(bad)


def manifest():
    return DeploymentManifest.from_json({"pods": [
        {"name": "amf-0", "limits": {"cpu": "500m", "memory": "256Mi"}, "status": "ready"},
        {"name": "upf-0", "limits": {"cpu": "1", "memory": "1Gi"}, "status": "not_ready"},
    ]})


def test_export_mapping():
    s = {"amf-0": ProcessSample(1, 1.5, 100, 1), "upf-0": ProcessSample(2, 2.5, 200, 1)}
    got = dict(export_system_metrics(s, manifest(), rx_bytes=10, synthetic_rx=True))
    assert got[("kube_pod_container_status_ready", (("pod", "amf-0"),))] == 1
    assert got[("kube_pod_container_status_ready", (("pod", "upf-0"),))] == 0
    assert got[("kube_pod_container_resource_limits", (("pod", "amf-0"), ("resource", "cpu")))] == 0.5
    assert got[("kube_pod_container_resource_limits", (("pod", "amf-0"), ("resource", "memory")))] == 256 * 2**20
    cpu = [k for k in got if k[0] == "container_cpu_usage_seconds_total"]
    assert sorted(l for _, l in cpu) == [(("pod", "amf-0"),), (("pod", "upf-0"),)]
    assert got[("node_network_receive_bytes_total", (("synthetic", "true"),))] == 10


def test_exported_names_registered():
    s = {"amf-0": ProcessSample(1, 1.0, 1, 1)}
    reg = default_registry()
    assert all(name in reg for (name, _), _ in export_system_metrics(s, manifest(), 5))


def test_manifest_errors(tmp_path):
    with pytest.raises(ManifestError):
        DeploymentManifest([PodSpec("a", 1, 1), PodSpec("a", 1, 1)])
    with pytest.raises(ManifestError):
        DeploymentManifest.from_json({"pods": [{"limits": {}}]})
    with pytest.raises(ManifestError):
        DeploymentManifest.from_json({"pods": [{"name": "a", "status": "sleepy"}]})
    with pytest.raises(ManifestError):
        DeploymentManifest.load(tmp_path / "missing.json")


def test_monitor_monotone_and_renderable():
    m = DeploymentManifest([PodSpec("self", 500, 2**30, True, os.getpid())])
    mon = SystemMonitor(m, synthetic_rx=lambda: 42)
    first = dict(mon.sample())
    x = 0
    for i in range(200_000):
        x += i
    second = dict(mon.sample())
    key = ("container_cpu_usage_seconds_total", (("pod", "self"),))
    assert second[key] >= first[key]
    assert mon.peak_memory["self"] > 0
    assert parse_exposition(render(mon.snapshot()))


def test_monitor_thread():
    m = DeploymentManifest([PodSpec("self", 500, 2**30, True, os.getpid())])
    mon = SystemMonitor(m, interval=0.02).start()
    time.sleep(0.1)
    mon.stop()
    assert "self" in mon.samples


def test_cli_bad_manifest(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"pods": [{"name": "a", "limits": {"cpu": "lots"}}]}))
    assert main(["--manifest", str(p)]) == 2
