"""The three comparisons: record-availability latency, resource overhead and
traffic prediction."""

from __future__ import annotations

import json
import logging
import os
import random
import socket
import subprocess
import sys
import threading
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from ..cn.gtp import encode_gpdu
from ..dpi import HEADER_FIELDS, LatencyReport, compare_latency
from ..sysmon import NoSuchProcess, sample_process
from .config import TopologyConfig
from .predict import (DEFAULT_FEATURES, UPF_BYTE_RATE, CorrelationReport, DegenerateDesign, PredictionRun,
                      correlation_rank, fetch_tabular, fit_baseline_predictor, prediction_loop)
from .topology import Testbed
from .traffic import TICK, TokenBucket, TrafficSpec, ar1_bitrates, run_traffic

log = logging.getLogger(__name__)


# latency


@dataclass
class LatencyRun:
    report: LatencyReport
    fields_equal: bool
    inline_records: int
    dpi_records: int
    seed: int


def run_latency_experiment(config: TopologyConfig, out_dir: str | Path, seed: int = 0,
                           bitrate: float = 5e6, duration: float = 60.0) -> LatencyRun:
    """Drive fixed-rate traffic through a UPF carrying both the inline probe
    and the out-of-band tap, then match per-packet latencies."""
    tb = Testbed(config, out_dir, probes=True, dpi=True, serve=False)
    inline: dict[int, tuple] = {}
    inline_fields: dict[int, tuple] = {}

    def on_flush(batch, t_stored):
        for r in batch:
            if r.event == "n3_packet":
                f = dict(r.fields)
                if "pkt_id" in f:
                    inline[f["pkt_id"]] = (f["pkt_id"], r.timestamp_ns, t_stored)
                    inline_fields[f["pkt_id"]] = tuple(f[k] for k in HEADER_FIELDS)

    tb.core.probes[config.upf].collectors[f"cn/{config.upf}"].on_flush = on_flush
    tb.start()
    try:
        tb.attach()
        run_traffic(tb, TrafficSpec(config.ues[0], config.ues[1], bitrate, duration, seed, config.packet_size))
    finally:
        tb.stop()
    dpi_recs = tb.dpi.records
    report = compare_latency(inline.values(), dpi_recs)
    dpi_fields = {r.pkt_id: tuple(r.fields[k] for k in HEADER_FIELDS) for r in dpi_recs if not r.error}
    return LatencyRun(report, dpi_fields == inline_fields, len(inline), len(dpi_recs), seed)


# overhead


class LoadGeneratorSaturated(RuntimeError):
    pass


@dataclass
class VariantUsage:
    variant: str
    cpu_seconds: float
    peak_memory_bytes: int
    received: int = 0
    forwarded: int = 0


@dataclass
class OverheadReport:
    variants: dict[str, VariantUsage]
    offered_bps: float
    achieved_bps: float
    duration: float
    saturated: bool = False

    def _pct(self, attr: str, a: str, b: str) -> float:
        x = getattr(self.variants[a], attr)
        y = getattr(self.variants[b], attr)
        return 0.0 if y == 0 else (x - y) / y * 100.0

    @property
    def cpu_reduction_pct(self) -> float:
        """(dpi - inline) / dpi, in percent."""
        return -self._pct("cpu_seconds", "inline", "dpi")

    @property
    def memory_reduction_pct(self) -> float:
        return -self._pct("peak_memory_bytes", "inline", "dpi")

    @property
    def inline_cpu_overhead_pct(self) -> float:
        """(inline - plain) / plain, in percent."""
        return self._pct("cpu_seconds", "inline", "plain")

    @property
    def inline_memory_overhead_pct(self) -> float:
        return self._pct("peak_memory_bytes", "inline", "plain")

    def to_json(self) -> dict:
        return {"offered_bps": self.offered_bps, "achieved_bps": self.achieved_bps, "duration": self.duration,
                "saturated": self.saturated,
                "variants": {k: vars(v) for k, v in self.variants.items()},
                "cpu_reduction_pct": self.cpu_reduction_pct, "memory_reduction_pct": self.memory_reduction_pct,
                "inline_cpu_overhead_pct": self.inline_cpu_overhead_pct,
                "inline_memory_overhead_pct": self.inline_memory_overhead_pct}


class _Worker:
    def __init__(self, variant: str, sink: Path, flush_interval: float) -> None:
        self.variant = variant
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "inlinetel.harness.upf_worker", "--variant", variant, "--sink", str(sink),
             "--flush-interval", str(flush_interval)],
            stdout=subprocess.PIPE, text=True)
        line = self.proc.stdout.readline().split()
        if not line or line[0] != "READY":
            self.proc.kill()
            raise RuntimeError(f"{variant} worker failed to start: {' '.join(line)}")
        self.port, self.teid, self.src, self.dst = (int(v) for v in line[1:5])
        self.peak = 0
        self.cpu0 = 0.0

    def sample(self):
        s = sample_process(self.proc.pid)
        self.peak = max(self.peak, s.memory_bytes)
        return s

    def finish(self) -> dict:
        try:
            out, _ = self.proc.communicate(timeout=60)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            return {}
        lines = [ln for ln in out.splitlines() if ln.startswith("{")]
        return json.loads(lines[-1]) if lines else {}


def run_overhead_experiment(config: TopologyConfig, out_dir: str | Path, seed: int = 0, bitrate: float = 5e6,
                            duration: float = 60.0, flush_interval: float = 1.0,
                            variants=("plain", "inline", "dpi")) -> OverheadReport:
    """Replay one seeded packet sequence into each UPF variant process and
    compare CPU-seconds and peak RSS over the traffic phase.

    Every packet goes to all variants back to back, so they see identical
    traffic at the same offered load.
    """
    out_dir = Path(out_dir)
    workers = [_Worker(v, out_dir / f"overhead-{v}", flush_interval) for v in variants]
    stop = threading.Event()

    def poll():
        while not stop.wait(0.05):
            for w in workers:
                try:
                    w.sample()
                except NoSuchProcess:
                    pass

    try:
        time.sleep(0.5)  # let startup settle before the baseline sample
        for w in workers:
            w.cpu0 = w.sample().cpu_seconds_total
        poller = threading.Thread(target=poll, daemon=True)
        poller.start()
        rng = random.Random(seed)
        size = config.packet_size
        payload = rng.randbytes(size)
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, 4 << 20)
        bucket = TokenBucket(bitrate, max(size, bitrate / 8 * TICK * 2))
        sent = 0
        t0 = time.monotonic()
        ticks = 0
        while time.monotonic() - t0 < duration:
            bucket.refill()
            while bucket.take(size):
                for w in workers:
                    pkt = encode_gpdu(w.teid, w.src, w.dst, 1, sent, payload)
                    sock.sendto(pkt, (config.host, w.port))
                sent += 1
            ticks += 1
            delay = t0 + ticks * TICK - time.monotonic()
            if delay > 0:
                time.sleep(delay)
        elapsed = time.monotonic() - t0
        # Deferred work (collector flushes, dissection) finishes within two intervals.
        time.sleep(2 * flush_interval + 0.5)
        usage = {}
        for w in workers:
            s = w.sample()
            usage[w.variant] = VariantUsage(w.variant, s.cpu_seconds_total - w.cpu0, w.peak)
        stop.set()
        poller.join()
        for w in workers:
            sock.sendto(b"STOP", (config.host, w.port))
        for w in workers:
            st = w.finish()
            usage[w.variant].received = int(st.get("received", 0))
            usage[w.variant].forwarded = int(st.get("forwarded", 0))
    finally:
        stop.set()
        for w in workers:
            if w.proc.poll() is None:
                w.proc.kill()
    achieved = sent * size * 8 / elapsed if elapsed > 0 else 0.0
    saturated = duration > 0 and achieved < 0.95 * bitrate
    saturated = saturated or any(u.received < sent for u in usage.values())
    if saturated:
        log.warning("load generator saturated: offered %.0f b/s, achieved %.0f b/s", bitrate, achieved)
    return OverheadReport(usage, bitrate, achieved, elapsed, saturated)


# prediction


@dataclass
class PredictionExperiment:
    run: PredictionRun
    correlation: CorrelationReport
    bitrates: list[float]
    dropped_features: list[str] = field(default_factory=list)

    @property
    def mae(self) -> float:
        return self.run.mae()

    @property
    def naive_mae(self) -> float:
        return self.run.naive_mae()

    @property
    def improvement_pct(self) -> float:
        return (1 - self.mae / self.naive_mae) * 100.0 if self.naive_mae else 0.0


def run_prediction_experiment(config: TopologyConfig, out_dir: str | Path, seed: int = 0, train: int = 60,
                              intervals: int = 30, dt: float = 2.0, phi: float = 0.3,
                              features=DEFAULT_FEATURES) -> PredictionExperiment:
    """Time-compressed loop: one interval per ``dt`` seconds.

    Each interval sends at its own AR(1) preset bitrate. After ``train``
    intervals the model is fitted on (row_k, received_{k+1}) pairs pulled
    from the aggregator; then ``intervals`` rounds of the live loop follow.
    """
    bitrates = ar1_bitrates(train + intervals + 2, seed, config.bitrate_bounds, phi=phi)
    tb = Testbed(config, out_dir, probes=True, serve=True)
    recv_by_interval: dict[int, int] = {}
    t0_box = [0.0]

    def on_receive(n: int) -> None:
        k = int((time.time() - t0_box[0]) // dt)
        recv_by_interval[k] = recv_by_interval.get(k, 0) + n

    def actual(a: float, b: float) -> float:
        k = int(round((a - t0_box[0]) / dt))
        return recv_by_interval.get(k, 0) * 8 / (b - a)

    tb.start()
    try:
        tb.attach()
        tb.on_receive = on_receive
        time.sleep(2 * config.scrape_interval)  # base samples before the first interval
        t0 = t0_box[0] = float(int(time.time()) + 1)
        time.sleep(max(0.0, t0 - time.time()))
        done = threading.Event()

        def traffic():
            size = config.packet_size
            payload = random.Random(seed).randbytes(size)
            for k, rate in enumerate(bitrates):
                if done.is_set():
                    return
                bucket = TokenBucket(rate, max(size, rate / 8 * TICK * 2))
                start = t0 + k * dt
                ticks = 0
                while time.time() < start + dt:
                    bucket.refill()
                    while bucket.take(size):
                        tb.send(payload)
                    ticks += 1
                    delay = start + ticks * TICK - time.time()
                    if delay > 0:
                        time.sleep(delay)

        th = threading.Thread(target=traffic, name="traffic", daemon=True)
        th.start()
        lag = 2 * config.scrape_interval + config.probe.flush_interval + 0.1
        time.sleep(max(0.0, t0 + train * dt + lag - time.time()))
        ds = fetch_tabular(tb.aggregator.url, features, train * dt, dt, int((t0 + train * dt) * 1000))
        y_next = [recv_by_interval.get(k + 1, 0) * 8 / dt for k in range(train - 1)]
        ds.rows = ds.rows[:train - 1]
        ds.missing = ds.missing[:train - 1]
        cur = [recv_by_interval.get(k, 0) * 8 / dt for k in range(train)]
        corr = correlation_rank(ds, cur[:train - 1])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateDesign)
            model = fit_baseline_predictor(ds, y_next)
        for w in caught:
            log.info("%s", w.message)
        run = prediction_loop(tb.aggregator.url, model, dt, features, dt, dt, intervals, actual,
                              start=t0 + (train - 1) * dt, lag=lag)
        done.set()
        th.join()
    finally:
        tb.stop()
    return PredictionExperiment(run, corr, bitrates, model.dropped)


__all__ = ["LatencyRun", "LoadGeneratorSaturated", "OverheadReport", "PredictionExperiment", "VariantUsage",
           "run_latency_experiment", "run_overhead_experiment", "run_prediction_experiment", "UPF_BYTE_RATE"]
