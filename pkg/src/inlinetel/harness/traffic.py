"""iperf-like constant-bitrate traffic shaped by a token bucket."""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass, field

TICK = 0.01  # token bucket granularity, seconds


@dataclass(frozen=True)
class TrafficSpec:
    client_ue: str
    server_ue: str
    preset_bitrate: float  # bits/s
    duration: float        # seconds
    seed: int = 0
    packet_size: int = 1200


def draw_bitrate(rng: random.Random, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    return rng.uniform(lo, hi)


def make_spec(seed: int, duration: float, bounds=(0.5e6, 20e6), client_ue: str = "ue-1",
              server_ue: str = "ue-2", packet_size: int = 1200) -> TrafficSpec:
    """A spec with the preset bitrate drawn uniformly from ``bounds``."""
    rng = random.Random(seed)
    return TrafficSpec(client_ue, server_ue, draw_bitrate(rng, bounds), duration, seed, packet_size)


def ar1_bitrates(n: int, seed: int, bounds=(0.5e6, 20e6), phi: float = 0.3,
                 sigma_frac: float = 0.2) -> list[float]:
    """``n`` preset bitrates following a clipped AR(1) around the bounds' midpoint."""
    lo, hi = bounds
    mu = (lo + hi) / 2
    sigma = sigma_frac * (hi - lo)
    rng = random.Random(seed)
    x = mu
    out = []
    for _ in range(n):
        x = mu + phi * (x - mu) + rng.gauss(0.0, sigma)
        out.append(min(hi, max(lo, x)))
    return out


class TokenBucket:
    """Refilled every tick; allows bursts of at most ``burst`` bytes."""

    def __init__(self, rate_bps: float, burst: float, tick: float = TICK) -> None:
        self.rate = rate_bps / 8.0
        self.burst = burst
        self.tick = tick
        self.tokens = 0.0

    def refill(self) -> None:
        self.tokens = min(self.burst, self.tokens + self.rate * self.tick)

    def take(self, n: int) -> bool:
        if self.tokens >= n:
            self.tokens -= n
            return True
        return False


@dataclass
class TrafficReport:
    preset_bitrate: float = 0.0
    duration: float = 0.0
    sent_bytes: int = 0
    recv_bytes: int = 0
    sent_packets: int = 0
    achieved_bps_timeline: list[float] = field(default_factory=list)  # per second, at the server

    @property
    def achieved_bps(self) -> float:
        return self.recv_bytes * 8 / self.duration if self.duration > 0 else 0.0

    def to_json(self) -> dict:
        return {"preset_bitrate": self.preset_bitrate, "duration": self.duration, "sent_bytes": self.sent_bytes,
                "recv_bytes": self.recv_bytes, "sent_packets": self.sent_packets,
                "achieved_bps": self.achieved_bps, "achieved_bps_timeline": self.achieved_bps_timeline}


def run_traffic(testbed, spec: TrafficSpec, clock=time.monotonic, sleep=time.sleep) -> TrafficReport:
    """Send ``spec`` through an attached testbed in real time.

    Every 10 ms the bucket is refilled and as many packets as it allows are
    sent. Received bytes are binned per second since the start.
    """
    report = TrafficReport(spec.preset_bitrate, spec.duration)
    if spec.duration <= 0:
        return report
    if not testbed.sessions:
        from .topology import AttachFailed
        raise AttachFailed("UEs are not attached")
    nbins = math.ceil(spec.duration)
    bins = [0] * nbins
    size = spec.packet_size
    payload = random.Random(spec.seed).randbytes(size)
    bucket = TokenBucket(spec.preset_bitrate, max(size, spec.preset_bitrate / 8 * TICK * 2))
    t0 = clock()
    end = t0 + spec.duration
    ticks = 0
    while True:
        now = clock()
        if now >= end:
            break
        bucket.refill()
        while bucket.take(size):
            got = testbed.send(payload)
            report.sent_bytes += size
            report.sent_packets += 1
            if got:
                k = min(nbins - 1, int(clock() - t0))
                bins[k] += got
                report.recv_bytes += got
        ticks += 1
        delay = t0 + ticks * TICK - clock()
        if delay > 0:
            sleep(delay)
    report.achieved_bps_timeline = [b * 8.0 for b in bins]
    if nbins > spec.duration:
        report.achieved_bps_timeline[-1] /= spec.duration - (nbins - 1)
    return report
