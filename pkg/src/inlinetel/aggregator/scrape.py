"""Periodic pull of exposition endpoints into a :class:`TimeSeriesStore`."""

from __future__ import annotations

import json
import logging
import threading
import time
import urllib.error
import urllib.request
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from urllib.parse import urlsplit

from ..telemetry import now_ns
from .expfmt import ParseError, parse_exposition_full
from .store import TimeSeriesStore

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class ScrapeConfig:
    targets: list[str] = field(default_factory=list)
    interval: float = 15.0
    timeout: float = 5.0

    def __post_init__(self) -> None:
        if not (self.interval > self.timeout > 0):
            raise ConfigError(f"need interval > timeout > 0, got {self.interval} / {self.timeout}")
        for t in self.targets:
            parts = urlsplit(t)
            if parts.scheme not in ("http", "https") or not parts.netloc:
                raise ConfigError(f"bad target URL {t!r}")

    @classmethod
    def load(cls, path: str | Path) -> "ScrapeConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls(list(obj.get("targets", [])), float(obj.get("interval", 15.0)),
                   float(obj.get("timeout", 5.0)))


@dataclass
class ScrapeResult:
    target: str
    ok: bool
    ts_ns: int
    samples: int = 0
    reason: str = ""
    duration_s: float = 0.0


def instance_of(target: str) -> str:
    return urlsplit(target).netloc


def target_offset(target: str, interval: float) -> float:
    """Stable per-target phase in ``[0, interval)`` so targets do not all fire at once."""
    return (zlib.crc32(target.encode()) % 1000) / 1000.0 * interval


def scrape_once(store: TimeSeriesStore, target: str, timeout: float = 5.0,
                ts_ns: int | None = None) -> ScrapeResult:
    """Fetch, parse and store one target.

    Every sample is stamped with the scrape start time and labelled with
    ``instance``. A failure leaves the store untouched apart from ``up=0``.
    """
    ts = now_ns() if ts_ns is None else ts_ns
    inst = instance_of(target)
    up_labels = (("instance", inst),)
    t0 = time.perf_counter()
    try:
        with urllib.request.urlopen(target, timeout=timeout) as resp:
            if resp.status != 200:
                raise OSError(f"HTTP {resp.status}")
            body = resp.read().decode("utf-8")
        exp = parse_exposition_full(body)
    except (OSError, urllib.error.URLError, ParseError, UnicodeDecodeError) as exc:
        store.append("up", up_labels, ts, 0.0, "gauge")
        return ScrapeResult(target, False, ts, reason=str(exc), duration_s=time.perf_counter() - t0)
    samples = []
    for s in exp.samples:
        labels = s.labels
        if not any(k == "instance" for k, _ in labels):
            labels = tuple(sorted(labels + up_labels))
        samples.append((s.name, labels, s.value))
    n = store.append_many(samples, ts, exp.types)
    store.append("up", up_labels, ts, 1.0, "gauge")
    return ScrapeResult(target, True, ts, samples=n, duration_s=time.perf_counter() - t0)


class Scraper:
    """One scraping thread per target, each ticking every ``interval`` seconds."""

    def __init__(self, store: TimeSeriesStore, config: ScrapeConfig) -> None:
        self.store = store
        self.config = config
        self.results: list[ScrapeResult] = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    def scrape_all(self, ts_ns: int | None = None) -> list[ScrapeResult]:
        """Scrape every target once, synchronously, at one shared timestamp."""
        ts = now_ns() if ts_ns is None else ts_ns
        out = [scrape_once(self.store, t, self.config.timeout, ts) for t in self.config.targets]
        with self._lock:
            self.results.extend(out)
        return out

    def _loop(self, target: str) -> None:
        interval = self.config.interval
        next_t = time.monotonic() + target_offset(target, interval)
        if self._stop.wait(max(0.0, next_t - time.monotonic())):
            return
        while not self._stop.is_set():
            res = scrape_once(self.store, target, self.config.timeout)
            with self._lock:
                self.results.append(res)
            if not res.ok:
                log.info("scrape %s failed: %s", target, res.reason)
            next_t += interval
            delay = next_t - time.monotonic()
            if delay < 0:
                # Fell behind; skip missed ticks rather than bursting.
                next_t = time.monotonic()
                delay = 0
            if self._stop.wait(delay):
                break

    def start(self) -> "Scraper":
        for t in self.config.targets:
            th = threading.Thread(target=self._loop, args=(t,), name=f"scrape-{instance_of(t)}", daemon=True)
            th.start()
            self._threads.append(th)
        return self

    def stop(self) -> None:
        self._stop.set()
        for th in self._threads:
            th.join()
        self._threads.clear()
