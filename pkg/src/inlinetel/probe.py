"""Inline data path: processing code appends records to a bounded buffer and an
independent collector thread drains it, writes JSON arrays to the record file
and folds the records into exposition counters.

Each :class:`ProbeBuffer` has exactly one producer context; a :class:`Collector`
may drain several buffers (e.g. the uplink and downlink contexts of one RAN
layer) into one record file.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .telemetry import (
    Kind,
    KpiRegistry,
    TelemetryRecord,
    default_registry,
    now_ns,
    serialize_batch,
)

log = logging.getLogger(__name__)

DEFAULT_CAPACITY = 65536
DEFAULT_FLUSH_INTERVAL = 0.1


class ProbeError(Exception):
    pass


class UnknownKpi(ProbeError):
    pass


class ProbeIoError(ProbeError):
    pass


class Granularity(str, Enum):
    FULL_METADATA = "full_metadata"
    KEY_DATA_ONLY = "key_data_only"


class EmitOutcome(Enum):
    ACCEPTED = "accepted"
    DROPPED = "dropped"


ACCEPTED = EmitOutcome.ACCEPTED
DROPPED = EmitOutcome.DROPPED


@dataclass
class ProbeConfig:
    sink_dir: Path = Path("telemetry")
    capacity: int = DEFAULT_CAPACITY
    flush_interval: float = DEFAULT_FLUSH_INTERVAL
    granularity: Granularity = Granularity.FULL_METADATA
    fsync: bool = False

    def __post_init__(self) -> None:
        self.sink_dir = Path(self.sink_dir)
        self.granularity = Granularity(self.granularity)
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if not self.flush_interval > 0:
            raise ValueError("flush_interval must be > 0")


def key_data_only(rec: TelemetryRecord) -> TelemetryRecord:
    """Keep only numeric (non-bool) fields."""
    kept = tuple(kv for kv in rec.fields if type(kv[1]) is int or type(kv[1]) is float)
    if len(kept) == len(rec.fields):
        return rec
    return rec._replace(fields=kept)


class ProbeBuffer:
    """Bounded single-producer/single-consumer FIFO of records.

    ``emit`` never blocks: on a full buffer the new record is dropped and
    counted. ``enqueued`` counts every emit attempt, so at any quiescent point
    ``enqueued == drained + in_queue + dropped``.
    """

    __slots__ = ("capacity", "granularity", "enqueued", "dropped", "drained", "_q", "_strip")

    def __init__(self, capacity: int = DEFAULT_CAPACITY,
                 granularity: Granularity = Granularity.FULL_METADATA) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.granularity = Granularity(granularity)
        self._strip = self.granularity is Granularity.KEY_DATA_ONLY
        self.enqueued = 0
        self.dropped = 0
        self.drained = 0
        # deque.append/popleft are atomic, which is all SPSC needs here.
        self._q: deque = deque()

    def emit(self, rec: TelemetryRecord) -> EmitOutcome:
        self.enqueued += 1
        if len(self._q) >= self.capacity:
            self.dropped += 1
            return DROPPED
        if self._strip:
            rec = key_data_only(rec)
        self._q.append(rec)
        return ACCEPTED

    def drain_batch(self, max_records: int | None = None) -> list[TelemetryRecord]:
        q = self._q
        n = len(q) if max_records is None else min(max_records, len(q))
        popleft = q.popleft
        out = [popleft() for _ in range(n)]
        self.drained += n
        return out

    @property
    def in_queue(self) -> int:
        return len(self._q)

    def __len__(self) -> int:
        return len(self._q)


def emit(probe: ProbeBuffer, rec: TelemetryRecord) -> EmitOutcome:
    return probe.emit(rec)


def drain_batch(probe: ProbeBuffer, max_records: int | None = None) -> list[TelemetryRecord]:
    return probe.drain_batch(max_records)


Labels = tuple  # sorted tuple of (name, value) string pairs


def labels_of(mapping: dict | Iterable | None) -> Labels:
    if not mapping:
        return ()
    items = mapping.items() if isinstance(mapping, dict) else mapping
    return tuple(sorted((str(k), str(v)) for k, v in items))


class CounterTable:
    """Values behind one exposition endpoint, keyed by (kpi, labels).

    Writers (the collector) and readers (HTTP handlers) share a lock; each read
    sees whole values and no counter ever decreases.
    """

    def __init__(self, registry: KpiRegistry | None = None) -> None:
        self.registry = registry or default_registry()
        self._values: dict[tuple[str, Labels], float] = {}
        self._lock = threading.Lock()
        self.last_update_ns = 0

    def _desc(self, name: str):
        try:
            return self.registry.get(name)
        except KeyError:
            raise UnknownKpi(name) from None

    def declare(self, name: str, labels: Labels = (), value: float = 0.0) -> None:
        """Make a series visible before any record touches it."""
        self._desc(name)
        with self._lock:
            self._values.setdefault((name, labels), float(value))

    def inc(self, name: str, amount: float = 1.0, labels: Labels = ()) -> None:
        self.apply({(name, labels): amount}, {})

    def set(self, name: str, value: float, labels: Labels = ()) -> None:
        self.apply({}, {(name, labels): value})

    def apply(self, increments: dict, sets: dict) -> None:
        for (name, _), amount in increments.items():
            if self._desc(name).kind is not Kind.COUNTER:
                raise ProbeError(f"{name} is not a counter")
            if amount < 0:
                raise ProbeError(f"negative increment {amount} for counter {name}")
        for name, _ in sets:
            if self._desc(name).kind is not Kind.GAUGE:
                raise ProbeError(f"{name} is not a gauge")
        with self._lock:
            vals = self._values
            for key, amount in increments.items():
                vals[key] = vals.get(key, 0.0) + amount
            for key, value in sets.items():
                vals[key] = float(value)
            self.last_update_ns = now_ns()

    def get(self, name: str, labels: Labels = (), default: float | None = 0.0) -> float | None:
        with self._lock:
            return self._values.get((name, labels), default)

    def total(self, name: str) -> float:
        """Sum over every label set of one KPI."""
        with self._lock:
            return sum(v for (n, _), v in self._values.items() if n == name)

    def snapshot(self) -> list[tuple[str, Labels, float]]:
        with self._lock:
            return [(n, l, v) for (n, l), v in self._values.items()]


@dataclass(frozen=True)
class AggregationRule:
    """Maps matching records onto one KPI.

    ``op`` is ``count`` (+1 per match), ``sum`` (+ value of ``field``) or
    ``last`` (gauge set to the last seen value of ``field``). ``where`` holds
    field-equality predicates; ``label_fields`` copies record fields into
    series labels.
    """

    kpi: str
    op: str = "count"
    event: str | None = None
    component: str | None = None
    where: tuple = ()
    field: str | None = None
    labels: Labels = ()
    label_fields: tuple = ()

    def __post_init__(self) -> None:
        if self.op not in ("count", "sum", "last"):
            raise ValueError(f"unknown rule op {self.op!r}")
        if self.op != "count" and not self.field:
            raise ValueError(f"rule op {self.op!r} needs a field")
        if isinstance(self.where, dict):
            object.__setattr__(self, "where", tuple(self.where.items()))

    def matches(self, rec: TelemetryRecord, fields: dict | None = None) -> bool:
        if self.event is not None and rec.event != self.event:
            return False
        if self.component is not None and rec.component != self.component:
            return False
        if self.where or self.field:
            f = dict(rec.fields) if fields is None else fields
            for k, v in self.where:
                if k not in f or f[k] != v:
                    return False
            if self.field and self.field not in f:
                return False
        return True


class RuleSet:
    """Rules validated against a registry and indexed by event name."""

    def __init__(self, rules: Sequence[AggregationRule], registry: KpiRegistry | None = None) -> None:
        registry = registry or default_registry()
        self.rules = tuple(rules)
        self._by_event: dict[str | None, list[AggregationRule]] = {}
        for r in self.rules:
            if r.kpi not in registry:
                raise UnknownKpi(r.kpi)
            kind = registry.get(r.kpi).kind
            if r.op in ("count", "sum") and kind is not Kind.COUNTER:
                raise ProbeError(f"rule {r.op} on non-counter {r.kpi}")
            if r.op == "last" and kind is not Kind.GAUGE:
                raise ProbeError(f"rule last on non-gauge {r.kpi}")
            self._by_event.setdefault(r.event, []).append(r)
        self._wild = self._by_event.get(None, [])
        self._keys: dict = {}
        self._plans: dict = {}

    def for_event(self, event: str) -> list[AggregationRule]:
        specific = self._by_event.get(event)
        if specific is None:
            return self._wild
        return specific + self._wild if self._wild else specific

    def __iter__(self):
        return iter(self.rules)

    def kpis(self) -> set[str]:
        return {r.kpi for r in self.rules}


_MISSING = object()
_PLAN_CACHE_MAX = 4096


def _plan(rules: RuleSet, rec: TelemetryRecord, f: dict) -> list:
    """Rules matching ``rec``, memoized on the values that decide matching
    (event, component, every ``where`` field and the presence of value
    fields), so repeated record shapes cost one dict lookup."""
    keys = rules._keys.get(rec.event)
    if keys is None:
        applicable = rules.for_event(rec.event)
        wk = sorted({k for r in applicable for k, _ in r.where})
        fk = sorted({r.field for r in applicable if r.field})
        keys = rules._keys[rec.event] = (applicable, wk, fk)
    applicable, wk, fk = keys
    sig = (rec.event, rec.component, tuple(f.get(k, _MISSING) for k in wk), tuple(k in f for k in fk))
    plan = rules._plans.get(sig)
    if plan is None:
        plan = [r for r in applicable if r.matches(rec, f)]
        if len(rules._plans) >= _PLAN_CACHE_MAX:
            rules._plans.clear()
        rules._plans[sig] = plan
    return plan


def update_counters(table: CounterTable, records: Iterable[TelemetryRecord],
                    rules: RuleSet | Sequence[AggregationRule]) -> None:
    if not isinstance(rules, RuleSet):
        rules = RuleSet(rules, table.registry)
    incs: dict = {}
    sets: dict = {}
    for rec in records:
        if not rules.for_event(rec.event):
            continue
        f = dict(rec.fields)
        for rule in _plan(rules, rec, f):
            labels = rule.labels
            if rule.label_fields:
                labels = tuple(sorted(labels + tuple((k, str(f.get(k, ""))) for k in rule.label_fields)))
            key = (rule.kpi, labels)
            op = rule.op
            if op == "count":
                incs[key] = incs.get(key, 0) + 1
            elif op == "sum":
                incs[key] = incs.get(key, 0) + f[rule.field]
            else:
                sets[key] = f[rule.field]
    if incs or sets:
        table.apply(incs, sets)


class RecordSink:
    """Append-only record file where each flush lands as one whole line.

    A failed write is rolled back by truncating to the pre-write size, so
    readers never see a partial array. A line torn by a hard crash is
    unterminated, ignored by readers, and truncated away on reopen.
    """

    def __init__(self, path: str | os.PathLike, fsync: bool = False) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.fsync = fsync
        self._write = os.write
        repair_record_file(self.path)
        self._fd = os.open(self.path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
        self.bytes_written = 0

    def append_line(self, text: str) -> int:
        data = (text + "\n").encode("utf-8")
        fd = self._fd
        start = os.fstat(fd).st_size
        try:
            view = memoryview(data)
            while view:
                n = self._write(fd, view)
                view = view[n:]
            if self.fsync:
                os.fsync(fd)
        except OSError as exc:
            try:
                os.ftruncate(fd, start)
            except OSError:
                log.exception("rollback of %s failed", self.path)
            raise ProbeIoError(f"{self.path}: {exc}") from exc
        self.bytes_written += len(data)
        return len(data)

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1


def repair_record_file(path: str | os.PathLike) -> int:
    """Drop an unterminated trailing line; returns the bytes removed."""
    p = Path(path)
    if not p.exists():
        return 0
    size = p.stat().st_size
    if size == 0:
        return 0
    with open(p, "rb+") as fh:
        fh.seek(-1, os.SEEK_END)
        if fh.read(1) == b"\n":
            return 0
        # Walk back to the last newline.
        pos = size
        chunk = 4096
        keep = 0
        while pos > 0:
            step = min(chunk, pos)
            pos -= step
            fh.seek(pos)
            buf = fh.read(step)
            idx = buf.rfind(b"\n")
            if idx >= 0:
                keep = pos + idx + 1
                break
        fh.truncate(keep)
        return size - keep


def record_path(sink: str | os.PathLike, origin_key: str | None = None) -> Path:
    return Path(sink) / f"{origin_key}.json" if origin_key else Path(sink)


def flush_to_file(records: Sequence[TelemetryRecord], sink: str | os.PathLike,
                  origin_key: str | None = None, fsync: bool = False) -> int:
    """Append ``records`` as one JSON array line; returns bytes written."""
    if not records:
        raise ValueError("flush_to_file needs at least one record")
    s = RecordSink(record_path(sink, origin_key), fsync=fsync)
    try:
        return s.append_line(serialize_batch(records))
    finally:
        s.close()


FlushHook = Callable[[list, int], None]


class Collector:
    """The collection thread behind one record file.

    Every ``flush_interval`` it drains all its buffers, writes one array,
    then folds the batch into the counter table. Records are retained across
    a failed write and retried on the next cycle; ``stop`` drains whatever is
    still buffered before returning.
    """

    def __init__(self, path: str | os.PathLike, config: ProbeConfig | None = None,
                 rules: RuleSet | Sequence[AggregationRule] = (),
                 table: CounterTable | None = None, name: str | None = None,
                 on_flush: FlushHook | None = None) -> None:
        self.config = config or ProbeConfig()
        self.path = Path(path)
        self.table = table if table is not None else CounterTable()
        self.rules = rules if isinstance(rules, RuleSet) else RuleSet(rules, self.table.registry)
        self.name = name or self.path.stem
        self.on_flush = on_flush
        self.buffers: list[ProbeBuffer] = []
        self._sink: RecordSink | None = None
        self._pending: list[TelemetryRecord] = []
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        # Serializes consumers so a manual cycle() never races the thread.
        self._cycle_lock = threading.Lock()
        self.flushes = 0
        self.records_written = 0
        self.io_errors = 0

    def buffer(self, granularity: Granularity | None = None) -> ProbeBuffer:
        """A new producer buffer drained by this collector."""
        b = ProbeBuffer(self.config.capacity, granularity or self.config.granularity)
        self.buffers = self.buffers + [b]
        return b

    @property
    def sink(self) -> RecordSink:
        if self._sink is None:
            self._sink = RecordSink(self.path, fsync=self.config.fsync)
        return self._sink

    def cycle(self) -> int:
        """One drain/serialize/flush/count pass; returns records written."""
        with self._cycle_lock:
            return self._cycle()

    def _cycle(self) -> int:
        batch = self._pending
        for b in self.buffers:
            if len(b):
                batch.extend(b.drain_batch())
        if not batch:
            return 0
        try:
            self.sink.append_line(serialize_batch(batch))
        except ProbeIoError:
            self.io_errors += 1
            self._pending = batch
            log.warning("collector %s: write failed, %d records retained", self.name, len(batch))
            return 0
        t_stored = now_ns()
        self._pending = []
        self.flushes += 1
        self.records_written += len(batch)
        if self.rules.rules:
            update_counters(self.table, batch, self.rules)
        if self.on_flush is not None:
            self.on_flush(batch, t_stored)
        return len(batch)

    def run(self) -> None:
        interval = self.config.flush_interval
        # Ticks on a fixed grid so cycle time does not stretch the period.
        deadline = time.monotonic() + interval
        while not self._stop.wait(max(0.0, deadline - time.monotonic())):
            deadline = max(deadline + interval, time.monotonic())
            try:
                self.cycle()
            except Exception:
                log.exception("collector %s cycle failed", self.name)
        # Shutdown: drain everything that is still buffered.
        for _ in range(3):
            self.cycle()
            if not self._pending and not any(len(b) for b in self.buffers):
                break

    def start(self) -> "Collector":
        if self._thread is None:
            self._thread = threading.Thread(target=self.run, name=f"collector-{self.name}", daemon=True)
            self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
            self._thread = None
        else:
            self.run()
        if self._sink is not None:
            self._sink.close()
            self._sink = None

    @property
    def running(self) -> bool:
        return self._thread is not None and self._thread.is_alive()

    def stats(self) -> dict[str, int]:
        bufs = self.buffers
        return {
            "enqueued": sum(b.enqueued for b in bufs),
            "dropped": sum(b.dropped for b in bufs),
            "drained": sum(b.drained for b in bufs),
            "in_queue": sum(len(b) for b in bufs),
        }


def collector_run(probe: ProbeBuffer, config: ProbeConfig, path: str | os.PathLike,
                  stop: threading.Event, **kwargs) -> Collector:
    """Run a collector over one buffer in the calling thread until ``stop`` is set."""
    c = Collector(path, config, **kwargs)
    c.buffers = [probe]
    c._stop = stop
    c.run()
    if c._sink is not None:
        c._sink.close()
    return c


@dataclass
class SelfMetric:
    """Exposition descriptor for metrics outside the KPI taxonomy."""

    name: str
    kind: Kind
    help: str = ""


PROBE_SELF_METRICS = (
    SelfMetric("probe_records_enqueued_total", Kind.COUNTER, "Records offered to probe buffers."),
    SelfMetric("probe_records_dropped_total", Kind.COUNTER, "Records rejected by full probe buffers."),
)


@dataclass
class Probe:
    """Collectors, rules and the counter table serving one network element."""

    ne_id: str
    config: ProbeConfig
    table: CounterTable = field(default_factory=CounterTable)
    collectors: dict[str, Collector] = field(default_factory=dict)

    def collector(self, key: str, rules: Sequence[AggregationRule] = (),
                  granularity: Granularity | None = None,
                  on_flush: FlushHook | None = None) -> Collector:
        """Collector writing ``<sink_dir>/<key>.json``; created on first use."""
        c = self.collectors.get(key)
        if c is None:
            cfg = self.config
            if granularity is not None and granularity != cfg.granularity:
                cfg = ProbeConfig(cfg.sink_dir, cfg.capacity, cfg.flush_interval, granularity, cfg.fsync)
            c = Collector(record_path(cfg.sink_dir, key), cfg, rules, self.table,
                          name=f"{self.ne_id}:{key}", on_flush=on_flush)
            self.collectors[key] = c
        return c

    def start(self) -> "Probe":
        for c in self.collectors.values():
            c.start()
        return self

    def stop(self) -> None:
        for c in self.collectors.values():
            c.stop()

    def quiesce(self) -> None:
        """Synchronously drain every collector once (producers must be idle)."""
        for c in self.collectors.values():
            c.cycle()

    def stats(self) -> dict[str, int]:
        tot = {"enqueued": 0, "dropped": 0, "drained": 0, "in_queue": 0}
        for c in self.collectors.values():
            for k, v in c.stats().items():
                tot[k] += v
        return tot

    def self_metrics(self) -> list[tuple[SelfMetric, Labels, float]]:
        s = self.stats()
        labels = (("ne", self.ne_id),)
        return [(PROBE_SELF_METRICS[0], labels, float(s["enqueued"])),
                (PROBE_SELF_METRICS[1], labels, float(s["dropped"]))]
