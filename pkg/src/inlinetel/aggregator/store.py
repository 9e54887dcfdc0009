"""In-memory time-series store with an optional append-only snapshot file."""

from __future__ import annotations

import bisect
import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable


class OutOfOrder(ValueError):
    pass


@dataclass
class Series:
    name: str
    labels: tuple
    kind: str | None = None
    ts: list[int] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    resets: list[int] = field(default_factory=list)  # timestamps where a counter dropped

    def __len__(self) -> int:
        return len(self.ts)


def counter_increase(values: Iterable[float]) -> float:
    """Reset-aware increase across consecutive samples.

    A drop means the counter restarted: the pre-drop value is taken as the
    maximum reached and the new value counts from zero.
    """
    total = 0.0
    prev = None
    for v in values:
        if prev is not None:
            total += v - prev if v >= prev else v
        prev = v
    return total


class TimeSeriesStore:
    """Map of (metric name, label set) to an append-only sample list.

    Timestamps are integer nanoseconds and strictly increase per series. One
    lock guards appends and the copy-out done by readers.
    """

    def __init__(self, snapshot_path: str | os.PathLike | None = None) -> None:
        self._series: dict[tuple[str, tuple], Series] = {}
        self._by_name: dict[str, list[Series]] = {}
        self._lock = threading.RLock()
        self.snapshot_path = Path(snapshot_path) if snapshot_path else None
        self._snap = None
        if self.snapshot_path is not None:
            self.snapshot_path.parent.mkdir(parents=True, exist_ok=True)
            self._snap = open(self.snapshot_path, "a", encoding="utf-8")

    def append(self, name: str, labels: tuple, ts_ns: int, value: float, kind: str | None = None) -> Series:
        with self._lock:
            s = self._append(name, labels, ts_ns, value, kind)
            if self._snap is not None:
                self._snap.write(json.dumps({"name": name, "labels": dict(labels), "ts": ts_ns,
                                             "value": value, "kind": kind}) + "\n")
                self._snap.flush()
            return s

    def append_many(self, samples: Iterable[tuple[str, tuple, float]], ts_ns: int,
                    kinds: dict[str, str] | None = None) -> int:
        """Append a scrape's worth of samples at one timestamp; returns the count stored."""
        kinds = kinds or {}
        n = 0
        lines = []
        with self._lock:
            for name, labels, value in samples:
                try:
                    self._append(name, labels, ts_ns, value, kinds.get(name))
                except OutOfOrder:
                    continue
                n += 1
                if self._snap is not None:
                    lines.append(json.dumps({"name": name, "labels": dict(labels), "ts": ts_ns,
                                             "value": value, "kind": kinds.get(name)}))
            if lines:
                self._snap.write("\n".join(lines) + "\n")
                self._snap.flush()
        return n

    def _append(self, name, labels, ts_ns, value, kind) -> Series:
        key = (name, labels)
        s = self._series.get(key)
        if s is None:
            s = Series(name, labels, kind)
            self._series[key] = s
            self._by_name.setdefault(name, []).append(s)
        elif kind and s.kind is None:
            s.kind = kind
        if s.ts and ts_ns <= s.ts[-1]:
            raise OutOfOrder(f"{name}{dict(labels)}: {ts_ns} <= {s.ts[-1]}")
        if s.kind == "counter" and s.values and value < s.values[-1]:
            s.resets.append(ts_ns)
        s.ts.append(int(ts_ns))
        s.values.append(float(value))
        return s

    def names(self) -> list[str]:
        with self._lock:
            return sorted(self._by_name)

    def series_for(self, name: str) -> list[Series]:
        with self._lock:
            return list(self._by_name.get(name, ()))

    def get(self, name: str, labels: tuple) -> Series | None:
        with self._lock:
            return self._series.get((name, labels))

    def window(self, s: Series, start_ns: int, end_ns: int,
               include_start: bool = True, include_end: bool = True) -> tuple[list[int], list[float]]:
        """Copy of the samples of ``s`` between the bounds."""
        with self._lock:
            lo = bisect.bisect_left(s.ts, start_ns) if include_start else bisect.bisect_right(s.ts, start_ns)
            hi = bisect.bisect_right(s.ts, end_ns) if include_end else bisect.bisect_left(s.ts, end_ns)
            return s.ts[lo:hi], s.values[lo:hi]

    def last_before(self, s: Series, t_ns: int, inclusive: bool = True) -> tuple[int, float] | None:
        with self._lock:
            i = bisect.bisect_right(s.ts, t_ns) if inclusive else bisect.bisect_left(s.ts, t_ns)
            if i == 0:
                return None
            return s.ts[i - 1], s.values[i - 1]

    def close(self) -> None:
        if self._snap is not None:
            self._snap.close()
            self._snap = None

    @classmethod
    def load_snapshot(cls, path: str | os.PathLike) -> "TimeSeriesStore":
        store = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.endswith("\n"):
                    break
                o = json.loads(line)
                labels = tuple(sorted(o["labels"].items()))
                try:
                    store.append(o["name"], labels, o["ts"], o["value"], o.get("kind"))
                except OutOfOrder:
                    pass
        return store
