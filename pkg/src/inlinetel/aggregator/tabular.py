"""Fixed-interval tabular samples built from stored series.

The window ``[end - T, end)`` is cut into ``n = T / dt`` half-open intervals;
row ``i`` holds one aggregated value per feature. Cells with no data are
carried forward from the previous row and flagged in ``missing``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .query import NS, QueryError, Selector, match_series, parse_duration, parse_selector
from .store import TimeSeriesStore, counter_increase

AGGREGATIONS = ("mean", "last", "increase", "rate")


class ShapeError(QueryError):
    pass


class EmptyStoreForFeature(LookupError):
    """No series matches a feature selector at all (reported, not raised, by build_tabular)."""


@dataclass(frozen=True)
class Feature:
    name: str
    expr: str
    agg: str = "mean"

    def __post_init__(self) -> None:
        if self.agg not in AGGREGATIONS:
            raise ShapeError(f"feature {self.name!r}: unknown aggregation {self.agg!r}")
        parse_selector(self.expr)

    @property
    def selector(self) -> Selector:
        return parse_selector(self.expr)

    @classmethod
    def from_json(cls, obj) -> "Feature":
        if isinstance(obj, Feature):
            return obj
        if not isinstance(obj, dict) or "expr" not in obj:
            raise ShapeError(f"feature must be an object with 'expr': {obj!r}")
        agg = obj.get("agg", "mean")
        return cls(obj.get("name") or f"{agg}({obj['expr']})", obj["expr"], agg)

    def to_json(self) -> dict:
        return {"name": self.name, "expr": self.expr, "agg": self.agg}


@dataclass
class TabularDataset:
    T_ns: int
    dt_ns: int
    end_ns: int
    features: list[Feature]
    rows: list[list[float | None]] = field(default_factory=list)
    missing: list[list[bool]] = field(default_factory=list)
    unmatched: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.T_ns // self.dt_ns

    @property
    def m(self) -> int:
        return len(self.features)

    @property
    def start_ns(self) -> int:
        return self.end_ns - self.T_ns

    @property
    def columns(self) -> list[str]:
        return [f.name for f in self.features]

    def interval(self, i: int) -> tuple[int, int]:
        s = self.start_ns + i * self.dt_ns
        return s, s + self.dt_ns

    def column(self, name: str) -> list[float | None]:
        j = self.columns.index(name)
        return [r[j] for r in self.rows]

    def to_json(self) -> dict:
        return {
            "T": self.T_ns / NS,
            "dt": self.dt_ns / NS,
            "n": self.n,
            "m": self.m,
            "start": self.start_ns // 1_000_000,
            "end": self.end_ns // 1_000_000,
            "columns": self.columns,
            "features": [f.to_json() for f in self.features],
            "rows": self.rows,
            "missing": self.missing,
            "unmatched": self.unmatched,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TabularDataset":
        return cls(int(round(obj["T"] * NS)), int(round(obj["dt"] * NS)), int(obj["end"]) * 1_000_000,
                   [Feature.from_json(f) for f in obj["features"]], obj["rows"], obj["missing"],
                   obj.get("unmatched", []))


def to_ns_duration(v) -> int:
    """Seconds (number) or a duration string such as ``"15s"``."""
    if isinstance(v, str):
        return parse_duration(v)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ShapeError(f"bad duration {v!r}")
    return int(round(v * NS))


def _cell(store: TimeSeriesStore, series: list, agg: str, s: int, e: int) -> float | None:
    total = None
    for ser in series:
        ts, vals = store.window(ser, s, e, include_start=True, include_end=False)
        if agg == "mean":
            if not vals:
                continue
            v = sum(vals) / len(vals)
        elif agg == "last":
            if not vals:
                continue
            v = vals[-1]
        else:
            base = store.last_before(ser, s, inclusive=False)
            pts = ([base[1]] if base is not None else []) + list(vals)
            if len(pts) < 2 or not vals:
                continue
            v = counter_increase(pts)
            if agg == "rate":
                v = v / ((e - s) / NS)
        total = v if total is None else total + v
    return total


def build_tabular(store: TimeSeriesStore, features, T, dt, end_ns: int) -> TabularDataset:
    """Rows for ``n = T/dt`` intervals ending at ``end_ns``.

    ``T`` and ``dt`` are integer nanoseconds or duration strings (``"15s"``).
    """
    T_ns = parse_duration(T) if isinstance(T, str) else int(T)
    dt_ns = parse_duration(dt) if isinstance(dt, str) else int(dt)
    feats = [Feature.from_json(f) for f in features]
    if not feats:
        raise ShapeError("at least one feature is required")
    if dt_ns <= 0 or T_ns <= 0:
        raise ShapeError("T and dt must be positive")
    if T_ns % dt_ns:
        raise ShapeError(f"T={T_ns / NS}s is not a whole number of dt={dt_ns / NS}s intervals")
    ds = TabularDataset(T_ns, dt_ns, int(end_ns), feats)
    matched = []
    for f in feats:
        series = match_series(store, f.selector)
        if not series:
            ds.unmatched.append(f.name)
        matched.append(series)
    prev: list[float | None] = [None] * len(feats)
    for i in range(ds.n):
        s, e = ds.interval(i)
        row, flags = [], []
        for j, f in enumerate(feats):
            v = _cell(store, matched[j], f.agg, s, e)
            if v is None:
                row.append(prev[j])
                flags.append(True)
            else:
                row.append(v)
                flags.append(False)
        ds.rows.append(row)
        ds.missing.append(flags)
        prev = row
    return ds
