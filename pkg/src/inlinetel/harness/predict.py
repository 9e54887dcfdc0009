"""Baseline traffic predictor fed from the aggregator's tabular endpoint.

The model is ridge regression on standardized features (closed form, numpy),
standing in for a learned tabular model. Only the data path matters here:
the loop pulls ``T/dt`` rows of KPIs every cadence and predicts the next
interval's received bitrate.
"""

from __future__ import annotations

import json
import logging
import time
import urllib.error
import urllib.request
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..aggregator.tabular import TabularDataset

log = logging.getLogger(__name__)

UPF_BYTE_RATE = "upf_bytes_rate"

DEFAULT_FEATURES = (
    {"name": UPF_BYTE_RATE, "expr": "upf_n3_gtp_indatabytes", "agg": "rate"},
    {"name": "pdcp_ul_bytes_rate", "expr": "pdcp_rxpdu_bytes", "agg": "rate"},
    {"name": "upf_cpu_rate", "expr": 'container_cpu_usage_seconds_total{pod="upf-0"}', "agg": "rate"},
    {"name": "upf_memory", "expr": 'container_memory_usage_bytes{pod="upf-0"}', "agg": "mean"},
    {"name": "mac_pucch_size", "expr": "mac_sched_pucch_size", "agg": "mean"},
    {"name": "phy_mcs", "expr": "phy_mcs_last", "agg": "mean"},
    {"name": "amf_ue_connected", "expr": "amf_ue_connected", "agg": "mean"},
    {"name": "upf_sessions", "expr": "upf_n4_session_active", "agg": "mean"},
    {"name": "smf_tunnels", "expr": "smf_gtp_tunnel_active", "agg": "mean"},
)


class DegenerateDesign(UserWarning):
    """A constant feature column was dropped before fitting."""


class InsufficientData(ValueError):
    pass


class ServiceUnavailable(RuntimeError):
    pass


def _matrix(dataset: TabularDataset | np.ndarray, columns: Sequence[str] | None = None) -> np.ndarray:
    if isinstance(dataset, TabularDataset):
        cols = columns or dataset.columns
        idx = [dataset.columns.index(c) for c in cols]
        return np.array([[np.nan if r[j] is None else r[j] for j in idx] for r in dataset.rows], dtype=float)
    return np.asarray(dataset, dtype=float)


@dataclass
class RidgeModel:
    columns: list[str]
    kept: list[int]
    mean: np.ndarray
    scale: np.ndarray
    coef: np.ndarray
    intercept: float
    alpha: float | str
    name: str = "ridge"

    @property
    def dropped(self) -> list[str]:
        return [c for i, c in enumerate(self.columns) if i not in self.kept]

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not self.kept:
            return np.full(len(X), self.intercept)
        Z = (X[:, self.kept] - self.mean) / self.scale
        return Z @ self.coef + self.intercept

    def predict_row(self, row: Sequence[float]) -> float:
        return float(self.predict([row])[0])


ALPHA_GRID = tuple(10.0 ** k for k in range(-8, 3))


def _loo_alpha(Z: np.ndarray, yc: np.ndarray, grid=ALPHA_GRID) -> float:
    """Penalty with the smallest leave-one-out squared error (closed form via SVD)."""
    n = len(yc)
    U, sv, _ = np.linalg.svd(Z, full_matrices=False)
    uty = U.T @ yc
    best, best_err = grid[0], np.inf
    for a in grid:
        d = sv ** 2 / (sv ** 2 + a * n)
        fitted = U @ (d * uty)
        h = (U ** 2) @ d + 1.0 / n
        err = float(np.mean(((yc - fitted) / np.maximum(1e-12, 1 - h)) ** 2))
        if err < best_err:
            best, best_err = a, err
    return best


def fit_baseline_predictor(dataset, target, alpha: float | str = "auto", seed: int = 0,
                           columns: Sequence[str] | None = None) -> RidgeModel:
    """Ridge least squares on standardized features.

    ``dataset`` is a TabularDataset or an ``(n, m)`` array; ``target`` a
    column name of the dataset (then excluded from the features) or a
    length-``n`` sequence. Constant columns are dropped with a
    DegenerateDesign warning. ``alpha="auto"`` picks the penalty (scaled by
    the row count) from ALPHA_GRID by leave-one-out error. The solution is
    closed form, so ``seed`` only exists for interface symmetry with
    stochastic models.
    """
    del seed
    if isinstance(target, str):
        if not isinstance(dataset, TabularDataset):
            raise ValueError("a named target needs a TabularDataset")
        y = _matrix(dataset, [target])[:, 0]
        columns = [c for c in (columns or dataset.columns) if c != target]
    else:
        y = np.asarray(target, dtype=float)
    X = _matrix(dataset, columns)
    if isinstance(dataset, TabularDataset):
        columns = list(columns or dataset.columns)
    else:
        columns = list(columns or [f"x{i}" for i in range(X.shape[1])])
    n, m = X.shape
    if len(y) != n:
        raise ValueError(f"{n} rows but {len(y)} targets")
    ok = ~(np.isnan(X).any(axis=1) | np.isnan(y))
    X, y = X[ok], y[ok]
    if len(y) < max(2 * m, 2):
        raise InsufficientData(f"need at least {max(2 * m, 2)} complete rows, have {len(y)}")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    kept = [j for j in range(m) if scale[j] > 1e-12 * max(1.0, abs(mean[j]))]
    if len(kept) < m:
        names = [columns[j] for j in range(m) if j not in kept]
        warnings.warn(f"dropping constant feature(s): {', '.join(names)}", DegenerateDesign, stacklevel=2)
    y_mean = float(y.mean())
    if not kept:
        return RidgeModel(columns, [], np.zeros(0), np.ones(0), np.zeros(0), y_mean, alpha)
    Z = (X[:, kept] - mean[kept]) / scale[kept]
    if alpha == "auto":
        alpha = _loo_alpha(Z, y - y_mean)
    A = Z.T @ Z + alpha * len(y) * np.eye(len(kept))
    coef = np.linalg.solve(A, Z.T @ (y - y_mean))
    return RidgeModel(columns, kept, mean[kept], scale[kept], coef, y_mean, alpha)


@dataclass
class CorrelationReport:
    scores: dict[str, float]
    ranked: list[tuple[str, float]]

    def rank_of(self, name: str) -> int:
        """1-based rank of ``name``."""
        return [n for n, _ in self.ranked].index(name) + 1

    def to_json(self) -> dict:
        return {"ranked": [{"feature": n, "score": s} for n, s in self.ranked]}


def correlation_rank(dataset, target, columns: Sequence[str] | None = None) -> CorrelationReport:
    """Pearson correlation of every feature with ``target``; constants score 0."""
    if isinstance(target, str):
        y = _matrix(dataset, [target])[:, 0]
        columns = [c for c in (columns or dataset.columns) if c != target]
    else:
        y = np.asarray(target, dtype=float)
    X = _matrix(dataset, columns)
    if isinstance(dataset, TabularDataset):
        columns = list(columns or dataset.columns)
    else:
        columns = list(columns or [f"x{i}" for i in range(X.shape[1])])
    if len(y) < 3:
        raise InsufficientData("correlation needs at least 3 rows")
    scores = {}
    for j, name in enumerate(columns):
        x = X[:, j]
        ok = ~(np.isnan(x) | np.isnan(y))
        xs, ys = x[ok], y[ok]
        if len(xs) < 3 or xs.std() == 0 or ys.std() == 0:
            scores[name] = 0.0
            continue
        r = float(np.corrcoef(xs, ys)[0, 1])
        scores[name] = max(-1.0, min(1.0, r)) if np.isfinite(r) else 0.0
    ranked = sorted(scores.items(), key=lambda kv: (-abs(kv[1]), kv[0]))
    return CorrelationReport(scores, ranked)


def fetch_tabular(aggregator_url: str, features, T: float, dt: float, end_ms: int | None = None,
                  timeout: float = 5.0) -> TabularDataset:
    body = {"features": list(features), "T": T, "dt": dt}
    if end_ms is not None:
        body["end"] = int(end_ms)
    req = urllib.request.Request(aggregator_url.rstrip("/") + "/api/v1/tabular", json.dumps(body).encode(),
                                 {"Content-Type": "application/json"}, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as rsp:
            obj = json.loads(rsp.read())
    except urllib.error.HTTPError as exc:
        if exc.code >= 500:
            raise ServiceUnavailable(f"aggregator returned {exc.code}") from None
        raise ValueError(f"tabular request rejected: {exc.read().decode(errors='replace')}") from None
    except (urllib.error.URLError, OSError) as exc:
        raise ServiceUnavailable(str(exc)) from None
    return TabularDataset.from_json(obj["data"])


@dataclass
class PredictionRecord:
    t: float
    features: list
    predicted_bps: float
    actual_bps: float
    model_name: str
    naive_bps: float | None = None


@dataclass
class PredictionRun:
    records: list[PredictionRecord] = field(default_factory=list)
    gaps: list[float] = field(default_factory=list)

    def mae(self) -> float:
        return float(np.mean([abs(r.predicted_bps - r.actual_bps) for r in self.records]))

    def naive_mae(self) -> float:
        return float(np.mean([abs(r.naive_bps - r.actual_bps) for r in self.records if r.naive_bps is not None]))


def prediction_loop(aggregator_url: str, model: RidgeModel, cadence: float, features, T: float, dt: float,
                    rounds: int, actual_fn: Callable[[float, float], float],
                    start: float | None = None, lag: float = 0.0, clock=time.time, sleep=time.sleep,
                    wait_actual: bool = True) -> PredictionRun:
    """Every ``cadence`` seconds pull the window ending at that boundary,
    predict the bitrate of the following ``cadence`` and, once it has
    elapsed, record it next to ``actual_fn(t0, t1)``.

    ``lag`` delays each pull past its boundary so the last scrape is in.
    ``actual_fn(t0, t1)`` also yields the naive predict-last value for the
    interval just ended.
    """
    run = PredictionRun()
    t0 = clock() if start is None else start
    feats = list(features)
    cols = [f["name"] for f in feats]
    idx = [cols.index(c) for c in model.columns]
    pending = None
    for r in range(rounds + 1):
        boundary = t0 + (r + 1) * cadence
        delay = boundary + lag - clock()
        if delay > 0:
            sleep(delay)
        if pending is not None:
            tb, x, pred, naive = pending
            pending = None
            run.records.append(PredictionRecord(tb, x, pred, actual_fn(tb, tb + cadence), model.name, naive))
        if r == rounds:
            break
        try:
            ds = fetch_tabular(aggregator_url, feats, T, dt, int(boundary * 1000))
        except ServiceUnavailable as exc:
            log.warning("prediction round %d: %s", r, exc)
            run.gaps.append(boundary)
            continue
        row = ds.rows[-1] if ds.rows else None
        if row is None or any(row[j] is None for j in idx):
            run.gaps.append(boundary)
            continue
        x = [row[j] for j in idx]
        pred = model.predict_row(x)
        pending = (boundary, x, pred, actual_fn(boundary - cadence, boundary))
        if not wait_actual and r == rounds - 1:
            break
    if pending is not None:
        tb, x, pred, naive = pending
        run.records.append(PredictionRecord(tb, x, pred, actual_fn(tb, tb + cadence), model.name, naive))
    return run
