"""Report CSVs (fixed headers) and optional SVG plots."""

from __future__ import annotations

import csv
import logging
from pathlib import Path

log = logging.getLogger(__name__)

SCHEMAS = {
    "traffic.csv": ("second", "achieved_bps"),
    "latency.csv": ("seed", "inline_mean_ms", "inline_p50_ms", "inline_p99_ms", "dpi_mean_ms", "dpi_p50_ms",
                    "dpi_p99_ms", "reduction_pct", "matched", "unmatched", "fields_equal"),
    "overhead.csv": ("variant", "cpu_seconds", "peak_memory_bytes", "received", "forwarded"),
    "prediction.csv": ("t", "predicted_bps", "actual_bps", "naive_bps", "model"),
    "correlation.csv": ("rank", "feature", "score"),
    "summary.csv": ("experiment", "metric", "value"),
}


class SchemaError(ValueError):
    pass


def write_csv(out_dir: str | Path, name: str, rows) -> Path:
    header = SCHEMAS[name]
    path = Path(out_dir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for r in rows:
            if len(r) != len(header):
                raise SchemaError(f"{name}: row has {len(r)} values, header {len(header)}")
            w.writerow(r)
    return path


def read_csv(path: str | Path) -> list[dict]:
    path = Path(path)
    with open(path, newline="") as f:
        rd = csv.DictReader(f)
        expected = SCHEMAS.get(path.name)
        if expected is not None and tuple(rd.fieldnames or ()) != expected:
            raise SchemaError(f"{path.name}: header {rd.fieldnames} != {list(expected)}")
        return list(rd)


def latency_rows(runs) -> list[tuple]:
    out = []
    for r in runs:
        p = r.report
        out.append((r.seed, p.mean, p.p50, p.p99, p.dpi_mean, p.dpi_p50, p.dpi_p99, p.reduction_pct,
                    p.matched, len(p.unmatched), int(r.fields_equal)))
    return out


def overhead_rows(report) -> list[tuple]:
    return [(u.variant, u.cpu_seconds, u.peak_memory_bytes, u.received, u.forwarded)
            for u in report.variants.values()]


def prediction_rows(run) -> list[tuple]:
    return [(r.t, r.predicted_bps, r.actual_bps, r.naive_bps, r.model_name) for r in run.records]


def correlation_rows(report) -> list[tuple]:
    return [(i + 1, n, s) for i, (n, s) in enumerate(report.ranked)]


def summarize(out_dir: str | Path) -> list[tuple]:
    """One row per headline number found among the CSVs in ``out_dir``."""
    out_dir = Path(out_dir)
    rows: list[tuple] = []
    p = out_dir / "latency.csv"
    if p.exists():
        lat = read_csv(p)
        red = [float(r["reduction_pct"]) for r in lat]
        rows += [("latency", "runs", len(lat)),
                 ("latency", "reduction_pct_mean", sum(red) / len(red)),
                 ("latency", "reduction_pct_spread", max(red) - min(red)),
                 ("latency", "inline_mean_ms", sum(float(r["inline_mean_ms"]) for r in lat) / len(lat)),
                 ("latency", "dpi_mean_ms", sum(float(r["dpi_mean_ms"]) for r in lat) / len(lat))]
    p = out_dir / "overhead.csv"
    if p.exists():
        ov = {r["variant"]: r for r in read_csv(p)}
        if {"inline", "dpi"} <= ov.keys():
            ci, cd = float(ov["inline"]["cpu_seconds"]), float(ov["dpi"]["cpu_seconds"])
            mi, md = float(ov["inline"]["peak_memory_bytes"]), float(ov["dpi"]["peak_memory_bytes"])
            rows += [("overhead", "cpu_reduction_pct", (cd - ci) / cd * 100 if cd else 0.0),
                     ("overhead", "memory_reduction_pct", (md - mi) / md * 100 if md else 0.0)]
        if {"inline", "plain"} <= ov.keys():
            cp = float(ov["plain"]["cpu_seconds"])
            ci = float(ov["inline"]["cpu_seconds"])
            rows.append(("overhead", "inline_cpu_overhead_pct", (ci - cp) / cp * 100 if cp else 0.0))
    p = out_dir / "prediction.csv"
    if p.exists():
        pr = read_csv(p)
        if pr:
            mae = sum(abs(float(r["predicted_bps"]) - float(r["actual_bps"])) for r in pr) / len(pr)
            naive = [r for r in pr if r["naive_bps"] not in ("", "None")]
            rows.append(("prediction", "mae_bps", mae))
            if naive:
                nm = sum(abs(float(r["naive_bps"]) - float(r["actual_bps"])) for r in naive) / len(naive)
                rows += [("prediction", "naive_mae_bps", nm),
                         ("prediction", "improvement_pct", (1 - mae / nm) * 100 if nm else 0.0)]
    return rows


def plot_svgs(out_dir: str | Path) -> list[Path]:
    """Render the CSVs in ``out_dir`` to SVG; needs matplotlib."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib is not installed; skipping plots")
        return []
    out_dir = Path(out_dir)
    made = []
    p = out_dir / "prediction.csv"
    if p.exists():
        pr = read_csv(p)
        fig, ax = plt.subplots(figsize=(7, 3.5))
        x = range(len(pr))
        ax.plot(x, [float(r["actual_bps"]) / 1e6 for r in pr], label="actual")
        ax.plot(x, [float(r["predicted_bps"]) / 1e6 for r in pr], label="predicted")
        ax.set_xlabel("interval")
        ax.set_ylabel("Mb/s")
        ax.legend()
        made.append(_save(fig, out_dir / "prediction.svg"))
    p = out_dir / "latency.csv"
    if p.exists():
        lat = read_csv(p)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.bar(["inline", "dpi"], [sum(float(r[k]) for r in lat) / len(lat) for k in ("inline_mean_ms", "dpi_mean_ms")])
        ax.set_ylabel("mean latency (ms)")
        made.append(_save(fig, out_dir / "latency.svg"))
    p = out_dir / "overhead.csv"
    if p.exists():
        ov = read_csv(p)
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.5))
        names = [r["variant"] for r in ov]
        a1.bar(names, [float(r["cpu_seconds"]) for r in ov])
        a1.set_ylabel("CPU seconds")
        a2.bar(names, [float(r["peak_memory_bytes"]) / 2**20 for r in ov])
        a2.set_ylabel("peak RSS (MiB)")
        made.append(_save(fig, out_dir / "overhead.svg"))
    return made


def _save(fig, path: Path) -> Path:
    import matplotlib.pyplot as plt
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
