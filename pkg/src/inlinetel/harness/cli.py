"""``inlinetel`` command line.

Exit status: 0 on success, 2 on a configuration error, 1 on any other
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from ..aggregator.scrape import ConfigError as ScrapeConfigError
from ..sysmon import ManifestError
from . import report
from .config import ConfigError, TopologyConfig
from .topology import AttachFailed, Testbed
from .traffic import TrafficSpec, make_spec, run_traffic

log = logging.getLogger("inlinetel")


def _config(args) -> TopologyConfig:
    cfg = TopologyConfig.load(args.config) if args.config else TopologyConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _write_json(out_dir: Path, name: str, obj) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    p = out_dir / name
    p.write_text(json.dumps(obj, indent=2, default=str) + "\n")
    return p


def cmd_up(args, cfg: TopologyConfig) -> int:
    with Testbed(cfg, args.out_dir) as tb:
        tb.attach()
        eps = tb.endpoints
        _write_json(args.out_dir, "endpoints.json", {"endpoints": eps, "sessions": tb.sessions,
                                                     "config": cfg.to_json()})
        for name, url in sorted(eps.items()):
            print(f"{name:10s} {url}")
        sys.stdout.flush()
        try:
            if args.duration is None:
                while True:
                    time.sleep(3600)
            time.sleep(args.duration)
        except KeyboardInterrupt:
            pass
    return 0


def cmd_traffic(args, cfg: TopologyConfig) -> int:
    if args.bitrate is not None:
        spec = TrafficSpec(cfg.ues[0], cfg.ues[1], args.bitrate, args.duration, cfg.seed, cfg.packet_size)
    else:
        spec = make_spec(cfg.seed, args.duration, cfg.bitrate_bounds, cfg.ues[0], cfg.ues[1], cfg.packet_size)
    with Testbed(cfg, args.out_dir, serve=not args.no_serve) as tb:
        tb.attach()
        rep = run_traffic(tb, spec)
    report.write_csv(args.out_dir, "traffic.csv", list(enumerate(rep.achieved_bps_timeline)))
    _write_json(args.out_dir, "traffic.json", rep.to_json())
    print(f"preset {spec.preset_bitrate / 1e6:.3f} Mb/s, sent {rep.sent_bytes} B, received {rep.recv_bytes} B, "
          f"achieved {rep.achieved_bps / 1e6:.3f} Mb/s")
    return 0


def cmd_latency(args, cfg: TopologyConfig) -> int:
    from .experiments import run_latency_experiment
    runs = []
    for i in range(args.repeats):
        seed = cfg.seed + i
        r = run_latency_experiment(cfg, args.out_dir / f"latency-{seed}", seed, args.bitrate, args.duration)
        runs.append(r)
        p = r.report
        print(f"seed {seed}: inline mean {p.mean:.2f} ms p99 {p.p99:.2f} ms | dpi mean {p.dpi_mean:.2f} ms "
              f"p99 {p.dpi_p99:.2f} ms | reduction {p.reduction_pct:.1f}% | matched {p.matched} "
              f"unmatched {len(p.unmatched)}")
    report.write_csv(args.out_dir, "latency.csv", report.latency_rows(runs))
    _write_json(args.out_dir, "latency.json", [dict(seed=r.seed, fields_equal=r.fields_equal, **r.report.to_json())
                                               for r in runs])
    return 0


def cmd_overhead(args, cfg: TopologyConfig) -> int:
    from .experiments import run_overhead_experiment
    rep = run_overhead_experiment(cfg, args.out_dir, cfg.seed, args.bitrate, args.duration, args.flush_interval)
    report.write_csv(args.out_dir, "overhead.csv", report.overhead_rows(rep))
    _write_json(args.out_dir, "overhead.json", rep.to_json())
    for u in rep.variants.values():
        print(f"{u.variant:7s} cpu {u.cpu_seconds:.2f} s  peak rss {u.peak_memory_bytes / 2**20:.1f} MiB")
    print(f"inline vs dpi: cpu -{rep.cpu_reduction_pct:.1f}%  memory -{rep.memory_reduction_pct:.1f}%; "
          f"inline vs plain: cpu +{rep.inline_cpu_overhead_pct:.1f}%")
    if rep.saturated:
        log.error("load generator saturated; run is invalid")
        return 1
    return 0


def cmd_predict(args, cfg: TopologyConfig) -> int:
    from .experiments import run_prediction_experiment
    exp = run_prediction_experiment(cfg, args.out_dir, cfg.seed, args.train, args.intervals, args.dt)
    report.write_csv(args.out_dir, "prediction.csv", report.prediction_rows(exp.run))
    report.write_csv(args.out_dir, "correlation.csv", report.correlation_rows(exp.correlation))
    _write_json(args.out_dir, "prediction.json", {
        "mae_bps": exp.mae, "naive_mae_bps": exp.naive_mae, "improvement_pct": exp.improvement_pct,
        "records": len(exp.run.records), "gaps": len(exp.run.gaps), "dropped_features": exp.dropped_features,
        "correlation": exp.correlation.to_json()})
    print(f"{len(exp.run.records)} predictions, {len(exp.run.gaps)} gaps; MAE {exp.mae / 1e6:.3f} Mb/s vs "
          f"predict-last {exp.naive_mae / 1e6:.3f} Mb/s ({exp.improvement_pct:.1f}% better)")
    for i, (name, score) in enumerate(exp.correlation.ranked[:5], 1):
        print(f"  {i}. {name} {score:+.3f}")
    return 0


def cmd_report(args, cfg: TopologyConfig) -> int:
    rows = report.summarize(args.out_dir)
    if not rows:
        print(f"no experiment CSVs under {args.out_dir}", file=sys.stderr)
        return 1
    report.write_csv(args.out_dir, "summary.csv", rows)
    for exp, metric, value in rows:
        print(f"{exp:10s} {metric:28s} {value:.4g}" if isinstance(value, float) else f"{exp:10s} {metric:28s} {value}")
    if args.svg:
        for p in report.plot_svgs(args.out_dir):
            print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--config", type=Path, default=None, help="topology config (JSON)")
    common.add_argument("--out-dir", type=Path, default=Path("out"), help="where reports and telemetry go")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="inlinetel", description="Inline telemetry testbed and experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("up", parents=[common], help="start the topology and serve its endpoints")
    p.add_argument("--duration", type=float, default=None, help="seconds to stay up (default: until ^C)")
    p.set_defaults(func=cmd_up)

    p = sub.add_parser("traffic", parents=[common], help="run one shaped traffic session")
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--bitrate", type=float, default=None, help="bits/s (default: drawn from the seed)")
    p.add_argument("--no-serve", action="store_true", help="skip metrics endpoints and aggregator")
    p.set_defaults(func=cmd_traffic)

    p = sub.add_parser("latency", parents=[common], help="inline vs out-of-band record latency")
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--bitrate", type=float, default=5e6)
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_latency)

    p = sub.add_parser("overhead", parents=[common], help="CPU and memory of three UPF variants")
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--bitrate", type=float, default=5e6)
    p.add_argument("--flush-interval", type=float, default=1.0)
    p.set_defaults(func=cmd_overhead)

    p = sub.add_parser("predict", parents=[common], help="traffic prediction loop over the aggregator")
    p.add_argument("--train", type=int, default=60)
    p.add_argument("--intervals", type=int, default=30)
    p.add_argument("--dt", type=float, default=2.0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", parents=[common], help="summarize CSVs, optionally plot SVGs")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
    except ConfigError as exc:
        print(f"inlinetel: config error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args, cfg)
    except (ConfigError, ScrapeConfigError, ManifestError) as exc:
        print(f"inlinetel: config error: {exc}", file=sys.stderr)
        return 2
    except AttachFailed as exc:
        print(f"inlinetel: attach failed: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"inlinetel: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
