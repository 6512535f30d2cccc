"""
Command line entry point.

  python -m app.cli run --config experiments/sine.json [--set alpha=0.05 ...] [--name NAME]
  python -m app.cli synth --kind sine_heteroscedastic --n 2000 --d 1 --seed 0 --out data/sine.csv
  python -m app.cli list-methods
  python -m app.cli serve [--port 8000]
"""
import argparse
import logging
import sys
from typing import Optional, Sequence

from app.config import get_settings
from app.errors import IntervalBenchError
from app.models.experiment_config import load_config
from app.models.schemas import SyntheticKind, SyntheticSpec
from app.services import bench_service, data_service
from app.services.method_registry import list_methods
from app.services.results_store import ResultsStore
from app.utils import parse_key_value

log = logging.getLogger(__name__)


def _cmd_run(args: argparse.Namespace) -> int:
    overrides = dict(parse_key_value(item) for item in args.set or [])
    config = load_config(args.config, overrides)
    table = bench_service.run(config)
    out = ResultsStore(args.results_dir).save(table, config, run_name=args.name)
    for agg in table.aggregate:
        cov = "n/a" if agg.coverage_mean is None else f"{agg.coverage_mean:.3f} ({agg.coverage_std:.3f})"
        width = "n/a" if agg.mean_width_mean is None else f"{agg.mean_width_mean:.3f} ({agg.mean_width_std:.3f})"
        print(f"{agg.method:<14} coverage {cov:<18} width {width:<18} excluded {agg.n_excluded}")
    print(f"Results written to {out}")
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    spec = SyntheticSpec(kind=args.kind, n=args.n, d=args.d, noise_scale=args.noise_scale)
    path = data_service.write_csv(data_service.gen_synthetic(spec, args.seed), args.out)
    print(f"Wrote {spec.n} rows to {path}")
    return 0


def _cmd_list_methods(args: argparse.Namespace) -> int:
    for info in list_methods():
        print(f"{info.name:<12} {info.family:<9} {info.description}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("app.main:app", host=args.host, port=args.port or get_settings().port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vi-bench", description="Prediction interval benchmark")
    parser.add_argument("--log-level", default=None, help="Overrides LOG_LEVEL from the environment")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run an experiment config")
    run.add_argument("--config", required=True)
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override a config key (repeatable)")
    run.add_argument("--name", default=None, help="Output directory name (default: config name)")
    run.add_argument("--results-dir", default=None)
    run.set_defaults(func=_cmd_run)

    synth = sub.add_parser("synth", help="Write a synthetic dataset to CSV")
    synth.add_argument("--kind", required=True, choices=[k.value for k in SyntheticKind])
    synth.add_argument("--n", type=int, default=1000)
    synth.add_argument("--d", type=int, default=1)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--noise-scale", type=float, default=0.5)
    synth.add_argument("--out", required=True)
    synth.set_defaults(func=_cmd_synth)

    methods = sub.add_parser("list-methods", help="List registered methods")
    methods.set_defaults(func=_cmd_list_methods)

    serve = sub.add_parser("serve", help="Start the HTTP API")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=None)
    serve.set_defaults(func=_cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or get_settings().log_level).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (IntervalBenchError, ValueError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
