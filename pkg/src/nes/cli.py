"""Command-line interface.

Subcommands: generate-benchmark, import, run, summarize, verify-store.
Exit codes: 0 ok, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import sys

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


def _cmd_generate_benchmark(args) -> int:
    from .synthetic import generate_synthetic_benchmark
    store = generate_synthetic_benchmark(
        args.output, gen_seed=args.gen_seed, num_families=args.families,
        archs_per_family=args.archs_per_family,
        seeds_per_arch=args.seeds_per_arch, n_val=args.n_val,
        n_test=args.n_test, num_classes=args.classes,
    )
    print(f"wrote {len(store.keys())} matrices for "
          f"{len(store.arch_ids())} architectures to {args.output}")
    return EXIT_OK


def _cmd_import(args) -> int:
    from .store import import_tabular
    store = import_tabular(args.export, args.output)
    print(f"imported {len(store.keys())} matrices "
          f"({len(store.arch_ids())} architectures) into {args.output}")
    return EXIT_OK


def _cmd_run(args) -> int:
    from .experiment import ExperimentConfig, run_experiment
    config = ExperimentConfig.from_file(args.config)
    out = run_experiment(config)
    print(f"run complete: {out}/results.csv")
    return EXIT_OK


def _cmd_summarize(args) -> int:
    from .experiment import summarize
    out = summarize(args.run_dirs, args.output)
    print(f"summary written to {out}")
    return EXIT_OK


def _cmd_verify_store(args) -> int:
    from .store import PredictionStore
    store = PredictionStore.open(args.store)
    count = store.verify()
    print(f"store ok: {count} entries verified")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nes",
        description="Neural ensemble search experiments at desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-benchmark",
                       help="materialize the planted synthetic benchmark")
    p.add_argument("output", help="store directory to create")
    p.add_argument("--gen-seed", type=int, default=0)
    p.add_argument("--families", type=int, default=5)
    p.add_argument("--archs-per-family", type=int, default=8)
    p.add_argument("--seeds-per-arch", type=int, default=3)
    p.add_argument("--n-val", type=int, default=512)
    p.add_argument("--n-test", type=int, default=1024)
    p.add_argument("--classes", type=int, default=10)
    p.set_defaults(func=_cmd_generate_benchmark)

    p = sub.add_parser("import", help="convert a tabular export into a store")
    p.add_argument("export", help="path to a nes-tabular-npz-v1 file")
    p.add_argument("output", help="store directory to create")
    p.set_defaults(func=_cmd_import)

    p = sub.add_parser("run", help="execute an experiment config")
    p.add_argument("config", help="experiment config file (YAML)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("summarize", help="aggregate one or more runs")
    p.add_argument("run_dirs", nargs="+", help="completed run directories")
    p.add_argument("--output", required=True, help="summary output directory")
    p.set_defaults(func=_cmd_summarize)

    p = sub.add_parser("verify-store", help="integrity-check a store")
    p.add_argument("store", help="store directory")
    p.set_defaults(func=_cmd_verify_store)

    return parser


def main(argv=None) -> int:
    from .experiment import ConfigError
    from .store import StoreError

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StoreError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
