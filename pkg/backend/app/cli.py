# backend/app/cli.py

import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Sequence

import httpx
from dotenv import dotenv_values
from loguru import logger
from pydantic import ValidationError

from .data_loader import fetch_movielens_100k
from .evaluation import EvalConfig, format_report
from .models import RunConfig
from .orchestrator import SWEEP_PARAMETERS, Orchestrator
from .synthetic import generate_synthetic
from .wmf import WmfSolveError
from .utils.logger_utils import configure_logging

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3

# RunConfig fields given as comma-separated lists in flags and config files
LIST_FIELDS = {"split_ratios", "alpha_grid", "cutoffs"}


def _flag(field: str) -> str:
    return "--" + field.replace("_", "-")


def _add_run_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value experiment file; flags override its values")
    for name, info in RunConfig.model_fields.items():
        parser.add_argument(_flag(name), dest=name, default=None, help=info.description or f"RunConfig.{name}")


def _coerce(field: str, value: Any) -> Any:
    if field in LIST_FIELDS and isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    return value


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """Merge the config file (if any) with flag overrides and validate."""
    values: Dict[str, Any] = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        for key, value in dotenv_values(path).items():
            field = key.strip().lower()
            if field not in RunConfig.model_fields:
                raise ValueError(f"{path}: unknown config key '{key}'")
            if value not in (None, ""):
                values[field] = _coerce(field, value)
    for field in RunConfig.model_fields:
        value = getattr(args, field, None)
        if value is not None:
            values[field] = _coerce(field, value)
    return RunConfig.model_validate(values)


def _parse_grid(items: Sequence[str]) -> Dict[str, List[str]]:
    grid: Dict[str, List[str]] = {}
    for item in items:
        name, sep, raw = item.partition("=")
        if not sep or not raw:
            raise ValueError(f"grid entry '{item}' must look like name=v1,v2")
        if name not in SWEEP_PARAMETERS:
            raise ValueError(f"cannot sweep '{name}'; choose from {sorted(SWEEP_PARAMETERS)}")
        grid[name] = [v.strip() for v in raw.split(",") if v.strip()]
    return grid


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pecf", description="Progressive ensembles of collaborative filters")
    parser.add_argument("--log-level", default=None, help="loguru level (default: PECF_LOGLEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("prepare", "load, binarize, sample zeros, split; write dataset.csv + manifest.txt"),
        ("train", "prepare data, train one method, evaluate, write artifacts"),
    ):
        _add_run_config_flags(sub.add_parser(name, help=help_text))

    p = sub.add_parser("sweep", help="one run per grid point, comparison table at the end")
    _add_run_config_flags(p)
    p.add_argument("--grid", action="append", default=[], metavar="NAME=V1,V2", help=f"one of {sorted(SWEEP_PARAMETERS)}")

    p = sub.add_parser("evaluate", help="evaluate a saved model on a prepared dataset")
    p.add_argument("--prepared", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--cutoffs", default="50,100,200")
    p.add_argument("--no-exclude-seen", action="store_true")
    p.add_argument("--output-dir", default="runs/evaluate")

    p = sub.add_parser("synth", help="write a block-diverse synthetic triplet file")
    p.add_argument("--out", required=True)
    p.add_argument("--m", type=int, default=400)
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--blocks", type=int, default=2)
    p.add_argument("--d-true", type=int, default=5)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--positive-rate", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=7)

    p = sub.add_parser("fetch", help="download MovieLens-100K and print the path to u.data")
    p.add_argument("--dest", default=None)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    orchestrator = Orchestrator()

    try:
        if args.command == "prepare":
            artifacts = orchestrator.prepare(load_run_config(args))
            for key, path in artifacts.items():
                print(f"{key}={path}")

        elif args.command == "train":
            result = orchestrator.run_experiment(load_run_config(args))
            print(format_report(result.final_report))

        elif args.command == "sweep":
            table = orchestrator.sweep(load_run_config(args), _parse_grid(args.grid))
            print(table.to_string(index=False))

        elif args.command == "evaluate":
            eval_config = EvalConfig(
                cutoffs=tuple(int(m) for m in args.cutoffs.split(",")),
                exclude_seen=not args.no_exclude_seen,
            )
            report = orchestrator.evaluate_saved(args.prepared, args.model, eval_config, args.output_dir)
            print(format_report(report))

        elif args.command == "synth":
            path = generate_synthetic(
                args.out, args.m, args.n, args.blocks, args.d_true, args.noise, args.seed, args.positive_rate
            )
            print(path)

        elif args.command == "fetch":
            print(fetch_movielens_100k(args.dest))

    except ValidationError as e:
        logger.error(f"invalid configuration:\n{e}")
        return EXIT_CONFIG
    except (OSError, httpx.HTTPError) as e:
        logger.error(f"I/O failure: {e}")
        return EXIT_IO
    except WmfSolveError as e:
        logger.error(str(e))
        return EXIT_CONFIG
    except ValueError as e:
        logger.error(str(e))
        return EXIT_CONFIG

    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
