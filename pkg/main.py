#!/usr/bin/env python3
"""Main entry point for dualis: partition-function estimation in dual factor graphs."""
import argparse
import json
import logging
import os
import sys
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

from core.estimators_stats import CSV_HEADER
from modules import cli_runner
from modules.experiment_config import (
    DOMAINS,
    DUAL_ALGORITHMS,
    PRIMAL_SAMPLERS,
    Q1_NORMALIZERS,
    ConfigError,
    load_config,
)

LOG = logging.getLogger("main")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def setup_logging() -> None:
    """Setup logging configuration (stderr, plus a file under logs/)."""
    level = os.environ.get("LOG_LEVEL", "INFO").upper()
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]

    log_file = None
    if not os.environ.get("DUALIS_NO_LOG_FILE"):
        log_dir = Path("logs")
        log_dir.mkdir(exist_ok=True)
        log_file = log_dir / f"dualis_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"
        handlers.append(logging.FileHandler(log_file))

    logging.basicConfig(
        level=level,
        format="%(asctime)s [%(levelname)s] [%(name)s] %(message)s",
        handlers=handlers,
        force=True,
    )
    if log_file is not None:
        LOG.debug(f"Logging to {log_file}")


def _dist_arg(text: str) -> Any:
    """'0.5' -> constant, '0.1:1.0' -> uniform range, '0.1,0.2,...' -> explicit list."""
    try:
        if ":" in text:
            lo, hi = text.split(":", 1)
            return [float(lo), float(hi)]
        if "," in text:
            return {"explicit": [float(t) for t in text.split(",") if t.strip()]}
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse distribution '{text}'") from None


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=os.environ.get("DUALIS_CONFIG"), help="Flat YAML config file")
    p.add_argument("--preset", help="Preset name from presets/")
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--boundary", choices=["free", "periodic"])
    p.add_argument("--family", choices=["ising", "potts"])
    p.add_argument("--q", type=int)
    p.add_argument("--J-A", dest="J_A", type=_dist_arg, help="A-bond couplings: value, lo:hi or v1,v2,...")
    p.add_argument("--J-B", dest="J_B", type=_dist_arg, help="B-bond couplings: value, lo:hi or v1,v2,...")
    p.add_argument("--H", dest="H", type=_dist_arg, help="Fields: value, lo:hi or v1,v2,...")
    p.add_argument("--seed", type=int)
    p.add_argument("--partition", choices=["alg1", "alg2", "checker", "custom"])
    p.add_argument("--excluded-site", dest="excluded_site", type=int)
    p.add_argument("--tanh", action="store_true", default=None, help="Use tanh-normalized dual tables")


def _add_sampler_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--domain", choices=DOMAINS)
    p.add_argument("--algorithm", choices=DUAL_ALGORITHMS, help="Dual-domain algorithm")
    p.add_argument("--sampler", choices=PRIMAL_SAMPLERS, help="Primal-domain sampler")
    p.add_argument("--L", dest="L", type=int, help="Samples per chain")
    p.add_argument("--chains", type=int)
    p.add_argument("--walkers", type=int, help="Parallel walkers inside one MCMC chain")
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--ladder", help="AIS exponents, comma-separated (1,...)")
    p.add_argument("--sweeps-per-level", dest="sweeps_per_level", type=int)
    p.add_argument("--q1-normalizer", dest="q1_normalizer", choices=Q1_NORMALIZERS)
    p.add_argument("--output", help="Output directory")
    p.add_argument("--threads", type=int, help="Parallel chains (DUALIS_THREADS overrides)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualis", description="Estimate Ising/Potts partition functions")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="Run one sampler and write traces + summary.json")
    _add_config_args(p)
    _add_sampler_args(p)
    p.add_argument("--print-trace", action="store_true", help="Print chain 0's trace CSV instead of the summary")

    p = sub.add_parser("compare", help="Run several samplers on the same instance")
    _add_config_args(p)
    _add_sampler_args(p)
    p.add_argument("--algorithms", help="Comma-separated list such as primal:gibbs,dual:uniform")

    p = sub.add_parser("oracle", help="Exact log Z by enumeration (small lattices)")
    _add_config_args(p)

    dual = sub.add_parser("dual", help="Dual graph tools")
    dual_sub = dual.add_subparsers(dest="dual_command", required=True)
    p = dual_sub.add_parser("inspect", help="Dump dual factor tables as JSON")
    _add_config_args(p)

    part = sub.add_parser("partition", help="Partition tools")
    part_sub = part.add_subparsers(dest="partition_command", required=True)
    p = part_sub.add_parser("validate", help="Report rank and residual conditions of a partition")
    _add_config_args(p)
    _add_sampler_args(p)
    return parser


_NOT_CONFIG = {"command", "dual_command", "partition_command", "config", "print_trace"}


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG and v is not None}


def _emit(payload: Dict[str, Any]) -> None:
    json.dump(cli_runner.json_safe(payload), sys.stdout, indent=2, sort_keys=True, default=cli_runner.json_default)
    sys.stdout.write("\n")


def dispatch(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, _overrides(args))

    if args.command == "estimate":
        result = cli_runner.run(cfg)
        if args.print_trace:
            traces = next(iter(result["traces"].values()))
            sys.stdout.write(",".join(CSV_HEADER) + "\n")
            for row in traces[0].rows:
                sys.stdout.write(",".join([str(row[0])] + [repr(v) for v in row[1:]]) + "\n")
        else:
            _emit({label: block["merged"] for label, block in result["summary"]["samplers"].items()})
    elif args.command == "compare":
        _emit(cli_runner.compare(cfg))
    elif args.command == "oracle":
        _emit(cli_runner.oracle(cfg))
    elif args.command == "dual":
        _emit(cli_runner.dual_inspect(cfg))
    elif args.command == "partition":
        report = cli_runner.partition_validate(cfg)
        _emit(report)
        if not report["ok"]:
            return EXIT_NUMERIC
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)
    setup_logging()
    try:
        return dispatch(args)
    except ConfigError as e:
        LOG.error(f"❌ config error: {e}")
        return EXIT_CONFIG
    except ValueError as e:
        LOG.error(f"❌ {type(e).__name__}: {e}")
        LOG.debug("traceback", exc_info=True)
        return EXIT_CONFIG
    except RuntimeError as e:
        LOG.error(f"❌ {type(e).__name__}: {e}")
        LOG.debug("traceback", exc_info=True)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
