"""
Command line entry point.

  fedquad run               --config cfg.yaml [--seed N] [--out DIR] [--workers N]
  fedquad centralized       --config cfg.yaml
  fedquad grid              --config cfg.yaml [--grid grid.yaml]
  fedquad inspect-partition --config cfg.yaml
  fedquad check-data        --config cfg.yaml

Exit codes: 0 ok, 2 config, 3 data, 4 numeric, 5 io.
"""
import argparse
import os
import sys

from tqdm import tqdm

from . import __version__
from .errors import ConfigError, FedQuadError
from .runner import check_data, inspect_partition, run_ablation_grid, run_centralized, run_experiment
from .settings import DATA_DIR_ENV, load_grid, parse_config, with_overrides

COMMANDS = ("run", "centralized", "grid", "inspect-partition", "check-data")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fedquad",
                                 description="Federated metric-learning simulator")
    ap.add_argument("--version", action="version", version=f"fedquad {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help=f"experiment YAML (defaults when omitted; {DATA_DIR_ENV} "
                            f"fills an empty dataset.path)")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--workers", type=int, default=None, help="client threads per round")
        p.add_argument("--quiet", action="store_true", help="no progress bars or round lines")
        if name == "grid":
            p.add_argument("--grid", default=None, help="YAML with beta/m1/m2/use_ce lists")
    return ap


def load_config(args):
    cfg = parse_config(args.config)
    overrides = {}
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise ConfigError("must be an unsigned 64-bit integer", key="seed")
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output.dir"] = args.out
    if args.workers is not None:
        overrides["workers"] = args.workers
    if getattr(args, "grid", None):
        overrides["grid"] = load_grid(args.grid)
    return with_overrides(cfg, **overrides) if overrides else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "run":
            run_experiment(cfg, quiet=args.quiet)
        elif args.command == "centralized":
            run_centralized(cfg, quiet=args.quiet)
        elif args.command == "grid":
            df = run_ablation_grid(cfg, quiet=args.quiet)
            failed = int((df["error"] != "").sum())
            if not args.quiet:
                tqdm.write(f"[OK] grid: {len(df)} cells, {failed} failed -> "
                           f"{os.path.abspath(os.path.join(cfg.output.dir, 'grid.csv'))}")
        elif args.command == "inspect-partition":
            inspect_partition(cfg, quiet=args.quiet)
        else:
            check_data(cfg, quiet=args.quiet)
    except FedQuadError as e:
        print(f"[ERR] {e.category}: {e}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        print("[ERR] interrupted", file=sys.stderr)
        return 130
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
