"""``conncbf`` command line: ``run``, ``sweep``, ``plotdata`` and ``validate``.

Exit codes: 0 success, 1 configuration error or malformed trace, 2 runtime
error (including any failed sweep cell).  Every command is a thin shell
over library calls.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from conncbf.config import parse_config, serialize
from conncbf.plotdata import TraceError, write_plotdata
from conncbf.sim_engine import ConfigError, atomic_write_text, export_trial, run_trial
from conncbf.sweep import cell_key, parse_sweep, run_sweep, write_sweep

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("conncbf")


def _err(msg: str) -> None:
    print(f"conncbf: {msg}", file=sys.stderr)


def cmd_run(args) -> int:
    config = parse_config(args.config, args.override)
    seed = config.rng_seed if args.seed is None else args.seed
    out = Path(args.out)
    start = time.perf_counter()
    result = run_trial(config, seed)
    trace, summary = export_trial(result, out)
    atomic_write_text(out / "config.ini", serialize(config))
    print(f"min lambda2 {result.min_lambda2:.6f}  min pair distance {result.min_pair_dist:.4f}  "
          f"infeasible ticks {result.qp_infeasible_ticks}  wall {time.perf_counter() - start:.2f} s")
    print(f"wrote {trace} and {summary}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = parse_sweep(args.config, args.override)
    if args.seed is not None:
        spec = type(spec)(**{**spec.__dict__, "base_seed": args.seed})
    start = time.perf_counter()
    outcomes = run_sweep(spec, args.jobs)
    table = write_sweep(spec, outcomes, args.out)
    failed = [o for o in outcomes if o.failed]
    for o in failed:
        for t, msg in o.errors:
            _err(f"cell {cell_key(o.cell)} trial {t} (seed {o.seeds[t]}) failed: {msg}")
    print(f"{len(outcomes)} cells x {spec.trials} trials in {time.perf_counter() - start:.1f} s; "
          f"wrote {table}")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_plotdata(args) -> int:
    trace = Path(args.trace)
    cfg_path = Path(args.config) if args.config else trace.parent / "config.ini"
    config = parse_config(cfg_path if cfg_path.exists() else None, args.override)
    out = Path(args.out) if args.out else trace.parent / "plotdata.csv"
    path = write_plotdata(trace, out, config.epsilon, args.every,
                          config.max_area if config.behavior == "coverage" else None)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_validate(args) -> int:
    config = parse_config(args.config, args.override, extra_sections=("sweep",))
    print(serialize(config), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="conncbf", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="INI config file")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config field (repeatable)")

    run = sub.add_parser("run", help="run one trial and export trace.csv / summary.csv")
    common(run)
    run.add_argument("--seed", type=int, help="trial seed (default: rng_seed from the config)")
    run.add_argument("--out", default="run_out", help="output directory")
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="run a parameter grid and write table.csv")
    common(sw, config_required=True)
    sw.add_argument("--seed", type=int, help="base seed (overrides [sweep] base_seed)")
    sw.add_argument("--out", default="sweep_out", help="output directory")
    sw.add_argument("--jobs", type=int, default=1, help="worker processes")
    sw.set_defaults(func=cmd_sweep)

    pd = sub.add_parser("plotdata", help="downsample a trace for plotting")
    pd.add_argument("trace", help="trace.csv from a run")
    common(pd)
    pd.add_argument("--out", help="output CSV (default: plotdata.csv next to the trace)")
    pd.add_argument("--every", type=int, default=10, help="keep every k-th sample")
    pd.set_defaults(func=cmd_plotdata)

    va = sub.add_parser("validate", help="parse a config and print it with all defaults")
    common(va)
    va.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, TraceError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
