"""Command line entry point.

    engsf run --config ex3.ini [--out DIR]
    engsf sweep --config ex4.ini --param N=100,200,400 [--out DIR]
    engsf oracle ex1 --grid 10000 [--out FILE]
    engsf version

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import build_config, parse_config
from .errors import ConfigError, EngsfError, NumericalError
from .harness import emit_plot_data, oracle_ex1, parse_sweep_values, run_experiment, sweep

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

log = logging.getLogger("engsf")


def _load(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def _report(manifest) -> int:
    ok = [c for c in manifest.cells if not c.get("error")]
    for c in manifest.cells:
        if c.get("error"):
            print(f"{c['cell']} seed={c['seed']} FAILED {c['error']}")
        else:
            kl = f" kl={c['mean_kl']:.6g}" if c.get("mean_kl") is not None else ""
            print(f"{c['cell']} seed={c['seed']} rmse={c['time_avg_rmse']:.6g}{kl}")
    if ok:
        for f in emit_plot_data(manifest):
            log.info("wrote %s", f)
    print(f"manifest: {manifest.path}")
    return EXIT_NUMERICAL if manifest.failed else EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args.config)
    return _report(run_experiment(cfg, args.out))


def cmd_sweep(args) -> int:
    cfg = _load(args.config)
    if "=" not in args.param:
        raise ConfigError("--param must look like NAME=v1,v2,...")
    name, values = args.param.split("=", 1)
    name = name.strip()
    if name not in cfg.as_dict() or name in ("experiment", "seeds"):
        raise ConfigError(f"cannot sweep over {name!r}")
    try:
        vals = parse_sweep_values(name, values)
    except ValueError as exc:
        raise ConfigError(f"bad sweep values: {exc}") from None
    for v in vals:
        cfg.replace(**{name: v})  # validate every cell before running any
    return _report(sweep(cfg, name, vals, args.out))


def cmd_oracle(args) -> int:
    values = {"experiment": "ex1", "grid_points": args.grid}
    if args.d is not None:
        values["d"] = args.d
    if args.obs_var is not None:
        values["obs_var"] = (args.obs_var,)
    cfg = build_config(values)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    post = oracle_ex1(cfg, out)
    print(f"wrote {out} ({cfg.grid_points} points, posterior mean {post.mean():.6g})")
    return EXIT_OK


def cmd_version(args) -> int:
    print(f"engsf {__version__}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="engsf", description="Ensemble Gaussian sum filter experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one configuration over its seeds")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default=None, help="output directory (overrides config)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a configuration for several values of one key")
    s.add_argument("--config", required=True)
    s.add_argument("--param", required=True, help="e.g. N=100,200,400")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_sweep)

    o = sub.add_parser("oracle", help="write the grid-Bayes posterior of a static problem")
    o.add_argument("problem", choices=["ex1"])
    o.add_argument("--grid", type=int, default=10000)
    o.add_argument("--d", type=float, default=None, help="observed datum")
    o.add_argument("--obs-var", type=float, default=None)
    o.add_argument("--out", default="ex1_oracle.csv")
    o.set_defaults(func=cmd_oracle)

    v = sub.add_parser("version")
    v.set_defaults(func=cmd_version)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except EngsfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
