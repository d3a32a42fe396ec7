"""Run the four benchmark studies and write plot-ready CSV tables.

    python3 scripts/reproduce_all.py --out runs            # full horizons
    python3 scripts/reproduce_all.py --out runs --quick    # scaled presets

Each study is a sweep over filters (and N where relevant); the plot tables
land in ``<out>/<study>/plots``.
"""

import argparse
import logging
from pathlib import Path

from engsf.config import build_config
from engsf.harness import RunManifest, emit_plot_data, sweep

STUDIES = {
    "ex1": dict(filters=("engsf", "enkf", "ensrf"), Ns=(200, 500, 1000), seeds=tuple(range(1, 21)),
                extra={}),
    "ex2": dict(filters=("engsf", "enkf", "ensrf", "sir"), Ns=(100,), seeds=tuple(range(1, 21)),
                extra={"reference_N": 2000}),
    "ex3": dict(filters=("engsf", "enkf", "sir"), Ns=(200,), seeds=tuple(range(1, 11)), extra={}),
    "ex4": dict(filters=("engsf", "enkf"), Ns=(100, 200, 400), seeds=tuple(range(1, 6)), extra={}),
}

QUICK = {
    "ex1": {},
    "ex2": {"reference_N": 0},
    "ex3": {"steps": 2000},
    "ex4": {"truth_spinup": 200, "steps": 500},
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs")
    ap.add_argument("--quick", action="store_true", help="short horizons for a smoke run")
    ap.add_argument("--only", nargs="*", choices=sorted(STUDIES))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    for name in args.only or sorted(STUDIES):
        study = STUDIES[name]
        out = Path(args.out) / name
        cells = []
        for filt in study["filters"]:
            values = {"experiment": name, "filter": filt, "seeds": study["seeds"], **study["extra"]}
            if args.quick:
                values.update(QUICK[name])
            # the SIR reference in ex3 uses ten times the particles
            Ns = (2000,) if (name == "ex3" and filt == "sir") else study["Ns"]
            cfg = build_config(values)
            cells.extend(sweep(cfg, "N", Ns, out).cells)
            logging.info("%s %s done", name, filt)
        manifest = RunManifest({"study": name}, cells, path=str(out / "study.json"))
        manifest.save(out / "study.json")
        for path in emit_plot_data(manifest):
            logging.info("wrote %s", path)


if __name__ == "__main__":
    main()
