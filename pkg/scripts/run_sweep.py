"""Run a comparison sweep and print the table of gaps.

    python3 scripts/run_sweep.py configs/single_mode.cfg
    python3 scripts/run_sweep.py configs/five_mode.cfg --samples 100000
"""

import argparse
import sys

from bose2d.compare import convergence_report, theorem_quantities
from bose2d.config import load_config


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config")
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    args = p.parse_args()

    cfg = load_config(args.config).with_overrides(samples=args.samples, seed=args.seed)
    names = cfg.compare.quantities()
    rows = theorem_quantities(cfg, progress=lambda r: print(f"T = {r.T:g} done ({r.status})", file=sys.stderr))
    print("T".rjust(8) + "".join(n.rjust(24) for n in names))
    for r in rows:
        cells = "".join(f"{r.gaps.get(n, float('nan')):.5g} +- {r.gap_errors.get(n, 0):.1g}".rjust(24) for n in names)
        print(f"{r.T:8g}{cells}")
    if len(rows) >= 3:
        rep = convergence_report(rows, cfg.tolerances, names)
        for n, d in rep["quantities"].items():
            slope = "n/a" if d["slope"] is None else f"{d['slope']:.2f}"
            print(f"{n}: monotone={d['monotone']} slope={slope} pass={d['pass']}")


if __name__ == "__main__":
    main()
