"""L1 Cauchy gaps of the Wick-ordered interaction on nested balls.

    python3 scripts/wick_ladder.py --radii 1 2 3 4 5 --samples 100000
"""

import argparse

from bose2d.classical import wick_cauchy_check
from bose2d.model import ModeSet, Potential


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--radii", type=float, nargs="+", default=[1, 2, 3, 4, 5])
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--streams", type=int, default=10)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--w0", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=7)
    args = p.parse_args()

    sets = [ModeSet.ball(r) for r in args.radii]
    res = wick_cauchy_check(sets, Potential.gaussian(args.w0, args.alpha), args.kappa, args.samples, args.seed, args.streams)
    print(f"{'radius':>7} {'modes':>6} {'E_int':>10} {'raw':>10} {'gap':>10} {'gap_err':>9}")
    for i, (r, S) in enumerate(zip(args.radii, sets)):
        gap = f"{res.gaps[i]:10.5f} {res.gap_errs[i]:9.2g}" if i < len(res.gaps) else ""
        print(f"{r:7g} {len(S):6d} {res.mean_energy[i]:10.5f} {res.mean_raw[i]:10.5f} {gap}")
    print(f"positive={res.positive} decreasing(99%)={res.decreasing()} raw_growing={res.raw_growing()}")


if __name__ == "__main__":
    main()
