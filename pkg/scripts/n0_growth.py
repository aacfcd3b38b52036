"""Free particle number on momentum balls with K^2 = 100 T, and its doubling ratio."""

import argparse
import math

from bose2d.model import ModeSet, bose_particle_number


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--temps", type=float, nargs="+", default=[1e2, 1e3, 1e4])
    p.add_argument("--kappa", type=float, default=1.0)
    args = p.parse_args()

    def n0(T):
        return bose_particle_number(ModeSet.momentum_ball(math.sqrt(100 * T)), args.kappa, T)

    print(f"{'T':>10} {'N0(T)':>14} {'N0(2T)/N0(T)':>14} {'T log T ratio':>14}")
    for T in args.temps:
        ref = 2 * math.log(2 * T) / math.log(T)
        print(f"{T:10g} {n0(T):14.6g} {n0(2 * T) / n0(T):14.6f} {ref:14.6f}")


if __name__ == "__main__":
    main()
