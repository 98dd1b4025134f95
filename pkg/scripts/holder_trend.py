"""Weighted Hoelder quotients of f, I and II against pair separation.

Prints the largest weighted quotient in each dyadic separation band, which
should stay bounded as the separation shrinks when sigma is admissible.

    python3 scripts/holder_trend.py [--sigma 0.4] [--pairs 10000] [--seed 0]
"""

import argparse

from lbregularity import Ball, BoundaryDatum, PhaseGrid, make_kernel, picard_solve
from lbregularity.analysis import holder_modulus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sigma", type=float, default=0.4)
    ap.add_argument("--pairs", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--d0-min", type=float, default=0.1)
    args = ap.parse_args()

    kernel = make_kernel()
    ball = Ball()
    field, rep = picard_solve(BoundaryDatum(sigma=args.sigma), kernel, ball, PhaseGrid(ball), tol=1e-8)
    print(f"solve: {rep.status} in {rep.iterations} iterations")
    reports = {term: holder_modulus(field, args.sigma, ball, args.pairs, args.d0_min, args.seed,
                                    weight_power=2 if term == "I" else 3, term=term)
               for term in ("f", "I", "II")}
    bands = sorted({b for r in reports.values() for b in r.trend}, key=lambda b: int(b[2:]))
    print(f"{'separation':>12}" + "".join(f"{t:>14}" for t in reports))
    for b in bands:
        print(f"{b:>12}" + "".join(f"{r.trend.get(b, float('nan')):>14.4e}" for r in reports.values()))
    print(f"{'sup':>12}" + "".join(f"{r.weighted_sup:>14.4e}" for r in reports.values()))
    print(f"{'drift':>12}" + "".join(f"{r.stability_ratio:>14.4f}" for r in reports.values()))


if __name__ == "__main__":
    main()
