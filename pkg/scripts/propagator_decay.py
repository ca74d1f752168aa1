"""Decay rate of the projected propagator on Ran P^α over a β sweep."""
import argparse

from blowup_lab.linear_analysis import measure_propagator_decay


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alpha", type=float, nargs="+", default=[0.25, 0.5, 1.0])
    ap.add_argument("--beta", type=float, nargs="+", default=[0.0, 1e-3, 1e-2, 1e-1])
    ap.add_argument("--alpha-horizon", type=float, default=40.0, help="horizon in units of 1/alpha")
    ap.add_argument("--n", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(f"{'alpha':>6} {'beta':>8} {'rate/alpha':>11} {'R2':>8}")
    for alpha in args.alpha:
        for b in args.beta:
            fit = measure_propagator_decay(alpha, b, args.alpha_horizon / alpha, n=args.n, seed=args.seed)
            flag = "  inconclusive" if fit.inconclusive else ""
            print(f"{alpha:6.3f} {b:8.1e} {fit.rate / alpha:11.4f} {fit.r2:8.5f}{flag}")


if __name__ == "__main__":
    main()
