"""Fitted blowup time of constant data against the ODE value, over a dt sweep."""
import argparse
import time

from blowup_lab.pde_core import Field, SolveConfig, blowup_time_homogeneous, solve_direct
from blowup_lab.study_harness import fit_blowup_time


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--p", type=float, default=3.0)
    ap.add_argument("--u0", type=float, nargs="+", default=[1.0, 2.0])
    ap.add_argument("--dt", type=float, nargs="+", default=[1e-4, 3e-5, 1e-5])
    args = ap.parse_args()
    print(f"{'u0':>5} {'dt':>8} {'t* fit':>12} {'t* exact':>12} {'rel err':>9} {'sec':>6}")
    for u0 in args.u0:
        exact = blowup_time_homogeneous(u0, args.p)
        for dt in args.dt:
            # keep dt * u^{p-1} fixed across amplitudes
            step = dt / u0 ** (args.p - 1)
            start = time.perf_counter()
            tr = solve_direct(Field.constant(u0, 1, 0.1, 1.0),
                              SolveConfig(p=args.p, dt=step, t_end=10 * exact, blowup_cutoff=1e6))
            t_star = fit_blowup_time(tr, args.p)
            print(f"{u0:5.2f} {step:8.1e} {t_star:12.8f} {exact:12.8f} {abs(t_star / exact - 1):9.2e} "
                  f"{time.perf_counter() - start:6.2f}")


if __name__ == "__main__":
    main()
