"""Integrate the (a, b) system on and off the slaving manifold and watch τβ approach (p-1)²/(4p)."""
import argparse

import numpy as np

from blowup_lab.modulation import ModConstants, beta, integrate_modulation, slaved_a


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--p", type=float, default=3.0)
    ap.add_argument("--b0", type=float, default=0.05)
    ap.add_argument("--a0", type=float, nargs="+", default=[0.5, 0.3])
    ap.add_argument("--tau-end", type=float, default=1000.0)
    ap.add_argument("--dtau", type=float, default=0.01)
    args = ap.parse_args()
    p, b0 = args.p, [[args.b0]]
    kappa = ModConstants(p).kappa
    limit = (p - 1) ** 2 / (4 * p)
    runs = [("slaved", None)] + [(f"a0={a0}", a0) for a0 in args.a0]
    for label, a0 in runs:
        path = integrate_modulation(a0 or 0.0, b0, p, args.tau_end, args.dtau, slaved=a0 is None,
                                    record_every=int(round(1 / args.dtau)))
        print(f"-- {label}: psd_ok={path.psd_ok} attracting={path.attracting}")
        print(f"{'tau':>8} {'tau*beta':>10} {'A':>8} {'B':>8}")
        for tau in np.geomspace(1, path.taus[-1], 7):
            k = int(np.argmin(np.abs(path.taus - tau)))
            bt = beta(path.taus[k], b0, p)
            A = abs(path.a[k] - slaved_a(path.b[k], p)) / bt**2
            B = abs(path.b[k][0, 0] - bt) / bt ** (1 + kappa)
            print(f"{path.taus[k]:8.1f} {path.tau_beta()[k]:10.5f} {A:8.4f} {B:8.4f}")
    print(f"limit (p-1)^2/(4p) = {limit:.5f}")


if __name__ == "__main__":
    main()
