"""Monte Carlo bridge kernels against the grid propagator, and the standard-error scaling."""
import argparse

import numpy as np

from blowup_lab.ou_feynman_kac import OUBridgeConfig, direct_kernel, fk_estimate, fk_kernel
from blowup_lab.study_harness import FK_POTENTIALS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alpha", type=float, default=0.5)
    ap.add_argument("--r", type=float, default=1.0)
    ap.add_argument("--x", type=float, default=0.3)
    ap.add_argument("--y", type=float, default=-0.4)
    ap.add_argument("--paths", type=int, default=10**4)
    ap.add_argument("--steps", type=int, default=256)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    cfg = OUBridgeConfig(args.alpha, 0.0, args.r, args.paths, args.steps, seed=args.seed)
    for name, V in FK_POTENTIALS.items():
        est = fk_kernel(cfg, lambda z, s, V=V: V(z[..., 0]), args.x, args.y)
        ref = direct_kernel(args.x, args.y, args.r, args.alpha, V)
        print(f"{name:>10}: MC {est.mean:.7f} +- {est.std_error:.1e}  grid {ref:.7f}  "
              f"z = {(est.mean - ref) / est.std_error:+.2f}")
    V = lambda z, s: FK_POTENTIALS["cosine"](z[..., 0])
    ns = [10**3, 10**4, 10**5]
    ses = [fk_estimate(OUBridgeConfig(args.alpha, 0.0, args.r, n, 128, seed=args.seed), V, args.x, args.y).std_error
           for n in ns]
    print("std errors", ", ".join(f"{s:.2e}" for s in ses),
          f"slope {np.polyfit(np.log(ns), np.log(ses), 1)[0]:.3f}")


if __name__ == "__main__":
    main()
