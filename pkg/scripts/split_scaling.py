"""Distance of the split parameters from the initial almost solution as ‖b0‖ shrinks."""
import argparse

import numpy as np

from blowup_lab.profile_manifold import split
from blowup_lab.study_harness import StudyConfig, initial_state, make_initial_data


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--b0", type=float, nargs="+", default=[0.1, 0.05, 0.025, 0.0125])
    ap.add_argument("--delta0", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    dmu, dz = [], []
    print(f"{'b0':>7} {'its':>4} {'residual':>9} {'|mu-mu0|':>10} {'|z|':>10}")
    for b0 in args.b0:
        cfg = StudyConfig(b0=b0, delta0=args.delta0, Y=60, seed=args.seed)
        s0 = initial_state(cfg)
        r = split(make_initial_data(cfg), s0, cfg.p)
        dmu.append(abs(r.mu.a - s0.a) + np.linalg.norm(r.mu.b - s0.b, 2))
        dz.append(np.linalg.norm(r.mu.z))
        print(f"{b0:7.4f} {r.iterations:4d} {r.residual:9.1e} {dmu[-1]:10.3e} {dz[-1]:10.3e}")
    lb = np.log(args.b0)
    print(f"slopes: |mu-mu0| {np.polyfit(lb, np.log(dmu), 1)[0]:.3f}   |z| {np.polyfit(lb, np.log(dz), 1)[0]:.3f}")


if __name__ == "__main__":
    main()
