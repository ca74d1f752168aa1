"""Run the dynamic-rescaling study, export the series and summarize the final resolvable decade."""
import argparse
import logging

import numpy as np

from blowup_lab.study_harness import StudyConfig, export_report, load_config, run_blowup_study


def summarize(rep):
    m = rep.final_decade()
    print(f"t* = {rep.t_star:.8f}  samples = {len(rep.t)}  runtime = {rep.runtime:.1f}s  truncated = {rep.truncated}")
    if m.any():
        for name, vals in (("lambda ratio", rep.lambda_ratio[m]), ("b ratio", rep.b_ratio[m]),
                           ("|c - 1|", np.abs(rep.c[m] - 1))):
            print(f"  {name:<13} [{vals.min():.4f}, {vals.max():.4f}]")
    mj = rep.majorants[-1]
    print(f"  majorants     M1={mj.M1:.3g} M2={mj.M2:.3g} A={mj.A:.3g} B={mj.B:.3g}   max|zeta|={rep.zeta_max:.3g}")
    if rep.profile is not None and len(rep.profile.t):
        print(f"  profile       center {rep.profile.center[-1]:.5f} (target {rep.profile.target_center:.5f}),"
              f" sup error {rep.profile.sup_error[-1]:.4f}")
    print(f"  direct check  {rep.direct_discrepancy:.3%}")
    for note in rep.notes:
        print("  note:", note)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("config", nargs="?")
    ap.add_argument("--out", default="out/study")
    ap.add_argument("--halve", action="store_true", help="also rerun with dtau/2 and report the t* shift")
    ap.add_argument("--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    cfg = load_config(args.config)[0] if args.config else StudyConfig()
    rep = run_blowup_study(cfg)
    export_report(rep, args.out)
    summarize(rep)
    if args.halve:
        finer = run_blowup_study(StudyConfig(**{**cfg.__dict__, "dtau": cfg.dtau / 2, "direct_check": False}))
        print(f"t* with dtau/2 = {finer.t_star:.8f}  relative shift {abs(finer.t_star / rep.t_star - 1):.1e}")


if __name__ == "__main__":
    main()
