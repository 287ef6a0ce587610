"""Power needed to meet a common rate target, sparse vs fully active.

    python demos/powermin_demo.py [--seed N] [--rates 0.5 1.0 1.5]
"""
import argparse

from activeris.powermin import powermin_baseline, powermin_sparse
from activeris.scenario import ScenarioConfig, sample_channels, trial_rng


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--rates", type=float, nargs="+", default=[0.5, 1.0, 1.5])
    args = ap.parse_args()

    base = ScenarioConfig(Q1=8, Q2=4)
    ch = sample_channels(base, trial_rng(args.seed, 0))
    print(f"{'rate':>5} {'SRB mW':>9} {'on':>4} {'fully active mW':>16} {'passive':>8}")
    for r in args.rates:
        cfg = base.replace(rate_req_bps_hz=r)
        srb = powermin_sparse(ch, cfg)
        fa = powermin_baseline(ch, cfg, "fully_active")
        pas = powermin_baseline(ch, cfg, "passive_feasibility")
        fmt = lambda rep: f"{1e3 * rep.power_w:.3f}" if rep.feasible else "infeas."
        print(f"{r:5.2f} {fmt(srb):>9} {srb.active_res:>4} {fmt(fa):>16} "
              f"{'yes' if pas.feasible else 'no':>8}")


if __name__ == "__main__":
    main()
