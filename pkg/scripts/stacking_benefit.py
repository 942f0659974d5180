"""Anomaly F0.5 of each base learner and of the stacked classifier.

    python scripts/stacking_benefit.py --seeds 0 1 2 --ratio 60 --business Mon
"""

import argparse

from rtap.experiments import stacking_benefit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--business", default="Mon")
    ap.add_argument("--ratio", type=float, default=60.0)
    ap.add_argument("--servers", type=int, default=20)
    ap.add_argument("--hours", type=int, default=3000)
    args = ap.parse_args()
    for seed in args.seeds:
        res = stacking_benefit(seed, args.ratio, args.business, args.servers, args.hours)
        bases = "  ".join(f"{k}={v:.3f}" for k, v in res.base_f.items())
        print(f"seed {seed}: {bases}  stack={res.stacking_f:.3f}  margin={res.margin:+.3f}  "
              f"test anomalies={res.n_test_anomalies}  ({res.seconds:.0f} s)")


if __name__ == "__main__":
    main()
