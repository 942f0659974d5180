"""Per-target test RMSE of the forecasting forest against the persistence baseline.

    python scripts/forecast_skill.py --seeds 0 1 --trees 100
"""

import argparse

from rtap.experiments import forecast_skill
from rtap.forecast import ForestParams


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--business", default="Biz")
    ap.add_argument("--trees", type=int, default=ForestParams.n_trees)
    args = ap.parse_args()
    for seed in args.seeds:
        res = forecast_skill(seed, args.business, ForestParams(n_trees=args.trees, seed=seed))
        print(f"seed {seed} ({res.seconds:.0f} s)")
        print(f"  {'target':<10} {'forest':>8} {'naive':>8} {'ratio':>6}")
        for name, ratio in res.ratios().items():
            print(f"  {name:<10} {res.rfr[name]:8.4f} {res.naive[name]:8.4f} {ratio:6.3f}")


if __name__ == "__main__":
    main()
