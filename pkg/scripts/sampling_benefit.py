"""Severity macro F0.5 with and without weighted replication of the rarer levels.

    python scripts/sampling_benefit.py --seeds 0 1 2
    python scripts/sampling_benefit.py --disks 2 --no-cascading   # default fleet geometry
"""

import argparse

from rtap.experiments import sampling_benefit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--business", default="Biz")
    ap.add_argument("--ratio", type=float, default=20.0)
    ap.add_argument("--disks", type=int, default=8)
    ap.add_argument("--cascading", action=argparse.BooleanOptionalAction, default=True)
    args = ap.parse_args()
    gains = []
    for seed in args.seeds:
        res = sampling_benefit(seed, args.business, imbalance_ratio=args.ratio, n_disks=args.disks,
                               cascading=args.cascading)
        gains.append(res.gain)
        print(f"seed {seed}: weighted={res.weighted_macro:.3f} unweighted={res.unweighted_macro:.3f} "
              f"gain={res.gain:+.3f} weights={res.weights} test low/med/high={res.test_counts} "
              f"({res.seconds:.1f} s)")
    print(f"mean gain {sum(gains) / len(gains):+.3f}")


if __name__ == "__main__":
    main()
