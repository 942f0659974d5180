"""Four-class macro F0.5 of the hierarchical pipeline against one multiclass forest.

    python scripts/pipeline_vs_flat.py --seeds 0 1 2
    python scripts/pipeline_vs_flat.py --source true --trees 100
"""

import argparse
import dataclasses

from rtap.experiments import PIPELINE_VS_FLAT_PARAMS, pipeline_vs_flat


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--business", default="Biz")
    ap.add_argument("--source", choices=("true", "forecast", "oob"), default=PIPELINE_VS_FLAT_PARAMS.classifier_source,
                    help="what the classifiers are trained on")
    ap.add_argument("--trees", type=int, default=PIPELINE_VS_FLAT_PARAMS.forest.n_trees,
                    help="forecasting forest size")
    args = ap.parse_args()
    params = dataclasses.replace(
        PIPELINE_VS_FLAT_PARAMS, classifier_source=args.source,
        forest=dataclasses.replace(PIPELINE_VS_FLAT_PARAMS.forest, n_trees=args.trees))
    for seed in args.seeds:
        res = pipeline_vs_flat(seed, args.business, params)
        per = "  ".join(f"{k}={'-' if v is None else f'{v:.3f}'}" for k, v in res.rtap_per_class.items())
        print(f"seed {seed}: pipeline={res.rtap_macro:.3f} flat={res.flat_macro:.3f} "
              f"diff={res.rtap_macro - res.flat_macro:+.3f}  [{per}]  ({res.seconds:.0f} s)")


if __name__ == "__main__":
    main()
