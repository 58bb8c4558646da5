"""Held-out forcing error of the identified model for each left-hand-side order.

    python3 scripts/order_selection.py --models euler-bernoulli linear-sl
"""
import argparse

from bvp_discovery.discovery import IDENTIFY, default_settings, select_order, split_trials
from bvp_discovery.models import CATALOG, all_forcings
from bvp_discovery.solver import generate_trials


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--models", nargs="*", default=sorted(CATALOG))
    parser.add_argument("--test-fraction", type=float, default=0.2)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    for name in args.models:
        model = CATALOG[name]
        pool = generate_trials(model, all_forcings(model), model.default_grid())
        train, test = split_trials(pool, args.test_fraction, args.seed)
        diff, reg = default_settings(model, IDENTIFY)
        sel = select_order(train, test, (1, 2, 3, 4), diff, reg)
        errs = "  ".join(f"{a}: {e:.3g}" for a, e in sorted(sel.errors.items()))
        print(f"{name:16s} best={sel.best} (true {model.order})  {errs}")


if __name__ == "__main__":
    main()
