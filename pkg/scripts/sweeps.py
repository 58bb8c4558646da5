"""Noise-level and trial-count sweeps, written as CSV.

    python3 scripts/sweeps.py --model nonlinear-sl --axis noise --out out/sweeps
    python3 scripts/sweeps.py --model linear-sl --axis trials --noise 0.01
"""
import argparse
import csv
from pathlib import Path

from bvp_discovery.cli import ExperimentConfig, make_dataset, summarize, sweep_records
from bvp_discovery.models import get_model


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--model", default="nonlinear-sl")
    parser.add_argument("--axis", choices=("noise", "trials"), default="noise")
    parser.add_argument("--pipeline", choices=("estimate", "identify"), default="estimate")
    parser.add_argument("--trials", type=int, default=200, help="trials per point on the noise axis")
    parser.add_argument("--noise", type=float, default=0.01, help="noise level on the trial axis")
    parser.add_argument("--counts", type=int, nargs="*", help="trial counts on the trial axis")
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--out", type=Path, default=Path("out/sweeps"))
    args = parser.parse_args()

    available = len(get_model(args.model).forcing_grid)
    counts = args.counts or [c for c in ExperimentConfig.trial_counts if c <= available]
    config = ExperimentConfig(
        model=args.model,
        pipeline="noise-sweep" if args.axis == "noise" else "trial-sweep",
        trials=args.trials if args.axis == "noise" else None,
        noise=args.noise,
        trial_counts=tuple(counts),
        sweep_pipeline=args.pipeline,
        sweep_seeds=args.seeds,
    )
    records = sweep_records(config, make_dataset(config))
    rows = summarize(records)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"{args.model}_{args.axis}_{args.pipeline}.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    for r in rows:
        errs = "  ".join(f"{k[6:-5]}={v:.3g}" for k, v in r.items() if k.startswith("error_") and k.endswith("_mean"))
        print(f"{args.axis}={r['value']:<8g} {errs}  spurious={r['spurious_mean']:.2f}")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
