"""Command-line experiment runner.

Subcommands ``generate``, ``discover``, ``estimate``, ``sweep`` and ``order``
all take ``--config`` (INI file), ``--data`` (dataset CSV), ``--out``
(directory) and ``--seed``. Every output file is a pure function of the
resolved config, the dataset and the seed.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import enum
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .discovery import (
    ESTIMATE,
    IDENTIFY,
    DiscoveryReport,
    default_settings,
    estimate_parameters,
    identify_operator,
    select_order,
    split_trials,
    true_parameters,
)
from .models import ForcingGrid, Grid, ModelSpec, all_forcings, forcing_set, get_model, sample_forcings
from .regression import RegressionConfig
from .signal import DifferentiationConfig, add_noise
from .solver import TrialSet, generate_trials, load_trialset, save_trialset

log = logging.getLogger("bvp_discovery")

PIPELINES = ("identify", "estimate", "order", "noise-sweep", "trial-sweep")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run depends on besides the dataset.

    ``diff`` and ``regression`` left as ``None`` are filled in per data
    regime by :func:`bvp_discovery.discovery.default_settings`.
    """

    model: str = "linear-sl"
    pipeline: str = "identify"
    n: int = 500
    a: float | None = None
    b: float | None = None
    forcing: ForcingGrid | None = None
    trials: int | None = None
    noise: float = 0.0
    noise_levels: tuple[float, ...] = (0.0, 0.01, 0.025, 0.05)
    trial_counts: tuple[int, ...] = (5, 10, 15, 25, 50, 100, 200)
    sweep_pipeline: str = ESTIMATE
    sweep_seeds: int = 5
    orders: tuple[int, ...] = (1, 2, 3, 4)
    test_fraction: float = 0.2
    diff: DifferentiationConfig | None = None
    regression: RegressionConfig | None = None
    seed: int = 0
    output: str = "out"

    def __post_init__(self):
        get_model(self.model)
        if self.pipeline not in PIPELINES:
            raise ValueError(f"pipeline must be one of {PIPELINES}, got {self.pipeline!r}")
        if self.sweep_pipeline not in (IDENTIFY, ESTIMATE):
            raise ValueError(f"sweep_pipeline must be {IDENTIFY!r} or {ESTIMATE!r}")
        if self.n < 8:
            raise ValueError("grid needs at least 8 points")
        if self.trials is not None and self.trials < 1:
            raise ValueError("trials must be positive")
        if self.noise < 0 or any(v < 0 for v in self.noise_levels):
            raise ValueError("noise levels must be nonnegative")
        if any(c < 1 for c in self.trial_counts):
            raise ValueError("trial counts must be positive")
        if self.sweep_seeds < 1:
            raise ValueError("sweep_seeds must be positive")
        if any(a not in (1, 2, 3, 4) for a in self.orders):
            raise ValueError("orders must lie in 1..4")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must be in (0, 1)")
        available = len(self.model_spec().forcing_grid)
        wanted = [self.trials or 0, *(self.trial_counts if self.pipeline == "trial-sweep" else ())]
        if max(wanted) > available:
            raise ValueError(f"requested {max(wanted)} trials but the forcing grid has {available}")

    def model_spec(self) -> ModelSpec:
        model = get_model(self.model)
        return model.with_forcing_grid(self.forcing) if self.forcing else model

    def grid(self) -> Grid:
        lo, hi = get_model(self.model).domain
        return Grid(lo if self.a is None else self.a, hi if self.b is None else self.b, self.n)

    def settings(self, pipeline: str, noise: float) -> tuple[DifferentiationConfig, RegressionConfig]:
        diff, reg = default_settings(self.model_spec(), pipeline, noise)
        return self.diff or diff, self.regression or reg


# ---------------------------------------------------------------------------
# INI parsing

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


_EXPERIMENT_KEYS = {
    "model": str, "pipeline": str, "trials": int, "noise": float,
    "noise_levels": _floats, "trial_counts": _ints, "sweep_pipeline": str,
    "sweep_seeds": int, "orders": _ints, "test_fraction": float, "seed": int, "output": str,
}
_GRID_KEYS = {"a": float, "b": float, "n": int}
_DIFF_KEYS = {"method": str, "window": int, "degree": int, "smooth_sigma": float, "boundary": str}
_REG_KEYS = {
    "lambda": ("lam", float), "beta": ("beta", float), "num_eps": ("num_eps", int),
    "iters": ("iters", int), "k_mode": ("k_mode", str), "final_lambda": ("final_lam", float),
    "keep": ("keep", lambda s: tuple(s.replace(",", " ").split())),
}


def _section(parser, name, keys) -> dict:
    if not parser.has_section(name):
        return {}
    unknown = set(parser[name]) - set(keys)
    if unknown:
        raise ValueError(f"unknown keys in [{name}]: {sorted(unknown)}; allowed: {sorted(keys)}")
    return dict(parser[name])


def parse_config(text: str) -> ExperimentConfig:
    """Build a config from INI text with optional sections ``[experiment]``,
    ``[grid]``, ``[forcing]``, ``[differentiation]`` and ``[regression]``."""
    parser = configparser.ConfigParser()
    parser.read_string(text)
    extra = set(parser.sections()) - {"experiment", "grid", "forcing", "differentiation", "regression"}
    if extra:
        raise ValueError(f"unknown config sections: {sorted(extra)}")
    kw = {k: _EXPERIMENT_KEYS[k](v) for k, v in _section(parser, "experiment", _EXPERIMENT_KEYS).items()}
    kw.update({k: _GRID_KEYS[k](v) for k, v in _section(parser, "grid", _GRID_KEYS).items()})
    forcing = _section(parser, "forcing", {"amplitudes", "frequencies", "offsets"})
    if forcing:
        base = get_model(kw.get("model", ExperimentConfig.model)).forcing_grid
        kw["forcing"] = ForcingGrid(**{
            k: _floats(forcing[k]) if k in forcing else getattr(base, k)
            for k in ("amplitudes", "frequencies", "offsets")
        })
    diff = _section(parser, "differentiation", _DIFF_KEYS)
    if diff:
        kw["diff"] = DifferentiationConfig(**{k: _DIFF_KEYS[k](v) for k, v in diff.items()})
    reg = _section(parser, "regression", _REG_KEYS)
    if reg:
        kw["regression"] = RegressionConfig(**{_REG_KEYS[k][0]: _REG_KEYS[k][1](v) for k, v in reg.items()})
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, enum.Enum):
        return obj.value
    return obj


def resolved_config(config: ExperimentConfig, pipeline: str, noise: float) -> dict:
    """The config with grid, forcing and regime defaults filled in."""
    diff, reg = config.settings(pipeline, noise)
    out = _plain(dataclasses.replace(config, diff=diff, regression=reg))
    grid = config.grid()
    out.update(a=grid.a, b=grid.b, forcing=_plain(config.model_spec().forcing_grid))
    return out


# ---------------------------------------------------------------------------
# shared steps

def _write_json(path: Path, payload: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def make_dataset(config: ExperimentConfig) -> TrialSet:
    """Trials for ``config``: the whole forcing grid, or a seeded draw of ``trials``."""
    model = config.model_spec()
    forcings = all_forcings(model) if config.trials is None else forcing_set(model, config.trials, config.seed)
    return generate_trials(model, forcings, config.grid())


def _dataset(config: ExperimentConfig, data) -> TrialSet:
    if data is None:
        log.info("no --data given; generating the full forcing grid for %s", config.model)
        return make_dataset(dataclasses.replace(config, trials=None))
    trials = load_trialset(data)
    if trials.model != config.model:
        raise ValueError(f"dataset holds model {trials.model!r} but the config names {config.model!r}")
    return trials


def _seeds(seed: int) -> tuple[int, int]:
    """Independent subsampling and noise seeds derived from one run seed."""
    a, b = np.random.SeedSequence(seed).generate_state(2)
    return int(a), int(b)


def run_point(config: ExperimentConfig, data: TrialSet, pipeline: str, count: int | None,
              noise: float, seed: int, settings=None) -> DiscoveryReport:
    """Subsample ``count`` trials, add noise, run one pipeline."""
    model = config.model_spec()
    sub_seed, noise_seed = _seeds(seed)
    if count is not None:
        if count > data.m:
            raise ValueError(f"requested {count} trials but the dataset has {data.m}")
        data = data.subset(sample_forcings(data.forcings, count, sub_seed))
    data = add_noise(data, noise, noise_seed)
    diff, reg = settings or config.settings(pipeline, noise)
    if pipeline == IDENTIFY:
        return identify_operator(data, model, diff, reg, noise)
    return estimate_parameters(data, model, diff, noise)


def _report_payload(config, report: DiscoveryReport, pipeline, noise, seed) -> dict:
    payload = report.to_dict()
    payload["config"] = resolved_config(config, pipeline, noise)
    payload["seed"] = seed
    return payload


def _fields_csv(path: Path, report: DiscoveryReport, model: ModelSpec, grid: Grid):
    truth = true_parameters(model, grid)
    cols = {}
    for name, values in report.parameters.items():
        cols[name] = values
        if name in truth:
            cols[name + "_true"] = truth[name]
    if report.operator is not None:
        cols["phi"] = report.operator.phi
        cols.update({f"L[{k}]": v for k, v in report.operator.operator_terms.items()})
    names = list(cols)
    rows = ([x] + [cols[nm][k] for nm in names] for k, x in enumerate(grid.points))
    _write_csv(path, ["x"] + names, rows)


# ---------------------------------------------------------------------------
# commands

def cmd_generate(config: ExperimentConfig, out: Path) -> Path:
    trials = make_dataset(config)
    path = save_trialset(trials, out / f"{config.model}.csv", config.model_spec(), config.seed)
    log.info("wrote %d trials to %s", trials.m, path)
    return path


def _single(config: ExperimentConfig, data, out: Path, pipeline: str) -> DiscoveryReport:
    trials = _dataset(config, data)
    report = run_point(config, trials, pipeline, config.trials, config.noise, config.seed)
    _write_json(out / f"{pipeline}_report.json", _report_payload(config, report, pipeline, config.noise, config.seed))
    _fields_csv(out / f"{pipeline}_fields.csv", report, config.model_spec(), trials.grid)
    log.info("%s: active %s, errors %s (%.2fs)", pipeline, report.selected.active_labels,
             report.errors, report.runtime)
    return report


def cmd_discover(config: ExperimentConfig, data, out: Path) -> DiscoveryReport:
    return _single(config, data, out, IDENTIFY)


def cmd_estimate(config: ExperimentConfig, data, out: Path) -> DiscoveryReport:
    return _single(config, data, out, ESTIMATE)


def sweep_records(config: ExperimentConfig, trials: TrialSet) -> list[dict]:
    """One record per (axis value, seed) of a noise or trial-count sweep.

    The differentiation and regression settings are resolved once for the
    noisiest point and held fixed along the axis.
    """
    pipeline = config.sweep_pipeline
    if config.pipeline == "trial-sweep":
        axis, points = "trials", [(c, config.noise) for c in config.trial_counts]
        regime_noise = config.noise
    else:
        axis, points = "noise", [(config.trials, v) for v in config.noise_levels]
        regime_noise = max(config.noise_levels)
    settings = config.settings(pipeline, regime_noise)
    records = []
    for count, noise in points:
        for s in range(config.sweep_seeds):
            seed = config.seed + s
            r = run_point(config, trials, pipeline, count, noise, seed, settings)
            records.append({
                "axis": axis,
                "value": float(noise) if axis == "noise" else int(count),
                "seed": seed,
                "trials": r.trials,
                "noise": float(noise),
                "loss": r.selected.loss,
                "active": " ".join(r.selected.active_labels),
                "spurious": r.spurious,
                "missing": len(r.missing),
                **{f"error_{k}": v for k, v in sorted(r.errors.items())},
            })
    return records


def summarize(records: list[dict]) -> list[dict]:
    """Mean, std, min and max of every error column at each axis value."""
    keys = [k for k in records[0] if k.startswith("error_")] + ["spurious", "missing", "loss"]
    out = []
    for value in dict.fromkeys(r["value"] for r in records):
        group = [r for r in records if r["value"] == value]
        row = {"value": value, "seeds": len(group)}
        for k in keys:
            v = np.array([g[k] for g in group], dtype=float)
            row.update({f"{k}_mean": float(v.mean()), f"{k}_std": float(v.std()),
                        f"{k}_min": float(v.min()), f"{k}_max": float(v.max())})
        out.append(row)
    return out


def cmd_sweep(config: ExperimentConfig, data, out: Path) -> list[dict]:
    if config.pipeline not in ("noise-sweep", "trial-sweep"):
        raise ValueError("sweep needs pipeline = noise-sweep or trial-sweep")
    trials = _dataset(config, data)
    records = sweep_records(config, trials)
    summary = summarize(records)
    stem = config.pipeline.replace("-", "_")
    _write_csv(out / f"{stem}_points.csv", list(records[0]), [list(r.values()) for r in records])
    _write_csv(out / f"{stem}_summary.csv", list(summary[0]), [list(r.values()) for r in summary])
    regime = config.noise if config.pipeline == "trial-sweep" else max(config.noise_levels)
    _write_json(out / f"{stem}.json", {
        "config": resolved_config(config, config.sweep_pipeline, regime),
        "summary": summary,
    })
    for row in summary:
        err = next(k for k in row if k.startswith("error_") and k.endswith("_mean"))
        log.info("%s=%s  %s=%.4g", records[0]["axis"], row["value"], err, row[err])
    return summary


def cmd_order(config: ExperimentConfig, data, out: Path):
    trials = _dataset(config, data)
    if config.trials is not None:
        trials = trials.subset(sample_forcings(trials.forcings, config.trials, _seeds(config.seed)[0]))
    train, test = split_trials(trials, config.test_fraction, config.seed)
    diff, reg = config.settings(IDENTIFY, 0.0)
    result = select_order(train, test, config.orders, diff, reg)
    rows = [[a, result.errors[a], result.failures.get(a, "")] for a in sorted(result.errors)]
    _write_csv(out / "order.csv", ["order", "forcing_error", "failure"], rows)
    _write_json(out / "order.json", {
        "config": resolved_config(config, IDENTIFY, 0.0),
        "best_order": result.best,
        "errors": {str(a): (e if np.isfinite(e) else None) for a, e in result.errors.items()},
        "failures": {str(a): msg for a, msg in result.failures.items()},
        "active_terms": {str(a): m.active_labels for a, m in result.models.items()},
        "train_trials": train.m,
        "test_trials": test.m,
    })
    log.info("best order %d; errors %s", result.best, result.errors)
    return result


COMMANDS = {
    "generate": lambda c, d, o: cmd_generate(c, o),
    "discover": cmd_discover,
    "estimate": cmd_estimate,
    "sweep": cmd_sweep,
    "order": cmd_order,
}

_DEFAULT_PIPELINE = {"discover": "identify", "estimate": "estimate", "order": "order"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bvp-discovery", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="INI experiment config")
        p.add_argument("--data", type=Path, help="dataset CSV (generated from the config when omitted)")
        p.add_argument("--out", type=Path, help="output directory (default: config 'output')")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        config = load_config(args.config) if args.config else ExperimentConfig()
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.command in _DEFAULT_PIPELINE and config.pipeline != _DEFAULT_PIPELINE[args.command]:
            overrides["pipeline"] = _DEFAULT_PIPELINE[args.command]
        if overrides:
            config = dataclasses.replace(config, **overrides)
        out = args.out or Path(config.output)
        COMMANDS[args.command](config, args.data, out)
    except (ValueError, KeyError, RuntimeError, OSError, configparser.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
