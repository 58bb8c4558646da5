"""From a learned expansion of ``u^(A)`` to the operator ``L`` and its parameters.

The regression learns ``u^(A) = sum_t c_t(x) theta_t + c_f(x) f``. Solving
for ``f`` gives ``L[u] = phi u^(A) + sum_t (-c_t / c_f) theta_t`` with
``phi = 1 / c_f``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .features import assemble_system, normalize
from .models import Grid, ModelKind, ModelSpec
from .regression import (
    LAMBDA,
    RegressionConfig,
    SparseSpatialModel,
    identify,
    known_operator_fit,
    model_to_dict,
)
from .signal import FINITE_DIFFERENCE, DifferentiationConfig, derivative_stack
from .solver import Trial, TrialSet

SINGULAR_TOL = 1e-10
TRIM = 0.01


class InvalidModelError(ValueError):
    """The learned model cannot be turned into an operator (no forcing term)."""


class SingularCoefficientError(ValueError):
    """The forcing coefficient vanishes somewhere, so ``phi`` is undefined."""


@dataclass(frozen=True)
class DiscoveredOperator:
    """``L[u] = phi u^(A) + sum_t operator_terms[t] * theta_t``."""

    lhs_order: int
    phi: np.ndarray
    operator_terms: dict[str, np.ndarray]
    source: SparseSpatialModel

    def coefficient(self, label: str) -> np.ndarray:
        return self.operator_terms[label]

    def expand(self) -> np.ndarray:
        """Back to ``u^(A)`` form: the ``(p, n)`` coefficient array of the source."""
        xi = np.zeros_like(self.source.xi)
        labels = self.source.labels
        xi[labels.index("f")] = 1.0 / self.phi
        for label, c in self.operator_terms.items():
            xi[labels.index(label)] = -c / self.phi
        return xi


def infer_operator(model: SparseSpatialModel, x: np.ndarray | None = None) -> DiscoveredOperator:
    """Invert a learned expansion into the operator form.

    Raises
    ------
    InvalidModelError
        If ``f`` is not an active term.
    SingularCoefficientError
        If ``|c_f|`` drops below ``1e-10`` at any position (the first such
        position is named, as ``x`` when the grid is supplied).
    """
    if "f" not in model.active_labels:
        raise InvalidModelError(f"forcing term is not active (active terms: {model.active_labels})")
    cf = model.coefficient("f")
    bad = np.flatnonzero(~(np.abs(cf) >= SINGULAR_TOL))
    if bad.size:
        k = int(bad[0])
        where = f"x = {x[k]:.6g}" if x is not None else f"grid index {k}"
        raise SingularCoefficientError(f"forcing coefficient {cf[k]:.3g} is singular at {where}")
    terms = {lb: -model.coefficient(lb) / cf for lb in model.active_labels if lb != "f"}
    return DiscoveredOperator(model.lhs_order, 1.0 / cf, terms, model)


def extract_parameters(op: DiscoveredOperator, model: ModelSpec) -> dict[str, np.ndarray]:
    """Physical coefficient fields of ``model`` read off the operator.

    Sturm-Liouville and Poisson: ``p = -phi`` and ``q`` is the coefficient
    of ``u``; the nonlinear form also reports ``alpha`` as the ratio of the
    ``u^2`` and ``u`` coefficients. Euler-Bernoulli: ``EI = -phi``. A field
    whose term was not discovered is left out.
    """
    if op.lhs_order != model.order:
        raise ValueError(f"operator has order {op.lhs_order} but model {model.name!r} has order {model.order}")
    if model.kind is ModelKind.EULER_BERNOULLI:
        return {"EI": -op.phi}
    out = {"p": -op.phi}
    if model.kind is ModelKind.POISSON:
        return out
    if "u" in op.operator_terms:
        out["q"] = op.operator_terms["u"]
        if model.kind is ModelKind.NONLINEAR_SL and "u^2" in op.operator_terms:
            with np.errstate(divide="ignore", invalid="ignore"):
                out["alpha"] = op.operator_terms["u^2"] / out["q"]
    return out


def interior_mask(grid: Grid, trim_fraction: float = TRIM) -> np.ndarray:
    if not 0 <= trim_fraction < 0.5:
        raise ValueError(f"trim_fraction must be in [0, 0.5), got {trim_fraction}")
    x = grid.points
    span = grid.b - grid.a
    slack = 1e-12 * span
    return (x >= grid.a + trim_fraction * span - slack) & (x <= grid.b - trim_fraction * span + slack)


def coefficient_error(learned, truth, grid: Grid, trim_fraction: float = TRIM) -> float:
    """Relative l2 error over the grid with ``trim_fraction`` cut from each end."""
    mask = interior_mask(grid, trim_fraction)
    learned = np.asarray(learned, dtype=float)[mask]
    truth = np.asarray(truth, dtype=float)[mask]
    scale = np.linalg.norm(truth)
    if scale == 0:
        raise ValueError("truth is identically zero on the trimmed region")
    return float(np.linalg.norm(learned - truth) / scale)


def true_parameters(model: ModelSpec, grid: Grid) -> dict[str, np.ndarray]:
    x = grid.points
    out = {name: np.asarray(c(x), dtype=float) * np.ones_like(x) for name, c in model.coefficients.items()}
    if model.kind is ModelKind.NONLINEAR_SL:
        out["alpha"] = np.full_like(x, model.alpha)
    return out


def parameter_errors(params: dict[str, np.ndarray], model: ModelSpec, grid: Grid,
                     trim_fraction: float = TRIM) -> dict[str, float]:
    """Interior error of each physical coefficient.

    A coefficient that was not recovered (or is not finite inside the
    trimmed region) scores 1, the error of a zero field.
    """
    mask = interior_mask(grid, trim_fraction)
    out = {}
    for name, truth in true_parameters(model, grid).items():
        learned = params.get(name)
        if learned is None or not np.all(np.isfinite(learned[mask])):
            out[name] = 1.0
        else:
            out[name] = coefficient_error(learned, truth, grid, trim_fraction)
    return out


def spurious_term_count(model: SparseSpatialModel, true_terms) -> int:
    """Number of active terms outside ``true_terms``."""
    truth = set(true_terms)
    return sum(lb not in truth for lb in model.active_labels)


def missing_terms(model: SparseSpatialModel, true_terms) -> list[str]:
    active = set(model.active_labels)
    return [t for t in true_terms if t not in active]


def predict_forcing(op: DiscoveredOperator, trial: Trial, diff: DifferentiationConfig) -> np.ndarray:
    """Apply the discovered ``L`` to the trial's response."""
    grid = trial.grid
    if op.phi.shape != (grid.n,):
        raise ValueError(f"operator has {op.phi.size} positions but the trial grid has {grid.n}")
    derivs = derivative_stack(trial.u[None, :], grid, op.lhs_order, diff)
    F = trial.f[None, :]
    x = grid.points
    by_label = {t.label: t for t in op.source.terms}
    out = op.phi * derivs[op.lhs_order][0]
    for label, c in op.operator_terms.items():
        out = out + c * by_label[label].evaluate(x, derivs, F)[0]
    return out


def forcing_error(op: DiscoveredOperator, trials: TrialSet, diff: DifferentiationConfig,
                  trim_fraction: float = TRIM) -> float:
    """Mean over trials of the interior l2 norm of ``L[u_j] - f_j``."""
    mask = interior_mask(trials.grid, trim_fraction)
    errs = [np.linalg.norm((predict_forcing(op, t, diff) - t.f)[mask]) for t in trials.trials]
    return float(np.mean(errs))


def split_trials(trials: TrialSet, test_fraction: float = 0.2, seed: int = 0) -> tuple[TrialSet, TrialSet]:
    """Hold out a fraction of the distinct forcings; repeats stay on one side."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    distinct = list(dict.fromkeys(trials.forcings))
    if len(distinct) < 2:
        raise ValueError("need at least two distinct forcings to split")
    n_test = min(max(1, math.ceil(test_fraction * len(distinct))), len(distinct) - 1)
    rng = np.random.default_rng(seed)
    held = {distinct[i] for i in rng.choice(len(distinct), size=n_test, replace=False)}
    test = [j for j, f in enumerate(trials.forcings) if f in held]
    train = [j for j, f in enumerate(trials.forcings) if f not in held]
    return trials.subset(train), trials.subset(test)


@dataclass(frozen=True)
class OrderSelection:
    best: int
    errors: dict[int, float]
    failures: dict[int, str] = field(default_factory=dict)
    models: dict[int, SparseSpatialModel] = field(default_factory=dict)


def select_order(train: TrialSet, test: TrialSet, orders, diff: DifferentiationConfig,
                 config: RegressionConfig = RegressionConfig()) -> OrderSelection:
    """Pick the left-hand-side order with the smallest held-out forcing error.

    An order whose model cannot be inverted gets an infinite error and the
    reason is kept in ``failures``.
    """
    orders = sorted(set(orders))
    if not orders or any(a not in (1, 2, 3, 4) for a in orders):
        raise ValueError(f"orders must be a nonempty subset of 1..4, got {orders}")
    overlap = set(train.forcings) & set(test.forcings)
    if overlap:
        raise ValueError(f"train and test share {len(overlap)} forcings")
    errors, failures, models = {}, {}, {}
    for a in orders:
        try:
            lib = normalize(assemble_system(train, a, diff))
            model = identify(lib, config)
            models[a] = model
            op = infer_operator(model, train.grid.points)
            errors[a] = forcing_error(op, test, diff)
        except (InvalidModelError, SingularCoefficientError, ValueError, np.linalg.LinAlgError) as exc:
            errors[a] = math.inf
            failures[a] = str(exc)
    best = min(orders, key=lambda a: (errors[a], a))
    return OrderSelection(best, errors, failures, models)


# ---------------------------------------------------------------------------
# pipelines

IDENTIFY = "identify"
ESTIMATE = "estimate"

# local Chebyshev fits; the short high-degree window resolves the sin(11 x)
# and sin(12 x) content of the Sturm-Liouville p fields on clean data
CLEAN_DIFF = DifferentiationConfig(window=11, degree=8)
NOISY_ESTIMATE_DIFF = DifferentiationConfig(window=31, degree=3)
NOISY_IDENTIFY_DIFF = DifferentiationConfig(window=31, degree=3, smooth_sigma=5.0)


def default_settings(model: ModelSpec, pipeline: str, noise_level: float = 0.0
                     ) -> tuple[DifferentiationConfig, RegressionConfig]:
    """Differentiation and regression settings used when none are given.

    Clean data: finite differences for the beam, short windowed fits for
    the rest. Noisy data: wide cubic fits, plus the Gaussian pre-filter and
    a ridge-penalized refit when identifying the operator.
    """
    if pipeline not in (IDENTIFY, ESTIMATE):
        raise ValueError(f"unknown pipeline {pipeline!r}")
    beam = model.kind is ModelKind.EULER_BERNOULLI
    keep = ("f",) if beam and pipeline == IDENTIFY else ()
    if noise_level == 0:
        return (FINITE_DIFFERENCE if beam else CLEAN_DIFF), RegressionConfig(keep=keep)
    if pipeline == ESTIMATE:
        return NOISY_ESTIMATE_DIFF, RegressionConfig()
    return NOISY_IDENTIFY_DIFF, RegressionConfig(final_lam=LAMBDA, keep=keep)


@dataclass(frozen=True)
class DiscoveryReport:
    """Record of one identification or estimation run."""

    model: str
    pipeline: str
    trials: int
    noise_level: float
    selected: SparseSpatialModel
    operator: DiscoveredOperator | None
    parameters: dict[str, np.ndarray]
    errors: dict[str, float]
    spurious: int
    missing: list[str]
    runtime: float
    failure: str | None = None

    def __post_init__(self):
        if self.spurious < 0 or any(not e >= 0 for e in self.errors.values()):
            raise ValueError("errors and spurious count must be nonnegative")

    def to_dict(self) -> dict:
        """JSON-ready summary; runtime is left out so reruns compare equal."""
        return {
            "model": self.model,
            "pipeline": self.pipeline,
            "trials": self.trials,
            "noise_level": self.noise_level,
            "selected": model_to_dict(self.selected),
            "errors": dict(sorted(self.errors.items())),
            "spurious": self.spurious,
            "missing": list(self.missing),
            "failure": self.failure,
        }


def _report(model, pipeline, trials, noise_level, fit, start, selected=None) -> DiscoveryReport:
    selected = fit if selected is None else selected
    grid = trials.grid
    op, params, failure = None, {}, None
    try:
        op = infer_operator(fit, grid.points)
        params = extract_parameters(op, model)
    except (InvalidModelError, SingularCoefficientError) as exc:
        failure = str(exc)
    return DiscoveryReport(
        model=model.name,
        pipeline=pipeline,
        trials=trials.m,
        noise_level=float(noise_level),
        selected=selected,
        operator=op,
        parameters=params,
        errors=parameter_errors(params, model, grid),
        spurious=spurious_term_count(selected, model.true_terms),
        missing=missing_terms(selected, model.true_terms),
        runtime=time.perf_counter() - start,
        failure=failure,
    )


def identify_operator(trials: TrialSet, model: ModelSpec, diff: DifferentiationConfig,
                      config: RegressionConfig = RegressionConfig(), noise_level: float = 0.0
                      ) -> DiscoveryReport:
    """Unknown operator: sweep, select, then read parameters off the support.

    Parameters come from an unpenalized refit on the selected terms, so a
    ridge penalty used during selection does not bias them.
    """
    start = time.perf_counter()
    lib = normalize(assemble_system(trials, model.order, diff))
    selected = identify(lib, config)
    fit = known_operator_fit(lib, selected.active_labels, config.beta) if selected.k else selected
    return _report(model, IDENTIFY, trials, noise_level, fit, start, selected)


def estimate_parameters(trials: TrialSet, model: ModelSpec, diff: DifferentiationConfig,
                        noise_level: float = 0.0, terms=None) -> DiscoveryReport:
    """Known operator: least squares on ``terms`` (default: the model's true terms)."""
    start = time.perf_counter()
    lib = normalize(assemble_system(trials, model.order, diff))
    fit = known_operator_fit(lib, list(terms or model.true_terms))
    return _report(model, ESTIMATE, trials, noise_level, fit, start)
