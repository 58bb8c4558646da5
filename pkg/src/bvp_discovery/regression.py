"""Ridge solves, grouped threshold regression, tolerance sweep and selection.

All per-position solves are batched: the ``n`` blocks are independent so
one stacked SVD handles them together.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import CandidateLibrary, TermDescriptor, normalize_coefficients, denormalize_coefficients

LAMBDA = 1e-5
# the selected support is refit without the ridge penalty (see README)
FINAL_LAMBDA = 0.0
BETA = 1e-6
NUM_EPS = 50
ITERS = 10
# relative singular-value cutoff of unpenalized solves; at a clamped end every
# trial has u ~ 0, and keeping that direction makes the fit there pure rounding
RCOND = 1e-10


class DegenerateSystemWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class RegressionConfig:
    """Settings of the threshold sweep.

    ``final_lam`` is the penalty of the refit on each surviving support;
    ``keep`` lists terms exempt from thresholding.
    """

    lam: float = LAMBDA
    beta: float = BETA
    num_eps: int = NUM_EPS
    iters: int = ITERS
    k_mode: str = "groups"
    final_lam: float = FINAL_LAMBDA
    keep: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "keep", tuple(self.keep))
        if self.lam < 0 or self.final_lam < 0:
            raise ValueError("ridge penalties must be nonnegative")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.num_eps < 2:
            raise ValueError("num_eps must be at least 2")
        if self.iters < 1:
            raise ValueError("iters must be at least 1")
        if self.k_mode not in ("groups", "nonzeros"):
            raise ValueError(f"unknown k_mode {self.k_mode!r}")


@dataclass(frozen=True)
class SparseSpatialModel:
    """A learned expansion ``u^(A) = sum_l xi[l](x) * theta_l``.

    ``xi`` is in physical units with shape ``(p, n)``; rows of inactive
    terms are exactly zero.
    """

    terms: tuple[TermDescriptor, ...]
    xi: np.ndarray
    active: np.ndarray
    loss: float
    epsilon: float
    lhs_order: int

    def __post_init__(self):
        if np.any(self.xi[~self.active] != 0):
            raise ValueError("inactive terms must have all-zero coefficient rows")

    @property
    def labels(self) -> list[str]:
        return [t.label for t in self.terms]

    @property
    def active_labels(self) -> list[str]:
        return [t.label for t, a in zip(self.terms, self.active) if a]

    @property
    def k(self) -> int:
        return int(self.active.sum())

    def coefficient(self, label: str) -> np.ndarray:
        return self.xi[self.labels.index(label)]


def _ridge_blocks(A: np.ndarray, Y: np.ndarray, lam: float, rcond: float = RCOND) -> np.ndarray:
    """Solve ``min |Y_k - A_k w_k|^2 + lam |w_k|^2`` for every block ``k``.

    ``A`` has shape ``(n, m, q)`` and ``Y`` shape ``(n, m)``. With ``lam = 0``
    the minimum-norm least-squares solution is returned.
    """
    n, _, q = A.shape
    if q == 0:
        return np.zeros((n, 0))
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if lam > 0:
        d = s / (s * s + lam)
    else:
        keep = s > rcond * s.max(axis=-1, keepdims=True)
        d = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    c = np.einsum("kmr,km->kr", U, Y) * d
    return np.einsum("krq,kr->kq", Vt, c)


def ridge_solve(A, y, lam: float) -> np.ndarray:
    """Minimizer of ``|y - A w|^2 + lam |w|^2`` via an SVD of ``A``.

    An all-zero ``A`` yields the zero vector and a
    :class:`DegenerateSystemWarning`.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    y = np.asarray(y, dtype=float)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if A.shape[1] < 1:
        raise ValueError("A must have at least one column")
    if not np.any(A):
        warnings.warn("all-zero design matrix; returning zero coefficients", DegenerateSystemWarning)
        return np.zeros(A.shape[1])
    return _ridge_blocks(A[None], y[None], lam)[0]


class _BlockSolver:
    """Memoized per-block ridge solves keyed on the active set."""

    def __init__(self, lib: CandidateLibrary, lam: float):
        self.lib = lib
        self.lam = lam
        self.cache: dict[bytes, np.ndarray] = {}
        # rows sorted canonically within each block: trial order cannot leak
        # into the SVD rounding, which ill-conditioned end blocks amplify
        Y = lib.targets
        order = np.stack([
            np.lexsort(np.column_stack([lib.blocks[k], Y[k]]).T) for k in range(lib.n)
        ])
        self.A = np.take_along_axis(lib.blocks, order[:, :, None], axis=1)
        self.Y = np.take_along_axis(Y, order, axis=1)

    def __call__(self, active: np.ndarray) -> np.ndarray:
        key = active.tobytes()
        hit = self.cache.get(key)
        if hit is None:
            xi = np.zeros((self.lib.p, self.lib.n))
            idx = np.flatnonzero(active)
            if idx.size:
                xi[idx] = _ridge_blocks(self.A[:, :, idx], self.Y, self.lam).T
            hit = self.cache[key] = xi
        return hit


def _group_norms(xi: np.ndarray) -> np.ndarray:
    return np.linalg.norm(xi, axis=1)


def _keep_mask(lib: CandidateLibrary, keep) -> np.ndarray:
    mask = np.zeros(lib.p, dtype=bool)
    for label in keep:
        mask[lib.index(label)] = True
    return mask


def _sgtr_normalized(solve: _BlockSolver, epsilon: float, iters: int, protected: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = solve.lib.p
    active = np.ones(p, dtype=bool)
    xi = solve(active)
    for _ in range(iters):
        drop = active & ~protected & (_group_norms(xi) <= epsilon)
        if not drop.any():
            break
        active = active & ~drop
        xi = solve(active)
    return xi, active


def _check_normalized(lib: CandidateLibrary):
    if not lib.normalized:
        raise ValueError("library must be normalized first")


def _finish(lib, xi_n, active, epsilon, beta, k_mode) -> SparseSpatialModel:
    xi = denormalize_coefficients(lib, xi_n)
    xi[~active] = 0.0
    model = SparseSpatialModel(lib.terms, xi, active.copy(), np.nan, float(epsilon), lib.lhs_order)
    return _with_loss(model, loss(lib, model, beta, k_mode))


def _with_loss(model: SparseSpatialModel, value: float) -> SparseSpatialModel:
    return SparseSpatialModel(model.terms, model.xi, model.active, float(value), model.epsilon, model.lhs_order)


def sgtr(
    lib: CandidateLibrary,
    lam: float = LAMBDA,
    epsilon: float = 0.0,
    iters: int = ITERS,
    beta: float = BETA,
    k_mode: str = "groups",
    final_lam: float = FINAL_LAMBDA,
    keep=(),
    _solvers: tuple[_BlockSolver, _BlockSolver] | None = None,
) -> SparseSpatialModel:
    """Sequential grouped threshold ridge regression on a normalized library.

    A group (one term across all positions) is removed when the norm of its
    coefficient vector is at or below ``epsilon``; the surviving terms are
    refit by per-block ridge regression. The loop stops after ``iters``
    passes or once a pass removes nothing. The surviving support is then
    refit with penalty ``final_lam``. Terms listed in ``keep`` are never
    thresholded.
    """
    _check_normalized(lib)
    solve, final = _solvers or (_BlockSolver(lib, lam), _BlockSolver(lib, final_lam))
    _, active = _sgtr_normalized(solve, epsilon, iters, _keep_mask(lib, keep))
    return _finish(lib, final(active), active, epsilon, beta, k_mode)


def compute_epsilon_range(lib: CandidateLibrary, lam: float = LAMBDA) -> tuple[float, float]:
    """Smallest and largest group norm of the full ridge solution."""
    _check_normalized(lib)
    r = _group_norms(_BlockSolver(lib, lam)(np.ones(lib.p, dtype=bool)))
    return float(r.min()), float(r.max())


def loss(lib: CandidateLibrary, model: SparseSpatialModel, beta: float = BETA, k_mode: str = "groups") -> float:
    """AIC-style score ``N ln(RSS / N + beta) + 2k`` with ``N = m n``.

    Evaluated in the library's stored (normalized) frame. ``k_mode="groups"``
    counts active terms; ``"nonzeros"`` uses the nonzero coefficient count
    divided by ``m``.
    """
    xi_n = normalize_coefficients(lib, model.xi)
    resid = lib.predict(xi_n) - lib.outcome
    N = lib.m * lib.n
    if k_mode == "groups":
        k = model.k
    elif k_mode == "nonzeros":
        k = np.count_nonzero(model.xi) / lib.m
    else:
        raise ValueError(f"unknown k_mode {k_mode!r}")
    rss = math.fsum(resid * resid)
    return float(N * np.log(rss / N + beta) + 2 * k)


def epsilon_grid(eps_min: float, eps_max: float, num_eps: int = NUM_EPS) -> np.ndarray:
    """Log-spaced thresholds from just below ``eps_min`` up to ``eps_max``.

    The first point sits one ulp under ``eps_min`` so it eliminates nothing.
    """
    if num_eps < 2:
        raise ValueError("num_eps must be at least 2")
    lo = np.nextafter(eps_min, 0.0)
    if lo <= 0:
        lo = np.finfo(float).tiny
    eps = np.exp(np.linspace(np.log(lo), np.log(eps_max), num_eps))
    eps[0], eps[-1] = lo, eps_max
    return eps


def tolerance_sweep(
    lib: CandidateLibrary,
    lam: float = LAMBDA,
    num_eps: int = NUM_EPS,
    iters: int = ITERS,
    beta: float = BETA,
    k_mode: str = "groups",
    final_lam: float = FINAL_LAMBDA,
    keep=(),
) -> list[SparseSpatialModel]:
    """Run :func:`sgtr` over log-spaced thresholds; ascending in epsilon."""
    _check_normalized(lib)
    solvers = (_BlockSolver(lib, lam), _BlockSolver(lib, final_lam))
    r = _group_norms(solvers[0](np.ones(lib.p, dtype=bool)))
    eps = epsilon_grid(float(r.min()), float(r.max()), num_eps)
    return [sgtr(lib, lam, e, iters, beta, k_mode, final_lam, keep, _solvers=solvers) for e in eps]


def select_model(sweep: list[SparseSpatialModel]) -> SparseSpatialModel:
    """Minimum-loss model; ties go to fewer terms, then larger epsilon."""
    if not sweep:
        raise ValueError("empty sweep")
    return min(sweep, key=lambda s: (s.loss, s.k, -s.epsilon))


def identify(lib: CandidateLibrary, config: RegressionConfig = RegressionConfig()) -> SparseSpatialModel:
    """Sweep thresholds and return the minimum-loss model."""
    sweep = tolerance_sweep(
        lib, config.lam, config.num_eps, config.iters, config.beta,
        config.k_mode, config.final_lam, config.keep,
    )
    return select_model(sweep)


def known_operator_fit(lib: CandidateLibrary, fixed_terms, beta: float = BETA) -> SparseSpatialModel:
    """Per-position ordinary least squares on a fixed set of terms."""
    labels = lib.labels
    unknown = [t for t in fixed_terms if t not in labels]
    if unknown:
        raise KeyError(f"terms {unknown} not in library {labels}")
    active = np.array([lb in fixed_terms for lb in labels])
    xi_n = _BlockSolver(lib, 0.0)(active)
    return _finish(lib, xi_n, active, 0.0, beta, "groups")


def model_to_dict(model: SparseSpatialModel) -> dict:
    return {
        "lhs_order": model.lhs_order,
        "epsilon": model.epsilon,
        "loss": model.loss,
        "active_terms": model.active_labels,
        "coefficients": {lb: model.coefficient(lb).tolist() for lb in model.active_labels},
    }


def save_model(model: SparseSpatialModel, x: np.ndarray, json_path, csv_path=None):
    """Write the model as JSON and (optionally) its coefficient fields as CSV."""
    Path(json_path).write_text(json.dumps(model_to_dict(model), indent=2, sort_keys=True) + "\n")
    if csv_path is not None:
        write_fields_csv(csv_path, x, {lb: model.coefficient(lb) for lb in model.active_labels})


def write_fields_csv(path, x: np.ndarray, fields: dict[str, np.ndarray]):
    """CSV with an ``x`` column and one column per field, full precision."""
    names = list(fields)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x"] + names)
        for k, xk in enumerate(x):
            w.writerow([repr(float(xk))] + [repr(float(fields[nm][k])) for nm in names])
