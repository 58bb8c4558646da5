"""Candidate-term library and the stacked per-position regression system.

Storage convention: ``blocks`` has shape ``(n, m, p)`` so ``blocks[k]`` is
the dense block for position ``x_k``. The stacked outcome is position-major
(all ``m`` trials at ``x_1``, then ``x_2``, ...), which is exactly
``outcome.reshape(n, m)``.
"""
from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass

import numpy as np

from .models import Grid
from .signal import DifferentiationConfig, derivative_stack
from .solver import TrialSet

MAX_POWER = 5


class TermKind(str, enum.Enum):
    CONSTANT = "constant"
    U_POWER = "u-power"
    X_POWER = "x-power"
    DERIVATIVE = "derivative"
    U_POWER_DERIVATIVE = "u-power-derivative"
    FORCING = "forcing"


def _deriv_label(order: int) -> str:
    return "u_" + "x" * order


def _power_label(base: str, d: int) -> str:
    return base if d == 1 else f"{base}^{d}"


@dataclass(frozen=True)
class TermDescriptor:
    kind: TermKind
    power: int = 0
    order: int = 0

    @property
    def label(self) -> str:
        k = self.kind
        if k is TermKind.CONSTANT:
            return "1"
        if k is TermKind.U_POWER:
            return _power_label("u", self.power)
        if k is TermKind.X_POWER:
            return _power_label("x", self.power)
        if k is TermKind.DERIVATIVE:
            return _deriv_label(self.order)
        if k is TermKind.U_POWER_DERIVATIVE:
            return f"{_power_label('u', self.power)}*{_deriv_label(self.order)}"
        return "f"

    def evaluate(self, x: np.ndarray, derivs: list[np.ndarray], F: np.ndarray) -> np.ndarray:
        """Term values with shape ``(m, n)`` given ``derivs[a] = u^(a)`` stacks."""
        u = derivs[0]
        k = self.kind
        if k is TermKind.CONSTANT:
            return np.ones_like(u)
        if k is TermKind.U_POWER:
            return u**self.power
        if k is TermKind.X_POWER:
            return np.broadcast_to(x**self.power, u.shape).copy()
        if k is TermKind.DERIVATIVE:
            return derivs[self.order].copy()
        if k is TermKind.U_POWER_DERIVATIVE:
            return u**self.power * derivs[self.order]
        return np.array(F, dtype=float)

    def __str__(self):
        return self.label


def build_term_list(lhs_order: int) -> list[TermDescriptor]:
    """Canonical library for outcome ``d^A u / dx^A``.

    Order: constant, powers of u, powers of x, derivatives below ``A``,
    products ``u^d * u^(a)``, forcing.
    """
    if lhs_order not in (1, 2, 3, 4):
        raise ValueError(f"lhs_order must be 1..4, got {lhs_order}")
    powers = range(1, MAX_POWER + 1)
    orders = range(1, lhs_order)
    terms = [TermDescriptor(TermKind.CONSTANT)]
    terms += [TermDescriptor(TermKind.U_POWER, power=d) for d in powers]
    terms += [TermDescriptor(TermKind.X_POWER, power=d) for d in powers]
    terms += [TermDescriptor(TermKind.DERIVATIVE, order=a) for a in orders]
    terms += [TermDescriptor(TermKind.U_POWER_DERIVATIVE, power=d, order=a) for d in powers for a in orders]
    terms.append(TermDescriptor(TermKind.FORCING))
    return terms


def term_labels(terms) -> list[str]:
    return [t.label for t in terms]


@dataclass(frozen=True)
class CandidateLibrary:
    """Per-position regression blocks, their outcome, and scaling factors.

    Attributes
    ----------
    terms : tuple of TermDescriptor
    lhs_order : int
    x : ndarray, shape (n,)
    blocks : ndarray, shape (n, m, p)
    outcome : ndarray, shape (m * n,)
        Position-major stack of ``u^(A)``.
    column_scales : ndarray, shape (p, n)
        Factors that were divided out of each term (ones before normalizing).
    outcome_scale : float
    normalized : bool
    """

    terms: tuple[TermDescriptor, ...]
    lhs_order: int
    x: np.ndarray
    blocks: np.ndarray
    outcome: np.ndarray
    column_scales: np.ndarray
    outcome_scale: float = 1.0
    normalized: bool = False

    @property
    def n(self) -> int:
        return self.blocks.shape[0]

    @property
    def m(self) -> int:
        return self.blocks.shape[1]

    @property
    def p(self) -> int:
        return self.blocks.shape[2]

    @property
    def labels(self) -> list[str]:
        return term_labels(self.terms)

    @property
    def targets(self) -> np.ndarray:
        """Outcome as ``(n, m)``: ``targets[k]`` is the right-hand side of block ``k``."""
        return self.outcome.reshape(self.n, self.m)

    @property
    def groups(self) -> list[np.ndarray]:
        """Flat coefficient-slot indices ``l + p * k`` of each term's group."""
        return [l + self.p * np.arange(self.n) for l in range(self.p)]

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"term {label!r} not in library {self.labels}") from None

    def stacked(self) -> np.ndarray:
        """The ``(m * n) x p`` matrix of all blocks stacked position-major."""
        return self.blocks.reshape(self.n * self.m, self.p)

    def restrict(self, labels) -> "CandidateLibrary":
        idx = [self.index(lb) for lb in labels]
        return dataclasses.replace(
            self,
            terms=tuple(self.terms[i] for i in idx),
            blocks=self.blocks[:, :, idx],
            column_scales=self.column_scales[idx],
        )

    def predict(self, xi: np.ndarray) -> np.ndarray:
        """Stacked prediction ``Theta Xi`` for a ``p x n`` coefficient array (stored frame)."""
        return np.einsum("kjl,lk->kj", self.blocks, xi).reshape(-1)


def assemble_system(trials: TrialSet, lhs_order: int, diff: DifferentiationConfig) -> CandidateLibrary:
    """Evaluate every candidate term at every position for every trial."""
    if trials.m == 0:
        raise ValueError("cannot assemble a library from zero trials")
    terms = build_term_list(lhs_order)
    grid: Grid = trials.grid
    x = grid.points
    derivs = derivative_stack(trials.U, grid, lhs_order, diff)
    F = trials.F
    cols = [t.evaluate(x, derivs, F) for t in terms]  # each (m, n)
    blocks = np.ascontiguousarray(np.stack(cols, axis=-1).transpose(1, 0, 2))
    outcome = np.ascontiguousarray(derivs[lhs_order].T).reshape(-1)
    return CandidateLibrary(
        terms=tuple(terms),
        lhs_order=lhs_order,
        x=x.copy(),
        blocks=blocks,
        outcome=outcome,
        column_scales=np.ones((len(terms), grid.n)),
    )


def _exact_norm(v: np.ndarray) -> float:
    # correctly rounded sum, so the scale does not depend on trial order
    return math.sqrt(math.fsum(v * v))


def normalize(lib: CandidateLibrary) -> CandidateLibrary:
    """Scale each stacked term column to unit norm and the outcome to norm sqrt(m)."""
    norms = np.array([_exact_norm(col) for col in lib.stacked().T])
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"term {lib.labels[zero[0]]!r} has an all-zero column")
    ynorm = _exact_norm(lib.outcome)
    if ynorm == 0:
        raise ValueError("outcome is identically zero")
    yscale = ynorm / np.sqrt(lib.m)
    return dataclasses.replace(
        lib,
        blocks=lib.blocks / norms,
        outcome=lib.outcome / yscale,
        column_scales=lib.column_scales * norms[:, None],
        outcome_scale=lib.outcome_scale * yscale,
        normalized=True,
    )


def denormalize_coefficients(lib: CandidateLibrary, xi_normalized: np.ndarray) -> np.ndarray:
    """Physical-unit coefficients from coefficients of the normalized system."""
    return np.asarray(xi_normalized) * lib.outcome_scale / lib.column_scales


def normalize_coefficients(lib: CandidateLibrary, xi_physical: np.ndarray) -> np.ndarray:
    """Inverse of :func:`denormalize_coefficients`."""
    return np.asarray(xi_physical) * lib.column_scales / lib.outcome_scale
