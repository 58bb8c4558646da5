"""Numerical differentiation, Gaussian pre-filtering and noise injection.

Both differentiation methods are linear in the data, so each is built once
as an ``n x n`` matrix ``D`` (cached per grid and settings) and applied to
every response in a stack.
"""
from __future__ import annotations

import enum
import functools
from dataclasses import dataclass
from math import factorial

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.ndimage import gaussian_filter1d

from .models import Grid
from .solver import TrialSet


class DiffMethod(str, enum.Enum):
    FINITE_DIFFERENCE = "finite-difference"
    POLY_INTERP = "poly-interp"


@dataclass(frozen=True)
class DifferentiationConfig:
    """How derivatives of the response data are estimated.

    Parameters
    ----------
    method : DiffMethod
    window : int
        Odd number of samples in each local fit (PolyInterp only).
    degree : int
        Degree of the local Chebyshev fit (PolyInterp only).
    smooth_sigma : float
        Gaussian pre-filter width in grid spacings; 0 disables it.
    boundary : str
        ``"shift"`` keeps full-size windows near the ends by sliding them
        inward; ``"truncate"`` clips them to the data instead.
    """

    method: DiffMethod = DiffMethod.POLY_INTERP
    window: int = 15
    degree: int = 4
    smooth_sigma: float = 0.0
    boundary: str = "shift"

    def __post_init__(self):
        object.__setattr__(self, "method", DiffMethod(self.method))
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window must be an odd positive integer, got {self.window}")
        if self.degree < 1:
            raise ValueError(f"degree must be positive, got {self.degree}")
        if self.degree >= self.window:
            raise ValueError(f"degree {self.degree} must be below window {self.window}")
        if self.smooth_sigma < 0:
            raise ValueError("smooth_sigma must be nonnegative")
        if self.boundary not in ("shift", "truncate"):
            raise ValueError(f"boundary must be 'shift' or 'truncate', got {self.boundary!r}")

    def check_grid(self, grid: Grid):
        if self.method is DiffMethod.POLY_INTERP and self.window > grid.n:
            raise ValueError(f"window {self.window} exceeds grid size {grid.n}")


FINITE_DIFFERENCE = DifferentiationConfig(DiffMethod.FINITE_DIFFERENCE)


def _stencil_weights(offsets: np.ndarray, order: int) -> np.ndarray:
    # match Taylor terms 0..len-1 of sum_j w_j u(x + s_j)
    k = np.arange(len(offsets))
    V = offsets[None, :] ** k[:, None]
    rhs = np.zeros(len(offsets))
    rhs[order] = factorial(order)
    return np.linalg.solve(V, rhs)


@functools.lru_cache(maxsize=64)
def fd_matrix(n: int, h: float, order: int) -> np.ndarray:
    """Second-order finite-difference matrix for the ``order``-th derivative.

    Interior rows use the central stencil; rows where it does not fit use a
    one-sided stencil of ``order + 2`` points.
    """
    if not 1 <= order <= 4:
        raise ValueError(f"finite-difference order must be in 1..4, got {order}")
    half = (order + 1) // 2
    width = order + 2
    if n < max(width, 2 * half + 1):
        raise ValueError(f"grid of {n} points too small for order-{order} stencil")
    D = np.zeros((n, n))
    central = _stencil_weights(np.arange(-half, half + 1, dtype=float), order)
    cols = np.arange(width, dtype=float)
    for i in range(n):
        if half <= i < n - half:
            D[i, i - half:i + half + 1] = central
        elif i < half:
            D[i, :width] = _stencil_weights(cols - i, order)
        else:
            D[i, n - width:] = _stencil_weights(cols + (n - width) - i, order)
    D /= h**order
    D.flags.writeable = False
    return D


def _apply(D: np.ndarray, u) -> np.ndarray:
    # one matrix-vector product per response: a batched matmul may round a
    # row differently depending on where it sits in the batch
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        return D @ u
    flat = u.reshape(-1, u.shape[-1])
    return np.stack([D @ row for row in flat]).reshape(u.shape[:-1] + (D.shape[0],))


def finite_difference(u, grid: Grid, order: int) -> np.ndarray:
    """Direct second-order stencil estimate of ``d^order u / dx^order``.

    ``u`` may be 1-D or a stack of responses with the grid on the last axis.
    """
    return _apply(fd_matrix(grid.n, grid.spacing, order), u)


@functools.lru_cache(maxsize=64)
def poly_matrix(grid: Grid, order: int, window: int, degree: int, boundary: str = "shift") -> np.ndarray:
    """Linear map from samples to local Chebyshev-fit derivatives.

    Row ``k`` fits a degree-``degree`` Chebyshev series to ``window``
    samples centred on ``k`` and evaluates its ``order``-th derivative at
    ``x_k``. Near the ends the window either slides inward (``"shift"``,
    ``x_k`` sits off-centre) or is clipped to the available samples
    (``"truncate"``); nothing is extrapolated.
    """
    if order < 0:
        raise ValueError("order must be nonnegative")
    x = grid.points
    n = grid.n
    if window > n:
        raise ValueError(f"window {window} exceeds grid size {n}")
    half = window // 2
    D = np.zeros((n, n))
    for k in range(n):
        if boundary == "shift":
            lo = min(max(0, k - half), n - window)
            hi = lo + window
        else:
            lo, hi = max(0, k - half), min(n, k + half + 1)
        xs = x[lo:hi]
        c, r = 0.5 * (xs[0] + xs[-1]), 0.5 * (xs[-1] - xs[0])
        V = C.chebvander((xs - c) / r, degree)
        if np.linalg.matrix_rank(V) < degree + 1:
            raise np.linalg.LinAlgError(
                f"rank-deficient local fit in window [{lo}, {hi}) around x={x[k]:.6g}"
            )
        # derivative of each basis function at x_k, chain rule for the map
        eye = np.eye(degree + 1)
        basis_d = np.array([
            C.chebval((x[k] - c) / r, C.chebder(eye[i], order) if order else eye[i])
            for i in range(degree + 1)
        ]) / r**order
        D[k, lo:hi] = basis_d @ np.linalg.pinv(V)
    D.flags.writeable = False
    return D


def poly_interp_derivative(u, grid: Grid, order: int, config: DifferentiationConfig) -> np.ndarray:
    """Windowed Chebyshev least-squares estimate of ``d^order u / dx^order``."""
    if config.method is not DiffMethod.POLY_INTERP:
        raise ValueError("config.method must be PolyInterp")
    config.check_grid(grid)
    return _apply(poly_matrix(grid, order, config.window, config.degree, config.boundary), u)


def gaussian_smooth(u, sigma: float) -> np.ndarray:
    """Gaussian filter along the last axis (kernel cut at 4 sigma, reflective ends)."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    u = np.asarray(u, dtype=float)
    if sigma == 0:
        return u.copy()
    return gaussian_filter1d(u, sigma, axis=-1, mode="reflect", truncate=4.0)


def derivative_stack(U, grid: Grid, max_order: int, config: DifferentiationConfig) -> list[np.ndarray]:
    """``[u, u_x, ..., u^(max_order)]`` for a stack of responses.

    The pre-filter (if any) is applied first and the filtered ``u`` is
    returned at index 0 so every library column sees the same data.
    """
    config.check_grid(grid)
    u = gaussian_smooth(U, config.smooth_sigma)
    out = [u]
    for order in range(1, max_order + 1):
        if config.method is DiffMethod.FINITE_DIFFERENCE:
            out.append(finite_difference(u, grid, order))
        else:
            out.append(poly_interp_derivative(u, grid, order, config))
    return out


def add_noise(trials: TrialSet, level: float, seed: int) -> TrialSet:
    """Add white noise scaled by each response's sample standard deviation."""
    if level < 0:
        raise ValueError(f"noise level must be nonnegative, got {level}")
    if level == 0:
        return trials
    U = trials.U
    rng = np.random.default_rng(seed)
    scale = level * U.std(axis=1, ddof=1)
    noisy = U + rng.standard_normal(U.shape) * scale[:, None]
    out = trials.with_responses(noisy)
    out.meta["noise_level"] = float(level)
    out.meta["noise_seed"] = int(seed)
    return out
