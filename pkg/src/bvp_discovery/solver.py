"""Shooting-method solvers that produce ground-truth forcing/response trials.

Shooting is vectorised across forcings: the state array carries a trailing
batch axis so one RK4 sweep advances every trial at once.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numba
import numpy as np

from .models import ForcingSpec, Grid, ModelSpec

REFINE = 4


class DivergenceError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual=None, forcing=None):
        super().__init__(message)
        self.residual = residual
        self.forcing = forcing


@dataclass(frozen=True)
class Trial:
    grid: Grid
    f: np.ndarray
    u: np.ndarray
    forcing: ForcingSpec
    model: str
    # converged initial-condition parameters of the shoot
    shooting: tuple[float, ...] = ()


@dataclass(frozen=True)
class TrialSet:
    grid: Grid
    trials: tuple[Trial, ...]
    model: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for t in self.trials:
            if t.grid != self.grid:
                raise ValueError("all trials must share the TrialSet grid")
            if t.model != self.model:
                raise ValueError("all trials must come from one model")

    @property
    def m(self) -> int:
        return len(self.trials)

    @property
    def U(self) -> np.ndarray:
        return np.stack([t.u for t in self.trials]) if self.trials else np.zeros((0, self.grid.n))

    @property
    def F(self) -> np.ndarray:
        return np.stack([t.f for t in self.trials]) if self.trials else np.zeros((0, self.grid.n))

    @property
    def forcings(self) -> list[ForcingSpec]:
        return [t.forcing for t in self.trials]

    def subset(self, indices: Sequence[int]) -> "TrialSet":
        return TrialSet(self.grid, tuple(self.trials[i] for i in indices), self.model, dict(self.meta))

    def with_responses(self, U: np.ndarray) -> "TrialSet":
        trials = tuple(
            Trial(t.grid, t.f, np.asarray(row, dtype=float), t.forcing, t.model, t.shooting)
            for t, row in zip(self.trials, U)
        )
        return TrialSet(self.grid, trials, self.model, dict(self.meta))


def integrate_ivp(rhs: Callable, y0, grid, check_finite: bool = True) -> np.ndarray:
    """Classical RK4 on the given points.

    ``grid`` is a :class:`Grid` or an increasing 1-D array of abscissae.
    ``y0`` may carry trailing batch axes; ``rhs(x, y)`` must broadcast over
    them. Returns an array of shape ``(len(points),) + y0.shape``. With
    ``check_finite=False`` diverging batch members are left as inf/nan
    instead of raising.
    """
    xs = grid.points if isinstance(grid, Grid) else np.asarray(grid, dtype=float)
    y = np.array(y0, dtype=float)
    out = np.empty((len(xs),) + y.shape)
    out[0] = y
    for i in range(len(xs) - 1):
        x, h = xs[i], xs[i + 1] - xs[i]
        k1 = rhs(x, y)
        k2 = rhs(x + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(x + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(x + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + k4 + 2.0 * (k2 + k3))
        if check_finite and not np.all(np.isfinite(y)):
            raise DivergenceError(f"non-finite state at step {i + 1} (x={xs[i + 1]:.6g})")
        out[i + 1] = y
    return out


def _fine_points(grid: Grid, breakpoints) -> tuple[np.ndarray, np.ndarray]:
    """Internal integration points (grid refined REFINE times, plus breakpoints)."""
    fine = np.linspace(grid.a, grid.b, REFINE * (grid.n - 1) + 1)
    inner = [b for b in breakpoints if grid.a < b < grid.b]
    pts = np.union1d(fine, inner)
    idx = np.searchsorted(pts, fine[::REFINE])
    return pts, idx


def _forcing_arrays(forcings: Sequence[ForcingSpec]):
    a = np.array([f.amplitude for f in forcings], dtype=float)
    b = np.array([f.frequency for f in forcings], dtype=float)
    c = np.array([f.offset for f in forcings], dtype=float)
    return a, b, c


@numba.njit(cache=True)
def _rk4_second_order(h, pinv, q, alpha, f, y0):
    """RK4 for u_x = w / p, w_x = q u (1 + alpha u) - f on tabulated stage values.

    ``pinv``, ``q`` have shape (steps, 3) for the stage abscissae
    (x_i, x_i + h/2, x_{i+1}); ``f`` has shape (steps, 3, batch).
    """
    steps = h.shape[0]
    batch = y0.shape[1]
    out = np.empty((steps + 1, 2, batch))
    out[0] = y0
    for j in range(batch):
        u = y0[0, j]
        w = y0[1, j]
        for i in range(steps):
            hi = h[i]
            k1u = w * pinv[i, 0]
            k1w = q[i, 0] * u * (1.0 + alpha * u) - f[i, 0, j]
            u2 = u + 0.5 * hi * k1u
            w2 = w + 0.5 * hi * k1w
            k2u = w2 * pinv[i, 1]
            k2w = q[i, 1] * u2 * (1.0 + alpha * u2) - f[i, 1, j]
            u3 = u + 0.5 * hi * k2u
            w3 = w + 0.5 * hi * k2w
            k3u = w3 * pinv[i, 1]
            k3w = q[i, 1] * u3 * (1.0 + alpha * u3) - f[i, 1, j]
            u4 = u + hi * k3u
            w4 = w + hi * k3w
            k4u = w4 * pinv[i, 2]
            k4w = q[i, 2] * u4 * (1.0 + alpha * u4) - f[i, 2, j]
            u = u + (hi / 6.0) * (k1u + k4u + 2.0 * (k2u + k3u))
            w = w + (hi / 6.0) * (k1w + k4w + 2.0 * (k2w + k3w))
            out[i + 1, 0, j] = u
            out[i + 1, 1, j] = w
    return out


@numba.njit(cache=True)
def _rk4_fourth_order(h, eiinv, f, y0):
    """RK4 for (u, u_x, m, m_x)' = (u_x, m / EI, m_x, -f) on tabulated stage values."""
    steps = h.shape[0]
    batch = y0.shape[1]
    out = np.empty((steps + 1, 4, batch))
    out[0] = y0
    for j in range(batch):
        y = y0[:, j].copy()
        k1 = np.empty(4)
        k2 = np.empty(4)
        k3 = np.empty(4)
        k4 = np.empty(4)
        for i in range(steps):
            hi = h[i]
            k1[0] = y[1]
            k1[1] = y[2] * eiinv[i, 0]
            k1[2] = y[3]
            k1[3] = -f[i, 0, j]
            k2[0] = y[1] + 0.5 * hi * k1[1]
            k2[1] = (y[2] + 0.5 * hi * k1[2]) * eiinv[i, 1]
            k2[2] = y[3] + 0.5 * hi * k1[3]
            k2[3] = -f[i, 1, j]
            k3[0] = y[1] + 0.5 * hi * k2[1]
            k3[1] = (y[2] + 0.5 * hi * k2[2]) * eiinv[i, 1]
            k3[2] = y[3] + 0.5 * hi * k2[3]
            k3[3] = -f[i, 1, j]
            k4[0] = y[1] + hi * k3[1]
            k4[1] = (y[2] + hi * k3[2]) * eiinv[i, 2]
            k4[2] = y[3] + hi * k3[3]
            k4[3] = -f[i, 2, j]
            for d in range(4):
                y[d] = y[d] + (hi / 6.0) * (k1[d] + k4[d] + 2.0 * (k2[d] + k3[d]))
                out[i + 1, d, j] = y[d]
    return out


class _PathTables:
    """Coefficient and forcing values at the RK4 stage abscissae of one path."""

    def __init__(self, model: ModelSpec, pts: np.ndarray):
        self.h = np.diff(pts)
        x0 = pts[:-1]
        stages = np.stack([x0, x0 + 0.5 * self.h, x0 + self.h], axis=1)
        self.stages = stages
        # coefficient arguments stay inside the segment a step belongs to
        args = stages.copy()
        if model.breakpoints:
            edges = np.array(sorted(model.breakpoints))
            lo = np.minimum(pts[:-1], pts[1:])
            hi = np.maximum(pts[:-1], pts[1:])
            mid = 0.5 * (lo + hi)
            seg = np.searchsorted(edges, mid)
            seg_lo = np.concatenate([[-np.inf], edges])[seg]
            seg_hi = np.concatenate([edges, [np.inf]])[seg]
            lo_in = np.nextafter(seg_lo, np.inf)[:, None]
            hi_in = np.nextafter(seg_hi, -np.inf)[:, None]
            args = np.clip(args, lo_in, hi_in)
        self.coef = {name: np.asarray(c(args), dtype=float) * np.ones_like(args)
                     for name, c in model.coefficients.items()}

    def forcing(self, forcings) -> np.ndarray:
        a, b, c = _forcing_arrays(forcings)
        return a * np.sin(self.stages[:, :, None] * b) + c


_TABLE_CACHE: dict = {}


def _tables(model: ModelSpec, pts: np.ndarray) -> _PathTables:
    key = (id(model.coefficients), model.breakpoints, pts[0], pts[-1], len(pts))
    hit = _TABLE_CACHE.get(key)
    if hit is None or hit[0] is not model.coefficients:
        if len(_TABLE_CACHE) > 32:
            _TABLE_CACHE.clear()
        hit = _TABLE_CACHE[key] = (model.coefficients, _PathTables(model, pts))
    return hit[1]


def _integrate_path(model: ModelSpec, forcings, pts: np.ndarray, y0: np.ndarray) -> np.ndarray:
    """RK4 along monotone ``pts`` (either direction) for a batch of forcings.

    Same scheme as :func:`integrate_ivp`, compiled, with coefficients
    tabulated at the stage abscissae.
    """
    tab = _tables(model, pts)
    f = tab.forcing(forcings)
    y0 = np.ascontiguousarray(y0, dtype=float)
    with np.errstate(all="ignore"):
        if model.order == 2:
            pinv = 1.0 / tab.coef["p"]
            q = tab.coef["q"] if "q" in tab.coef else np.zeros_like(pinv)
            return _rk4_second_order(tab.h, pinv, q, float(model.alpha), f, y0)
        return _rk4_fourth_order(tab.h, 1.0 / tab.coef["EI"], f, y0)


def _check_order(model: ModelSpec, order: int):
    if model.order != order:
        raise ValueError(f"model {model.name!r} has order {model.order}, expected {order}")


def _check_grid(model: ModelSpec, grid: Grid):
    if (grid.a, grid.b) != tuple(model.domain):
        raise ValueError(f"grid [{grid.a}, {grid.b}] does not match model domain {model.domain}")


def _newton_batch(res, z, ftol, max_iter, step=1e-6):
    """Damped Newton for a batch of small square systems.

    ``res(z)`` maps parameters of shape ``(k, m)`` to residuals ``(k, m)``
    and may be evaluated on a widened batch; the Jacobian is formed by
    forward differences in one call with the batch stacked ``k`` times.
    """
    # diverging shots produce inf/nan residuals; they are masked below
    with np.errstate(all="ignore"):
        k, m = z.shape
        r = res(z)
        for it in range(max_iter):
            norm = np.max(np.abs(r), axis=0)
            todo = ~(norm <= ftol)
            if not todo.any():
                break
            h = step * np.maximum(1.0, np.abs(z))
            bumped = np.concatenate([z + h[i] * np.eye(k)[i][:, None] for i in range(k)], axis=1)
            rb = res(bumped).reshape(k, k, m)  # [residual row, bumped param, member]
            jac = ((rb - r[:, None, :]) / h[None, :, :]).transpose(2, 0, 1)
            finite = np.all(np.isfinite(jac), axis=(1, 2))
            jac[~finite] = np.eye(k)
            try:
                delta = -np.linalg.solve(jac, np.nan_to_num(r).T[:, :, None])[:, :, 0].T
            except np.linalg.LinAlgError:
                raise ConvergenceError("singular shooting Jacobian", residual=float(norm.max()))
            delta = np.where(todo & finite, delta, 0.0)
            lam = np.ones(m)
            for _ in range(12):
                cand = z + lam * delta
                rc = res(cand)
                cnorm = np.max(np.abs(rc), axis=0)
                worse = todo & ~(cnorm < norm)
                if not worse.any():
                    break
                lam = np.where(worse, lam / 2, lam)
            better = cnorm < norm
            if not better.any():
                break
            z = np.where(better, cand, z)
            r = np.where(better, rc, r)
    return z, r


def shoot_second_order_batch(
    model: ModelSpec,
    forcings: Sequence[ForcingSpec],
    grid: Grid,
    tol: float = 1e-3,
    max_iter: int = 40,
    continuation_steps: int = 4,
) -> tuple[np.ndarray, np.ndarray]:
    """Shoot on the initial slope ``u_x(a)`` for many forcings at once.

    Returns ``(u, slope)`` with ``u`` of shape ``(len(forcings), grid.n)``.

    Unknown slopes at both ends are first matched at a midpoint fitting
    point, which damps the exponential sensitivity of a full-length shot.
    Nonlinear models are reached by continuation in ``alpha`` from the linear
    problem, so the branch connected to the linear solution is followed.
    The recovered ``u_x(a)`` is then polished by Newton on a single
    left-to-right shot, whose right-end miss is the reported residual.
    """
    _check_order(model, 2)
    _check_grid(model, grid)
    forcings = list(forcings)
    m = len(forcings)
    ftol = tol * 1e-7
    pts, idx = _fine_points(grid, model.breakpoints)
    mid = len(pts) // 2
    left, right = pts[:mid + 1], pts[mid:][::-1]
    a, b = model.domain
    p = model.coefficient("p")

    def match(mdl):
        def res(z):
            reps = z.shape[1] // m
            fs = forcings * reps
            yl = np.stack([np.full(z.shape[1], mdl.bc.left), p(a) * z[0]])
            yr = np.stack([np.full(z.shape[1], mdl.bc.right), p(b) * z[1]])
            return _integrate_path(mdl, fs, left, yl)[-1] - _integrate_path(mdl, fs, right, yr)[-1]
        return res

    z = np.zeros((2, m))
    stages = [0.0] if model.alpha == 0.0 else [model.alpha * k / continuation_steps
                                               for k in range(continuation_steps + 1)]
    for alpha in stages:
        z, _ = _newton_batch(match(dataclasses.replace(model, alpha=alpha)), z, ftol, max_iter)

    def single(s):
        reps = s.shape[1] // m
        y0 = np.stack([np.full(s.shape[1], model.bc.left), p(a) * s[0]])
        traj = _integrate_path(model, forcings * reps, pts, y0)
        return (traj[-1, 0] - model.bc.right)[None, :]

    s, r = _newton_batch(single, z[:1], ftol, 8, step=1e-8)
    y0 = np.stack([np.full(m, model.bc.left), p(a) * s[0]])
    traj = _integrate_path(model, forcings, pts, y0)
    r = traj[-1, 0] - model.bc.right
    _raise_if_missed(np.abs(r), tol, forcings)
    return traj[idx, 0].T.copy(), s[0]


def _raise_if_missed(miss: np.ndarray, tol: float, forcings):
    miss = np.where(np.isfinite(miss), miss, np.inf)
    worst = int(np.argmax(miss))
    if not miss[worst] <= tol:
        raise ConvergenceError(
            f"shooting residual {miss[worst]:.3g} exceeds tol={tol} for {forcings[worst]}",
            residual=float(miss[worst]), forcing=forcings[worst],
        )


def shoot_fourth_order_batch(
    model: ModelSpec,
    forcings: Sequence[ForcingSpec],
    grid: Grid,
    tol: float = 1e-3,
    max_iter: int = 40,
) -> tuple[np.ndarray, np.ndarray]:
    """Two-parameter shoot on ``(u_xx(a), u_xxx(a))`` by damped Newton.

    The Jacobian of the right-end residual ``(u(b), u_x(b))`` against the
    clamped targets is taken by forward differences. Returns
    ``(u, params)`` with ``params`` shaped ``(2, len(forcings))``.
    """
    _check_order(model, 4)
    _check_grid(model, grid)
    forcings = list(forcings)
    m = len(forcings)
    ftol = tol * 1e-7
    pts, idx = _fine_points(grid, model.breakpoints)
    a = model.domain[0]
    ei = model.coefficient("EI")
    target = np.array([model.bc.right, model.bc.right_slope or 0.0])[:, None]

    def initial(z):
        # (u_xx(a), u_xxx(a)) -> (u, u_x, m, m_x) with m = EI u_xx
        n = z.shape[1]
        ev, ex = ei(a), ei.derivative(a)
        return np.stack([
            np.full(n, model.bc.left), np.full(n, model.bc.left_slope or 0.0),
            ev * z[0], ev * z[1] + ex * z[0],
        ])

    def res(z):
        fs = forcings * (z.shape[1] // m)
        return _integrate_path(model, fs, pts, initial(z))[-1, :2] - target

    z, _ = _newton_batch(res, np.zeros((2, m)), ftol, max_iter)
    traj = _integrate_path(model, forcings, pts, initial(z))
    miss = np.max(np.abs(traj[-1, :2] - target), axis=0)
    _raise_if_missed(miss, tol, forcings)
    return traj[idx, 0].T.copy(), z


def _make_trials(model, forcings, grid, U, params) -> list[Trial]:
    x = grid.points
    params = np.atleast_2d(params)
    return [
        Trial(grid, forcing(x), U[j], forcing, model.name,
              tuple(float(v) for v in params[:, j]))
        for j, forcing in enumerate(forcings)
    ]


def shoot_second_order(model: ModelSpec, forcing: ForcingSpec, grid: Grid, tol: float = 1e-3) -> Trial:
    U, s = shoot_second_order_batch(model, [forcing], grid, tol)
    return _make_trials(model, [forcing], grid, U, s)[0]


def shoot_fourth_order(model: ModelSpec, forcing: ForcingSpec, grid: Grid, tol: float = 1e-3) -> Trial:
    U, params = shoot_fourth_order_batch(model, [forcing], grid, tol)
    return _make_trials(model, [forcing], grid, U, params)[0]


def generate_trials(
    model: ModelSpec,
    forcings: Sequence[ForcingSpec],
    grid: Grid,
    tol: float = 1e-3,
    batch: int = 256,
) -> TrialSet:
    """Solve the model once per forcing; trial order follows ``forcings``."""
    forcings = list(forcings)
    if not forcings:
        raise ValueError("need at least one forcing")
    shoot = shoot_second_order_batch if model.order == 2 else shoot_fourth_order_batch
    trials: list[Trial] = []
    for start in range(0, len(forcings), batch):
        chunk = forcings[start:start + batch]
        try:
            U, params = shoot(model, chunk, grid, tol)
        except ConvergenceError as exc:
            raise ConvergenceError(
                f"{model.name}: {exc} (forcing {exc.forcing})", exc.residual, exc.forcing
            ) from exc
        trials.extend(_make_trials(model, chunk, grid, U, params))
    return TrialSet(grid, tuple(trials), model.name, {"tol": tol})


# ---------------------------------------------------------------------------
# dataset files: columnar text (x, f_1..f_m, u_1..u_m) plus a JSON sidecar

def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".json")


def save_trialset(trials: TrialSet, path, model: ModelSpec | None = None, seed: int | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    m = trials.m
    header = ["x"] + [f"f_{j + 1}" for j in range(m)] + [f"u_{j + 1}" for j in range(m)]
    table = np.column_stack([trials.grid.points, trials.F.T, trials.U.T])
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in table:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    meta = {
        "model": trials.model,
        "grid": {"a": trials.grid.a, "b": trials.grid.b, "n": trials.grid.n},
        "forcings": [list(f.as_tuple()) for f in trials.forcings],
        "shooting": [list(t.shooting) for t in trials.trials],
        "seed": seed,
        **{k: v for k, v in trials.meta.items() if k not in ("model", "grid", "forcings", "seed")},
    }
    if model is not None:
        meta["bc"] = {
            "left": model.bc.left, "right": model.bc.right,
            "left_slope": model.bc.left_slope, "right_slope": model.bc.right_slope,
        }
    with open(sidecar_path(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_trialset(path) -> TrialSet:
    path = Path(path)
    with open(sidecar_path(path)) as fh:
        meta = json.load(fh)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    m = (len(header) - 1) // 2
    g = meta["grid"]
    grid = Grid(float(g["a"]), float(g["b"]), int(g["n"]))
    if table.shape[0] != grid.n:
        raise ValueError(f"{path}: expected {grid.n} rows, found {table.shape[0]}")
    forcings = [ForcingSpec(*map(float, f)) for f in meta["forcings"]]
    shooting = meta.get("shooting") or [()] * m
    trials = tuple(
        Trial(grid, table[:, 1 + j].copy(), table[:, 1 + m + j].copy(), forcings[j],
              meta["model"], tuple(shooting[j]))
        for j in range(m)
    )
    extra = {k: v for k, v in meta.items() if k not in ("grid", "forcings", "shooting")}
    return TrialSet(grid, trials, meta["model"], extra)
