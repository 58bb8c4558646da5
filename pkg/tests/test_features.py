import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bvp_discovery.discovery import CLEAN_DIFF, interior_mask
from bvp_discovery.features import (
    TermDescriptor,
    TermKind,
    assemble_system,
    build_term_list,
    denormalize_coefficients,
    normalize,
    normalize_coefficients,
)
from bvp_discovery.models import ForcingSpec, Grid, eval_true_lhs_expansion, get_model
from bvp_discovery.regression import known_operator_fit
from bvp_discovery.signal import FINITE_DIFFERENCE, DifferentiationConfig, derivative_stack
from bvp_discovery.solver import Trial, TrialSet


def _toy_trials(m=3, n=25, seed=0):
    rng = np.random.default_rng(seed)
    grid = Grid(0.0, 1.0, n)
    x = grid.points
    trials = []
    for j in range(m):
        fs = ForcingSpec(float(j + 1), 1.0, 0.0)
        u = np.sin((j + 1) * x) + 0.1 * rng.standard_normal(n)
        trials.append(Trial(grid, fs(x), u, fs, "toy"))
    return TrialSet(grid, tuple(trials), "toy")


class TestTermList:
    @pytest.mark.parametrize("order,size", [(1, 12), (2, 18), (3, 24), (4, 30)])
    def test_sizes(self, order, size):
        assert len(build_term_list(order)) == size

    def test_order_two_labels(self):
        labels = [t.label for t in build_term_list(2)]
        assert labels == [
            "1", "u", "u^2", "u^3", "u^4", "u^5", "x", "x^2", "x^3", "x^4", "x^5", "u_x",
            "u*u_x", "u^2*u_x", "u^3*u_x", "u^4*u_x", "u^5*u_x", "f",
        ]

    def test_order_four_derivative_products(self):
        labels = [t.label for t in build_term_list(4)]
        assert labels[11:14] == ["u_x", "u_xx", "u_xxx"]
        assert labels[14:17] == ["u*u_x", "u*u_xx", "u*u_xxx"]
        assert labels[-1] == "f" and len(set(labels)) == len(labels)

    def test_outcome_never_in_library(self):
        for a in (1, 2, 3, 4):
            assert all(t.order < a for t in build_term_list(a))

    @pytest.mark.parametrize("bad", [0, 5])
    def test_bad_order(self, bad):
        with pytest.raises(ValueError):
            build_term_list(bad)

    def test_evaluate(self):
        x = np.linspace(0, 1, 4)
        u = np.array([[1.0, 2.0, 3.0, 4.0]])
        ux = np.array([[0.5, 0.5, 0.5, 0.5]])
        F = np.array([[9.0, 8.0, 7.0, 6.0]])
        derivs = [u, ux]
        t = TermDescriptor(TermKind.U_POWER_DERIVATIVE, power=2, order=1)
        np.testing.assert_array_equal(t.evaluate(x, derivs, F), u**2 * ux)
        np.testing.assert_array_equal(TermDescriptor(TermKind.X_POWER, power=3).evaluate(x, derivs, F), x[None] ** 3)
        np.testing.assert_array_equal(TermDescriptor(TermKind.FORCING).evaluate(x, derivs, F), F)
        np.testing.assert_array_equal(TermDescriptor(TermKind.CONSTANT).evaluate(x, derivs, F), np.ones((1, 4)))


class TestAssembly:
    def test_shapes_and_groups(self):
        ts = _toy_trials(m=3, n=25)
        lib = assemble_system(ts, 2, DifferentiationConfig(window=5, degree=2))
        assert lib.blocks.shape == (25, 3, 18)
        assert lib.outcome.shape == (75,)
        slots = np.concatenate(lib.groups)
        assert len(lib.groups) == 18 and all(g.size == 25 for g in lib.groups)
        np.testing.assert_array_equal(np.sort(slots), np.arange(18 * 25))

    @pytest.mark.parametrize("order", [1, 2, 3, 4])
    def test_entries_match_direct_evaluation(self, order):
        ts = _toy_trials(m=3, n=20, seed=order)
        diff = DifferentiationConfig(window=7, degree=4)
        lib = assemble_system(ts, order, diff)
        x = ts.grid.points
        for j, trial in enumerate(ts.trials):
            d = [s[0] for s in derivative_stack(trial.u[None], ts.grid, order, diff)]
            for k in range(ts.grid.n):
                for l, term in enumerate(lib.terms):
                    if term.kind is TermKind.CONSTANT:
                        val = 1.0
                    elif term.kind is TermKind.U_POWER:
                        val = d[0][k] ** term.power
                    elif term.kind is TermKind.X_POWER:
                        val = x[k] ** term.power
                    elif term.kind is TermKind.DERIVATIVE:
                        val = d[term.order][k]
                    elif term.kind is TermKind.U_POWER_DERIVATIVE:
                        val = d[0][k] ** term.power * d[term.order][k]
                    else:
                        val = trial.f[k]
                    assert lib.blocks[k, j, l] == pytest.approx(val, rel=1e-12, abs=1e-12)
                # position-major stacking of the outcome
                assert lib.outcome[k * ts.m + j] == pytest.approx(d[order][k], rel=1e-12, abs=1e-12)

    def test_empty_trialset(self):
        ts = _toy_trials()
        with pytest.raises(ValueError):
            assemble_system(ts.subset([]), 2, FINITE_DIFFERENCE)

    def test_restrict_and_predict(self):
        lib = assemble_system(_toy_trials(), 2, DifferentiationConfig(window=5, degree=2))
        sub = lib.restrict(["u", "f"])
        assert sub.labels == ["u", "f"]
        xi = np.vstack([np.full(lib.n, 2.0), np.full(lib.n, -0.5)])
        expected = 2.0 * lib.blocks[:, :, lib.index("u")] - 0.5 * lib.blocks[:, :, lib.index("f")]
        np.testing.assert_allclose(sub.predict(xi), expected.reshape(-1))
        with pytest.raises(KeyError, match="not in library"):
            lib.index("u_xx")


class TestNormalization:
    def test_unit_columns_and_outcome_scale(self):
        lib = normalize(assemble_system(_toy_trials(m=4), 2, DifferentiationConfig(window=5, degree=2)))
        np.testing.assert_allclose(np.linalg.norm(lib.stacked(), axis=0), 1.0)
        assert np.linalg.norm(lib.outcome) == pytest.approx(np.sqrt(4))
        assert lib.normalized

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 1000))
    def test_coefficient_roundtrip(self, seed):
        raw = assemble_system(_toy_trials(seed=seed % 7), 2, DifferentiationConfig(window=5, degree=2))
        lib = normalize(raw)
        xi = np.random.default_rng(seed).standard_normal((lib.p, lib.n))
        np.testing.assert_allclose(denormalize_coefficients(lib, normalize_coefficients(lib, xi)), xi, rtol=1e-12)
        # predictions agree across frames
        y_raw = raw.predict(xi)
        y_norm = lib.predict(normalize_coefficients(lib, xi)) * lib.outcome_scale
        np.testing.assert_allclose(y_norm, y_raw, rtol=1e-10, atol=1e-10 * np.abs(y_raw).max())

    def test_zero_column_rejected(self):
        lib = assemble_system(_toy_trials(), 2, DifferentiationConfig(window=5, degree=2))
        zeroed = lib.blocks.copy()
        zeroed[:, :, lib.index("f")] = 0
        with pytest.raises(ValueError, match="'f'"):
            normalize(dataclasses.replace(lib, blocks=zeroed))


@pytest.mark.parametrize("name,count", [("linear-sl", 6), ("nonlinear-sl", 6), ("poisson2", 4)])
def test_true_support_reproduces_expansion(name, count, trials_for):
    # brute-force check of the whole data path: least squares on the true terms
    model = get_model(name)
    ts = trials_for(name).subset(range(0, 6 * count, 6))
    lib = normalize(assemble_system(ts, 2, CLEAN_DIFF))
    fit = known_operator_fit(lib, model.true_terms)
    truth = eval_true_lhs_expansion(model, ts.grid.points)
    mask = interior_mask(ts.grid)
    for label in model.true_terms:
        err = np.abs(fit.coefficient(label) - truth[label])[mask] / np.abs(truth[label][mask]).max()
        assert err.max() < 1e-3, label
