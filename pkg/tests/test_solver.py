import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bvp_discovery.models import ForcingSpec, Grid, get_model
from bvp_discovery.solver import (
    ConvergenceError,
    DivergenceError,
    TrialSet,
    _fine_points,
    _integrate_path,
    generate_trials,
    integrate_ivp,
    load_trialset,
    save_trialset,
    shoot_fourth_order,
    shoot_second_order,
)


class TestRK4:
    def test_fourth_order_convergence(self):
        # harmonic oscillator, exact solution (cos x, -sin x)
        def rhs(x, y):
            return np.array([y[1], -y[0]])

        errs = []
        for n in (41, 81, 161):
            y = integrate_ivp(rhs, [1.0, 0.0], Grid(0, 5, n))
            errs.append(abs(y[-1, 0] - np.cos(5.0)))
        rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(rates > 3.8) and np.all(rates < 4.2)

    def test_polynomial_exact(self):
        # RK4 integrates y' = x^3 without error
        y = integrate_ivp(lambda x, y: x**3 + 0 * y, [0.0], Grid(0, 2, 7))
        assert y[-1, 0] == pytest.approx(4.0, abs=1e-13)

    def test_batch_axes(self):
        y0 = np.ones((2, 3))
        y = integrate_ivp(lambda x, y: -y, y0, np.linspace(0, 1, 11))
        assert y.shape == (11, 2, 3)
        np.testing.assert_allclose(y[-1], np.exp(-1), rtol=1e-6)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self):
        with pytest.raises(DivergenceError):
            integrate_ivp(lambda x, y: y**2, [1.0], Grid(0, 2, 200))
        y = integrate_ivp(lambda x, y: y**2, [1.0], Grid(0, 2, 200), check_finite=False)
        assert not np.all(np.isfinite(y))

    @pytest.mark.parametrize("name", ["linear-sl", "nonlinear-sl", "poisson2", "euler-bernoulli"])
    def test_compiled_kernel_matches_reference(self, name):
        model = get_model(name)
        grid = model.default_grid(101)
        pts, _ = _fine_points(grid, model.breakpoints)
        forcings = [ForcingSpec(2.0, 1.3, 1.0), ForcingSpec(-1.0, 0.7, 0.5)]
        a, b, c = (np.array(v) for v in zip(*(f.as_tuple() for f in forcings)))
        if model.order == 2:
            p = model.coefficient("p")
            q = model.coefficient("q") if "q" in model.coefficients else (lambda x: 0.0)

            def rhs(x, y):
                f = a * np.sin(b * x) + c
                return np.stack([y[1] / p(x), q(x) * y[0] * (1 + model.alpha * y[0]) - f])
            y0 = np.array([[0.0, 0.0], [0.3, -0.2]])
            # stay clear of breakpoints: this model has none
            ref = integrate_ivp(rhs, y0, pts)
        else:
            ei = model.coefficient("EI")
            y0 = np.array([[0.0, 0.0], [0.0, 0.0], [0.1, 0.2], [-0.1, 0.05]])
            # integrate segment by segment with EI taken from the segment interior
            out = [y0]
            for x0, x1 in zip(pts[:-1], pts[1:]):
                e = ei(0.5 * (x0 + x1))

                def rhs(x, y, e=e):
                    f = a * np.sin(b * x) + c
                    return np.stack([y[1], y[2] / e, y[3], -f])
                out.append(integrate_ivp(rhs, out[-1], np.array([x0, x1]))[-1])
            ref = np.stack(out)
        got = _integrate_path(model, forcings, pts, y0)
        np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12)


class TestClosedForms:
    @settings(max_examples=10, deadline=None)
    @given(st.floats(0.5, 20), st.floats(-3, 3), st.floats(0.3, 2.5), st.floats(-3, 3))
    def test_poisson_constant_p(self, pval, amp, freq, off):
        # -p u'' = a sin(bx) + c with u(0)=0.8, u(10)=0
        model = get_model("poisson2").with_coefficients(p=pval)
        grid = model.default_grid(201)
        trial = shoot_second_order(model, ForcingSpec(amp, freq, off), grid)
        x = grid.points
        part = amp * np.sin(freq * x) / (pval * freq**2) - off * x**2 / (2 * pval)
        # fix the linear part from the boundary values
        slope = (0.0 - 0.8 - part[-1]) / 10.0
        exact = 0.8 + slope * x + part
        np.testing.assert_allclose(trial.u, exact, atol=1e-7)

    @pytest.mark.parametrize("ei,c", [(1.0, 1.0), (2.5, 0.4), (10.0, -3.0)])
    def test_clamped_beam_uniform_load(self, ei, c):
        model = get_model("euler-bernoulli").with_coefficients(EI=ei)
        grid = model.default_grid(201)
        trial = shoot_fourth_order(model, ForcingSpec(0.0, 1.0, c), grid)
        x = grid.points
        exact = -c * x**2 * (10 - x) ** 2 / (24 * ei)
        np.testing.assert_allclose(trial.u, exact, atol=1e-8 * max(1.0, np.abs(exact).max()))

    def test_linear_superposition(self):
        model = get_model("linear-sl")
        grid = model.default_grid()
        f1, f2 = ForcingSpec(2.0, 1.5, 1.0), ForcingSpec(3.0, 1.5, 2.0)
        both = ForcingSpec(5.0, 1.5, 3.0)
        ts = generate_trials(model, [f1, f2, both], grid)
        np.testing.assert_allclose(ts.U[0] + ts.U[1], ts.U[2], atol=1e-8)

    def test_linear_homogeneity(self):
        model = get_model("linear-sl")
        grid = model.default_grid()
        ts = generate_trials(model, [ForcingSpec(1.0, 2.0, 1.0), ForcingSpec(3.0, 2.0, 3.0)], grid)
        np.testing.assert_allclose(3 * ts.U[0], ts.U[1], atol=1e-8)


class TestGeneratedTrials:
    def test_boundary_conditions(self, model_name, trials_for):
        model = get_model(model_name)
        ts = trials_for(model_name)
        assert np.max(np.abs(ts.U[:, 0] - model.bc.left)) <= 1e-3
        assert np.max(np.abs(ts.U[:, -1] - model.bc.right)) <= 1e-3
        if model.order == 4:
            h = ts.grid.spacing
            # one-sided second-order slopes at the clamped ends
            left = (-3 * ts.U[:, 0] + 4 * ts.U[:, 1] - ts.U[:, 2]) / (2 * h)
            right = (3 * ts.U[:, -1] - 4 * ts.U[:, -2] + ts.U[:, -3]) / (2 * h)
            assert np.max(np.abs(left)) < 1e-3 and np.max(np.abs(right)) < 1e-3

    def test_pool_sizes_and_order(self, model_name, trials_for):
        model = get_model(model_name)
        ts = trials_for(model_name)
        assert ts.m == len(model.forcing_grid)
        assert ts.forcings == model.forcing_grid.specs()
        assert ts.U.shape == ts.F.shape == (ts.m, 500)
        x = ts.grid.points
        for t in ts.trials[:5]:
            np.testing.assert_array_equal(t.f, t.forcing(x))

    def test_finite(self, model_name, trials_for):
        assert np.all(np.isfinite(trials_for(model_name).U))

    def test_nonlinear_solution_satisfies_discrete_equation(self, trials_for):
        # check the integrated flux w = p u_x against w_x = q u (1 + alpha u) - f
        model = get_model("nonlinear-sl")
        ts = trials_for("nonlinear-sl")
        x = ts.grid.points
        p, q = model.coefficient("p")(x), model.coefficient("q")(x)
        for t in ts.trials[::40]:
            w = p * np.gradient(t.u, x, edge_order=2)
            src = q * t.u * (1 + 0.4 * t.u) - t.f
            lhs = np.gradient(w, x, edge_order=2)
            assert np.max(np.abs(lhs - src)[5:-5]) < 5e-3 * np.max(np.abs(src))

    def test_batch_independent_of_chunking(self):
        model = get_model("linear-sl")
        grid = model.default_grid(101)
        forcings = model.forcing_grid.specs()[:7]
        a = generate_trials(model, forcings, grid)
        b = generate_trials(model, forcings, grid, batch=3)
        np.testing.assert_allclose(a.U, b.U, atol=1e-9)

    def test_unreachable_tolerance(self):
        model = get_model("linear-sl")
        with pytest.raises(ConvergenceError):
            generate_trials(model, [ForcingSpec(2.0, 1.0, 1.0)], model.default_grid(101), tol=0.0)

    def test_rejects_wrong_domain_and_order(self):
        model = get_model("linear-sl")
        f = ForcingSpec(1.0, 1.0, 1.0)
        with pytest.raises(ValueError, match="domain"):
            shoot_second_order(model, f, Grid(0, 5, 100))
        with pytest.raises(ValueError, match="order"):
            shoot_fourth_order(model, f, model.default_grid())
        with pytest.raises(ValueError):
            generate_trials(model, [], model.default_grid())


class TestTrialSetIO:
    def test_roundtrip_exact(self, tmp_path, trials_for):
        model = get_model("poisson2")
        ts = trials_for("poisson2").subset(range(6))
        path = save_trialset(ts, tmp_path / "d.csv", model=model, seed=4)
        back = load_trialset(path)
        np.testing.assert_array_equal(back.U, ts.U)
        np.testing.assert_array_equal(back.F, ts.F)
        assert back.grid == ts.grid and back.forcings == ts.forcings
        assert back.model == "poisson2" and back.meta["seed"] == 4
        assert back.meta["bc"]["left"] == 0.8

    def test_column_layout(self, tmp_path, trials_for):
        ts = trials_for("linear-sl").subset(range(120))
        path = save_trialset(ts, tmp_path / "d.csv")
        header = path.read_text().splitlines()[0].split(",")
        assert len(header) == 241
        assert header[:2] == ["x", "f_1"] and header[121] == "u_1" and header[-1] == "u_120"

    def test_row_count_checked(self, tmp_path, trials_for):
        ts = trials_for("poisson2").subset(range(2))
        path = save_trialset(ts, tmp_path / "d.csv")
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(ValueError, match="expected 500 rows"):
            load_trialset(path)

    def test_subset_and_mixing(self, trials_for):
        ts = trials_for("poisson2")
        sub = ts.subset([3, 1])
        assert sub.forcings == [ts.forcings[3], ts.forcings[1]]
        with pytest.raises(ValueError, match="one model"):
            TrialSet(ts.grid, (ts.trials[0], trials_for("linear-sl").trials[0]), "poisson2")
