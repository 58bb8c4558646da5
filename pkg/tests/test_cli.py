import csv
import json

import numpy as np
import pytest

from bvp_discovery.cli import (
    ExperimentConfig,
    _seeds,
    main,
    parse_config,
    resolved_config,
    run_point,
    summarize,
)
from bvp_discovery.discovery import CLEAN_DIFF
from bvp_discovery.models import get_model
from bvp_discovery.regression import RegressionConfig
from bvp_discovery.signal import DiffMethod, DifferentiationConfig
from bvp_discovery.solver import load_trialset, save_trialset

FULL_INI = """
[experiment]
model = nonlinear-sl
pipeline = noise-sweep
trials = 12
noise_levels = 0, 0.01
trial_counts = 5 10
sweep_seeds = 3
orders = 1, 2
seed = 4

[grid]
n = 300

[forcing]
amplitudes = 1 2

[differentiation]
method = finite-difference
window = 9
degree = 3

[regression]
lambda = 1e-4
final_lambda = 1e-5
num_eps = 20
keep = f
k_mode = nonzeros
"""


def _read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def poisson_data(tmp_path_factory, trials_for):
    path = tmp_path_factory.mktemp("data") / "poisson2.csv"
    return save_trialset(trials_for("poisson2").subset(range(0, 120, 3)), path, get_model("poisson2"))


def _write_ini(path, text):
    path.write_text(text)
    return path


class TestConfig:
    def test_full_parse(self):
        cfg = parse_config(FULL_INI)
        assert cfg.model == "nonlinear-sl" and cfg.pipeline == "noise-sweep"
        assert cfg.noise_levels == (0.0, 0.01) and cfg.trial_counts == (5, 10)
        assert cfg.orders == (1, 2) and cfg.n == 300 and cfg.seed == 4
        # unlisted forcing parameters keep the model's own grid
        assert cfg.forcing.amplitudes == (1.0, 2.0)
        assert cfg.forcing.offsets == (2.0, 3.0, 4.0, 5.0, 6.0)
        assert cfg.diff == DifferentiationConfig(DiffMethod.FINITE_DIFFERENCE, 9, 3)
        assert cfg.regression == RegressionConfig(lam=1e-4, final_lam=1e-5, num_eps=20,
                                                  keep=("f",), k_mode="nonzeros")

    def test_defaults(self):
        cfg = parse_config("")
        assert cfg == ExperimentConfig()
        assert cfg.grid().n == 500 and (cfg.grid().a, cfg.grid().b) == (0.0, 10.0)

    @pytest.mark.parametrize("text,match", [
        ("[experiment]\nmodle = poisson2\n", "unknown keys"),
        ("[solver]\ntol = 1\n", "unknown config sections"),
        ("[experiment]\nmodel = heat\n", "unknown model"),
        ("[experiment]\npipeline = fit\n", "pipeline"),
        ("[experiment]\nmodel = poisson2\ntrials = 121\n", "forcing grid has 120"),
        ("[differentiation]\nwindow = 4\n", "odd"),
        ("[regression]\nbeta = 0\n", "beta"),
    ])
    def test_rejections(self, text, match):
        with pytest.raises((ValueError, KeyError), match=match):
            parse_config(text)

    def test_resolved_config_fills_regime(self):
        cfg = ExperimentConfig(model="euler-bernoulli")
        out = resolved_config(cfg, "identify", 0.0)
        assert out["diff"]["method"] == "finite-difference"
        assert out["regression"]["keep"] == ["f"] and out["regression"]["lam"] == 1e-5
        assert out["a"] == 0.0 and out["b"] == 10.0
        assert out["forcing"]["offsets"] == [0.2, 0.4, 0.6, 0.8]
        json.dumps(out)

    def test_seeds(self):
        assert _seeds(3) == _seeds(3)
        a, b = _seeds(3)
        assert a != b and _seeds(4) != (a, b)


class TestCommands:
    def test_generate_columns(self, tmp_path):
        ini = _write_ini(tmp_path / "c.ini", "[experiment]\nmodel = linear-sl\n")
        assert main(["generate", "--config", str(ini), "--out", str(tmp_path / "o")]) == 0
        rows = _read_csv(tmp_path / "o" / "linear-sl.csv")
        assert len(rows[0]) == 241 and len(rows) == 501
        meta = json.loads((tmp_path / "o" / "linear-sl.json").read_text())
        assert meta["model"] == "linear-sl" and len(meta["forcings"]) == 120
        ts = load_trialset(tmp_path / "o" / "linear-sl.csv")
        assert np.max(np.abs(ts.U[:, -1])) <= 1e-3

    def test_generate_subset_deterministic(self, tmp_path):
        ini = _write_ini(tmp_path / "c.ini", "[experiment]\nmodel = poisson2\ntrials = 5\n")
        for d in ("a", "b"):
            assert main(["generate", "--config", str(ini), "--out", str(tmp_path / d), "--seed", "9"]) == 0
        a = (tmp_path / "a" / "poisson2.csv").read_bytes()
        assert a == (tmp_path / "b" / "poisson2.csv").read_bytes()
        assert json.loads((tmp_path / "a" / "poisson2.json").read_text())["seed"] == 9

    @pytest.mark.parametrize("command", ["discover", "estimate"])
    def test_rerun_byte_identical(self, command, tmp_path, poisson_data):
        ini = _write_ini(tmp_path / "c.ini", "[experiment]\nmodel = poisson2\ntrials = 8\nnoise = 0.01\n")
        outs = []
        for d in ("r1", "r2"):
            rc = main([command, "--config", str(ini), "--data", str(poisson_data), "--out", str(tmp_path / d)])
            assert rc == 0
            outs.append(sorted(p.name for p in (tmp_path / d).iterdir()))
        assert outs[0] == outs[1]
        for name in outs[0]:
            assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()

    def test_report_contents(self, tmp_path, poisson_data):
        ini = _write_ini(tmp_path / "c.ini", "[experiment]\nmodel = poisson2\ntrials = 8\n")
        assert main(["discover", "--config", str(ini), "--data", str(poisson_data), "--out", str(tmp_path)]) == 0
        rep = json.loads((tmp_path / "identify_report.json").read_text())
        assert rep["pipeline"] == "identify" and rep["trials"] == 8
        assert rep["selected"]["active_terms"] == ["u_x", "f"]
        assert rep["spurious"] == 0 and rep["missing"] == [] and rep["errors"]["p"] < 1e-3
        assert rep["config"]["regression"]["beta"] == 1e-6
        assert rep["config"]["diff"]["window"] == CLEAN_DIFF.window
        rows = _read_csv(tmp_path / "identify_fields.csv")
        assert rows[0] == ["x", "p", "p_true", "phi", "L[u_x]"] and len(rows) == 501
        p, truth = float(rows[250][1]), float(rows[250][2])
        assert abs(p - truth) < 1e-3 * truth

    def test_noise_sweep_outputs(self, tmp_path, poisson_data):
        ini = _write_ini(tmp_path / "c.ini", (
            "[experiment]\nmodel = poisson2\npipeline = noise-sweep\ntrials = 10\n"
            "noise_levels = 0 0.02\nsweep_seeds = 2\n"
        ))
        assert main(["sweep", "--config", str(ini), "--data", str(poisson_data), "--out", str(tmp_path)]) == 0
        points = _read_csv(tmp_path / "noise_sweep_points.csv")
        assert len(points) == 1 + 4
        assert points[0][:4] == ["axis", "value", "seed", "trials"] and "error_p" in points[0]
        summary = _read_csv(tmp_path / "noise_sweep_summary.csv")
        assert len(summary) == 3 and "error_p_mean" in summary[0]
        payload = json.loads((tmp_path / "noise_sweep.json").read_text())
        assert [row["value"] for row in payload["summary"]] == [0.0, 0.02]
        assert payload["summary"][1]["error_p_mean"] > payload["summary"][0]["error_p_mean"]

    def test_trial_sweep_outputs(self, tmp_path, poisson_data):
        ini = _write_ini(tmp_path / "c.ini", (
            "[experiment]\nmodel = poisson2\npipeline = trial-sweep\ntrial_counts = 2 6\n"
            "sweep_seeds = 2\nnoise = 0.01\n"
        ))
        assert main(["sweep", "--config", str(ini), "--data", str(poisson_data), "--out", str(tmp_path)]) == 0
        summary = json.loads((tmp_path / "trial_sweep.json").read_text())["summary"]
        assert [row["value"] for row in summary] == [2, 6] and all(r["seeds"] == 2 for r in summary)

    def test_order_outputs(self, tmp_path, poisson_data):
        ini = _write_ini(tmp_path / "c.ini", "[experiment]\nmodel = poisson2\norders = 1 2 3\n")
        assert main(["order", "--config", str(ini), "--data", str(poisson_data), "--out", str(tmp_path)]) == 0
        rows = _read_csv(tmp_path / "order.csv")
        assert rows[0] == ["order", "forcing_error", "failure"] and [r[0] for r in rows[1:]] == ["1", "2", "3"]
        payload = json.loads((tmp_path / "order.json").read_text())
        assert payload["best_order"] == 2
        assert payload["train_trials"] + payload["test_trials"] == 40

    def test_errors_return_nonzero(self, tmp_path, poisson_data, capsys):
        ini = _write_ini(tmp_path / "c.ini", "[experiment]\nmodel = linear-sl\n")
        assert main(["discover", "--config", str(ini), "--data", str(poisson_data), "--out", str(tmp_path)]) == 1
        assert "poisson2" in capsys.readouterr().err
        bad = _write_ini(tmp_path / "bad.ini", "[experiment]\nmodel = heat\n")
        assert main(["estimate", "--config", str(bad)]) == 1
        assert main(["sweep", "--data", str(poisson_data)]) == 1


def test_run_point_subsample_and_noise(poisson_data):
    data = load_trialset(poisson_data)
    cfg = ExperimentConfig(model="poisson2")
    a = run_point(cfg, data, "estimate", 6, 0.01, seed=2)
    b = run_point(cfg, data, "estimate", 6, 0.01, seed=2)
    c = run_point(cfg, data, "estimate", 6, 0.01, seed=3)
    assert a.trials == 6 and a.noise_level == 0.01
    assert a.to_dict() == b.to_dict() and a.to_dict() != c.to_dict()
    with pytest.raises(ValueError, match="dataset has 40"):
        run_point(cfg, data, "estimate", 41, 0.0, seed=0)


def test_summarize():
    records = [
        {"value": 1, "error_p": 0.1, "spurious": 0, "missing": 0, "loss": -5.0},
        {"value": 1, "error_p": 0.3, "spurious": 2, "missing": 0, "loss": -3.0},
        {"value": 2, "error_p": 0.5, "spurious": 1, "missing": 1, "loss": -1.0},
    ]
    rows = summarize(records)
    assert [r["value"] for r in rows] == [1, 2]
    assert rows[0]["error_p_mean"] == pytest.approx(0.2) and rows[0]["error_p_max"] == 0.3
    assert rows[0]["spurious_mean"] == 1.0 and rows[1]["seeds"] == 1
