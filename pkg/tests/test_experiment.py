import json
import math

import numpy as np
import pytest

from conftest import positive_state
from test_config import BASE, config_from
from stochnsf import InvalidOperandError
from stochnsf.experiment import (
    budget_bound,
    compare_run_directories,
    compare_schemes,
    load_run_config,
    mc_budget_check,
    perturb_psi,
    read_coefficients,
    replay,
    run_experiment,
    weak_strong_experiment,
    write_coefficients,
)
from stochnsf.diagnostics import CSV_COLUMNS
from stochnsf.dynamics import psi_theta_convert


PSI_CONFIG = BASE.replace("kind: imex_ito, formulation: galerkin", "kind: euler_maruyama_ito, formulation: psi_system") \
    .replace("dt: 1.0e-3, T: 0.003", "dt: 1.0e-4, T: 0.0004")


class TestCoefficientFiles:
    def test_lossless_roundtrip(self, tmp_path, grid):
        state = positive_state(grid, np.random.default_rng(0)).replace(t=0.125)
        write_coefficients(tmp_path / "s.txt", state)
        back = read_coefficients(tmp_path / "s.txt")
        assert np.array_equal(back.u.coeffs, state.u.coeffs)
        assert np.array_equal(back.psi.coeffs, state.psi.coeffs)
        assert back.t == 0.125 and back.grid == grid

    def test_theta_roundtrip(self, tmp_path, grid):
        ts = psi_theta_convert(positive_state(grid, np.random.default_rng(1)))
        write_coefficients(tmp_path / "t.txt", ts)
        back = read_coefficients(tmp_path / "t.txt")
        assert np.array_equal(back.theta.coeffs, ts.theta.coeffs)

    def test_header(self, tmp_path, small_grid):
        write_coefficients(tmp_path / "s.txt", positive_state(small_grid, np.random.default_rng(2)))
        lines = (tmp_path / "s.txt").read_text().splitlines()
        assert lines[0] == "# stochnsf coefficients v1"
        assert lines[4] == "field u1" and lines[5].split()[:3] == ["-2", "-2", "-2"]


class TestRuns:
    def test_artifacts(self, tmp_path):
        cfg = config_from(BASE)
        out = run_experiment(cfg, tmp_path / "run")
        d = out.directory
        assert (d / "metadata.json").exists() and (d / "summary.json").exists()
        rows = (d / "paths" / "path_0001.csv").read_text().splitlines()
        assert rows[0] == ",".join(CSV_COLUMNS) and len(rows) == 5
        meta = json.loads((d / "metadata.json").read_text())
        assert meta["format"] == "stochnsf-run" and meta["seed"] == 3
        summary = json.loads((d / "summary.json").read_text())
        assert summary["completed"] == 2 and summary["budget_integral"]["count"] == 2

    def test_replay_is_byte_identical(self, tmp_path):
        cfg = config_from(BASE)
        first = run_experiment(cfg, tmp_path / "a")
        replay(first.directory / "metadata.json", tmp_path / "b")
        assert compare_run_directories(tmp_path / "a", tmp_path / "b") == []

    def test_seed_changes_output(self, tmp_path):
        run_experiment(config_from(BASE), tmp_path / "a")
        run_experiment(config_from(BASE).with_overrides(seed=4), tmp_path / "b")
        assert compare_run_directories(tmp_path / "a", tmp_path / "b")

    def test_load_run_config_rejects_foreign_json(self, tmp_path):
        from stochnsf import ConfigError

        (tmp_path / "x.json").write_text("{}")
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "x.json")


class TestBudget:
    def test_hand_value(self):
        assert budget_bound(0.5, 1.0, 0.0, 1.0, 0.0) == pytest.approx(1.5 / math.sqrt(2), abs=1e-12)

    def test_formula(self):
        assert budget_bound(2.0, 0.5, 4.0, 0.1, 0.01) == pytest.approx((1 + 6 * 0.1 / 8) * math.sqrt(2.0 + 0.002))

    def test_small_ensemble(self, tmp_path):
        report = mc_budget_check(config_from(BASE), tmp_path / "b")
        assert report.n_paths == 2 and report.failed == 0 and report.passed
        assert json.loads((tmp_path / "b" / "budget.json").read_text())["passed"]

    def test_needs_galerkin(self):
        with pytest.raises(InvalidOperandError):
            mc_budget_check(config_from(PSI_CONFIG))


class TestWeakStrong:
    def test_perturbation(self, grid):
        state = positive_state(grid, np.random.default_rng(3))
        p = perturb_psi(state, 1e-3, (0, 1, 0))
        assert float((p.psi - state.psi).norm()) == pytest.approx(1e-3 / math.sqrt(2))

    def test_zero_perturbation_twins(self, tmp_path):
        report = weak_strong_experiment(config_from(PSI_CONFIG), 0.0, out=tmp_path)
        assert report.max_relative_energy == 0.0 and report.passed
        assert (tmp_path / "weak_strong.csv").exists()

    def test_perturbed_within_envelope(self):
        report = weak_strong_experiment(config_from(PSI_CONFIG), 1e-3)
        assert report.max_ratio is not None and report.passed

    def test_needs_psi_system(self):
        with pytest.raises(InvalidOperandError):
            weak_strong_experiment(config_from(BASE), 1e-3)


class TestCompare:
    def test_structure(self, tmp_path):
        cfg = config_from(PSI_CONFIG)
        result = compare_schemes(cfg, [2e-4, 1e-4], n_paths=1, deltas=(0.5, 0.1), out=tmp_path)
        assert set(result.tables) == {"ito_psi_vs_stratonovich", "ito_psi_vs_ito_theta"}
        assert len(result.galerkin) == 2
        # psi stays above 1.5 > delta, so the regularised drift coincides with the exact one
        assert all(row["error"] < 1e-12 for row in result.galerkin)
        assert (tmp_path / "compare_schemes.json").exists()
