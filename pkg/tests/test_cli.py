import json
import subprocess
import sys

import pytest

from test_config import BASE
from test_experiment import PSI_CONFIG
from stochnsf.cli import EXIT_CHECK_FAILED, EXIT_OK, EXIT_USAGE, build_parser, main


@pytest.fixture
def galerkin_yaml(tmp_path):
    p = tmp_path / "galerkin.yaml"
    p.write_text(BASE)
    return p


@pytest.fixture
def psi_yaml(tmp_path):
    p = tmp_path / "psi.yaml"
    p.write_text(PSI_CONFIG)
    return p


class TestParser:
    def test_subcommands(self):
        parser = build_parser()
        for cmd in ("run", "mc-budget", "weak-strong", "verify-noise", "verify-properties"):
            args = parser.parse_args([cmd, "--config", "x.yaml", "--seed", "2", "--paths", "3", "--quiet"])
            assert (args.seed, args.paths, args.quiet) == (2, 3, True)
        assert parser.parse_args(["verify-generic"]).config is None

    def test_usage_error_exit_code(self):
        with pytest.raises(SystemExit) as info:
            main(["run"])
        assert info.value.code == EXIT_USAGE


class TestCommands:
    def test_run(self, galerkin_yaml, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["run", "--config", str(galerkin_yaml), "--out", str(out), "--paths", "1"]) == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["completed"] == 1 and (out / "metadata.json").exists()

    def test_replay_from_metadata(self, galerkin_yaml, tmp_path):
        from stochnsf.experiment import compare_run_directories

        assert main(["run", "--config", str(galerkin_yaml), "--out", str(tmp_path / "a"), "--quiet"]) == EXIT_OK
        meta = tmp_path / "a" / "metadata.json"
        assert main(["run", "--config", str(meta), "--out", str(tmp_path / "b"), "--quiet"]) == EXIT_OK
        assert compare_run_directories(tmp_path / "a", tmp_path / "b") == []

    def test_mc_budget(self, galerkin_yaml, tmp_path):
        assert main(["mc-budget", "--config", str(galerkin_yaml), "--out", str(tmp_path), "--quiet"]) == EXIT_OK

    def test_weak_strong(self, psi_yaml, capsys):
        assert main(["weak-strong", "--config", str(psi_yaml), "--amplitude", "0"]) == EXIT_OK
        assert json.loads(capsys.readouterr().out)["max_relative_energy"] == 0.0

    def test_verify_noise(self, galerkin_yaml, tmp_path):
        assert main(["verify-noise", "--config", str(galerkin_yaml), "--out", str(tmp_path), "--quiet"]) == EXIT_OK
        assert json.loads((tmp_path / "verify_noise.json").read_text())["stationarity"]["passed"]

    def test_verify_generic_without_config(self, capsys):
        assert main(["verify-generic", "--m", "4", "--samples", "1"]) == EXIT_OK
        assert json.loads(capsys.readouterr().out)["passed"]

    def test_verify_properties(self, tmp_path):
        p = tmp_path / "m4.yaml"
        p.write_text(BASE.replace("grid: {m: 2}", "grid: {m: 4, n: 16}"))
        assert main(["verify-properties", "--config", str(p), "--quiet"]) == EXIT_OK

    def test_compare_schemes_failure_exit(self, psi_yaml):
        # two steps and an impossible order requirement force a check failure
        code = main(["compare-schemes", "--config", str(psi_yaml), "--dt", "2e-4", "1e-4", "--paths", "1",
                     "--min-order", "50", "--quiet"])
        assert code == EXIT_CHECK_FAILED

    def test_config_error_exit(self, tmp_path, capsys):
        p = tmp_path / "bad.yaml"
        p.write_text(BASE.replace("k: [0, 1, 0]", "k: [9, 0, 0]"))
        assert main(["run", "--config", str(p)]) == EXIT_USAGE
        err = capsys.readouterr().err
        assert err.startswith("config error: line 5: noise.g.0.k: invalid-mode")

    def test_console_entry_point(self, galerkin_yaml, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "stochnsf.cli", "verify-noise", "--config", str(galerkin_yaml),
                               "--quiet"], capture_output=True, text=True)
        assert proc.returncode == EXIT_OK, proc.stderr
