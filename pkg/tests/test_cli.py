import json

import pytest
from click.testing import CliRunner

from qpnls.helpers import (
    ConvergenceError,
    EnvelopeViolationError,
    GenericityViolationError,
    SingularOperatorError,
)
from qpnls.scripts.cli import qpnls


@pytest.fixture
def runner():
    return CliRunner()


class TestSolve:
    def test_outputs_are_written(self, runner, write_config, plane_wave_config_text, tmp_path):
        # Setup
        path_to_config = write_config(plane_wave_config_text)
        output_dir = tmp_path / "out"
        # Exercise
        result = runner.invoke(
            qpnls, ["solve", "--config", str(path_to_config), "--out", str(output_dir)]
        )
        # Verify
        assert result.exit_code == 0
        assert "Process finished with exit code 0" in result.output
        assert sorted(path.name for path in output_dir.iterdir()) == [
            "iterations.jsonl", "solution.json", "summary.json"
        ]
        with (output_dir / "summary.json").open() as infile:
            summary = json.load(infile)
        assert summary["iterations"] == 1
        assert summary["omega"] == pytest.approx([4.0009])
        assert len(summary["config_hash"]) == 64
        # Cleanup - none

    def test_formats_and_matrix_dump(
        self, runner, write_config, plane_wave_config_text, tmp_path
    ):
        # Setup
        path_to_config = write_config(plane_wave_config_text)
        output_dir = tmp_path / "out"
        # Exercise
        result = runner.invoke(
            qpnls,
            [
                "solve", "--config", str(path_to_config), "--out", str(output_dir),
                "--format", "csv", "--format", "bin", "--dump-matrix",
            ],
        )
        # Verify
        assert result.exit_code == 0
        assert (output_dir / "solution.csv").exists()
        assert (output_dir / "solution.bin").exists()
        assert not (output_dir / "solution.json").exists()
        assert (output_dir / "operator.txt").read_text().startswith("# config_hash=")
        # Cleanup - none


class TestOracle:
    def test_short_integration(self, runner, write_config, plane_wave_config_text, tmp_path):
        # Setup
        path_to_config = write_config(plane_wave_config_text)
        output_dir = tmp_path / "out"
        # Exercise
        result = runner.invoke(
            qpnls,
            [
                "oracle", "--config", str(path_to_config), "--out", str(output_dir),
                "--horizon", "0.1",
            ],
        )
        # Verify
        assert result.exit_code == 0
        with (output_dir / "oracle.json").open() as infile:
            report = json.load(infile)
        assert report["horizon"] == 0.1
        assert report["mass_drift"] <= 1e-12
        # Cleanup - none

    @pytest.mark.parametrize(
        "extra, dt", [
            ("", 5e-4),
            ("\n[cauchy]\nhalving_tolerance = 0\n", 1e-3),
        ]
    )
    def test_step_halving(self, runner, write_config, plane_wave_config_text, tmp_path, extra, dt):
        # Setup
        path_to_config = write_config(plane_wave_config_text + extra)
        output_dir = tmp_path / "out"
        # Exercise
        result = runner.invoke(
            qpnls,
            [
                "oracle", "--config", str(path_to_config), "--out", str(output_dir),
                "--horizon", "0.1",
            ],
        )
        # Verify
        assert result.exit_code == 0
        with (output_dir / "oracle.json").open() as infile:
            report = json.load(infile)
        assert report["dt"] == pytest.approx(dt)
        # Cleanup - none


class TestExcisionGate:
    @pytest.mark.parametrize("command", ["solve", "residual", "match", "validate"])
    def test_excised_amplitudes_stop_the_run(
        self, runner, write_config, plane_wave_config_text, tmp_path, command
    ):
        # Setup
        text = plane_wave_config_text.replace("epsilon = 1e-3", "epsilon = 0.5")
        path_to_config = write_config(text)
        # Exercise
        result = runner.invoke(
            qpnls, [command, "--config", str(path_to_config), "--out", str(tmp_path / "out")]
        )
        # Verify
        assert result.exit_code == 2
        assert "ExcisionError" in result.output
        assert "Stage: excise" in result.output
        assert "Process finished with exit code 2" in result.output
        # Cleanup - none

    def test_gate_can_be_switched_off(
        self, runner, write_config, plane_wave_config_text, tmp_path
    ):
        # Setup
        text = plane_wave_config_text.replace("epsilon = 1e-3", "epsilon = 0.5").replace(
            "seed = 7\n", "seed = 7\ncheck_excision = false\n"
        )
        path_to_config = write_config(text)
        # Exercise
        result = runner.invoke(
            qpnls, ["solve", "--config", str(path_to_config), "--out", str(tmp_path / "out")]
        )
        # Verify
        assert result.exit_code == 0
        assert (tmp_path / "out" / "solution.json").exists()
        # Cleanup - none


class TestExitCodes:
    def test_unknown_key(self, runner, write_config, plane_wave_config_text, tmp_path):
        # Setup
        path_to_config = write_config(plane_wave_config_text + "\n[linflow]\nspeed = 2\n")
        # Exercise
        result = runner.invoke(
            qpnls, ["solve", "--config", str(path_to_config), "--out", str(tmp_path)]
        )
        # Verify
        assert result.exit_code == 1
        assert "Unknown key(s) speed in section [linflow]." in result.output
        assert "Stage: config" in result.output
        # Cleanup - none

    @pytest.mark.parametrize(
        "error, code", [
            (SingularOperatorError("Small pivot.", min_pivot=1e-9, sigma_min=1e-9), 2),
            (GenericityViolationError("Large component."), 2),
            (ConvergenceError("Residual too large."), 3),
            (EnvelopeViolationError("Out of bounds."), 4),
        ]
    )
    def test_errors_map_to_exit_codes(
        self, mocker, runner, write_config, plane_wave_config_text, tmp_path, error, code
    ):
        # Setup
        path_to_config = write_config(plane_wave_config_text)
        mocker.patch("qpnls.newton.run_scheme", side_effect=error)
        # Exercise
        result = runner.invoke(
            qpnls, ["solve", "--config", str(path_to_config), "--out", str(tmp_path)]
        )
        # Verify
        assert result.exit_code == code
        assert "Stage: solve" in result.output
        assert f"Process finished with exit code {code}" in result.output
        # Cleanup - none

    def test_missing_configuration_file(self, runner, tmp_path):
        # Setup - none
        # Exercise
        result = runner.invoke(qpnls, ["solve", "--config", str(tmp_path / "absent.toml")])
        # Verify
        assert result.exit_code == 2
        assert "does not exist" in result.output
        # Cleanup - none
