import hashlib
import pathlib

import pytest
import toml

from qpnls import configuration, lattice
from qpnls.data_structures import CauchySettings, TruncationSpec
from qpnls.helpers import InvalidConfigurationError, UnknownConfigKeyError


class TestConfigHash:
    def test_digest_of_the_file_bytes(self, write_config, plane_wave_config_text):
        # Setup
        path_to_file = write_config(plane_wave_config_text)
        expected = hashlib.sha256(plane_wave_config_text.encode("utf-8")).hexdigest()
        # Exercise
        digest = configuration.config_hash(path_to_file)
        # Verify
        assert digest == expected
        assert len(digest) == 64
        # Cleanup - none

    def test_other_hash_constructor(self, write_config, plane_wave_config_text):
        # Setup
        path_to_file = write_config(plane_wave_config_text)
        # Exercise
        digest = configuration.config_hash(path_to_file, hashlib.md5)
        # Verify
        assert digest == hashlib.md5(plane_wave_config_text.encode("utf-8")).hexdigest()
        # Cleanup - none


class TestCheckKeys:
    @pytest.mark.parametrize(
        "raw, message", [
            (
                {"problem": {}, "modes": {}, "truncation": {}, "solver": {}},
                "Unknown configuration section [solver].",
            ),
            (
                {"problem": {"delta": 0.1, "gamma": 1, "alpha": 2}, "modes": {}, "truncation": {}},
                "Unknown key(s) alpha, gamma in section [problem].",
            ),
        ]
    )
    def test_unknown_entries(self, raw, message):
        # Setup - none
        # Exercise
        # Verify
        with pytest.raises(UnknownConfigKeyError) as key_error:
            configuration.check_keys(raw)
        assert str(key_error.value) == message
        # Cleanup - none

    def test_missing_section(self):
        # Setup - none
        # Exercise
        # Verify
        with pytest.raises(InvalidConfigurationError) as configuration_error:
            configuration.check_keys({"problem": {}, "modes": {}})
        assert str(configuration_error.value) == (
            "The configuration lacks the [truncation] section."
        )
        # Cleanup - none

    def test_section_must_be_a_table(self):
        # Setup - none
        # Exercise
        # Verify
        with pytest.raises(InvalidConfigurationError) as configuration_error:
            configuration.check_keys({"problem": 3})
        assert str(configuration_error.value) == "[problem] must be a table."
        # Cleanup - none


class TestLoadRunConfig:
    def test_plane_wave_configuration(self, write_config, plane_wave_config_text):
        # Setup
        path_to_file = write_config(plane_wave_config_text)
        # Exercise
        config = configuration.load_run_config(path_to_file)
        # Verify
        assert config.problem.delta == 0.01
        assert config.problem.weight_beta_prime == 0.5
        assert config.modes.modes == ((2,),)
        assert config.modes.generic_indices == (0,)
        assert config.mode_data.a.tolist() == [0.3]
        assert config.mode_data.theta.tolist() == [0.0]
        assert config.trunc == TruncationSpec(
            N=4, J_x=lattice.default_spatial_radius(config.modes, 4, 1), K=5
        )
        assert config.seed == 7
        assert config.formats == ("json",)
        assert config.threads is None
        assert config.config_hash == configuration.config_hash(path_to_file)
        # Cleanup - none

    def test_defaults(self, write_config, plane_wave_config_text):
        # Setup
        text = plane_wave_config_text.replace("beta_prime = 0.5\n", "").replace(
            "[run]\nseed = 7\n", "[run]\n"
        )
        path_to_file = write_config(text)
        # Exercise
        config = configuration.load_run_config(path_to_file)
        # Verify
        assert config.problem.weight_beta_prime == 0.5
        assert config.seed == 0
        assert config.output_dir == pathlib.Path("qpnls-output")
        assert config.resonance.samples == 10_000
        assert config.resonance.eps_grid == (1e-1, 1e-2, 1e-3)
        assert config.linflow.band_radius == 2
        assert config.linflow.horizon is None
        assert config.cauchy == CauchySettings(
            radius_factor=2.0,
            tail_amplitude=1.0,
            horizon=None,
            samples=11,
            envelope_constant=10.0,
            match_tolerance=1e-10,
            aux_order=2,
        )
        assert config.cauchy.halving_tolerance == 1e-9
        assert config.check_excision
        assert config.check_remainder
        # Cleanup - none

    def test_overrides_replace_the_run_section(self, write_config, plane_wave_config_text):
        # Setup
        path_to_file = write_config(plane_wave_config_text)
        overrides = {"seed": 11, "threads": 3, "formats": None}
        # Exercise
        config = configuration.load_run_config(path_to_file, overrides)
        # Verify
        assert config.seed == 11
        assert config.threads == 3
        assert config.formats == ("json",)
        # Cleanup - none

    @pytest.mark.parametrize(
        "old, new, message", [
            (
                "N = 4",
                "N = 3",
                "N = 3 is too small for the target order r = 3.0.",
            ),
            (
                'formats = ["json"]',
                'formats = ["json", "xml", "hdf5"]',
                "Unsupported output format(s): hdf5, xml.",
            ),
            (
                "seed = 7",
                "seed = 7\nthreads = 0",
                "The thread count must be positive.",
            ),
            (
                "seed = 7",
                "seed = 7\ncheck_excision = 1",
                "The [run] key check_excision must be true or false.",
            ),
            (
                "delta = 0.01\n",
                "",
                "The [problem] section lacks the required key delta.",
            ),
            (
                "d = 1\n",
                "d = 2\n",
                "The modes live in dimension 1, the problem in dimension 2.",
            ),
        ]
    )
    def test_invalid_configuration(self, write_config, plane_wave_config_text, old, new, message):
        # Setup
        path_to_file = write_config(plane_wave_config_text.replace(old, new, 1))
        # Exercise
        # Verify
        with pytest.raises(InvalidConfigurationError) as configuration_error:
            configuration.load_run_config(path_to_file)
        assert str(configuration_error.value) == message
        # Cleanup - none

    def test_invalid_toml(self, write_config):
        # Setup
        path_to_file = write_config("[problem\nd = 1\n")
        # Exercise
        # Verify
        with pytest.raises(InvalidConfigurationError) as configuration_error:
            configuration.load_run_config(path_to_file)
        assert str(configuration_error.value).startswith(f"{path_to_file} is not valid TOML:")
        # Cleanup - none

    def test_parsed_document_needs_no_file(self, plane_wave_config_text):
        # Setup
        raw = toml.loads(plane_wave_config_text)
        # Exercise
        config = configuration.build_run_config(raw, "0" * 64)
        # Verify
        assert config.config_hash == "0" * 64
        assert config.trunc.N == 4
        # Cleanup - none

    def test_stage_toggles(self, write_config, plane_wave_config_text):
        # Setup
        text = plane_wave_config_text.replace(
            "seed = 7\n", "seed = 7\ncheck_excision = false\ncheck_remainder = false\n"
        )
        path_to_file = write_config(text + "\n[cauchy]\nhalving_tolerance = 0\n")
        # Exercise
        config = configuration.load_run_config(path_to_file)
        # Verify
        assert not config.check_excision
        assert not config.check_remainder
        assert config.cauchy.halving_tolerance is None
        # Cleanup - none
