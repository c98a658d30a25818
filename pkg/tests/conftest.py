import numpy as np
import pytest

from qpnls import lattice
from qpnls.data_structures import ModeData, ModeSet, ProblemSpec, TruncationSpec


"""Plane wave."""


@pytest.fixture
def plane_wave_modes():
    return ModeSet(modes=((2,),), generic_indices=(0,))


@pytest.fixture
def plane_wave_data():
    return ModeData(a=np.array([0.3]), theta=np.array([0.0]))


@pytest.fixture
def plane_wave_spec():
    return ProblemSpec(
        d=1, p=1, delta=0.01, r=3.0, weight_beta=1.0, weight_beta_prime=0.5, epsilon=1e-3
    )


@pytest.fixture
def plane_wave_trunc(plane_wave_modes):
    return TruncationSpec(
        N=4, J_x=lattice.default_spatial_radius(plane_wave_modes, 4, 1), K=5
    )


"""Two modes."""


@pytest.fixture
def two_modes():
    return ModeSet(modes=((1,), (-2,)), generic_indices=(0, 1))


@pytest.fixture
def two_mode_data():
    return ModeData(a=np.array([0.5, 0.4]), theta=np.array([0.0, 0.0]))


@pytest.fixture
def two_mode_spec():
    return ProblemSpec(
        d=1, p=1, delta=1e-3, r=3.0, weight_beta=1.0, weight_beta_prime=0.5, epsilon=1e-3
    )


@pytest.fixture
def two_mode_trunc(two_modes):
    return TruncationSpec(N=4, J_x=lattice.default_spatial_radius(two_modes, 4, 1), K=5)


"""Linear problem."""


@pytest.fixture
def linear_spec():
    return ProblemSpec(
        d=1, p=1, delta=0.0, r=3.0, weight_beta=1.0, weight_beta_prime=0.5, epsilon=1e-3
    )


"""Configuration files."""


PLANE_WAVE_CONFIG = """\
[problem]
d = 1
p = 1
delta = 0.01
r = 3
beta = 1.0
beta_prime = 0.5
epsilon = 1e-3

[modes]
modes = [[2]]
amplitudes = [0.3]

[truncation]
N = 4

[run]
seed = 7
formats = ["json"]
"""


@pytest.fixture
def plane_wave_config_text():
    return PLANE_WAVE_CONFIG


@pytest.fixture
def write_config(tmp_path):
    """Writes a configuration file into the temporary directory and returns its path."""

    def write(text, name="run.toml"):
        path_to_file = tmp_path / name
        path_to_file.write_text(text, encoding="utf-8")
        return path_to_file

    return write
