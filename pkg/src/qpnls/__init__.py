# This file is licensed under the terms of the MIT License.
# See the LICENSE file in the root of this repository
# for complete details.

"""Quasi-periodic solutions of nonlinear Schrodinger equations on the torus."""


from qpnls import (
    cauchy,
    configuration,
    data_structures,
    field,
    helpers,
    lattice,
    linflow,
    linop,
    newton,
    nonlinear,
    resonance,
    serialization,
    spectral,
)


__version__ = "0.1.0"

__title__ = "qpnls"
__description__ = "Quasi-periodic solutions of nonlinear Schrodinger equations"

__license__ = "MIT License"


__all__ = [
    "cauchy",
    "configuration",
    "data_structures",
    "field",
    "helpers",
    "lattice",
    "linflow",
    "linop",
    "newton",
    "nonlinear",
    "resonance",
    "serialization",
    "spectral",
]
