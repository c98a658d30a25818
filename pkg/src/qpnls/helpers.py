"""Implements the exceptions, validators and logging helpers shared by the library."""
import contextlib
import logging
import os
from typing import Iterator, Optional

import numpy as np

from qpnls.data_structures import ModeData, ModeSet, ProblemSpec, TruncationSpec


LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
LOG_LEVEL_VARIABLE = "QPNLS_LOG"


##########################################################################################


class QpnlsError(Exception):
    """A base class for every exception raised by the library.

    The optional stage attribute names the pipeline stage the error surfaced in.
    """

    stage: Optional[str] = None


class InvalidConfigurationError(QpnlsError):
    """A class for an exception to raise in case the run configuration is inconsistent."""


class InvalidModeSetError(InvalidConfigurationError):
    """A class for an exception to raise in case a mode set breaks its invariants."""


class InvalidTruncationError(InvalidConfigurationError):
    """A class for an exception to raise in case a truncation breaks its invariants."""


class InvalidProblemSpecError(InvalidConfigurationError):
    """A class for an exception to raise in case the problem parameters are out of range."""


class InvalidModeDataError(InvalidConfigurationError):
    """A class for an exception to raise in case amplitudes or phases are inadmissible."""


class UnknownConfigKeyError(InvalidConfigurationError):
    """A class for an exception to raise in case a configuration file has unknown keys."""


class SiteCapacityError(QpnlsError):
    """A class for an exception to raise in case a site index exceeds the site budget."""


class TruncationAsymmetryError(QpnlsError):
    """A class for an exception to raise in case a reflected site leaves the truncation."""


class DimensionMismatchError(QpnlsError):
    """A class for an exception to raise in case fields or vectors have incompatible shapes."""


class EmptyRestrictionError(QpnlsError):
    """A class for an exception to raise in case a restriction retains no site."""


class ZeroAmplitudeError(QpnlsError):
    """A class for an exception to raise in case a frequency update divides by a_j = 0."""


class StepSizeError(QpnlsError):
    """A class for an exception to raise in case a finite-difference step is unusable."""


class DegenerateFitError(QpnlsError):
    """A class for an exception to raise in case a log-log fit has too few usable points."""


class IntegratorDisagreementError(QpnlsError):
    """A class for an exception to raise in case step halving changes a trajectory too much."""


class BlowUpError(QpnlsError):
    """A class for an exception to raise in case a trajectory norm grows beyond the guard."""


class IllConditionedBasisError(QpnlsError):
    """A class for an exception to raise in case the basis Gram matrix is near singular."""


class AdmissibilityError(QpnlsError):
    """A class for an exception to raise in case initial data is outside the admissible class."""


class ProjectionOverflowError(QpnlsError):
    """A class for an exception to raise in case the projection window leaves the truncation."""


class ExcisionError(QpnlsError):
    """A class for an exception to raise in case an amplitude vector has to be excised."""


class SingularOperatorError(ExcisionError):
    """A class for an exception to raise in case a restricted operator is (near) singular."""

    def __init__(self, message: str, min_pivot: float, sigma_min: float) -> None:
        super().__init__(message)
        self.min_pivot = min_pivot
        self.sigma_min = sigma_min


class GenericityViolationError(ExcisionError):
    """A class for an exception to raise in case a connected component exceeds 2b + d sites."""


class ConvergenceError(QpnlsError):
    """A class for an exception to raise in case an iteration misses its target."""


class DivergenceError(ConvergenceError):
    """A class for an exception to raise in case the Newton residual grows."""


class EnvelopeViolationError(QpnlsError):
    """A class for an exception to raise in case a measured quantity leaves its envelope."""


EXIT_CODES = (
    (ExcisionError, 2),
    (ConvergenceError, 3),
    (EnvelopeViolationError, 4),
)


def exit_code_for(error: BaseException) -> int:
    """Maps an error to the process exit code of the command line interface.

    Parameters
    ----------
    error: BaseException
        The error that stopped the run.

    Returns
    -------
    int
        2 for excision failures, 3 for convergence failures, 4 for envelope violations and
        1 for everything else.
    """
    for error_class, code in EXIT_CODES:
        if isinstance(error, error_class):
            return code
    return 1


@contextlib.contextmanager
def stage(name: str) -> Iterator[None]:
    """Stamps the stage name on any library error raised inside the block."""
    try:
        yield
    except QpnlsError as error:
        if error.stage is None:
            error.stage = name
        raise


##########################################################################################


def configure_logging(level: Optional[str] = None) -> None:
    """Installs the library log format at the level named by QPNLS_LOG.

    Parameters
    ----------
    level: Optional[str]
        An explicit level name. When omitted the QPNLS_LOG environment variable is read and
        WARNING is used if it is unset or unknown.
    """
    name = (level or os.environ.get(LOG_LEVEL_VARIABLE, "WARNING")).upper()
    numeric_level = getattr(logging, name, None)
    if not isinstance(numeric_level, int):
        numeric_level = logging.WARNING
    logging.basicConfig(level=numeric_level, format=LOG_FORMAT)
    logging.getLogger("qpnls").setLevel(numeric_level)


##########################################################################################


def validate_mode_set(modes: ModeSet, J: Optional[int] = None) -> None:
    """Checks the invariants of a mode set.

    Parameters
    ----------
    modes: ModeSet
        The mode set to validate.
    J: Optional[int]
        The radius of the ball B_J the generic modes must lie in. When omitted the check is
        skipped.

    Raises
    ------
    InvalidModeSetError
    """
    if modes.B == 0:
        raise InvalidModeSetError("The mode set is empty.")
    if any(len(mode) != modes.d for mode in modes.modes):
        raise InvalidModeSetError("All modes must have the same spatial dimension.")
    if len(set(modes.modes)) != modes.B:
        raise InvalidModeSetError("Modes must be distinct.")
    if len(modes.generic_indices) < 1:
        raise InvalidModeSetError("At least one generic mode is required.")
    if len(set(modes.generic_indices)) != len(modes.generic_indices):
        raise InvalidModeSetError("Generic indices must be distinct.")
    if any(index < 0 or index >= modes.B for index in modes.generic_indices):
        raise InvalidModeSetError("Generic indices must point into the mode sequence.")
    if J is not None:
        for index in modes.generic_indices:
            if max(abs(component) for component in modes.modes[index]) > J:
                raise InvalidModeSetError(f"Generic mode {modes.modes[index]} lies outside B_{J}.")
    if modes.tilde_j is not None:
        if len(modes.tilde_j) != modes.d:
            raise InvalidModeSetError("The auxiliary frequency has the wrong dimension.")
        if tuple(modes.tilde_j) in modes.modes:
            raise InvalidModeSetError("The auxiliary frequency duplicates a mode.")
        if J is not None and max(abs(component) for component in modes.tilde_j) <= J:
            raise InvalidModeSetError("The auxiliary frequency must lie outside B_J.")


def validate_truncation(trunc: TruncationSpec, modes: ModeSet) -> None:
    """Checks the invariants of a truncation against the modes it has to hold.

    Raises
    ------
    InvalidTruncationError
    """
    if trunc.N < 0:
        raise InvalidTruncationError("N must be non-negative.")
    if trunc.K < 1:
        raise InvalidTruncationError("K must be at least 1.")
    if trunc.aux_order is not None and trunc.aux_order < 0:
        raise InvalidTruncationError("aux_order must be non-negative.")
    radius = max(max(abs(component) for component in mode) for mode in modes.modes)
    if trunc.J_x < radius:
        raise InvalidTruncationError(
            f"J_x = {trunc.J_x} is smaller than the largest mode radius {radius}."
        )


def validate_problem_spec(spec: ProblemSpec) -> None:
    """Checks the ranges of the problem parameters.

    Raises
    ------
    InvalidProblemSpecError
    """
    if spec.d < 1:
        raise InvalidProblemSpecError("The spatial dimension must be positive.")
    if int(spec.p) != spec.p or spec.p < 1:
        raise InvalidProblemSpecError("The nonlinearity power p must be a positive integer.")
    if not abs(spec.delta) < 1:
        raise InvalidProblemSpecError("The coupling must satisfy |delta| < 1.")
    if not spec.r > 1:
        raise InvalidProblemSpecError("The target order r must exceed 1.")
    if not 0 < spec.weight_beta_prime < spec.weight_beta:
        raise InvalidProblemSpecError("The weights must satisfy 0 < beta' < beta.")
    if not spec.epsilon > 0:
        raise InvalidProblemSpecError("The excision threshold must be positive.")
    if spec.weight_beta_time is not None and spec.weight_beta_time < 0:
        raise InvalidProblemSpecError("The time weight must be non-negative.")


def validate_mode_data(mode_data: ModeData, modes: ModeSet, spec: ProblemSpec) -> None:
    """Checks amplitudes and phases against the mode set and the coupling.

    Generic amplitudes must lie in (0, 1]; non-generic amplitudes must stay below 10 |delta|.

    Raises
    ------
    InvalidModeDataError
    """
    a = np.asarray(mode_data.a, dtype=float)
    theta = np.asarray(mode_data.theta, dtype=float)
    if a.shape != (modes.B,) or theta.shape != (modes.B,):
        raise InvalidModeDataError("Amplitudes and phases need one entry per mode.")
    if np.any(a <= 0) or np.any(a > 1):
        raise InvalidModeDataError("Amplitudes must lie in (0, 1].")
    if np.any(theta < 0) or np.any(theta >= 2 * np.pi):
        raise InvalidModeDataError("Phases must lie in [0, 2 pi).")
    generic = set(modes.generic_indices)
    for index, amplitude in enumerate(a):
        if index not in generic and amplitude > 10 * abs(spec.delta):
            raise InvalidModeDataError(
                f"Non-generic mode {modes.modes[index]} has amplitude {amplitude}, "
                f"above 10 |delta|."
            )
