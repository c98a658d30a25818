"""Implements the loading, validation and hashing of run configuration files."""
import hashlib
import logging
import pathlib
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

import numpy as np
import toml

from qpnls import lattice, newton
from qpnls.data_structures import (
    CauchySettings,
    LinflowSettings,
    ModeData,
    ModeSet,
    ProblemSpec,
    ResonanceSettings,
    RunConfig,
    TruncationSpec,
)
from qpnls.helpers import (
    InvalidConfigurationError,
    UnknownConfigKeyError,
    validate_mode_data,
    validate_mode_set,
    validate_problem_spec,
    validate_truncation,
)


logger = logging.getLogger(__name__)


OUTPUT_FORMATS = ("json", "csv", "bin")

SCHEMA = {
    "problem": {"d", "p", "delta", "r", "beta", "beta_prime", "epsilon", "beta_time"},
    "modes": {"modes", "generic", "amplitudes", "phases", "tilde_j"},
    "truncation": {"N", "J_x", "K", "aux_order"},
    "run": {"seed", "output_dir", "formats", "threads", "check_excision", "check_remainder"},
    "resonance": {"samples", "eps_grid"},
    "linflow": {"band_radius", "h", "gram_floor", "horizon", "dt", "flow_samples"},
    "cauchy": {
        "radius_factor",
        "tail_amplitude",
        "horizon",
        "samples",
        "envelope_constant",
        "match_tolerance",
        "aux_order",
        "halving_tolerance",
    },
}
REQUIRED_SECTIONS = ("problem", "modes", "truncation")


##########################################################################################


def config_hash(path_to_file: pathlib.Path, hash_constructor: Callable = hashlib.sha256) -> str:
    """Calculates the digest of a configuration file.

    Parameters
    ----------
    path_to_file: pathlib.Path
        The configuration file.
    hash_constructor:
        A hashlib hash constructor; SHA-256 by default.

    Returns
    -------
    str
        The hexadecimal digest of the file bytes.
    """
    file_hash = hash_constructor()
    optimal_chunk_size = file_hash.block_size * 128
    with pathlib.Path(path_to_file).open(mode="rb") as file:
        for chunk in iter(lambda: file.read(optimal_chunk_size), b""):
            file_hash.update(chunk)
    return file_hash.hexdigest()


def check_keys(raw: Mapping[str, Any]) -> None:
    """Rejects unknown sections and keys and missing required sections.

    Raises
    ------
    UnknownConfigKeyError
    InvalidConfigurationError
    """
    for section, values in raw.items():
        if section not in SCHEMA:
            raise UnknownConfigKeyError(f"Unknown configuration section [{section}].")
        if not isinstance(values, dict):
            raise InvalidConfigurationError(f"[{section}] must be a table.")
        unknown = sorted(set(values) - SCHEMA[section])
        if unknown:
            raise UnknownConfigKeyError(
                f"Unknown key(s) {', '.join(unknown)} in section [{section}]."
            )
    for section in REQUIRED_SECTIONS:
        if section not in raw:
            raise InvalidConfigurationError(f"The configuration lacks the [{section}] section.")


def _required(section: Mapping[str, Any], key: str, name: str) -> Any:
    if key not in section:
        raise InvalidConfigurationError(f"The [{name}] section lacks the required key {key}.")
    return section[key]


def _optional_float(value: Any) -> Optional[float]:
    return None if value is None else float(value)


def parse_problem(section: Mapping[str, Any]) -> ProblemSpec:
    beta = float(_required(section, "beta", "problem"))
    return ProblemSpec(
        d=int(_required(section, "d", "problem")),
        p=int(_required(section, "p", "problem")),
        delta=float(_required(section, "delta", "problem")),
        r=float(_required(section, "r", "problem")),
        weight_beta=beta,
        weight_beta_prime=float(section.get("beta_prime", beta / 2)),
        epsilon=float(section.get("epsilon", 1e-3)),
        weight_beta_time=_optional_float(section.get("beta_time")),
    )


def parse_modes(section: Mapping[str, Any]) -> Tuple[ModeSet, ModeData]:
    """Reads the mode list, the generic positions, the amplitudes and the phases."""
    modes = tuple(tuple(int(c) for c in mode) for mode in _required(section, "modes", "modes"))
    generic = tuple(int(k) for k in section.get("generic", range(len(modes))))
    tilde_j = section.get("tilde_j")
    mode_set = ModeSet(
        modes=modes,
        generic_indices=generic,
        tilde_j=None if tilde_j is None else tuple(int(c) for c in tilde_j),
    )
    amplitudes = np.asarray(_required(section, "amplitudes", "modes"), dtype=float)
    phases = np.asarray(section.get("phases", [0.0] * len(modes)), dtype=float)
    return mode_set, ModeData(a=amplitudes, theta=phases)


def parse_truncation(
    section: Mapping[str, Any],
    modes: ModeSet,
    spec: ProblemSpec,
) -> TruncationSpec:
    """Reads N and fills J_x = J + p N max ||j_k|| and K = r + 2 when they are omitted."""
    N = int(_required(section, "N", "truncation"))
    J_x = section.get("J_x")
    K = section.get("K")
    aux_order = section.get("aux_order")
    return TruncationSpec(
        N=N,
        J_x=int(J_x) if J_x is not None else lattice.default_spatial_radius(modes, N, spec.p),
        K=int(K) if K is not None else newton.default_sweeps(spec),
        aux_order=None if aux_order is None else int(aux_order),
    )


def parse_resonance(section: Mapping[str, Any]) -> ResonanceSettings:
    return ResonanceSettings(
        samples=int(section.get("samples", 10_000)),
        eps_grid=tuple(float(eps) for eps in section.get("eps_grid", (1e-1, 1e-2, 1e-3))),
    )


def parse_linflow(section: Mapping[str, Any]) -> LinflowSettings:
    return LinflowSettings(
        band_radius=int(section.get("band_radius", 2)),
        h=float(section.get("h", 1e-3)),
        gram_floor=float(section.get("gram_floor", 0.5)),
        horizon=_optional_float(section.get("horizon")),
        dt=_optional_float(section.get("dt")),
        flow_samples=int(section.get("flow_samples", 20)),
    )


def parse_cauchy(section: Mapping[str, Any]) -> CauchySettings:
    """Reads the matching settings; a non-positive halving_tolerance switches step halving off."""
    aux_order = section.get("aux_order", 2)
    halving_tolerance = float(section.get("halving_tolerance", 1e-9))
    return CauchySettings(
        radius_factor=float(section.get("radius_factor", 2.0)),
        tail_amplitude=float(section.get("tail_amplitude", 1.0)),
        horizon=_optional_float(section.get("horizon")),
        samples=int(section.get("samples", 11)),
        envelope_constant=float(section.get("envelope_constant", 10.0)),
        match_tolerance=float(section.get("match_tolerance", 1e-10)),
        aux_order=None if aux_order is None else int(aux_order),
        halving_tolerance=halving_tolerance if halving_tolerance > 0 else None,
    )


def _flag(run: Mapping[str, Any], key: str) -> bool:
    value = run.get(key, True)
    if not isinstance(value, bool):
        raise InvalidConfigurationError(f"The [run] key {key} must be true or false.")
    return value


def check_consistency(spec: ProblemSpec, trunc: TruncationSpec) -> None:
    """Rejects truncations too coarse for the target order: N must exceed r.

    Raises
    ------
    InvalidConfigurationError
    """
    if trunc.N <= spec.r:
        raise InvalidConfigurationError(
            f"N = {trunc.N} is too small for the target order r = {spec.r}."
        )


##########################################################################################


def build_run_config(
    raw: Mapping[str, Any],
    digest: str,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """Turns a parsed configuration into a validated RunConfig.

    Parameters
    ----------
    raw: Mapping[str, Any]
        The parsed TOML document.
    digest: str
        The configuration hash stamped on every output.
    overrides: Optional[Mapping[str, Any]]
        Values of the [run] section given on the command line; None values are ignored.

    Returns
    -------
    RunConfig

    Raises
    ------
    UnknownConfigKeyError
    InvalidConfigurationError
        Or one of its subclasses, when a component breaks its invariants.
    """
    check_keys(raw)
    spec = parse_problem(raw["problem"])
    modes, mode_data = parse_modes(raw["modes"])
    trunc = parse_truncation(raw["truncation"], modes, spec)
    validate_problem_spec(spec)
    validate_mode_set(modes)
    if modes.d != spec.d:
        raise InvalidConfigurationError(
            f"The modes live in dimension {modes.d}, the problem in dimension {spec.d}."
        )
    validate_truncation(trunc, modes)
    validate_mode_data(mode_data, modes, spec)
    check_consistency(spec, trunc)

    run: Dict[str, Any] = dict(raw.get("run", {}))
    run.update({key: value for key, value in (overrides or {}).items() if value is not None})
    formats = run.get("formats", ["json"])
    formats = (formats,) if isinstance(formats, str) else tuple(formats)
    unsupported = sorted(set(formats) - set(OUTPUT_FORMATS))
    if unsupported:
        raise InvalidConfigurationError(f"Unsupported output format(s): {', '.join(unsupported)}.")
    threads = run.get("threads")
    if threads is not None and int(threads) < 1:
        raise InvalidConfigurationError("The thread count must be positive.")
    return RunConfig(
        problem=spec,
        modes=modes,
        mode_data=mode_data,
        trunc=trunc,
        seed=int(run.get("seed", 0)),
        output_dir=pathlib.Path(run.get("output_dir", "qpnls-output")),
        formats=formats,
        threads=None if threads is None else int(threads),
        resonance=parse_resonance(raw.get("resonance", {})),
        linflow=parse_linflow(raw.get("linflow", {})),
        cauchy=parse_cauchy(raw.get("cauchy", {})),
        config_hash=digest,
        check_excision=_flag(run, "check_excision"),
        check_remainder=_flag(run, "check_remainder"),
    )


def load_run_config(
    path_to_file: pathlib.Path,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """Reads, validates and hashes a TOML configuration file.

    Examples
    --------
    >>> config = load_run_config(pathlib.Path("plane_wave.toml"), {"seed": 7})
    """
    path_to_file = pathlib.Path(path_to_file)
    try:
        raw = toml.load(str(path_to_file))
    except toml.TomlDecodeError as error:
        raise InvalidConfigurationError(f"{path_to_file} is not valid TOML: {error}") from error
    config = build_run_config(raw, config_hash(path_to_file), overrides)
    logger.info("Loaded %s (sha256 %s)", path_to_file, config.config_hash)
    return config
