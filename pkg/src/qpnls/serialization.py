"""Implements the writers and readers of the files emitted by the command line interface.

Binary coefficient dumps are little-endian: the magic b"QPNLS1", u32 B, u32 d, u64 count,
then per entry B x i32 n, d x i32 j, f64 re, f64 im, followed by the configuration hash as a
64-byte hexadecimal trailer.
"""
import csv
import json
import pathlib
from typing import Any, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from qpnls import linop
from qpnls.data_structures import FourierField, IterationRecord, LinearizedOperator
from qpnls.helpers import DimensionMismatchError


MAGIC = b"QPNLS1"
HEADER = np.dtype([("B", "<u4"), ("d", "<u4"), ("count", "<u8")])
HASH_LENGTH = 64


def entry_dtype(B: int, d: int) -> np.dtype:
    return np.dtype([("n", "<i4", (B,)), ("j", "<i4", (d,)), ("re", "<f8"), ("im", "<f8")])


def make_json_safe(obj: Any) -> Any:
    """Recursively converts NamedTuples, numpy values, complex numbers and paths to JSON types."""
    if hasattr(obj, "_asdict"):
        obj = obj._asdict()
    if isinstance(obj, dict):
        return {str(key): make_json_safe(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [make_json_safe(value) for value in obj]
    if isinstance(obj, (set, frozenset)):
        return [make_json_safe(value) for value in sorted(obj)]
    if isinstance(obj, np.ndarray):
        return make_json_safe(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    if isinstance(obj, pathlib.Path):
        return str(obj)
    return obj


def _prepare(path_to_file: pathlib.Path) -> pathlib.Path:
    path_to_file = pathlib.Path(path_to_file)
    if not path_to_file.parent.exists():
        path_to_file.parent.mkdir(parents=True, exist_ok=True)
    return path_to_file


##########################################################################################


def write_binary(field: FourierField, path_to_file: pathlib.Path, digest: str) -> None:
    """Writes a coefficient dump with the configuration hash as trailer."""
    if len(digest) != HASH_LENGTH:
        raise DimensionMismatchError(f"The trailer needs a {HASH_LENGTH}-character digest.")
    B = field.time_dim
    d = field.coords.shape[1] - B
    header = np.zeros(1, dtype=HEADER)
    header[0] = (B, d, field.values.size)
    entries = np.zeros(field.values.size, dtype=entry_dtype(B, d))
    entries["n"] = field.coords[:, :B]
    entries["j"] = field.coords[:, B:]
    entries["re"] = field.values.real
    entries["im"] = field.values.imag
    with _prepare(path_to_file).open(mode="wb") as outfile:
        outfile.write(MAGIC)
        outfile.write(header.tobytes())
        outfile.write(entries.tobytes())
        outfile.write(digest.encode("ascii"))


def read_binary(path_to_file: pathlib.Path) -> Tuple[np.ndarray, np.ndarray, int, str]:
    """Reads a coefficient dump.

    Returns
    -------
    Tuple[np.ndarray, np.ndarray, int, str]
        The (count, B + d) site array, the complex values, B and the configuration hash.

    Raises
    ------
    DimensionMismatchError
        If the file is not a coefficient dump or is truncated.
    """
    payload = pathlib.Path(path_to_file).read_bytes()
    if not payload.startswith(MAGIC):
        raise DimensionMismatchError(f"{path_to_file} does not start with {MAGIC!r}.")
    offset = len(MAGIC)
    header = np.frombuffer(payload, dtype=HEADER, count=1, offset=offset)[0]
    B, d, count = int(header["B"]), int(header["d"]), int(header["count"])
    offset += HEADER.itemsize
    dtype = entry_dtype(B, d)
    if len(payload) != offset + count * dtype.itemsize + HASH_LENGTH:
        raise DimensionMismatchError(f"{path_to_file} holds a truncated coefficient dump.")
    entries = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
    coords = np.concatenate(
        [entries["n"].reshape(count, B), entries["j"].reshape(count, d)], axis=1
    )
    values = entries["re"] + 1j * entries["im"]
    digest = payload[offset + count * dtype.itemsize:].decode("ascii")
    return coords.astype(np.int64), values, B, digest


def field_payload(field: FourierField, digest: str) -> dict:
    """The JSON mirror of a coefficient dump."""
    B = field.time_dim
    return {
        "config_hash": digest,
        "B": B,
        "d": int(field.coords.shape[1] - B),
        "count": int(field.values.size),
        "entries": [
            {
                "n": [int(c) for c in site[:B]],
                "j": [int(c) for c in site[B:]],
                "re": float(value.real),
                "im": float(value.imag),
            }
            for site, value in zip(field.coords, field.values)
        ],
    }


def write_json(payload: Mapping[str, Any], path_to_file: pathlib.Path, digest: str) -> None:
    """Writes a JSON report stamped with the configuration hash."""
    report = dict(make_json_safe(payload))
    report["config_hash"] = digest
    with _prepare(path_to_file).open(mode="w", encoding="utf-8") as outfile:
        json.dump(report, outfile, indent=2)


def write_csv(
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
    path_to_file: pathlib.Path,
    digest: str,
) -> None:
    """Writes a CSV table whose first line is a comment carrying the configuration hash."""
    with _prepare(path_to_file).open(mode="w", newline="", encoding="utf-8") as outfile:
        outfile.write(f"# config_hash={digest}\n")
        writer = csv.writer(outfile)
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([make_json_safe(value) for value in row])


def read_csv(path_to_file: pathlib.Path) -> Tuple[str, List[str], List[List[str]]]:
    """Reads a table written by write_csv as (hash, header, rows)."""
    with pathlib.Path(path_to_file).open(mode="r", newline="", encoding="utf-8") as infile:
        digest = infile.readline().strip().split("=", 1)[1]
        rows = list(csv.reader(infile))
    return digest, rows[0], rows[1:]


def write_field(
    field: FourierField,
    directory: pathlib.Path,
    stem: str,
    formats: Sequence[str],
    digest: str,
) -> List[pathlib.Path]:
    """Writes a coefficient field in every requested format and returns the written paths."""
    written = []
    directory = pathlib.Path(directory)
    if "bin" in formats:
        write_binary(field, directory / f"{stem}.bin", digest)
        written.append(directory / f"{stem}.bin")
    if "json" in formats:
        write_json(field_payload(field, digest), directory / f"{stem}.json", digest)
        written.append(directory / f"{stem}.json")
    if "csv" in formats:
        B = field.time_dim
        d = field.coords.shape[1] - B
        header = [f"n{k}" for k in range(B)] + [f"j{k}" for k in range(d)] + ["re", "im"]
        rows = (
            [int(c) for c in site] + [float(value.real), float(value.imag)]
            for site, value in zip(field.coords, field.values)
        )
        write_csv(header, rows, directory / f"{stem}.csv", digest)
        written.append(directory / f"{stem}.csv")
    return written


def write_iterations(
    history: Sequence[IterationRecord],
    path_to_file: pathlib.Path,
    digest: Optional[str] = None,
) -> None:
    """Writes one JSON record per Newton sweep to a JSON-lines file."""
    with _prepare(path_to_file).open(mode="w", encoding="utf-8") as outfile:
        for record in history:
            entry = make_json_safe(record)
            if digest is not None:
                entry["config_hash"] = digest
            outfile.write(json.dumps(entry) + "\n")


def write_matrix(op: LinearizedOperator, path_to_file: pathlib.Path, digest: str) -> None:
    """Writes the nonzero entries of an operator as 'row col re im' lines."""
    with _prepare(path_to_file).open(mode="w", encoding="utf-8") as outfile:
        outfile.write(f"# config_hash={digest}\n")
        for row, col, real, imag in linop.coordinate_rows(op):
            outfile.write(f"{row} {col} {real!r} {imag!r}\n")
