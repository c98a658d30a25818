import json
import pathlib
from typing import NamedTuple

import numpy as np
import pytest

from qpnls import field, linop, lattice, serialization
from qpnls.data_structures import IterationRecord, TruncationSpec
from qpnls.helpers import DimensionMismatchError


DIGEST = "ab" * 32


@pytest.fixture
def coefficient_field():
    coords = np.array([[-1, 0, 1], [0, -1, -2], [2, 1, 3]])
    values = np.array([0.5, 0.4 - 0.1j, 1e-17j])
    return field.make_field(coords, values, 2, None)


class TestMakeJsonSafe:
    def test_nested_values(self):
        # Setup
        class Pair(NamedTuple):
            left: complex
            right: np.ndarray

        obj = {
            1: Pair(left=1 - 2j, right=np.array([1, 2])),
            "flags": (np.bool_(True), np.float64(0.5), np.int64(3)),
            "sites": frozenset({(1, 0), (0, 1)}),
            "path": pathlib.Path("out") / "u.json",
        }
        # Exercise
        safe = serialization.make_json_safe(obj)
        # Verify
        assert safe == {
            "1": {"left": {"re": 1.0, "im": -2.0}, "right": [1, 2]},
            "flags": [True, 0.5, 3],
            "sites": [[0, 1], [1, 0]],
            "path": str(pathlib.Path("out") / "u.json"),
        }
        assert json.loads(json.dumps(safe)) == safe
        # Cleanup - none


class TestBinary:
    def test_dump_keeps_sites_values_and_hash(self, tmp_path, coefficient_field):
        # Setup
        path_to_file = tmp_path / "nested" / "u_hat.bin"
        # Exercise
        serialization.write_binary(coefficient_field, path_to_file, DIGEST)
        coords, values, B, digest = serialization.read_binary(path_to_file)
        # Verify
        assert B == 2
        assert digest == DIGEST
        assert np.array_equal(coords, coefficient_field.coords)
        assert np.array_equal(values, coefficient_field.values)
        assert path_to_file.read_bytes().startswith(b"QPNLS1")
        assert path_to_file.stat().st_size == 6 + 16 + 3 * (3 * 4 + 16) + 64
        # Cleanup - none

    def test_digest_length(self, tmp_path, coefficient_field):
        # Setup - none
        # Exercise
        # Verify
        with pytest.raises(DimensionMismatchError) as digest_error:
            serialization.write_binary(coefficient_field, tmp_path / "u_hat.bin", "abc")
        assert str(digest_error.value) == "The trailer needs a 64-character digest."
        # Cleanup - none

    def test_wrong_magic(self, tmp_path):
        # Setup
        path_to_file = tmp_path / "u_hat.bin"
        path_to_file.write_bytes(b"NOTQPNLS")
        # Exercise
        # Verify
        with pytest.raises(DimensionMismatchError) as magic_error:
            serialization.read_binary(path_to_file)
        assert str(magic_error.value) == f"{path_to_file} does not start with b'QPNLS1'."
        # Cleanup - none

    def test_truncated_dump(self, tmp_path, coefficient_field):
        # Setup
        path_to_file = tmp_path / "u_hat.bin"
        serialization.write_binary(coefficient_field, path_to_file, DIGEST)
        path_to_file.write_bytes(path_to_file.read_bytes()[:-10])
        # Exercise
        # Verify
        with pytest.raises(DimensionMismatchError) as truncation_error:
            serialization.read_binary(path_to_file)
        assert str(truncation_error.value) == (
            f"{path_to_file} holds a truncated coefficient dump."
        )
        # Cleanup - none


class TestTextFormats:
    def test_csv_starts_with_the_hash(self, tmp_path):
        # Setup
        path_to_file = tmp_path / "table.csv"
        rows = [[1, 0.5, 2j], [2, 0.25, 1.0]]
        # Exercise
        serialization.write_csv(["k", "value", "z"], rows, path_to_file, DIGEST)
        digest, header, read_rows = serialization.read_csv(path_to_file)
        # Verify
        assert path_to_file.read_text().splitlines()[0] == f"# config_hash={DIGEST}"
        assert digest == DIGEST
        assert header == ["k", "value", "z"]
        assert read_rows[1] == ["2", "0.25", "1.0"]
        # Cleanup - none

    def test_json_report_carries_the_hash(self, tmp_path):
        # Setup
        path_to_file = tmp_path / "report.json"
        # Exercise
        payload = {"omega": np.array([4.0009]), "passed": True}
        serialization.write_json(payload, path_to_file, DIGEST)
        # Verify
        with path_to_file.open() as infile:
            assert json.load(infile) == {
                "omega": [4.0009], "passed": True, "config_hash": DIGEST
            }
        # Cleanup - none

    def test_field_in_every_format(self, tmp_path, coefficient_field):
        # Setup - none
        # Exercise
        written = serialization.write_field(
            coefficient_field, tmp_path, "u_hat", ("json", "csv", "bin"), DIGEST
        )
        # Verify
        assert written == [tmp_path / "u_hat.bin", tmp_path / "u_hat.json", tmp_path / "u_hat.csv"]
        with (tmp_path / "u_hat.json").open() as infile:
            payload = json.load(infile)
        assert payload["count"] == 3
        assert payload["B"] == 2
        assert payload["d"] == 1
        assert payload["config_hash"] == DIGEST
        _, header, rows = serialization.read_csv(tmp_path / "u_hat.csv")
        assert header == ["n0", "n1", "j0", "re", "im"]
        assert len(rows) == 3
        # Cleanup - none

    def test_iterations_are_json_lines(self, tmp_path):
        # Setup
        history = [
            IterationRecord(k=0, residual_beta=1e-3, residual_beta_prime=5e-4, omega=(4.0,)),
            IterationRecord(k=1, residual_beta=1e-9, residual_beta_prime=4e-10, omega=(4.0009,)),
        ]
        path_to_file = tmp_path / "iterations.jsonl"
        # Exercise
        serialization.write_iterations(history, path_to_file, DIGEST)
        # Verify
        records = [json.loads(line) for line in path_to_file.read_text().splitlines()]
        assert [record["k"] for record in records] == [0, 1]
        assert records[1]["omega"] == [4.0009]
        assert all(record["config_hash"] == DIGEST for record in records)
        # Cleanup - none

    def test_matrix_lines(self, tmp_path, two_modes, two_mode_data, two_mode_spec):
        # Setup
        trunc = TruncationSpec(N=1, J_x=2, K=1)
        u = field.ansatz(two_modes, two_mode_data, trunc)
        index = lattice.build_site_index(trunc, two_modes)
        op = linop.assemble(u, field.conjugate_field(u), np.array([1.0, 4.0]), two_mode_spec, index)
        path_to_file = tmp_path / "matrix.txt"
        # Exercise
        serialization.write_matrix(op, path_to_file, DIGEST)
        # Verify
        lines = path_to_file.read_text().splitlines()
        assert lines[0] == f"# config_hash={DIGEST}"
        assert len(lines) == op.matrix.nnz + 1
        row, col, real, imag = lines[1].split()
        assert op.matrix.toarray()[int(row), int(col)] == complex(float(real), float(imag))
        # Cleanup - none
