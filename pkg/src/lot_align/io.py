"""Plain-text matrix and label files.

Matrix format: first line ``"R C"``, then ``R`` lines of ``C`` space-separated
floats written with ``repr`` (shortest round-trip decimal). Label files hold
one integer per line.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np


def format_matrix(M) -> str:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 1:
        M = M[None, :]
    if M.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {M.shape}")
    lines = [f"{M.shape[0]} {M.shape[1]}"]
    lines.extend(" ".join(repr(float(x)) for x in row) for row in M)
    return "\n".join(lines) + "\n"


def parse_matrix(text: str) -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty matrix file")
    rows, cols = _parse_header(lines[0])
    body = lines[1 : rows + 1]
    if len(body) != rows:
        raise ValueError(f"expected {rows} rows, found {len(body)}")
    out = np.empty((rows, cols))
    for i, ln in enumerate(body):
        vals = ln.split()
        if len(vals) != cols:
            raise ValueError(f"row {i} has {len(vals)} values, expected {cols}")
        out[i] = [float(v) for v in vals]
    return out


def _parse_header(line: str) -> tuple[int, int]:
    parts = line.split()
    if len(parts) != 2:
        raise ValueError(f"bad matrix header {line!r}")
    rows, cols = int(parts[0]), int(parts[1])
    if rows < 0 or cols < 0:
        raise ValueError(f"bad matrix header {line!r}")
    return rows, cols


def read_matrix_blocks(text: str) -> list[np.ndarray]:
    """Parse consecutive matrices concatenated in one string."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    out = []
    pos = 0
    while pos < len(lines):
        rows, _ = _parse_header(lines[pos])
        out.append(parse_matrix("\n".join(lines[pos : pos + rows + 1])))
        pos += rows + 1
    return out


def write_matrix(path, M) -> None:
    Path(path).write_text(format_matrix(M), encoding="utf-8")


def read_matrix(path) -> np.ndarray:
    return parse_matrix(Path(path).read_text(encoding="utf-8"))


def write_labels(path, y) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in y), encoding="utf-8")


def read_labels(path) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8")
    return np.array([int(ln) for ln in text.split()], dtype=np.int64)


def digest(M) -> str:
    """sha256 of the matrix text serialization."""
    return hashlib.sha256(format_matrix(M).encode("utf-8")).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(canonical_json(obj), encoding="utf-8")
