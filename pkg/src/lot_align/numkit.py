"""Dense numeric kernels shared by the transport solvers.

Everything here works on float64 numpy arrays. Randomness goes through
:func:`seeded_rng`, which is numpy's PCG64 bit generator wrapped in a
``numpy.random.Generator``; PCG64 streams are identical across platforms for
a given seed.
"""

from __future__ import annotations

import numpy as np

RNG_ALGORITHM = "PCG64"

_U64 = 2**64


class LabelError(ValueError):
    pass


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def pairwise_sq_dist(X) -> np.ndarray:
    """Squared Euclidean distances between the rows of ``X``.

    Uses the Gram expansion, clamps cancellation negatives to zero,
    symmetrizes and zeroes the diagonal.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise ValueError("empty input")
    sq = np.einsum("ij,ij->i", X, X)
    D = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    D = 0.5 * (D + D.T)
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def logsumexp(v, axis: int | None = None):
    """``log(sum(exp(v)))`` with max-shift.

    Entries equal to ``-inf`` are skipped; a slice that is entirely ``-inf``
    gives ``-inf``.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("logsumexp of an empty array")
    m = np.max(v, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def uniform_histogram(n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("histogram needs at least one bin")
    return np.full(n, 1.0 / n)


def check_histogram(h, name: str = "histogram", tol: float = 1e-12) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 1 or h.size == 0:
        raise ValueError(f"{name} must be a nonempty 1-D array")
    if np.any(h < 0) or not np.all(np.isfinite(h)):
        raise ValueError(f"{name} has negative or non-finite weights")
    if abs(h.sum() - 1.0) > tol:
        raise ValueError(f"{name} sums to {h.sum()!r}, expected 1")
    return h


def check_labels(labels, num_classes: int | None = None) -> tuple[np.ndarray, int]:
    """Validate a zero-based label vector; returns ``(labels, num_classes)``."""
    y = np.asarray(labels)
    if y.ndim != 1:
        raise LabelError("labels must be 1-D")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise LabelError("labels must be integers")
    y = y.astype(np.int64)
    if num_classes is None:
        num_classes = int(y.max()) + 1 if y.size else 1
    if num_classes < 1:
        raise LabelError("num_classes must be >= 1")
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise LabelError(f"labels must lie in [0, {num_classes})")
    return y, num_classes


def seeded_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) % _U64))


def derive_seed(base: int, index: int) -> int:
    """Per-worker seed: ``base + index * large odd constant`` mod 2**64."""
    return (int(base) + int(index) * 0x9E3779B97F4A7C15) % _U64
