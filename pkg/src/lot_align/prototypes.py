"""Soft prototypes from class-restricted transport plans, and the cosine loss.

A plan row, normalized, is a distribution over candidate matches in the
other modality. Its expectation over the other modality's embeddings is the
sample's soft prototype, which the predictor heads are trained to point at.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .transport import TransportPlan

MODALITIES = ("fundus", "oct")


class DegenerateDirectionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PrototypeSet:
    protos: np.ndarray
    modality: str

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}")
        P = np.asarray(self.protos, dtype=np.float64)
        if P.ndim != 2 or not np.all(np.isfinite(P)):
            raise ValueError("prototypes must be a finite 2-D array")
        object.__setattr__(self, "protos", P)

    def __len__(self) -> int:
        return self.protos.shape[0]


def match_distribution(t_c) -> np.ndarray:
    """Row-normalize a plan into per-sample match probabilities."""
    T = t_c.matrix if isinstance(t_c, TransportPlan) else np.asarray(t_c, dtype=np.float64)
    sums = T.sum(axis=1)
    empty = np.flatnonzero(sums <= 0)
    if empty.size:
        raise ValueError(f"unmatched sample: row {int(empty[0])} carries no mass")
    return T / sums[:, None]


def soft_prototypes(p, e_other, modality: str) -> PrototypeSet:
    """``protos[i] = sum_j p[i, j] * e_other[j]``.

    ``modality`` names the space the prototypes live in, i.e. that of
    ``e_other``.
    """
    p = np.asarray(p, dtype=np.float64)
    e_other = np.asarray(e_other, dtype=np.float64)
    if p.ndim != 2 or e_other.ndim != 2 or p.shape[1] != e_other.shape[0]:
        raise ValueError(f"shape mismatch: p {p.shape} vs embeddings {e_other.shape}")
    return PrototypeSet(p @ e_other, modality)


def sample_match(p, i: int, rng: np.random.Generator) -> int:
    p = np.asarray(p, dtype=np.float64)
    if not 0 <= i < p.shape[0]:
        raise IndexError(f"row {i} out of range for {p.shape[0]} samples")
    row = p[i]
    # inverse-CDF draw: one uniform per call keeps the stream position predictable
    u = rng.random()
    j = int(np.searchsorted(np.cumsum(row), u * row.sum(), side="right"))
    j = min(j, row.size - 1)
    while row[j] == 0:  # guards the cumsum plateau at the right end
        j -= 1
    return j


def sampled_prototypes(p, e_other, rng, modality: str) -> PrototypeSet:
    """One stochastic match per sample (the non-expectation training mode)."""
    p = np.asarray(p, dtype=np.float64)
    idx = [sample_match(p, i, rng) for i in range(p.shape[0])]
    return PrototypeSet(np.asarray(e_other, dtype=np.float64)[idx], modality)


def cosine_alignment_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean cosine distance between rows of ``pred`` and their targets.

    Returns ``(loss, d loss / d pred)``; targets are constants.
    """
    X = np.asarray(pred, dtype=np.float64)
    Y = target.protos if isinstance(target, PrototypeSet) else np.asarray(target, dtype=np.float64)
    if X.shape != Y.shape or X.ndim != 2:
        raise ValueError(f"shape mismatch: pred {X.shape} vs target {Y.shape}")
    n = X.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(X)
    nx = np.linalg.norm(X, axis=1)
    ny = np.linalg.norm(Y, axis=1)
    for name, norms in (("pred", nx), ("target", ny)):
        bad = np.flatnonzero(norms == 0)
        if bad.size:
            raise DegenerateDirectionError(f"degenerate direction: {name} row {int(bad[0])} has zero norm")
    cos = np.einsum("ij,ij->i", X, Y) / (nx * ny)
    loss = 1.0 - cos.mean()
    grad = -(Y / (nx * ny)[:, None] - (cos / nx**2)[:, None] * X) / n
    return float(loss), grad
