from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..fusion.model import Availability
from ..numkit import seeded_rng
from .synth import Dataset

MODALITIES = ("fundus", "oct")


@dataclass(frozen=True, eq=False)
class MissingMask:
    absent: np.ndarray  # True where `modality` is dropped
    modality: str
    ratio: float
    seed: int

    @property
    def count(self) -> int:
        return int(self.absent.sum())


def missing_count(ratio: float, n: int) -> int:
    """``round(ratio * n)`` with halves rounded up."""
    return int(np.floor(ratio * n + 0.5))


def apply_missing(dataset: Dataset, modality: str, ratio: float, seed: int) -> tuple[Dataset, MissingMask]:
    """Drop ``modality`` from exactly ``round(ratio * N)`` samples.

    Samples are drawn uniformly (by ``seed``) among those that still have the
    other modality; asking for more than that raises.
    """
    if modality not in MODALITIES:
        raise ValueError(f"modality must be one of {MODALITIES}, got {modality!r}")
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must lie in [0, 1], got {ratio}")
    n = len(dataset)
    k = missing_count(ratio, n)
    av = dataset.availability
    other = av.oct if modality == "fundus" else av.fundus
    candidates = np.flatnonzero(other)
    if k > candidates.size:
        raise ValueError(
            f"dropping {modality} from {k} samples would leave a sample with no modality "
            f"(only {candidates.size} have the other one)"
        )
    chosen = seeded_rng(seed).choice(candidates, size=k, replace=False)
    absent = np.zeros(n, dtype=bool)
    absent[chosen] = True
    if modality == "fundus":
        new = Availability(av.fundus & ~absent, av.oct)
    else:
        new = Availability(av.fundus, av.oct & ~absent)
    return dataset.with_availability(new), MissingMask(absent, modality, float(ratio), int(seed))
