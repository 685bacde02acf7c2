from __future__ import annotations

import numpy as np

from ..numkit import seeded_rng


def kfold_split(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Seeded permutation cut into ``k`` folds; the first ``n % k`` get one extra."""
    if k < 1 or k > n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    perm = seeded_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def train_test(folds: list[np.ndarray], i: int) -> tuple[np.ndarray, np.ndarray]:
    test = folds[i]
    train = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
    return train, test
