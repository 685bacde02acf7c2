"""Synthetic paired two-modality data.

Both modalities are linear views of a shared class-structured latent. The
fundus view gets a per-sample random affine "style" (scale and offset); the
OCT view only keeps a class-specific sparse subset of its dimensions and adds
isotropic noise, so its signal is localized and noisy.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..numkit import seeded_rng
from ..fusion.model import Availability


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 2
    per_class: int = 20
    latent_dim: int = 4
    fundus_dim: int = 16
    oct_dim: int = 16
    style_jitter: float = 0.5
    oct_noise: float = 0.5
    lesion_sparsity: float = 0.5
    separation: float = 2.0
    seed: int = 0

    def __post_init__(self):
        counts = (self.num_classes, self.per_class, self.latent_dim, self.fundus_dim, self.oct_dim)
        if min(counts) < 1:
            raise ValueError("all counts must be >= 1")
        if min(self.style_jitter, self.oct_noise, self.separation) < 0:
            raise ValueError("scales must be >= 0")
        if not 0 < self.lesion_sparsity <= 1:
            raise ValueError("lesion_sparsity must lie in (0, 1]")

    @classmethod
    def easy(cls, **overrides) -> SyntheticSpec:
        base = dict(style_jitter=0.1, oct_noise=0.1, separation=5.0)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Dataset:
    x_f: np.ndarray
    x_o: np.ndarray
    y: np.ndarray
    num_classes: int
    availability: Availability = field(default=None)

    def __post_init__(self):
        n = self.y.size
        if self.x_f.shape[0] != n or self.x_o.shape[0] != n:
            raise ValueError("paired rows must share labels")
        if self.availability is None:
            object.__setattr__(self, "availability", Availability.complete_batch(n))

    def __len__(self) -> int:
        return self.y.size

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x_f[idx], self.x_o[idx], self.y[idx], self.num_classes,
                       self.availability.subset(idx))

    def with_availability(self, availability: Availability) -> Dataset:
        return Dataset(self.x_f, self.x_o, self.y, self.num_classes, availability)


def synth_dataset(spec: SyntheticSpec) -> Dataset:
    rng = seeded_rng(spec.seed)
    k, C = spec.latent_dim, spec.num_classes
    A_f = rng.normal(size=(k, spec.fundus_dim)) / np.sqrt(k)
    A_o = rng.normal(size=(k, spec.oct_dim)) / np.sqrt(k)
    # E|m_a - m_b|^2 = separation^2
    means = rng.normal(size=(C, k)) * spec.separation / np.sqrt(2 * k)
    n_active = max(1, int(round(spec.lesion_sparsity * spec.oct_dim)))
    active = np.zeros((C, spec.oct_dim), dtype=bool)
    for c in range(C):
        active[c, rng.choice(spec.oct_dim, size=n_active, replace=False)] = True

    y = np.repeat(np.arange(C), spec.per_class)
    y = y[rng.permutation(y.size)]
    n = y.size
    z = means[y] + rng.normal(size=(n, k))
    style_scale = 1.0 + spec.style_jitter * rng.normal(size=(n, 1))
    style_shift = spec.style_jitter * rng.normal(size=(n, spec.fundus_dim))
    x_f = style_scale * (z @ A_f) + style_shift
    x_o = (z @ A_o) * active[y] + spec.oct_noise * rng.normal(size=(n, spec.oct_dim))
    return Dataset(x_f, x_o, y.astype(np.int64), C)


def nearest_mean_accuracy(x_train, y_train, x_test, y_test, num_classes: int) -> float:
    """Accuracy of a nearest-class-mean probe (ties to the lowest class)."""
    means = np.stack([
        x_train[y_train == c].mean(axis=0) if np.any(y_train == c) else np.full(x_train.shape[1], np.inf)
        for c in range(num_classes)
    ])
    d = ((x_test[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return float(np.mean(np.argmin(d, axis=1) == y_test))
