from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkit import as_matrix, check_labels


@dataclass(frozen=True, eq=False)
class EmbeddingBatch:
    """Paired fundus/OCT embeddings with one shared label per row."""

    e_f: np.ndarray
    e_o: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        e_f = as_matrix(self.e_f, "e_f")
        e_o = as_matrix(self.e_o, "e_o")
        if e_f.shape[0] != e_o.shape[0]:
            raise ValueError(f"row counts disagree: {e_f.shape[0]} vs {e_o.shape[0]}")
        y, _ = check_labels(self.y, self.num_classes)
        if y.size != e_f.shape[0]:
            raise ValueError("label count does not match the batch size")
        object.__setattr__(self, "e_f", e_f)
        object.__setattr__(self, "e_o", e_o)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_arrays(cls, e_f, e_o, y, num_classes: int | None = None) -> EmbeddingBatch:
        y, c = check_labels(y, num_classes)
        return cls(e_f, e_o, y, c)

    @property
    def n(self) -> int:
        return self.e_f.shape[0]

    @property
    def d_f(self) -> int:
        return self.e_f.shape[1]

    @property
    def d_o(self) -> int:
        return self.e_o.shape[1]
