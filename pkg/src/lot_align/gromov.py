"""Entropic Gromov-Wasserstein with class-restricted support.

The GW objective between intra-domain squared-distance matrices ``D_f`` and
``D_o`` is

    sum_{i,j,k,l} (D_f[i,k] - D_o[j,l])**2 * T[i,j] * T[k,l].

For the square loss this quadratic form factors (Peyre et al. 2016), so the
linearized cost at a plan ``T`` costs two matrix products instead of a 4-D
tensor. ``entropic_gw`` alternates that linearization with a masked Sinkhorn
solve.

Non-convexity means the product coupling is sometimes a saddle or a poor
basin. Besides the product start, the solver tries a few seeded random
feasible couplings and keeps the plan with the lowest entropic objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .batch import EmbeddingBatch
from .numkit import check_labels, pairwise_sq_dist, seeded_rng, uniform_histogram
from .transport import (
    SinkhornConfig,
    TransportPlan,
    class_mask,
    entropy,
    sinkhorn,
    validate_class_balance,
)


@dataclass(frozen=True)
class GwConfig:
    epsilon: float = 0.05
    outer_iters: int = 50
    inner: SinkhornConfig = field(default_factory=lambda: SinkhornConfig(max_iters=1000))
    convergence_tol: float = 1e-7
    restarts: int = 8
    seed: int = 0

    def __post_init__(self):
        if not (self.epsilon > 0 and self.outer_iters > 0 and self.convergence_tol > 0):
            raise ValueError("GwConfig values must be positive")
        if self.restarts < 0:
            raise ValueError("restarts must be >= 0")


@dataclass(frozen=True, eq=False)
class GwProblem:
    dist_f: np.ndarray
    dist_o: np.ndarray
    mu: np.ndarray | None = None
    nu: np.ndarray | None = None
    labels_f: np.ndarray | None = None
    labels_o: np.ndarray | None = None
    num_classes: int | None = None

    def __post_init__(self):
        for name in ("dist_f", "dist_o"):
            D = np.asarray(getattr(self, name), dtype=np.float64)
            if D.ndim != 2 or D.shape[0] != D.shape[1] or D.shape[0] == 0:
                raise ValueError(f"{name} must be a nonempty square matrix")
            if not np.allclose(D, D.T, atol=1e-12) or np.any(np.diag(D) != 0):
                raise ValueError(f"{name} must be symmetric with zero diagonal")
            object.__setattr__(self, name, D)
        n, m = self.dist_f.shape[0], self.dist_o.shape[0]
        if self.mu is None:
            object.__setattr__(self, "mu", uniform_histogram(n))
        if self.nu is None:
            object.__setattr__(self, "nu", uniform_histogram(m))
        if (self.labels_f is None) != (self.labels_o is None):
            raise ValueError("labels must be given for both sides or neither")

    @property
    def labeled(self) -> bool:
        return self.labels_f is not None


def _linearized(D1, D2, T):
    """``L(D1, D2) (x) T`` for the square loss, using T's own marginals."""
    p = T.sum(axis=1)
    q = T.sum(axis=0)
    return ((D1 * D1) @ p)[:, None] + ((D2 * D2) @ q)[None, :] - 2.0 * (D1 @ T @ D2.T)


def gw_objective(dist_f, dist_o, plan) -> float:
    """Quadratic GW term for ``plan`` (no entropy)."""
    T = plan.matrix if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)
    D1 = np.asarray(dist_f, dtype=np.float64)
    D2 = np.asarray(dist_o, dtype=np.float64)
    if T.shape != (D1.shape[0], D2.shape[0]):
        raise ValueError(f"plan shape {T.shape} does not match ({D1.shape[0]}, {D2.shape[0]})")
    return float(np.sum(_linearized(D1, D2, T) * T))


def _product_coupling(mu, nu, mask):
    T = np.outer(mu, nu)
    if mask is None:
        return T
    # mu nu^T restricted to each class block, rescaled so the marginals hold
    ya, yb = mask.labels_a, mask.labels_b
    mass = np.bincount(ya, weights=mu, minlength=mask.num_classes)
    T = np.where(mask.allowed, T, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        T = T / np.where(mass[ya] > 0, mass[ya], 1.0)[:, None]
    return T


def entropic_gw(problem: GwProblem, config: GwConfig | None = None) -> TransportPlan:
    """Entropic GW plan, optionally restricted to same-label pairs.

    ``epsilon`` is relative to distances divided by their joint maximum. The
    returned plan carries ``objective_trace`` (entropic objective in those
    normalized units, one entry per outer iteration of the winning start).
    """
    config = config or GwConfig()
    D1, D2 = problem.dist_f, problem.dist_o
    mu, nu = problem.mu, problem.nu
    n, m = D1.shape[0], D2.shape[0]

    mask = None
    if problem.labeled:
        ya, c = check_labels(problem.labels_f, problem.num_classes)
        yb, _ = check_labels(problem.labels_o, c)
        mask = class_mask(ya, yb, c)
        validate_class_balance(mu, nu, ya, yb, 1e-9, c)

    scale = max(float(D1.max()), float(D2.max()))
    if scale <= 0:
        scale = 1.0
    d1, d2 = D1 / scale, D2 / scale
    starts = [_product_coupling(mu, nu, mask)]
    # fixed cost unit: the linearized cost at the product start
    unit = float(np.max(np.abs(2.0 * _linearized(d1, d2, starts[0]))))
    if unit <= 0:
        unit = 1.0
    d1, d2 = d1 / np.sqrt(unit), d2 / np.sqrt(unit)
    eps = config.epsilon
    inner = replace(config.inner, epsilon=eps, normalize=False)

    def energy(T):
        return gw_objective(d1, d2, T) - eps * entropy(T)

    rng = seeded_rng(config.seed)
    for _ in range(config.restarts):
        starts.append(
            sinkhorn(rng.random((n, m)), mu, nu, SinkhornConfig(epsilon=0.05), mask=mask).matrix
        )

    best = None
    for T0 in starts:
        T = T0
        trace = [energy(T)]
        pots = None
        outer = 0
        last = None
        for outer in range(1, config.outer_iters + 1):
            last = sinkhorn(2.0 * _linearized(d1, d2, T), mu, nu, inner, mask=mask, init=pots)
            pots = last.potentials
            change = float(np.abs(last.matrix - T).sum())
            T = last.matrix
            trace.append(energy(T))
            if change < config.convergence_tol:
                break
        if best is None or trace[-1] < best[1][-1]:
            best = (last, trace, outer)

    last, trace, outer = best
    return replace(
        last,
        objective_trace=tuple(trace),
        outer_iterations=outer,
        potentials=None,
    )


def _unit_rows(X):
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    return X / np.where(norms > 0, norms, 1.0)


def labeled_gw(embeds: EmbeddingBatch, direction: str = "fo",
               config: GwConfig | None = None) -> TransportPlan:
    """Class-restricted GW plan between the two modalities of a paired batch.

    Rows are L2-normalized before distances are taken. ``direction="fo"``
    gives the fundus-to-OCT plan (rows index fundus samples); ``"of"`` is its
    transpose.
    """
    if direction not in ("fo", "of"):
        raise ValueError(f"direction must be 'fo' or 'of', got {direction!r}")
    if embeds.n == 0:
        raise ValueError("empty batch")
    problem = GwProblem(
        dist_f=pairwise_sq_dist(_unit_rows(embeds.e_f)),
        dist_o=pairwise_sq_dist(_unit_rows(embeds.e_o)),
        labels_f=embeds.y,
        labels_o=embeds.y,
        num_classes=embeds.num_classes,
    )
    plan = entropic_gw(problem, config)
    return plan if direction == "fo" else plan.transpose()


@dataclass(frozen=True, eq=False)
class FeaturePlan:
    """Coupling between OCT feature dimensions (rows) and fundus ones (columns)."""

    matrix: np.ndarray
    epsilon: float | None = None
    residual: float = 0.0
    source_digest: str | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @classmethod
    def uniform(cls, d_o: int, d_f: int) -> FeaturePlan:
        return cls(np.full((d_o, d_f), 1.0 / (d_o * d_f)))

    def metadata(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "residual": float(self.residual),
            "source_digest": self.source_digest,
            "shape": list(self.shape),
        }


def feature_cost(e_f, e_o, t_c_of) -> np.ndarray:
    """``M[l, k] = sum_{j,i} T_of[j, i] * (e_o[j, l] - e_f[i, k])**2``."""
    e_f = np.asarray(e_f, dtype=np.float64)
    e_o = np.asarray(e_o, dtype=np.float64)
    T = t_c_of.matrix if isinstance(t_c_of, TransportPlan) else np.asarray(t_c_of, dtype=np.float64)
    if T.shape != (e_o.shape[0], e_f.shape[0]):
        raise ValueError(f"T_of shape {T.shape} does not match ({e_o.shape[0]}, {e_f.shape[0]})")
    r = T.sum(axis=1)
    c = T.sum(axis=0)
    M = ((e_o * e_o).T @ r)[:, None] + ((e_f * e_f).T @ c)[None, :] - 2.0 * (e_o.T @ T @ e_f)
    return np.maximum(M, 0.0)


def feature_plan(embeds: EmbeddingBatch, t_c_of, config: GwConfig | None = None) -> FeaturePlan:
    """Feature-wise coupling given a fixed OCT-to-fundus sample coupling.

    Samples stay coupled by ``t_c_of``; the feature coupling is then a single
    linear OT problem on :func:`feature_cost` with uniform feature marginals.
    Raw (unnormalized) embeddings are compared.
    """
    from .io import digest

    config = config or GwConfig()
    M = feature_cost(embeds.e_f, embeds.e_o, t_c_of)
    plan = sinkhorn(M, None, None, replace(config.inner, epsilon=config.epsilon, normalize=True))
    return FeaturePlan(
        matrix=plan.matrix,
        epsilon=config.epsilon,
        residual=plan.residual,
        source_digest=digest(np.hstack([embeds.e_f, embeds.e_o])),
    )


def barycentric_project(t_v, e_o, normalize: bool = True) -> np.ndarray:
    """Carry OCT rows into fundus feature space through the feature coupling.

    With ``normalize`` (default) each fundus feature is the weighted average
    of the OCT features coupled to it (column-normalized plan); otherwise the
    raw product ``e_o @ T_v`` is returned.
    """
    T = t_v.matrix if isinstance(t_v, FeaturePlan) else np.asarray(t_v, dtype=np.float64)
    e_o = np.asarray(e_o, dtype=np.float64)
    if e_o.ndim != 2 or e_o.shape[1] != T.shape[0]:
        raise ValueError(f"e_o shape {e_o.shape} does not match plan rows {T.shape[0]}")
    if not normalize:
        return e_o @ T
    out = e_o @ projection_weights(T)
    # a convex combination of equal values is that value; keep rounding out of it
    flat = np.ptp(e_o, axis=1) == 0
    if flat.any():
        out[flat] = e_o[flat, :1]
    return out


def projection_weights(T) -> np.ndarray:
    T = np.asarray(T, dtype=np.float64)
    col = T.sum(axis=0)
    if np.any(col <= 0):
        raise ValueError("degenerate feature coupling: a fundus feature receives no mass")
    return T / col[None, :]
