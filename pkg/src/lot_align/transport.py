"""Entropic optimal transport on dense costs, with class-support masks.

The solver works on dual potentials in the log domain. Masked-out pairs are
``-inf`` in the log-kernel, so they are skipped by every logsumexp and come
out as exact zeros in the plan. Costs are divided by their largest absolute
entry before solving, which makes ``epsilon`` a relative quantity.

Small epsilon makes plain Sinkhorn crawl on near-degenerate costs (several
permutations within a hair of the optimum). After a bounded number of
Sinkhorn sweeps the solver therefore switches to damped Newton steps on the
same dual, which converge quadratically near the solution.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .numkit import as_matrix, check_histogram, check_labels

log = logging.getLogger(__name__)

_NEWTON_AFTER = 100
_NEWTON_STEPS = 40
_ANNEAL_START = 1.0
_ANNEAL_SWEEPS = 5


class InfeasibleMaskError(ValueError):
    pass


class ClassBalanceError(ValueError):
    def __init__(self, cls: int, mass_a: float, mass_b: float):
        self.cls = cls
        self.gap = mass_a - mass_b
        super().__init__(
            f"class {cls} is unbalanced: source mass {mass_a!r} vs target mass "
            f"{mass_b!r} (gap {self.gap:.3g})"
        )


@dataclass(frozen=True)
class SinkhornConfig:
    epsilon: float = 0.05
    max_iters: int = 1000
    marginal_tol: float = 1e-9
    normalize: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not self.marginal_tol > 0:
            raise ValueError("marginal_tol must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class ClassMask:
    """Boolean support ``allowed[i, j] = labels_a[i] == labels_b[j]``."""

    allowed: np.ndarray
    labels_a: np.ndarray
    labels_b: np.ndarray
    num_classes: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.allowed.shape

    def transpose(self) -> ClassMask:
        return ClassMask(self.allowed.T, self.labels_b, self.labels_a, self.num_classes)


@dataclass(frozen=True, eq=False)
class TransportPlan:
    matrix: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    mask: np.ndarray | None = None
    epsilon: float | None = None
    iterations: int = 0
    residual: float = 0.0
    converged: bool = True
    # dual potentials in the solver's (normalized) cost units, for warm starts
    potentials: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)
    # set by the GW solver
    objective_trace: tuple[float, ...] | None = field(default=None, repr=False)
    outer_iterations: int | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def transpose(self) -> TransportPlan:
        pots = None if self.potentials is None else self.potentials[::-1]
        return replace(
            self,
            matrix=self.matrix.T,
            mu=self.nu,
            nu=self.mu,
            mask=None if self.mask is None else self.mask.T,
            potentials=pots,
        )

    def marginal_residual(self) -> float:
        return max(
            float(np.max(np.abs(self.matrix.sum(axis=1) - self.mu))),
            float(np.max(np.abs(self.matrix.sum(axis=0) - self.nu))),
        )

    def metadata(self) -> dict:
        from .io import digest

        return {
            "epsilon": self.epsilon,
            "iterations": int(self.iterations),
            "residual": float(self.residual),
            "converged": bool(self.converged),
            "status": "converged" if self.converged else "max_iters reached",
            "mask_digest": None if self.mask is None else digest(self.mask.astype(float)),
            "outer_iterations": self.outer_iterations,
        }


def class_mask(labels_a, labels_b, num_classes: int | None = None,
               num_classes_b: int | None = None) -> ClassMask:
    """Support of the labeled polytope between two label vectors.

    ``num_classes_b`` lets callers declare the class count of each side
    separately; the two must agree.
    """
    if num_classes is None:
        ya, _ = check_labels(labels_a)
        yb, _ = check_labels(labels_b)
        num_classes = int(max(ya.max(initial=-1), yb.max(initial=-1))) + 1
    if num_classes_b is not None and num_classes_b != num_classes:
        raise ValueError(
            f"label vectors disagree on num_classes ({num_classes} vs {num_classes_b})"
        )
    ya, _ = check_labels(labels_a, num_classes)
    yb, _ = check_labels(labels_b, num_classes)
    return ClassMask(ya[:, None] == yb[None, :], ya, yb, num_classes)


def validate_class_balance(mu, nu, labels_a, labels_b, tol: float = 1e-9,
                           num_classes: int | None = None) -> None:
    """Raise :class:`ClassBalanceError` unless every class carries equal mass."""
    mu = np.asarray(mu, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    ya = np.asarray(labels_a, dtype=np.int64)
    yb = np.asarray(labels_b, dtype=np.int64)
    if mu.shape != ya.shape or nu.shape != yb.shape:
        raise ValueError("marginals and labels must have matching lengths")
    if num_classes is None:
        num_classes = int(max(ya.max(initial=-1), yb.max(initial=-1))) + 1
    mass_a = np.bincount(ya, weights=mu, minlength=num_classes)
    mass_b = np.bincount(yb, weights=nu, minlength=num_classes)
    for c in range(num_classes):
        if abs(mass_a[c] - mass_b[c]) > tol:
            raise ClassBalanceError(c, float(mass_a[c]), float(mass_b[c]))


def _check_mask(mask, mu, nu, tol) -> np.ndarray:
    if isinstance(mask, ClassMask):
        allowed = mask.allowed
    else:
        allowed = np.asarray(mask, dtype=bool)
    if allowed.shape != (mu.size, nu.size):
        raise ValueError(f"mask shape {allowed.shape} does not match ({mu.size}, {nu.size})")
    if not allowed.any(axis=1).all() or not allowed.any(axis=0).all():
        raise InfeasibleMaskError("infeasible mask: a row or column has no allowed entry")
    if isinstance(mask, ClassMask):
        validate_class_balance(mu, nu, mask.labels_a, mask.labels_b, tol, mask.num_classes)
    else:
        # generic mask: each connected block must carry equal mass on both sides
        n, m = allowed.shape
        adj = np.zeros((n + m, n + m), dtype=bool)
        adj[:n, n:] = allowed
        k, comp = connected_components(csr_matrix(adj), directed=False)
        mass_a = np.bincount(comp[:n], weights=mu, minlength=k)
        mass_b = np.bincount(comp[n:], weights=nu, minlength=k)
        for c in range(k):
            if abs(mass_a[c] - mass_b[c]) > tol:
                raise ClassBalanceError(c, float(mass_a[c]), float(mass_b[c]))
    return allowed


def _plan(logK, f, g, eps):
    with np.errstate(over="ignore"):
        return np.exp(logK + (f[:, None] + g[None, :]) / eps)


def _lse(A, axis):
    # lean logsumexp for the inner loop; all -inf slices are left to errstate
    m = A.max(axis=axis)
    m[~np.isfinite(m)] = 0.0
    shifted = A - (m[:, None] if axis == 1 else m[None, :])
    return np.log(np.exp(shifted).sum(axis=axis)) + m


def _sweep(logK, f, g, log_mu, log_nu, eps):
    with np.errstate(divide="ignore", over="ignore"):
        f = eps * (log_mu - _lse(logK + g[None, :] / eps, 1))
        g = eps * (log_nu - _lse(logK + f[:, None] / eps, 0))
    return f, g


def _newton(logK, f, g, mu, nu, eps, tol, steps):
    """Damped Newton ascent on the entropic dual; returns ``(f, g, steps_used)``."""
    n = f.size

    def dual(fv, gv):
        P = _plan(logK, fv, gv, eps)
        return fv @ mu + gv @ nu - eps * P.sum()

    for k in range(steps):
        P = _plan(logK, f, g, eps)
        r = np.concatenate([mu - P.sum(axis=1), nu - P.sum(axis=0)])
        if np.max(np.abs(r)) <= tol:
            return f, g, k
        H = np.block([[np.diag(P.sum(axis=1)), P], [P.T, np.diag(P.sum(axis=0))]])
        d = eps * np.linalg.lstsq(H, r, rcond=None)[0]
        base = dual(f, g)
        slope = r @ d
        t = 1.0
        while t > 1e-12:
            fn, gn = f + t * d[:n], g + t * d[n:]
            val = dual(fn, gn)
            if np.isfinite(val) and val >= base + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            return f, g, k + 1
        f, g = fn, gn
    return f, g, steps


def sinkhorn(cost, mu=None, nu=None, config: SinkhornConfig | None = None,
             mask=None, init: tuple[np.ndarray, np.ndarray] | None = None) -> TransportPlan:
    """Entropic OT plan for ``min <C, T> - eps * H(T)`` over the (masked) polytope.

    Args:
        cost: ``n x m`` finite cost matrix.
        mu, nu: source/target histograms (uniform when omitted).
        config: solver settings; ``epsilon`` is relative to the normalized cost
            when ``config.normalize`` is set.
        mask: :class:`ClassMask` or boolean array; ``False`` entries get no mass.
        init: dual potentials ``(f, g)`` from a previous solve at the same
            scale, used as a warm start (skips epsilon annealing).

    Returns:
        A :class:`TransportPlan`. If the marginal tolerance is not reached
        within ``max_iters`` the plan is returned with ``converged=False``.
    """
    config = config or SinkhornConfig()
    C = as_matrix(cost, "cost")
    n, m = C.shape
    mu = np.full(n, 1.0 / n) if mu is None else check_histogram(mu, "mu", 1e-9)
    nu = np.full(m, 1.0 / m) if nu is None else check_histogram(nu, "nu", 1e-9)
    if mu.size != n or nu.size != m:
        raise ValueError("marginal lengths do not match the cost shape")

    allowed = None
    if mask is not None:
        allowed = _check_mask(mask, mu, nu, max(config.marginal_tol, 1e-12))

    scale = 1.0
    if config.normalize:
        peak = float(np.max(np.abs(C))) if C.size else 0.0
        if peak > 0:
            scale = peak
    eps = config.epsilon
    logK = -C / (scale * eps)
    if allowed is not None:
        logK = np.where(allowed, logK, -np.inf)
    # potentials are kept in units of cost/scale, so the kernel at a given
    # annealing level e is exp((f + g)/e - C/(scale e))
    Cn = C / scale
    with np.errstate(divide="ignore"):
        log_mu, log_nu = np.log(mu), np.log(nu)

    used = 0
    if init is not None:
        f, g = (np.asarray(init[0], dtype=np.float64).copy(),
                np.asarray(init[1], dtype=np.float64).copy())
    else:
        f, g = np.zeros(n), np.zeros(m)
        e = _ANNEAL_START
        while e > eps:
            lk = -Cn / e
            if allowed is not None:
                lk = np.where(allowed, lk, -np.inf)
            for _ in range(_ANNEAL_SWEEPS):
                f, g = _sweep(lk, f, g, log_mu, log_nu, e)
                used += 1
            e *= 0.5

    tol = config.marginal_tol
    residual = np.inf
    budget = config.max_iters
    newton_tried = False
    k = 0
    while k < budget:
        f, g = _sweep(logK, f, g, log_mu, log_nu, eps)
        k += 1
        P = _plan(logK, f, g, eps)
        residual = float(np.max(np.abs(P.sum(axis=1) - mu)))
        if residual <= tol:
            break
        if k >= _NEWTON_AFTER and not newton_tried:
            newton_tried = True
            f, g, steps = _newton(logK, f, g, mu, nu, eps, tol, min(_NEWTON_STEPS, budget - k))
            k += steps
            P = _plan(logK, f, g, eps)
            residual = max(float(np.max(np.abs(P.sum(axis=1) - mu))),
                           float(np.max(np.abs(P.sum(axis=0) - nu))))
            if residual <= tol:
                break
    used += k
    P = _plan(logK, f, g, eps)
    residual = max(float(np.max(np.abs(P.sum(axis=1) - mu))),
                   float(np.max(np.abs(P.sum(axis=0) - nu))))
    converged = residual <= tol
    if not converged and init is not None:
        # a stale warm start can pin the plan to a wrong sparse support at
        # small epsilon; an annealed cold start does not have that problem
        cold = sinkhorn(cost, mu, nu, config, mask=mask)
        return replace(cold, iterations=cold.iterations + used)
    if not converged:
        log.warning("sinkhorn: max_iters reached, marginal residual %.3g", residual)
    return TransportPlan(
        matrix=P,
        mu=mu,
        nu=nu,
        mask=allowed,
        epsilon=eps,
        iterations=used,
        residual=residual,
        converged=converged,
        potentials=(f, g),
    )


def entropy(plan) -> float:
    """``H(T) = -sum T (log T - 1)`` with ``0 log 0 = 0``."""
    T = plan.matrix if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)
    if np.any(T < 0):
        raise ValueError("plan has negative entries")
    x = T[T > 0]
    return float(-np.sum(x * (np.log(x) - 1.0)))


def transport_cost(cost, plan) -> float:
    T = plan.matrix if isinstance(plan, TransportPlan) else np.asarray(plan)
    return float(np.sum(np.asarray(cost) * T))


def brute_force_ot(cost, mask=None) -> TransportPlan:
    """Exact OT with uniform marginals by enumerating permutations (n <= 8).

    Ties go to the lexicographically smallest permutation.
    """
    C = as_matrix(cost, "cost")
    n = C.shape[0]
    if C.shape != (n, n):
        raise ValueError("brute_force_ot needs a square cost")
    if n > 8:
        raise ValueError("oracle size limit: n must be <= 8")
    allowed = None
    if mask is not None:
        allowed = mask.allowed if isinstance(mask, ClassMask) else np.asarray(mask, dtype=bool)
    best, best_perm = np.inf, None
    rows = range(n)
    for perm in itertools.permutations(range(n)):
        if allowed is not None and not all(allowed[i, perm[i]] for i in rows):
            continue
        total = 0.0
        for i in rows:
            total += C[i, perm[i]]
        if total < best:
            best, best_perm = total, perm
    if best_perm is None:
        raise InfeasibleMaskError("no permutation satisfies the mask")
    T = np.zeros((n, n))
    T[np.arange(n), best_perm] = 1.0 / n
    u = np.full(n, 1.0 / n)
    return TransportPlan(T, u, u.copy(), mask=allowed, epsilon=0.0)
