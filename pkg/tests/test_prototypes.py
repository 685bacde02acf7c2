from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lot_align.batch import EmbeddingBatch
from lot_align.gromov import labeled_gw
from lot_align.prototypes import (
    DegenerateDirectionError,
    PrototypeSet,
    cosine_alignment_loss,
    match_distribution,
    sample_match,
    sampled_prototypes,
    soft_prototypes,
)
from lot_align.numkit import seeded_rng


def fd_grad(fn, X, h=1e-6):
    G = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        Xp, Xm = X.copy(), X.copy()
        Xp[idx] += h
        Xm[idx] -= h
        G[idx] = (fn(Xp) - fn(Xm)) / (2 * h)
    return G


def random_labeled_plan(seed, n=6):
    rng = np.random.default_rng(seed)
    y = np.array([0, 1] * (n // 2))
    b = EmbeddingBatch.from_arrays(rng.normal(size=(n, 3)), rng.normal(size=(n, 4)), y)
    return b, y, labeled_gw(b, "fo")


def test_match_distribution_cases():
    np.testing.assert_array_equal(match_distribution(np.eye(3) / 3), np.eye(3))
    block = np.zeros((4, 4))
    block[:3, :3] = 1 / 12
    block[3, 3] = 0.25
    p = match_distribution(block)
    np.testing.assert_allclose(p[:3, :3], 1 / 3, atol=1e-15)
    with pytest.raises(ValueError, match="unmatched sample"):
        match_distribution(np.array([[0.5, 0.5], [0.0, 0.0]]))


def test_match_distribution_of_labeled_plan():
    _, y, T = random_labeled_plan(0)
    p = match_distribution(T)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(p[y[:, None] != y[None, :]] == 0.0)


def test_soft_prototypes_cases():
    rng = np.random.default_rng(1)
    e = rng.normal(size=(4, 3))
    assert np.array_equal(soft_prototypes(np.eye(4), e, "oct").protos, e)
    y = np.array([0, 0, 1, 1])
    p = (y[:, None] == y[None, :]) / 2.0
    protos = soft_prototypes(p, e, "oct").protos
    np.testing.assert_allclose(protos[0], e[:2].mean(axis=0), atol=1e-15)
    np.testing.assert_allclose(protos[3], e[2:].mean(axis=0), atol=1e-15)


def test_soft_prototypes_match_naive_sum():
    rng = np.random.default_rng(2)
    p = rng.random((4, 4))
    p /= p.sum(axis=1, keepdims=True)
    e = rng.normal(size=(4, 3))
    naive = np.zeros((4, 3))
    for i in range(4):
        for j in range(4):
            naive[i] += p[i, j] * e[j]
    np.testing.assert_allclose(soft_prototypes(p, e, "fundus").protos, naive, atol=1e-12)


def test_soft_prototypes_shape_and_modality_errors():
    with pytest.raises(ValueError):
        soft_prototypes(np.eye(3), np.zeros((4, 2)), "oct")
    with pytest.raises(ValueError):
        PrototypeSet(np.zeros((2, 2)), "xray")


def test_prototypes_convex_mixing():
    rng = np.random.default_rng(3)
    p1, p2 = rng.dirichlet(np.ones(5), size=5), rng.dirichlet(np.ones(5), size=5)
    e = rng.normal(size=(5, 2))
    a = 0.25  # exact in binary, so the mixture is exact too
    lhs = soft_prototypes(a * p1 + (1 - a) * p2, e, "oct").protos
    rhs = a * soft_prototypes(p1, e, "oct").protos + (1 - a) * soft_prototypes(p2, e, "oct").protos
    np.testing.assert_allclose(lhs, rhs, atol=1e-14)


def test_prototypes_in_same_class_hull():
    b, y, T = random_labeled_plan(4)
    p = match_distribution(T)
    protos = soft_prototypes(p, b.e_o, "oct").protos
    for i in range(b.n):
        support = np.flatnonzero(p[i] > 0)
        assert np.all(y[support] == y[i])
        np.testing.assert_allclose(protos[i], p[i, support] @ b.e_o[support], atol=1e-12)


def test_sample_match_cases():
    rng = seeded_rng(0)
    row = np.array([[0.0, 0.0, 1.0, 0.0]])
    assert all(sample_match(row, 0, rng) == 2 for _ in range(100))
    with pytest.raises(IndexError):
        sample_match(row, 1, rng)


def test_sample_match_binomial_interval():
    rng = seeded_rng(5)
    p = np.array([[0.5, 0.5]])
    freq = np.mean([sample_match(p, 0, rng) == 0 for _ in range(10_000)])
    assert 0.48 <= freq <= 0.52


def test_sample_match_deterministic():
    p = np.array([[0.2, 0.3, 0.5]])
    a = [sample_match(p, 0, seeded_rng(9)) for _ in range(1)]
    r1, r2 = seeded_rng(9), seeded_rng(9)
    assert [sample_match(p, 0, r1) for _ in range(50)] == [sample_match(p, 0, r2) for _ in range(50)]
    assert a[0] in (0, 1, 2)


def test_sampled_matches_average_to_prototype():
    b, _, T = random_labeled_plan(6)
    p = match_distribution(T)
    rng = seeded_rng(11)
    draws = 10_000
    i = 0
    samples = np.array([b.e_o[sample_match(p, i, rng)] for _ in range(draws)])
    target = soft_prototypes(p, b.e_o, "oct").protos[i]
    # 99% CLT bound on the L2 error of the empirical mean
    var = p[i] @ ((b.e_o - target) ** 2)
    bound = 2.576 * np.sqrt(var.sum() / draws) * np.sqrt(b.d_o)
    assert np.linalg.norm(samples.mean(axis=0) - target) <= bound
    assert sampled_prototypes(p, b.e_o, rng, "oct").protos.shape == (b.n, b.d_o)


# --- cosine alignment loss ---------------------------------------------------

def test_cosine_loss_identical_rows():
    X = np.random.default_rng(0).normal(size=(4, 3))
    loss, grad = cosine_alignment_loss(X, X)
    assert loss == pytest.approx(0.0, abs=1e-15)
    assert np.max(np.abs(np.einsum("ij,ij->i", grad, X))) <= 1e-12


def test_cosine_loss_orthogonal_rows():
    loss, _ = cosine_alignment_loss(np.array([[1.0, 0.0], [0.0, 2.0]]), np.array([[0.0, 3.0], [1.0, 0.0]]))
    assert loss == pytest.approx(1.0, abs=1e-15)


def test_cosine_loss_gradient_fd():
    rng = np.random.default_rng(1)
    for _ in range(10):
        X, Y = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        _, g = cosine_alignment_loss(X, Y)
        num = fd_grad(lambda Z: cosine_alignment_loss(Z, Y)[0], X)
        assert np.max(np.abs(g - num)) / np.max(np.abs(num)) <= 1e-5


def test_cosine_loss_degenerate_row():
    with pytest.raises(DegenerateDirectionError, match="row 1"):
        cosine_alignment_loss(np.array([[1.0, 0.0], [0.0, 0.0]]), np.ones((2, 2)))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_cosine_loss_range_and_scale_invariance(n, d, seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(n, d)), rng.normal(size=(n, d))
    loss, _ = cosine_alignment_loss(X, Y)
    assert -1e-12 <= loss <= 2 + 1e-12
    X2 = X.copy()
    X2[0] *= 10
    assert cosine_alignment_loss(X2, Y)[0] == pytest.approx(loss, abs=1e-12)
