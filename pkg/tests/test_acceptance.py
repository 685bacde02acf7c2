"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v``; the per-criterion
lines appear in the "acceptance criteria" section of the terminal summary.
"""

from __future__ import annotations

import itertools
import time

import numpy as np

from conftest import ACCEPTANCE
from lot_align.batch import EmbeddingBatch
from lot_align.cli import main as cli_main
from lot_align.fusion.layers import (
    Attention,
    DenseStack,
    attention_apply,
    dense_apply,
    param,
    softmax_cross_entropy,
)
from lot_align.fusion import autograd as ag
from lot_align.fusion.model import Availability, FusionModel, ModelDims, forward, fuse, total_loss
from lot_align.fusion.train import TrainConfig, batch_prototypes, make_optimizer, train_step
from lot_align.gromov import GwConfig, GwProblem, entropic_gw, gw_objective, labeled_gw
from lot_align.harness.config import ExperimentConfig
from lot_align.harness.metrics import binary_auc
from lot_align.harness.protocol import run_protocol
from lot_align.harness.synth import SyntheticSpec, synth_dataset
from lot_align.numkit import pairwise_sq_dist
from lot_align.prototypes import cosine_alignment_loss, match_distribution, soft_prototypes
from lot_align.transport import SinkhornConfig, brute_force_ot, class_mask, sinkhorn, transport_cost


def record(num, title, ok, detail):
    ACCEPTANCE.append((num, title, bool(ok), detail))
    print(f"[{'PASS' if ok else 'FAIL'}] {num}. {title}: {detail}")
    assert ok, detail


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def fd(fn, X, h=1e-6):
    G = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        old = X[idx]
        X[idx] = old + h
        up = fn()
        X[idx] = old - h
        down = fn()
        X[idx] = old
        G[idx] = (up - down) / (2 * h)
    return G


def perm_plan(p):
    n = len(p)
    T = np.zeros((n, n))
    T[np.arange(n), p] = 1.0 / n
    return T


# 1 -------------------------------------------------------------------------

def test_01_sinkhorn_correctness():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst_gap, worst_res = 0.0, 0.0
    for k in range(50):
        n = 4 if k < 25 else 6
        C = rng.random((n, n))
        plan = sinkhorn(C, config=SinkhornConfig(epsilon=1e-3))
        best = transport_cost(C, brute_force_ot(C))
        worst_gap = max(worst_gap, transport_cost(C, plan) / best - 1.0)
        worst_res = max(worst_res, plan.marginal_residual())
    elapsed = time.perf_counter() - start
    ok = worst_gap <= 0.01 and worst_res <= 1e-9 and elapsed < 5.0
    record(1, "Sinkhorn vs brute force", ok,
           f"worst cost gap {worst_gap:.2e}, worst residual {worst_res:.1e}, {elapsed:.2f}s")


# 2 -------------------------------------------------------------------------

def test_02_labeled_block_decomposition():
    rng = np.random.default_rng(2)
    cfg = SinkhornConfig(normalize=False, marginal_tol=1e-12)
    worst_off, worst_block = 0.0, 0.0
    for _ in range(50):
        C_ = int(rng.integers(2, 4))
        counts = rng.integers(1, 4, size=C_)
        base = np.repeat(np.arange(C_), counts)
        ya, yb = rng.permutation(base), rng.permutation(base)
        n = base.size
        cost = rng.random((n, n))
        cost /= cost.max()  # one shared scale for the joint and the solo solves
        m = class_mask(ya, yb)
        P = sinkhorn(cost, config=cfg, mask=m).matrix
        worst_off = max(worst_off, float(np.abs(P[~m.allowed]).max(initial=0.0)))
        for c in range(C_):
            ia, ib = np.flatnonzero(ya == c), np.flatnonzero(yb == c)
            solo = sinkhorn(cost[np.ix_(ia, ib)], config=cfg).matrix
            diff = np.abs(P[np.ix_(ia, ib)] - (ia.size / n) * solo).max()
            worst_block = max(worst_block, float(diff))
    ok = worst_off == 0.0 and worst_block <= 1e-9
    record(2, "Labeled polytope block decomposition", ok,
           f"max off-block mass {worst_off:g}, max block deviation {worst_block:.1e}")


# 3 -------------------------------------------------------------------------

def naive_gw(D1, D2, T):
    n, m = T.shape
    return sum((D1[i, k] - D2[j, l]) ** 2 * T[i, j] * T[k, l]
               for i in range(n) for j in range(m) for k in range(n) for l in range(m))


def test_03_gw_oracles():
    rng = np.random.default_rng(3)
    worst_loop, trace_ok = 0.0, True
    for _ in range(20):
        D1 = pairwise_sq_dist(rng.normal(size=(5, 2)))
        D2 = pairwise_sq_dist(rng.normal(size=(5, 2)))
        T = sinkhorn(rng.random((5, 5))).matrix
        worst_loop = max(worst_loop, abs(gw_objective(D1, D2, T) - naive_gw(D1, D2, T)))
        plan = entropic_gw(GwProblem(D1, D2))
        trace_ok &= plan.objective_trace[-1] <= plan.objective_trace[0]
        trace_ok &= gw_objective(D1, D2, plan) <= gw_objective(D1, D2, np.full((5, 5), 1 / 25))

    worst_ratio = 0.0
    for n in (2, 3, 4):
        for _ in range(10):
            D1 = pairwise_sq_dist(rng.normal(size=(n, 2)))
            D2 = pairwise_sq_dist(rng.normal(size=(n, 2)))
            best = min(gw_objective(D1, D2, perm_plan(p)) for p in itertools.permutations(range(n)))
            got = gw_objective(D1, D2, entropic_gw(GwProblem(D1, D2), GwConfig(epsilon=1e-3)))
            worst_ratio = max(worst_ratio, (got - best) / max(best, 1e-300))
    ok = worst_loop <= 1e-10 and trace_ok and worst_ratio <= 0.05
    record(3, "GW oracle equivalence", ok,
           f"loop error {worst_loop:.1e}, objective never above start: {trace_ok}, "
           f"worst excess over permutation optimum {worst_ratio:.2%}")


# 4 -------------------------------------------------------------------------

def test_04_mirrored_recovery():
    rng = np.random.default_rng(4)
    y = np.array([0, 0, 0, 1, 1, 1])
    allowed = class_mask(y, y).allowed
    feasible = [p for p in itertools.permutations(range(6)) if all(allowed[i, p[i]] for i in range(6))]
    worst, checked, skipped = 1.0, 0, 0
    while checked < 20:
        X = rng.normal(size=(6, 8))
        Q, _ = np.linalg.qr(rng.normal(size=(8, 8)))
        e_o = X @ Q  # same geometry, different coordinates
        # brute force over label-respecting matchings: keep instances whose identity
        # optimum beats every other matching by a margin on the scale of epsilon
        D = pairwise_sq_dist(X / np.linalg.norm(X, axis=1, keepdims=True))
        costs = sorted((gw_objective(D, D, perm_plan(p)), p) for p in feasible)
        assert costs[0][1] == tuple(range(6))
        if costs[1][0] < 0.0125 * D.max() ** 2:
            skipped += 1
            continue
        P = labeled_gw(EmbeddingBatch.from_arrays(X, e_o, y), "fo", GwConfig(epsilon=0.01)).matrix
        worst = min(worst, float((np.diag(P) / P.sum(axis=1)).min()))
        checked += 1
    record(4, "Mirrored-space recovery", worst >= 0.9,
           f"min row mass on true match {worst:.4f} over {checked} instances ({skipped} near-ties skipped)")


# 5 -------------------------------------------------------------------------

def test_05_prototypes_and_cosine_loss():
    rng = np.random.default_rng(5)
    worst_proto, worst_grad = 0.0, 0.0
    for _ in range(10):
        y = rng.permutation(np.repeat([0, 1], 3))
        b = EmbeddingBatch.from_arrays(rng.normal(size=(6, 3)), rng.normal(size=(6, 4)), y)
        p = match_distribution(labeled_gw(b, "fo"))
        naive = np.array([[sum(p[i, j] * b.e_o[j, d] for j in range(6)) for d in range(4)] for i in range(6)])
        worst_proto = max(worst_proto, float(np.abs(soft_prototypes(p, b.e_o, "oct").protos - naive).max()))

        X, Y = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        _, g = cosine_alignment_loss(X, Y)
        worst_grad = max(worst_grad, rel_err(g, fd(lambda: cosine_alignment_loss(X, Y)[0], X)))
    ok = worst_proto <= 1e-12 and worst_grad <= 1e-5
    record(5, "Prototype and loss correctness", ok,
           f"prototype error {worst_proto:.1e}, cosine grad rel. error {worst_grad:.1e}")


# 6 -------------------------------------------------------------------------

def _param_fd(build, params):
    for p in params:
        p.grad = None
    build().backward()
    worst = 0.0
    for p in params:
        num = fd(lambda: float(build().data), p.data)
        worst = max(worst, rel_err(p.grad, num))
    return worst


def test_06_network_gradients():
    rng = np.random.default_rng(6)
    worst_layer = 0.0
    for _ in range(10):
        stack = DenseStack([4, 5, 3], rng)
        X = param(rng.normal(size=(3, 4)), "X")
        R = rng.normal(size=(3, 3))
        build = lambda: ag.loss_node(dense_apply(stack, X), lambda Z: (float((Z * R).sum()), R))
        worst_layer = max(worst_layer, _param_fd(build, list(stack.parameters()) + [X]))

        block = Attention(3, rng)
        tokens = param(rng.normal(size=(2, 3, 3)), "tokens")
        R2 = rng.normal(size=(2, 3))
        build = lambda: ag.loss_node(attention_apply(block, tokens), lambda Z: (float((Z * R2).sum()), R2))
        worst_layer = max(worst_layer, _param_fd(build, list(block.parameters()) + [tokens]))

        Z = rng.normal(size=(4, 3))
        yy = rng.integers(0, 3, size=4)
        _, g = softmax_cross_entropy(Z, yy)
        worst_layer = max(worst_layer, rel_err(g, fd(lambda: softmax_cross_entropy(Z, yy)[0], Z)))

    ds = synth_dataset(SyntheticSpec.easy(per_class=2, fundus_dim=5, oct_dim=4, seed=6))
    model = FusionModel(ModelDims(5, 4, 2, embed=4, hidden=5), seed=6)
    av = Availability.complete_batch(4)
    protos = batch_prototypes(model, ds.x_f, ds.x_o, ds.y, av, TrainConfig())

    def build():
        logits, inter = forward(model, ds.x_f, ds.x_o, av, protos)
        return total_loss(logits, ds.y, inter["pred_f2o"], protos[0], inter["pred_o2f"], protos[1])[0]

    worst_model = _param_fd(build, model.parameters())
    ok = worst_layer <= 1e-4 and worst_model <= 1e-3
    record(6, "Network gradients", ok,
           f"worst layer rel. error {worst_layer:.1e}, end-to-end {worst_model:.1e}")


# 7 -------------------------------------------------------------------------

def test_07_graph_surgery():
    ds = synth_dataset(SyntheticSpec(per_class=3, fundus_dim=6, oct_dim=5, seed=7))
    n = len(ds)
    ok = True
    for seed in range(5):
        m = FusionModel(ModelDims(6, 5, 2, embed=4, hidden=6), seed=seed)
        got, _ = forward(m, ds.x_f, ds.x_o, Availability.oct_missing(n))
        e_f = m.encoder_f(ds.x_f)
        e_o = m.head_f2o(e_f)
        want, _ = fuse(m, e_f, e_o, m.head_o2f(e_o), m.head_f2o(e_f))
        ok &= np.array_equal(got.data, want.data)

        got, _ = forward(m, ds.x_f, ds.x_o, Availability.fundus_missing(n))
        e_o = m.encoder_o(ds.x_o)
        e_f = m.head_o2f(e_o)
        want, _ = fuse(m, e_f, e_o, m.head_o2f(e_o), m.head_f2o(e_f))
        ok &= np.array_equal(got.data, want.data)
    record(7, "Missing-modality graph surgery", ok, "bitwise equal for both directions, 5 models")


# 8 -------------------------------------------------------------------------

def test_08_overfit():
    ds = synth_dataset(SyntheticSpec(per_class=4, seed=8))
    model = FusionModel(ModelDims(16, 16, 2), seed=8)
    cfg = TrainConfig()
    av = Availability.complete_batch(8)
    opt = make_optimizer(model, cfg)
    start = time.perf_counter()
    losses = []
    for _ in range(50):
        _, rec = train_step(model, ds.x_f, ds.x_o, ds.y, av, cfg, optimizer=opt)
        losses.append(rec["total"])
    elapsed = time.perf_counter() - start
    ok = losses[-1] < losses[0] and elapsed < 10.0
    record(8, "Overfit sanity", ok, f"loss {losses[0]:.4f} -> {losses[-1]:.4f} in {elapsed:.2f}s")


# 9 -------------------------------------------------------------------------

def test_09_robustness_trend():
    start = time.perf_counter()
    drops = {"full": [], "ablation": []}
    for seed in range(5):
        cfg = ExperimentConfig(
            protocol="proportional_missing",
            synthetic=SyntheticSpec.easy(num_classes=2, per_class=100, seed=seed),
            folds=2,
            ratios=(0.0, 0.5),
            missing_modality="oct",
            ablation=True,
            seed=seed,
            train=TrainConfig(steps=60, batch_size=32, learning_rate=1e-2),
        )
        acc = {(s["model"], s["ratio"]): s["acc_mean"] for s in run_protocol(cfg).summary}
        for name in drops:
            drops[name].append(acc[(name, 0.0)] - acc[(name, 0.5)])
    elapsed = time.perf_counter() - start
    full, abl = float(np.mean(drops["full"])), float(np.mean(drops["ablation"]))
    ok = full <= abl and elapsed < 300
    record(9, "Robustness trend", ok,
           f"mean ACC drop 0 -> 0.5: full {full:.4f}, ablation {abl:.4f} ({elapsed:.0f}s)")


# 10 ------------------------------------------------------------------------

def test_10_auc_oracle():
    rng = np.random.default_rng(10)
    mismatches = 0
    for _ in range(100):
        n = int(rng.integers(2, 21))
        y = rng.integers(0, 2, size=n)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        s = rng.integers(0, 5, size=n) / 4.0  # coarse grid: many ties
        pos, neg = s[y == 1], s[y == 0]
        wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
        mismatches += binary_auc(y == 1, s) != wins / (pos.size * neg.size)
    hand = binary_auc(np.array([0, 0, 1, 1]) == 1, [0.1, 0.4, 0.35, 0.8])
    ok = mismatches == 0 and hand == 0.75
    record(10, "Metrics oracle", ok, f"{mismatches} mismatches on 100 instances, hand case {hand}")


# 11 ------------------------------------------------------------------------

def test_11_sweep_determinism(tmp_path):
    import json

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "schema": "lot_align.experiment/1",
        "protocol": "proportional_missing",
        "data": {"synthetic": {"num_classes": 2, "per_class": 12, "fundus_dim": 8, "oct_dim": 8}},
        "folds": 2,
        "ablation": True,
        "train": {"steps": 10, "batch_size": 8, "learning_rate": 0.01},
    }))
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        rc = cli_main(["--quiet", "--seed", "123", "sweep", "--config", str(cfg),
                       "--ratios", "0,0.25,0.5", "--out", str(out)])
        assert rc == 0
        outs.append((out / "report.json").read_bytes())
    record(11, "Determinism", outs[0] == outs[1], f"report.json identical ({len(outs[0])} bytes)")
