"""Training loop: per-batch labeled plans, prototypes, and parameter updates.

Plans, prototypes and the feature coupling are computed from detached
encoder outputs and enter the loss as constants.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .. import io
from ..batch import EmbeddingBatch
from ..gromov import FeaturePlan, GwConfig, feature_plan, labeled_gw
from ..numkit import seeded_rng
from ..prototypes import match_distribution, sampled_prototypes, soft_prototypes
from ..transport import SinkhornConfig
from .model import Availability, FusionModel, ModelDims, forward, total_loss

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "lot_align.checkpoint/1"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    steps: int = 200
    batch_size: int = 32
    optimizer: str = "adam"
    seed: int = 0
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    gw_epsilon: float = 0.05
    gw_restarts: int = 0
    gw_outer_iters: int = 50
    feature_epsilon: float = 0.05
    prototype_mode: str = "expectation"

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.prototype_mode not in ("expectation", "sampled"):
            raise ValueError(f"unknown prototype_mode {self.prototype_mode!r}")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be >= 1 and steps >= 0")
        object.__setattr__(self, "loss_weights", tuple(float(w) for w in self.loss_weights))

    def gw_config(self) -> GwConfig:
        return GwConfig(
            epsilon=self.gw_epsilon,
            outer_iters=self.gw_outer_iters,
            restarts=self.gw_restarts,
            seed=self.seed,
            # prototypes only need plans to a few digits
            convergence_tol=1e-5,
            inner=SinkhornConfig(max_iters=1000, marginal_tol=1e-7),
        )


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad**2
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params, lr=1e-2):
        self.params = list(params)
        self.lr = lr

    def step(self):
        for p in self.params:
            if p.grad is not None:
                p.data = p.data - self.lr * p.grad


def make_optimizer(model: FusionModel, config: TrainConfig):
    if config.optimizer == "adam":
        return Adam(model.parameters(), lr=config.learning_rate)
    return SGD(model.parameters(), lr=config.learning_rate)


def batch_prototypes(model: FusionModel, x_f, x_o, y, availability: Availability,
                     config: TrainConfig, rng=None):
    """Soft prototypes ``(proto_o, proto_f)`` for the complete rows of a batch."""
    idx = np.flatnonzero(availability.complete)
    if idx.size == 0:
        return None
    e_f, e_o = model.embed(np.asarray(x_f)[idx], np.asarray(x_o)[idx])
    batch = EmbeddingBatch.from_arrays(e_f, e_o, np.asarray(y)[idx], model.dims.num_classes)
    t_fo = labeled_gw(batch, "fo", config.gw_config())
    t_of = t_fo.transpose()
    p_fo = match_distribution(t_fo)
    p_of = match_distribution(t_of)
    if config.prototype_mode == "sampled":
        rng = rng if rng is not None else seeded_rng(config.seed)
        return sampled_prototypes(p_fo, e_o, rng, "oct"), sampled_prototypes(p_of, e_f, rng, "fundus")
    return soft_prototypes(p_fo, e_o, "oct"), soft_prototypes(p_of, e_f, "fundus")


def compute_feature_plan(model: FusionModel, x_f, x_o, y, availability: Availability,
                         config: TrainConfig) -> FeaturePlan:
    """Feature coupling over all complete training pairs."""
    d = model.dims.embed
    idx = np.flatnonzero(availability.complete)
    if idx.size == 0:
        log.warning("no complete pairs; feature coupling left uniform")
        return FeaturePlan.uniform(d, d)
    e_f, e_o = model.embed(np.asarray(x_f)[idx], np.asarray(x_o)[idx])
    batch = EmbeddingBatch.from_arrays(e_f, e_o, np.asarray(y)[idx], model.dims.num_classes)
    gw = config.gw_config()
    t_of = labeled_gw(batch, "of", gw)
    # once per epoch, so solve the feature coupling to the default tolerance
    return feature_plan(batch, t_of, replace(gw, epsilon=config.feature_epsilon, inner=SinkhornConfig()))


def train_step(model: FusionModel, x_f, x_o, y, availability: Availability,
               config: TrainConfig, rng=None, optimizer=None) -> tuple[FusionModel, dict]:
    """One gradient update on a batch; returns the (mutated) model and a loss record."""
    optimizer = optimizer or make_optimizer(model, config)
    weights = config.loss_weights
    protos = None
    if model.use_alignment:
        protos = batch_prototypes(model, x_f, x_o, y, availability, config, rng)
    logits, inter = forward(model, x_f, x_o, availability, protos)
    proto_o, proto_f = protos if protos is not None else (None, None)
    if not model.use_alignment:
        weights = (weights[0], 0.0, 0.0)
    loss, comps = total_loss(logits, y, inter["pred_f2o"], proto_o, inter["pred_o2f"], proto_f, weights)
    model.zero_grad()
    loss.backward()
    optimizer.step()
    record = {"total": float(loss.data), **comps}
    return model, record


def fit(model: FusionModel, x_f, x_o, y, availability: Availability,
        config: TrainConfig) -> list[dict]:
    """Minibatch training; the feature coupling is refreshed every epoch."""
    rng = seeded_rng(config.seed)
    x_f = np.asarray(x_f, dtype=np.float64)
    x_o = np.asarray(x_o, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = y.size
    optimizer = make_optimizer(model, config)
    steps_per_epoch = max(1, -(-n // config.batch_size))
    if model.use_alignment:
        model.t_v = compute_feature_plan(model, x_f, x_o, y, availability, config)
    history = []
    order = rng.permutation(n)
    for step in range(config.steps):
        k = step % steps_per_epoch
        if k == 0 and step > 0:
            model.epoch += 1
            if model.use_alignment:
                model.t_v = compute_feature_plan(model, x_f, x_o, y, availability, config)
            order = rng.permutation(n)
        idx = np.sort(order[k * config.batch_size:(k + 1) * config.batch_size])
        _, rec = train_step(model, x_f[idx], x_o[idx], y[idx], availability.subset(idx),
                            config, rng, optimizer)
        rec["step"] = step
        history.append(rec)
    if config.steps and model.use_alignment:
        model.epoch += 1
        model.t_v = compute_feature_plan(model, x_f, x_o, y, availability, config)
    return history


def predict_proba(model: FusionModel, x_f, x_o, availability: Availability) -> np.ndarray:
    logits, _ = forward(model, x_f, x_o, availability)
    Z = logits.data - logits.data.max(axis=1, keepdims=True)
    P = np.exp(Z)
    return P / P.sum(axis=1, keepdims=True)


def save_checkpoint(model: FusionModel, path, extra: dict | None = None) -> Path:
    """JSON header line, then every parameter in matrix text format.

    The feature coupling goes next to it as ``<stem>.tv.mat`` plus a JSON
    sidecar; the header records its digest.
    """
    path = Path(path)
    tv_path = path.with_suffix(".tv.mat")
    io.write_matrix(tv_path, model.t_v.matrix)
    io.write_json(tv_path.with_suffix(".json"), model.t_v.metadata())
    named = model.named_parameters()
    header = {
        "format": CHECKPOINT_FORMAT,
        "model": model.config(),
        "epoch": model.epoch,
        "t_v_file": tv_path.name,
        "t_v_digest": io.digest(model.t_v.matrix),
        "params": [{"name": n, "shape": list(p.data.shape)} for n, p in named],
        "extra": extra or {},
    }
    parts = [json.dumps(header, sort_keys=True) + "\n"]
    parts.extend(io.format_matrix(p.data) for _, p in named)
    path.write_text("".join(parts), encoding="utf-8")
    return path


def load_checkpoint(path) -> tuple[FusionModel, dict]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    first, _, rest = text.partition("\n")
    header = json.loads(first)
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a checkpoint: {path}")
    cfg = header["model"]
    model = FusionModel(ModelDims(**cfg["dims"]), seed=cfg["seed"],
                        use_alignment=cfg["use_alignment"],
                        normalize_projection=cfg["normalize_projection"])
    blocks = io.read_matrix_blocks(rest)
    specs = header["params"]
    if len(blocks) != len(specs):
        raise ValueError("checkpoint parameter count mismatch")
    state = {s["name"]: b.reshape(s["shape"]) for s, b in zip(specs, blocks)}
    model.set_state(state)
    tv = io.read_matrix(path.parent / header["t_v_file"])
    if io.digest(tv) != header["t_v_digest"]:
        raise ValueError("feature coupling file does not match the checkpoint digest")
    meta_path = (path.parent / header["t_v_file"]).with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    model.t_v = FeaturePlan(tv, epsilon=meta.get("epsilon"), residual=meta.get("residual", 0.0),
                            source_digest=meta.get("source_digest"))
    model.epoch = header["epoch"]
    return model, header
