"""Asymmetric two-branch fusion classifier.

Fundus branch: three tokens (OT-projected OCT feature, fundus-space prototype,
fundus backbone feature) pass through per-source linear adapters and one
attention block, mean-pooled. OCT branch: OCT-space prototype concatenated
with the OCT backbone feature, through a dense stack. Both branch outputs are
concatenated and classified.

A missing modality is replaced by the opposite head's prediction; the same
prediction stands in for that modality's prototype feature. Nothing else in
the graph changes, so the parameter set is the same for every availability
pattern.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..gromov import FeaturePlan, projection_weights
from ..prototypes import PrototypeSet, cosine_alignment_loss
from . import autograd as ag
from .autograd import Tensor
from .layers import Attention, DenseStack, cross_entropy_node


@dataclass(frozen=True)
class ModelDims:
    in_f: int
    in_o: int
    num_classes: int
    embed: int = 16
    hidden: int = 32

    def __post_init__(self):
        if min(self.in_f, self.in_o, self.num_classes, self.embed, self.hidden) < 1:
            raise ValueError("all model widths must be >= 1")


@dataclass(frozen=True, eq=False)
class Availability:
    fundus: np.ndarray
    oct: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.fundus, dtype=bool)
        o = np.asarray(self.oct, dtype=bool)
        if f.shape != o.shape or f.ndim != 1:
            raise ValueError("availability flags must be 1-D and the same length")
        if np.any(~f & ~o):
            i = int(np.flatnonzero(~f & ~o)[0])
            raise ValueError(f"sample {i} has neither modality")
        object.__setattr__(self, "fundus", f)
        object.__setattr__(self, "oct", o)

    @classmethod
    def complete_batch(cls, n: int) -> Availability:
        return cls(np.ones(n, bool), np.ones(n, bool))

    @classmethod
    def oct_missing(cls, n: int) -> Availability:
        return cls(np.ones(n, bool), np.zeros(n, bool))

    @classmethod
    def fundus_missing(cls, n: int) -> Availability:
        return cls(np.zeros(n, bool), np.ones(n, bool))

    @property
    def complete(self) -> np.ndarray:
        return self.fundus & self.oct

    def __len__(self) -> int:
        return self.fundus.size

    def subset(self, idx) -> Availability:
        return Availability(self.fundus[idx], self.oct[idx])


class FusionModel:
    def __init__(self, dims: ModelDims, seed: int = 0, use_alignment: bool = True,
                 normalize_projection: bool = True):
        from ..numkit import seeded_rng

        rng = seeded_rng(seed)
        d, h = dims.embed, dims.hidden
        self.dims = dims
        self.seed = seed
        self.use_alignment = use_alignment
        self.normalize_projection = normalize_projection
        self.encoder_f = DenseStack([dims.in_f, h, d], rng, "encoder_f")
        self.encoder_o = DenseStack([dims.in_o, h, d], rng, "encoder_o")
        self.head_f2o = DenseStack([d, h, d], rng, "head_f2o")
        self.head_o2f = DenseStack([d, h, d], rng, "head_o2f")
        self.adapters = [DenseStack([d, d], rng, f"adapter_{k}") for k in ("ot", "proto", "backbone")]
        self.attention = Attention(d, rng, "attention")
        self.branch_o = DenseStack([2 * d, h, d], rng, "branch_o")
        self.classifier = DenseStack([2 * d, h, dims.num_classes], rng, "classifier")
        self.t_v = FeaturePlan.uniform(d, d)
        self.epoch = 0

    def modules(self):
        yield from (self.encoder_f, self.encoder_o, self.head_f2o, self.head_o2f)
        yield from self.adapters
        yield from (self.attention, self.branch_o, self.classifier)

    def parameters(self) -> list[Tensor]:
        return [p for m in self.modules() for p in m.parameters()]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(p.name, p) for p in self.parameters()]

    def n_params(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def get_state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def set_state(self, state: dict[str, np.ndarray]):
        for name, p in self.named_parameters():
            if state[name].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}")
            p.data = np.array(state[name], dtype=np.float64)

    def config(self) -> dict:
        return {
            "dims": asdict(self.dims),
            "seed": self.seed,
            "use_alignment": self.use_alignment,
            "normalize_projection": self.normalize_projection,
        }

    def embed(self, x_f, x_o) -> tuple[np.ndarray, np.ndarray]:
        """Encoder outputs as plain arrays (no graph)."""
        return (self.encoder_f(np.asarray(x_f, dtype=np.float64)).data,
                self.encoder_o(np.asarray(x_o, dtype=np.float64)).data)

    def projection_matrix(self) -> np.ndarray:
        T = self.t_v.matrix
        return projection_weights(T) if self.normalize_projection else T


def _scatter_prototypes(protos, complete, width):
    out = np.zeros((complete.size, width))
    if protos is not None:
        P = protos.protos if isinstance(protos, PrototypeSet) else np.asarray(protos)
        if P.shape != (int(complete.sum()), width):
            raise ValueError(f"prototype shape {P.shape} does not match complete rows")
        out[complete] = P
    return out


def fuse(model: FusionModel, e_f, e_o, c_f, c_o) -> tuple[Tensor, dict]:
    """Logits from the four per-sample features (the part after substitution)."""
    ad_ot, ad_proto, ad_bb = model.adapters
    if model.use_alignment:
        ot_fundus = ag.matmul(e_o, model.projection_matrix())
        tokens = ag.stack([ad_ot(ot_fundus), ad_proto(c_f), ad_bb(e_f)], axis=1)
        oct_in = ag.concat([c_o, e_o], axis=1)
    else:
        # ablation: backbone token in every slot, no prototype or OT input
        bb = ad_bb(e_f)
        tokens = ag.stack([bb, bb, bb], axis=1)
        oct_in = ag.concat([e_o, e_o], axis=1)
    fused_f = model.attention(tokens)
    fused_o = model.branch_o(oct_in)
    logits = model.classifier(ag.concat([fused_f, fused_o], axis=1))
    return logits, {"tokens": tokens, "fused_f": fused_f, "fused_o": fused_o}


def forward(model: FusionModel, x_f, x_o, availability: Availability,
            prototypes: tuple | None = None) -> tuple[Tensor, dict]:
    """Logits for a batch under the given availability pattern.

    Args:
        x_f, x_o: raw inputs ``(N, in_f)``, ``(N, in_o)``; rows of an absent
            modality are ignored.
        availability: per-sample presence flags.
        prototypes: ``(proto_o, proto_f)`` for the complete rows, in row
            order, used as the prototype features (training). Without them the
            heads supply the prototype features (inference).
    """
    if len(availability) != np.asarray(x_f).shape[0]:
        raise ValueError("availability length does not match the batch")
    fp, op = availability.fundus, availability.oct
    complete = availability.complete
    x_f = np.where(fp[:, None], np.asarray(x_f, dtype=np.float64), 0.0)
    x_o = np.where(op[:, None], np.asarray(x_o, dtype=np.float64), 0.0)

    e_f_enc = model.encoder_f(x_f)
    e_o_enc = model.encoder_o(x_o)
    sur_o = model.head_f2o(e_f_enc)
    sur_f = model.head_o2f(e_o_enc)
    e_f = ag.where_rows(fp, e_f_enc, sur_f)
    e_o = ag.where_rows(op, e_o_enc, sur_o)
    pred_o = model.head_f2o(e_f)
    pred_f = model.head_o2f(e_o)

    d = model.dims.embed
    if prototypes is not None:
        proto_o, proto_f = prototypes
        c_o = ag.where_rows(complete, _scatter_prototypes(proto_o, complete, d), pred_o)
        c_f = ag.where_rows(complete, _scatter_prototypes(proto_f, complete, d), pred_f)
    else:
        c_o, c_f = pred_o, pred_f

    logits, inter = fuse(model, e_f, e_o, c_f, c_o)
    idx = np.flatnonzero(complete)
    inter.update(
        e_f=e_f, e_o=e_o, c_f=c_f, c_o=c_o,
        pred_f2o=ag.take_rows(pred_o, idx),
        pred_o2f=ag.take_rows(pred_f, idx),
        complete_index=idx,
    )
    return logits, inter


def total_loss(logits: Tensor, y, pred_f2o: Tensor, proto_o, pred_o2f: Tensor, proto_f,
               weights=(1.0, 1.0, 1.0)) -> tuple[Tensor, dict]:
    """Weighted sum of cross-entropy and the two cosine alignment terms.

    Alignment terms cover complete pairs only; with none they are 0 and the
    components carry ``skipped=True``.
    """
    w_ce, w_oct, w_fundus = (float(w) for w in weights)
    ce = cross_entropy_node(logits, y)
    n_pairs = pred_f2o.shape[0]
    if n_pairs == 0 or proto_o is None or proto_f is None:
        loss = ag.weighted_sum([ce], [w_ce])
        comps = {"ce": float(ce.data), "p_oct": 0.0, "p_fundus": 0.0, "skipped": True}
        return loss, comps
    l_oct = ag.loss_node(pred_f2o, lambda X: cosine_alignment_loss(X, proto_o))
    l_fun = ag.loss_node(pred_o2f, lambda X: cosine_alignment_loss(X, proto_f))
    loss = ag.weighted_sum([ce, l_oct, l_fun], [w_ce, w_oct, w_fundus])
    comps = {
        "ce": float(ce.data),
        "p_oct": float(l_oct.data),
        "p_fundus": float(l_fun.data),
        "skipped": False,
    }
    return loss, comps
