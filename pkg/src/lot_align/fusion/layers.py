"""Dense stacks, single-head attention over a fixed token set, cross-entropy."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor


def param(values, name: str) -> Tensor:
    return Tensor(np.array(values, dtype=np.float64), requires_grad=True, name=name)


class DenseStack:
    """Affine layers with ``tanh`` between them (none after the last)."""

    def __init__(self, widths, rng: np.random.Generator, name: str = "dense"):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"bad width chain {widths}")
        self.widths = widths
        self.name = name
        self.layers = []
        for k, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            W = rng.normal(0.0, 1.0 / np.sqrt(a), size=(a, b))
            self.layers.append((param(W, f"{name}.{k}.W"), param(np.zeros(b), f"{name}.{k}.b")))

    @classmethod
    def from_params(cls, layers, name: str = "dense") -> DenseStack:
        obj = cls.__new__(cls)
        obj.layers = [(param(W, f"{name}.{k}.W"), param(b, f"{name}.{k}.b"))
                      for k, (W, b) in enumerate(layers)]
        obj.widths = [obj.layers[0][0].shape[0]] + [W.shape[1] for W, _ in obj.layers]
        obj.name = name
        return obj

    @property
    def in_width(self) -> int:
        return self.widths[0]

    @property
    def out_width(self) -> int:
        return self.widths[-1]

    def parameters(self):
        for W, b in self.layers:
            yield W
            yield b

    def __call__(self, X):
        return dense_apply(self, X)


def dense_apply(stack: DenseStack, X) -> Tensor:
    X = X if isinstance(X, Tensor) else ag.constant(X)
    if X.shape[-1] != stack.in_width:
        raise ValueError(f"{stack.name}: input width {X.shape[-1]} != {stack.in_width}")
    h = X
    last = len(stack.layers) - 1
    for k, (W, b) in enumerate(stack.layers):
        h = ag.add(ag.matmul(h, W), b)
        if k < last:
            h = ag.tanh(h)
    return h


class Attention:
    """Single-head scaled dot-product attention with learned Q/K/V maps."""

    n_tokens = 3

    def __init__(self, d: int, rng: np.random.Generator, name: str = "attn"):
        self.d = d
        self.name = name
        s = 1.0 / np.sqrt(d)
        self.Wq = param(rng.normal(0.0, s, size=(d, d)), f"{name}.Wq")
        self.Wk = param(rng.normal(0.0, s, size=(d, d)), f"{name}.Wk")
        self.Wv = param(rng.normal(0.0, s, size=(d, d)), f"{name}.Wv")

    def parameters(self):
        yield self.Wq
        yield self.Wk
        yield self.Wv

    def __call__(self, tokens):
        return attention_apply(self, tokens)


def attention_apply(block: Attention, tokens, return_weights: bool = False):
    """Attend over 3 tokens and mean-pool the outputs.

    ``tokens`` is ``(3, d)`` or batched ``(N, 3, d)``; the result drops the
    token axis.
    """
    tokens = tokens if isinstance(tokens, Tensor) else ag.constant(tokens)
    if tokens.data.ndim not in (2, 3) or tokens.shape[-2] != Attention.n_tokens:
        raise ValueError(f"attention expects exactly 3 tokens, got shape {tokens.shape}")
    if tokens.shape[-1] != block.d:
        raise ValueError(f"token width {tokens.shape[-1]} != {block.d}")
    q = ag.matmul(tokens, block.Wq)
    k = ag.matmul(tokens, block.Wk)
    v = ag.matmul(tokens, block.Wv)
    scores = ag.scale(ag.matmul(q, ag.transpose(k)), 1.0 / np.sqrt(block.d))
    weights = ag.softmax(scores, axis=-1)
    out = ag.mean(ag.matmul(weights, v), axis=-2)
    if return_weights:
        return out, weights.data
    return out


def softmax_cross_entropy(logits, y) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient ``(softmax - onehot) / N``."""
    Z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, c = Z.shape
    if y.shape != (n,):
        raise ValueError("labels and logits disagree on batch size")
    if n and (y.min() < 0 or y.max() >= c):
        raise ValueError(f"label out of range for {c} classes")
    if n == 0:
        return 0.0, np.zeros_like(Z)
    shifted = Z - Z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -logp[rows, y].mean()
    grad = np.exp(logp)
    grad[rows, y] -= 1.0
    return float(loss), grad / n


def cross_entropy_node(logits: Tensor, y) -> Tensor:
    return ag.loss_node(logits, lambda Z: softmax_cross_entropy(Z, y))
