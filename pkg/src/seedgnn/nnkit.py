"""Small float64 neural-network kit with explicit backward functions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .graphs import GroundTruth


@dataclass
class DenseLayer:
    W: np.ndarray
    b: np.ndarray
    gW: np.ndarray = field(init=False, repr=False)
    gb: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ValueError(f"bad layer shapes W{self.W.shape} b{self.b.shape}")
        self.zero_grad()

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "DenseLayer":
        # He scaling, zero bias
        W = rng.normal(0.0, np.sqrt(2.0 / in_dim), size=(in_dim, out_dim))
        return cls(W, np.zeros(out_dim))

    def zero_grad(self) -> None:
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)

    @property
    def in_dim(self) -> int:
        return self.W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W.shape[1]


class Mlp:
    """``K`` dense layers with ReLU after each; ``final_relu=False`` leaves the last linear."""

    def __init__(self, layers: Sequence[DenseLayer], final_relu: bool = True):
        if not layers:
            raise ValueError("an MLP needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")
        self.layers = list(layers)
        self.final_relu = final_relu

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator, final_relu: bool = True) -> "Mlp":
        return cls([DenseLayer.init(a, b, rng) for a, b in zip(sizes, sizes[1:])], final_relu)

    @property
    def sizes(self) -> List[int]:
        return [self.layers[0].in_dim] + [l.out_dim for l in self.layers]

    def parameters(self) -> List[np.ndarray]:
        return [p for l in self.layers for p in (l.W, l.b)]

    def gradients(self) -> List[np.ndarray]:
        return [g for l in self.layers for g in (l.gW, l.gb)]

    def zero_grad(self) -> None:
        for l in self.layers:
            l.zero_grad()

    def forward(self, x: np.ndarray):
        return mlp_forward(self, x)

    def backward(self, cache, g_out: np.ndarray) -> np.ndarray:
        return mlp_backward(self, cache, g_out)


def mlp_forward(p: Mlp, x: np.ndarray) -> Tuple[np.ndarray, list]:
    """Return the output and a cache of ``(input, pre-activation)`` per layer."""
    if x.ndim != 2 or x.shape[1] != p.layers[0].in_dim:
        raise ValueError(f"input shape {x.shape} does not match MLP input dim {p.layers[0].in_dim}")
    cache = []
    last = len(p.layers) - 1
    for k, layer in enumerate(p.layers):
        a = x @ layer.W
        a += layer.b
        cache.append((x, a))
        x = a if (k == last and not p.final_relu) else np.maximum(a, 0.0)
    return x, cache


def mlp_backward(p: Mlp, cache: list, g_out: np.ndarray) -> np.ndarray:
    """Accumulate parameter gradients into the layers; return d loss / d input."""
    g = g_out
    for k, (layer, (x, a)) in enumerate(zip(reversed(p.layers), reversed(cache))):
        if k > 0 or p.final_relu:
            g = np.where(a > 0.0, g, 0.0)
        layer.gW += x.T @ g
        layer.gb += g.sum(axis=0)
        g = g @ layer.W.T
    return g


def row_softmax(X: np.ndarray) -> np.ndarray:
    Z = X - X.max(axis=1, keepdims=True)
    np.exp(Z, out=Z)
    Z /= Z.sum(axis=1, keepdims=True)
    return Z


def row_softmax_backward(P: np.ndarray, G: np.ndarray) -> np.ndarray:
    return P * (G - (G * P).sum(axis=1, keepdims=True))


def symmetric_normalize(X: np.ndarray, return_parts: bool = False):
    """``Y = (softmax_rows(X) + softmax_rows(X.T).T) / 2``."""
    P_row = row_softmax(X)
    P_col = row_softmax(X.T).T
    Y = 0.5 * (P_row + P_col)
    if return_parts:
        return Y, P_row, P_col
    return Y


def symmetric_normalize_backward(P_row: np.ndarray, P_col: np.ndarray, G: np.ndarray) -> np.ndarray:
    g_row = P_row * (G - (G * P_row).sum(axis=1, keepdims=True))
    g_col = P_col * (G - (G * P_col).sum(axis=0, keepdims=True))
    return 0.5 * (g_row + g_col)


def truth_mask(truth: GroundTruth, n1: int, n2: int) -> np.ndarray:
    T = np.zeros((n1, n2))
    idx = np.flatnonzero(truth.present)
    T[idx, truth.map[idx]] = 1.0
    return T


def cross_entropy_layer(Y: np.ndarray, truth: GroundTruth, epsilon: float = 1e-9,
                        mask: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray]:
    """Binary cross-entropy of ``Y`` against the truth permutation, and d loss / d Y.

    Rows whose counterpart is unknown count every entry as a fake pair.
    """
    T = truth_mask(truth, *Y.shape) if mask is None else mask
    pos = Y + epsilon
    neg = 1.0 - Y + epsilon
    loss = -(np.sum(T * np.log(pos)) + np.sum((1.0 - T) * np.log(neg)))
    grad = -T / pos + (1.0 - T) / neg
    return float(loss), grad


@dataclass
class AdamState:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **kw) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
    """One in-place ADAM update of ``params``."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter, gradient and moment lists differ in length")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def finite_difference_check(loss_fn: Callable[[], float], params: Sequence[np.ndarray],
                            grads: Sequence[np.ndarray], probes: int = 50,
                            rng: Optional[np.random.Generator] = None, h: float = 1e-5,
                            atol: float = 1e-6) -> float:
    """Max relative error between analytic ``grads`` and central differences.

    ``loss_fn`` must read the (mutated in place) ``params``. The relative error
    of one coordinate is ``|a - f| / max(|a|, |f|, atol)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    sizes = np.array([p.size for p in params], dtype=float)
    worst = 0.0
    for _ in range(probes):
        k = int(rng.choice(len(params), p=sizes / sizes.sum()))
        flat = params[k].reshape(-1)
        idx = int(rng.integers(flat.size))
        orig = flat[idx]
        flat[idx] = orig + h
        up = loss_fn()
        flat[idx] = orig - h
        down = loss_fn()
        flat[idx] = orig
        fd = (up - down) / (2.0 * h)
        a = float(grads[k].reshape(-1)[idx])
        err = abs(a - fd) / max(abs(a), abs(fd), atol)
        worst = max(worst, err)
    return worst


def directional_difference_check(loss_fn: Callable[[], float], params: Sequence[np.ndarray],
                                 grads: Sequence[np.ndarray], directions: int = 10,
                                 rng: Optional[np.random.Generator] = None, h: float = 1e-6,
                                 atol: float = 1e-6) -> float:
    """Max relative error of ``grads . v`` against central differences along random unit ``v``.

    Moves every parameter at once, so tiny individual components do not drown in
    the round-off of the loss. ``params`` are restored on return.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    base = [p.copy() for p in params]
    worst = 0.0
    try:
        for _ in range(directions):
            v = [rng.normal(size=p.shape) for p in params]
            norm = np.sqrt(sum(float((x * x).sum()) for x in v))
            v = [x / norm for x in v]
            a = sum(float((g * x).sum()) for g, x in zip(grads, v))
            for p, b, x in zip(params, base, v):
                p[...] = b + h * x
            up = loss_fn()
            for p, b, x in zip(params, base, v):
                p[...] = b - h * x
            down = loss_fn()
            fd = (up - down) / (2.0 * h)
            worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), atol))
    finally:
        for p, b in zip(params, base):
            p[...] = b
    return worst
