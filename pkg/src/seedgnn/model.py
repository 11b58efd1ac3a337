"""SeedGNN: pair-space convolution plus Hungarian-gated percolation."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .assignment import Matching, hungarian_max
from .graphs import GraphPairInstance, make_rng
from .nnkit import (AdamState, Mlp, adam_step, cross_entropy_layer, mlp_backward, mlp_forward,
                    symmetric_normalize, symmetric_normalize_backward, truth_mask)
from .pairspace import check_pair_budget, encode_seeds, propagate

log = logging.getLogger(__name__)

VARIANTS = ("full", "x", "van", "per", "hun")
CHECKPOINT_TAG = "seedgnn-checkpoint"
CHECKPOINT_VERSION = 1
SQUASHES = ("none", "log1p", "mean", "meanlog", "lognorm")
NORM_EPS = 1e-8
# channels flatter than this are treated as constant (output 0, no gradient)
FLAT_VAR = 1e-14


class CheckpointError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    pass


class NonFiniteActivations(FloatingPointError):
    def __init__(self, layer: int):
        super().__init__(f"non-finite similarity scores in layer {layer + 1}")
        self.layer = layer


@dataclass(frozen=True)
class ModelDims:
    L: int = 6
    d: int = 16
    K: int = 2
    hidden: int = 16
    rho_final_relu: bool = False
    squash: str = "lognorm"

    def __post_init__(self):
        if self.L < 1 or self.d < 2 or self.K < 1 or self.hidden < 1:
            raise ValueError(f"invalid dims {self}")
        if self.squash not in SQUASHES:
            raise ValueError(f"unknown squash {self.squash!r}; expected one of {SQUASHES}")

    def phi_sizes(self, layer: int) -> List[int]:
        in_dim = 1 if layer == 0 else self.d
        return [in_dim] + [self.hidden] * (self.K - 1) + [self.d - 1]

    def rho_sizes(self) -> List[int]:
        return [self.d - 1] + [self.hidden] * (self.K - 1) + [1]


class SeedGnnModel:
    """Weights of the ``L`` layer networks ``phi_l`` and ``rho_l``.

    ``variant`` selects the ablations: ``x`` drops the propagation, ``van``
    drops the percolation channel, ``per`` passes the full soft correspondence
    and ``hun`` passes only the 0/1 Hungarian matching.
    """

    def __init__(self, dims: ModelDims, phi: Sequence[Mlp], rho: Sequence[Mlp],
                 variant: str = "full", epsilon: float = 1e-9):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        if len(phi) != dims.L or len(rho) != dims.L:
            raise ValueError("need one phi and one rho network per layer")
        for l, (f, r) in enumerate(zip(phi, rho)):
            if f.sizes != dims.phi_sizes(l) or r.sizes != dims.rho_sizes():
                raise ValueError(f"layer {l} network sizes do not match {dims}")
        self.dims = dims
        self.phi = list(phi)
        self.rho = list(rho)
        self.variant = variant
        self.epsilon = epsilon

    @classmethod
    def init(cls, dims: ModelDims = ModelDims(), variant: str = "full", seed: int = 0,
             epsilon: float = 1e-9) -> "SeedGnnModel":
        rng = make_rng(seed, 0xA11C)
        phi = [Mlp.init(dims.phi_sizes(l), rng) for l in range(dims.L)]
        rho = [Mlp.init(dims.rho_sizes(), rng, dims.rho_final_relu) for _ in range(dims.L)]
        return cls(dims, phi, rho, variant, epsilon)

    def networks(self) -> List[Mlp]:
        return [net for pair in zip(self.phi, self.rho) for net in pair]

    def parameters(self) -> List[np.ndarray]:
        return [p for net in self.networks() for p in net.parameters()]

    def gradients(self) -> List[np.ndarray]:
        return [g for net in self.networks() for g in net.gradients()]

    def zero_grad(self) -> None:
        for net in self.networks():
            net.zero_grad()

    def copy(self) -> "SeedGnnModel":
        clone = SeedGnnModel.init(self.dims, self.variant, 0, self.epsilon)
        for dst, src in zip(clone.parameters(), self.parameters()):
            dst[...] = src
        return clone


@dataclass
class LayerRecord:
    Y: np.ndarray
    R: np.ndarray
    matching: Matching
    X: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None
    m: Optional[np.ndarray] = None
    x: Optional[np.ndarray] = None
    P_row: Optional[np.ndarray] = None
    P_col: Optional[np.ndarray] = None
    phi_cache: Optional[list] = field(default=None, repr=False)
    rho_cache: Optional[list] = field(default=None, repr=False)
    sq_ctx: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class LayerTrace:
    n1: int
    n2: int
    layers: List[LayerRecord]

    @property
    def final_matching(self) -> Matching:
        return self.layers[-1].matching


def _squash(kind: str, h: np.ndarray):
    """Feature compression applied to propagated features before phi; returns (out, ctx)."""
    if kind == "none":
        return h, None
    if kind == "log1p":
        return np.log1p(h), None
    if kind == "lognorm":
        # per-channel standardisation over all node pairs of the instance
        v = np.log1p(h)
        var = v.var(axis=0)
        live = var > FLAT_VAR
        sd = np.sqrt(var + NORM_EPS)
        u = np.where(live, (v - v.mean(axis=0)) / sd, 0.0)
        return u, (u, sd, live)
    mu = h.mean(axis=0) + 1e-12
    u = h / mu
    if kind == "mean":
        return u, mu
    return np.log1p(u), mu


def _squash_backward(kind: str, h: np.ndarray, ctx, g: np.ndarray) -> np.ndarray:
    if kind == "none":
        return g
    if kind == "log1p":
        return g / (1.0 + h)
    if kind == "lognorm":
        u, sd, live = ctx
        gv = np.where(live, (g - g.mean(axis=0) - u * (g * u).mean(axis=0)) / sd, 0.0)
        return gv / (1.0 + h)
    mu = ctx
    if kind == "meanlog":
        g = g / (1.0 + h / mu)
    # u = h / mu(h), mu = mean over rows
    return g / mu - (g * h).sum(axis=0) / (mu * mu * h.shape[0])


def forward(model: SeedGnnModel, inst: GraphPairInstance, keep_cache: bool = True,
            frozen_matchings: Optional[Sequence[Matching]] = None) -> LayerTrace:
    """Run all layers; ``frozen_matchings`` replaces the per-layer Hungarian output."""
    n1, n2 = inst.n1, inst.n2
    N = n1 * n2
    d = model.dims.d
    check_pair_budget(n1, n2, d)
    variant = model.variant
    s = encode_seeds(inst.seeds, n1, n2)
    layers = []
    for l in range(model.dims.L):
        H = s if variant == "x" else propagate(inst.g1, s, inst.g2)
        h = H.reshape(N, -1)
        u, sq_ctx = _squash(model.dims.squash, h)
        m, phi_cache = mlp_forward(model.phi[l], u)
        x, rho_cache = mlp_forward(model.rho[l], m)
        X = x.reshape(n1, n2)
        Y, P_row, P_col = symmetric_normalize(X, return_parts=True)
        if not np.all(np.isfinite(Y)):
            raise NonFiniteActivations(l)
        matching = hungarian_max(Y) if frozen_matchings is None else frozen_matchings[l]
        R = matching.to_matrix()
        if variant == "full":
            z = Y * R
        elif variant == "per":
            z = Y
        elif variant == "hun":
            z = R
        else:
            z = np.zeros_like(Y)
        if l < model.dims.L - 1:
            s = np.concatenate([m, z.reshape(N, 1)], axis=1).reshape(n1, n2, d)
        rec = LayerRecord(Y=Y, R=R, matching=matching)
        if keep_cache:
            rec.X, rec.z, rec.h, rec.m, rec.x = X, z, h, m, x
            rec.sq_ctx = sq_ctx
            rec.P_row, rec.P_col = P_row, P_col
            rec.phi_cache, rec.rho_cache = phi_cache, rho_cache
        layers.append(rec)
    return LayerTrace(n1, n2, layers)


def layer_losses(model: SeedGnnModel, trace: LayerTrace, truth) -> List[float]:
    T = truth_mask(truth, trace.n1, trace.n2)
    return [cross_entropy_layer(rec.Y, truth, model.epsilon, T)[0] for rec in trace.layers]


def loss_and_gradients(model: SeedGnnModel, trace: LayerTrace, inst: GraphPairInstance):
    """Layer-summed cross-entropy and its gradient, accumulated into the model.

    The Hungarian matchings act as constant masks. Gradients are zeroed first
    and can be read back with ``model.gradients()``.
    """
    if inst.truth is None:
        raise ValueError("instance has no ground truth")
    if trace.layers[0].phi_cache is None:
        raise ValueError("trace was produced without keep_cache=True")
    n1, n2 = trace.n1, trace.n2
    N = n1 * n2
    d = model.dims.d
    variant = model.variant
    T = truth_mask(inst.truth, n1, n2)
    model.zero_grad()
    total = 0.0
    g_next = None  # d loss / d s_{l+1}, shape (N, d)
    for l in reversed(range(model.dims.L)):
        rec = trace.layers[l]
        loss, gY = cross_entropy_layer(rec.Y, inst.truth, model.epsilon, T)
        total += loss
        gm = None
        if g_next is not None:
            gm = g_next[:, : d - 1]
            gz = g_next[:, d - 1].reshape(n1, n2)
            if variant == "full":
                gY = gY + gz * rec.R
            elif variant == "per":
                gY = gY + gz
        gX = symmetric_normalize_backward(rec.P_row, rec.P_col, gY)
        g_m = mlp_backward(model.rho[l], rec.rho_cache, gX.reshape(N, 1))
        if gm is not None:
            g_m = g_m + gm
        g_h = mlp_backward(model.phi[l], rec.phi_cache, g_m)
        g_h = _squash_backward(model.dims.squash, rec.h, rec.sq_ctx, g_h)
        if l > 0:
            if variant == "x":
                g_next = g_h
            else:
                g_next = propagate(inst.g1, g_h.reshape(n1, n2, -1), inst.g2).reshape(N, -1)
    return total, model.gradients()


def predict(model: SeedGnnModel, inst: GraphPairInstance) -> Matching:
    """Matching of the final layer."""
    return forward(model, inst, keep_cache=False).final_matching


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    lr: float = 1e-2
    epochs: int = 10
    shuffle_seed: int = 0
    checkpoint_every: int = 0
    checkpoint_path: Optional[Path] = None
    loss_log: Optional[Path] = None

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 1:
            raise ValueError("learning rate and epochs must be positive")


@dataclass
class StepRecord:
    step: int
    epoch: int
    instance: int
    loss: float
    layer_losses: List[float]


def _diagnose(trace: LayerTrace, losses: Sequence[float]) -> int:
    for l, (rec, loss) in enumerate(zip(trace.layers, losses)):
        if not (np.isfinite(loss) and np.all(np.isfinite(rec.Y))):
            return l
    return len(losses) - 1


def train(model: SeedGnnModel, dataset: Sequence[GraphPairInstance], cfg: TrainConfig = TrainConfig(),
          progress: bool = False) -> List[StepRecord]:
    """Per-example ADAM over ``cfg.epochs`` shuffled passes; mutates ``model``."""
    for k, inst in enumerate(dataset):
        if inst.truth is None:
            raise ValueError(f"training instance {k} has no ground truth")
    params = model.parameters()
    state = AdamState.for_params(params, lr=cfg.lr)
    history: List[StepRecord] = []
    writer = None
    fh = None
    if cfg.loss_log is not None:
        fh = open(cfg.loss_log, "w", newline="", encoding="utf-8")
        writer = csv.writer(fh)
        writer.writerow(["step", "epoch", "instance", "loss"] + [f"layer{l + 1}" for l in range(model.dims.L)])
    try:
        step = 0
        t0 = time.perf_counter()
        for epoch in range(cfg.epochs):
            order = make_rng(cfg.shuffle_seed, epoch).permutation(len(dataset))
            for k in order:
                inst = dataset[k]
                with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                    try:
                        trace = forward(model, inst)
                    except NonFiniteActivations as exc:
                        raise TrainingDiverged(f"non-finite forward pass at step {step} "
                                               f"(epoch {epoch}, instance {k}, layer {exc.layer + 1})") from exc
                    losses = layer_losses(model, trace, inst.truth)
                    total = float(sum(losses))
                    if not np.isfinite(total):
                        bad = _diagnose(trace, losses)
                        raise TrainingDiverged(
                            f"non-finite loss at step {step} (epoch {epoch}, instance {k}, layer {bad + 1})")
                    _, grads = loss_and_gradients(model, trace, inst)
                    if not all(np.all(np.isfinite(g)) for g in grads):
                        raise TrainingDiverged(
                            f"non-finite gradient at step {step} (epoch {epoch}, instance {k})")
                adam_step(state, params, grads)
                rec = StepRecord(step, epoch, int(k), total, losses)
                history.append(rec)
                if writer is not None:
                    writer.writerow([step, epoch, int(k), repr(total)] + [repr(v) for v in losses])
                step += 1
                if cfg.checkpoint_every and cfg.checkpoint_path and step % cfg.checkpoint_every == 0:
                    save_checkpoint(model, cfg.checkpoint_path)
            if progress:
                ep = [r.loss for r in history if r.epoch == epoch]
                log.info("epoch %d mean loss %.4f (%.1fs)", epoch, np.mean(ep), time.perf_counter() - t0)
    finally:
        if fh is not None:
            fh.close()
    if cfg.checkpoint_path is not None:
        save_checkpoint(model, cfg.checkpoint_path)
    return history


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: SeedGnnModel, path) -> None:
    """Versioned plain-text checkpoint; floats are written with ``repr`` (exact)."""
    d = model.dims
    lines = [
        f"{CHECKPOINT_TAG} v{CHECKPOINT_VERSION}",
        f"variant {model.variant}",
        f"dims L={d.L} d={d.d} K={d.K} hidden={d.hidden} rho_final_relu={int(d.rho_final_relu)} squash={d.squash}",
        f"epsilon {model.epsilon!r}",
    ]
    for l in range(d.L):
        for name, net in (("phi", model.phi[l]), ("rho", model.rho[l])):
            for k, layer in enumerate(net.layers):
                lines.append(f"W {name} {l} {k} {layer.in_dim} {layer.out_dim}")
                lines.extend(" ".join(repr(float(v)) for v in row) for row in layer.W)
                lines.append(f"b {name} {l} {k} {layer.out_dim}")
                lines.append(" ".join(repr(float(v)) for v in layer.b))
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_dims(tokens: Sequence[str]) -> ModelDims:
    kw = dict(t.split("=", 1) for t in tokens)
    out = {k: int(kw.pop(k)) for k in ("L", "d", "K", "hidden")}
    out["rho_final_relu"] = bool(int(kw.pop("rho_final_relu")))
    out["squash"] = kw.pop("squash")
    if kw or out["squash"] not in SQUASHES:
        raise ValueError(f"unexpected dims fields {tokens}")
    return ModelDims(**out)


def load_checkpoint(path) -> SeedGnnModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    it = iter(lines)

    def nxt() -> str:
        try:
            return next(it)
        except StopIteration:
            raise CheckpointError(f"{path}: truncated checkpoint") from None

    head = nxt().split()
    if len(head) != 2 or head[0] != CHECKPOINT_TAG:
        raise CheckpointError(f"{path}: not a SeedGNN checkpoint")
    if head[1] != f"v{CHECKPOINT_VERSION}":
        raise CheckpointError(f"{path}: unsupported checkpoint version {head[1]} "
                              f"(expected v{CHECKPOINT_VERSION})")
    try:
        variant = nxt().split()[1]
        dims = _parse_dims(nxt().split()[1:])
        epsilon = float(nxt().split()[1])
        model = SeedGnnModel.init(dims, variant, 0, epsilon)
        for l in range(dims.L):
            for name, net in (("phi", model.phi[l]), ("rho", model.rho[l])):
                for k, layer in enumerate(net.layers):
                    hdr = nxt().split()
                    if hdr[:4] != ["W", name, str(l), str(k)] or tuple(map(int, hdr[4:])) != layer.W.shape:
                        raise CheckpointError(f"{path}: unexpected block header {' '.join(hdr)!r}")
                    layer.W[...] = [[float(v) for v in nxt().split()] for _ in range(layer.in_dim)]
                    hdr = nxt().split()
                    if hdr[:4] != ["b", name, str(l), str(k)]:
                        raise CheckpointError(f"{path}: unexpected block header {' '.join(hdr)!r}")
                    layer.b[...] = [float(v) for v in nxt().split()]
        if nxt() != "end":
            raise CheckpointError(f"{path}: missing end marker")
    except (IndexError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
    return model
