"""Separable space-time graph convolution over role nodes.

One layer computes sigma(A_s (A_t H) W): temporal mixing along the frame
axis per role, spatial mixing along the role axis per frame, then channel
mixing.  Adjacency is factored and, depending on the configuration, fully
learnable, scalar-parameterized, or frozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def _es(*args, **kw):
    return np.einsum(*args, optimize=True, **kw)

from .diffcore import DifferentiableOp, Rng, Tensor, register_op
from .errors import ConfigError, ShapeError

N_ROLES_DEFAULT = 11
N_FRAMES_DEFAULT = 5

ADJACENCY_VARIANTS = {
    1: "frozen all-ones",
    2: "frozen identity",
    3: "fully learnable, uniform init",
    4: "learnable alpha on the diagonal, zero off-diagonal",
    5: "learnable alpha on the diagonal, 1-alpha off-diagonal",
    6: "learnable alpha diagonal, learnable beta off-diagonal",
    7: "fully learnable, normal init",
    8: "fully learnable, uniform init, extra hidden layer",
}
FULLY_LEARNABLE_VARIANTS = (3, 7, 8)
SCALAR_VARIANTS = (4, 5, 6)


@dataclass(frozen=True)
class AdjacencyConfig:
    variant: int
    alpha_init: float = 1.0
    beta_init: float = 0.0

    def __post_init__(self):
        if self.variant not in ADJACENCY_VARIANTS:
            raise ConfigError(f"unknown adjacency variant {self.variant}; expected 1..8")


@dataclass
class AdjacencyPair:
    """Spatial [T, R, R] and temporal [R, T, T] adjacency of one layer."""

    a_s: np.ndarray
    a_t: np.ndarray
    config: AdjacencyConfig
    alpha: float = 1.0
    beta: float = 0.0
    layer_id: str = ""

    @property
    def n_learnable(self) -> int:
        v = self.config.variant
        if v in FULLY_LEARNABLE_VARIANTS:
            return self.a_s.size + self.a_t.size
        if v == 6:
            return 2
        if v in (4, 5):
            return 1
        return 0

    def _rematerialize_scalars(self):
        v = self.config.variant
        diag, off = self.alpha, {4: 0.0, 5: 1.0 - self.alpha, 6: self.beta}[v]
        t, r = self.a_s.shape[0], self.a_s.shape[1]
        eye_r, eye_t = np.eye(r), np.eye(self.a_t.shape[1])
        self.a_s = np.broadcast_to(diag * eye_r + off * (1.0 - eye_r), (t, r, r)).copy()
        self.a_t = np.broadcast_to(diag * eye_t + off * (1.0 - eye_t),
                                   (r,) + eye_t.shape).copy()

    def params(self) -> dict:
        v, pre = self.config.variant, self.layer_id
        if v in FULLY_LEARNABLE_VARIANTS:
            return {f"{pre}a_s": self.a_s, f"{pre}a_t": self.a_t}
        if v in (4, 5):
            return {f"{pre}alpha": np.array([self.alpha])}
        if v == 6:
            return {f"{pre}alpha": np.array([self.alpha]), f"{pre}beta": np.array([self.beta])}
        return {}

    def set_params(self, values: dict):
        v, pre = self.config.variant, self.layer_id
        if v in FULLY_LEARNABLE_VARIANTS:
            self.a_s = values[f"{pre}a_s"]
            self.a_t = values[f"{pre}a_t"]
        elif v in SCALAR_VARIANTS:
            self.alpha = float(values[f"{pre}alpha"][0])
            if v == 6:
                self.beta = float(values[f"{pre}beta"][0])
            self._rematerialize_scalars()

    def grads(self, da_s: np.ndarray, da_t: np.ndarray) -> dict:
        """Reduce dense adjacency cotangents to this config's parameters."""
        v, pre = self.config.variant, self.layer_id
        if v in FULLY_LEARNABLE_VARIANTS:
            return {f"{pre}a_s": da_s, f"{pre}a_t": da_t}
        if v in (1, 2):
            return {}
        diag = (np.trace(da_s, axis1=1, axis2=2).sum()
                + np.trace(da_t, axis1=1, axis2=2).sum())
        off = (da_s.sum() + da_t.sum()) - diag
        if v == 4:
            return {f"{pre}alpha": np.array([diag])}
        if v == 5:
            return {f"{pre}alpha": np.array([diag - off])}
        return {f"{pre}alpha": np.array([diag]), f"{pre}beta": np.array([off])}


def build_adjacency(config: AdjacencyConfig, rng: Rng,
                    n_roles=N_ROLES_DEFAULT, n_frames=N_FRAMES_DEFAULT,
                    layer_id="") -> AdjacencyPair:
    """Materialize one layer's adjacency pair for the given variant."""
    r, t = n_roles, n_frames
    v = config.variant
    if v == 1:
        a_s, a_t = np.ones((t, r, r)), np.ones((r, t, t))
    elif v == 2:
        a_s = np.broadcast_to(np.eye(r), (t, r, r)).copy()
        a_t = np.broadcast_to(np.eye(t), (r, t, t)).copy()
    elif v in (3, 8):
        a_s = rng.uniform(-1.0 / math.sqrt(r), 1.0 / math.sqrt(r), (t, r, r))
        a_t = rng.uniform(-1.0 / math.sqrt(t), 1.0 / math.sqrt(t), (r, t, t))
    elif v == 7:
        a_s = rng.normal(0.0, 1.0 / math.sqrt(r), (t, r, r))
        a_t = rng.normal(0.0, 1.0 / math.sqrt(t), (r, t, t))
    else:
        pair = AdjacencyPair(a_s=np.empty((t, r, r)), a_t=np.empty((r, t, t)),
                             config=config, alpha=config.alpha_init,
                             beta=config.beta_init, layer_id=layer_id)
        pair._rematerialize_scalars()
        return pair
    return AdjacencyPair(a_s=a_s, a_t=a_t, config=config, layer_id=layer_id)


@dataclass
class GcnLayer:
    adjacency: AdjacencyPair
    w: np.ndarray  # [C_in, C_out]
    activation: str = "tanh"  # tanh for hidden layers, identity for the last
    layer_id: str = ""

    def params(self) -> dict:
        out = {f"{self.layer_id}w": self.w}
        out.update(self.adjacency.params())
        return out

    def set_params(self, values: dict):
        self.w = values[f"{self.layer_id}w"]
        self.adjacency.set_params(values)


def _gcn_forward(layer: GcnLayer, h: np.ndarray):
    """h: [N, C_in, R, T] -> ([N, C_out, R, T], ctx)."""
    a_s, a_t = layer.adjacency.a_s, layer.adjacency.a_t
    h1 = _es("rtj,ncrj->ncrt", a_t, h)
    h2 = _es("trp,ncpt->ncrt", a_s, h1)
    z = _es("co,ncrt->nort", layer.w, h2)
    out = np.tanh(z) if layer.activation == "tanh" else z
    return out, (h, h1, h2, out)


def _gcn_backward(layer: GcnLayer, ctx, dout: np.ndarray):
    h, h1, h2, out = ctx
    a_s, a_t = layer.adjacency.a_s, layer.adjacency.a_t
    dz = dout * (1.0 - out**2) if layer.activation == "tanh" else dout
    dw = _es("ncrt,nort->co", h2, dz)
    dh2 = _es("co,nort->ncrt", layer.w, dz)
    da_s = _es("ncrt,ncpt->trp", dh2, h1)
    dh1 = _es("trp,ncrt->ncpt", a_s, dh2)
    da_t = _es("ncrt,ncrj->rtj", dh1, h)
    dh = _es("rtj,ncrt->ncrj", a_t, dh1)
    return dh, da_s, da_t, dw


def gcn_layer_forward(layer: GcnLayer, h: Tensor) -> Tensor:
    """One separable space-time convolution of [C_in, R, T] features."""
    if len(h.shape) != 3:
        raise ShapeError(f"expected [C, R, T], got {h.shape}")
    c, r, t = h.shape
    if layer.w.shape[0] != c:
        raise ShapeError(f"layer expects {layer.w.shape[0]} channels, got {c}")
    if layer.adjacency.a_s.shape != (t, r, r) or layer.adjacency.a_t.shape != (r, t, t):
        raise ShapeError(
            f"adjacency shapes {layer.adjacency.a_s.shape}/{layer.adjacency.a_t.shape} "
            f"do not match features {h.shape}")
    out, _ = _gcn_forward(layer, h.array[None])
    return Tensor(out[0])


def build_stack(config: AdjacencyConfig, rng: Rng, channels=(2, 32, 64),
                n_roles=N_ROLES_DEFAULT, n_frames=N_FRAMES_DEFAULT):
    """Encoder stack; variant 8 inserts one extra hidden layer."""
    channels = list(channels)
    if config.variant == 8:
        channels.insert(-1, channels[-2])
    layers = []
    for li, (c_in, c_out) in enumerate(zip(channels[:-1], channels[1:])):
        layer_id = f"gcn{li}."
        adj = build_adjacency(config, rng.child(li), n_roles, n_frames, layer_id=layer_id)
        w = rng.uniform(-1.0 / math.sqrt(c_in), 1.0 / math.sqrt(c_in), (c_in, c_out))
        last = li == len(channels) - 2
        layers.append(GcnLayer(adjacency=adj, w=w,
                               activation="identity" if last else "tanh",
                               layer_id=layer_id))
    return layers


def rolegcn_forward(stack, x_role: Tensor) -> Tensor:
    """Apply the full encoder stack to [2, R, T] role coordinates."""
    h = x_role
    for layer in stack:
        h = gcn_layer_forward(layer, h)
    return h


# ---------------------------------------------------------------------------
# Gradient-check wrapper
# ---------------------------------------------------------------------------


class GcnLayerOp(DifferentiableOp):
    """One layer as a function of (H, A_s, A_t, W)."""

    name = "rolegcn.layer"

    def __init__(self, c_in=2, c_out=3, r=3, t=2, activation="tanh"):
        self.dims = (c_in, c_out, r, t)
        self.activation = activation

    def _layer(self, a_s, a_t, w):
        pair = AdjacencyPair(a_s=a_s.array, a_t=a_t.array, config=AdjacencyConfig(3))
        return GcnLayer(adjacency=pair, w=w.array, activation=self.activation)

    def forward(self, h, a_s, a_t, w):
        out, ctx = _gcn_forward(self._layer(a_s, a_t, w), h.array[None])
        return Tensor(out[0]), ctx

    def backward(self, inputs, ctx, cot):
        layer = self._layer(*inputs[1:])
        dh, da_s, da_t, dw = _gcn_backward(layer, ctx, cot.array[None])
        return Tensor(dh[0]), Tensor(da_s), Tensor(da_t), Tensor(dw)

    def sample_inputs(self, rng):
        c_in, c_out, r, t = self.dims
        return (Tensor(rng.normal(0.0, 1.0, (c_in, r, t))),
                Tensor(rng.normal(0.0, 0.5, (t, r, r))),
                Tensor(rng.normal(0.0, 0.5, (r, t, t))),
                Tensor(rng.normal(0.0, 0.5, (c_in, c_out))))


register_op(GcnLayerOp())
register_op(GcnLayerOp(activation="identity"))
