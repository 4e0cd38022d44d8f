"""Temporal-convolutional decoder: role features over T observed frames ->
K future coordinate frames.

Two 1-D convolutions along time (kernel 3, zero same-padding, weights
shared across roles) reduce channels to 2, then a learnable T x K linear
time projection expands the horizon.  No autoregression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _es(*args, **kw):
    return np.einsum(*args, optimize=True, **kw)

from .diffcore import DifferentiableOp, Rng, Tensor, register_op
from .errors import ShapeError

KERNEL_SIZE = 3


@dataclass
class TcnDecoder:
    conv1_w: np.ndarray  # [C_mid, C_in, kernel]
    conv1_b: np.ndarray
    conv2_w: np.ndarray  # [2, C_mid, kernel]
    conv2_b: np.ndarray
    proj: np.ndarray     # [T, K]
    layer_id: str = "dec."

    @classmethod
    def init(cls, rng: Rng, c_in=64, c_mid=32, t_frames=5, k_frames=10):
        def u(fan, shape):
            return rng.uniform(-1.0 / math.sqrt(fan), 1.0 / math.sqrt(fan), shape)

        return cls(conv1_w=u(c_in * KERNEL_SIZE, (c_mid, c_in, KERNEL_SIZE)),
                   conv1_b=np.zeros(c_mid),
                   conv2_w=u(c_mid * KERNEL_SIZE, (2, c_mid, KERNEL_SIZE)),
                   conv2_b=np.zeros(2),
                   proj=u(t_frames, (t_frames, k_frames)))

    def params(self) -> dict:
        pre = self.layer_id
        return {f"{pre}conv1_w": self.conv1_w, f"{pre}conv1_b": self.conv1_b,
                f"{pre}conv2_w": self.conv2_w, f"{pre}conv2_b": self.conv2_b,
                f"{pre}proj": self.proj}

    def set_params(self, values: dict):
        pre = self.layer_id
        self.conv1_w = values[f"{pre}conv1_w"]
        self.conv1_b = values[f"{pre}conv1_b"]
        self.conv2_w = values[f"{pre}conv2_w"]
        self.conv2_b = values[f"{pre}conv2_b"]
        self.proj = values[f"{pre}proj"]


def _windows(h: np.ndarray) -> np.ndarray:
    """Zero-pad the trailing time axis and gather kernel windows."""
    pad = KERNEL_SIZE // 2
    hp = np.pad(h, [(0, 0)] * (h.ndim - 1) + [(pad, pad)])
    return np.stack([hp[..., d:d + h.shape[-1]] for d in range(KERNEL_SIZE)], axis=-1)


def _conv_time(h, w, b):
    # h: [N, C_in, R, T]; w: [C_out, C_in, kernel]
    return _es("ncrtd,ocd->nort", _windows(h), w) + b[:, None, None]


def _conv_time_backward(h, w, dout):
    win = _windows(h)
    dw = _es("ncrtd,nort->ocd", win, dout)
    db = dout.sum(axis=(0, 2, 3))
    dwin = _es("ocd,nort->ncrtd", w, dout)
    pad = KERNEL_SIZE // 2
    t = h.shape[-1]
    dhp = np.zeros(h.shape[:-1] + (t + 2 * pad,))
    for d in range(KERNEL_SIZE):
        dhp[..., d:d + t] += dwin[..., d]
    return dhp[..., pad:pad + t], dw, db


def _decode_forward(dec: TcnDecoder, h: np.ndarray):
    """h: [N, C_in, R, T] -> ([N, K, R, 2], ctx)."""
    g1 = np.tanh(_conv_time(h, dec.conv1_w, dec.conv1_b))
    g2 = _conv_time(g1, dec.conv2_w, dec.conv2_b)
    # [N, 2, R, T] x [T, K] -> [N, K, R, 2]
    out = _es("ncrt,tk->nkrc", g2, dec.proj)
    return out, (h, g1, g2)


def _decode_backward(dec: TcnDecoder, ctx, dout: np.ndarray):
    h, g1, g2 = ctx
    dproj = _es("ncrt,nkrc->tk", g2, dout)
    dg2 = _es("nkrc,tk->ncrt", dout, dec.proj)
    dg1_pre, dw2, db2 = _conv_time_backward(g1, dec.conv2_w, dg2)
    dg1 = dg1_pre * (1.0 - g1**2)
    dh, dw1, db1 = _conv_time_backward(h, dec.conv1_w, dg1)
    grads = {f"{dec.layer_id}conv1_w": dw1, f"{dec.layer_id}conv1_b": db1,
             f"{dec.layer_id}conv2_w": dw2, f"{dec.layer_id}conv2_b": db2,
             f"{dec.layer_id}proj": dproj}
    return dh, grads


def decode(dec: TcnDecoder, h: Tensor) -> Tensor:
    """Map encoded [C_enc, R, T] features to [K, R, 2] future coordinates."""
    if len(h.shape) != 3:
        raise ShapeError(f"expected [C, R, T], got {h.shape}")
    if h.shape[0] != dec.conv1_w.shape[1]:
        raise ShapeError(f"decoder expects {dec.conv1_w.shape[1]} channels, got {h.shape[0]}")
    if h.shape[2] != dec.proj.shape[0]:
        raise ShapeError(f"decoder projects from {dec.proj.shape[0]} frames, got {h.shape[2]}")
    out, _ = _decode_forward(dec, h.array[None])
    return Tensor(out[0])


class DecoderOp(DifferentiableOp):
    """The decoder as a function of (H, conv1_w, conv1_b, conv2_w, conv2_b, proj)."""

    name = "decoder.tcn"

    def __init__(self, c_in=3, c_mid=4, r=2, t=4, k=3):
        self.dims = (c_in, c_mid, r, t, k)

    def _dec(self, inputs):
        return TcnDecoder(conv1_w=inputs[1].array, conv1_b=inputs[2].array,
                          conv2_w=inputs[3].array, conv2_b=inputs[4].array,
                          proj=inputs[5].array)

    def forward(self, *inputs):
        out, ctx = _decode_forward(self._dec(inputs), inputs[0].array[None])
        return Tensor(out[0]), ctx

    def backward(self, inputs, ctx, cot):
        dec = self._dec(inputs)
        dh, grads = _decode_backward(dec, ctx, cot.array[None])
        order = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "proj")
        return (Tensor(dh[0]),) + tuple(Tensor(grads[f"dec.{k}"]) for k in order)

    def sample_inputs(self, rng):
        c_in, c_mid, r, t, k = self.dims
        return (Tensor(rng.normal(0.0, 1.0, (c_in, r, t))),
                Tensor(rng.normal(0.0, 0.5, (c_mid, c_in, KERNEL_SIZE))),
                Tensor(rng.normal(0.0, 0.5, c_mid)),
                Tensor(rng.normal(0.0, 0.5, (2, c_mid, KERNEL_SIZE))),
                Tensor(rng.normal(0.0, 0.5, 2)),
                Tensor(rng.normal(0.0, 0.5, (t, k))))


register_op(DecoderOp())
