"""Intra-window content aggregation layers.

Four interchangeable ways to mix the ws*ws tokens of a window:

* grouped axial linear (``Linear``): channels split into groups of size gs;
  one shared dense map mixes the (group-channels x heights) vector of each
  width column, a second mixes (group-channels x widths) per height row, the
  two branch outputs are added and passed through a point-wise projection;
* ``DWLinear``: same wiring with separate axial weights per channel group;
* ``MLP``: each axial map replaced by a two-layer perceptron with GELU;
* ``MHSA``: multi-head self-attention with a learned relative position bias.

Axial inputs are (B, C, ws*ws) with tokens flattened row-major; attention
inputs are token-major (B, ws*ws, C).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special as _sp

from . import tensor as T
from .tensor import ShapeError, Tensor

__all__ = [
    "LinMapperParams",
    "DWLinMapperParams",
    "WindowMlpParams",
    "WindowMhsaParams",
    "linmapper_forward",
    "dw_linmapper_forward",
    "window_mlp_forward",
    "window_mhsa_forward",
    "init_aggregator",
    "aggregate",
    "AGGREGATOR_KINDS",
]

AGGREGATOR_KINDS = ("Linear", "DWLinear", "MLP", "MHSA")


@dataclass
class LinMapperParams:
    """Shared-weight grouped axial linear map, (gs*ws)^2 each axis, plus a
    C x C point-wise projection."""

    w_h: Tensor  # (gs*ws, gs*ws)
    b_h: Tensor
    w_w: Tensor
    b_w: Tensor
    w_p: Tensor  # (C, C)
    b_p: Tensor
    gs: int
    ws: int

    def tensors(self):
        return [("w_h", self.w_h), ("b_h", self.b_h), ("w_w", self.w_w),
                ("b_w", self.b_w), ("w_p", self.w_p), ("b_p", self.b_p)]


@dataclass
class DWLinMapperParams:
    """Per-group axial weights: w_h/w_w are (groups, gs*ws, gs*ws)."""

    w_h: Tensor
    b_h: Tensor  # (groups, gs*ws)
    w_w: Tensor
    b_w: Tensor
    w_p: Tensor
    b_p: Tensor
    gs: int
    ws: int

    def tensors(self):
        return [("w_h", self.w_h), ("b_h", self.b_h), ("w_w", self.w_w),
                ("b_w", self.b_w), ("w_p", self.w_p), ("b_p", self.b_p)]


@dataclass
class WindowMlpParams:
    """Axial two-layer perceptrons (hidden = rho * gs*ws) with GELU."""

    w1_h: Tensor
    b1_h: Tensor
    w2_h: Tensor
    b2_h: Tensor
    w1_w: Tensor
    b1_w: Tensor
    w2_w: Tensor
    b2_w: Tensor
    w_p: Tensor
    b_p: Tensor
    gs: int
    ws: int
    rho: int

    def tensors(self):
        return [("w1_h", self.w1_h), ("b1_h", self.b1_h), ("w2_h", self.w2_h),
                ("b2_h", self.b2_h), ("w1_w", self.w1_w), ("b1_w", self.b1_w),
                ("w2_w", self.w2_w), ("b2_w", self.b2_w),
                ("w_p", self.w_p), ("b_p", self.b_p)]


@dataclass
class WindowMhsaParams:
    """Multi-head window attention with relative position bias."""

    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_o: Tensor
    b_o: Tensor
    rel_bias: Tensor  # (heads, (2ws-1)^2)
    heads: int
    ws: int

    def tensors(self):
        return [("w_q", self.w_q), ("b_q", self.b_q), ("w_k", self.w_k),
                ("b_k", self.b_k), ("w_v", self.w_v), ("b_v", self.b_v),
                ("w_o", self.w_o), ("b_o", self.b_o), ("rel_bias", self.rel_bias)]


def _check_groups(c: int, gs: int) -> int:
    if gs < 1 or c % gs:
        raise ShapeError(f"channels {c} not divisible by group size {gs}")
    return c // gs


def _axial_split(x: Tensor, gs: int, ws: int) -> Tensor:
    """(B, C, ws*ws) -> (B, groups, gs, h, w)."""
    b, c, n = x.shape
    if n != ws * ws:
        raise ShapeError(f"token axis {n} != ws*ws = {ws * ws}")
    g = _check_groups(c, gs)
    return T.reshape(x, (b, g, gs, ws, ws))


def _axial_join(x: Tensor) -> Tensor:
    b, g, gs, h, w = x.shape
    return T.reshape(x, (b, g * gs, h * w))


def _height_vectors(x5: Tensor) -> Tensor:
    """(B, G, gs, h, w) -> (B, G, w, gs*h): one vector per width column."""
    b, g, gs, h, w = x5.shape
    v = T.transpose(x5, (0, 1, 4, 2, 3))
    return T.reshape(v, (b, g, w, gs * h))


def _height_restore(v: Tensor, gs: int, ws: int) -> Tensor:
    b, g, w, _ = v.shape
    v = T.reshape(v, (b, g, w, gs, ws))
    return T.transpose(v, (0, 1, 3, 4, 2))


def _width_vectors(x5: Tensor) -> Tensor:
    """(B, G, gs, h, w) -> (B, G, h, gs*w): one vector per height row."""
    b, g, gs, h, w = x5.shape
    v = T.transpose(x5, (0, 1, 3, 2, 4))
    return T.reshape(v, (b, g, h, gs * w))


def _width_restore(v: Tensor, gs: int, ws: int) -> Tensor:
    b, g, h, _ = v.shape
    v = T.reshape(v, (b, g, h, gs, ws))
    return T.transpose(v, (0, 1, 3, 2, 4))


def _pointwise(x: Tensor, w_p: Tensor, b_p: Tensor) -> Tensor:
    """(B, C, N) per-token channel projection."""
    y = T.transpose(x, (0, 2, 1))
    y = T.linear(y, w_p, b_p)
    return T.transpose(y, (0, 2, 1))


def linmapper_forward(x: Tensor, p: LinMapperParams, layout_faithful: bool = False) -> Tensor:
    """Grouped axial linear mixing of one batch of windows.

    ``x`` is (B, C, ws*ws). The default reading maps (group-channels x
    heights) per width column and (group-channels x widths) per height row.
    With ``layout_faithful`` the width branch instead maps raw row-major
    (gs*ws)-chunks of the flattened window, which interleaves channel and
    height indices.
    """
    gs, ws = p.gs, p.ws
    x5 = _axial_split(x, gs, ws)

    hv = _height_vectors(x5)
    hf = _axial_join(_height_restore(T.linear(hv, p.w_h, p.b_h), gs, ws))

    if layout_faithful:
        b, c, n = x.shape
        g = c // gs
        wv = T.reshape(x, (b, g, ws, gs * ws))
        wf = T.reshape(T.linear(wv, p.w_w, p.b_w), (b, c, n))
    else:
        wv = _width_vectors(x5)
        wf = _axial_join(_width_restore(T.linear(wv, p.w_w, p.b_w), gs, ws))

    return _pointwise(hf + wf, p.w_p, p.b_p)


def _grouped_linear(v: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Apply per-group weights: v (B, G, rows, i) @ w[g] (o, i) + b[g]."""
    bsz, g, rows, i = v.shape
    vt = T.reshape(T.transpose(v, (1, 0, 2, 3)), (g, bsz * rows, i))
    out = T.matmul(vt, T.transpose(w, (0, 2, 1)))
    out = out + T.reshape(b, (g, 1, b.shape[1]))
    out = T.transpose(T.reshape(out, (g, bsz, rows, out.shape[2])), (1, 0, 2, 3))
    return out


def dw_linmapper_forward(x: Tensor, p: DWLinMapperParams, layout_faithful: bool = False) -> Tensor:
    """As linmapper_forward but channel group g uses its own axial weights."""
    gs, ws = p.gs, p.ws
    x5 = _axial_split(x, gs, ws)

    hf = _axial_join(_height_restore(_grouped_linear(_height_vectors(x5), p.w_h, p.b_h), gs, ws))

    if layout_faithful:
        b, c, n = x.shape
        g = c // gs
        wv = T.reshape(x, (b, g, ws, gs * ws))
        wf = T.reshape(_grouped_linear(wv, p.w_w, p.b_w), (b, c, n))
    else:
        wf = _axial_join(_width_restore(_grouped_linear(_width_vectors(x5), p.w_w, p.b_w), gs, ws))

    return _pointwise(hf + wf, p.w_p, p.b_p)


def window_mlp_forward(x: Tensor, p: WindowMlpParams, layout_faithful: bool = False,
                       activation=T.gelu) -> Tensor:
    """Axial mixing with two-layer perceptrons instead of single linears."""
    gs, ws = p.gs, p.ws
    x5 = _axial_split(x, gs, ws)

    def mlp(v, w1, b1, w2, b2):
        return T.linear(activation(T.linear(v, w1, b1)), w2, b2)

    hv = _height_vectors(x5)
    hf = _axial_join(_height_restore(mlp(hv, p.w1_h, p.b1_h, p.w2_h, p.b2_h), gs, ws))

    if layout_faithful:
        b, c, n = x.shape
        g = c // gs
        wv = T.reshape(x, (b, g, ws, gs * ws))
        wf = T.reshape(mlp(wv, p.w1_w, p.b1_w, p.w2_w, p.b2_w), (b, c, n))
    else:
        wv = _width_vectors(x5)
        wf = _axial_join(_width_restore(mlp(wv, p.w1_w, p.b1_w, p.w2_w, p.b2_w), gs, ws))

    return _pointwise(hf + wf, p.w_p, p.b_p)


def relative_position_index(ws: int) -> np.ndarray:
    """(ws^2, ws^2) lookup into the (2ws-1)^2 relative-bias table."""
    coords = np.stack(np.meshgrid(np.arange(ws), np.arange(ws), indexing="ij"))
    flat = coords.reshape(2, -1)
    rel = flat[:, :, None] - flat[:, None, :] + ws - 1
    return rel[0] * (2 * ws - 1) + rel[1]


def window_mhsa_forward(x: Tensor, p: WindowMhsaParams) -> Tensor:
    """Scaled dot-product attention inside each window.

    ``x`` is token-major (B, ws*ws, C); the learned relative position bias is
    added to the logits before softmax; scale is (C/heads)^(-1/2).
    """
    b, n, c = x.shape
    heads, ws = p.heads, p.ws
    if c % heads:
        raise ShapeError(f"channels {c} not divisible by heads {heads}")
    if n != ws * ws:
        raise ShapeError(f"token count {n} != ws*ws = {ws * ws}")
    dh = c // heads
    scale = dh ** -0.5

    def split_heads(t):
        return T.transpose(T.reshape(t, (b, n, heads, dh)), (0, 2, 1, 3))

    q = split_heads(T.linear(x, p.w_q, p.b_q))
    k = split_heads(T.linear(x, p.w_k, p.b_k))
    v = split_heads(T.linear(x, p.w_v, p.b_v))

    logits = T.matmul(q * scale, T.transpose(k, (0, 1, 3, 2)))
    bias = T.index_select(T.transpose(p.rel_bias, (1, 0)), relative_position_index(ws).reshape(-1))
    bias = T.transpose(T.reshape(bias, (n, n, heads)), (2, 0, 1))
    attn = T.softmax_last_axis(logits + bias)

    out = T.matmul(attn, v)
    out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (b, n, c))
    return T.linear(out, p.w_o, p.b_o)


# -- initialization -----------------------------------------------------------

_TRUNC_LO = _sp.ndtr(-2.0)
_TRUNC_HI = _sp.ndtr(2.0)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> Tensor:
    """Normal(0, std) truncated to [-2 std, 2 std], via inverse-CDF sampling."""
    u = rng.uniform(_TRUNC_LO, _TRUNC_HI, size=shape)
    return Tensor((_sp.ndtri(u) * std).astype(dtype), requires_grad=True)


def zeros_param(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def init_aggregator(kind: str, c: int, ws: int, gs: int = 1, heads: int = 1,
                    rho: int = 4, seed: int = 0, dtype=np.float32):
    """Build freshly initialized parameters for one aggregation layer.

    Weights are truncated-normal (std 0.02), biases and the relative bias
    table zero. The same seed always yields bit-identical parameters.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    if kind in ("Linear", "DWLinear", "MLP"):
        g = _check_groups(c, gs)
        k = gs * ws
        if kind == "Linear":
            return LinMapperParams(
                w_h=trunc_normal(rng, (k, k), dtype=dtype), b_h=zeros_param((k,), dtype),
                w_w=trunc_normal(rng, (k, k), dtype=dtype), b_w=zeros_param((k,), dtype),
                w_p=trunc_normal(rng, (c, c), dtype=dtype), b_p=zeros_param((c,), dtype),
                gs=gs, ws=ws)
        if kind == "DWLinear":
            return DWLinMapperParams(
                w_h=trunc_normal(rng, (g, k, k), dtype=dtype), b_h=zeros_param((g, k), dtype),
                w_w=trunc_normal(rng, (g, k, k), dtype=dtype), b_w=zeros_param((g, k), dtype),
                w_p=trunc_normal(rng, (c, c), dtype=dtype), b_p=zeros_param((c,), dtype),
                gs=gs, ws=ws)
        hidden = rho * k
        return WindowMlpParams(
            w1_h=trunc_normal(rng, (hidden, k), dtype=dtype), b1_h=zeros_param((hidden,), dtype),
            w2_h=trunc_normal(rng, (k, hidden), dtype=dtype), b2_h=zeros_param((k,), dtype),
            w1_w=trunc_normal(rng, (hidden, k), dtype=dtype), b1_w=zeros_param((hidden,), dtype),
            w2_w=trunc_normal(rng, (k, hidden), dtype=dtype), b2_w=zeros_param((k,), dtype),
            w_p=trunc_normal(rng, (c, c), dtype=dtype), b_p=zeros_param((c,), dtype),
            gs=gs, ws=ws, rho=rho)
    if kind == "MHSA":
        if heads < 1 or c % heads:
            raise ShapeError(f"channels {c} not divisible by heads {heads}")
        table = (2 * ws - 1) ** 2
        return WindowMhsaParams(
            w_q=trunc_normal(rng, (c, c), dtype=dtype), b_q=zeros_param((c,), dtype),
            w_k=trunc_normal(rng, (c, c), dtype=dtype), b_k=zeros_param((c,), dtype),
            w_v=trunc_normal(rng, (c, c), dtype=dtype), b_v=zeros_param((c,), dtype),
            w_o=trunc_normal(rng, (c, c), dtype=dtype), b_o=zeros_param((c,), dtype),
            rel_bias=zeros_param((heads, table), dtype),
            heads=heads, ws=ws)
    raise ValueError(f"unknown aggregator kind {kind!r}; expected one of {AGGREGATOR_KINDS}")


def aggregate(kind: str, windows: Tensor, params, layout_faithful: bool = False) -> Tensor:
    """Uniform entry point: token-major windows (B, ws*ws, C) in and out."""
    if kind == "MHSA":
        return window_mhsa_forward(windows, params)
    x = T.transpose(windows, (0, 2, 1))
    if kind == "Linear":
        y = linmapper_forward(x, params, layout_faithful)
    elif kind == "DWLinear":
        y = dw_linmapper_forward(x, params, layout_faithful)
    elif kind == "MLP":
        y = window_mlp_forward(x, params, layout_faithful)
    else:
        raise ValueError(f"unknown aggregator kind {kind!r}")
    return T.transpose(y, (0, 2, 1))
