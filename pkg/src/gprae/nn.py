"""Small convolutional engine: strided conv, transposed conv, MSE and Adam.

Public functions take ``(C, H, W)`` or batched ``(B, C, H, W)`` arrays. The
layer stack used by the autoencoder runs internally on channel-major
``(C, B, H, W)`` arrays: window copies then read whole contiguous rows and
the GEMM output is already in the next layer's layout.

Padding is SAME-style: a strided conv maps ``H`` to ``ceil(H / s)`` with the
odd padding sample on the bottom/right. A transposed conv maps ``H`` to
``H * s`` and is the exact adjoint of the conv that maps ``H * s`` to ``H``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import as_strided

LEAKY_SLOPE = 0.2


class ShapeError(ValueError):
    pass


class Mode(str, enum.Enum):
    CONV = "conv"
    TRANSPOSED = "transposed"


class Activation(str, enum.Enum):
    NONE = "none"
    TANH = "tanh"
    LEAKY = "leaky"


@dataclass(eq=False)
class ConvLayer:
    """One conv or transposed-conv layer.

    ``kernel`` has shape ``(out_channels, in_channels, kh, kw)`` for a conv.
    A transposed layer stores the kernel of the conv it is the adjoint of,
    i.e. ``(in_channels, out_channels, kh, kw)``; sharing one kernel between
    the two modes gives an adjoint pair.
    """

    kernel: np.ndarray
    bias: np.ndarray
    stride: tuple[int, int] = (1, 1)
    mode: Mode = Mode.CONV
    activation: Activation = Activation.NONE

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.mode = Mode(self.mode)
        self.activation = Activation(self.activation)
        if isinstance(self.stride, int):
            self.stride = (self.stride, self.stride)
        self.stride = tuple(int(s) for s in self.stride)
        if self.kernel.ndim != 4 or min(self.kernel.shape) < 1:
            raise ShapeError(f"kernel must be a non-empty 4D array, got {self.kernel.shape}")
        if min(self.stride) < 1 or len(self.stride) != 2:
            raise ShapeError(f"stride must be two integers >= 1, got {self.stride}")
        if self.bias.shape != (self.out_channels,):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match {self.out_channels} output channels"
            )

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1] if self.mode is Mode.CONV else self.kernel.shape[0]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0] if self.mode is Mode.CONV else self.kernel.shape[1]

    @property
    def kernel_size(self) -> tuple[int, int]:
        return self.kernel.shape[2], self.kernel.shape[3]

    @property
    def params(self) -> list[np.ndarray]:
        return [self.kernel, self.bias]

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        sh, sw = self.stride
        if self.mode is Mode.CONV:
            return -(-h // sh), -(-w // sw)
        return h * sh, w * sw


def same_padding(n: int, k: int, s: int) -> tuple[int, int, int]:
    """Output length and (before, after) padding of a SAME conv over ``n``."""
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    return out, total // 2, total - total // 2


# ---------------------------------------------------------------------------
# channel-major kernels: arrays are (C, B, H, W)


def _pad(x, ph, pw):
    C, B, H, W = x.shape
    xp = np.zeros((C, B, H + ph[0] + ph[1], W + pw[0] + pw[1]), dtype=x.dtype)
    xp[:, :, ph[0]:ph[0] + H, pw[0]:pw[0] + W] = x
    return xp


def _im2col(xp, kh, kw, sh, sw, ho, wo):
    """Window matrix with rows ordered (C, kh, kw) and columns (B, ho, wo)."""
    C, B, _, _ = xp.shape
    if sh == sw == 1:
        sc, sb, sy, sx = xp.strides
        win = as_strided(xp, (C, kh, kw, B, ho, wo), (sc, sy, sx, sb, sy, sx), writeable=False)
        return win.reshape(C * kh * kw, B * ho * wo)
    # split into stride phases once so every window copy reads contiguous rows
    phases = {}
    cols = np.empty((C, kh, kw, B, ho, wo), dtype=xp.dtype)
    for a in range(kh):
        for q in range(kw):
            key = (a % sh, q % sw)
            if key not in phases:
                phases[key] = np.ascontiguousarray(xp[:, :, key[0]::sh, key[1]::sw])
            r, c = a // sh, q // sw
            cols[:, a, q] = phases[key][:, :, r:r + ho, c:c + wo]
    return cols.reshape(C * kh * kw, B * ho * wo)


def _col2im(cols, shape_p, kh, kw, sh, sw, ho, wo):
    """Adjoint of _im2col: scatter-add window rows into a padded array."""
    C, B, Hp, Wp = shape_p
    cols = cols.reshape(C, kh, kw, B, ho, wo)
    if sh == sw == 1:
        out = np.zeros(shape_p, dtype=cols.dtype)
        for a in range(kh):
            for q in range(kw):
                out[:, :, a:a + ho, q:q + wo] += cols[:, a, q]
        return out
    hq, wq = -(-Hp // sh), -(-Wp // sw)
    phases = np.zeros((sh, sw, C, B, hq + kh // sh, wq + kw // sw), dtype=cols.dtype)
    for a in range(kh):
        for q in range(kw):
            r, c = a // sh, q // sw
            phases[a % sh, q % sw, :, :, r:r + ho, c:c + wo] += cols[:, a, q]
    out = np.empty(shape_p, dtype=cols.dtype)
    for rh in range(sh):
        for rw in range(sw):
            dst = out[:, :, rh::sh, rw::sw]
            dst[...] = phases[rh, rw, :, :, :dst.shape[2], :dst.shape[3]]
    return out


def _conv_matrix(kernel, dtype):
    # conv-layout kernel (Co, Ci, kh, kw) -> (Co, Ci*kh*kw) matching _im2col rows
    return np.ascontiguousarray(kernel.reshape(kernel.shape[0], -1), dtype=dtype)


def _conv_geometry(layer, h, w):
    """(ho, wo, pads_h, pads_w) of the conv map, from its input size."""
    (kh, kw), (sh, sw) = layer.kernel_size, layer.stride
    ho, pt, pb = same_padding(h, kh, sh)
    wo, pl, pr = same_padding(w, kw, sw)
    return ho, wo, (pt, pb), (pl, pr)


def _conv_linear(x, layer):
    """Bias-free conv and its window matrix."""
    C, B, H, W = x.shape
    (kh, kw), (sh, sw) = layer.kernel_size, layer.stride
    ho, wo, ph, pw = _conv_geometry(layer, H, W)
    cols = _im2col(_pad(x, ph, pw), kh, kw, sh, sw, ho, wo)
    z = _conv_matrix(layer.kernel, x.dtype) @ cols
    return z.reshape(-1, B, ho, wo), cols


def _conv_adjoint(g, layer, out_hw):
    """Adjoint of the bias-free conv: maps (Co, B, ho, wo) back to (Ci, B, H, W)."""
    _, B, ho, wo = g.shape
    H, W = out_hw
    (kh, kw), (sh, sw) = layer.kernel_size, layer.stride
    _, _, ph, pw = _conv_geometry(layer, H, W)
    ci = layer.kernel.shape[1]
    gcols = _conv_matrix(layer.kernel, g.dtype).T @ g.reshape(g.shape[0], -1)
    shape_p = (ci, B, H + sum(ph), W + sum(pw))
    full = _col2im(gcols, shape_p, kh, kw, sh, sw, ho, wo)
    return full[:, :, ph[0]:ph[0] + H, pw[0]:pw[0] + W]


def _activate(z, act):
    if act is Activation.NONE:
        return z
    if act is Activation.TANH:
        return np.tanh(z)
    return np.maximum(z, LEAKY_SLOPE * z)


def _activation_grad(g, z, y, act):
    if act is Activation.NONE:
        return g
    if act is Activation.TANH:
        return g * (1 - y * y)
    return np.where(z > 0, g, LEAKY_SLOPE * g)


def layer_forward(x, layer, keep=False):
    """Forward on a (C, B, H, W) array. With ``keep`` also returns the backward cache."""
    C, B, H, W = x.shape
    if C != layer.in_channels:
        raise ShapeError(f"input has {C} channels, layer expects {layer.in_channels}")
    if layer.mode is Mode.CONV:
        z, cols = _conv_linear(x, layer)
    else:
        sh, sw = layer.stride
        z = _conv_adjoint(x, layer, (H * sh, W * sw))
        cols = None
    z += layer.bias.astype(x.dtype)[:, None, None, None]
    y = _activate(z, layer.activation)
    if keep:
        return y, (x, cols, z, y)
    return y


def layer_backward(layer, cache, grad_out, need_input=True):
    """Backward on (C, B, H, W) arrays; returns (grad_input, grad_kernel, grad_bias)."""
    x, cols, z, y = cache
    if grad_out.shape != y.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != output shape {y.shape}")
    gz = _activation_grad(grad_out, z, y, layer.activation)
    C, B, H, W = x.shape
    gb = gz.sum(axis=(1, 2, 3))
    if layer.mode is Mode.CONV:
        co = gz.shape[0]
        gk = (gz.reshape(co, -1) @ cols.T).reshape(layer.kernel.shape)
        gx = _conv_adjoint(gz, layer, (H, W)) if need_input else None
    else:
        # the transposed map is the adjoint of a conv whose input is gz
        zc, gcols = _conv_linear(gz, layer)
        gk = (x.reshape(C, -1) @ gcols.T).reshape(layer.kernel.shape)
        gx = zc if need_input else None
    return gx, gk, gb


# ---------------------------------------------------------------------------
# public (C, H, W) API


def _to_internal(x):
    x = np.asarray(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise ShapeError(f"expected (C, H, W) or (B, C, H, W), got shape {x.shape}")
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    return np.ascontiguousarray(x.transpose(1, 0, 2, 3)), single


def _from_internal(x, single):
    x = x.transpose(1, 0, 2, 3)
    return np.ascontiguousarray(x[0] if single else x)


def _check_mode(layer, mode):
    if layer.mode is not mode:
        raise ShapeError(f"layer mode is {layer.mode.value}, expected {mode.value}")


def conv2d_forward(input, layer: ConvLayer) -> np.ndarray:
    _check_mode(layer, Mode.CONV)
    x, single = _to_internal(input)
    return _from_internal(layer_forward(x, layer), single)


def deconv2d_forward(input, layer: ConvLayer) -> np.ndarray:
    _check_mode(layer, Mode.TRANSPOSED)
    x, single = _to_internal(input)
    return _from_internal(layer_forward(x, layer), single)


def _backward(input, layer, grad_out):
    x, single = _to_internal(input)
    g, _ = _to_internal(grad_out)
    _, cache = layer_forward(x, layer, keep=True)
    if g.shape != cache[3].shape:
        raise ShapeError(
            f"grad_out shape {np.shape(grad_out)} does not match the layer output"
        )
    gx, gk, gb = layer_backward(layer, cache, g)
    return _from_internal(gx, single), gk, gb


def conv2d_backward(input, layer: ConvLayer, grad_out):
    """Gradients of ``sum(grad_out * conv2d_forward(input, layer))``."""
    _check_mode(layer, Mode.CONV)
    return _backward(input, layer, grad_out)


def deconv2d_backward(input, layer: ConvLayer, grad_out):
    _check_mode(layer, Mode.TRANSPOSED)
    return _backward(input, layer, grad_out)


def mse_loss(pred, target):
    """Mean squared error over all elements and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    n = diff.size
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


# ---------------------------------------------------------------------------
# layer stacks


def stack_forward(layers, x, keep=False):
    caches = []
    for layer in layers:
        if keep:
            x, cache = layer_forward(x, layer, keep=True)
            caches.append(cache)
        else:
            x = layer_forward(x, layer)
    return (x, caches) if keep else x


def stack_backward(layers, caches, grad):
    """Backprop through a stack; returns per-layer [grad_kernel, grad_bias] lists."""
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        grad, gk, gb = layer_backward(layers[i], caches[i], grad, need_input=i > 0)
        grads[i] = [gk, gb]
    return grads


def glorot_uniform(layer_shape, rng, mode=Mode.CONV):
    """Uniform in +-sqrt(6 / (fan_in + fan_out)) for a conv-layout kernel shape."""
    a, b, kh, kw = layer_shape
    co, ci = (a, b) if mode is Mode.CONV else (b, a)
    limit = np.sqrt(6.0 / ((ci + co) * kh * kw))
    return rng.uniform(-limit, limit, size=layer_shape)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState):
    """Bias-corrected Adam update, applied to ``params`` in place.

    Moments are allocated on the first call. Returns ``params``.
    """
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros(np.shape(p)) for p in params]
        state.v = [np.zeros(np.shape(p)) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("optimizer state does not match the parameter set")
    state.step_count += 1
    t = state.step_count
    c1 = 1 - state.beta1**t
    c2 = 1 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != np.shape(p) or m.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {np.shape(p)}")
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
