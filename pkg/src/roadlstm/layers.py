"""Layer kernels with hand-written backward passes.

All kernels work on ``(h, w, d)`` float64 arrays (the ``Tensor3.data``
layout).  ``forward`` returns ``(out, cache)``; ``backward`` takes that cache
and the upstream gradient and returns ``(grad_in, [grad per parameter])`` with
parameter gradients listed in the same order as ``params()``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Shape3, ShapeError, Tensor3


class MacCounter:
    """Tallies multiply-accumulates issued by the kernels' matrix products."""

    def __init__(self):
        self.macs = 0

    @property
    def flops(self) -> int:
        return 2 * self.macs


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor3) else x


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# --------------------------------------------------------------------------
# convolution

@dataclass(frozen=True)
class ConvSpec:
    kernel_w: int
    kernel_h: int
    in_channels: int
    out_channels: int
    stride: tuple[int, int] = (1, 1)  # (s_w, s_h)
    padding: str = "same"

    def __post_init__(self):
        if min(self.kernel_w, self.kernel_h, self.in_channels, self.out_channels) < 1:
            raise ShapeError(f"kernel dims must be >= 1: {self}")
        if len(self.stride) != 2 or min(self.stride) < 1:
            raise ShapeError(f"stride must be two positive ints: {self.stride}")
        if self.padding not in ("same", "valid"):
            raise ShapeError(f"padding must be 'same' or 'valid', got {self.padding!r}")
        object.__setattr__(self, "stride", (int(self.stride[0]), int(self.stride[1])))

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.kernel_h, self.kernel_w, self.in_channels, self.out_channels)


def _out_len(n, k, s, padding):
    if padding == "same":
        return -(-n // s)
    if k > n:
        raise ShapeError(f"valid padding with kernel {k} larger than input {n}")
    return (n - k) // s + 1


def conv_output_shape(in_shape: Shape3, spec: ConvSpec) -> Shape3:
    if in_shape.channels != spec.in_channels:
        raise ShapeError(f"conv expects {spec.in_channels} channels, got {in_shape.channels}")
    sw, sh = spec.stride
    return Shape3(_out_len(in_shape.width, spec.kernel_w, sw, spec.padding),
                  _out_len(in_shape.height, spec.kernel_h, sh, spec.padding),
                  spec.out_channels)


def _pad_amounts(n, k, s, padding):
    """(before, after) zero padding along one axis; TF-style for 'same'."""
    if padding == "valid":
        return 0, 0
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    return total // 2, total - total // 2


class ConvLayer:
    kind = "conv"

    def __init__(self, spec: ConvSpec, weights=None, bias=None):
        self.spec = spec
        self.weights = np.zeros(spec.weight_shape) if weights is None else np.asarray(weights, dtype=np.float64)
        self.bias = np.zeros(spec.out_channels) if bias is None else np.asarray(bias, dtype=np.float64)
        if self.weights.shape != spec.weight_shape or self.bias.shape != (spec.out_channels,):
            raise ShapeError("conv parameter arrays do not match spec")

    def init(self, rng):
        # He-uniform: Glorot scaling shrinks the signal ~sqrt(2) per ReLU layer
        s = self.spec
        limit = np.sqrt(6.0 / (s.kernel_w * s.kernel_h * s.in_channels))
        self.weights = rng.uniform(-limit, limit, size=s.weight_shape)
        self.bias = np.zeros(s.out_channels)
        return self

    def params(self):
        return [self.weights, self.bias]

    def output_shape(self, in_shape: Shape3) -> Shape3:
        return conv_output_shape(in_shape, self.spec)

    def _columns(self, x):
        s = self.spec
        h, w, _ = x.shape
        sw, sh = s.stride
        ph = _pad_amounts(h, s.kernel_h, sh, s.padding)
        pw = _pad_amounts(w, s.kernel_w, sw, s.padding)
        xp = np.pad(x, (ph, pw, (0, 0))) if (sum(ph) or sum(pw)) else x
        win = sliding_window_view(xp, (s.kernel_h, s.kernel_w), axis=(0, 1))[::sh, ::sw]
        oh, ow = win.shape[:2]
        # (oh, ow, cin, kh, kw) -> (oh*ow, kh*kw*cin) to match the weight layout
        cols = win.transpose(0, 1, 3, 4, 2).reshape(oh * ow, -1)
        return cols, (oh, ow), (ph, pw), xp.shape

    def forward(self, x, counter: MacCounter | None = None):
        x = _as_array(x)
        s = self.spec
        if x.shape[2] != s.in_channels:
            raise ShapeError(f"conv expects {s.in_channels} channels, got {x.shape[2]}")
        cols, (oh, ow), pads, padded_shape = self._columns(x)
        wmat = self.weights.reshape(-1, s.out_channels)
        out = cols @ wmat
        out += self.bias
        if counter is not None:
            counter.macs += cols.shape[0] * cols.shape[1] * s.out_channels
        return out.reshape(oh, ow, s.out_channels), (cols, x.shape, pads, padded_shape)

    def backward(self, cache, grad_out, need_input_grad: bool = True):
        cols, in_shape, (ph, pw), padded_shape = cache
        s = self.spec
        oh, ow = grad_out.shape[:2]
        if grad_out.shape[2] != s.out_channels or oh * ow != cols.shape[0]:
            raise ShapeError(f"grad_out shape {grad_out.shape} does not match conv output")
        g = grad_out.reshape(-1, s.out_channels)
        grad_w = (cols.T @ g).reshape(s.weight_shape)
        grad_b = g.sum(axis=0)
        grad_in = None
        if need_input_grad:
            gcols = (g @ self.weights.reshape(-1, s.out_channels).T).reshape(
                oh, ow, s.kernel_h, s.kernel_w, s.in_channels)
            gxp = np.zeros(padded_shape)
            sw, sh = s.stride
            for i in range(s.kernel_h):
                for j in range(s.kernel_w):
                    gxp[i:i + sh * (oh - 1) + 1:sh, j:j + sw * (ow - 1) + 1:sw] += gcols[:, :, i, j, :]
            h, w, _ = in_shape
            grad_in = gxp[ph[0]:ph[0] + h, pw[0]:pw[0] + w]
        return grad_in, [grad_w, grad_b]


# --------------------------------------------------------------------------
# distributed (row-wise, shared-weight) LSTM

def _sigmoid(z):
    # split form avoids overflow in exp for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class DistLstmLayer:
    """One LSTM cell applied to every image row, stepping left to right.

    Gate order in ``W``, ``U`` and ``b`` is (input, forget, candidate, output).
    """

    kind = "dist_lstm"

    def __init__(self, input_dim: int, hidden_dim: int, W=None, U=None, b=None):
        if input_dim < 1 or hidden_dim < 1:
            raise ShapeError("LSTM dims must be >= 1")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        n = 4 * hidden_dim
        self.W = np.zeros((n, input_dim)) if W is None else np.asarray(W, dtype=np.float64)
        self.U = np.zeros((n, hidden_dim)) if U is None else np.asarray(U, dtype=np.float64)
        self.b = np.zeros(n) if b is None else np.asarray(b, dtype=np.float64)
        if self.W.shape != (n, input_dim) or self.U.shape != (n, hidden_dim) or self.b.shape != (n,):
            raise ShapeError("LSTM parameter arrays do not match dims")

    def init(self, rng):
        d1, dl = self.input_dim, self.hidden_dim
        self.W = _glorot(rng, (4 * dl, d1), d1, 4 * dl)
        self.U = _glorot(rng, (4 * dl, dl), dl, 4 * dl)
        self.b = np.zeros(4 * dl)
        self.b[dl:2 * dl] = 1.0
        return self

    def params(self):
        return [self.W, self.U, self.b]

    def output_shape(self, in_shape: Shape3) -> Shape3:
        if in_shape.channels != self.input_dim:
            raise ShapeError(f"LSTM expects {self.input_dim} channels, got {in_shape.channels}")
        return Shape3(in_shape.width, in_shape.height, self.hidden_dim)

    def forward(self, x, counter: MacCounter | None = None):
        x = _as_array(x)
        rows, steps, d1 = x.shape
        if d1 != self.input_dim:
            raise ShapeError(f"LSTM expects {self.input_dim} channels, got {d1}")
        dl = self.hidden_dim
        # input projections for every (row, step) at once
        zx = (x.reshape(-1, d1) @ self.W.T).reshape(rows, steps, 4 * dl)
        zx += self.b
        gates = np.empty((steps, rows, 4 * dl))
        cs = np.empty((steps, rows, dl))
        tcs = np.empty((steps, rows, dl))
        out = np.empty((rows, steps, dl))
        h = np.zeros((rows, dl))
        c = np.zeros((rows, dl))
        UT = self.U.T
        for t in range(steps):
            z = zx[:, t, :] + h @ UT
            a = gates[t]
            a[:, :2 * dl] = _sigmoid(z[:, :2 * dl])
            a[:, 2 * dl:3 * dl] = np.tanh(z[:, 2 * dl:3 * dl])
            a[:, 3 * dl:] = _sigmoid(z[:, 3 * dl:])
            c = a[:, dl:2 * dl] * c + a[:, :dl] * a[:, 2 * dl:3 * dl]
            tc = np.tanh(c)
            h = a[:, 3 * dl:] * tc
            cs[t] = c
            tcs[t] = tc
            out[:, t, :] = h
        if counter is not None:
            counter.macs += rows * steps * (d1 + dl) * 4 * dl
        return out, (x, gates, cs, tcs, out)

    def backward(self, cache, grad_out, need_input_grad: bool = True):
        x, gates, cs, tcs, out = cache
        rows, steps, d1 = x.shape
        dl = self.hidden_dim
        if grad_out.shape != (rows, steps, dl):
            raise ShapeError(f"grad_out shape {grad_out.shape} does not match LSTM output")
        dz_all = np.empty((rows, steps, 4 * dl))
        dh_next = np.zeros((rows, dl))
        dc_next = np.zeros((rows, dl))
        grad_U = np.zeros_like(self.U)
        zero = np.zeros((rows, dl))
        for t in range(steps - 1, -1, -1):
            a = gates[t]
            i, f, g, o = a[:, :dl], a[:, dl:2 * dl], a[:, 2 * dl:3 * dl], a[:, 3 * dl:]
            tc = tcs[t]
            c_prev = cs[t - 1] if t > 0 else zero
            dh = grad_out[:, t, :] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = dz_all[:, t, :]
            dz[:, :dl] = dc * g * i * (1.0 - i)
            dz[:, dl:2 * dl] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * dl:3 * dl] = dc * i * (1.0 - g * g)
            dz[:, 3 * dl:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = dz @ self.U
            if t > 0:
                grad_U += dz.T @ out[:, t - 1, :]
        flat_dz = dz_all.reshape(-1, 4 * dl)
        grad_W = flat_dz.T @ x.reshape(-1, d1)
        grad_b = flat_dz.sum(axis=0)
        grad_in = (flat_dz @ self.W).reshape(rows, steps, d1) if need_input_grad else None
        return grad_in, [grad_W, grad_U, grad_b]


# --------------------------------------------------------------------------
# activations

ACTIVATIONS = ("relu", "sigmoid", "linear")


def activation_forward(kind: str, x):
    x = _as_array(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "sigmoid":
        return _sigmoid(x)
    if kind == "linear":
        return x.copy()
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(kind: str, x, grad, y=None):
    """Gradient through the activation; ``y`` (the forward output) is optional."""
    x = _as_array(x)
    grad = _as_array(grad)
    if kind == "relu":
        return grad * (x > 0)
    if kind == "sigmoid":
        s = _sigmoid(x) if y is None else y
        return grad * s * (1.0 - s)
    if kind == "linear":
        return grad.copy()
    raise ValueError(f"unknown activation {kind!r}")


class Activation:
    kind = "activation"

    def __init__(self, fn: str):
        if fn not in ACTIVATIONS:
            raise ValueError(f"unknown activation {fn!r}")
        self.fn = fn

    def init(self, rng):
        return self

    def params(self):
        return []

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x, counter=None):
        x = _as_array(x)
        y = activation_forward(self.fn, x)
        return y, (x, y)

    def backward(self, cache, grad_out, need_input_grad=True):
        x, y = cache
        return activation_backward(self.fn, x, grad_out, y), []


# --------------------------------------------------------------------------
# horizontal upsampling (1-D transposed convolution, kernel = stride = factor)

class UpsampleLayer:
    kind = "upsample"

    def __init__(self, factor: int = 8, kernel=None, bias=None):
        if factor < 1:
            raise ShapeError("upsample factor must be >= 1")
        self.factor = factor
        # replication kernel: starts out as nearest-neighbour upsampling
        self.kernel = np.ones(factor) if kernel is None else np.asarray(kernel, dtype=np.float64)
        self.bias = np.zeros(1) if bias is None else np.asarray(bias, dtype=np.float64).reshape(1)
        if self.kernel.shape != (factor,):
            raise ShapeError("upsample kernel length must equal factor")

    def init(self, rng):
        self.kernel = np.ones(self.factor)
        self.bias = np.zeros(1)
        return self

    def params(self):
        return [self.kernel, self.bias]

    def output_shape(self, in_shape: Shape3) -> Shape3:
        if in_shape.height != 1 or in_shape.channels != 1:
            raise ShapeError(f"upsample needs a w x 1 x 1 input, got {in_shape}")
        return Shape3(in_shape.width * self.factor, 1, 1)

    def forward(self, x, counter=None):
        x = _as_array(x)
        if x.shape[0] != 1 or x.shape[2] != 1:
            raise ShapeError(f"upsample needs a w x 1 x 1 input, got {x.shape[1]}x{x.shape[0]}x{x.shape[2]}")
        v = x[0, :, 0]
        out = (v[:, None] * self.kernel[None, :]).reshape(-1) + self.bias[0]
        if counter is not None:
            counter.macs += out.size
        return out.reshape(1, -1, 1), x

    def backward(self, cache, grad_out, need_input_grad=True):
        x = cache
        v = x[0, :, 0]
        g = grad_out.reshape(v.size, self.factor)
        grad_k = v @ g
        grad_b = np.array([g.sum()])
        grad_in = (g @ self.kernel).reshape(1, -1, 1) if need_input_grad else None
        return grad_in, [grad_k, grad_b]


# --------------------------------------------------------------------------
# functional entry points over Tensor3

def conv_forward(layer: ConvLayer, t: Tensor3) -> Tensor3:
    return Tensor3(layer.forward(t)[0])


def conv_backward(layer: ConvLayer, t: Tensor3, grad_out: Tensor3):
    """Returns ``(grad_in, grad_weights, grad_bias)``."""
    expected = conv_output_shape(t.shape, layer.spec)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out is {grad_out.shape}, conv output is {expected}")
    _, cache = layer.forward(t)
    gin, (gw, gb) = layer.backward(cache, grad_out.data)
    return Tensor3(gin), gw, gb


def dist_lstm_forward(layer: DistLstmLayer, t: Tensor3):
    out, cache = layer.forward(t)
    return Tensor3(out), cache


def dist_lstm_backward(layer: DistLstmLayer, t: Tensor3, cache, grad_out: Tensor3):
    """Returns ``(grad_in, grad_W, grad_U, grad_b)``; row gradients are summed."""
    if cache[0].shape != t.data.shape:
        raise ShapeError("cache does not belong to this input")
    gin, (gW, gU, gb) = layer.backward(cache, grad_out.data)
    return Tensor3(gin), gW, gU, gb


def upsample_row_forward(layer: UpsampleLayer, t: Tensor3) -> Tensor3:
    return Tensor3(layer.forward(t)[0])
