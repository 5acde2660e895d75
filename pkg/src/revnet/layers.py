"""Layers that run forward, backward (gradients), and in reverse.

Every layer exposes four operations:

    forward(x)            -> (y, cache)
    backward(g, cache)    -> (gx, grads or None)
    reverse(v, ...)       -> (xbar, rcache)     feed-backward reconstruction
    reverse_backward(g, rcache) -> (gv, grads or None)

The reverse path reuses the forward parameters: a Dense layer reverses
through W^T, a Conv layer through the transposed convolution with the same
kernel, so reconstruction-loss gradients land in the same W and b buffers
as classification gradients (tied weights). Parameterized layers add the
*previous* parameterized layer's bias on the reverse step; the network
wires that up and routes the resulting "b_prev" gradient to its owner.

reverse_backward is the adjoint of reverse: it propagates an upstream
gradient arriving at the reconstruction back toward the likelihood end of
the chain, collecting parameter gradients from the tied usage on the way.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor
from .errors import DomainError, NumericError, ShapeError

SOFTMAX_CLAMP = 1e-12


@dataclass
class ReverseConfig:
    """Switches for the feed-backward path.

    activation: "inverse" applies the exact inverse of LeakyRelu (exists for
        slope > 0); "forward" applies the forward activation, the literal
        Eq.-style variant, for fidelity experiments.
    pool: "upsample" spreads each pooled value over its window
        (nearest-neighbor); "unpool" scatters into the recorded argmax
        positions and needs the forward trace.
    grad_through_output: propagate reconstruction gradients past the
        inverse-softmax into the forward logits (off by default; the 1/o
        factors explode for saturated outputs).
    """

    activation: str = "inverse"
    pool: str = "upsample"
    grad_through_output: bool = False


class Layer:
    kind = "layer"
    has_params = False

    def out_shape_for(self, in_shape):
        raise NotImplementedError

    def forward(self, x):
        raise NotImplementedError

    def backward(self, g, cache):
        raise NotImplementedError

    def reverse(self, v, bias_prev=None, trace_entry=None, rcfg=None):
        raise NotImplementedError

    def reverse_backward(self, g, rcache):
        raise NotImplementedError

    def init_params(self, rng, dtype):
        pass

    def param_tensors(self):
        """Name -> array mapping of trainable buffers (empty if none)."""
        return {}

    def hyperparams(self):
        return {}

    def __repr__(self):
        hp = ",".join(f"{k}={v}" for k, v in self.hyperparams().items())
        return f"{type(self).__name__}({hp})"


def _add_bias_prev(y, bias_prev):
    """Add the previous layer's bias, broadcasting per channel for maps."""
    if bias_prev is None:
        return y
    if y.ndim == 4:
        if bias_prev.size != y.shape[1]:
            raise ShapeError(f"bias_prev has {bias_prev.size} entries, map has {y.shape[1]} channels")
        return y + bias_prev.reshape(1, -1, 1, 1)
    if bias_prev.size != y.shape[-1]:
        raise ShapeError(f"bias_prev has {bias_prev.size} entries, vector has {y.shape[-1]}")
    return y + bias_prev


def _bias_prev_grad(g):
    if g.ndim == 4:
        return g.sum(axis=(0, 2, 3))
    return g.sum(axis=0)


class Dense(Layer):
    """Affine map x @ W + b. Inputs of rank > 2 are flattened per sample.

    Reverse: v @ W^T (+ previous bias), un-flattened to the recorded input
    shape so a Dense sitting on top of a conv stack reverses back into the
    feature-map geometry.
    """

    kind = "dense"
    has_params = True

    def __init__(self, in_features, out_features):
        if in_features <= 0 or out_features <= 0:
            raise ShapeError("dense dims must be positive")
        self.in_features = in_features
        self.out_features = out_features
        self.in_shape = (in_features,)  # refined by the network builder
        self.W = None
        self.b = None
        self.vW = None
        self.vb = None

    def init_params(self, rng, dtype=tensor.SINGLE):
        std = np.sqrt(2.0 / self.in_features)
        self.W = tensor.gaussian_fill((self.in_features, self.out_features), rng, 0.0, std, dtype)
        self.b = np.zeros(self.out_features, dtype=dtype)
        self.vW = np.zeros_like(self.W)
        self.vb = np.zeros_like(self.b)

    def param_tensors(self):
        return {"W": self.W, "b": self.b, "vW": self.vW, "vb": self.vb}

    def hyperparams(self):
        return {"in": self.in_features, "out": self.out_features}

    def out_shape_for(self, in_shape):
        if int(np.prod(in_shape)) != self.in_features:
            raise ShapeError(f"dense expects {self.in_features} inputs, got shape {in_shape}")
        self.in_shape = tuple(in_shape)
        return (self.out_features,)

    def forward(self, x):
        x2 = x.reshape(x.shape[0], -1)
        if x2.shape[1] != self.in_features:
            raise ShapeError(f"dense expects {self.in_features} features, got {x2.shape[1]}")
        y = x2 @ self.W + self.b
        return y, (x2, x.shape)

    def backward(self, g, cache):
        x2, xshape = cache
        grads = {"W": x2.T @ g, "b": g.sum(axis=0)}
        gx = (g @ self.W.T).reshape(xshape)
        return gx, grads

    def reverse(self, v, bias_prev=None, trace_entry=None, rcfg=None):
        if v.shape[-1] != self.out_features:
            raise ShapeError(f"dense reverse expects {self.out_features} values, got {v.shape[-1]}")
        y = (v @ self.W.T).reshape(v.shape[0], *self.in_shape)
        y = _add_bias_prev(y, bias_prev)
        return y, (v, bias_prev is not None)

    def reverse_backward(self, g, rcache):
        v, had_bias = rcache
        g2 = g.reshape(g.shape[0], -1)
        grads = {"W": g2.T @ v}
        if had_bias:
            grads["b_prev"] = _bias_prev_grad(g)
        return g2 @ self.W, grads


class Conv(Layer):
    """2-D convolution (cross-correlation) with square kernel.

    Reverse: transposed convolution with the same kernel (+ previous bias),
    the exact adjoint of the forward linear part.
    """

    kind = "conv"
    has_params = True

    def __init__(self, c_in, c_out, k, stride=1, pad=None):
        if min(c_in, c_out, k) <= 0:
            raise ShapeError("conv dims must be positive")
        self.c_in = c_in
        self.c_out = c_out
        self.k = k
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.W = None
        self.b = None
        self.vW = None
        self.vb = None

    def init_params(self, rng, dtype=tensor.SINGLE):
        fan_in = self.c_in * self.k * self.k
        std = np.sqrt(2.0 / fan_in)
        self.W = tensor.gaussian_fill((self.c_out, self.c_in, self.k, self.k), rng, 0.0, std, dtype)
        self.b = np.zeros(self.c_out, dtype=dtype)
        self.vW = np.zeros_like(self.W)
        self.vb = np.zeros_like(self.b)

    def param_tensors(self):
        return {"W": self.W, "b": self.b, "vW": self.vW, "vb": self.vb}

    def hyperparams(self):
        return {"c_in": self.c_in, "c_out": self.c_out, "k": self.k, "stride": self.stride, "pad": self.pad}

    def out_shape_for(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.c_in:
            raise ShapeError(f"conv expects ({self.c_in},H,W), got {in_shape}")
        ho, wo = tensor._conv_geometry(in_shape[1], in_shape[2], self.k, self.k, self.stride, self.pad)
        return (self.c_out, ho, wo)

    def forward(self, x):
        y = tensor.conv2d(x, self.W, self.stride, self.pad) + self.b.reshape(1, -1, 1, 1)
        return y, x

    def backward(self, g, cache):
        x = cache
        grads = {
            "W": tensor.conv2d_weight_grad(x, g, self.W.shape, self.stride, self.pad),
            "b": g.sum(axis=(0, 2, 3)),
        }
        gx = tensor.conv2d_transposed(g, self.W, self.stride, self.pad)
        return gx, grads

    def reverse(self, v, bias_prev=None, trace_entry=None, rcfg=None):
        y = tensor.conv2d_transposed(v, self.W, self.stride, self.pad)
        y = _add_bias_prev(y, bias_prev)
        return y, (v, bias_prev is not None)

    def reverse_backward(self, g, rcache):
        v, had_bias = rcache
        # adjoint of the transposed conv is the forward conv; the kernel
        # gradient swaps the input/upstream roles of the forward formula
        grads = {"W": tensor.conv2d_weight_grad(g, v, self.W.shape, self.stride, self.pad)}
        if had_bias:
            grads["b_prev"] = _bias_prev_grad(g)
        gv = tensor.conv2d(g, self.W, self.stride, self.pad)
        return gv, grads


class LeakyRelu(Layer):
    """x if x >= 0 else slope*x; bijective for slope > 0, so the reverse
    path can apply the exact inverse."""

    kind = "lrelu"

    def __init__(self, slope=0.01):
        if slope <= 0:
            raise DomainError("leaky-relu slope must be > 0 to stay bijective")
        self.slope = slope

    def hyperparams(self):
        return {"slope": self.slope}

    def out_shape_for(self, in_shape):
        return tuple(in_shape)

    def forward(self, x):
        return np.where(x >= 0, x, x * x.dtype.type(self.slope)), x

    def backward(self, g, cache):
        x = cache
        return g * np.where(x >= 0, x.dtype.type(1), x.dtype.type(self.slope)), None

    def reverse(self, v, bias_prev=None, trace_entry=None, rcfg=None):
        mode = rcfg.activation if rcfg is not None else "inverse"
        s = v.dtype.type(self.slope)
        if mode == "forward":
            return np.where(v >= 0, v, v * s), (v, mode)
        return np.where(v >= 0, v, v / s), (v, mode)

    def reverse_backward(self, g, rcache):
        v, mode = rcache
        s = g.dtype.type(self.slope)
        factor = s if mode == "forward" else g.dtype.type(1) / s
        return g * np.where(v >= 0, g.dtype.type(1), factor), None


class MaxPool(Layer):
    """Non-overlapping window max; records argmax maps for backprop and
    for the index-unpooling reverse variant."""

    kind = "maxpool"

    def __init__(self, window):
        if window < 2:
            raise ShapeError("pool window must be >= 2")
        self.window = window

    def hyperparams(self):
        return {"window": self.window}

    def out_shape_for(self, in_shape):
        c, h, w = in_shape
        if h % self.window or w % self.window:
            raise ShapeError(f"pool window {self.window} does not divide {h}x{w}")
        return (c, h // self.window, w // self.window)

    def _windows(self, x):
        b, c, h, w = x.shape
        k = self.window
        if h % k or w % k:
            raise ShapeError(f"pool window {k} does not divide {h}x{w}")
        return x.reshape(b, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5).reshape(
            b, c, h // k, w // k, k * k
        )

    def forward(self, x):
        win = self._windows(x)
        idx = win.argmax(axis=-1)
        y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        return y, (x.shape, idx)

    def backward(self, g, cache):
        xshape, idx = cache
        b, c, h, w = xshape
        k = self.window
        win = np.zeros((b, c, h // k, w // k, k * k), dtype=g.dtype)
        np.put_along_axis(win, idx[..., None], g[..., None], axis=-1)
        gx = win.reshape(b, c, h // k, w // k, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(xshape)
        return gx, None

    def reverse(self, v, bias_prev=None, trace_entry=None, rcfg=None):
        mode = rcfg.pool if rcfg is not None else "upsample"
        k = self.window
        if mode == "unpool":
            if trace_entry is None:
                raise DomainError("index unpooling needs the forward trace")
            xshape, idx = trace_entry
            b, c, ho, wo = v.shape
            win = np.zeros((b, c, ho, wo, k * k), dtype=v.dtype)
            np.put_along_axis(win, idx[..., None], v[..., None], axis=-1)
            y = win.reshape(b, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(xshape)
            return y, (mode, idx)
        y = np.repeat(np.repeat(v, k, axis=2), k, axis=3)
        return y, (mode, None)

    def reverse_backward(self, g, rcache):
        mode, idx = rcache
        k = self.window
        b, c, h, w = g.shape
        win = g.reshape(b, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5).reshape(
            b, c, h // k, w // k, k * k
        )
        if mode == "unpool":
            return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0], None
        return win.sum(axis=-1), None


class SoftmaxHead(Layer):
    """Row-wise softmax; reverse is the inverse softmax ln(o_i) + c with
    the constant fixed to 0 (softmax is shift-invariant, so forward
    round-trips are unaffected). Outputs at or below 0 are clamped to
    1e-12 before the log; genuinely negative inputs are a caller error."""

    kind = "softmax"

    def out_shape_for(self, in_shape):
        return tuple(in_shape)

    def forward(self, x):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        o = e / e.sum(axis=-1, keepdims=True)
        return o, o

    def backward(self, g, cache):
        o = cache
        dot = (g * o).sum(axis=-1, keepdims=True)
        return o * (g - dot), None

    def reverse(self, v, bias_prev=None, trace_entry=None, rcfg=None):
        if np.any(v < -1e-9):
            raise DomainError("inverse softmax: negative likelihood entries")
        clamped = np.maximum(v, v.dtype.type(SOFTMAX_CLAMP))
        return np.log(clamped), (clamped, v > SOFTMAX_CLAMP)

    def reverse_backward(self, g, rcache):
        clamped, live = rcache
        return g / clamped * live, None


LAYER_KINDS = {cls.kind: cls for cls in (Dense, Conv, LeakyRelu, MaxPool, SoftmaxHead)}


def sgd_update(layer, grads, lr, momentum, weight_decay):
    """Momentum SGD with decoupled-from-nothing L2 (classic weight decay):

        v <- momentum*v - lr*(g + weight_decay*p);  p <- p + v

    Raises NumericError (and leaves the step unapplied) on non-finite
    gradients, and verifies parameters stay finite after the update.
    """
    if not layer.has_params:
        return
    for name, vel in (("W", "vW"), ("b", "vb")):
        g = grads.get(name)
        if g is None:
            continue
        p = getattr(layer, name)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {layer!r}.{name}")
        v = getattr(layer, vel)
        v *= g.dtype.type(momentum)
        v -= g.dtype.type(lr) * (g + g.dtype.type(weight_decay) * p)
        p += v
        if not np.all(np.isfinite(p)):
            raise NumericError(f"non-finite parameter after update: {layer!r}.{name}")
