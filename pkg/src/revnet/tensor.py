"""Dense array primitives for the reversible-network stack.

Arrays are plain numpy ndarrays (row-major, rank <= 4 in practice:
[batch, C, H, W] activations and rank-2 weights). float32 is the training
default; float64 exists for gradient checking. Convolution uses
cross-correlation semantics (no kernel flip) with zero padding.

The three convolution kernels (forward, transposed/adjoint, weight
gradient) dispatch to torch.nn.functional through zero-copy bridges when
torch is importable, because the pure-numpy path is an order of magnitude
slower on CPU. Semantics of both backends are identical and are pinned by
the adjoint and direct-loop oracle tests. Select explicitly with
REVNET_CONV_BACKEND={auto,torch,native}.
"""

import os

import numpy as np

from .errors import ShapeError

try:
    import torch
    import torch.nn.functional as _tf

    _HAVE_TORCH = True
except ImportError:  # torch is an optional accelerator, never required
    _HAVE_TORCH = False

SINGLE = np.float32
DOUBLE = np.float64

_DETERMINISTIC = False


def set_determinism(flag):
    """Pin internal parallelism so repeated runs are bit-identical.

    CPU kernels in both backends are already deterministic for a fixed
    thread count; this freezes the torch thread count for the process.
    """
    global _DETERMINISTIC
    _DETERMINISTIC = bool(flag)
    if flag and _HAVE_TORCH:
        torch.set_num_threads(torch.get_num_threads())


def determinism_enabled():
    return _DETERMINISTIC


def set_threads(n=None):
    """Cap internal parallelism. n=None reads REVNET_THREADS; unset or
    invalid leaves the current limits alone. Returns the cap or None."""
    if n is None:
        raw = os.environ.get("REVNET_THREADS", "")
        if not raw.strip().isdigit():
            return None
        n = int(raw)
    n = max(1, int(n))
    os.environ["OMP_NUM_THREADS"] = str(n)
    os.environ["OPENBLAS_NUM_THREADS"] = str(n)
    if _HAVE_TORCH:
        torch.set_num_threads(n)
    return n


def conv_backend():
    mode = os.environ.get("REVNET_CONV_BACKEND", "auto")
    if mode not in ("auto", "torch", "native"):
        raise ValueError(f"REVNET_CONV_BACKEND must be auto|torch|native, got {mode!r}")
    if mode == "torch" and not _HAVE_TORCH:
        raise RuntimeError("REVNET_CONV_BACKEND=torch but torch is not installed")
    if mode == "auto":
        return "torch" if _HAVE_TORCH else "native"
    return mode


# ---------------------------------------------------------------------------
# plumbing ops


def matmul(a, b):
    """Rank-2 matrix product [m x k] @ [k x n] -> [m x n]."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    return a @ b


def _check_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a, b):
    _check_same_shape(a, b, "add")
    return a + b


def sub(a, b):
    _check_same_shape(a, b, "sub")
    return a - b


def mul(a, b):
    _check_same_shape(a, b, "mul")
    return a * b


def scale(a, s):
    return a * a.dtype.type(s)


def transpose(a):
    if a.ndim != 2:
        raise ShapeError(f"transpose expects rank-2, got {a.shape}")
    return a.T


def reshape(a, shape):
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} ({a.size} elems) to {shape}")
    return a.reshape(shape)


def flatten(a):
    """Collapse everything after the leading (batch) axis."""
    return a.reshape(a.shape[0], -1)


def reduce_sum(a, axis=None):
    return a.sum(axis=axis)


def argmax_last(a):
    return np.argmax(a, axis=-1)


def uniform_fill(shape, rng, low=0.0, high=1.0, dtype=SINGLE):
    return rng.uniform(low, high, size=shape).astype(dtype)


def gaussian_fill(shape, rng, mean=0.0, std=1.0, dtype=SINGLE):
    return (rng.standard_normal(size=shape) * std + mean).astype(dtype)


# ---------------------------------------------------------------------------
# convolution


def _conv_geometry(h, w, kh, kw, stride, pad):
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ShapeError(f"kernel {kh}x{kw} exceeds padded input {h + 2 * pad}x{w + 2 * pad}")
    if (h + 2 * pad - kh) % stride or (w + 2 * pad - kw) % stride:
        raise ShapeError(
            f"stride {stride} does not divide geometry (input {h}x{w}, kernel {kh}x{kw}, pad {pad})"
        )
    return (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1


def _as_batched(x):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"conv input must be [C,H,W] or [B,C,H,W], got {x.shape}")


def conv2d(x, kernel, stride=1, pad=0):
    """Cross-correlate [B,C_in,H,W] with [C_out,C_in,kH,kW] -> [B,C_out,H',W']."""
    x, squeeze = _as_batched(x)
    co, ci, kh, kw = kernel.shape
    if x.shape[1] != ci:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, kernel expects {ci}")
    _conv_geometry(x.shape[2], x.shape[3], kh, kw, stride, pad)
    if conv_backend() == "torch":
        out = _tf.conv2d(_t(x), _t(kernel), stride=stride, padding=pad).numpy()
    else:
        out = _conv2d_native(x, kernel, stride, pad)
    return out[0] if squeeze else out


def conv2d_transposed(y, kernel, stride=1, pad=0):
    """Exact adjoint of conv2d with the same kernel/stride/pad.

    [B,C_out,H',W'] -> [B,C_in,H,W] with H = (H'-1)*stride + kH - 2*pad.
    For every a, b of matching shapes, <conv2d(a,K), b> == <a, conv2d_transposed(b,K)>.
    """
    y, squeeze = _as_batched(y)
    co, ci, kh, kw = kernel.shape
    if y.shape[1] != co:
        raise ShapeError(f"conv2d_transposed: input has {y.shape[1]} channels, kernel expects {co}")
    h = (y.shape[2] - 1) * stride + kh - 2 * pad
    w = (y.shape[3] - 1) * stride + kw - 2 * pad
    if h <= 0 or w <= 0:
        raise ShapeError(f"conv2d_transposed: degenerate output {h}x{w}")
    if conv_backend() == "torch":
        out = _tf.conv_transpose2d(_t(y), _t(kernel), stride=stride, padding=pad).numpy()
    else:
        out = _conv2d_transposed_native(y, kernel, stride, pad)
    return out[0] if squeeze else out


def conv2d_weight_grad(x, upstream, kernel_shape, stride=1, pad=0):
    """Gradient of sum(upstream * conv2d(x, K)) with respect to K."""
    x, _ = _as_batched(x)
    upstream, _ = _as_batched(upstream)
    co, ci, kh, kw = kernel_shape
    if conv_backend() == "torch":
        return torch.nn.grad.conv2d_weight(
            _t(x), kernel_shape, _t(upstream), stride=stride, padding=pad
        ).numpy()
    return _conv2d_weight_grad_native(x, upstream, kernel_shape, stride, pad)


def _t(a):
    # torch.from_numpy shares memory; inputs here are never mutated in place
    return torch.from_numpy(np.ascontiguousarray(a))


def _conv2d_native(x, kernel, stride, pad):
    b, ci, h, w = x.shape
    co, _, kh, kw = kernel.shape
    ho, wo = _conv_geometry(h, w, kh, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((b, co, ho, wo), dtype=x.dtype)
    # accumulate one kernel offset at a time; each term is a [C_in -> C_out] mix
    for i in range(kh):
        for j in range(kw):
            patch = x[:, :, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride]
            out += np.einsum("bchw,oc->bohw", patch, kernel[:, :, i, j], optimize=True)
    return out


def _conv2d_transposed_native(y, kernel, stride, pad):
    b, co, ho, wo = y.shape
    _, ci, kh, kw = kernel.shape
    h = (ho - 1) * stride + kh - 2 * pad
    w = (wo - 1) * stride + kw - 2 * pad
    xp = np.zeros((b, ci, h + 2 * pad, w + 2 * pad), dtype=y.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride] += np.einsum(
                "bohw,oc->bchw", y, kernel[:, :, i, j], optimize=True
            )
    return xp[:, :, pad : pad + h, pad : pad + w]


def _conv2d_weight_grad_native(x, upstream, kernel_shape, stride, pad):
    b, ci, h, w = x.shape
    co, _, kh, kw = kernel_shape
    ho, wo = upstream.shape[2:]
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    grad = np.zeros(kernel_shape, dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = x[:, :, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride]
            grad[:, :, i, j] = np.einsum("bohw,bchw->oc", upstream, patch, optimize=True)
    return grad
