"""Network composition: feed-forward, feed-backward, and latent generation.

A network is an ordered layer stack ending (for classification) in a
SoftmaxHead. Three views of the same parameters:

    feed_forward   x -> alpha -> o        (alpha = input of the final Dense)
    feed_backward  o -> ... -> xbar       (inverse softmax, then each layer
                                           reversed through tied weights)
    generation     tr(o) -> alphabar      (reverse of the classification
                                           tail only; optionally all the way
                                           to pixel space for visualization)

one_step_forward pushes a latent through the classification tail
(final Dense + head) with the same code path feed_forward uses, so the
two agree bit-for-bit on shared inputs.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor
from .errors import ConfigError, DomainError, ShapeError, StateError
from .layers import LAYER_KINDS, Conv, Dense, LeakyRelu, MaxPool, ReverseConfig, SoftmaxHead


def check_likelihood(o, tol=1e-6):
    """Validate the simplex invariant: entries in [0,1], rows sum to 1."""
    if o.ndim != 2:
        raise ShapeError(f"likelihood must be [batch x classes], got {o.shape}")
    if np.any(o < -tol) or np.any(o > 1 + tol):
        raise DomainError("likelihood entries outside [0,1]")
    if np.any(np.abs(o.sum(axis=1) - 1) > tol):
        raise DomainError("likelihood rows do not sum to 1")
    return o


@dataclass
class TransformConfig:
    """How to synthesize hard-sample-like likelihoods from real outputs.

    boost_count entries (chosen uniformly at random, by default excluding
    the argmax so the result sits near a decision boundary) are raised to
    boost_factor * max(row); optionally the row is renormalized onto the
    simplex afterwards.
    """

    boost_count: int = 1
    boost_factor: float = 0.95
    renormalize: bool = True
    include_argmax: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.boost_count < 1:
            raise ConfigError("transform boost_count must be >= 1")
        if not 0.0 <= self.boost_factor <= 1.0:
            raise ConfigError("transform boost_factor must be in [0,1]")


def transform_likelihood_with_pre(o, cfg, rng):
    """Returns (pre, post): the boosted rows before and after renormalization."""
    n = o.shape[1]
    if cfg.boost_count >= n:
        raise ConfigError(f"boost_count {cfg.boost_count} must be < class count {n}")
    pre = o.copy()
    top = o.argmax(axis=1)
    peak = o.max(axis=1)
    for r in range(o.shape[0]):
        if cfg.include_argmax:
            pool = np.arange(n)
        else:
            pool = np.delete(np.arange(n), top[r])
        chosen = rng.choice(pool, size=cfg.boost_count, replace=False)
        pre[r, chosen] = o.dtype.type(cfg.boost_factor) * peak[r]
    if not cfg.renormalize:
        return pre, pre.copy()
    sums = pre.sum(axis=1, keepdims=True)
    return pre, pre / sums


def transform_likelihood(o, cfg, rng):
    return transform_likelihood_with_pre(o, cfg, rng)[1]


class ReversibleNetwork:
    """Ordered layer stack with tied forward/reverse parameter use."""

    def __init__(self, layers, input_shape, n_classes=None, rcfg=None):
        if not layers:
            raise ConfigError("network needs at least one layer")
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.n_classes = n_classes
        self.rcfg = rcfg or ReverseConfig()
        self.shapes = [self.input_shape]
        for layer in self.layers:
            self.shapes.append(layer.out_shape_for(self.shapes[-1]))
        self.has_head = isinstance(self.layers[-1], SoftmaxHead)
        self.final_dense_idx = None
        for i in range(len(self.layers) - 1, -1, -1):
            if isinstance(self.layers[i], Dense):
                self.final_dense_idx = i
                break
        # bias on the reverse step comes from the previous parameterized layer
        self._prev_param = [None] * len(self.layers)
        last = None
        for i, layer in enumerate(self.layers):
            if layer.has_params:
                self._prev_param[i] = last
                last = i

    # -- construction -----------------------------------------------------

    def init_params(self, rng, dtype=tensor.SINGLE):
        self.dtype = dtype
        for layer in self.layers:
            layer.init_params(rng, dtype)
        return self

    def validate_classifier(self):
        if not self.has_head:
            raise ConfigError("classifier network must end in a softmax head")
        if self.final_dense_idx is None:
            raise ConfigError("classifier network needs a dense layer before the head")
        out = self.layers[self.final_dense_idx].out_features
        if self.n_classes is not None and out != self.n_classes:
            raise ConfigError(f"final dense emits {out} values but class_count is {self.n_classes}")
        return self

    def param_layers(self):
        return [l for l in self.layers if l.has_params]

    def new_grad_acc(self):
        return [{} for _ in self.layers]

    @staticmethod
    def _acc(acc_entry, name, g):
        if name in acc_entry:
            acc_entry[name] = acc_entry[name] + g
        else:
            acc_entry[name] = g

    # -- forward ----------------------------------------------------------

    def feed_forward(self, x):
        """Full pass; returns (o, alpha, trace) with alpha the penultimate
        feature (the final Dense layer's input)."""
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"input shape {x.shape[1:]} != network input {self.input_shape}")
        v = x
        trace = []
        alpha = None
        for i, layer in enumerate(self.layers):
            if i == self.final_dense_idx:
                alpha = v
            v, cache = layer.forward(v)
            trace.append(cache)
        return v, alpha, trace

    def predict(self, x):
        o, _, _ = self.feed_forward(x)
        return tensor.argmax_last(o)

    def backward_from_logits(self, g, trace, acc):
        """Backprop a gradient given w.r.t. the pre-softmax logits (the
        cross-entropy/softmax combination), skipping the head layer."""
        start = len(self.layers) - 2 if self.has_head else len(self.layers) - 1
        for i in range(start, -1, -1):
            g, grads = self.layers[i].backward(g, trace[i])
            if grads:
                for name, val in grads.items():
                    self._acc(acc[i], name, val)
        return g

    # -- reverse ----------------------------------------------------------

    def _reverse_span(self, v, hi, lo, trace, want_caches):
        """Reverse layers[lo:hi] (applied in reversed order) starting from v."""
        rcaches = [None] * len(self.layers)
        for i in range(hi - 1, lo - 1, -1):
            layer = self.layers[i]
            bias_prev = None
            if layer.has_params:
                j = self._prev_param[i]
                if j is not None:
                    bias_prev = self.layers[j].b
            entry = trace[i] if trace is not None else None
            v, rc = layer.reverse(v, bias_prev, entry, self.rcfg)
            if want_caches:
                rcaches[i] = rc
        return (v, rcaches) if want_caches else v

    def feed_backward(self, o, trace=None, want_caches=False):
        """Reconstruct the input from the output likelihood (Eq.-3 style):
        inverse softmax first, then every layer reversed."""
        if self.has_head:
            check_likelihood(np.asarray(o), tol=1e-4)
        if self.rcfg.pool == "unpool" and trace is None and any(
            isinstance(l, MaxPool) for l in self.layers
        ):
            raise StateError("index-unpool reverse needs the forward trace")
        return self._reverse_span(o, len(self.layers), 0, trace, want_caches)

    def reverse_adjoint(self, g, rcaches, acc, hi=None, lo=0):
        """Adjoint of a reverse span: walk it in forward-layer order,
        accumulating tied-weight gradients; returns the gradient w.r.t.
        the span's starting value (o for a full feed-backward)."""
        hi = len(self.layers) if hi is None else hi
        for i in range(lo, hi):
            if rcaches[i] is None:
                raise StateError(f"missing reverse cache for layer {i}")
            g, grads = self.layers[i].reverse_backward(g, rcaches[i])
            if grads:
                for name, val in grads.items():
                    if name == "b_prev":
                        self._acc(acc[self._prev_param[i]], "b", val)
                    else:
                        self._acc(acc[i], name, val)
        return g

    # -- latent generation ------------------------------------------------

    def _require_tail(self):
        if self.final_dense_idx is None or not self.has_head:
            raise ConfigError("latent generation needs a dense layer and a softmax head")

    def generate_latent(self, o_transformed, to_input=False, trace=None, want_caches=False):
        """Reverse the classification tail (inverse softmax + final Dense),
        landing at the penultimate feature level; with to_input=True keep
        reversing to pixel space (Figure-style visualization)."""
        self._require_tail()
        lo = 0 if to_input else self.final_dense_idx
        return self._reverse_span(o_transformed, len(self.layers), lo, trace, want_caches)

    def reverse_from_latent(self, alpha, trace=None):
        """Continue a reverse pass from the penultimate feature level down
        to pixel space; composed after generate_latent this equals a full
        feed_backward of the same likelihood."""
        self._require_tail()
        return self._reverse_span(alpha, self.final_dense_idx, 0, trace, False)

    def one_step_forward(self, alpha, want_caches=False):
        """Push a penultimate-level latent through final Dense + head."""
        self._require_tail()
        v = alpha
        caches = [None] * len(self.layers)
        for i in range(self.final_dense_idx, len(self.layers)):
            v, cache = self.layers[i].forward(v)
            caches[i] = cache
        return (v, caches) if want_caches else v

    def one_step_adjoint(self, g_logits, caches, acc):
        """Backprop from tail logits down to the latent, accumulating tail
        parameter gradients; returns the gradient w.r.t. the latent."""
        g = g_logits
        for i in range(len(self.layers) - 2, self.final_dense_idx - 1, -1):
            g, grads = self.layers[i].backward(g, caches[i])
            if grads:
                for name, val in grads.items():
                    self._acc(acc[i], name, val)
        return g


# ---------------------------------------------------------------------------
# architecture specs


@dataclass
class NetworkSpec:
    """Declarative layer list, buildable from the config-file DSL.

    Tokens: conv:<c_out>:<k>[:<stride>[:<pad>]] | pool:<w> |
    lrelu[:<slope>] | dense:<out> | softmax. Input channels chain
    automatically; the final layer must be softmax and the dense layer
    before it must emit class_count values.
    """

    input_shape: tuple
    n_classes: int
    tokens: list = field(default_factory=list)

    def build(self, rng=None, dtype=tensor.SINGLE, rcfg=None):
        layers = []
        shape = tuple(self.input_shape)
        for tok in self.tokens:
            parts = str(tok).strip().split(":")
            kind, args = parts[0], parts[1:]
            try:
                if kind == "conv":
                    c_out, k = int(args[0]), int(args[1])
                    stride = int(args[2]) if len(args) > 2 else 1
                    pad = int(args[3]) if len(args) > 3 else None
                    layers.append(Conv(shape[0], c_out, k, stride, pad))
                elif kind == "pool":
                    layers.append(MaxPool(int(args[0])))
                elif kind == "lrelu":
                    layers.append(LeakyRelu(float(args[0]) if args else 0.01))
                elif kind == "dense":
                    layers.append(Dense(int(np.prod(shape)), int(args[0])))
                elif kind == "softmax":
                    layers.append(SoftmaxHead())
                else:
                    raise ConfigError(f"unknown layer token {tok!r}")
            except (IndexError, ValueError) as exc:
                raise ConfigError(f"bad layer token {tok!r}: {exc}") from exc
            shape = layers[-1].out_shape_for(shape)
        net = ReversibleNetwork(layers, self.input_shape, self.n_classes, rcfg=rcfg)
        net.validate_classifier()
        if rng is not None:
            net.init_params(rng, dtype)
        return net


def baseline_spec(input_shape, n_classes):
    """The six-conv/two-pool baseline topology; the flatten size feeding
    the first dense layer follows from actual shape chaining."""
    tokens = [
        "conv:32:5", "lrelu", "conv:32:5", "lrelu", "pool:2",
        "conv:64:5", "lrelu", "conv:64:5", "lrelu", "pool:2",
        "conv:128:5", "lrelu", "conv:128:5", "lrelu",
        "dense:256", "lrelu", f"dense:{n_classes}", "softmax",
    ]
    return NetworkSpec(tuple(input_shape), n_classes, tokens)


def small_cnn_spec(input_shape, n_classes):
    """A compact conv net for desk-scale runs."""
    tokens = [
        "conv:16:5", "lrelu", "pool:2",
        "conv:32:5", "lrelu", "pool:2",
        "dense:128", "lrelu", f"dense:{n_classes}", "softmax",
    ]
    return NetworkSpec(tuple(input_shape), n_classes, tokens)


ARCHITECTURES = {"baseline": baseline_spec, "small": small_cnn_spec}
