"""Error-feedback strategies and the plasticity rules of every learning rule.

Layer ``i`` of a network maps ``x_i`` to ``x_{i+1}``; its feedback entry
carries ``e_{i+1}`` back to ``x_i``.  BP uses the forward weights directly,
FA/SF/KP hold one feedback matrix ``B`` shaped like ``W^T``, DFA holds a
matrix from the output error straight to ``x_i``, and the product rules
(PFA, PFA-o) route through an intermediate population:
``ebar = B e_{i+1}`` followed by ``R ebar``.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from . import conv
from .errors import ConfigError, DimensionError, StateError
from .netcore import activation_derivative, glorot_uniform
from .optim import step
from .rng import make_rng

BP = "BP"
FA = "FA"
DFA = "DFA"
SF = "SF"
KP = "KP"
PFA = "PFA"
PFA_O = "PFA_O"
ALGORITHMS = (BP, FA, DFA, SF, KP, PFA, PFA_O)
PRODUCT_RULES = (PFA, PFA_O)


@dataclass(frozen=True)
class FeedbackAlgorithm:
    """Algorithm tag plus its hyperparameters.

    ``expansion_ratio`` is ``1/lambda`` = intermediate width / downstream
    width and is required exactly for the product rules.  ``sf_scaled``
    rescales the SF sign matrix to Glorot magnitude.
    """

    tag: str
    expansion_ratio: Optional[float] = None
    sf_scaled: bool = True

    def __post_init__(self):
        tag = self.tag.upper().replace("-", "_")
        object.__setattr__(self, "tag", tag)
        if tag not in ALGORITHMS:
            raise ConfigError(f"unknown feedback algorithm {self.tag!r}")
        if tag in PRODUCT_RULES:
            if self.expansion_ratio is None:
                raise ConfigError(f"{tag} needs an expansion ratio")
            if not self.expansion_ratio >= 1.0:
                raise ConfigError(
                    f"expansion ratio must be >= 1 (lambda <= 1), got {self.expansion_ratio}"
                )
        elif self.expansion_ratio is not None:
            raise ConfigError(f"{tag} takes no expansion ratio")

    @property
    def is_product(self):
        return self.tag in PRODUCT_RULES

    @property
    def lam(self):
        return 1.0 / self.expansion_ratio if self.is_product else None


def intermediate_width(n_next, expansion_ratio):
    return max(int(n_next), int(round(n_next * expansion_ratio)))


def semi_orthogonal(rows, cols, rng):
    """Tall matrix with orthonormal columns: QR of a Gaussian draw, sign-fixed."""
    if rows < cols:
        raise DimensionError(f"semi-orthogonal needs rows >= cols, got {rows}x{cols}")
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


@dataclass
class DirectFeedback:
    """A single feedback matrix (FA, DFA, SF, KP)."""

    B: np.ndarray
    plastic: bool = False

    def path(self):
        return self.B


@dataclass
class ProductFeedback:
    """Fixed ``B`` into the intermediate population, plastic ``R`` out of it.

    There is no feedback synapse parallel to ``W``; only the composed path
    ``R B`` can be compared with ``W^T``.
    """

    B: np.ndarray
    R: np.ndarray
    ebar: Optional[np.ndarray] = None

    def path(self):
        if self.R.ndim == 4:
            return np.einsum("jkhw,ki->jihw", self.R, self.B[:, :, 0, 0])
        return self.R @ self.B


Feedback = Union[DirectFeedback, ProductFeedback]


@dataclass
class FeedbackState:
    algorithm: FeedbackAlgorithm
    layers: List[Optional[Feedback]]
    sf_scales: List[Optional[float]] = field(default_factory=list)

    @property
    def tag(self):
        return self.algorithm.tag

    def parameters(self):
        """Trainable feedback parameters keyed like the optimizer expects."""
        params = {}
        for i, fb in enumerate(self.layers):
            if isinstance(fb, ProductFeedback):
                params[("R", i)] = fb.R
            elif isinstance(fb, DirectFeedback) and fb.plastic:
                params[("B", i)] = fb.B
        return params


def transposed_weight(layer):
    """``W^T`` in the layout of a feedback tensor (channels swapped for conv)."""
    if layer.kind == "conv":
        return layer.W.transpose(1, 0, 2, 3)
    return layer.W.T


def _sign_scale(wt, enabled):
    if not enabled:
        return 1.0
    fan_in, fan_out = wt.shape[1], wt.shape[0]
    receptive = int(np.prod(wt.shape[2:])) if wt.ndim > 2 else 1
    target = np.sqrt(wt.size * 2.0 / ((fan_in + fan_out) * receptive))
    norm = np.linalg.norm(np.sign(wt))
    return float(target / norm) if norm > 0 else 1.0


def init_feedback(net, algorithm, seed):
    """Draw the feedback parameters for every layer of ``net``.

    Each layer gets its own random stream ``(seed, "feedback", i)`` so the
    forward initialisation never depends on the algorithm.
    """
    tag = algorithm.tag
    layers, scales = [], []
    n_out = int(np.prod(net.shapes[-1]))
    for i, layer in enumerate(net.layers):
        rng = make_rng(seed, "feedback", tag, i)
        wt = transposed_weight(layer)
        scale = None
        if tag == BP:
            fb = None
        elif tag in (FA, KP):
            fb = DirectFeedback(B=glorot_uniform(wt.shape, rng), plastic=tag == KP)
        elif tag == SF:
            scale = _sign_scale(wt, algorithm.sf_scaled)
            fb = DirectFeedback(B=scale * np.sign(wt))
        elif tag == DFA:
            n_in = int(np.prod(net.shapes[i]))
            fb = DirectFeedback(B=glorot_uniform((n_in, n_out), rng))
        else:
            n_next = wt.shape[1]
            n_bar = intermediate_width(n_next, algorithm.expansion_ratio)
            if tag == PFA:
                lam = n_next / n_bar
                B = glorot_uniform((n_bar, n_next), rng, gain=np.sqrt((1.0 + lam) / 2.0))
            else:
                B = semi_orthogonal(n_bar, n_next, rng)
            if layer.kind == "conv":
                B = B[:, :, None, None]
                R = glorot_uniform((wt.shape[0], n_bar) + wt.shape[2:], rng)
            else:
                R = glorot_uniform((wt.shape[0], n_bar), rng)
            fb = ProductFeedback(B=B, R=R)
        layers.append(fb)
        scales.append(scale)
    return FeedbackState(algorithm=algorithm, layers=layers, sf_scales=scales)


def _transport(layer, kernel_like, e, in_shape):
    """Send ``e`` (shaped like layer output) back through a W^T-shaped tensor."""
    n = e.shape[0]
    if layer.kind == "conv":
        return conv.conv_transpose2d(
            e, kernel_like.transpose(1, 0, 2, 3), layer.stride, layer.padding, in_shape[1:]
        )
    return (e.reshape(n, -1) @ kernel_like.T).reshape((n,) + tuple(in_shape))


def feedback_signal(state, net, i, e_src, need_signal=True):
    """Signal arriving at ``x_i`` before the activation derivative is applied.

    ``e_src`` is ``e_{i+1}`` (or ``e_L`` for DFA).  For the product rules the
    intermediate error is cached on the feedback entry for the R update;
    with ``need_signal=False`` only that cache is filled and None returned.
    """
    layer = net.layers[i]
    fb = state.layers[i]
    in_shape = net.shapes[i]
    n = e_src.shape[0]
    if state.tag == BP:
        return _transport(layer, transposed_weight(layer), e_src, in_shape) if need_signal else None
    if isinstance(fb, ProductFeedback):
        if layer.kind == "conv":
            fb.ebar = conv.pointwise(e_src, fb.B[:, :, 0, 0])
        else:
            fb.ebar = e_src @ fb.B.T
        if not need_signal:
            return None
        return _transport(layer, fb.R, fb.ebar, in_shape)
    if fb is None:
        raise StateError(f"layer {i} has no feedback entry")
    if not need_signal:
        return None
    if state.tag == DFA:
        return (e_src.reshape(n, -1) @ fb.B.T).reshape((n,) + tuple(in_shape))
    return _transport(layer, fb.B, e_src, in_shape)


def propagate_error(state, net, i, e_next, cache):
    """``e_i`` from ``e_{i+1}`` (or ``e_L`` under DFA) for a layer without skips."""
    if i < 1:
        raise StateError("no error is defined at the input layer")
    g = feedback_signal(state, net, i, e_next)
    return activation_derivative(cache.a(i), net.layers[i - 1].activation) * g


def backward(state, net, cache, e_out):
    """Errors ``e_1..e_L`` for the whole network; ``errors[0]`` is None.

    Identity skip connections pass ``e_{i+1}`` unchanged to ``x_k`` under
    every rule except DFA, which broadcasts the output error only.
    """
    L = net.depth
    errors = [None] * (L + 1)
    errors[L] = e_out
    signals = [None] * (L + 1)
    direct = state.tag == DFA
    for i in range(L - 1, -1, -1):
        e_next = errors[i + 1]
        layer = net.layers[i]
        if layer.skip_from is not None and not direct and layer.skip_from > 0:
            k = layer.skip_from
            signals[k] = e_next if signals[k] is None else signals[k] + e_next
        src = e_out if direct else e_next
        if i == 0:
            if state.algorithm.is_product:
                feedback_signal(state, net, 0, src, need_signal=False)
            break
        g = feedback_signal(state, net, i, src)
        if signals[i] is not None:
            g = g + signals[i]
        errors[i] = activation_derivative(cache.a(i), net.layers[i - 1].activation) * g
    return errors


@dataclass
class UpdateBatch:
    """Per-parameter update directions, batch-averaged.

    ``directions[key]`` is the unscaled plasticity term (for BP the negative
    gradient); the update the rule prescribes is ``lr * directions[key]``.
    """

    lr: float
    directions: dict

    def delta(self, key):
        return self.lr * self.directions[key]


def _forward_update(layer, x, e):
    n = x.shape[0]
    if layer.kind == "conv":
        dW = conv.conv_weight_grad(x, e, layer.kernel_hw, layer.stride, layer.padding) / n
        db = e.sum(axis=(2, 3)).mean(axis=0)
    else:
        dW = e.T @ x.reshape(n, -1) / n
        db = e.mean(axis=0)
    return dW, db


def _feedback_update(layer, x, err):
    """``mean(x err^T)`` shaped like a W^T-layout feedback tensor."""
    n = x.shape[0]
    if layer.kind == "conv":
        g = conv.conv_weight_grad(x, err, layer.kernel_hw, layer.stride, layer.padding)
        return g.transpose(1, 0, 2, 3) / n
    return x.reshape(n, -1).T @ err / n


def compute_updates(state, net, cache, errors, lr):
    """Plasticity terms for forward weights, biases and plastic feedback."""
    directions = {}
    for i, layer in enumerate(net.layers):
        x = cache.x(i)
        e = errors[i + 1]
        if e is None:
            raise StateError(f"error e_{i + 1} missing")
        dW, db = _forward_update(layer, x, e)
        directions[("W", i)] = dW
        directions[("b", i)] = db
        fb = state.layers[i]
        if isinstance(fb, ProductFeedback):
            if fb.ebar is None:
                raise StateError(f"intermediate error for layer {i} not computed")
            directions[("R", i)] = _feedback_update(layer, x, fb.ebar)
        elif state.tag == KP:
            directions[("B", i)] = _feedback_update(layer, x, e)
    return UpdateBatch(lr=lr, directions=directions)


def all_parameters(net, state):
    params = net.parameters()
    params.update(state.parameters())
    return params


def refresh_sign_feedback(net, state):
    for i, layer in enumerate(net.layers):
        fb = state.layers[i]
        fb.B[...] = state.sf_scales[i] * np.sign(transposed_weight(layer))


def apply_updates(net, state, updates, sgd):
    """Hand every parameter to the optimizer; SF then re-reads the signs of W."""
    step(all_parameters(net, state), updates, sgd)
    if state.tag == SF:
        refresh_sign_feedback(net, state)
