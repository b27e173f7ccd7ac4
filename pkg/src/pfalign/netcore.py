"""Dense and convolutional layers, forward passes, loss and teaching signal.

Tensors are plain ``numpy.float64`` arrays with the batch on axis 0.  Dense
activations are (N, D); convolutional ones are (N, C, H, W).  A dense layer
placed after a convolutional one flattens its input.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from . import conv
from .errors import ContractError, DimensionError, NumericError, StateError

RELU = "relu"
IDENTITY = "identity"
ACTIVATIONS = (RELU, IDENTITY)


def as_tensor(data, shape=None):
    """Coerce ``data`` to a finite float64 array, optionally reshaped."""
    arr = np.asarray(data, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape) or int(np.prod(shape)) != arr.size:
            raise DimensionError(f"cannot view {arr.size} values as shape {shape}")
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise NumericError("tensor contains NaN or Inf")
    return arr


def glorot_uniform(shape, rng, gain=1.0):
    """Glorot/Xavier uniform draw; element variance is ``gain**2 * 2 / (fan_in + fan_out)``."""
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_in = shape[1] * receptive
    fan_out = shape[0] * receptive
    bound = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def activate(a, kind):
    if kind == RELU:
        return np.maximum(a, 0.0)
    if kind == IDENTITY:
        return a.copy()
    raise ContractError(f"unknown activation {kind!r}")


def activation_derivative(a, kind):
    """Elementwise derivative of the activation at preactivation ``a``.

    ReLU uses the subgradient 0 at exactly 0.
    """
    if kind == RELU:
        return (a > 0).astype(np.float64)
    if kind == IDENTITY:
        return np.ones_like(a, dtype=np.float64)
    raise ContractError(f"unknown activation {kind!r}")


@dataclass
class DenseLayer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = RELU
    skip_from: Optional[int] = None

    kind = "dense"

    def __post_init__(self):
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise DimensionError(f"dense W {self.W.shape} and b {self.b.shape} disagree")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")

    @property
    def out_features(self):
        return self.W.shape[0]

    def output_shape(self, in_shape):
        if int(np.prod(in_shape)) != self.W.shape[1]:
            raise DimensionError(f"dense layer expects {self.W.shape[1]} inputs, got {in_shape}")
        return (self.W.shape[0],)


@dataclass
class ConvLayer:
    W: np.ndarray  # (out_ch, in_ch, kh, kw)
    b: np.ndarray  # (out_ch,)
    stride: int = 1
    padding: int = 0
    activation: str = RELU
    skip_from: Optional[int] = None

    kind = "conv"

    def __post_init__(self):
        if self.W.ndim != 4 or self.b.shape != (self.W.shape[0],):
            raise DimensionError(f"conv W {self.W.shape} and b {self.b.shape} disagree")
        if self.stride < 1 or self.padding < 0:
            raise DimensionError("stride must be >= 1 and padding >= 0")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")

    @property
    def kernel_hw(self):
        return self.W.shape[2], self.W.shape[3]

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.W.shape[1]:
            raise DimensionError(f"conv layer expects {self.W.shape[1]} channels, got {in_shape}")
        kh, kw = self.kernel_hw
        return (
            self.W.shape[0],
            conv.conv_output_size(in_shape[1], kh, self.stride, self.padding),
            conv.conv_output_size(in_shape[2], kw, self.stride, self.padding),
        )


Layer = Union[DenseLayer, ConvLayer]


@dataclass
class Network:
    """Feedforward stack; ``shapes[i]`` is the per-sample shape of ``x_i``.

    ``layers[i]`` maps ``x_i`` to ``x_{i+1}``.  A layer with ``skip_from=k``
    adds ``x_k`` to its preactivation; ``x_k`` must have the output's shape.
    """

    input_shape: tuple
    layers: List[Layer]
    shapes: list = field(init=False)

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if not self.layers:
            raise DimensionError("network needs at least one layer")
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            out = layer.output_shape(shapes[-1])
            if layer.skip_from is not None:
                k = layer.skip_from
                if not 0 <= k <= i or shapes[k] != out:
                    raise DimensionError(f"layer {i} cannot skip from x_{k}")
            shapes.append(out)
        if self.layers[-1].activation != IDENTITY:
            raise ContractError("the output layer must use the identity activation")
        self.shapes = shapes

    @property
    def depth(self):
        return len(self.layers)

    def parameters(self):
        params = {}
        for i, layer in enumerate(self.layers):
            params[("W", i)] = layer.W
            params[("b", i)] = layer.b
        return params


@dataclass
class ForwardCache:
    """``xs[i]`` is x_i for i = 0..L, ``pre[i]`` is a_i for i = 1..L."""

    xs: list
    pre: list

    def x(self, i):
        if i >= len(self.xs) or self.xs[i] is None:
            raise StateError(f"activation x_{i} not cached")
        return self.xs[i]

    def a(self, i):
        if i == 0 or i >= len(self.pre) or self.pre[i] is None:
            raise StateError(f"preactivation a_{i} not cached")
        return self.pre[i]

    @property
    def logits(self):
        return self.pre[-1]


def _check_finite(*arrays, what="forward pass produced"):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"{what} NaN or Inf")


def forward_dense(layer, x):
    """Return ``(a, x_next)`` for a dense layer; ``x`` is (N, in) or flattens to it."""
    x = x.reshape(x.shape[0], -1)
    if x.shape[1] != layer.W.shape[1]:
        raise DimensionError(f"dense layer expects width {layer.W.shape[1]}, got {x.shape[1]}")
    _check_finite(x, what="input contains")
    a = x @ layer.W.T + layer.b
    out = activate(a, layer.activation)
    _check_finite(a, out)
    return a, out


def forward_conv(layer, x):
    """Return ``(a, x_next)`` for a convolutional layer on (N, C, H, W) input."""
    if x.ndim != 4:
        raise DimensionError(f"conv layer expects NCHW input, got shape {x.shape}")
    _check_finite(x, what="input contains")
    a = conv.conv2d(x, layer.W, layer.stride, layer.padding)
    a += layer.b[None, :, None, None]
    out = activate(a, layer.activation)
    _check_finite(a, out)
    return a, out


def _layer_preactivation(layer, x):
    if layer.kind == "dense":
        x = x.reshape(x.shape[0], -1)
        if x.shape[1] != layer.W.shape[1]:
            raise DimensionError(f"dense layer expects width {layer.W.shape[1]}, got {x.shape[1]}")
        return x @ layer.W.T + layer.b
    a = conv.conv2d(x, layer.W, layer.stride, layer.padding)
    a += layer.b[None, :, None, None]
    return a


def forward(net, x):
    """Run the whole network on a batch and keep every activation."""
    x = np.asarray(x, dtype=np.float64)
    if tuple(x.shape[1:]) != net.input_shape:
        if int(np.prod(x.shape[1:])) != int(np.prod(net.input_shape)):
            raise DimensionError(f"input shape {x.shape[1:]} does not fit {net.input_shape}")
        x = x.reshape((x.shape[0],) + net.input_shape)
    _check_finite(x, what="input contains")
    xs = [x]
    pre = [None]
    for i, layer in enumerate(net.layers):
        a = _layer_preactivation(layer, xs[i])
        if layer.skip_from is not None:
            a = a + xs[layer.skip_from]
        out = activate(a, layer.activation)
        _check_finite(a, out)
        pre.append(a)
        xs.append(out)
    return ForwardCache(xs=xs, pre=pre)


def forward_from(net, cache, l, a_l):
    """Re-run the network from a substituted preactivation ``a_l``.

    Activations below layer ``l`` (needed by skip connections) come from
    ``cache``.  Returns the output logits.
    """
    xs = list(cache.xs[:l])
    xs.append(activate(a_l, net.layers[l - 1].activation))
    a = a_l
    for i in range(l, net.depth):
        layer = net.layers[i]
        a = _layer_preactivation(layer, xs[i])
        if layer.skip_from is not None:
            a = a + xs[layer.skip_from]
        xs.append(activate(a, layer.activation))
    return a


def _softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    return expz / expz.sum(axis=1, keepdims=True), shifted


def per_sample_loss(logits, targets):
    probs, shifted = _softmax(logits)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    return log_norm - (shifted * targets).sum(axis=1)


def check_one_hot(targets):
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim != 2:
        raise ContractError("targets must be a 2-D one-hot array")
    ok = np.all((targets == 0.0) | (targets == 1.0)) and np.all(targets.sum(axis=1) == 1.0)
    if not ok:
        raise ContractError("targets must be one-hot rows")
    return targets


def loss_and_output_error(logits, targets):
    """Mean softmax cross-entropy and the teaching signal ``target - softmax``."""
    targets = check_one_hot(targets)
    if targets.shape != logits.shape:
        raise DimensionError(f"targets {targets.shape} do not match logits {logits.shape}")
    probs, _ = _softmax(logits)
    loss = float(per_sample_loss(logits, targets).mean())
    return loss, targets - probs


def one_hot(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def build_network(input_shape, specs: Sequence[dict], rng):
    """Instantiate a network from layer descriptors with Glorot-uniform weights.

    Each descriptor is a dict with ``type`` ("dense" or "conv") and, for
    dense, ``units``; for conv, ``channels``, ``kernel``, ``stride`` and
    ``padding``.  ``activation`` defaults to ReLU for hidden layers and to
    identity on the last layer; ``skip_from`` is optional.
    Biases start at zero.
    """
    input_shape = tuple(int(s) for s in input_shape)
    shape = input_shape
    layers = []
    for i, spec in enumerate(specs):
        last = i == len(specs) - 1
        activation = spec.get("activation", IDENTITY if last else RELU)
        kind = spec.get("type", "dense")
        if kind == "dense":
            n_in = int(np.prod(shape))
            units = int(spec["units"])
            layer = DenseLayer(
                W=glorot_uniform((units, n_in), rng),
                b=np.zeros(units),
                activation=activation,
                skip_from=spec.get("skip_from"),
            )
        elif kind == "conv":
            if len(shape) != 3:
                raise DimensionError(f"conv layer {i} needs a CHW input, got {shape}")
            k = int(spec.get("kernel", 3))
            ch = int(spec["channels"])
            layer = ConvLayer(
                W=glorot_uniform((ch, shape[0], k, k), rng),
                b=np.zeros(ch),
                stride=int(spec.get("stride", 1)),
                padding=int(spec.get("padding", 0)),
                activation=activation,
                skip_from=spec.get("skip_from"),
            )
        else:
            raise ContractError(f"unknown layer type {kind!r}")
        shape = layer.output_shape(shape)
        layers.append(layer)
    return Network(input_shape=input_shape, layers=layers)
