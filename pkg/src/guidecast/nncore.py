"""Dense feedforward networks with hand-written backpropagation and Adam.

Networks operate on float64 arrays. Inputs may be a single vector of shape
``(input_dim,)`` or a batch of shape ``(batch, input_dim)``; parameter
gradients from a batch are summed over the batch.
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError, NumericError, StateError

ACTIVATIONS = ("identity", "relu", "softplus", "tanh")


def softplus(x):
    return np.logaddexp(0.0, x)


def _activate(name, a):
    if name == "identity":
        return a
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "softplus":
        return softplus(a)
    if name == "tanh":
        return np.tanh(a)
    raise ConfigError(f"unknown activation {name!r}")


def _activation_grad(name, a, h):
    """Local derivative of the activation given pre-activation a and output h."""
    if name == "identity":
        return np.ones_like(a)
    if name == "relu":
        return (a > 0.0).astype(a.dtype)
    if name == "softplus":
        return expit(a)
    if name == "tanh":
        return 1.0 - h * h
    raise ConfigError(f"unknown activation {name!r}")


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ConfigError(
                f"layer shapes do not agree: weight {self.weight.shape}, bias {self.bias.shape}"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def input_dim(self):
        return self.weight.shape[1]

    @property
    def output_dim(self):
        return self.weight.shape[0]


@dataclass
class ForwardRecord:
    """Cached activations of one forward pass, consumed by ``DenseNet.backward``."""

    net_id: int
    inputs: list  # input to each layer
    preacts: list
    outputs: list
    batched: bool

    @property
    def output(self):
        out = self.outputs[-1]
        return out if self.batched else out[0]


class DenseNet:
    """A stack of affine layers, each followed by an elementwise activation."""

    def __init__(self, layers):
        layers = list(layers)
        if not layers:
            raise ConfigError("a network needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i - 1].output_dim != layers[i].input_dim:
                raise ConfigError(
                    f"layer {i - 1} outputs {layers[i - 1].output_dim} values "
                    f"but layer {i} expects {layers[i].input_dim}"
                )
        self.layers = layers

    @classmethod
    def build(cls, sizes, rng, hidden_activation="relu", output_activation="identity"):
        """Create a network with layer widths ``sizes = [in, h1, ..., out]``.

        Weights are drawn uniformly in ``[-b, b]`` with ``b`` scaled by fan-in
        (He-uniform for relu layers); biases start at zero.
        """
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ConfigError(f"invalid layer sizes {sizes}")
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            act = output_activation if last else hidden_activation
            bound = np.sqrt((6.0 if act == "relu" else 3.0) / n_in)
            w = rng.uniform(-bound, bound, size=(n_out, n_in))
            layers.append(Layer(w, np.zeros(n_out), act))
        return cls(layers)

    @property
    def input_dim(self):
        return self.layers[0].input_dim

    @property
    def output_dim(self):
        return self.layers[-1].output_dim

    def parameters(self):
        """Live references ``[W0, b0, W1, b1, ...]``; updating them in place updates the net."""
        params = []
        for layer in self.layers:
            params.extend([layer.weight, layer.bias])
        return params

    def parameter_names(self, prefix="net"):
        names = []
        for i in range(len(self.layers)):
            names.extend([f"{prefix}.{i}.weight", f"{prefix}.{i}.bias"])
        return names

    @property
    def n_params(self):
        return sum(p.size for p in self.parameters())

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        batched = x.ndim == 2
        if x.ndim not in (1, 2) or x.shape[-1] != self.input_dim:
            raise ConfigError(f"expected input of width {self.input_dim}, got shape {x.shape}")
        return (x if batched else x[None, :]), batched

    def record(self, x):
        """Run a forward pass and keep every intermediate needed for backward."""
        h, batched = self._check_input(x)
        inputs, preacts, outputs = [], [], []
        for i, layer in enumerate(self.layers):
            inputs.append(h)
            with np.errstate(over="ignore", invalid="ignore"):
                a = h @ layer.weight.T + layer.bias
                h = _activate(layer.activation, a)
            if not np.all(np.isfinite(h)):
                raise NumericError(f"non-finite activation in layer {i}")
            preacts.append(a)
            outputs.append(h)
        return ForwardRecord(id(self), inputs, preacts, outputs, batched)

    def forward(self, x):
        return self.record(x).output

    __call__ = forward

    def backward(self, record, upstream):
        """Backpropagate ``upstream = dL/d(output)``.

        Returns ``(grads, input_grad)`` where ``grads`` is aligned with
        ``parameters()`` and holds gradients summed over the batch.
        """
        if record is None or not isinstance(record, ForwardRecord):
            raise StateError("backward() needs the record of a forward pass")
        if record.net_id != id(self):
            raise StateError("forward record belongs to a different network")
        g = np.asarray(upstream, dtype=np.float64)
        if not record.batched:
            g = g[None, :]
        if g.shape != record.outputs[-1].shape:
            raise ConfigError(f"upstream gradient shape {g.shape} != output shape")
        grads = [None] * (2 * len(self.layers))
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            g = g * _activation_grad(layer.activation, record.preacts[i], record.outputs[i])
            grads[2 * i] = g.T @ record.inputs[i]
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ layer.weight
        return grads, (g if record.batched else g[0])

    def copy(self):
        return DenseNet(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )

    def to_dict(self):
        return {
            "layers": [
                {
                    "shape": list(l.weight.shape),
                    "activation": l.activation,
                    "weight": l.weight.tolist(),
                    "bias": l.bias.tolist(),
                }
                for l in self.layers
            ]
        }

    @classmethod
    def from_dict(cls, d):
        layers = []
        for spec in d["layers"]:
            w = np.array(spec["weight"], dtype=np.float64).reshape(spec["shape"])
            layers.append(Layer(w, np.array(spec["bias"], dtype=np.float64), spec["activation"]))
        return cls(layers)

    def __eq__(self, other):
        if not isinstance(other, DenseNet) or len(self.layers) != len(other.layers):
            return False
        return all(
            a.activation == b.activation
            and np.array_equal(a.weight, b.weight)
            and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )


def save_net(path, net):
    """Write a network as JSON. Floats are written with ``repr`` so loading is bit-exact."""
    with open(path, "w") as f:
        json.dump(net.to_dict(), f)


def load_net(path):
    with open(path) as f:
        return DenseNet.from_dict(json.load(f))


class Adam:
    """Adaptive-moment optimizer updating a list of arrays in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, names=None):
        self.params = list(params)
        self.names = list(names) if names is not None else [f"param[{i}]" for i in range(len(self.params))]
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads):
        """Apply one update for loss gradients ``grads`` (descent direction is ``-grads``)."""
        if len(grads) != len(self.params):
            raise ConfigError(f"got {len(grads)} gradients for {len(self.params)} parameters")
        # validate everything before touching any state so a bad step is a no-op
        for name, p, g in zip(self.names, self.params, grads):
            if g.shape != p.shape:
                raise ConfigError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
