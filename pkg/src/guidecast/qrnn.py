"""Multi-head quantile regression network with non-crossing heads.

The backbone maps ``[x_prev, c]`` to ``T x Q`` raw heads. Head 0 is the
lowest quantile; every further level adds ``softplus(raw)`` to the previous
one, so the fan can never cross.
"""

import json

import numpy as np
from scipy.special import expit

from .embeddings import build_conditions
from .errors import ConfigError
from .forecaster import QuantileFan
from .nncore import DenseNet, softplus
from .rng import stream
from .training import TrainConfig, fit

DEFAULT_LEVELS = (0.05, 0.15, 0.25, 0.35, 0.45, 0.5, 0.55, 0.65, 0.75, 0.85, 0.95)


class QrnnModel:
    def __init__(self, backbone, levels, T):
        self.backbone = backbone
        self.levels = np.asarray(levels, dtype=np.float64)
        self.T = int(T)
        if np.any(np.diff(self.levels) <= 0) or np.any((self.levels <= 0) | (self.levels >= 1)):
            raise ConfigError("levels must be strictly increasing in (0, 1)")
        if backbone.output_dim != self.T * len(self.levels):
            raise ConfigError("backbone output must have T * Q heads")

    @property
    def Q(self):
        return len(self.levels)

    @property
    def input_dim(self):
        return self.backbone.input_dim

    @classmethod
    def create(cls, input_dim, T, levels=DEFAULT_LEVELS, hidden=(256, 256), rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        backbone = DenseNet.build([input_dim] + list(hidden) + [T * len(levels)], rng)
        return cls(backbone, levels, T)

    def parameters(self):
        return self.backbone.parameters()

    def parameter_names(self):
        return self.backbone.parameter_names("qrnn")

    @property
    def n_params(self):
        return self.backbone.n_params

    def heads(self, raw):
        return raw.reshape(raw.shape[:-1] + (self.T, self.Q))

    def quantiles(self, inputs):
        """Quantile values of shape ``(..., Q, T)`` for backbone inputs ``[x_prev, c]``."""
        raw = self.heads(self.backbone.forward(inputs))
        return _assemble(raw)

    def predict_quantiles(self, x_prev, c):
        return QuantileFan(self.levels.copy(), self.quantiles(np.concatenate([x_prev, c], axis=-1)))

    def to_dict(self):
        return {"kind": "qrnn", "T": self.T, "levels": self.levels.tolist(), "backbone": self.backbone.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(DenseNet.from_dict(d["backbone"]), d["levels"], d["T"])

    def save(self, path, extra=None):
        payload = self.to_dict()
        if extra:
            payload.update(extra)
        with open(path, "w") as f:
            json.dump(payload, f)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _assemble(raw):
    """raw heads (..., T, Q) -> quantiles (..., Q, T): y_0 = raw_0, y_i = y_0 + sum_{j<=i} softplus(raw_j)."""
    inc = softplus(raw[..., 1:])
    y = np.concatenate([raw[..., :1], raw[..., :1] + np.cumsum(inc, axis=-1)], axis=-1)
    return np.swapaxes(y, -1, -2)


def pinball_loss(fan, truth, levels=None):
    """Quantile loss averaged over levels and hours (and examples for batched input).

    ``fan`` is a ``QuantileFan`` or an array ``(..., Q, T)``.
    """
    if isinstance(fan, QuantileFan):
        levels, values = fan.levels, fan.values
    else:
        values = np.asarray(fan, dtype=np.float64)
    levels = np.asarray(levels, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if values.shape[-2] != len(levels) or values.shape[-1] != truth.shape[-1]:
        raise ConfigError("fan, truth and levels do not line up")
    err = truth[..., None, :] - values
    q = levels[:, None]
    return float(np.mean(np.maximum((q - 1) * err, q * err)))


def pinball_grad(values, truth, levels):
    """d(sum of per-element pinball losses)/d(values) for values (B, Q, T)."""
    err = truth[:, None, :] - values
    q = np.asarray(levels)[:, None]
    return -np.where(err > 0, q, q - 1.0)


def loss_and_grad(model, inputs, truth):
    """Mean pinball loss of a batch and gradients (aligned with ``parameters()``) of that mean."""
    rec = model.backbone.record(inputs)
    raw = model.heads(rec.output)  # (B, T, Q)
    values = _assemble(raw)
    B = len(truth)
    n = B * model.Q * model.T
    err = truth[:, None, :] - values
    q = model.levels[:, None]
    loss = float(np.sum(np.maximum((q - 1) * err, q * err)) / n)
    g_y = np.swapaxes(pinball_grad(values, truth, model.levels), -1, -2) / n  # (B, T, Q)
    # y_i = y_0 + sum_{1<=j<=i} softplus(r_j): dL/dr_0 = sum_i g_i, dL/dr_j = sigmoid(r_j) sum_{i>=j} g_i
    tail = np.cumsum(g_y[..., ::-1], axis=-1)[..., ::-1]
    g_raw = np.empty_like(raw)
    g_raw[..., 0] = tail[..., 0]
    g_raw[..., 1:] = tail[..., 1:] * expit(raw[..., 1:])
    grads, _ = model.backbone.backward(rec, g_raw.reshape(B, -1))
    return loss, grads


def hidden_width_for(n_params, input_dim, output_dim, n_hidden=2):
    """Width ``h`` of ``n_hidden`` equal hidden layers whose parameter count is closest to ``n_params``."""
    if n_hidden < 1:
        raise ConfigError("need at least one hidden layer")

    def count(h):
        return (input_dim + 1) * h + (n_hidden - 1) * (h + 1) * h + (h + 1) * output_dim

    h = 1
    while count(h + 1) <= n_params:
        h += 1
    return h if abs(count(h) - n_params) <= abs(count(h + 1) - n_params) else h + 1


def matched_hidden(target_params, input_dim, T, n_levels, n_hidden=2):
    h = hidden_width_for(target_params, input_dim, T * n_levels, n_hidden)
    return (h,) * n_hidden


def train_qrnn(model, train_data, val_data, cfg=None, table=None, entity_ids=None, validate=None):
    """Minibatch descent on the pinball loss with the same schedule as the VAE.

    Data are ``ExampleSet`` objects (inputs ``[lookback, theta, calendar]``,
    theta resampled per example in training) or ``(inputs, targets)`` pairs.
    """
    cfg = TrainConfig() if cfg is None else cfg

    def arrays(d):
        if isinstance(d, tuple):
            return np.asarray(d[0], dtype=np.float64), np.asarray(d[1], dtype=np.float64), None
        return build_conditions(d, table, None, entity_ids), d.target, d

    tr_in, tr_y, tr_ex = arrays(train_data)
    va_in, va_y, _ = arrays(val_data)
    if len(va_y) == 0:
        raise ConfigError("validation set is empty")
    rng = stream(cfg.seed, "qrnn-train")
    resample = tr_ex is not None and table is not None and table.K > 0

    def step(idx, epoch):
        inputs = build_conditions(tr_ex.subset(idx), table, rng, entity_ids) if resample else tr_in[idx]
        loss, grads = loss_and_grad(model, inputs, tr_y[idx])
        return -loss * len(idx), grads

    def default_validate():
        return -pinball_loss(model.quantiles(va_in), va_y, model.levels)

    return fit(
        model.parameters(), model.parameter_names(), len(tr_y), step,
        validate or default_validate, cfg, rng, score_name="neg_pinball",
    )
