"""Conditional VAE with a pattern-dictionary covariance.

Encoder ``q(z | x, c) = N(mu_z, diag(sigma_z^2))``, prior ``N(0, I)`` and
decoder ``p(x | z, c) = N(mu(z, c), U diag(s(z, c))^2 U^T + xi I)``. With a
dictionary size of zero the decoder falls back to a diagonal covariance: the
dictionary is a fixed identity and ``s`` are per-feature standard deviations.
"""

import json

import numpy as np
from scipy.special import logsumexp

from . import lowrank_gauss as lg
from .embeddings import build_conditions
from .errors import ConfigError
from .nncore import DenseNet
from .rng import stream
from .training import TrainConfig, fit

LOG_SIGMA_CLAMP = 8.0
HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)


class CvaeModel:
    def __init__(self, encoder, decoder_mean, decoder_aux, dict, jitter, learn_dict=True):
        self.encoder = encoder
        self.decoder_mean = decoder_mean
        self.decoder_aux = decoder_aux
        self.dict = np.asarray(dict, dtype=np.float64)
        self.jitter = float(jitter)
        self.learn_dict = bool(learn_dict)
        T = decoder_mean.output_dim
        if encoder.output_dim % 2:
            raise ConfigError("encoder must output (mu_z, log sigma_z) pairs")
        Z = encoder.output_dim // 2
        C = encoder.input_dim - T
        if C < 0 or decoder_mean.input_dim != Z + C or decoder_aux.input_dim != Z + C:
            raise ConfigError("encoder/decoder input widths do not chain as [x, c] and [z, c]")
        if self.dict.shape != (T, decoder_aux.output_dim):
            raise ConfigError(f"dictionary shape {self.dict.shape} does not match decoders")
        if not self.jitter > 0:
            raise ConfigError("jitter must be positive")
        self.T, self.Z, self.C = T, Z, C

    @classmethod
    def create(cls, T, C, latent_dim=16, dict_size=100, hidden=(256, 256), jitter=1e-2, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        hidden = list(hidden)
        encoder = DenseNet.build([T + C] + hidden + [2 * latent_dim], rng)
        decoder_mean = DenseNet.build([latent_dim + C] + hidden + [T], rng)
        if dict_size == 0:
            V, dictionary, learn = T, np.eye(T), False
        else:
            V = dict_size
            dictionary = rng.normal(size=(T, V)) / np.sqrt(V)
            learn = True
        decoder_aux = DenseNet.build([latent_dim + C] + hidden + [V], rng, output_activation="softplus")
        return cls(encoder, decoder_mean, decoder_aux, dictionary, jitter, learn)

    @property
    def V(self):
        return self.dict.shape[1]

    def parameters(self):
        params = self.encoder.parameters() + self.decoder_mean.parameters() + self.decoder_aux.parameters()
        return params + ([self.dict] if self.learn_dict else [])

    def parameter_names(self):
        names = (
            self.encoder.parameter_names("encoder")
            + self.decoder_mean.parameter_names("decoder_mean")
            + self.decoder_aux.parameter_names("decoder_aux")
        )
        return names + (["dict"] if self.learn_dict else [])

    @property
    def n_params(self):
        return sum(p.size for p in self.parameters())

    def encode(self, x, c):
        out = self.encoder.forward(np.concatenate([x, c], axis=-1))
        return out[..., : self.Z], np.clip(out[..., self.Z :], -LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP)

    def decode(self, z, c):
        zc = np.concatenate([z, c], axis=-1)
        return self.decoder_mean.forward(zc), self.decoder_aux.forward(zc)

    def copy(self):
        return CvaeModel(
            self.encoder.copy(), self.decoder_mean.copy(), self.decoder_aux.copy(),
            self.dict.copy(), self.jitter, self.learn_dict,
        )

    def to_dict(self):
        return {
            "kind": "guide-vae",
            "latent_dim": self.Z,
            "jitter": self.jitter,
            "learn_dict": self.learn_dict,
            "dict_shape": list(self.dict.shape),
            "dict": self.dict.tolist(),
            "encoder": self.encoder.to_dict(),
            "decoder_mean": self.decoder_mean.to_dict(),
            "decoder_aux": self.decoder_aux.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            DenseNet.from_dict(d["encoder"]),
            DenseNet.from_dict(d["decoder_mean"]),
            DenseNet.from_dict(d["decoder_aux"]),
            np.array(d["dict"], dtype=np.float64).reshape(d["dict_shape"]),
            d["jitter"],
            d["learn_dict"],
        )

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


def kl_standard_normal(mu_z, log_sigma):
    """KL(N(mu, sigma^2) || N(0, I)) summed over the last axis."""
    return 0.5 * np.sum(mu_z**2 + np.exp(2 * log_sigma) - 1.0 - 2 * log_sigma, axis=-1)


def elbo_and_grad(model, x, c, rng=None, eps=None, kl_weight=1.0):
    """Single-sample reparameterized ELBO per example and its parameter gradients.

    Returns ``(elbo, grads)``: ``elbo`` has one value per example and
    ``grads`` (aligned with ``model.parameters()``) is the gradient of the
    batch sum.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    c = np.asarray(c, dtype=np.float64).reshape(len(x), -1)
    Z = model.Z
    if eps is None:
        eps = rng.standard_normal((len(x), Z))
    eps = np.asarray(eps, dtype=np.float64).reshape(len(x), Z)

    enc = model.encoder.record(np.concatenate([x, c], axis=1))
    mu_z = enc.output[:, :Z]
    raw_ls = enc.output[:, Z:]
    log_sigma = np.clip(raw_ls, -LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP)
    sigma = np.exp(log_sigma)
    z = mu_z + sigma * eps

    zc = np.concatenate([z, c], axis=1)
    dm = model.decoder_mean.record(zc)
    da = model.decoder_aux.record(zc)
    logp, g_mu, g_aux, g_dict = lg.batch_log_density_grad(dm.output, model.dict, da.output, model.jitter, x)
    kl = kl_standard_normal(mu_z, log_sigma)
    elbo = logp - kl_weight * kl

    grads_m, gin_m = model.decoder_mean.backward(dm, g_mu)
    grads_a, gin_a = model.decoder_aux.backward(da, g_aux)
    g_z = gin_m[:, :Z] + gin_a[:, :Z]
    g_mu_z = g_z - kl_weight * mu_z
    inside = (raw_ls > -LOG_SIGMA_CLAMP) & (raw_ls < LOG_SIGMA_CLAMP)
    g_ls = (g_z * sigma * eps - kl_weight * (sigma**2 - 1.0)) * inside
    grads_e, _ = model.encoder.backward(enc, np.concatenate([g_mu_z, g_ls], axis=1))
    grads = grads_e + grads_m + grads_a + ([g_dict] if model.learn_dict else [])
    return elbo, grads


def elbo(model, x, c, rng=None, eps=None):
    """Mean single-sample ELBO over the given examples."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    c = np.asarray(c, dtype=np.float64).reshape(len(x), -1)
    if eps is None:
        eps = rng.standard_normal((len(x), model.Z))
    mu_z, log_sigma = model.encode(x, c)
    z = mu_z + np.exp(log_sigma) * eps
    mu, aux = model.decode(z, c)
    logp = lg.batch_log_density(mu, model.dict, aux, model.jitter, x)
    return float(np.mean(logp - kl_standard_normal(mu_z, log_sigma)))


def importance_log_likelihood(model, x, c, n_samples, rng, return_se=False):
    """Importance-sampled ``log p(x | c)`` with the encoder as proposal.

    ``logsumexp_s[log p(x|z_s,c) + log p(z_s) - log q(z_s|x,c)] - log S``.
    With ``return_se`` the delta-method standard error of the estimate is
    returned as well.
    """
    if n_samples < 1:
        raise ConfigError("need at least one importance sample")
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    mu_z, log_sigma = model.encode(x, c)
    eps = rng.standard_normal((n_samples, model.Z))
    z = mu_z + np.exp(log_sigma) * eps
    mu, aux = model.decode(z, np.broadcast_to(c, (n_samples, c.shape[-1])))
    log_px = lg.batch_log_density(mu, model.dict, aux, model.jitter, x)
    log_pz = -0.5 * np.sum(z**2, axis=1) - model.Z * HALF_LOG_2PI
    log_q = -0.5 * np.sum(eps**2, axis=1) - np.sum(log_sigma) - model.Z * HALF_LOG_2PI
    log_w = log_px + log_pz - log_q
    est = float(logsumexp(log_w) - np.log(n_samples))
    if not return_se:
        return est
    w = np.exp(log_w - log_w.max())
    se = float(np.std(w) / (np.mean(w) * np.sqrt(n_samples)))
    return est, se


class _Conditions:
    """Condition vectors for training: fixed arrays, or examples + embeddings with theta resampling."""

    def __init__(self, data, table=None, entity_ids=None):
        if isinstance(data, tuple):
            self.x = np.asarray(data[0], dtype=np.float64)
            self.c = np.asarray(data[1], dtype=np.float64).reshape(len(self.x), -1)
            self.examples = None
        else:
            self.x = data.target
            self.examples = data
            self.c = build_conditions(data, table, None, entity_ids)
        self.table = table
        self.entity_ids = entity_ids

    def __len__(self):
        return len(self.x)

    def batch(self, idx, rng=None):
        if rng is None or self.examples is None or self.table is None or self.table.K == 0:
            return self.x[idx], self.c[idx]
        return self.x[idx], build_conditions(self.examples.subset(idx), self.table, rng, self.entity_ids)


def train(model, train_data, val_data, cfg=None, table=None, entity_ids=None, validate=None):
    """Fit ``model`` in place by minibatch ELBO ascent; returns the training log.

    ``train_data``/``val_data`` are either ``(x, c)`` array pairs or
    ``ExampleSet`` objects whose conditions are assembled with ``table``
    (entity context resampled per example during training). ``validate``
    overrides the validation metric (mean per-example ELBO with a fixed
    seed).
    """
    cfg = TrainConfig() if cfg is None else cfg
    train_set = _Conditions(train_data, table, entity_ids)
    val_set = _Conditions(val_data, table, entity_ids)
    if len(val_set) == 0:
        raise ConfigError("validation set is empty")
    rng = stream(cfg.seed, "cvae-train")

    def kl_weight(epoch):
        if cfg.kl_warmup_epochs <= 0:
            return 1.0
        return min(1.0, epoch / cfg.kl_warmup_epochs)

    def step(idx, epoch):
        x, c = train_set.batch(idx, rng)
        values, grads = elbo_and_grad(model, x, c, rng, kl_weight=kl_weight(epoch))
        n = len(idx)
        return float(values.sum()), [-g / n for g in grads]

    def default_validate():
        vrng = stream(cfg.seed, "cvae-val")
        total = 0.0
        for start in range(0, len(val_set), 1024):
            x, c = val_set.x[start : start + 1024], val_set.c[start : start + 1024]
            total += elbo(model, x, c, vrng) * len(x)
        return total / len(val_set)

    return fit(
        model.parameters(), model.parameter_names(), len(train_set), step,
        validate or default_validate, cfg, rng, score_name="elbo",
    )
