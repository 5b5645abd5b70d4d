"""Day-ahead forecast distributions built from a trained conditional VAE.

For one (entity, day) the forecast is an equal-weight mixture of ``S``
Gaussians, one per prior draw ``z_s``. From it we derive ensembles (two-level
sampling), per-hour quantile fans, the ensemble member closest to the
observed day, the best-fitting component with its standard-deviation fan,
and the component's covariance band.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import lowrank_gauss as lg
from .errors import ConfigError, StateError

DEFAULT_SAMPLES = 500
DEFAULT_ALPHAS = (0.25, 0.5, 1.0, 1.5, 2.0)
BAND_HALF_WIDTH = 6


@dataclass
class ForecastMixture:
    means: np.ndarray  # (S, T)
    aux_std: np.ndarray  # (S, V)
    dict: np.ndarray  # (T, V), shared
    jitter: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.aux_std = np.atleast_2d(np.asarray(self.aux_std, dtype=np.float64))
        if len(self.means) < 1:
            raise ConfigError("a mixture needs at least one component")
        if self.aux_std.shape != (len(self.means), self.dict.shape[1]):
            raise ConfigError("component parameters do not line up with the dictionary")
        if not self.jitter > 0:
            raise ConfigError("jitter must be positive")

    @property
    def n_components(self):
        return len(self.means)

    @property
    def T(self):
        return self.means.shape[1]

    def component(self, s):
        # softplus outputs may round to 0; the jitter keeps Sigma positive definite
        return lg.LowRankGaussian(self.means[s], self.dict, self.aux_std[s], self.jitter, check=False)

    @property
    def components(self):
        return [self.component(s) for s in range(self.n_components)]

    def component_log_densities(self, x):
        return lg.batch_log_density(self.means, self.dict, self.aux_std, self.jitter, np.asarray(x))

    def mean(self):
        return self.means.mean(0)

    def to_dict(self):
        return {
            "provenance": self.provenance,
            "jitter": self.jitter,
            "dict": self.dict.tolist(),
            "means": self.means.tolist(),
            "aux_std": self.aux_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["means"]), np.array(d["aux_std"]), np.array(d["dict"]), d["jitter"], d["provenance"])


@dataclass
class Ensemble:
    samples: np.ndarray  # (S_e, T)
    components: np.ndarray  # (S_e,) index of the component each row came from
    provenance: dict = field(default_factory=dict)


@dataclass
class QuantileFan:
    levels: np.ndarray  # (Q,), sorted
    values: np.ndarray  # (Q, T)


def build_mixture(model, condition, n_samples, rng, provenance=None):
    """Draw ``n_samples`` latents from the prior and decode each into a component."""
    if model is None or not hasattr(model, "decode"):
        raise StateError("build_mixture needs a trained model")
    if n_samples < 1:
        raise ConfigError("need at least one mixture component")
    c = np.asarray(condition, dtype=np.float64)
    if c.shape != (model.C,):
        raise ConfigError(f"condition has shape {c.shape}, model expects ({model.C},)")
    z = rng.standard_normal((n_samples, model.Z))
    means, aux = model.decode(z, np.broadcast_to(c, (n_samples, model.C)))
    return ForecastMixture(means, aux, model.dict, model.jitter, dict(provenance or {}))


def mixture_log_density(mixture, x):
    """``log (1/S) sum_s N(x; mu_s, Sigma_s)`` evaluated with log-sum-exp."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != mixture.T:
        raise ConfigError(f"x has {x.shape[-1]} features, mixture has {mixture.T}")
    return float(logsumexp(mixture.component_log_densities(x)) - np.log(mixture.n_components))


def sample_ensemble(mixture, rng, n_samples=None):
    """Two-level sampling from the mixture.

    With ``n_samples=None`` every component contributes exactly one member
    (the ensemble doubles as the set of component draws); otherwise each
    member picks its component uniformly at random.
    """
    S = mixture.n_components
    if n_samples is None:
        comp = np.arange(S)
    else:
        if n_samples < 1:
            raise ConfigError("ensemble size must be at least 1")
        comp = rng.integers(0, S, size=n_samples)
    eps_v = rng.standard_normal((len(comp), mixture.dict.shape[1]))
    eps_t = rng.standard_normal((len(comp), mixture.T))
    samples = (
        mixture.means[comp]
        + (eps_v * mixture.aux_std[comp]) @ mixture.dict.T
        + np.sqrt(mixture.jitter) * eps_t
    )
    return Ensemble(samples, comp, dict(mixture.provenance))


def _order_stat_rank(q, n):
    """Smallest k with ``q <= k / n`` (1-based), computed in the same floating point as the test."""
    k = max(1, int(np.ceil(q * n)))
    while k > 1 and q <= (k - 1) / n:
        k -= 1
    while q > k / n:
        k += 1
    return k


def empirical_quantiles(ensemble, levels):
    """Per-hour quantiles ``inf{x : q <= (1/S) #(samples <= x)}`` of an ensemble.

    This is the ``ceil(q S)``-th order statistic of each column, so the fan
    is monotone across levels by construction.
    """
    samples = ensemble.samples if isinstance(ensemble, Ensemble) else np.asarray(ensemble, dtype=np.float64)
    samples = np.atleast_2d(samples)
    levels = np.asarray(levels, dtype=np.float64)
    if len(samples) == 0:
        raise ConfigError("cannot take quantiles of an empty ensemble")
    if np.any((levels <= 0) | (levels >= 1)) or np.any(np.diff(levels) < 0):
        raise ConfigError("levels must be sorted and lie in (0, 1)")
    n = len(samples)
    ranks = np.array([_order_stat_rank(q, n) for q in levels])
    ordered = np.sort(samples, axis=0)
    return QuantileFan(levels, ordered[ranks - 1])


def best_trace(ensemble, truth):
    """Index and row of the ensemble member nearest to ``truth`` in L2 (lowest index on ties)."""
    d = np.sum((ensemble.samples - np.asarray(truth)) ** 2, axis=1)
    i = int(np.argmin(d))
    return i, ensemble.samples[i]


def best_component(mixture, truth):
    """Index and Gaussian of the component with the highest density at ``truth``."""
    i = int(np.argmax(mixture.component_log_densities(truth)))
    return i, mixture.component(i)


def sigma_fan(component, alphas=DEFAULT_ALPHAS):
    """Rows ``mu + alpha * diag(Sigma)^(1/2)`` for each ``alpha``."""
    alphas = np.asarray(alphas, dtype=np.float64)
    return component.mu[None, :] + alphas[:, None] * component.std()[None, :]


def covariance_trace(component, half_width=BAND_HALF_WIDTH):
    return lg.covariance_band(component, half_width)


@dataclass
class DayForecast:
    """All artifacts for one (entity, day)."""

    entity_id: str
    day: int
    date: str
    mixture: ForecastMixture
    ensemble: Ensemble
    fan: QuantileFan
    truth: np.ndarray = None
    best_trace: np.ndarray = None
    best_component: int = None
    sigma_fan: np.ndarray = None
    band: np.ndarray = None


def forecast_day(model, condition, levels, n_samples, rng, truth=None, provenance=None,
                 alphas=DEFAULT_ALPHAS, half_width=BAND_HALF_WIDTH):
    """Mixture, ensemble and fan for one day; with ``truth`` also the best trace/component views.

    The mixture and ensemble only use the condition, never the truth.
    """
    prov = dict(provenance or {})
    mixture = build_mixture(model, condition, n_samples, rng, prov)
    ens = sample_ensemble(mixture, rng)
    fan = empirical_quantiles(ens, levels)
    out = DayForecast(prov.get("entity_id"), prov.get("day"), prov.get("date"), mixture, ens, fan)
    if truth is not None:
        truth = np.asarray(truth, dtype=np.float64)
        out.truth = truth
        _, out.best_trace = best_trace(ens, truth)
        out.best_component, comp = best_component(mixture, truth)
        out.sigma_fan = sigma_fan(comp, alphas)
        out.band = covariance_trace(comp, min(half_width, mixture.T - 1))
    return out
