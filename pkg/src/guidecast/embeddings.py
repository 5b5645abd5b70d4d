"""Probabilistic entity embeddings and condition-vector assembly.

Each entity ``u`` gets a Dirichlet concentration ``gamma_u``. During training
a fresh ``theta ~ Dir(gamma_u)`` is drawn for every example; at evaluation
the Dirichlet mean is used unless sampling is requested.

The embedding fit is a stand-in for an external pipeline: k-means on the
entities' mean daily profiles, soft responsibilities from squared distances,
and an evidence factor that grows with the number of days observed.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist
from scipy.special import logsumexp, softmax
from sklearn.cluster import KMeans

from .errors import ConfigError, DataError


@dataclass
class EntityEmbedding:
    entity_id: str
    gamma: np.ndarray

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        if self.gamma.ndim != 1 or np.any(~(self.gamma > 0)):
            raise ConfigError(f"gamma for {self.entity_id} must be a positive vector")

    @property
    def mean(self):
        return self.gamma / self.gamma.sum()


@dataclass
class EmbeddingTable:
    entity_ids: list
    gamma: np.ndarray  # (U, K)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64).reshape(len(self.entity_ids), -1)
        self._index = {eid: i for i, eid in enumerate(self.entity_ids)}

    @property
    def K(self):
        return self.gamma.shape[1]

    def __contains__(self, entity_id):
        return entity_id in self._index

    def __getitem__(self, entity_id):
        return EntityEmbedding(entity_id, self.gamma[self._index[entity_id]])

    def index(self, entity_id):
        return self._index[entity_id]

    def means(self):
        if self.K == 0:
            return np.zeros((len(self.entity_ids), 0))
        return self.gamma / self.gamma.sum(1, keepdims=True)

    def save(self, csv_path, meta_path):
        with open(csv_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["entity_id"] + [f"gamma_{k + 1}" for k in range(self.K)])
            for eid, g in zip(self.entity_ids, self.gamma):
                w.writerow([eid] + [repr(float(v)) for v in g])
        with open(meta_path, "w") as f:
            json.dump(self.meta, f, indent=1)

    @classmethod
    def load(cls, csv_path, meta_path):
        with open(csv_path, newline="") as f:
            rows = list(csv.reader(f))
        ids = [r[0] for r in rows[1:]]
        gamma = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        with open(meta_path) as f:
            meta = json.load(f)
        return cls(ids, gamma.reshape(len(ids), -1), meta)

    def to_dict(self):
        return {"entity_ids": list(self.entity_ids), "gamma": self.gamma.tolist(), "meta": self.meta}

    @classmethod
    def from_dict(cls, d):
        return cls(d["entity_ids"], np.array(d["gamma"], dtype=np.float64), d["meta"])


def fit_embeddings(profiles, K, seed=0, alpha0=10.0, n_cap=365, eps_gamma=0.01, entity_ids=None):
    """Fit a Dirichlet concentration per entity.

    ``profiles`` is a sequence with one ``(n_u, T)`` array per entity.
    ``gamma_u = alpha0 * r_u * min(n_u, n_cap) / n_cap + eps_gamma`` with
    ``r_u = softmax(-d^2(mean_u, centroid_k) / tau)`` and ``tau`` the median
    pairwise squared distance between entity means.
    """
    profiles = [np.asarray(p, dtype=np.float64) for p in profiles]
    if entity_ids is None:
        entity_ids = [str(i) for i in range(len(profiles))]
    for eid, p in zip(entity_ids, profiles):
        if p.ndim != 2 or len(p) == 0:
            raise DataError(f"entity {eid} has no profiles")
    n_ent = len(profiles)
    if K < 0:
        raise ConfigError("K must be non-negative")
    meta = {"seed": int(seed), "K": int(K), "alpha0": alpha0, "n_cap": n_cap, "eps_gamma": eps_gamma}
    if K == 0:
        meta["tau"] = None
        return EmbeddingTable(list(entity_ids), np.zeros((n_ent, 0)), meta)
    if K > n_ent:
        raise ConfigError(f"K={K} exceeds the number of entities ({n_ent})")

    means = np.stack([p.mean(0) for p in profiles])
    counts = np.array([len(p) for p in profiles], dtype=np.float64)
    d2_pairs = pdist(means, "sqeuclidean")
    tau = float(np.median(d2_pairs)) if len(d2_pairs) else 1.0
    if not tau > 0:
        tau = 1.0
    km = KMeans(n_clusters=K, n_init=10, random_state=seed).fit(means)
    centroids = km.cluster_centers_
    d2 = ((means[:, None, :] - centroids[None, :, :]) ** 2).sum(-1)
    resp = softmax(-d2 / tau, axis=1)
    evidence = np.minimum(counts, n_cap) / n_cap
    gamma = alpha0 * resp * evidence[:, None] + eps_gamma
    meta["tau"] = tau
    meta["centroids"] = centroids.tolist()
    return EmbeddingTable(list(entity_ids), gamma, meta)


def sample_theta(embedding, rng, size=None):
    """Draw from ``Dir(gamma)`` by normalizing Gamma variates.

    Gamma draws are taken in log space, ``log G = log G' + log(V) / a`` with
    ``G' ~ Gamma(a + 1)`` and ``V ~ U(0, 1)``, so tiny concentrations do not
    underflow to an all-zero vector.
    """
    gamma = embedding.gamma if isinstance(embedding, EntityEmbedding) else np.asarray(embedding, dtype=np.float64)
    return dirichlet(gamma, rng, size)


def dirichlet(gamma, rng, size=None):
    gamma = np.asarray(gamma, dtype=np.float64)
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    shape = shape + gamma.shape[-1:] if gamma.ndim == 1 else gamma.shape
    if gamma.shape[-1] == 0:
        return np.zeros(shape)
    if gamma.shape[-1] == 1:
        return np.ones(shape)
    log_g = np.log(rng.gamma(gamma + 1.0, size=shape)) + np.log(rng.uniform(size=shape)) / gamma
    theta = np.exp(log_g - logsumexp(log_g, axis=-1, keepdims=True))
    return theta / theta.sum(-1, keepdims=True)


def build_conditions(examples, table, rng=None, entity_ids=None):
    """Assemble ``c = [lookback, theta, calendar]`` for every example.

    ``theta`` is the Dirichlet mean of the entity's embedding when ``rng`` is
    None, otherwise a fresh Dirichlet draw per example. ``entity_ids`` maps
    the examples' panel indices to ids when the table rows follow a
    different order than the panel.
    """
    idx = np.asarray(examples.entity, dtype=int)
    if entity_ids is not None and table is not None:
        idx = np.array([table.index(entity_ids[u]) for u in idx], dtype=int)
    if table is None or table.K == 0:
        theta = np.zeros((len(idx), 0))
    elif rng is None:
        theta = table.means()[idx]
    else:
        theta = dirichlet(table.gamma[idx], rng)
    return np.concatenate([examples.lookback, theta, examples.calendar], axis=1)
