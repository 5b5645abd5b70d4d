"""Gaussians with covariance ``U diag(s)^2 U^T + xi I``.

``U`` is a ``T x V`` pattern dictionary shared by every forecast, ``s`` holds
``V`` positive auxiliary standard deviations and ``xi`` is a fixed diagonal
floor. The batched functions accept leading batch dimensions on ``mu``,
``aux_std`` and ``x``; the dictionary is never batched.

Two log-density routes are kept side by side: a dense ``T x T`` Cholesky and a
capacitance route that only factorizes ``V x V`` matrices (matrix inversion
and determinant lemmas). The capacitance route only pays off when ``V < T``;
with the default ``T=24, V=100`` the dense route is the cheaper one, so
``log_density`` dispatches on the shape.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class LowRankGaussian:
    mu: np.ndarray  # (T,)
    dict: np.ndarray  # (T, V)
    aux_std: np.ndarray  # (V,)
    jitter: float
    check: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=np.float64))
        object.__setattr__(self, "dict", np.asarray(self.dict, dtype=np.float64))
        object.__setattr__(self, "aux_std", np.asarray(self.aux_std, dtype=np.float64))
        T = self.mu.shape[0]
        if self.mu.ndim != 1 or self.dict.ndim != 2 or self.dict.shape[0] != T:
            raise ConfigError(f"mu {self.mu.shape} and dict {self.dict.shape} do not agree")
        if self.aux_std.shape != (self.dict.shape[1],):
            raise ConfigError(f"aux_std {self.aux_std.shape} does not match dict {self.dict.shape}")
        if self.check:
            if not (self.jitter > 0):
                raise ConfigError("jitter must be strictly positive")
            if np.any(self.aux_std <= 0):
                raise ConfigError("aux_std must be strictly positive")
            if not (
                np.all(np.isfinite(self.mu))
                and np.all(np.isfinite(self.dict))
                and np.all(np.isfinite(self.aux_std))
            ):
                raise NumericError("non-finite Gaussian parameters")

    @property
    def dim(self):
        return self.mu.shape[0]

    @property
    def rank(self):
        return self.dict.shape[1]

    def covariance(self):
        return covariance(self.dict, self.aux_std, self.jitter)

    def std(self):
        """Marginal standard deviations ``diag(Sigma)^(1/2)`` without forming Sigma."""
        return np.sqrt(np.einsum("tv,v->t", self.dict**2, self.aux_std**2) + self.jitter)


def covariance(dict, aux_std, jitter):
    w = dict * np.asarray(aux_std)[..., None, :]
    cov = w @ np.swapaxes(w, -1, -2)
    idx = np.arange(dict.shape[0])
    cov[..., idx, idx] += jitter
    return cov


def _cholesky(a):
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"covariance factorization failed: {exc}") from None


def _tri_solve(L, b):
    # numpy has no batched triangular solve; the general solver is exact enough here
    return np.linalg.solve(L, b[..., None])[..., 0]


def log_density_dense(mu, dict, aux_std, jitter, x):
    """Log-density via a Cholesky factor of the full ``T x T`` covariance."""
    r = np.asarray(x, dtype=np.float64) - mu
    L = _cholesky(covariance(dict, aux_std, jitter))
    y = _tri_solve(L, r)
    T = r.shape[-1]
    logdet = 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(-1)
    return -0.5 * (T * LOG_2PI + logdet + (y * y).sum(-1))


def _capacitance(dict, aux_std, jitter):
    w = dict * np.asarray(aux_std)[..., None, :]  # (..., T, V)
    cap = np.swapaxes(w, -1, -2) @ w
    idx = np.arange(dict.shape[1])
    cap[..., idx, idx] += jitter
    return w, cap


def log_density_lemma(mu, dict, aux_std, jitter, x):
    """Log-density working in the ``V``-dimensional auxiliary space.

    With ``W = U diag(s)`` and ``M = xi I_V + W^T W``:
    ``log det Sigma = (T - V) log xi + log det M`` and
    ``r^T Sigma^-1 r = (r^T r - b^T M^-1 b) / xi`` where ``b = W^T r``.
    """
    r = np.asarray(x, dtype=np.float64) - mu
    T, V = dict.shape
    w, cap = _capacitance(dict, aux_std, jitter)
    L = _cholesky(cap)
    b = np.einsum("...tv,...t->...v", w, r)
    y = _tri_solve(L, b)
    logdet = (T - V) * np.log(jitter) + 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(-1)
    quad = ((r * r).sum(-1) - (y * y).sum(-1)) / jitter
    return -0.5 * (T * LOG_2PI + logdet + quad)


def batch_log_density(mu, dict, aux_std, jitter, x, method=None):
    if method is None:
        method = "dense" if dict.shape[1] >= dict.shape[0] else "lemma"
    if method == "dense":
        return log_density_dense(mu, dict, aux_std, jitter, x)
    if method == "lemma":
        return log_density_lemma(mu, dict, aux_std, jitter, x)
    raise ConfigError(f"unknown density method {method!r}")


def log_density(g, x, method=None):
    """Exact log N(x; mu, U diag(s)^2 U^T + xi I) for a single ``LowRankGaussian``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != g.dim:
        raise ConfigError(f"x has {x.shape[-1]} features, Gaussian has {g.dim}")
    return float(batch_log_density(g.mu, g.dict, g.aux_std, g.jitter, x, method))


def batch_log_density_grad(mu, dict, aux_std, jitter, x):
    """Log-density and its gradients, batched.

    Returns ``(logp, d_mu, d_aux_std, d_dict)``. ``d_mu`` and ``d_aux_std``
    keep the batch shape, ``d_dict`` is summed over the batch (the dictionary
    is shared).

    With ``alpha = Sigma^-1 r`` and ``W = U diag(s)`` the gradient with respect
    to ``W`` is ``alpha (alpha^T W) - Sigma^-1 W``; it is chained to ``U`` by
    scaling columns with ``s`` and to ``s`` by a column-wise inner product
    with ``U``.
    """
    mu = np.asarray(mu, dtype=np.float64)
    aux_std = np.asarray(aux_std, dtype=np.float64)
    r = np.asarray(x, dtype=np.float64) - mu
    T, V = dict.shape
    w = dict * aux_std[..., None, :]
    if V >= T:
        L = _cholesky(covariance(dict, aux_std, jitter))
        y = _tri_solve(L, r)
        logdet = 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(-1)
        quad = (y * y).sum(-1)
        inv = np.linalg.inv(L)
        sigma_inv = np.swapaxes(inv, -1, -2) @ inv
        alpha = np.einsum("...ij,...j->...i", sigma_inv, r)
        sigma_inv_w = sigma_inv @ w
    else:
        _, cap = _capacitance(dict, aux_std, jitter)
        L = _cholesky(cap)
        b = np.einsum("...tv,...t->...v", w, r)
        y = _tri_solve(L, b)
        logdet = (T - V) * np.log(jitter) + 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(-1)
        quad = ((r * r).sum(-1) - (y * y).sum(-1)) / jitter
        cap_inv = np.linalg.inv(cap)
        cap_inv_b = np.einsum("...ij,...j->...i", cap_inv, b)
        alpha = (r - np.einsum("...tv,...v->...t", w, cap_inv_b)) / jitter
        sigma_inv_w = w @ cap_inv
    logp = -0.5 * (T * LOG_2PI + logdet + quad)
    d_w = alpha[..., :, None] * np.einsum("...t,...tv->...v", alpha, w)[..., None, :] - sigma_inv_w
    d_aux = (d_w * dict).sum(-2)
    d_dict = d_w * aux_std[..., None, :]
    if d_dict.ndim > 2:
        d_dict = d_dict.reshape(-1, T, V).sum(0)
    return logp, alpha, d_aux, d_dict


def log_density_grad(g, x):
    """Gradients of ``log_density(g, x)`` with respect to ``(mu, aux_std, dict)``."""
    _, d_mu, d_aux, d_dict = batch_log_density_grad(g.mu, g.dict, g.aux_std, g.jitter, x)
    return d_mu, d_aux, d_dict


def sample(g, rng, size=None):
    """Draw ``mu + U diag(s) eps_V + sqrt(xi) eps_T`` without forming Sigma."""
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    eps_v = rng.standard_normal(shape + (g.rank,))
    eps_t = rng.standard_normal(shape + (g.dim,))
    return g.mu + (eps_v * g.aux_std) @ g.dict.T + np.sqrt(g.jitter) * eps_t


def covariance_band(g, half_width):
    """Diagonal band of the covariance as a ``(2h+1) x T`` array.

    Entry ``[i, t]`` is ``Cov(x_t, x_{t - i + h})``; pairs that fall outside
    the day are NaN.
    """
    half_width = int(half_width)
    if half_width < 0 or half_width > g.dim - 1:
        raise ConfigError(f"half_width must lie in [0, {g.dim - 1}], got {half_width}")
    cov = g.covariance()
    T = g.dim
    band = np.full((2 * half_width + 1, T), np.nan)
    for i in range(2 * half_width + 1):
        for t in range(T):
            j = t - i + half_width
            if 0 <= j < T:
                band[i, t] = cov[t, j]
    return band
