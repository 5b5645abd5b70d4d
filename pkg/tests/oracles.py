"""Independent reference computations used by the tests."""

import numpy as np


def central_diff(f, arrays, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. every entry of ``arrays`` (mutated in place)."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = a[idx]
            a[idx] = old + h
            fp = f()
            a[idx] = old - h
            fm = f()
            a[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def rel_err(a, b):
    """Norm-wise relative error between two gradient arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def dense_gauss_logpdf(x, mu, cov):
    """Multivariate normal log-density straight from the textbook formula."""
    r = np.asarray(x) - np.asarray(mu)
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    return -0.5 * (len(r) * np.log(2 * np.pi) + logdet + r @ np.linalg.solve(cov, r))


def replay_net(net, x):
    """Straight-line re-evaluation of a DenseNet without using its forward code."""
    acts = {
        "identity": lambda a: a,
        "relu": lambda a: np.where(a > 0, a, 0.0),
        "softplus": lambda a: np.log1p(np.exp(-np.abs(a))) + np.maximum(a, 0),
        "tanh": np.tanh,
    }
    h = np.asarray(x, dtype=float)
    for layer in net.layers:
        h = acts[layer.activation](layer.weight.dot(h) + layer.bias)
    return h


def order_stat_quantile(values, q):
    """inf{x : q <= (1/S) #(values <= x)} evaluated by scanning every candidate."""
    values = np.asarray(values, dtype=float)
    S = len(values)
    best = None
    for cand in values:
        if q <= np.sum(values <= cand) / S:
            if best is None or cand < best:
                best = cand
    return best
