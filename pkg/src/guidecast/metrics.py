"""Benchmark scores for quantile fans and density models.

Fans are arrays of shape ``(M, Q, T)`` (examples, levels, hours) with
truths of shape ``(M, T)``. Interval-based scores use the symmetric level
pairs ``(q_i, q_{Q-i+1})``; a median level, if present, is skipped.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import cvae
from .errors import ConfigError
from .qrnn import pinball_loss
from .rng import stream


def symmetric_pairs(levels, tol=1e-12):
    """Return ``(lower_idx, upper_idx, nominal_width)`` for symmetric level pairs."""
    levels = np.asarray(levels, dtype=np.float64)
    Q = len(levels)
    lo = np.arange(Q // 2)
    hi = Q - 1 - lo
    if Q % 2 == 1 and abs(levels[Q // 2] - 0.5) > tol:
        raise ConfigError("with an odd number of levels the middle one must be the median")
    if len(lo) == 0:
        raise ConfigError("need at least one symmetric pair of levels")
    if np.any(np.abs(levels[lo] + levels[hi] - 1.0) > tol) or np.any(levels[lo] >= 0.5):
        raise ConfigError(f"levels {levels.tolist()} are not symmetric around 0.5")
    return lo, hi, levels[hi] - levels[lo]


def _check(fans, truths, levels):
    fans = np.asarray(fans, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if fans.ndim == 2:
        fans, truths = fans[None], truths[None]
    if fans.shape[0] != truths.shape[0] or fans.shape[2] != truths.shape[1] or fans.shape[1] != len(levels):
        raise ConfigError(f"fans {fans.shape}, truths {truths.shape} and {len(levels)} levels do not line up")
    return fans, truths


def quantile_loss(fans, truths, levels):
    fans, truths = _check(fans, truths, levels)
    return pinball_loss(fans, truths, levels)


def interval_score(fans, truths, levels):
    """Mean over examples, hours and pairs of ``width + (2/I)(overshoot above + undershoot below)``."""
    fans, truths = _check(fans, truths, levels)
    lo, hi, nominal = symmetric_pairs(levels)
    lower = fans[:, lo, :]
    upper = fans[:, hi, :]
    x = truths[:, None, :]
    penalty = np.maximum(0.0, x - upper) + np.maximum(0.0, lower - x)
    score = (upper - lower) + (2.0 / nominal)[None, :, None] * penalty
    return float(np.mean(score))


def inter_cover_score(fans, truths, levels):
    """Mean absolute gap between empirical and nominal coverage of the closed intervals.

    Returns ``(score, table)`` with one row per pair: lower/upper level,
    nominal width and empirical coverage.
    """
    fans, truths = _check(fans, truths, levels)
    lo, hi, nominal = symmetric_pairs(levels)
    x = truths[:, None, :]
    inside = (fans[:, lo, :] <= x) & (x <= fans[:, hi, :])
    coverage = inside.mean(axis=(0, 2))
    levels = np.asarray(levels)
    table = [
        {"lower": float(levels[a]), "upper": float(levels[b]), "nominal": float(n), "coverage": float(c)}
        for a, b, n, c in zip(lo, hi, nominal, coverage)
    ]
    return float(np.mean(np.abs(coverage - nominal))), table


def average_log_likelihood(model, targets, conditions, n_is, seed=0, keys=None, workers=1, return_se=False):
    """Mean importance-sampled ``log p(x | c)`` over the test examples.

    Example ``i`` draws from its own stream keyed by ``keys[i]`` (default:
    its position), so the value does not depend on ``workers``. With
    ``return_se`` the Monte Carlo standard error of the mean (from the
    per-example delta-method errors) is returned too.
    """
    targets = np.asarray(targets, dtype=np.float64)
    conditions = np.asarray(conditions, dtype=np.float64)
    keys = [(i,) for i in range(len(targets))] if keys is None else keys

    def one(i):
        return cvae.importance_log_likelihood(model, targets[i], conditions[i], n_is,
                                              stream(seed, "is", *keys[i]), return_se=True)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            values = list(pool.map(one, range(len(targets))))
    else:
        values = [one(i) for i in range(len(targets))]
    est, se = np.array(values).reshape(-1, 2).T
    if return_se:
        return float(np.mean(est)), float(np.sqrt(np.sum(se**2)) / len(se))
    return float(np.mean(est))


@dataclass
class EvalReport:
    model: str
    quantile_loss: float
    interval: float
    inter_cover: float
    all: float = None
    counts: dict = field(default_factory=dict)
    coverage: list = field(default_factory=list)
    descriptor: dict = field(default_factory=dict)
    units: str = "normalized"

    def to_dict(self):
        return asdict(self)

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)


def evaluate_fans(fans, truths, levels, model="", all_value=None, descriptor=None, counts=None, units="normalized"):
    """Score precomputed fans. Scores are a pure function of (fans, truths, levels)."""
    ic, table = inter_cover_score(fans, truths, levels)
    return EvalReport(
        model=model,
        quantile_loss=quantile_loss(fans, truths, levels),
        interval=interval_score(fans, truths, levels),
        inter_cover=ic,
        all=all_value,
        counts=dict(counts or {}),
        coverage=table,
        descriptor=dict(descriptor or {}),
        units=units,
    )


def _fmt(v, digits=4):
    return "−" if v is None else f"{v:.{digits}f}"


def markdown_table(reports):
    """Table with the layout: model, K, V, quantile loss, interval, inter-cover, ALL."""
    lines = [
        "| Model | User Embedding Size (K) | Pattern Dictionary Size (V) | QuantileLoss | Interval | InterCover | ALL |",
        "|---|---|---|---|---|---|---|",
    ]
    for r in reports:
        if r is None:
            continue
        if isinstance(r, dict):  # failure marker
            lines.append(f"| {r['model']} | {r.get('K', '')} | {r.get('V', '')} | FAILED | FAILED | FAILED | FAILED |")
            continue
        d = r.descriptor
        V = d.get("V", "−") if r.model == "guide-vae" else "−"
        lines.append(
            f"| {r.model} | {d.get('K', '')} | {V} | {_fmt(r.quantile_loss)} | {_fmt(r.interval)} "
            f"| {_fmt(r.inter_cover)} | {_fmt(r.all)} |"
        )
    return "\n".join(lines) + "\n"
