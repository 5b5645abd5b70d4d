"""Minibatch training loop shared by the VAE and the quantile baseline.

Validation drives both the learning-rate schedule (decay after
``lr_patience`` epochs without improvement) and early stopping (stop after
``early_stop_patience`` such epochs). The validation score of the untrained
parameters is the initial reference, and the best parameters seen are
restored at the end.
"""

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, NumericError
from .nncore import Adam

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 200
    learning_rate: float = 1e-3
    lr_decay: float = 0.5
    lr_patience: int = 5
    early_stop_patience: int = 10
    seed: int = 0
    jitter: float = 1e-2
    latent_dim: int = 16
    dict_size: int = 100
    embed_dim: int = 100
    hidden: tuple = (256, 256)
    kl_warmup_epochs: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        positive = ("batch_size", "max_epochs", "learning_rate", "lr_decay", "lr_patience",
                    "early_stop_patience", "jitter", "latent_dim")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.lr_decay <= 1:
            raise ConfigError("lr_decay must lie in (0, 1]")
        for name in ("dict_size", "embed_dim", "kl_warmup_epochs", "seed"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be positive")

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class TrainingLog:
    score_name: str
    rows: list = field(default_factory=list)
    best_epoch: int = 0
    best_score: float = -np.inf
    stopped_early: bool = False

    @property
    def n_epochs(self):
        return len(self.rows)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", f"train_{self.score_name}", f"val_{self.score_name}", "lr"])
            for r in self.rows:
                w.writerow([r["epoch"], repr(r["train"]), repr(r["val"]), repr(r["lr"])])


def _validate(validate, epoch):
    try:
        return float(validate())
    except NumericError as exc:
        raise DivergenceError(f"validation failed at epoch {epoch}: {exc}", epoch=epoch) from exc


def fit(params, names, n_examples, step, validate, cfg, rng, score_name="score"):
    """Optimize ``params`` in place.

    ``step(idx, epoch)`` returns ``(sum of per-example scores, loss gradients)``
    for the examples ``idx``; ``validate()`` returns a score to maximize.
    """
    if n_examples < 1:
        raise ConfigError("training set is empty")
    opt = Adam(params, lr=cfg.learning_rate, names=names)
    history = TrainingLog(score_name)
    best = _validate(validate, 0)
    if not np.isfinite(best):
        raise DivergenceError("non-finite validation score before training", epoch=0)
    history.best_score = best
    best_params = [p.copy() for p in params]
    since_best = 0
    since_decay = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n_examples)
        total = 0.0
        for b, start in enumerate(range(0, n_examples, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            try:
                score, grads = step(idx, epoch)
                if not np.isfinite(score):
                    raise NumericError("non-finite training score")
                opt.step(grads)
            except NumericError as exc:
                raise DivergenceError(f"training diverged at epoch {epoch}, batch {b}: {exc}",
                                      epoch=epoch, batch=b) from exc
            total += score
        val = _validate(validate, epoch)
        if not np.isfinite(val):
            raise DivergenceError(f"non-finite validation score at epoch {epoch}", epoch=epoch)
        history.rows.append({"epoch": epoch, "train": total / n_examples, "val": val, "lr": opt.lr})
        log.info("epoch %d train %.5f val %.5f lr %.2e", epoch, total / n_examples, val, opt.lr)
        if val > history.best_score:
            history.best_score = val
            history.best_epoch = epoch
            best_params = [p.copy() for p in params]
            since_best = since_decay = 0
        else:
            since_best += 1
            since_decay += 1
            if since_decay >= cfg.lr_patience:
                opt.lr *= cfg.lr_decay
                since_decay = 0
            if since_best >= cfg.early_stop_patience:
                history.stopped_early = True
                break
    for p, q in zip(params, best_params):
        p[...] = q
    return history
