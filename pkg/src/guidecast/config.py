"""Declarative run configuration stored as JSON.

Every field has a default, so ``{}`` is a valid config. Unknown keys and
out-of-range values are rejected before any work starts.
"""

import json
from dataclasses import asdict, dataclass, field, fields

from .data import TEST_DAYS
from .errors import ConfigError
from .qrnn import DEFAULT_LEVELS
from .training import TrainConfig

MODELS = ("guide-vae", "qrnn")


@dataclass
class SynthConfig:
    n_entities: int = 200
    n_days: int = 120
    n_archetypes: int = 3
    start: str = "2021-06-01"


@dataclass
class RunConfig:
    dataset: str = None  # CSV path; defaults to <out_dir>/data.csv
    out_dir: str = "runs"
    seed: int = 0
    model: str = "guide-vae"
    K: int = 100
    V: int = 100
    Z: int = 16
    jitter: float = 1e-2
    hidden: list = field(default_factory=lambda: [256, 256])
    qrnn_hidden: list = None  # None: sized to match the GUIDE-VAE parameter count
    lookback_days: int = 1
    test_days: int = TEST_DAYS
    samples: int = 500
    is_samples: int = 100
    is_replicates: int = 5  # independent ALL estimates used for the reported MC tolerance
    levels: list = field(default_factory=lambda: list(DEFAULT_LEVELS))
    inference_theta: str = "mean"  # entity context at forecast time: Dirichlet "mean" or "sample"
    eval_stride: int = 1  # score every k-th test example
    forecast_days: int = None  # first n test days per entity; None for all
    batch_size: int = 64
    max_epochs: int = 200
    learning_rate: float = 1e-3
    lr_decay: float = 0.5
    lr_patience: int = 5
    early_stop_patience: int = 10
    kl_warmup_epochs: int = 0
    alpha0: float = 10.0
    n_cap: int = 365
    eps_gamma: float = 0.01
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if isinstance(self.synth, dict):
            self.synth = _build(SynthConfig, self.synth, "synth")
        self.validate()

    def validate(self):
        if self.inference_theta not in ("mean", "sample"):
            raise ConfigError("inference_theta must be 'mean' or 'sample'")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        ints = ("seed", "K", "V", "Z", "lookback_days", "test_days", "samples", "is_samples", "is_replicates",
                "eval_stride", "batch_size", "max_epochs", "lr_patience", "early_stop_patience", "kl_warmup_epochs", "n_cap")
        for name in ints:
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{name} must be an integer, got {v!r}")
        for name in ("Z", "lookback_days", "samples", "is_samples", "is_replicates", "eval_stride", "test_days", "n_cap"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        for name in ("seed", "K", "V"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not (self.jitter > 0 and self.alpha0 > 0 and self.eps_gamma > 0):
            raise ConfigError("jitter, alpha0 and eps_gamma must be positive")
        if self.forecast_days is not None and (not isinstance(self.forecast_days, int) or self.forecast_days < 1):
            raise ConfigError("forecast_days must be a positive integer or null")
        for name in ("hidden", "qrnn_hidden"):
            h = getattr(self, name)
            if h is None and name == "qrnn_hidden":
                continue
            if not isinstance(h, (list, tuple)) or not h or any(not isinstance(w, int) or w < 1 for w in h):
                raise ConfigError(f"{name} must be a non-empty list of positive integers")
        lv = self.levels
        if not isinstance(lv, (list, tuple)) or not lv or any(not 0 < q < 1 for q in lv) \
                or any(b <= a for a, b in zip(lv, lv[1:])):
            raise ConfigError("levels must be strictly increasing values in (0, 1)")
        s = self.synth
        if min(s.n_entities, s.n_days, s.n_archetypes) < 1:
            raise ConfigError("synth sizes must be positive")
        try:
            self.train_config()  # TrainConfig does its own range checks
        except TypeError as exc:
            raise ConfigError(f"bad training settings: {exc}") from exc

    def train_config(self):
        return TrainConfig(
            batch_size=self.batch_size, max_epochs=self.max_epochs, learning_rate=self.learning_rate,
            lr_decay=self.lr_decay, lr_patience=self.lr_patience, early_stop_patience=self.early_stop_patience,
            seed=self.seed, jitter=self.jitter, latent_dim=self.Z, dict_size=self.V, embed_dim=self.K,
            hidden=tuple(self.hidden), kl_warmup_epochs=self.kl_warmup_epochs,
        )

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return RunConfig.from_dict(d)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return _build(cls, d, "config")

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as f:
                d = json.load(f)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(d)


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {', '.join(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad {where}: {exc}") from exc
