"""Panel data: ingestion, normalization, calendar features, splits, synthesis.

A panel holds, for each entity, consecutive days of ``T`` hourly readings.
Raw readings must be non-negative; models work in the log-compressed space
``y = log(1 + x / beta_t)`` which keeps zero readings at exactly zero.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

T_DEFAULT = 24
TEST_DAYS = 73
TRAIN_FRACTION = 0.75


@dataclass
class PanelDataset:
    entity_ids: list
    dates: list  # per entity: datetime64[D] array of consecutive days
    values: list  # per entity: (n_days, T) float array

    def __post_init__(self):
        if not (len(self.entity_ids) == len(self.dates) == len(self.values)):
            raise DataError("entity_ids, dates and values must have the same length")
        if len(set(self.entity_ids)) != len(self.entity_ids):
            raise DataError("duplicate entity ids")
        self.dates = [np.asarray(d, dtype="datetime64[D]") for d in self.dates]
        self.values = [np.asarray(v, dtype=np.float64) for v in self.values]
        widths = {v.shape[1] for v in self.values if v.ndim == 2}
        for eid, d, v in zip(self.entity_ids, self.dates, self.values):
            if v.ndim != 2 or len(d) != len(v):
                raise DataError(f"entity {eid}: dates and values do not line up")
            if len(d) == 0:
                raise DataError(f"entity {eid} has no days")
            if len(d) > 1 and np.any(np.diff(d) != np.timedelta64(1, "D")):
                raise DataError(f"entity {eid}: days are not consecutive")
            if not np.all(np.isfinite(v)):
                raise DataError(f"entity {eid}: non-finite readings")
        if len(widths) > 1:
            raise DataError(f"inconsistent profile lengths {sorted(widths)}")

    @property
    def n_entities(self):
        return len(self.entity_ids)

    @property
    def T(self):
        return self.values[0].shape[1]

    def index_of(self, entity_id):
        return self.entity_ids.index(entity_id)

    def check_non_negative(self):
        for eid, v in zip(self.entity_ids, self.values):
            if np.any(v < 0):
                raise DataError(f"entity {eid} has negative consumption")

    def map_values(self, fn):
        return PanelDataset(list(self.entity_ids), list(self.dates), [fn(v) for v in self.values])

    def to_csv(self, path):
        T = self.T
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["entity_id", "date"] + [f"h{t:02d}" for t in range(T)])
            for eid, dates, vals in zip(self.entity_ids, self.dates, self.values):
                for d, row in zip(dates, vals):
                    w.writerow([eid, str(d)] + [repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path):
        rows = {}
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if not header or header[:2] != ["entity_id", "date"] or len(header) < 3:
                raise DataError(f"{path}: header must start with entity_id,date,h00,...")
            hours = header[2:]
            if hours != [f"h{t:02d}" for t in range(len(hours))]:
                raise DataError(f"{path}: hour columns must be h00..h{len(hours) - 1:02d}")
            for line_no, rec in enumerate(reader, start=2):
                if len(rec) != len(header):
                    raise DataError(f"{path}:{line_no}: expected {len(header)} fields")
                try:
                    day = np.datetime64(rec[1], "D")
                    vals = [float(x) for x in rec[2:]]
                except ValueError as exc:
                    raise DataError(f"{path}:{line_no}: {exc}") from None
                rows.setdefault(rec[0], []).append((day, vals))
        ids, dates, values = [], [], []
        for eid, recs in rows.items():
            recs.sort(key=lambda r: r[0])
            ids.append(eid)
            dates.append(np.array([r[0] for r in recs]))
            values.append(np.array([r[1] for r in recs]))
        ds = cls(ids, dates, values)
        ds.check_non_negative()
        return ds


@dataclass
class NormalizationManifest:
    scale: np.ndarray  # beta_t > 0, per hour
    transform: str = "log1p_scaled"
    version: int = 1

    def __post_init__(self):
        self.scale = np.asarray(self.scale, dtype=np.float64)
        if np.any(~(self.scale > 0)):
            raise DataError("normalization scales must be positive")

    @classmethod
    def fit(cls, raw):
        """beta_t = mean of the strictly positive training readings at hour t (1 if none)."""
        raw = np.asarray(raw, dtype=np.float64)
        pos = raw > 0
        counts = pos.sum(0)
        sums = np.where(pos, raw, 0.0).sum(0)
        scale = np.where(counts > 0, sums / np.maximum(counts, 1), 1.0)
        return cls(scale)

    def normalize(self, x):
        x = np.asarray(x, dtype=np.float64)
        if np.any(x < 0):
            raise DataError("negative consumption cannot be normalized")
        return np.log1p(x / self.scale)

    def denormalize(self, y):
        return self.scale * np.expm1(np.asarray(y, dtype=np.float64))

    def to_dict(self):
        return {"transform": self.transform, "version": self.version, "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        if d.get("transform") != "log1p_scaled":
            raise DataError(f"unsupported transform {d.get('transform')!r}")
        return cls(np.array(d["scale"]), d["transform"], d.get("version", 1))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def calendar_features(dates):
    """Cyclic month and weekday encoding ``[sin m, cos m, sin w, cos w]``.

    Months are 1..12 over a period of 12, weekdays 0 (Monday)..6 over 7.
    """
    dates = np.asarray(dates, dtype="datetime64[D]")
    month = (dates.astype("datetime64[M]").astype(int) % 12) + 1
    weekday = (dates.astype(int) + 3) % 7  # 1970-01-01 was a Thursday
    am = 2 * np.pi * month / 12.0
    aw = 2 * np.pi * weekday / 7.0
    return np.stack([np.sin(am), np.cos(am), np.sin(aw), np.cos(aw)], axis=-1)


@dataclass(frozen=True)
class Split:
    """Per-entity day boundaries: train ``[0, train_end)``, val ``[train_end, val_end)``, test ``[val_end, n)``."""

    train_end: tuple
    val_end: tuple
    n_days: tuple

    def days(self, u, part):
        bounds = {
            "train": (0, self.train_end[u]),
            "val": (self.train_end[u], self.val_end[u]),
            "test": (self.val_end[u], self.n_days[u]),
        }
        if part not in bounds:
            raise ValueError(f"unknown split part {part!r}")
        return range(*bounds[part])


def split(ds, test_days=TEST_DAYS, train_fraction=TRAIN_FRACTION):
    """Chronological split: last ``test_days`` per entity for test, the rest 3:1 train:val.

    The train share is ``floor(train_fraction * remaining)``; validation gets the rest.
    """
    train_end, val_end, n_days = [], [], []
    for eid, v in zip(ds.entity_ids, ds.values):
        n = len(v)
        if n <= test_days + 4:
            raise DataError(f"entity {eid} has {n} days; need more than {test_days + 4}")
        rest = n - test_days
        n_train = int(np.floor(train_fraction * rest))
        train_end.append(n_train)
        val_end.append(rest)
        n_days.append(n)
    return Split(tuple(train_end), tuple(val_end), tuple(n_days))


def training_rows(ds, sp):
    return np.concatenate([v[: sp.train_end[u]] for u, v in enumerate(ds.values)])


@dataclass
class ExampleSet:
    """Forecasting examples: target day, look-back window, calendar features and owner."""

    target: np.ndarray  # (M, T)
    lookback: np.ndarray  # (M, L*T), oldest day first
    calendar: np.ndarray  # (M, 4)
    entity: np.ndarray  # (M,) entity index into the panel
    day: np.ndarray  # (M,) day index within the entity's stream
    date: np.ndarray  # (M,) datetime64[D]

    def __len__(self):
        return len(self.target)

    def __iter__(self):
        for i in range(len(self)):
            yield self.target[i], self.lookback[i], self.calendar[i], int(self.entity[i])

    def subset(self, idx):
        idx = np.asarray(idx)
        return ExampleSet(*(getattr(self, f)[idx] for f in ("target", "lookback", "calendar", "entity", "day", "date")))


def make_examples(ds, sp, part, lookback_days=1, entities=None):
    """Build examples whose targets fall in ``part``.

    A target day needs ``lookback_days`` earlier days in the stream; days
    without enough history (the start of each stream) are skipped. Look-back
    windows may reach into earlier parts but never into later ones.
    """
    if lookback_days < 1:
        raise DataError("lookback_days must be at least 1")
    T = ds.T
    cols = {k: [] for k in ("target", "lookback", "calendar", "entity", "day", "date")}
    for u, (dates, vals) in enumerate(zip(ds.dates, ds.values)):
        if entities is not None and u not in entities:
            continue
        days = [n for n in sp.days(u, part) if n >= lookback_days]
        if not days:
            continue
        days = np.array(days)
        cols["target"].append(vals[days])
        cols["lookback"].append(
            np.stack([vals[n - lookback_days : n].reshape(-1) for n in days])
        )
        cols["calendar"].append(calendar_features(dates[days]))
        cols["entity"].append(np.full(len(days), u))
        cols["day"].append(days)
        cols["date"].append(dates[days])
    if not cols["target"]:
        return ExampleSet(
            np.zeros((0, T)), np.zeros((0, lookback_days * T)), np.zeros((0, 4)),
            np.zeros(0, int), np.zeros(0, int), np.zeros(0, "datetime64[D]"),
        )
    return ExampleSet(*(np.concatenate(cols[k]) for k in cols))


# ---------------------------------------------------------------------------
# synthetic panels


@dataclass
class SynthTruth:
    """Planted parameters of a synthetic panel."""

    archetype: np.ndarray  # (U,) planted archetype of each entity
    base_curves: np.ndarray  # (K_true, T)
    weekday_factor: np.ndarray  # (K_true, 7)
    month_factor: np.ndarray  # (12,)
    entity_scale: np.ndarray  # (U,)
    noise_std: np.ndarray  # (U,) stationary sd of within-day log-noise
    zero_prob: np.ndarray  # (U,)
    ar_coef: float  # lag-1 coefficient of within-day noise
    day_ar_coef: float
    day_level: np.ndarray  # (U, N) day-to-day log-level
    deterministic: np.ndarray = field(repr=False)  # (U, N, T) noise-free product

    def to_dict(self):
        return {
            k: (v.tolist() if isinstance(v, np.ndarray) else v)
            for k, v in self.__dict__.items()
            if k != "deterministic"
        }


def _base_curves(K, T, rng):
    hours = np.arange(T) * 24.0 / T

    def bump(center, width, height):
        d = np.minimum(np.abs(hours - center), 24 - np.abs(hours - center))
        return height * np.exp(-0.5 * (d / width) ** 2)

    # first three are fixed, clearly distinct shapes; any further ones are random
    templates = [
        0.25 + bump(7.5, 1.2, 1.0) + bump(19.5, 1.8, 1.4),  # morning + evening household
        0.2 + bump(21.0, 2.0, 2.0),  # late-evening household
        0.3 + bump(13.0, 3.5, 1.5),  # daytime business
    ]
    curves = []
    for k in range(K):
        if k < len(templates):
            curves.append(templates[k])
        else:
            c = 0.2 + sum(
                bump(rng.uniform(0, 24), rng.uniform(1, 3), rng.uniform(0.5, 1.5)) for _ in range(2)
            )
            curves.append(c)
    return np.array(curves)


def synth(
    n_entities,
    n_days,
    n_archetypes=3,
    seed=0,
    T=T_DEFAULT,
    start="2021-06-01",
    noise=True,
    zero_inflation=True,
    ar_coef=0.7,
    day_ar_coef=0.8,
):
    """Generate a multi-entity panel with planted structure.

    Each reading is ``base[k, t] * weekday[k, w] * month[m] * scale_u``
    times ``exp(level_un + eps_unt)``, where ``level`` follows an AR(1) across
    days and ``eps`` an AR(1) across the hours of a day with coefficient
    ``ar_coef``; finally each reading is zeroed with the entity's zero
    probability. The multiplicative form keeps readings non-negative.
    """
    if n_entities < 1 or n_days < 1 or n_archetypes < 1:
        raise DataError("synth sizes must be positive")
    rng = np.random.default_rng(seed)
    U, N, K = n_entities, n_days, n_archetypes
    base = _base_curves(K, T, rng)
    weekday = np.ones((K, 7))
    weekday[:, :5] += rng.uniform(-0.1, 0.1, size=(K, 5))
    weekday[:, 5:] += rng.uniform(-0.2, 0.3, size=(K, 2))
    if K >= 3:
        weekday[2, 5:] = 0.45  # the business archetype idles on weekends
    month = 1.0 + 0.25 * np.cos(2 * np.pi * (np.arange(12)) / 12.0)  # winter peak

    archetype = rng.integers(0, K, size=U)
    scale = np.exp(rng.normal(0.0, 0.3, size=U))
    noise_std = (0.25 + 0.15 * (archetype % 3)) * rng.uniform(0.8, 1.2, size=U)
    zero_prob = rng.uniform(0.0, 0.05, size=U)

    dates = np.datetime64(start, "D") + np.arange(N)
    cal_month = dates.astype("datetime64[M]").astype(int) % 12
    cal_wday = (dates.astype(int) + 3) % 7
    det = (
        base[archetype][:, None, :]
        * weekday[archetype][:, cal_wday][:, :, None]
        * month[cal_month][None, :, None]
        * scale[:, None, None]
    )

    day_level = np.zeros((U, N))
    if noise:
        innov = rng.normal(size=(U, N)) * 0.15 * np.sqrt(1 - day_ar_coef**2)
        day_level[:, 0] = rng.normal(size=U) * 0.15
        for n in range(1, N):
            day_level[:, n] = day_ar_coef * day_level[:, n - 1] + innov[:, n]
        eps = np.empty((U, N, T))
        white = rng.normal(size=(U, N, T)) * noise_std[:, None, None]
        eps[:, :, 0] = white[:, :, 0]
        w = np.sqrt(1 - ar_coef**2)
        for t in range(1, T):
            eps[:, :, t] = ar_coef * eps[:, :, t - 1] + w * white[:, :, t]
        values = det * np.exp(day_level[:, :, None] + eps)
    else:
        values = det.copy()
    if zero_inflation:
        mask = rng.uniform(size=(U, N, T)) < zero_prob[:, None, None]
        values[mask] = 0.0

    ids = [f"E{u:04d}" for u in range(U)]
    ds = PanelDataset(ids, [dates] * U, list(values))
    truth = SynthTruth(
        archetype, base, weekday, month, scale, noise_std, zero_prob,
        ar_coef, day_ar_coef, day_level, det,
    )
    return ds, truth
