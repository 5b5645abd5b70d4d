"""End-to-end runs: preparation, training, forecasting, scoring and the ablation grid.

Everything random draws from counter-based streams keyed by the run seed
and a purpose label (and, for forecasts, the entity and day), so results
do not depend on evaluation order or the number of worker threads.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import cvae, data, embeddings, forecaster, metrics, qrnn
from .errors import ConfigError, GuidecastError
from .rng import stream

log = logging.getLogger(__name__)


@dataclass
class Prepared:
    """A dataset after splitting, normalization and embedding fitting."""

    raw: data.PanelDataset
    data: data.PanelDataset  # normalized
    manifest: data.NormalizationManifest
    split: data.Split
    table: embeddings.EmbeddingTable
    train: data.ExampleSet
    val: data.ExampleSet
    test: data.ExampleSet

    @property
    def T(self):
        return self.data.T

    def conditions(self, examples, sample_theta_seed=None):
        """Forecast-time conditions.

        The entity context is the Dirichlet mean, or with ``sample_theta_seed``
        one draw per example from its own (entity, day) stream.
        """
        ids = self.data.entity_ids
        if sample_theta_seed is None or self.table.K == 0:
            return embeddings.build_conditions(examples, self.table, None, ids)
        theta = np.stack([
            embeddings.dirichlet(self.table[ids[int(u)]].gamma, stream(sample_theta_seed, "theta", ids[int(u)], int(d)))
            for u, d in zip(examples.entity, examples.day)
        ]) if len(examples) else np.zeros((0, self.table.K))
        return np.concatenate([examples.lookback, theta, examples.calendar], axis=1)


def prepare(ds, cfg, manifest=None, table=None):
    """Split, fit the normalization on raw training rows and the embeddings on normalized ones.

    A saved ``manifest``/``table`` is reused instead of refitting.
    """
    ds.check_non_negative()
    sp = data.split(ds, cfg.test_days)
    if manifest is None:
        manifest = data.NormalizationManifest.fit(data.training_rows(ds, sp))
    nds = ds.map_values(manifest.normalize)
    if table is None:
        table = fit_table(nds, sp, cfg)
    elif table.K != cfg.K:
        raise ConfigError(f"embedding table has K={table.K}, config says K={cfg.K}")
    parts = {p: data.make_examples(nds, sp, p, cfg.lookback_days) for p in ("train", "val", "test")}
    return Prepared(ds, nds, manifest, sp, table, parts["train"], parts["val"], parts["test"])


def fit_table(nds, sp, cfg):
    """Entity embeddings from each entity's normalized training days."""
    return embeddings.fit_embeddings(
        [v[: sp.train_end[u]] for u, v in enumerate(nds.values)], cfg.K, seed=cfg.seed,
        alpha0=cfg.alpha0, n_cap=cfg.n_cap, eps_gamma=cfg.eps_gamma, entity_ids=nds.entity_ids,
    )


def condition_dim(cfg, T):
    return cfg.lookback_days * T + cfg.K + 4


def create_vae(cfg, T):
    return cvae.CvaeModel.create(
        T, condition_dim(cfg, T), cfg.Z, cfg.V, cfg.hidden, cfg.jitter, stream(cfg.seed, "init", "guide-vae")
    )


def qrnn_hidden(cfg, T):
    """Configured QRNN widths, or two equal layers matching the GUIDE-VAE parameter count."""
    if cfg.qrnn_hidden is not None:
        return tuple(cfg.qrnn_hidden)
    target = create_vae(cfg, T).n_params
    return qrnn.matched_hidden(target, condition_dim(cfg, T), T, len(cfg.levels), n_hidden=len(cfg.hidden))


def create_qrnn(cfg, T):
    return qrnn.QrnnModel.create(
        condition_dim(cfg, T), T, cfg.levels, qrnn_hidden(cfg, T), stream(cfg.seed, "init", "qrnn")
    )


def train_model(prep, cfg):
    """Create and fit the model named by ``cfg.model``; returns ``(model, training_log)``."""
    tc = cfg.train_config()
    ids = prep.data.entity_ids
    if cfg.model == "guide-vae":
        model = create_vae(cfg, prep.T)
        history = cvae.train(model, prep.train, prep.val, tc, prep.table, ids)
    else:
        model = create_qrnn(cfg, prep.T)
        history = qrnn.train_qrnn(model, prep.train, prep.val, tc, prep.table, ids)
    log.info("%s trained: %d epochs, best %s %.5f at epoch %d", cfg.model, history.n_epochs,
             history.score_name, history.best_score, history.best_epoch)
    return model, history


def conditions(prep, examples, cfg):
    return prep.conditions(examples, cfg.seed if cfg.inference_theta == "sample" else None)


def example_key(prep, examples, i):
    return prep.data.entity_ids[int(examples.entity[i])], int(examples.day[i])


def forecast_example(model, prep, examples, i, cfg, condition=None, with_truth=False):
    """GUIDE-VAE forecast for example ``i`` from its own (entity, day) stream."""
    eid, day = example_key(prep, examples, i)
    c = conditions(prep, examples.subset([i]), cfg)[0] if condition is None else condition
    prov = {"entity_id": eid, "day": day, "date": str(examples.date[i]), "seed": cfg.seed, "samples": cfg.samples}
    return forecaster.forecast_day(
        model, c, cfg.levels, cfg.samples, stream(cfg.seed, "forecast", eid, day),
        truth=examples.target[i] if with_truth else None, provenance=prov,
    )


def _map(fn, n, workers):
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, range(n)))
    return [fn(i) for i in range(n)]


def fans_for(model, prep, examples, cfg, workers=1):
    """Quantile fans ``(M, Q, T)`` for every example."""
    conds = conditions(prep, examples, cfg)
    if isinstance(model, qrnn.QrnnModel):
        return model.quantiles(conds)
    out = _map(lambda i: forecast_example(model, prep, examples, i, cfg, conds[i]).fan.values, len(examples), workers)
    return np.stack(out) if out else np.zeros((0, len(cfg.levels), prep.T))


def eval_examples(prep, cfg):
    return prep.test.subset(np.arange(0, len(prep.test), cfg.eval_stride))


def evaluate(model, prep, cfg, workers=1, examples=None, physical=False):
    """Score ``model`` on the (strided) test examples.

    Returns an ``EvalReport`` in normalized units, or with ``physical`` a
    pair ``(normalized, physical)`` where the second report scores the
    denormalized fans against raw readings (no ALL there).
    """
    ex = eval_examples(prep, cfg) if examples is None else examples
    fans = fans_for(model, prep, ex, cfg, workers)
    is_vae = isinstance(model, cvae.CvaeModel)
    descriptor = {"K": cfg.K, "seed": cfg.seed, "n_params": int(model.n_params), "levels": list(cfg.levels)}
    all_value = None
    if is_vae:
        descriptor.update(V=cfg.V, Z=cfg.Z, S=cfg.samples, S_is=cfg.is_samples)
        keys = [example_key(prep, ex, i) for i in range(len(ex))]
        conds = conditions(prep, ex, cfg)
        all_value, all_se = metrics.average_log_likelihood(
            model, ex.target, conds, cfg.is_samples, cfg.seed, keys, workers, return_se=True
        )
        descriptor["all_mc_se"] = all_se  # delta method; optimistic for heavy-tailed weights
        # run-to-run tolerance from independent replicates of the whole estimate
        reps = [all_value] + [
            metrics.average_log_likelihood(model, ex.target, conds, cfg.is_samples, cfg.seed,
                                           [k + ("replicate", r) for k in keys], workers)
            for r in range(1, cfg.is_replicates)
        ]
        if len(reps) > 1:
            sd = float(np.std(reps, ddof=1))
            descriptor["all_replicates"] = reps
            descriptor["all_mc_sd"] = sd
            descriptor["all_mc_tolerance"] = 4.0 * np.sqrt(2.0) * sd
    else:
        descriptor["hidden"] = [layer.output_dim for layer in model.backbone.layers[:-1]]
    counts = {"entities": int(len(np.unique(ex.entity))), "examples": int(len(ex)), "T": int(prep.T)}
    report = metrics.evaluate_fans(fans, ex.target, cfg.levels, cfg.model, all_value, descriptor, counts)
    if not physical:
        return report
    m = prep.manifest
    raw = metrics.evaluate_fans(m.denormalize(fans), m.denormalize(ex.target), cfg.levels, cfg.model, None,
                                {k: v for k, v in descriptor.items() if not k.startswith("all_")}, counts, "physical")
    return report, raw


# ---------------------------------------------------------------------------
# ablation grid


def ablation_grid(cfg):
    """Run configs for the grid: GUIDE-VAE over K x V in {0, K} x {0, V}, QRNN over K in {0, K}.

    Each QRNN is sized against the GUIDE-VAE with the same K and the full dictionary.
    """
    runs = []
    for K in (0, cfg.K):
        for V in (0, cfg.V):
            runs.append(cfg.replace(model="guide-vae", K=K, V=V))
    for K in (0, cfg.K):
        runs.append(cfg.replace(model="qrnn", K=K, V=cfg.V))
    return runs


def run_name(cfg):
    if cfg.model == "qrnn":
        return f"qrnn_K{cfg.K}"
    return f"guide-vae_K{cfg.K}_V{cfg.V}"


def run_one(ds, cfg, workers=1):
    prep = prepare(ds, cfg)
    model, history = train_model(prep, cfg)
    return model, history, evaluate(model, prep, cfg, workers)


def ordering_checks(reports, K, V):
    """Qualitative ordering checks on a finished grid (None where a run is missing)."""
    by = {}
    for r in reports:
        if isinstance(r, metrics.EvalReport):
            by[(r.model, r.descriptor.get("K"), r.descriptor.get("V") if r.model == "guide-vae" else None)] = r
    full = by.get(("guide-vae", K, V))
    plain = by.get(("guide-vae", 0, 0))
    q = by.get(("qrnn", K, None))
    checks = {}

    def better(a, b, field, higher=False):
        if a is None or b is None:
            return None
        x, y = getattr(a, field), getattr(b, field)
        return bool(x > y) if higher else bool(x < y)

    checks["full_beats_plain"] = {
        "quantile_loss": better(full, plain, "quantile_loss"),
        "interval": better(full, plain, "interval"),
        "all": better(full, plain, "all", higher=True),
    }
    checks["full_beats_qrnn"] = {
        "quantile_loss": better(full, q, "quantile_loss"),
        "interval": better(full, q, "interval"),
    }
    dict_only = by.get(("guide-vae", 0, V))
    embed_only = by.get(("guide-vae", K, 0))
    if plain and dict_only and embed_only:
        gain_v = dict_only.all - plain.all
        gain_k = embed_only.all - plain.all
        checks["dictionary_gain_exceeds_embedding_gain"] = {
            "delta_all_dictionary": gain_v, "delta_all_embedding": gain_k, "holds": bool(gain_v > gain_k),
        }
    return checks


def run_ablation(ds, cfg, workers=1, on_run=None):
    """Train and score all six grid runs.

    Returns ``(rows, checks, failed)`` where a failed run leaves a marker
    dict in ``rows``. ``on_run(cfg, model, history, report)`` is called after
    each successful run (for writing artifacts).
    """
    rows, failed = [], []
    for rc in ablation_grid(cfg):
        try:
            model, history, report = run_one(ds, rc, workers)
        except GuidecastError as exc:
            log.error("run %s failed: %s", run_name(rc), exc)
            failed.append(run_name(rc))
            rows.append({"model": rc.model, "K": rc.K, "V": rc.V if rc.model == "guide-vae" else "−",
                         "error": str(exc)})
            continue
        if on_run is not None:
            on_run(rc, model, history, report)
        rows.append(report)
    return rows, ordering_checks(rows, cfg.K, cfg.V), failed
