"""Command-line entry point: ``guidecast <command> [options]``.

Commands: synth, embed, train, forecast, evaluate, ablate, plot. Exit codes:
0 ok, 2 invalid config or input data, 3 training divergence, 4 missing
artifact, 5 ablation finished with failed runs, 1 any other package error.

Artifacts live under ``--out-dir``::

    data.csv, truth.json                 synth
    embeddings/                          embed
    <run>/checkpoint.json, ...           train  (<run> = guide-vae_K{K}_V{V} or qrnn_K{K})
    <run>/forecasts/<entity>/<date>/     forecast, plot
    <run>/report.json, report.md         evaluate (normalized units; report_physical.* in raw units)
    ablation/                            ablate
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import artifacts, data, pipeline
from .config import MODELS, RunConfig
from .cvae import CvaeModel
from .embeddings import EmbeddingTable
from .errors import ArtifactError, ConfigError, DataError, DivergenceError, GuidecastError
from .forecaster import DayForecast, QuantileFan
from .metrics import markdown_table
from .qrnn import QrnnModel

log = logging.getLogger("guidecast")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_MISSING, EXIT_PARTIAL = 0, 1, 2, 3, 4, 5


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (defaults apply to missing keys)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--workers", type=int, default=1, help="threads for forecasting and scoring")
    common.add_argument("--out-dir", help="override the config out_dir")
    common.add_argument("--entities", help="comma-separated entity ids to forecast")
    common.add_argument("--model", choices=MODELS, help="override the config model")
    common.add_argument("--samples", type=int, metavar="S", help="mixture components per forecast")
    common.add_argument("--is-samples", type=int, metavar="S_IS", help="importance samples for ALL")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="guidecast", description="Day-ahead probabilistic load forecasting.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a synthetic panel and its planted parameters")
    sub.add_parser("embed", parents=[common], help="fit normalization and entity embeddings")
    sub.add_parser("train", parents=[common], help="train a GUIDE-VAE or QRNN")
    sub.add_parser("forecast", parents=[common], help="write per-day forecast artifacts")
    sub.add_parser("evaluate", parents=[common], help="score a trained model on the test span")
    sub.add_parser("ablate", parents=[common], help="run the K x V grid and the QRNN baselines")
    p = sub.add_parser("plot", parents=[common], help="render SVG fan charts from forecast artifacts")
    p.add_argument("path", nargs="?", help="forecast directory (default: the run's forecasts/)")
    return parser


def load_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    for flag, key in (("seed", "seed"), ("out_dir", "out_dir"), ("model", "model"),
                      ("samples", "samples"), ("is_samples", "is_samples")):
        value = getattr(args, flag)
        if value is not None:
            changes[key] = value
    if args.workers < 1:
        raise ConfigError("--workers must be at least 1")
    return cfg.replace(**changes) if changes else cfg


def dataset_path(cfg):
    return Path(cfg.dataset) if cfg.dataset else Path(cfg.out_dir) / "data.csv"


def load_dataset(cfg):
    path = dataset_path(cfg)
    if not path.is_file():
        raise ConfigError(f"dataset {path} not found")
    ds = data.PanelDataset.from_csv(path)
    if ds.T < 1:
        raise DataError(f"dataset {path} has no hour columns")
    return ds


def run_dir(cfg):
    return Path(cfg.out_dir) / pipeline.run_name(cfg)


# ---------------------------------------------------------------------------
# run artifacts


def save_run(directory, cfg, prep, model, history):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    model.save(d / "checkpoint.json")
    prep.manifest.save(d / "manifest.json")
    prep.table.save(d / "embeddings.csv", d / "embeddings.json")
    history.to_csv(d / "training_log.csv")
    cfg.save(d / "config.json")


def load_run(cfg):
    d = run_dir(cfg)
    ckpt = d / "checkpoint.json"
    if not ckpt.is_file():
        raise ArtifactError(f"no checkpoint at {ckpt}; run `guidecast train` first")
    with open(ckpt) as f:
        payload = json.load(f)
    model = CvaeModel.from_dict(payload) if payload.get("kind") == "guide-vae" else QrnnModel.from_dict(payload)
    manifest = data.NormalizationManifest.load(d / "manifest.json")
    table = EmbeddingTable.load(d / "embeddings.csv", d / "embeddings.json")
    return model, manifest, table


def prepared_run(cfg):
    ds = load_dataset(cfg)
    model, manifest, table = load_run(cfg)
    return model, pipeline.prepare(ds, cfg, manifest, table)


def write_report(directory, reports, extra=None, name="report"):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows = [r.to_dict() if hasattr(r, "to_dict") else r for r in reports]
    payload = {"reports": rows, **(extra or {})}
    with open(d / f"{name}.json", "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
    (d / f"{name}.md").write_text(markdown_table(reports))


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg, args):
    s = cfg.synth
    ds, truth = data.synth(s.n_entities, s.n_days, s.n_archetypes, seed=cfg.seed, start=s.start)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds.to_csv(out / "data.csv")
    with open(out / "truth.json", "w") as f:
        json.dump(truth.to_dict(), f)
    print(f"wrote {len(ds.entity_ids)} entities x {s.n_days} days to {out / 'data.csv'}")
    return EXIT_OK


def cmd_embed(cfg, args):
    ds = load_dataset(cfg)
    prep = pipeline.prepare(ds, cfg)
    out = Path(cfg.out_dir) / "embeddings"
    out.mkdir(parents=True, exist_ok=True)
    prep.manifest.save(out / "manifest.json")
    prep.table.save(out / f"K{cfg.K}.csv", out / f"K{cfg.K}.json")
    print(f"wrote K={cfg.K} embeddings for {len(prep.table.entity_ids)} entities to {out}")
    return EXIT_OK


def cmd_train(cfg, args):
    ds = load_dataset(cfg)
    prep = pipeline.prepare(ds, cfg)
    model, history = pipeline.train_model(prep, cfg)
    d = run_dir(cfg)
    save_run(d, cfg, prep, model, history)
    print(f"trained {cfg.model} ({model.n_params} parameters, {history.n_epochs} epochs) -> {d}")
    return EXIT_OK


def _entity_filter(args, prep):
    if not args.entities:
        return None
    wanted = [e.strip() for e in args.entities.split(",") if e.strip()]
    for e in wanted:
        if e not in prep.table:
            raise ArtifactError(f"entity {e!r} is not in the embedding table")
    return {prep.data.index_of(e) for e in wanted}


def cmd_forecast(cfg, args):
    model, prep = prepared_run(cfg)
    keep = _entity_filter(args, prep)
    test = prep.test
    rows = []
    seen = {}
    for i in range(len(test)):
        u = int(test.entity[i])
        if keep is not None and u not in keep:
            continue
        seen[u] = seen.get(u, 0) + 1
        if cfg.forecast_days is None or seen[u] <= cfg.forecast_days:
            rows.append(i)
    if not rows:
        raise ArtifactError("no test days selected for forecasting")
    ex = test.subset(rows)
    root = run_dir(cfg) / "forecasts"
    conds = pipeline.conditions(prep, ex, cfg)

    def one(i):
        if isinstance(model, QrnnModel):
            eid, day = pipeline.example_key(prep, ex, i)
            fan = QuantileFan(model.levels, model.quantiles(conds[i]))
            return DayForecast(eid, day, str(ex.date[i]), None, None, fan, truth=ex.target[i])
        return pipeline.forecast_example(model, prep, ex, i, cfg, conds[i], with_truth=True)

    days = pipeline._map(one, len(ex), args.workers)
    for f in days:
        artifacts.write_day(root / f.entity_id / f.date, f, cfg.levels if f.mixture is not None else model.levels)
    print(f"wrote {len(days)} forecast days to {root}")
    return EXIT_OK


def cmd_evaluate(cfg, args):
    model, prep = prepared_run(cfg)
    report, raw = pipeline.evaluate(model, prep, cfg, args.workers, physical=True)
    d = run_dir(cfg)
    write_report(d, [report])
    write_report(d, [raw], name="report_physical")
    print(markdown_table([report]), end="")
    return EXIT_OK


def cmd_ablate(cfg, args):
    ds = load_dataset(cfg)
    root = Path(cfg.out_dir) / "ablation"

    def on_run(rc, model, history, report):
        prep = pipeline.prepare(ds, rc)
        save_run(root / pipeline.run_name(rc), rc, prep, model, history)

    rows, checks, failed = pipeline.run_ablation(ds, cfg, args.workers, on_run)
    write_report(root, rows, {"checks": checks, "failed": failed})
    print(markdown_table(rows), end="")
    print(json.dumps(checks, indent=1, sort_keys=True))
    if failed:
        log.error("failed runs: %s", ", ".join(failed))
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_plot(cfg, args):
    root = Path(args.path) if args.path else run_dir(cfg) / "forecasts"
    dirs = artifacts.day_dirs(root)
    if not dirs:
        raise ArtifactError(f"no forecast days under {root}")
    for d in dirs:
        artifacts.plot_day(d)
    print(f"wrote {len(dirs)} SVG files under {root}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "embed": cmd_embed, "train": cmd_train, "forecast": cmd_forecast,
    "evaluate": cmd_evaluate, "ablate": cmd_ablate, "plot": cmd_plot,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        with np.errstate(over="ignore"):
            return COMMANDS[args.command](cfg, args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except GuidecastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
