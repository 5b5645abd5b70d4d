"""Train a small GUIDE-VAE and look at one day-ahead forecast.

Writes the forecast artifacts and an SVG fan chart to ./demo_out (or the
directory given as the first argument).
"""

import sys
from pathlib import Path

import numpy as np

from guidecast import artifacts, data, pipeline
from guidecast.config import RunConfig

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")

cfg = RunConfig(K=3, V=8, Z=4, hidden=[32, 32], max_epochs=40, samples=200, is_samples=50,
                learning_rate=3e-3, eval_stride=3)
ds, _ = data.synth(n_entities=30, n_days=110, seed=2)
prep = pipeline.prepare(ds, cfg)
model, history = pipeline.train_model(prep, cfg)
print(f"trained {history.n_epochs} epochs, best validation ELBO {history.best_score:.2f} "
      f"at epoch {history.best_epoch}")

# one (entity, day): mixture of S Gaussians, ensemble, fan, best trace and component views
day = pipeline.forecast_example(model, prep, prep.test, 0, cfg, with_truth=True)
print("forecast for", day.entity_id, day.date, "with", day.mixture.n_components, "components")
np.set_printoptions(precision=2, suppress=True, linewidth=140)
print("5%, 50%, 95% quantiles:")
print(day.fan.values[[0, 5, -1]])
print("observed:")
print(day.truth)
print("best component", day.best_component, "sigma fan shape", day.sigma_fan.shape)

target = out / day.entity_id / day.date
artifacts.write_day(target, day, cfg.levels)
print("wrote", artifacts.plot_day(target))

report = pipeline.evaluate(model, prep, cfg)
print(f"test scores: quantile loss {report.quantile_loss:.4f}, interval {report.interval:.3f}, "
      f"inter-cover {report.inter_cover:.4f}, ALL {report.all:.2f}")
