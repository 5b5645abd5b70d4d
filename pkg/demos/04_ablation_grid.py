"""A small version of the embedding x dictionary ablation plus the QRNN baseline.

Six runs: GUIDE-VAE with K in {0, K} and V in {0, V}, and parameter-matched
QRNNs with K in {0, K}. On this toy scale the ordering can go either way;
tests/test_acceptance.py runs the full-size comparison over three seeds.
"""

import json

from guidecast import data, metrics, pipeline
from guidecast.config import RunConfig

cfg = RunConfig(K=3, V=8, Z=4, hidden=[32, 32], max_epochs=30, samples=100, is_samples=30,
                is_replicates=1, learning_rate=3e-3, eval_stride=4)
ds, _ = data.synth(n_entities=30, n_days=110, seed=3)

rows, checks, failed = pipeline.run_ablation(ds, cfg)
print(metrics.markdown_table(rows))
print(json.dumps(checks, indent=1))
if failed:
    print("failed runs:", failed)
