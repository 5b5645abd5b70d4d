"""A synthetic smart-meter panel, normalized and split, with entity embeddings.

The generator plants a few consumption archetypes; the embedding step
should put entities of the same archetype close together.
"""

import numpy as np

from guidecast import data, embeddings

ds, truth = data.synth(n_entities=60, n_days=120, n_archetypes=3, seed=1)
print(len(ds.entity_ids), "entities,", len(ds.dates[0]), "days of", ds.T, "hours")
print("planted archetype counts:", np.bincount(truth.archetype))

sp = data.split(ds)
print("days per part for the first entity:",
      {p: len(sp.days(0, p)) for p in ("train", "val", "test")})

# normalization is fitted on training rows only; zeros stay zeros
manifest = data.NormalizationManifest.fit(data.training_rows(ds, sp))
nds = ds.map_values(manifest.normalize)
print("fraction of exact zeros before/after:",
      np.mean(np.concatenate(ds.values) == 0), np.mean(np.concatenate(nds.values) == 0))

examples = data.make_examples(nds, sp, "train")
print("training examples:", len(examples), "first date", examples.date[0],
      "calendar", np.round(examples.calendar[0], 3))

# K=3 embeddings: the dominant Dirichlet component should follow the archetype
table = embeddings.fit_embeddings([v[: sp.train_end[u]] for u, v in enumerate(nds.values)], K=3,
                                  seed=0, entity_ids=nds.entity_ids)
cluster = table.means().argmax(1)
agree = max(np.mean(np.array(perm)[cluster] == truth.archetype)
            for perm in ([0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]))
print(f"archetype recovery from embeddings: {agree:.0%}")

theta = embeddings.sample_theta(table[nds.entity_ids[0]], np.random.default_rng(0), size=3)
print("three theta draws for the first entity:")
print(np.round(theta, 3))
