"""
Inference paths on a toy instance
=================================

Hand-set confidences for a four-field instance, then look at the paths the
sampler grows and how their scores are combined.
"""

from collections import Counter

import numpy as np

from matt import FmModel, Instance, MattParams, canonical_combo, generate_path, path_weight
from matt._hashing import PathStream
from matt.pathgen import TableConfidence, matt_ensemble

inst = Instance.from_values([1, 1, 1, 1])
f0, f1, f2, f3 = inst.active()

# field 3 is rare: every combination touching it has low confidence
table = {canonical_combo([f]): c for f, c in zip(inst.active(), [50, 40, 30, 1])}
for (a, b), c in {(f0, f1): 35, (f0, f2): 25, (f1, f2): 20, (f0, f3): 1, (f1, f3): 1, (f2, f3): 1}.items():
    table[canonical_combo([a, b])] = c
src = TableConfidence(table)

paths = Counter(tuple(f.field for f in generate_path(inst, src, 3, PathStream(0, 0, k))) for k in range(10_000))
print("most common final feature sets (fields):")
for fields, n in paths.most_common(6):
    print(f"  {fields}: {n / 10_000:.3f}")

print("\nweight of {0,1,2}:", path_weight(src, (f0, f1, f2)))
print("weight of {0,3}:  ", path_weight(src, (f0, f3)))

# a tiny FM that puts a large (misleading) weight on field 3
rng = np.random.default_rng(1)
model = FmModel([2, 2, 2, 2], d=2, bias=-1.0, linear=[0, 0.3, 0, 0.2, 0, 0.1, 0, 2.5],
                embeddings=rng.normal(scale=0.3, size=(8, 2)))
ens = matt_ensemble(inst, src, model, MattParams(T=3, K=8, seed=0))
for p, w, s in zip(ens.paths, ens.weights, ens.scores):
    print(f"  path {[f.field for f in p]}  weight {w:5.1f}  score {s:.3f}")
print("full-input score:", float(model.predict(inst.values()[None])[0]))
