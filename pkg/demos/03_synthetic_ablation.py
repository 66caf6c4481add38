"""
Ablation on corrupted synthetic data
====================================

A reduced version of the end-to-end check: generate Zipf data whose rare
pairs carry flipped training labels, train an FM, build the sketches and
compare the inference modes.  Takes about half a minute.
"""

from matt.data import SynthConfig
from matt.experiment import run_grid, synthetic_pipeline

synth = SynthConfig(n_train=30_000, n_test=6_000, seed=0)
pipe = synthetic_pipeline(synth)
print(f"train {len(pipe.train)}, test {len(pipe.test)}")
for s in pipe.sketch.stats():
    print("  sketch", s)

cells = [(m, 10, 8) for m in ("baseline", "full", "rhp", "rcr", "rmr")]
for rec in run_grid(pipe, cells, seed=0):
    print(f"  {rec['mode']:<8} K={rec['K']:<2} auc={rec['auc']:.4f} logloss={rec['logloss']:.4f} "
          f"({rec['runtime_ms']:.0f} ms)")
