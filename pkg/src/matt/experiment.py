"""End-to-end runs: synthesize, train, build sketches, evaluate modes and grids."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .core import Dataset
from .data import SynthConfig, encode_splits, generate_synthetic
from .pathgen import MattParams, predict_many
from .scorer import FmModel, TrainConfig, auc, logloss, train
from .sketch import ConfidenceSketch, SketchConfig, build_sketch


def evaluate(test: Dataset, model, sketch, params: MattParams, plain_sketch=None,
             workers: int = 1, timing: bool = True) -> dict:
    """One metrics record for ``params`` on ``test``."""
    start = time.perf_counter()
    scores = predict_many(test.X, sketch, model, params, plain_sketch=plain_sketch, workers=workers)
    elapsed = (time.perf_counter() - start) * 1000.0
    return {
        "mode": params.mode,
        "T": params.T,
        "K": params.n_paths,
        "seed": params.seed,
        "auc": auc(scores, test.y),
        "logloss": logloss(scores, test.y),
        "n": len(test),
        "runtime_ms": round(elapsed, 3) if timing else None,
    }


@dataclass
class Pipeline:
    train: Dataset
    test: Dataset
    model: FmModel
    sketch: ConfidenceSketch
    plain_sketch: ConfidenceSketch | None = None


def synthetic_pipeline(synth: SynthConfig, train_cfg: TrainConfig | None = None,
                       sketch_cfg: SketchConfig | None = None, plain: bool = True) -> Pipeline:
    """Generate data, apply the vocabulary rule, train an FM and build sketches."""
    data = generate_synthetic(synth)
    tr, te = encode_splits(data.train, data.test)
    train_cfg = replace(train_cfg or TrainConfig(), seed=synth.seed)
    model = train(tr, train_cfg)
    sketch_cfg = sketch_cfg or SketchConfig()
    sketch = build_sketch(tr, sketch_cfg)
    plain_sk = build_sketch(tr, replace(sketch_cfg, peeling=False)) if plain else None
    return Pipeline(tr, te, model, sketch, plain_sk)


def run_grid(pipe: Pipeline, cells, seed: int, workers: int = 1, timing: bool = True) -> list[dict]:
    """Evaluate each ``(mode, T, K)`` cell with the shared seed."""
    out = []
    for mode, T, K in cells:
        params = MattParams(T=T, K=K, seed=seed, mode=mode)
        out.append(evaluate(pipe.test, pipe.model, pipe.sketch, params, pipe.plain_sketch, workers, timing))
    return out


def mean_auc(records, **match) -> float:
    vals = [r["auc"] for r in records if all(r[k] == v for k, v in match.items())]
    return float(np.mean(vals))
