import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import roc_auc_score

from matt.core import ConfigError, Dataset, Instance, InvalidInputError, MattError
from matt.scorer import FmModel, TrainConfig, auc, fm_score, fm_score_features, init_model, logloss, train

from . import oracles


def random_model(rng, vocab=(4, 5, 3), d=3):
    vocab = np.array(vocab)
    rows = int(vocab.sum())
    return FmModel(vocab, d, bias=float(rng.normal()), linear=rng.normal(size=rows),
                   embeddings=rng.normal(scale=0.5, size=(rows, d)))


def test_zero_model_half():
    model = FmModel([3, 3], d=2)
    assert fm_score(model, Instance.from_values([1, 2])) == 0.5


def test_all_masked_gives_bias_only():
    model = random_model(np.random.default_rng(0))
    got = fm_score(model, Instance.from_values([0, 0, 0]))
    assert got == pytest.approx(1 / (1 + np.exp(-model.bias)), abs=1e-15)


def test_three_feature_toy_matches_naive():
    model = FmModel([2, 2, 2], d=2, bias=0.1,
                    linear=[0, 0.3, 0, -0.2, 0, 0.5],
                    embeddings=[[0, 0], [1, 2], [0, 0], [0.5, -1], [0, 0], [2, 0.25]])
    z = oracles.fm_logit_naive(model.bias, model.linear, model.embeddings, [1, 3, 5])
    assert model.logits(np.array([[1, 1, 1]]))[0] == pytest.approx(z, abs=1e-12)


def test_mask_rows_pinned():
    model = FmModel([3, 3], d=2, linear=np.ones(6), embeddings=np.ones((6, 2)))
    assert model.linear[model.offsets].tolist() == [0, 0]
    assert (model.embeddings[model.offsets] == 0).all()


def test_unknown_ids_masked_and_counted():
    model = random_model(np.random.default_rng(1))
    got = model.predict(np.array([[9, 1, 1]]))[0]
    assert got == model.predict(np.array([[0, 1, 1]]))[0]
    assert model.unknown_count == 1


def test_wrong_width_rejected():
    with pytest.raises(InvalidInputError):
        FmModel([2, 2]).predict(np.array([[1, 1, 1]]))


def test_batch_invariance():
    rng = np.random.default_rng(2)
    model = random_model(rng)
    X = np.column_stack([rng.integers(0, v, size=50) for v in (4, 5, 3)])
    full = model.predict(X)
    assert np.array_equal(np.concatenate([model.predict(X[i:i + 7]) for i in range(0, 50, 7)]), full)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_masked_equals_reduced(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, vocab=(5, 4, 6, 3, 2))
    x = [int(rng.integers(0, v)) for v in model.vocab_sizes]
    keep = rng.random(5) < 0.5
    masked = [v if k else 0 for v, k in zip(x, keep)]
    feats = [(f, v) for f, (v, k) in enumerate(zip(x, keep)) if k and v]
    assert abs(fm_score(model, Instance.from_values(masked)) - fm_score_features(model, feats)) <= 1e-12


def test_separable_toy_converges():
    X = np.array([[1, 1], [1, 2], [2, 1], [2, 2]] * 50)
    y = (X[:, 0] == 1).astype(int)
    model = train(Dataset(X, y), TrainConfig(learning_rate=0.05, epochs=50, batch_size=16, l2=0.0))
    assert logloss(model.predict(X), y) < 0.05
    # the closed-form logistic fit separates the same set
    onehot = np.column_stack([X[:, 0] == 1, X[:, 0] == 2, X[:, 1] == 1]).astype(float)
    ref = LogisticRegression(C=1e6, max_iter=1000).fit(onehot, y)
    assert ref.score(onehot, y) == 1.0


def test_heavy_l2_shrinks_to_bias():
    rng = np.random.default_rng(3)
    X = rng.integers(1, 5, size=(400, 3))
    y = rng.integers(0, 2, size=400)
    model = train(Dataset(X, y), TrainConfig(l2=1e3, epochs=20, learning_rate=0.01, batch_size=32))
    p = model.predict(X)
    assert np.ptp(p) < 1e-2
    assert np.abs(p - 1 / (1 + np.exp(-model.bias))).max() < 1e-2


def test_training_deterministic_and_pinned():
    rng = np.random.default_rng(4)
    X = rng.integers(0, 6, size=(300, 4))
    y = rng.integers(0, 2, size=300)
    a = train(Dataset(X, y), TrainConfig(seed=7, epochs=2))
    b = train(Dataset(X, y), TrainConfig(seed=7, epochs=2))
    assert a.to_bytes() == b.to_bytes()
    assert (a.linear[a.offsets] == 0).all() and (a.embeddings[a.offsets] == 0).all()


def test_single_class_warns():
    X = np.array([[1, 2], [2, 1]])
    with pytest.warns(RuntimeWarning):
        train(Dataset(X, [1, 1]), TrainConfig(epochs=1))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


def test_model_snapshot_roundtrip(tmp_path):
    model = init_model([3, 4], 5, np.random.default_rng(0))
    model.bias = 0.25
    path = tmp_path / "m.bin"
    model.save(path)
    back = FmModel.load(path)
    assert back.to_bytes() == model.to_bytes()
    with pytest.raises(MattError):
        FmModel.from_bytes(model.to_bytes()[:-1])
    with pytest.raises(MattError):
        FmModel.from_bytes(b"XXXXXXXX" + model.to_bytes()[8:])


def test_auc_examples():
    assert auc([0.9, 0.8, 0.3, 0.2], [1, 0, 1, 0]) == 0.75
    assert oracles.pair_count_auc([0.9, 0.8, 0.3, 0.2], [1, 0, 1, 0]) == 0.75
    assert auc([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    assert auc([0.5] * 4, [1, 0, 1, 0]) == 0.5
    with pytest.raises(InvalidInputError):
        auc([0.1, 0.2], [1, 1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 1)), min_size=2, max_size=60))
def test_auc_matches_oracles(pairs):
    scores = [s / 20 for s, _ in pairs]
    labels = [y for _, y in pairs]
    if len(set(labels)) < 2:
        return
    got = auc(scores, labels)
    assert got == pytest.approx(oracles.pair_count_auc(scores, labels), abs=1e-12)
    assert got == pytest.approx(roc_auc_score(labels, scores), abs=1e-12)
    assert auc(np.exp(3 * np.array(scores)), labels) == got


def test_logloss_examples():
    assert logloss([0.5, 0.5], [1, 0]) == pytest.approx(np.log(2))
    assert logloss([1.0, 0.0], [1, 0]) < 1e-6
    assert logloss([0.9, 0.1], [1, 0]) == pytest.approx(-np.log(0.9), abs=1e-12)
    assert logloss([0.9, 0.1], [1, 0]) == pytest.approx(0.10536, abs=1e-5)


def test_scores_strictly_inside_unit_interval():
    model = FmModel([2], d=1, bias=30.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        p = model.predict(np.array([[1]]))[0]
    assert 0 < p <= 1.0
    assert FmModel([2], d=1, bias=5.0).predict(np.array([[1]]))[0] < 1.0
