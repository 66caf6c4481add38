import json

import numpy as np
import pytest

from matt import cli
from matt.data import Schema, load_dataset
from matt.scorer import FmModel, auc
from matt.sketch import ConfidenceSketch


@pytest.fixture(scope="module")
def art(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert cli.main(["synth", "--out", str(d / "data"), "--n-train", "1500", "--n-test", "400",
                     "--n-fields", "6", "--cardinalities", "5,30", "--seed", "2"]) == 0
    assert cli.main(["train", "--train", str(d / "data/train.tsv"), "--out", str(d / "m.bin"), "--epochs", "2"]) == 0
    assert cli.main(["build-sketch", "--train", str(d / "data/train.tsv"), "--out", str(d / "s.bin")]) == 0
    assert cli.main(["build-sketch", "--train", str(d / "data/train.tsv"), "--out", str(d / "p.bin"),
                     "--no-peeling"]) == 0
    return d


def args(d, *extra):
    return ["--test", str(d / "data/test.tsv"), "--model", str(d / "m.bin"), "--sketch", str(d / "s.bin"), *extra]


def records(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_synth_writes_files(art):
    for name in ("train.tsv", "test.tsv", "truth.json"):
        assert (art / "data" / name).exists()
    truth = json.loads((art / "data/truth.json").read_text())
    assert {"config", "pairwise_weights", "corrupted_pairs"} <= set(truth)


def test_build_sketch_outputs(art, tmp_path):
    sk = ConfidenceSketch.load(art / "s.bin")
    assert sk.to_bytes() == (art / "s.bin").read_bytes()
    assert len((art / "s.bin.stats.jsonl").read_text().splitlines()) == 2
    assert not ConfidenceSketch.load(art / "p.bin").peeling
    out = tmp_path / "one.bin"
    assert cli.main(["build-sketch", "--train", str(art / "data/train.tsv"), "--out", str(out),
                     "--max-order", "1", "--stats", str(tmp_path / "st.jsonl")]) == 0
    assert len((tmp_path / "st.jsonl").read_text().splitlines()) == 1


def test_train_writes_schema_sidecar(art):
    schema = Schema.load(f"{art / 'm.bin'}.schema.json")
    assert FmModel.load(art / "m.bin").vocab_sizes.tolist() == schema.vocab_sizes()


def test_eval_baseline_matches_direct(art, tmp_path):
    out = tmp_path / "e.jsonl"
    assert cli.main(["eval", *args(art, "--mode", "baseline", "--out", str(out))]) == 0
    (rec,) = records(out)
    assert set(rec) == {"mode", "T", "K", "seed", "auc", "logloss", "n", "runtime_ms"}
    schema = Schema.load(f"{art / 'm.bin'}.schema.json")
    test = load_dataset(art / "data/test.tsv", schema, "eval")
    direct = auc(FmModel.load(art / "m.bin").predict(test.X), test.y)
    assert rec["auc"] == pytest.approx(direct, abs=1e-12)
    assert rec["runtime_ms"] is None


def test_full_k1_equals_rmr(art, tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert cli.main(["eval", *args(art, "--K", "1", "--seed", "5", "--out", str(a))]) == 0
    assert cli.main(["eval", *args(art, "--mode", "rmr", "--seed", "5", "--out", str(b))]) == 0
    ra, rb = records(a)[0], records(b)[0]
    assert (ra["auc"], ra["logloss"]) == (rb["auc"], rb["logloss"])


def test_timing_flag(art, tmp_path):
    out = tmp_path / "t.jsonl"
    assert cli.main(["eval", *args(art, "--timing", "--out", str(out))]) == 0
    assert records(out)[0]["runtime_ms"] >= 0


def test_sweep_grids(art, tmp_path):
    a = tmp_path / "a.jsonl"
    assert cli.main(["sweep", *args(art, "--T-grid", "1,5,10,15,30", "--K-grid", "8", "--out", str(a))]) == 0
    assert [r["T"] for r in records(a)] == [1, 5, 10, 15, 30]
    b = tmp_path / "b.jsonl"
    assert cli.main(["sweep", *args(art, "--K-grid", "2,4,8,16,25", "--T-grid", "10", "--out", str(b))]) == 0
    assert [r["K"] for r in records(b)] == [2, 4, 8, 16, 25]
    c = tmp_path / "c.jsonl"
    assert cli.main(["sweep", *args(art, "--K-grid", "2,4,8,16,25", "--T-grid", "10", "--out", str(c))]) == 0
    assert b.read_bytes() == c.read_bytes()


def test_ablate_records(art, tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"ab{i}.jsonl"
        assert cli.main(["ablate", *args(art, "--plain-sketch", str(art / "p.bin"), "--out", str(out))]) == 0
        outs.append(records(out))
    assert [r["mode"] for r in outs[0]] == ["full", "rhp", "rcr", "rmr", "baseline"]
    assert outs[0][-1] == outs[1][-1]


def test_usage_errors(art, tmp_path, capsys):
    assert cli.main(["eval", *args(art, "--mode", "bogus")]) == 2
    assert cli.main(["ablate", *args(art)]) == 2
    assert cli.main(["sweep", *args(art, "--T-grid", "")]) == 2
    assert cli.main(["eval", "--test", "/nonexistent.tsv", "--model", str(art / "m.bin")]) == 2
    assert cli.main(["eval", *args(art)[:4], "--sketch", str(tmp_path / "missing.bin")]) == 2
    assert cli.main(["build-sketch", "--train", "/nope.tsv", "--out", str(tmp_path / "x")]) == 2
    assert cli.main(["frobnicate"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"not_a_key": 1}')
    assert cli.main(["eval", "--config", str(bad), *args(art)]) == 2
    assert "error" in capsys.readouterr().err


def test_internal_error_exit_code(art, tmp_path):
    corrupt = tmp_path / "m.bin"
    corrupt.write_bytes((art / "m.bin").read_bytes()[:-5])
    (tmp_path / "m.bin.schema.json").write_text((art / "m.bin.schema.json").read_text())
    assert cli.main(["eval", "--test", str(art / "data/test.tsv"), "--model", str(corrupt),
                     "--mode", "baseline"]) == 1


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"T": 3, "K": 5, "alpha": 0.1}))
    file_values = cli.load_config_file(cfg)
    merged = cli.resolve_config("eval", file_values, {"K": 7, "T": None})
    assert merged.T == 3          # file beats default
    assert merged.K == 7          # flag beats file
    assert merged.alpha == 0.1
    assert merged.l2 == cli.RunConfig().l2   # untouched default
    args_ = cli.build_parser().parse_args(["eval", "--config", str(cfg), "--K", "7"])
    flags = {k: v for k, v in vars(args_).items() if k in cli.CONFIG_KEYS}
    assert cli.resolve_config("eval", file_values, flags).K == 7


def test_sketch_config_plumbing():
    rc = cli.RunConfig(max_order=1, peeling=False, capacity_order2=9, seed=4)
    sc = rc.sketch_config()
    assert (sc.max_order, sc.peeling, sc.capacities, sc.seed) == (1, False, {2: 9}, 4)
    assert np.isclose(rc.matt_params(K=3).K, 3)
