"""Command-line entry point.

Every subcommand reads a flat :class:`RunConfig`: built-in defaults, then an
optional ``--config`` JSON file, then explicit flags.  Machine output is JSON
lines, written to ``--out`` (or stdout when a command has no other artifact).

Exit codes: 0 success, 1 internal error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from .core import ConfigError, MattError, SchemaError
from .data import Schema, SynthConfig, generate_synthetic, load_dataset, read_header
from .experiment import evaluate
from .pathgen import MODES, WEIGHT_RULES, MattParams
from .scorer import FmModel, TrainConfig, train
from .sketch import ConfidenceSketch, SketchConfig, SnapshotError, build_sketch, write_stats

log = logging.getLogger("matt")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2


class UsageError(MattError):
    """Bad flags, config values or missing inputs (exit code 2)."""


@dataclass
class RunConfig:
    command: str = ""
    seed: int = 0
    out: str | None = None
    # datasets and artifacts
    train: str | None = None
    test: str | None = None
    numeric: list[str] = field(default_factory=list)
    schema: str | None = None
    model: str | None = None
    sketch: str | None = None
    plain_sketch: str | None = None
    stats: str | None = None
    # sketch
    max_order: int = 2
    n_tables: int = 4
    width_order1: int = 2**18
    width_order2: int = 2**20
    capacity_order1: int | None = None
    capacity_order2: int | None = None
    alpha: float = 0.05
    peeling: bool = True
    # training
    learning_rate: float = 0.01
    l2: float = 1e-5
    epochs: int = 3
    batch_size: int = 512
    d: int = 8
    # inference
    T: int = 10
    K: int = 8
    mode: str = "full"
    weight_rule: str = "min"
    workers: int = 1
    timing: bool = False
    T_grid: list[int] = field(default_factory=lambda: [1, 5, 10, 15, 30])
    K_grid: list[int] = field(default_factory=lambda: [2, 4, 8, 16, 25])
    modes: list[str] = field(default_factory=lambda: list(MODES))
    # synthetic data
    n_fields: int = 20
    cardinalities: list[int] = field(default_factory=lambda: [20, 200, 5000, 50000])
    zipf_s: float = 1.2
    n_train: int = 100_000
    n_test: int = 20_000
    corruption: float = 0.3
    rare_threshold: int = 3
    base_rate: float = 0.25

    def sketch_config(self) -> SketchConfig:
        widths = {1: self.width_order1, 2: self.width_order2}
        caps = {m: c for m, c in ((1, self.capacity_order1), (2, self.capacity_order2)) if c is not None}
        return SketchConfig(max_order=self.max_order, n_tables=self.n_tables, widths=widths,
                            capacities=caps, alpha=self.alpha, peeling=self.peeling, seed=self.seed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, l2=self.l2, epochs=self.epochs,
                           batch_size=self.batch_size, seed=self.seed, d=self.d)

    def matt_params(self, **over) -> MattParams:
        kw = dict(T=self.T, K=self.K, seed=self.seed, mode=self.mode, weight_rule=self.weight_rule)
        kw.update(over)
        return MattParams(**kw)

    def synth_config(self) -> SynthConfig:
        return SynthConfig(n_fields=self.n_fields, cardinalities=list(self.cardinalities), zipf_s=self.zipf_s,
                           n_train=self.n_train, n_test=self.n_test, corruption=self.corruption,
                           rare_threshold=self.rare_threshold, base_rate=self.base_rate, seed=self.seed)


CONFIG_KEYS = {f.name for f in fields(RunConfig)} - {"command"}


def load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("config file must hold a flat JSON object")
    unknown = set(data) - CONFIG_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return data


def resolve_config(command: str, file_values: dict, flag_values: dict) -> RunConfig:
    """Merge layers: defaults < config file < flags (flags left as None are unset)."""
    merged = dict(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    try:
        cfg = RunConfig(command=command, **merged)
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    if cfg.mode not in MODES:
        raise UsageError(f"mode must be one of {MODES}, got {cfg.mode!r}")
    if cfg.weight_rule not in WEIGHT_RULES:
        raise UsageError(f"weight rule must be one of {WEIGHT_RULES}, got {cfg.weight_rule!r}")
    bad = [m for m in cfg.modes if m not in MODES]
    if bad:
        raise UsageError(f"unknown modes: {bad}")
    if cfg.workers < 1:
        raise UsageError("workers must be >= 1")
    return cfg


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _strs(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON file of RunConfig values")
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--train")
    data.add_argument("--test")
    data.add_argument("--numeric", type=_strs, help="comma-separated numeric column names")
    data.add_argument("--schema")

    sk = argparse.ArgumentParser(add_help=False)
    sk.add_argument("--max-order", dest="max_order", type=int)
    sk.add_argument("--n-tables", dest="n_tables", type=int)
    sk.add_argument("--width-order1", dest="width_order1", type=int)
    sk.add_argument("--width-order2", dest="width_order2", type=int)
    sk.add_argument("--capacity-order1", dest="capacity_order1", type=int)
    sk.add_argument("--capacity-order2", dest="capacity_order2", type=int)
    sk.add_argument("--alpha", type=float)
    sk.add_argument("--no-peeling", dest="peeling", action="store_const", const=False)
    sk.add_argument("--stats")

    tr = argparse.ArgumentParser(add_help=False)
    tr.add_argument("--learning-rate", dest="learning_rate", type=float)
    tr.add_argument("--l2", type=float)
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--batch-size", dest="batch_size", type=int)
    tr.add_argument("--d", type=int)

    inf = argparse.ArgumentParser(add_help=False)
    inf.add_argument("--model")
    inf.add_argument("--sketch")
    inf.add_argument("--plain-sketch", dest="plain_sketch")
    inf.add_argument("--T", "--steps", dest="T", type=int)
    inf.add_argument("--K", "--paths", dest="K", type=int)
    inf.add_argument("--weight-rule", dest="weight_rule")
    inf.add_argument("--workers", type=int)
    inf.add_argument("--timing", action="store_const", const=True,
                     help="record wall-clock runtime_ms (otherwise null, keeping output reproducible)")

    parser = argparse.ArgumentParser(prog="matt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("build-sketch", parents=[common, data, sk], help="count feature combinations")
    sub.add_parser("train", parents=[common, data, tr], help="fit the reference FM scorer")
    ev = sub.add_parser("eval", parents=[common, data, inf], help="score a test split")
    ev.add_argument("--mode")
    sw = sub.add_parser("sweep", parents=[common, data, inf], help="grid over steps and paths")
    sw.add_argument("--mode")
    sw.add_argument("--T-grid", "--steps-grid", dest="T_grid", type=_ints)
    sw.add_argument("--K-grid", "--paths-grid", dest="K_grid", type=_ints)
    ab = sub.add_parser("ablate", parents=[common, data, inf], help="compare inference modes")
    ab.add_argument("--modes", type=_strs)
    sy = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    sy.add_argument("--n-fields", dest="n_fields", type=int)
    sy.add_argument("--cardinalities", type=_ints)
    sy.add_argument("--zipf-s", dest="zipf_s", type=float)
    sy.add_argument("--n-train", dest="n_train", type=int)
    sy.add_argument("--n-test", dest="n_test", type=int)
    sy.add_argument("--corruption", type=float)
    sy.add_argument("--rare-threshold", dest="rare_threshold", type=int)
    sy.add_argument("--base-rate", dest="base_rate", type=float)
    return parser


# -- helpers ------------------------------------------------------------------------

def _require(cfg: RunConfig, *names: str) -> None:
    for name in names:
        value = getattr(cfg, name)
        if value is None:
            raise UsageError(f"--{name.replace('_', '-')} is required for {cfg.command}")
        if not Path(value).exists():
            raise UsageError(f"no such file: {value}")


def _schema_sidecar(model_path) -> Path:
    return Path(f"{model_path}.schema.json")


def _train_split(cfg: RunConfig):
    _require(cfg, "train")
    if cfg.schema is not None:
        _require(cfg, "schema")
        schema = Schema.load(cfg.schema)
        # reloading the train split may only add ids the saved vocab lacks
        return load_dataset(cfg.train, schema, "train"), schema
    schema = Schema.from_header(read_header(cfg.train), cfg.numeric)
    return load_dataset(cfg.train, schema, "train"), schema


def _emit(records, out) -> None:
    lines = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    if out is None:
        sys.stdout.write(lines)
    else:
        Path(out).write_text(lines)


def _load_inference(cfg: RunConfig, needs_sketch: bool):
    _require(cfg, "test", "model")
    sidecar = _schema_sidecar(cfg.model)
    schema_path = cfg.schema or (sidecar if sidecar.exists() else None)
    if schema_path is None:
        raise UsageError(f"no schema found for {cfg.model}; pass --schema")
    schema = Schema.load(schema_path)
    model = FmModel.load(cfg.model)
    test = load_dataset(cfg.test, schema, "eval")
    sketch = plain = None
    if needs_sketch:
        _require(cfg, "sketch")
        sketch = ConfidenceSketch.load(cfg.sketch)
    if cfg.plain_sketch is not None:
        _require(cfg, "plain_sketch")
        plain = ConfidenceSketch.load(cfg.plain_sketch)
    return test, model, sketch, plain


def _run_cells(cfg: RunConfig, params_list) -> list[dict]:
    needs_sketch = any(p.mode != "baseline" for p in params_list)
    needs_plain = any(p.mode == "rhp" for p in params_list)
    if needs_plain and cfg.plain_sketch is None:
        raise UsageError("mode rhp needs a plain (non-peeled) sketch: pass --plain-sketch")
    test, model, sketch, plain = _load_inference(cfg, needs_sketch)
    return [evaluate(test, model, sketch, p, plain, cfg.workers, cfg.timing) for p in params_list]


# -- subcommands --------------------------------------------------------------------

def cmd_build_sketch(cfg: RunConfig) -> list[dict]:
    if cfg.out is None:
        raise UsageError("--out (snapshot path) is required for build-sketch")
    data, _ = _train_split(cfg)
    sketch = build_sketch(data, cfg.sketch_config())
    sketch.save(cfg.out)
    stats_path = cfg.stats or f"{cfg.out}.stats.jsonl"
    with open(stats_path, "w") as fh:
        write_stats(sketch, fh)
    return sketch.stats()


def cmd_train(cfg: RunConfig) -> list[dict]:
    if cfg.out is None:
        raise UsageError("--out (model path) is required for train")
    data, schema = _train_split(cfg)
    model = train(data, cfg.train_config(), vocab_sizes=schema.vocab_sizes())
    model.save(cfg.out)
    schema.save(_schema_sidecar(cfg.out))
    return [{"model": str(cfg.out), "n": len(data), "n_fields": model.n_fields,
             "vocab_sizes": [int(v) for v in model.vocab_sizes], "warnings": dict(data.warnings)}]


def cmd_eval(cfg: RunConfig) -> list[dict]:
    return _run_cells(cfg, [cfg.matt_params()])


def cmd_sweep(cfg: RunConfig) -> list[dict]:
    if not cfg.T_grid or not cfg.K_grid:
        raise UsageError("sweep grid is empty")
    cells = [cfg.matt_params(T=T, K=K) for T in cfg.T_grid for K in cfg.K_grid]
    return _run_cells(cfg, cells)


def cmd_ablate(cfg: RunConfig) -> list[dict]:
    if not cfg.modes:
        raise UsageError("no modes to ablate")
    return _run_cells(cfg, [cfg.matt_params(mode=m) for m in cfg.modes])


def cmd_synth(cfg: RunConfig) -> list[dict]:
    if cfg.out is None:
        raise UsageError("--out (directory) is required for synth")
    data = generate_synthetic(cfg.synth_config())
    data.write(cfg.out)
    return [{"dir": str(cfg.out), "n_train": len(data.train), "n_test": len(data.test),
             "n_flipped": data.truth["n_flipped"], "base_rate_train": float(data.train.y.mean())}]


COMMANDS = {
    "build-sketch": cmd_build_sketch,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "synth": cmd_synth,
}
# commands whose --out is the JSON-lines report itself
REPORTS = {"eval", "sweep", "ablate"}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k in CONFIG_KEYS}
    try:
        file_values = load_config_file(args.config) if args.config else {}
        cfg = resolve_config(args.command, file_values, flags)
        records = COMMANDS[cfg.command](cfg)
        _emit(records, cfg.out if cfg.command in REPORTS else None)
    except (UsageError, ConfigError, SchemaError, SnapshotError, FileNotFoundError) as exc:
        print(f"matt {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        log.debug("internal error", exc_info=True)
        print(f"matt {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
