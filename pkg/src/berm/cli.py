"""Command-line entry point: ``berm <subcommand> [flags]``.

Every subcommand writes its outputs under ``--out`` with fixed file names
plus a ``manifest.txt`` recording the resolved configuration and content
hashes of the inputs and outputs. A manifest doubles as a config file
(``--config out/manifest.txt``) to replay a run.

Configuration layers, lowest to highest: built-in defaults, the training
run's manifest (for subcommands reading ``--run``), ``--preset``,
``--config`` and explicit flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import itertools
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import data as data_mod
from .bermo import bermo_score_pairs, distill_bermo, load_bermo, save_bermo
from .data import SyntheticWorldConfig, generate_world
from .evaluation import EvalReport, evaluate
from .graph import BipartiteGraph, behavioral_neighbor_fn
from .model import (ABLATION_VARIANTS, ContextEncoder, ModelConfig,
                    load_checkpoint, read_checkpoint, save_checkpoint, score_pairs)
from .pipeline import prepare
from .teacher import MissingScoreError, TeacherScoreTable
from .text import Vocabulary
from .train import PRESETS, TrainConfig, TrainingDiverged, train

GRAPH = "graph.txt"
BERM_CKPT = "berm.ckpt"
BERMO_CKPT = "bermo.ckpt"
HISTORY = "history.csv"
REPORT_CSV = "report.csv"
REPORT_TXT = "report.txt"
MANIFEST = "manifest.txt"
VOCAB = "vocab.txt"
PREDICTIONS = "predictions.tsv"

TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
WORLD_FIELDS = {f.name: f for f in dataclasses.fields(SyntheticWorldConfig)}
METRICS = ("auc", "f1", "fnr")

log = logging.getLogger("berm")


class CliError(Exception):
    """A user-facing failure; the message becomes the one-line cause."""


# ---------------------------------------------------------------------------
# Config files and manifests
# ---------------------------------------------------------------------------

def _convert(field: dataclasses.Field, raw: str):
    kind = type(field.default)
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise CliError(f"{field.name}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError:
        raise CliError(f"{field.name}: expected {kind.__name__}, got {raw!r}") from None


def read_key_values(path, fields: dict[str, dataclasses.Field]) -> dict:
    """Parse a ``key = value`` file against ``fields``.

    Blank lines and ``#`` comments are skipped. If the file has ``[section]``
    headers (as manifests do), only the ``[config]`` section is read.
    """
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror}") from None
    sectioned = any(line.strip().startswith("[") for line in lines)
    section = None
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            section = line.strip("[]").strip()
            continue
        if sectioned and section != "config":
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise CliError(f"{path}:{lineno}: expected 'key = value'")
        if key not in fields:
            raise CliError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _convert(fields[key], value.strip())
    return out


def git_hash(path) -> str:
    """Content hash computed the way ``git hash-object`` does."""
    blob = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(blob) + blob).hexdigest()


def _fmt_value(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def write_manifest(path, subcommand: str, config: dict, inputs: Sequence, outputs: Sequence,
                   notes: Optional[dict] = None) -> None:
    lines = [f"subcommand = {subcommand}", f"seed = {config.get('seed', '')}", "", "[config]"]
    lines += [f"{k} = {_fmt_value(v)}" for k, v in config.items()]
    if notes:
        lines += ["", "[notes]"] + [f"{k} = {v}" for k, v in notes.items()]
    lines += ["", "[inputs]"] + [f"{p} = {git_hash(p)}" for p in inputs]
    # outputs are named relative to the run directory so reruns elsewhere compare equal
    lines += ["", "[outputs]"] + [f"{Path(p).name} = {git_hash(p)}" for p in outputs]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class Outputs:
    """Tracks files a subcommand writes so a failure can remove them."""

    def __init__(self, directory) -> None:
        self.dir = Path(directory)
        self.created_dir = not self.dir.exists()
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.dir / name
        self.files.append(p)
        return p

    def discard(self) -> None:
        for p in self.files:
            p.unlink(missing_ok=True)
        if self.created_dir and self.dir.exists() and not any(self.dir.iterdir()):
            self.dir.rmdir()


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_fields(parser: argparse.ArgumentParser, fields: dict[str, dataclasses.Field],
                title: str) -> None:
    group = parser.add_argument_group(title)
    for name, field in fields.items():
        flag = "--" + name.replace("_", "-")
        if type(field.default) is bool:
            group.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction, default=None,
                               help=f"default {field.default}")
        else:
            group.add_argument(flag, dest=name, type=type(field.default), default=None,
                               metavar=name.upper(), help=f"default {field.default}")


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--config", help="key = value file (a manifest also works)")
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS threads")
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="berm", description="Graph-context relevance matching.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("gen-data", help="write a synthetic world")
    _common(p)
    p.add_argument("--world", choices=("default", "context"), default="default",
                   help="'context' = noisy clicks and mostly unmarked item titles")
    _add_fields(p, WORLD_FIELDS, "world")

    def train_like(name: str, help_: str, *, data: bool = True, run: bool = False):
        p = sub.add_parser(name, help=help_)
        _common(p)
        if data:
            p.add_argument("--data", required=True, help="directory written by gen-data")
        if run:
            p.add_argument("--run", required=True, help="directory written by train")
        p.add_argument("--preset", choices=sorted(PRESETS), default=None)
        _add_fields(p, TRAIN_FIELDS, "training")
        return p

    train_like("build-graph", "refine the behavior graph with teacher scores")
    p = train_like("train", "train the graph-aware scorer")
    p.add_argument("--graph", help="refined graph snapshot (default: build it)")
    p = train_like("distill", "fit the online model to a trained scorer", run=True)
    p = train_like("eval", "evaluate a checkpoint on the labeled test pairs", run=True)
    p.add_argument("--checkpoint", help=f"scorer or online checkpoint (default: RUN/{BERM_CKPT})")
    p = train_like("predict", "score query/item pairs", data=False, run=True)
    p.add_argument("--pairs", required=True, help="TSV with query and item columns")
    p.add_argument("--checkpoint", help=f"scorer or online checkpoint (default: RUN/{BERM_CKPT})")
    p.add_argument("--teacher", help="teacher scores (only for score-based neighbor ranking)")
    p = train_like("ablate", "train and evaluate every ablation variant")
    p.add_argument("--seeds", help="comma-separated seeds to average (default: --seed)")
    p = train_like("sweep", "grid over hyper-parameters")
    p.add_argument("--param", action="append", default=[], help="TrainConfig field to vary")
    p.add_argument("--values", action="append", default=[], help="comma-separated values")
    p.add_argument("--seeds", help="comma-separated seeds to average (default: --seed)")
    return parser


def _explicit(args: argparse.Namespace, fields) -> dict:
    return {k: getattr(args, k) for k in fields if getattr(args, k, None) is not None}


def resolve_train_config(args: argparse.Namespace, base: Optional[dict] = None) -> TrainConfig:
    values = dict(base or {})
    if getattr(args, "preset", None):
        values.update(PRESETS[args.preset])
    if args.config:
        values.update(read_key_values(args.config, TRAIN_FIELDS))
    values.update(_explicit(args, TRAIN_FIELDS))
    try:
        return TrainConfig(**values)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _int_list(raw: Optional[str], default: int) -> list[int]:
    if raw is None:
        return [default]
    try:
        return [int(s) for s in raw.split(",") if s.strip()]
    except ValueError:
        raise CliError(f"--seeds: expected integers, got {raw!r}") from None


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

class Dataset:
    def __init__(self, directory) -> None:
        d = Path(directory)
        self.paths = {name: d / name for name in (data_mod.BEHAVIOR_LOG, data_mod.TEACHER_SCORES,
                                                   data_mod.TRAIN_PAIRS, data_mod.TEST_PAIRS)}
        for name in (data_mod.BEHAVIOR_LOG, data_mod.TEACHER_SCORES, data_mod.TRAIN_PAIRS):
            if not self.paths[name].is_file():
                raise CliError(f"missing {self.paths[name]}")
        self.log = data_mod.load_behavior_log(self.paths[data_mod.BEHAVIOR_LOG])
        self.teacher = TeacherScoreTable.load(self.paths[data_mod.TEACHER_SCORES])
        self.train_pairs = data_mod.load_pairs(self.paths[data_mod.TRAIN_PAIRS])
        test = self.paths[data_mod.TEST_PAIRS]
        self.test_pairs = data_mod.load_labeled_pairs(test) if test.is_file() else []

    def inputs(self, *names: str) -> list[Path]:
        names = names or tuple(self.paths)
        return [self.paths[n] for n in names if self.paths[n].is_file()]


class RunDir:
    """Artifacts of a ``train`` run: vocabulary, graph and manifest config."""

    def __init__(self, directory) -> None:
        self.dir = Path(directory)
        for name in (VOCAB, GRAPH):
            if not (self.dir / name).is_file():
                raise CliError(f"missing {self.dir / name}")
        self.vocab = Vocabulary.load(self.dir / VOCAB)
        self.graph = BipartiteGraph.load(self.dir / GRAPH)
        manifest = self.dir / MANIFEST
        self.config = read_key_values(manifest, TRAIN_FIELDS) if manifest.is_file() else {}

    def checkpoint(self, override: Optional[str]) -> Path:
        p = Path(override) if override else self.dir / BERM_CKPT
        if not p.is_file():
            raise CliError(f"missing checkpoint {p}")
        return p

    def inputs(self) -> list[Path]:
        return [self.dir / VOCAB, self.dir / GRAPH]


def load_scorer(path: Path):
    """Load either checkpoint kind; returns ``(kind, params)``."""
    header, _ = read_checkpoint(path)
    kind = header.get("kind")
    if kind == "bermo":
        return kind, load_bermo(path)
    return "berm", load_checkpoint(path)


def scorer_encoder(run: RunDir, kind: str, params, config: TrainConfig,
                   teacher: Optional[TeacherScoreTable]) -> ContextEncoder:
    if kind == "berm":
        mcfg = params.config
    else:
        c = params.config
        mcfg = ModelConfig(c.d, c.l_q, c.l_i, config.k, config.b)
    if config.neighbor_rank == "score":
        if teacher is None:
            raise CliError("score-based neighbor ranking needs teacher scores")
        fn = behavioral_neighbor_fn(run.graph, lam=config.lam, teacher_scores=teacher,
                                    behavior_kind=config.behavior_kind)
    else:
        fn = behavioral_neighbor_fn(run.graph)
    return ContextEncoder(run.vocab, run.graph, mcfg, fn)


def score_with(kind: str, params, encoder: ContextEncoder):
    if kind == "bermo":
        return lambda pairs: bermo_score_pairs(pairs, encoder, params)
    return lambda pairs: score_pairs(pairs, encoder, params)


def _labels(pairs) -> np.ndarray:
    return np.asarray([p.label for p in pairs], dtype=np.int64)


def _need_test(ds: Dataset) -> None:
    if not ds.test_pairs:
        raise CliError(f"missing or empty {ds.paths[data_mod.TEST_PAIRS]}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _write_report(out: Outputs, report: EvalReport) -> list[Path]:
    csv_path, txt_path = out.path(REPORT_CSV), out.path(REPORT_TXT)
    csv_path.write_text(f"{EvalReport.CSV_HEADER}\n{report.csv_row()}\n", encoding="utf-8")
    txt_path.write_text(report.pretty() + "\n", encoding="utf-8")
    return [csv_path, txt_path]


def _write_history(path: Path, history) -> None:
    lines = ["epoch,loss,auc,f1,fnr"]
    lines += [f"{r.epoch},{r.loss!r},{r.auc!r},{r.f1!r},{r.fnr!r}" for r in history]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_gen_data(args, out: Outputs) -> None:
    values = dict(data_mod.CONTEXT_WORLD) if args.world == "context" else {}
    if args.config:
        values.update(read_key_values(args.config, WORLD_FIELDS))
    values.update(_explicit(args, WORLD_FIELDS))
    try:
        cfg = SyntheticWorldConfig(**values)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    world = generate_world(cfg)
    paths = [out.path(n) for n in (data_mod.BEHAVIOR_LOG, data_mod.TEACHER_SCORES,
                                   data_mod.TRAIN_PAIRS, data_mod.TEST_PAIRS)]
    world.save(out.dir)
    write_manifest(out.path(MANIFEST), "gen-data", dataclasses.asdict(cfg), [], paths)


def cmd_build_graph(args, out: Outputs) -> None:
    config = resolve_train_config(args)
    ds = Dataset(args.data)
    prepared = prepare(ds.log, ds.teacher, ds.train_pairs, [], config)
    path = out.path(GRAPH)
    prepared.graph.save(path)
    write_manifest(out.path(MANIFEST), "build-graph", config.to_dict(),
                   ds.inputs(data_mod.BEHAVIOR_LOG, data_mod.TEACHER_SCORES, data_mod.TRAIN_PAIRS),
                   [path])


def cmd_train(args, out: Outputs) -> None:
    config = resolve_train_config(args)
    ds = Dataset(args.data)
    graph = BipartiteGraph.load(args.graph) if args.graph else None
    prepared = prepare(ds.log, ds.teacher, ds.train_pairs, ds.test_pairs, config, graph=graph)
    kwargs = {}
    if ds.test_pairs:
        kwargs = {"eval_pairs": prepared.test_pairs, "eval_labels": prepared.test_labels}
    result = train(prepared.transfer, prepared.encoder, config, **kwargs)
    written = [out.path(BERM_CKPT), out.path(HISTORY), out.path(VOCAB), out.path(GRAPH)]
    save_checkpoint(result.params, written[0])
    _write_history(written[1], result.history)
    prepared.vocab.save(written[2])
    prepared.graph.save(written[3])
    inputs = ds.inputs() + ([Path(args.graph)] if args.graph else [])
    write_manifest(out.path(MANIFEST), "train", config.to_dict(), inputs, written)


def cmd_distill(args, out: Outputs) -> None:
    run = RunDir(args.run)
    config = resolve_train_config(args, run.config)
    ds = Dataset(args.data)
    ckpt = run.checkpoint(None)
    berm = load_checkpoint(ckpt)
    encoder = scorer_encoder(run, "berm", berm, config, ds.teacher)
    params, _ = distill_bermo(berm, encoder, ds.train_pairs, config)
    path = out.path(BERMO_CKPT)
    save_bermo(params, path)
    write_manifest(out.path(MANIFEST), "distill", config.to_dict(),
                   run.inputs() + [ckpt] + ds.inputs(data_mod.TRAIN_PAIRS), [path])


def cmd_eval(args, out: Outputs) -> None:
    run = RunDir(args.run)
    config = resolve_train_config(args, run.config)
    ds = Dataset(args.data)
    _need_test(ds)
    ckpt = run.checkpoint(args.checkpoint)
    kind, params = load_scorer(ckpt)
    encoder = scorer_encoder(run, kind, params, config, ds.teacher)
    report = evaluate(score_with(kind, params, encoder), [(p.query, p.item) for p in ds.test_pairs],
                      _labels(ds.test_pairs), config.threshold)
    written = _write_report(out, report)
    write_manifest(out.path(MANIFEST), "eval", config.to_dict(),
                   run.inputs() + [ckpt] + ds.inputs(data_mod.TEST_PAIRS), written,
                   {"model_kind": kind})


def _read_pair_file(path) -> list[tuple[str, str]]:
    try:
        with open(path, encoding="utf-8") as fh:
            first = next((line for line in fh if line.strip()), "")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None
    if first.count("\t") == 2:
        return [(p.query, p.item) for p in data_mod.load_labeled_pairs(path)]
    return data_mod.load_pairs(path)


def cmd_predict(args, out: Outputs) -> None:
    run = RunDir(args.run)
    config = resolve_train_config(args, run.config)
    teacher = TeacherScoreTable.load(args.teacher) if args.teacher else None
    ckpt = run.checkpoint(args.checkpoint)
    kind, params = load_scorer(ckpt)
    encoder = scorer_encoder(run, kind, params, config, teacher)
    pairs = _read_pair_file(args.pairs)
    scores = score_with(kind, params, encoder)(pairs) if pairs else np.zeros(0)
    path = out.path(PREDICTIONS)
    with open(path, "w", encoding="utf-8") as fh:
        for (q, i), s in zip(pairs, scores):
            fh.write(f"{q}\t{i}\t{float(s)!r}\n")
    inputs = run.inputs() + [ckpt, Path(args.pairs)] + ([Path(args.teacher)] if args.teacher else [])
    write_manifest(out.path(MANIFEST), "predict", config.to_dict(), inputs, [path],
                   {"model_kind": kind})


def _mean_report(config: TrainConfig, ds: Dataset, seeds: list[int]) -> dict:
    """Train and evaluate once per seed; average auc/f1/fnr."""
    rows = []
    for seed in seeds:
        cfg = dataclasses.replace(config, seed=seed)
        prepared = prepare(ds.log, ds.teacher, ds.train_pairs, ds.test_pairs, cfg)
        result = train(prepared.transfer, prepared.encoder, cfg)
        report = evaluate(lambda p: score_pairs(p, prepared.encoder, result.params),
                          prepared.test_pairs, prepared.test_labels, cfg.threshold)
        rows.append([getattr(report, m) for m in METRICS])
    return dict(zip(METRICS, np.mean(rows, axis=0).tolist()))


def _write_table(out: Outputs, keys: list[str], rows: list[tuple[list, dict]]) -> list[Path]:
    csv_path, txt_path = out.path(REPORT_CSV), out.path(REPORT_TXT)
    lines = [",".join(keys + list(METRICS))]
    pretty = []
    for cells, metrics in rows:
        lines.append(",".join([_fmt_value(c) for c in cells] + [repr(metrics[m]) for m in METRICS]))
        label = "  ".join(f"{k}={c}" for k, c in zip(keys, cells))
        pretty.append(f"{label:<40} " + "  ".join(f"{m.upper()} {metrics[m]:.4f}" for m in METRICS))
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    txt_path.write_text("\n".join(pretty) + "\n", encoding="utf-8")
    return [csv_path, txt_path]


def cmd_ablate(args, out: Outputs) -> None:
    config = resolve_train_config(args)
    ds = Dataset(args.data)
    _need_test(ds)
    seeds = _int_list(args.seeds, config.seed)
    rows = []
    for variant in ABLATION_VARIANTS:
        log.info("variant %s", variant.name)
        cfg = dataclasses.replace(config, variant=variant.name)
        rows.append(([variant.name], _mean_report(cfg, ds, seeds)))
    written = _write_table(out, ["variant"], rows)
    write_manifest(out.path(MANIFEST), "ablate", config.to_dict(), ds.inputs(), written,
                   {"seeds": ",".join(map(str, seeds))})


def cmd_sweep(args, out: Outputs) -> None:
    config = resolve_train_config(args)
    if not args.param or len(args.param) != len(args.values):
        raise CliError("give one --values list per --param")
    names = [p.replace("-", "_") for p in args.param]
    grids = []
    for name, raw in zip(names, args.values):
        if name not in TRAIN_FIELDS or name == "seed":
            raise CliError(f"--param: cannot sweep {name!r}")
        grids.append([_convert(TRAIN_FIELDS[name], v.strip()) for v in raw.split(",") if v.strip()])
    notes = {}
    if "lam" in names and config.neighbor_rank != "score":
        config = dataclasses.replace(config, neighbor_rank="score")
        notes["neighbor_rank"] = "score (lam only matters for score-based ranking)"
    cells = []
    for combo in itertools.product(*grids):
        try:
            cells.append((list(combo), dataclasses.replace(config, **dict(zip(names, combo)))))
        except ValueError as exc:
            raise CliError(f"cell {dict(zip(names, combo))}: {exc}") from None
    ds = Dataset(args.data)
    _need_test(ds)
    seeds = _int_list(args.seeds, config.seed)
    rows = []
    for combo, cfg in cells:
        log.info("cell %s", dict(zip(names, combo)))
        rows.append((combo, _mean_report(cfg, ds, seeds)))
    written = _write_table(out, names, rows)
    notes["seeds"] = ",".join(map(str, seeds))
    write_manifest(out.path(MANIFEST), "sweep", config.to_dict(), ds.inputs(), written, notes)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "distill": cmd_distill,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
}


def _cause(exc: BaseException) -> str:
    if isinstance(exc, KeyError) and exc.args:
        msg = f"no teacher score for {exc.args[0]}" if isinstance(exc, MissingScoreError) \
            else f"missing key {exc.args[0]!r}"
    elif isinstance(exc, OSError) and exc.filename:
        msg = f"{exc.filename}: {exc.strerror}"
    else:
        msg = str(exc) or type(exc).__name__
    return " ".join(msg.split())


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    out = Outputs(args.out)
    try:
        with threadpool_limits(limits=args.threads):
            COMMANDS[args.command](args, out)
    except (CliError, ValueError, KeyError, OSError, TrainingDiverged) as exc:
        out.discard()
        print(f"berm {args.command}: error: {_cause(exc)}", file=sys.stderr)
        return 1
    except BaseException:
        out.discard()
        raise
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
