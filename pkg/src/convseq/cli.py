"""Command-line entry point.

    convseq {pretrain|finetune|eval|benchmark|gradcheck|corrupt}
        --config PATH [--out DIR] [--seed N] [section.key=value ...]

Configuration is a flat key/value file with [model], [run], [data], and
[bench] sections; overrides are given as ``section.key=value`` arguments.
The effective configuration is echoed to the output directory so a run can
be reproduced from its artifacts. Exit codes: 0 success, 1 configuration
error, 2 runtime failure, 3 gradient-check failure.

Log verbosity is controlled only by the CONVSEQ_LOG environment variable
(quiet, info, or debug).
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from dataclasses import fields as dataclass_fields
from importlib import resources

import numpy as np

from . import bench, checks, data as data_mod, training
from .data import (
    BYTE_OFFSET,
    EOS_ID,
    PAD_ID,
    detokenize,
    is_sentinel,
    read_classification_tsv,
    read_corpus_lines,
    span_corrupt,
    tokenize,
)
from .model import ModelConfig, Seq2SeqModel
from .training import RunConfig, load_checkpoint, save_checkpoint

log = logging.getLogger("convseq")


class ConfigError(Exception):
    pass


EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_GRADCHECK = 3

_MODEL_KEYS = {f.name for f in dataclass_fields(ModelConfig)}
_RUN_KEYS = {f.name for f in dataclass_fields(RunConfig)}
_DATA_KEYS = {"corpus", "dataset", "val_dataset", "task", "checkpoint"}
_BENCH_KEYS = {
    "variants", "grid", "batch", "reps", "warmup", "target_len", "flops_only",
    "memory_budget",
}
_SECTION_KEYS = {
    "model": _MODEL_KEYS, "run": _RUN_KEYS, "data": _DATA_KEYS, "bench": _BENCH_KEYS,
}


def default_config_path(name):
    return resources.files("convseq").joinpath(f"configs/{name}")


def default_asset_path(name):
    return str(resources.files("convseq").joinpath(f"assets/{name}"))


def load_config(path, overrides=(), seed=None):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be section.key=value: {item!r}")
        key, value = item.split("=", 1)
        if "." in key:
            section, key = key.split(".", 1)
        else:
            section = next(
                (s for s, keys in _SECTION_KEYS.items() if key in keys), None
            )
            if section is None:
                raise ConfigError(f"unknown override key: {key!r}")
        if section not in _SECTION_KEYS:
            raise ConfigError(f"unknown config section: {section!r}")
        if key not in _SECTION_KEYS[section]:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value)
    for section in parser.sections():
        if section not in _SECTION_KEYS:
            raise ConfigError(f"unknown config section: [{section}]")
        for key in parser[section]:
            if key not in _SECTION_KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
    if seed is not None:
        for section in ("model", "run"):
            if not parser.has_section(section):
                parser.add_section(section)
            parser.set(section, "seed", str(seed))
    return parser


def _coerce(value, target_type):
    if target_type is bool:
        return value.strip().lower() in ("1", "true", "yes", "on")
    if target_type is list:
        return [int(v) for v in value.split(",")]
    return target_type(value)


def _build_dataclass(cls, section, known):
    kwargs = {}
    types = {f.name: f.type for f in dataclass_fields(cls)}
    defaults = cls()
    for key in section or {}:
        raw = section[key]
        default = getattr(defaults, key)
        if key == "kernel_widths":
            kwargs[key] = [int(v) for v in raw.split(",")]
        elif key == "lr_value":
            kwargs[key] = float(raw)
        elif isinstance(default, bool):
            kwargs[key] = _coerce(raw, bool)
        elif isinstance(default, int):
            kwargs[key] = int(raw)
        elif isinstance(default, float):
            kwargs[key] = float(raw)
        else:
            kwargs[key] = raw
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{known}] configuration: {exc}") from exc


def model_config_from(parser):
    section = parser["model"] if parser.has_section("model") else {}
    return _build_dataclass(ModelConfig, section, "model")


def run_config_from(parser):
    section = parser["run"] if parser.has_section("run") else {}
    return _build_dataclass(RunConfig, section, "run")


def echo_config(parser, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "effective.cfg"), "w") as fh:
        parser.write(fh)


def _data_value(parser, key, default=None):
    if parser.has_section("data") and key in parser["data"]:
        return parser["data"][key]
    return default


def _load_corpus_ids(parser):
    corpus_path = _data_value(parser, "corpus", default_asset_path("corpus.txt"))
    if not os.path.exists(corpus_path):
        raise FileNotFoundError(f"corpus file not found: {corpus_path}")
    ids = []
    for line in read_corpus_lines(corpus_path):
        ids.extend(tokenize(line + "\n"))
    return ids


# -- commands ---------------------------------------------------------------


def cmd_pretrain(args):
    parser = load_config(args.config, args.overrides, args.seed)
    cfg = model_config_from(parser)
    run = run_config_from(parser)
    out_dir = args.out or "out"
    echo_config(parser, out_dir)
    model = Seq2SeqModel(cfg)
    if run.steps == 0:
        path = os.path.join(out_dir, "final.ckpt")
        save_checkpoint(path, model.params, cfg, 0)
        log.info("wrote initialization-only checkpoint to %s", path)
        print(f"pretrain: steps=0 checkpoint={path}")
        return 0
    corpus_ids = _load_corpus_ids(parser)
    result = training.pretrain(model, corpus_ids, run, out_dir=out_dir)
    first = result["loss_curve"][0][1]
    last = result["loss_curve"][-1][1]
    print(
        f"pretrain: steps={run.steps} initial_loss={first:.4f} "
        f"final_loss={last:.4f} checkpoint={os.path.join(out_dir, 'final.ckpt')}"
    )
    return 0


def _load_model_from_checkpoint(parser):
    ckpt = _data_value(parser, "checkpoint")
    if not ckpt:
        raise ConfigError("missing key 'checkpoint' in section [data]")
    if not os.path.exists(ckpt):
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    config, step, params, _ = load_checkpoint(ckpt)
    return Seq2SeqModel(config, params=params), step


def cmd_finetune(args):
    parser = load_config(args.config, args.overrides, args.seed)
    run = run_config_from(parser)
    out_dir = args.out or "out"
    echo_config(parser, out_dir)
    model, _ = _load_model_from_checkpoint(parser)
    dataset = _data_value(parser, "dataset", default_asset_path("sentiment_train.tsv"))
    if not os.path.exists(dataset):
        raise FileNotFoundError(f"dataset not found: {dataset}")
    task = _data_value(parser, "task", "sentiment")
    rows = list(read_classification_tsv(dataset))
    val_path = _data_value(parser, "val_dataset")
    val_rows = list(read_classification_tsv(val_path)) if val_path else None
    result = training.finetune(
        model, rows, run, val_rows=val_rows, task=task, out_dir=out_dir
    )
    peak = result["peak"]
    print(
        f"finetune: steps={run.steps} peak_accuracy={peak['accuracy']:.4f} "
        f"at_step={peak['step']} checkpoint={os.path.join(out_dir, 'final.ckpt')}"
    )
    return 0


def cmd_eval(args):
    parser = load_config(args.config, args.overrides, args.seed)
    out_dir = args.out or "out"
    echo_config(parser, out_dir)
    model, _ = _load_model_from_checkpoint(parser)
    dataset = _data_value(parser, "dataset", default_asset_path("sentiment_train.tsv"))
    if not os.path.exists(dataset):
        raise FileNotFoundError(f"dataset not found: {dataset}")
    task = _data_value(parser, "task", "sentiment")
    rows = list(read_classification_tsv(dataset))
    metrics = training.evaluate(model, rows, task=task)
    line = " ".join(f"{k}={v:.4f}" for k, v in sorted(metrics.items()))
    print(f"eval: {line}")
    return 0


def cmd_benchmark(args):
    parser = load_config(args.config, args.overrides, args.seed)
    cfg = model_config_from(parser)
    out_dir = args.out or "out"
    echo_config(parser, out_dir)
    section = parser["bench"] if parser.has_section("bench") else {}
    variants = [
        v.strip()
        for v in section.get("variants", "light,transformer-baseline").split(",")
    ]
    grid = [int(v) for v in section.get("grid", "64,128,256,512,1024,2048,4096").split(",")]
    flops_only = _coerce(section.get("flops_only", "false"), bool)
    records, slopes = bench.scaling_report(
        cfg,
        variants,
        n_grid=grid,
        out_dir=out_dir,
        measure=not flops_only,
        batch=int(section.get("batch", "1")),
        reps=int(section.get("reps", "3")),
        warmup=int(section.get("warmup", "1")),
        target_len=int(section.get("target_len", "32")),
        seed=cfg.seed,
    )
    if not flops_only and all(not r.feasible for r in records):
        print("benchmark: every grid point was infeasible", file=sys.stderr)
        return EXIT_RUNTIME
    for variant, entry in slopes.items():
        parts = " ".join(f"{k}_slope={v:.3f}" for k, v in entry.items())
        print(f"benchmark: {variant} {parts}")
    print(f"benchmark: wrote {os.path.join(out_dir, 'scaling.csv')}")
    return 0


def cmd_gradcheck(args):
    seed = args.seed if args.seed is not None else 0
    results, ok = checks.run_all(seed=seed)
    width = max(len(name) for name, _ in results)
    for name, err in results:
        status = "ok" if err < checks.TOLERANCE else "FAIL"
        print(f"{name:<{width}}  max_rel_err={err:.3e}  {status}")
    if not ok:
        failing = [name for name, err in results if err >= checks.TOLERANCE]
        print(f"gradcheck failed: {', '.join(failing)}", file=sys.stderr)
        return EXIT_GRADCHECK
    return 0


def _word_corruption_preview(line, span_len, rate, rng):
    """Word-granularity corruption display: words stand in for tokens."""
    words = line.split()
    if len(words) < span_len:
        return line, ""
    ids = [i + BYTE_OFFSET for i in range(len(words))]
    ex = span_corrupt(ids, span_len=span_len, rate=rate, rng=rng)

    def render(seq):
        out = []
        for t in seq:
            if t == EOS_ID:
                out.append("[eos]")
            elif is_sentinel(t):
                out.append(f"[sentinel_{t - 2}]")
            else:
                out.append(words[t - BYTE_OFFSET])
        return " ".join(out)

    return render(ex.input_ids), render(ex.target_ids)


def cmd_corrupt(args):
    parser = load_config(args.config, args.overrides, args.seed) if args.config else None
    run = run_config_from(parser) if parser else RunConfig()
    seed = args.seed if args.seed is not None else run.seed
    rng = np.random.default_rng(seed)
    source = open(args.input, encoding="utf-8") if args.input else sys.stdin
    try:
        for line in source:
            line = line.rstrip("\n")
            if not line:
                continue
            if args.words:
                corrupted, target = _word_corruption_preview(
                    line, run.span_len, run.corruption_rate, rng
                )
            else:
                ids = tokenize(line)
                if len(ids) < run.span_len:
                    corrupted, target = line, ""
                else:
                    ex = span_corrupt(
                        ids, span_len=run.span_len, rate=run.corruption_rate, rng=rng
                    )
                    corrupted = detokenize(ex.input_ids)
                    target = detokenize(ex.target_ids)
            print(f"input:  {corrupted}")
            print(f"target: {target}")
    finally:
        if args.input:
            source.close()
    return 0


COMMANDS = {
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "benchmark": cmd_benchmark,
    "gradcheck": cmd_gradcheck,
    "corrupt": cmd_corrupt,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="convseq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="path to a .cfg file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument(
            "overrides", nargs="*", metavar="section.key=value",
            help="configuration overrides",
        )
        if name == "corrupt":
            p.add_argument("--input", default=None, help="text file (default stdin)")
            p.add_argument(
                "--words", action="store_true",
                help="corrupt at word granularity for display",
            )
    return parser


def _setup_logging():
    level = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("CONVSEQ_LOG", "info"), logging.INFO
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.command not in ("corrupt", "gradcheck") and args.config is None:
        print("error: --config is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, training.TrainingDiverged, training.NonFiniteGradient,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
