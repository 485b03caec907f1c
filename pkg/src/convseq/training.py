"""Optimizer, learning-rate schedules, training loops, and checkpoints."""

from __future__ import annotations

import csv
import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .data import (
    EOS_ID,
    PAD_ID,
    cast_classification,
    example_rng,
    parse_label,
    seq_cross_entropy,
    span_corrupt,
)
from .model import ModelConfig, Seq2SeqModel
from .tensor import Tensor, scale as t_scale, add as t_add

LR_GRID = (0.001, 0.0005, 0.0001)


class NonFiniteGradient(RuntimeError):
    """A gradient contained NaN/inf; the optimizer step was rejected."""


class TrainingDiverged(RuntimeError):
    """The training loss became non-finite."""


@dataclass
class RunConfig:
    """Hyperparameters for one pre-training or fine-tuning run."""

    steps: int = 100
    batch_size: int = 8
    sequence_length: int = 64
    lr_mode: str = "inverse-sqrt"
    lr_value: float = None
    warmup: int = 10000
    eval_every: int = 100
    checkpoint_every: int = 1000
    seed: int = 0
    span_len: int = 3
    corruption_rate: float = 0.15
    strict_lr_grid: bool = False

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.sequence_length < 1:
            raise ValueError("steps, batch_size, sequence_length must be positive")
        if self.lr_mode not in ("inverse-sqrt", "constant"):
            raise ValueError(f"unknown lr mode: {self.lr_mode!r}")
        if self.lr_mode == "constant":
            if self.lr_value is None:
                raise ValueError("constant lr mode requires lr_value")
            if self.strict_lr_grid and self.lr_value not in LR_GRID:
                raise ValueError(
                    f"lr_value {self.lr_value} outside the grid {LR_GRID}"
                )


def lr_at(step, mode, value=None, warmup=10000):
    """Learning rate at a 1-based step for the given schedule."""
    if step < 1:
        raise ValueError("step must be >= 1")
    if mode == "constant":
        return float(value)
    if mode == "inverse-sqrt":
        return 1.0 / math.sqrt(max(step, warmup))
    raise ValueError(f"unknown lr mode: {mode!r}")


class Adafactor:
    """Factored second-moment optimizer (no momentum, no weight decay).

    Matrices keep row/column mean accumulators whose outer product divided by
    the overall mean reconstructs the second-moment estimate (exactly, for
    rank-1 squared gradients); other shapes keep a full accumulator. Updates
    are RMS-clipped at ``clip_threshold``. Constants are documented defaults,
    not values inherited from any particular training recipe.
    """

    def __init__(self, decay_exponent=0.8, eps=1e-30, clip_threshold=1.0):
        self.decay_exponent = decay_exponent
        self.eps = eps
        self.clip_threshold = clip_threshold
        self.step_count = 0
        self.slots = {}

    def _slot(self, name, param):
        if name not in self.slots:
            if param.data.ndim == 2:
                r, c = param.data.shape
                self.slots[name] = {
                    "row": np.zeros(r, dtype=param.data.dtype),
                    "col": np.zeros(c, dtype=param.data.dtype),
                }
            else:
                self.slots[name] = {"full": np.zeros_like(param.data)}
        return self.slots[name]

    def step(self, params, lr):
        """Apply one update to every parameter that has a gradient."""
        self.step_count += 1
        t = self.step_count
        beta2 = 1.0 - t ** (-self.decay_exponent)
        for name, p in params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                self.step_count -= 1
                raise NonFiniteGradient(f"non-finite gradient for {name!r}")
            sq = g * g + self.eps
            slot = self._slot(name, p)
            if p.data.ndim == 2:
                slot["row"] = beta2 * slot["row"] + (1 - beta2) * sq.mean(axis=1)
                slot["col"] = beta2 * slot["col"] + (1 - beta2) * sq.mean(axis=0)
                mean = slot["row"].mean()
                vhat = np.outer(slot["row"], slot["col"]) / mean
            else:
                slot["full"] = beta2 * slot["full"] + (1 - beta2) * sq
                vhat = slot["full"]
            update = g / np.sqrt(vhat)
            rms = math.sqrt(float((update * update).mean()))
            if rms > self.clip_threshold:
                update *= self.clip_threshold / rms
            p.data -= lr * update

    def state_arrays(self):
        """Flat name -> array view of the optimizer state (for checkpoints)."""
        arrays = {}
        for name, slot in self.slots.items():
            for key, arr in slot.items():
                arrays[f"opt/{name}/{key}"] = arr
        return arrays

    def load_state_arrays(self, arrays, step_count):
        self.step_count = step_count
        self.slots = {}
        for full_name, arr in arrays.items():
            name, key = full_name[len("opt/"):].rsplit("/", 1)
            self.slots.setdefault(name, {})[key] = arr.copy()


# -- checkpoint container ---------------------------------------------------

_MAGIC = b"CONVSEQ1"


def save_checkpoint(path, params, config, step, optimizer=None):
    """Self-describing container: JSON header + raw little-endian arrays."""
    arrays = [(name, p.data) for name, p in params.items()]
    opt_step = 0
    if optimizer is not None:
        arrays.extend(sorted(optimizer.state_arrays().items()))
        opt_step = optimizer.step_count
    header = {
        "config": config.to_dict(),
        "step": step,
        "optimizer_step": opt_step,
        "arrays": [
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": np.dtype(arr.dtype).newbyteorder("<").str,
            }
            for name, arr in arrays
        ],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path):
    """Returns (config, step, params, optimizer-or-None)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a convseq checkpoint")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        params = {}
        opt_arrays = {}
        for spec in header["arrays"]:
            dtype = np.dtype(spec["dtype"])
            count = int(np.prod(spec["shape"])) if spec["shape"] else 1
            arr = np.frombuffer(fh.read(count * dtype.itemsize), dtype=dtype)
            arr = arr.reshape(spec["shape"]).astype(dtype.newbyteorder("="))
            name = spec["name"]
            if name.startswith("opt/"):
                opt_arrays[name] = arr
            else:
                params[name] = Tensor(arr, requires_grad=True, name=name)
    config = ModelConfig.from_dict(header["config"])
    optimizer = None
    if opt_arrays:
        optimizer = Adafactor()
        optimizer.load_state_arrays(opt_arrays, header.get("optimizer_step", 0))
    return config, header["step"], params, optimizer


# -- metric logging ---------------------------------------------------------


class MetricLog:
    """Append-only delimiter-separated log: step, split, metric, value."""

    COLUMNS = ("step", "split", "metric", "value")

    def __init__(self, path):
        self.path = path
        new = not os.path.exists(path)
        self._fh = open(path, "a", newline="")
        self._writer = csv.writer(self._fh)
        if new:
            self._writer.writerow(self.COLUMNS)

    def record(self, step, split, metric, value):
        self._writer.writerow([step, split, metric, f"{value:.10g}"])
        self._fh.flush()

    def close(self):
        self._fh.close()


# -- pre-training -----------------------------------------------------------


def _mean_loss(losses):
    total = losses[0]
    for l in losses[1:]:
        total = t_add(total, l)
    return t_scale(total, 1.0 / len(losses))


def make_denoising_batch(corpus_ids, run, step):
    """Deterministic batch of span-corruption examples for one step."""
    n = len(corpus_ids)
    window = run.sequence_length
    if n < window + 1:
        raise ValueError(f"corpus too small: {n} tokens < window {window}")
    batch = []
    for item in range(run.batch_size):
        rng = example_rng(run.seed, step * run.batch_size + item)
        start = int(rng.integers(0, n - window + 1))
        ex = span_corrupt(
            corpus_ids[start : start + window],
            span_len=run.span_len,
            rate=run.corruption_rate,
            rng=rng,
        )
        batch.append(ex)
    return batch


def pretrain(model, corpus_ids, run, out_dir=None):
    """Span-denoising pre-training; returns the loss curve and final step.

    Deterministic given (config, run seed): batches, corruption, and updates
    are all driven by seeded generators. On a non-finite loss the last good
    checkpoint is kept and TrainingDiverged is raised.
    """
    optimizer = Adafactor()
    log = MetricLog(os.path.join(out_dir, "pretrain_log.csv")) if out_dir else None
    curve = []
    last_good = None
    try:
        for step in range(1, run.steps + 1):
            batch = make_denoising_batch(corpus_ids, run, step)
            model.zero_grad()
            losses = [
                seq_cross_entropy(model.forward(ex.input_ids, ex.target_ids), ex.target_ids)
                for ex in batch
            ]
            loss = _mean_loss(losses)
            value = float(loss.data)
            if not math.isfinite(value):
                if out_dir and last_good is not None:
                    pass  # last good checkpoint already on disk
                raise TrainingDiverged(f"loss became non-finite at step {step}")
            loss.backward(parameters=model.parameters())
            lr = lr_at(step, run.lr_mode, run.lr_value, run.warmup)
            optimizer.step(model.params, lr)
            curve.append((step, value))
            if log and (step % run.eval_every == 0 or step == 1):
                log.record(step, "train", "loss", value)
            if out_dir and run.checkpoint_every and step % run.checkpoint_every == 0:
                last_good = os.path.join(out_dir, f"step_{step}.ckpt")
                save_checkpoint(last_good, model.params, model.config, step, optimizer)
        if out_dir:
            final = os.path.join(out_dir, "final.ckpt")
            save_checkpoint(final, model.params, model.config, run.steps, optimizer)
    finally:
        if log:
            log.close()
    return {"loss_curve": curve, "final_step": run.steps, "optimizer": optimizer}


# -- fine-tuning and evaluation ---------------------------------------------


def evaluate(model, rows, task="sentiment", positive_label=None):
    """Greedy-decode accuracy and binary F1 over (text, label) rows.

    A generation that fails to parse as a task label counts as incorrect
    (and as a non-positive prediction for F1).
    """
    from .data import TASKS

    if positive_label is None:
        positive_label = TASKS[task].get("positive")
    tp = fp = fn = correct = 0
    total = 0
    for text, label in rows:
        source, _ = cast_classification(task, text, label)
        pred = parse_label(task, model.greedy_decode(source))
        total += 1
        if pred == label:
            correct += 1
        if positive_label is not None:
            if pred == positive_label and label == positive_label:
                tp += 1
            elif pred == positive_label:
                fp += 1
            elif label == positive_label:
                fn += 1
    metrics = {"accuracy": correct / total if total else 0.0}
    if positive_label is not None:
        denom = 2 * tp + fp + fn
        metrics["f1"] = 2 * tp / denom if denom else 0.0
    return metrics


def finetune(model, train_rows, run, val_rows=None, task="sentiment", out_dir=None):
    """Constant-lr fine-tuning tracking the best-so-far validation metric."""
    train_rows = list(train_rows)
    if val_rows is None:
        val_rows = train_rows
    else:
        val_rows = list(val_rows)
    optimizer = Adafactor()
    log = MetricLog(os.path.join(out_dir, "finetune_log.csv")) if out_dir else None
    rng = np.random.default_rng(np.random.SeedSequence([run.seed, 0xF1]))
    peak = {"accuracy": 0.0, "step": 0}
    history = []
    try:
        for step in range(1, run.steps + 1):
            idx = rng.integers(0, len(train_rows), size=run.batch_size)
            model.zero_grad()
            losses = []
            for i in idx:
                text, label = train_rows[int(i)]
                source, target = cast_classification(task, text, label)
                logits = model.forward(source, target)
                losses.append(seq_cross_entropy(logits, target))
            loss = _mean_loss(losses)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(f"loss became non-finite at step {step}")
            loss.backward(parameters=model.parameters())
            lr = lr_at(step, run.lr_mode, run.lr_value, run.warmup)
            optimizer.step(model.params, lr)
            if log and (step % run.eval_every == 0 or step == 1):
                log.record(step, "train", "loss", value)
            if step % run.eval_every == 0 or step == run.steps:
                metrics = evaluate(model, val_rows, task=task)
                history.append((step, metrics))
                if log:
                    for k, v in metrics.items():
                        log.record(step, "val", k, v)
                if metrics["accuracy"] >= peak["accuracy"]:
                    peak = {"step": step, **metrics}
        if out_dir:
            save_checkpoint(
                os.path.join(out_dir, "final.ckpt"),
                model.params, model.config, run.steps, optimizer,
            )
    finally:
        if log:
            log.close()
    return {"peak": peak, "history": history, "optimizer": optimizer}
