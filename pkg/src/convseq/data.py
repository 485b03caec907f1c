"""Tokenization, span corruption, task casting, and the training loss.

The vocabulary is byte-level: ids 0 and 1 are pad and end-of-sequence, ids
2..101 are the hundred sentinel tokens, and the 256 byte values follow. Byte
tokenization is lossless for arbitrary UTF-8 text; special ids are rendered
as bracketed placeholders on the way back out, never as bytes.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _make


PAD_ID = 0
EOS_ID = 1
NUM_SENTINELS = 100
SENTINEL_BASE = 2
BYTE_OFFSET = SENTINEL_BASE + NUM_SENTINELS  # 102
VOCAB_SIZE = BYTE_OFFSET + 256  # 358


class PlacementError(RuntimeError):
    """Raised when non-overlapping span placement fails after bounded retries."""


def sentinel_id(index):
    if not 0 <= index < NUM_SENTINELS:
        raise ValueError(f"sentinel index out of range: {index}")
    return SENTINEL_BASE + index


def is_sentinel(token_id):
    return SENTINEL_BASE <= token_id < BYTE_OFFSET


def tokenize(text):
    """UTF-8 bytes shifted past the special-id block. Never emits specials."""
    return [b + BYTE_OFFSET for b in text.encode("utf-8")]


def detokenize(ids):
    """Inverse of tokenize; specials render as bracketed placeholders."""
    out = []
    pending = bytearray()

    def flush():
        if pending:
            out.append(pending.decode("utf-8", errors="replace"))
            pending.clear()

    for t in ids:
        if t >= BYTE_OFFSET:
            pending.append(t - BYTE_OFFSET)
        else:
            flush()
            if t == PAD_ID:
                out.append("[pad]")
            elif t == EOS_ID:
                out.append("[eos]")
            else:
                out.append(f"[sentinel_{t - SENTINEL_BASE}]")
    flush()
    return "".join(out)


@dataclass
class SpanCorruptionExample:
    """Corrupted input plus sentinel-delimited target for one sequence."""

    input_ids: list
    target_ids: list
    original_len: int

    def reconstruct(self):
        """Splice target spans back in at the sentinels; inverse of corruption."""
        spans = {}
        current = None
        for t in self.target_ids:
            if t == EOS_ID:
                break
            if is_sentinel(t):
                current = t
                spans[current] = []
            elif current is not None:
                spans[current].append(t)
        out = []
        for t in self.input_ids:
            if is_sentinel(t):
                out.extend(spans.get(t, []))
            else:
                out.append(t)
        return out


def span_corrupt(tokens, span_len=3, rate=0.15, rng=None, max_retries=1000):
    """Mask non-overlapping spans and build the sentinel-delimited target.

    Roughly ``rate * len(tokens)`` tokens are covered by spans of exact
    length ``span_len``; each span is replaced by the next unused sentinel in
    the input, and the target concatenates (sentinel, span tokens) groups
    followed by end-of-sequence. Deterministic given the generator state.
    """
    tokens = list(tokens)
    n = len(tokens)
    if n < span_len:
        raise ValueError(f"sequence length {n} shorter than span length {span_len}")
    if not 0 <= rate < 1:
        raise ValueError(f"corruption rate must be in [0, 1), got {rate}")
    if rng is None:
        rng = np.random.default_rng()

    num_spans = int(round(rate * n / span_len))
    num_spans = min(num_spans, NUM_SENTINELS)
    if num_spans == 0:
        return SpanCorruptionExample(tokens, [EOS_ID], n)

    # Starts are sampled without replacement; spans may not overlap or abut,
    # so consecutive starts must differ by more than span_len.
    limit = n - span_len
    starts = None
    for _ in range(max_retries):
        candidate = np.sort(rng.choice(limit + 1, size=num_spans, replace=False))
        if np.all(np.diff(candidate) > span_len):
            starts = candidate.tolist()
            break
    if starts is None:
        raise PlacementError(
            f"could not place {num_spans} non-overlapping spans of length "
            f"{span_len} in {n} tokens after {max_retries} attempts"
        )

    input_ids = []
    target_ids = []
    cursor = 0
    for idx, start in enumerate(starts):
        sent = sentinel_id(idx)
        input_ids.extend(tokens[cursor:start])
        input_ids.append(sent)
        target_ids.append(sent)
        target_ids.extend(tokens[start : start + span_len])
        cursor = start + span_len
    input_ids.extend(tokens[cursor:])
    target_ids.append(EOS_ID)
    return SpanCorruptionExample(input_ids, target_ids, n)


# -- classification-as-generation casting -----------------------------------

TASKS = {
    "sentiment": {
        "prefix": "sentiment: ",
        "labels": ["negative", "positive"],
        "positive": "positive",
    },
    "topic": {
        "prefix": "topic: ",
        "labels": ["world", "sports", "business", "science"],
        "positive": None,
    },
}


def cast_classification(task_name, text, label):
    """(source_ids, target_ids) for a labeled classification example."""
    try:
        task = TASKS[task_name]
    except KeyError:
        raise ValueError(f"unknown task: {task_name!r}") from None
    if label not in task["labels"]:
        raise ValueError(
            f"unknown label {label!r} for task {task_name!r}; "
            f"expected one of {task['labels']}"
        )
    source = tokenize(task["prefix"] + text)
    target = tokenize(label) + [EOS_ID]
    return source, target


def parse_label(task_name, generated_ids):
    """Recover a label string from generated ids; None when unparseable."""
    task = TASKS[task_name]
    text = detokenize(
        [t for t in generated_ids if t not in (PAD_ID, EOS_ID)]
    ).strip()
    return text if text in task["labels"] else None


# -- training loss ----------------------------------------------------------


def seq_cross_entropy(logits, targets, pad_mask=None):
    """Mean token-wise cross-entropy over non-pad positions.

    logits is [m, vocab]; targets is a length-m id sequence. Padding
    positions contribute zero and are excluded from the mean.
    """
    targets = np.asarray(targets, dtype=np.int64)
    m, vocab = logits.shape
    if targets.shape != (m,):
        raise ValueError(f"targets shape {targets.shape} != ({m},)")
    if targets.size and targets.max() >= vocab:
        raise ValueError(f"target id {targets.max()} >= vocab size {vocab}")
    if pad_mask is None:
        pad_mask = targets != PAD_ID
    pad_mask = np.asarray(pad_mask, dtype=bool)
    count = int(pad_mask.sum())
    if count == 0:
        raise ValueError("all-pad target: mean cross-entropy undefined")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted[np.arange(m), targets] - log_z
    data = np.asarray(-(log_probs * pad_mask).sum() / count)

    def backward(grad):
        if logits.requires_grad:
            probs = np.exp(shifted - log_z[:, None])
            probs[np.arange(m), targets] -= 1.0
            probs *= pad_mask[:, None] / count
            logits.accumulate_grad(float(grad) * probs)

    return _make(data, (logits,), backward)


# -- streaming readers ------------------------------------------------------


def read_corpus_lines(path):
    """Yield non-empty lines from a newline-delimited UTF-8 text file."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                yield line


def read_classification_tsv(path):
    """Yield (text, label) rows from a two-column tab-separated file.

    Fields containing tabs, quotes, or newlines follow standard csv quoting
    with double quotes.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh, delimiter="\t"):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"expected 2 columns, got {len(row)}: {row!r}")
            yield row[0], row[1]


def write_classification_tsv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t")
        for text, label in rows:
            writer.writerow([text, label])


def example_rng(base_seed, example_index):
    """Per-example generator derived from (base seed, index)."""
    return np.random.default_rng(np.random.SeedSequence([base_seed, example_index]))
