"""Analytic FLOPs cost model and wall-clock scaling harness.

FLOPs are 2 x multiply-accumulate counts over tensor contractions
(softmax/normalization arithmetic excluded). The cost model covers the
architecture-specific computation of a forward pass over both stacks at
sequence length n: token-mixing sublayers (conv block projections + conv, or
self-attention), feed-forward sublayers, and the output projection. The
encoder-decoder attention is identical across all variants and is excluded
from the default totals; pass ``include_cross_attention=True`` to add it.

Wall-clock throughput times full forward+backward training steps on
synthetic batches (fixed decode budget, source length varied), sequentially;
concurrent load on the machine invalidates the numbers.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from .data import BYTE_OFFSET, EOS_ID, seq_cross_entropy
from .model import ModelConfig, Seq2SeqModel

DEFAULT_GRID = (64, 128, 256, 512, 1024, 2048, 4096)


class InfeasiblePoint(RuntimeError):
    """A (variant, n) grid point does not fit in the memory budget."""


@dataclass
class BenchmarkRecord:
    variant: str
    n: int
    flops: int
    examples_per_sec: float  # None when unmeasured or infeasible
    batch: int
    reps: int
    feasible: bool


# -- closed-form per-sublayer formulas --------------------------------------


def projection_flops(n, d_in, d_out):
    return 2 * n * d_in * d_out


def conv_layer_flops(n, d, k):
    """Depthwise/lightweight/dynamic conv application: 2 * n * d * k."""
    return 2 * n * d * k


def dynamic_generator_flops(n, d, tying, k):
    return 2 * n * d * tying * k


def self_attention_flops(n, d):
    return 8 * n * d * d + 4 * n * n * d


def cross_attention_flops(nq, nk, d):
    return 4 * nq * d * d + 4 * nk * d * d + 4 * nq * nk * d


def ffn_flops(n, d, d_ff):
    return 4 * n * d * d_ff


def conv_block_flops(config, n, width):
    d = config.d_model
    total = 3 * projection_flops(n, d, d) + conv_layer_flops(n, d, width)
    if config.conv_variant == "dynamic":
        total += dynamic_generator_flops(n, d, config.tying, width)
    return total


def count_flops(config, n, include_cross_attention=False):
    """Analytic forward FLOPs for the variant at source/target length n."""
    if n < 1:
        raise ValueError("sequence length must be >= 1")
    if config.conv_variant not in ("light", "dynamic", "dilated", "transformer-baseline"):
        raise ValueError(f"unknown variant: {config.conv_variant!r}")
    d = config.d_model
    total = 0
    for side in ("enc", "dec"):
        for i in range(config.num_layers):
            if config.is_conv:
                total += conv_block_flops(config, n, config.kernel_widths[i])
            else:
                total += self_attention_flops(n, d)
            total += ffn_flops(n, d, config.d_ff)
            if side == "dec" and include_cross_attention:
                total += cross_attention_flops(n, n, d)
    if config.is_conv and config.encoder_cross_attention:
        total += self_attention_flops(n, d)
    total += projection_flops(n, d, config.vocab_size)  # output logits
    return total


def fit_loglog_slope(ns, values):
    """Least-squares slope of log(value) against log(n)."""
    ns = np.asarray(ns, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(ns) < 2:
        raise ValueError("need at least two points to fit a slope")
    return float(np.polyfit(np.log(ns), np.log(values), 1)[0])


# -- wall-clock harness -----------------------------------------------------


def _synthetic_example(rng, n, target_len):
    src = rng.integers(BYTE_OFFSET, BYTE_OFFSET + 256, size=n).tolist()
    tgt = rng.integers(BYTE_OFFSET, BYTE_OFFSET + 256, size=target_len).tolist()
    tgt[-1] = EOS_ID
    return src, tgt


def estimate_attention_bytes(config, n, itemsize=4):
    """Rough peak-memory bound for the attention score tensors on the tape."""
    if config.is_conv:
        per_layer = 0
    else:
        per_layer = 8 * config.num_heads * n * n * itemsize
    return per_layer * 2 * config.num_layers


def measure_throughput(
    config,
    n,
    batch=1,
    reps=5,
    warmup=3,
    target_len=32,
    seed=0,
    memory_budget=4_000_000_000,
):
    """Median examples/sec over timed forward+backward steps.

    Raises InfeasiblePoint when the attention footprint exceeds the memory
    budget or allocation fails outright.
    """
    if estimate_attention_bytes(config, n) > memory_budget:
        raise InfeasiblePoint(
            f"{config.conv_variant} at n={n} exceeds the memory budget"
        )
    config = replace(config, max_target_len=max(config.max_target_len, target_len))
    rng = np.random.default_rng(seed)
    try:
        model = Seq2SeqModel(config, dtype=np.float32)
        examples = [_synthetic_example(rng, n, target_len) for _ in range(batch)]

        def step():
            model.zero_grad()
            for src, tgt in examples:
                logits = model.forward(src, tgt)
                loss = seq_cross_entropy(logits, tgt)
                loss.backward()

        for _ in range(warmup):
            step()
        timings = []
        for _ in range(reps):
            t0 = time.perf_counter()
            step()
            timings.append(time.perf_counter() - t0)
    except MemoryError as exc:
        raise InfeasiblePoint(
            f"{config.conv_variant} at n={n} ran out of memory"
        ) from exc
    median = float(np.median(timings))
    return batch / median


# -- the scaling report -----------------------------------------------------

CSV_COLUMNS = ("variant", "n", "flops", "examples_per_sec", "batch", "reps", "feasible")


def scaling_report(
    base_config,
    variants,
    n_grid=DEFAULT_GRID,
    out_dir=None,
    measure=True,
    batch=1,
    reps=3,
    warmup=1,
    target_len=32,
    seed=0,
):
    """FLOPs and (optionally) throughput over a sequence-length grid.

    Produces one BenchmarkRecord per (variant, n). When ``out_dir`` is given,
    writes scaling.csv, slopes.csv, and log-log figures flops.svg plus (when
    measuring) speed.svg. Returns (records, slopes).
    """
    if not variants:
        raise ValueError("variant list is empty")
    if not n_grid:
        raise ValueError("sequence-length grid is empty")
    records = []
    for variant in variants:
        cfg = replace(base_config, conv_variant=variant, kernel_widths=None)
        for n in n_grid:
            flops = count_flops(cfg, n)
            eps = None
            feasible = True
            if measure:
                try:
                    eps = measure_throughput(
                        cfg, n, batch=batch, reps=reps, warmup=warmup,
                        target_len=target_len, seed=seed,
                    )
                except InfeasiblePoint:
                    feasible = False
            records.append(
                BenchmarkRecord(variant, n, flops, eps, batch, reps, feasible)
            )
    slopes = _fit_slopes(records, variants)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_csv(os.path.join(out_dir, "scaling.csv"), records)
        _write_slopes(os.path.join(out_dir, "slopes.csv"), slopes)
        _plot(records, variants, out_dir, measure)
    return records, slopes


def _fit_slopes(records, variants):
    slopes = {}
    for variant in variants:
        rows = [r for r in records if r.variant == variant]
        ns = [r.n for r in rows]
        slopes[variant] = {"flops": fit_loglog_slope(ns, [r.flops for r in rows])}
        timed = [r for r in rows if r.feasible and r.examples_per_sec]
        if len(timed) >= 2:
            # per-example step time = 1 / examples_per_sec
            slopes[variant]["time"] = fit_loglog_slope(
                [r.n for r in timed], [1.0 / r.examples_per_sec for r in timed]
            )
    return slopes


def _write_csv(path, records):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([
                r.variant,
                r.n,
                r.flops,
                "" if r.examples_per_sec is None else f"{r.examples_per_sec:.6g}",
                r.batch,
                r.reps,
                int(r.feasible),
            ])


def _write_slopes(path, slopes):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "metric", "loglog_slope"])
        for variant, entry in slopes.items():
            for metric, slope in entry.items():
                writer.writerow([variant, metric, f"{slope:.6g}"])


def _plot(records, variants, out_dir, measure):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    def series(selector):
        fig, ax = plt.subplots(figsize=(5.5, 4))
        for variant in variants:
            rows = [r for r in records if r.variant == variant]
            pts = [(r.n, selector(r)) for r in rows if selector(r)]
            if pts:
                ax.loglog(*zip(*pts), marker="o", label=variant)
        ax.set_xlabel("sequence length")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
        return fig, ax

    fig, ax = series(lambda r: r.flops)
    ax.set_ylabel("analytic FLOPs")
    ax.set_title("FLOPs vs sequence length")
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "flops.svg"))
    plt.close(fig)

    if measure:
        fig, ax = series(lambda r: r.examples_per_sec)
        ax.set_ylabel("examples / second")
        ax.set_title("Processing speed vs sequence length")
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, "speed.svg"))
        plt.close(fig)
