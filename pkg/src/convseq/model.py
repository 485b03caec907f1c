"""Encoder-decoder sequence models built from conv blocks or self-attention.

Encoder layers are {conv block, FFN}; decoder layers are {causal conv block,
encoder-decoder attention, FFN}. Every sublayer is wrapped as
LayerNorm(sublayer(X)) + X. The transformer baseline swaps the conv blocks
for multi-head self-attention (bidirectional in the encoder, causal in the
decoder) and adds fixed sinusoidal position signals; conv variants carry no
positional signal at all.

Parameter naming (used in checkpoints):
    embedding                          [vocab, d_model]
    enc.{i}.mix.*                      conv block or self-attention weights
    enc.{i}.mix.ln.{gamma,beta}        wrapping layer norm
    enc.{i}.ffn.{w1,b1,w2,b2}         feed-forward
    enc.{i}.ffn.ln.{gamma,beta}
    enc.cross.*                        optional single encoder attention layer
    dec.{i}.mix.*                      causal conv block or self-attention
    dec.{i}.xattn.*                    encoder-decoder attention
    dec.{i}.ffn.*
Conv block weights are mix.{w_in,w_gate,w_out} plus mix.kernel (tied [H,k]
rows for light/dilated, a [d, H*k] generator for dynamic, or a per-channel
[d,k] filter for the plain depthwise case). Attention weights are
{q,k,v}{head} per head plus a shared out projection.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import convs
from .data import EOS_ID, PAD_ID, VOCAB_SIZE
from .tensor import (
    Tensor,
    ShapeError,
    _make,
    add,
    add_const,
    concat,
    embed,
    layer_norm,
    matmul,
    mul,
    relu,
    scale,
    sigmoid,
    softmax,
)

CONV_VARIANTS = ("light", "dynamic", "dilated")
ALL_VARIANTS = CONV_VARIANTS + ("transformer-baseline",)

NEG_INF = -1e9


@dataclass
class ModelConfig:
    """Full architecture description; parameter shapes are a pure function of it."""

    num_layers: int = 2
    d_model: int = 8
    d_ff: int = 16
    num_heads: int = 2
    vocab_size: int = VOCAB_SIZE
    conv_variant: str = "light"
    tying: int = 2
    kernel_widths: list = None
    dilation: int = 1
    encoder_cross_attention: bool = False
    max_target_len: int = 64
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.conv_variant not in ALL_VARIANTS:
            raise ValueError(f"unknown conv_variant: {self.conv_variant!r}")
        if self.d_model % self.num_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} not divisible by num_heads={self.num_heads}"
            )
        if self.is_conv and self.d_model % self.tying != 0:
            raise ValueError(
                f"tying factor H={self.tying} does not divide d_model={self.d_model}"
            )
        if self.kernel_widths is None:
            if self.is_conv:
                sched = convs.make_layer_schedule(
                    self.conv_variant, self.num_layers, self.dilation
                )
                self.kernel_widths = [e.width for e in sched]
            else:
                self.kernel_widths = []
        if self.is_conv and len(self.kernel_widths) != self.num_layers:
            raise ValueError(
                f"kernel schedule has {len(self.kernel_widths)} entries "
                f"for {self.num_layers} layers"
            )

    @property
    def is_conv(self):
        return self.conv_variant in CONV_VARIANTS

    @property
    def d_head(self):
        return self.d_model // self.num_heads

    def to_dict(self):
        return {
            "num_layers": self.num_layers,
            "d_model": self.d_model,
            "d_ff": self.d_ff,
            "num_heads": self.num_heads,
            "vocab_size": self.vocab_size,
            "conv_variant": self.conv_variant,
            "tying": self.tying,
            "kernel_widths": list(self.kernel_widths),
            "dilation": self.dilation,
            "encoder_cross_attention": self.encoder_cross_attention,
            "max_target_len": self.max_target_len,
            "dropout_rate": self.dropout_rate,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def enable_encoder_cross_attention(config):
    """Config with a single attention layer added at the top of the encoder."""
    if not config.is_conv:
        warnings.warn(
            "encoder cross-attention is a no-op for the transformer baseline",
            stacklevel=2,
        )
        return config
    return replace(config, encoder_cross_attention=True)


# -- parameter shapes (pure function of the config) -------------------------


def _attention_shapes(prefix, cfg):
    shapes = {}
    for h in range(cfg.num_heads):
        shapes[f"{prefix}.q{h}"] = (cfg.d_model, cfg.d_head)
        shapes[f"{prefix}.k{h}"] = (cfg.d_model, cfg.d_head)
        shapes[f"{prefix}.v{h}"] = (cfg.d_model, cfg.d_head)
    shapes[f"{prefix}.out"] = (cfg.d_model, cfg.d_model)
    return shapes


def _conv_block_shapes(prefix, cfg, width):
    d = cfg.d_model
    shapes = {
        f"{prefix}.w_in": (d, d),
        f"{prefix}.w_gate": (d, d),
        f"{prefix}.w_out": (d, d),
    }
    if cfg.conv_variant == "dynamic":
        shapes[f"{prefix}.kernel"] = (d, cfg.tying * width)
    else:
        shapes[f"{prefix}.kernel"] = (cfg.tying, width)
    return shapes


def _ln_shapes(prefix, cfg):
    return {f"{prefix}.gamma": (cfg.d_model,), f"{prefix}.beta": (cfg.d_model,)}


def param_shapes(config):
    """Ordered mapping of parameter name -> shape. Allocation-free."""
    cfg = config
    shapes = {"embedding": (cfg.vocab_size, cfg.d_model)}

    def add_stack(side):
        for i in range(cfg.num_layers):
            mix = f"{side}.{i}.mix"
            if cfg.is_conv:
                shapes.update(_conv_block_shapes(mix, cfg, cfg.kernel_widths[i]))
            else:
                shapes.update(_attention_shapes(mix, cfg))
            shapes.update(_ln_shapes(f"{mix}.ln", cfg))
            if side == "dec":
                shapes.update(_attention_shapes(f"dec.{i}.xattn", cfg))
                shapes.update(_ln_shapes(f"dec.{i}.xattn.ln", cfg))
            ffn = f"{side}.{i}.ffn"
            shapes[f"{ffn}.w1"] = (cfg.d_model, cfg.d_ff)
            shapes[f"{ffn}.b1"] = (cfg.d_ff,)
            shapes[f"{ffn}.w2"] = (cfg.d_ff, cfg.d_model)
            shapes[f"{ffn}.b2"] = (cfg.d_model,)
            shapes.update(_ln_shapes(f"{ffn}.ln", cfg))

    add_stack("enc")
    if cfg.is_conv and cfg.encoder_cross_attention:
        shapes.update(_attention_shapes("enc.cross", cfg))
        shapes.update(_ln_shapes("enc.cross.ln", cfg))
    add_stack("dec")
    return shapes


def parameter_census(config):
    """Per-parameter sizes and total count; pure arithmetic, no allocation."""
    shapes = param_shapes(config)
    sizes = {name: int(np.prod(shape)) for name, shape in shapes.items()}
    return {"per_parameter": sizes, "total": sum(sizes.values())}


def init_params(config, rng=None, dtype=np.float64):
    """Fan-in-scaled uniform init; kernel logits start at zero so softmax
    normalization begins as a uniform moving average."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".gamma"):
            values = np.ones(shape)
        elif name.endswith((".beta", ".b1", ".b2")):
            values = np.zeros(shape)
        elif name.endswith(".kernel"):
            values = np.zeros(shape)
        elif name == "embedding":
            values = rng.normal(0.0, 1.0 / math.sqrt(config.d_model), size=shape)
        else:
            bound = 1.0 / math.sqrt(shape[0])
            values = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(values, requires_grad=True, name=name, dtype=dtype)
    return params


# -- sublayers --------------------------------------------------------------


def sublayer_wrap(sub, x, gamma, beta):
    """LayerNorm(sub(x)) + x with a shape-preservation contract on sub."""
    y = sub(x)
    if y.shape != x.shape:
        raise ShapeError(
            f"sublayer changed shape {x.shape} -> {y.shape}; wrap requires "
            "shape preservation"
        )
    return add(layer_norm(y, gamma, beta), x)


def glu_conv_block(x, p, prefix, variant, padding, tying, width, dilation=1):
    """Gated projections, the conv variant, then the output projection."""
    gate = sigmoid(matmul(x, p[f"{prefix}.w_gate"]))
    x1 = mul(matmul(x, p[f"{prefix}.w_in"]), gate)
    kernel = p[f"{prefix}.kernel"]
    if variant == "dynamic":
        gen = convs.DynamicKernelGenerator(kernel, tying, width, dilation)
        x2 = convs.dynamic_conv(x1, gen, padding)
    else:
        x2 = convs.lightweight_conv(x1, convs.TiedKernel(kernel, dilation), padding)
    return matmul(x2, p[f"{prefix}.w_out"])


def ffn(x, p, prefix):
    hidden = relu(add(matmul(x, p[f"{prefix}.w1"]), p[f"{prefix}.b1"]))
    return add(matmul(hidden, p[f"{prefix}.w2"]), p[f"{prefix}.b2"])


def multi_head_attention(q, k, v, p, prefix, num_heads, mask=None):
    """softmax(QK^T / sqrt(d_head) + mask) V per head, concatenated, projected.

    q is [nq, d]; k and v are the key/value source sequences and must have
    matching lengths; mask is an additive [nq, nk] array (0 or -inf).
    """
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"key/value length mismatch: {k.shape} vs {v.shape}")
    d_head = p[f"{prefix}.q0"].shape[1]
    heads = []
    for h in range(num_heads):
        qh = matmul(q, p[f"{prefix}.q{h}"])
        kh = matmul(k, p[f"{prefix}.k{h}"])
        vh = matmul(v, p[f"{prefix}.v{h}"])
        scores = scale(matmul(qh, kh, transpose_b=True), 1.0 / math.sqrt(d_head))
        if mask is not None:
            scores = add_const(scores, mask)
        heads.append(matmul(softmax(scores, axis=1), vh))
    return matmul(concat(heads, axis=1), p[f"{prefix}.out"])


def causal_mask(n, dtype=np.float64):
    mask = np.zeros((n, n), dtype=dtype)
    mask[np.triu_indices(n, k=1)] = NEG_INF
    return mask


def sinusoidal_positions(n, d, dtype=np.float64):
    """Fixed sin/cos position table (non-trainable)."""
    pos = np.arange(n)[:, None].astype(dtype)
    i = np.arange(d // 2)[None, :].astype(dtype)
    angles = pos / np.power(10000.0, 2.0 * i / d)
    table = np.zeros((n, d), dtype=dtype)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


def _dropout(x, rate, rng):
    if rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def backward(grad):
        if x.requires_grad:
            x.accumulate_grad(grad * keep)

    return _make(x.data * keep, (x,), backward)


# -- the model --------------------------------------------------------------


class Seq2SeqModel:
    """Teacher-forced encoder-decoder over token ids."""

    def __init__(self, config, params=None, dtype=np.float64):
        self.config = config
        self.dtype = dtype
        if params is None:
            params = init_params(config, dtype=dtype)
        self.params = params
        self._dropout_rng = np.random.default_rng(
            np.random.SeedSequence([config.seed, 0xD0])
        )
        self.training = False

    def parameters(self):
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def encoder_attention_sublayer_count(self):
        """Number of attention sublayers in the encoder (structural)."""
        cfg = self.config
        if not cfg.is_conv:
            return cfg.num_layers
        return 1 if cfg.encoder_cross_attention else 0

    def _maybe_dropout(self, x):
        if self.training and self.config.dropout_rate > 0:
            return _dropout(x, self.config.dropout_rate, self._dropout_rng)
        return x

    def _mix_sublayer(self, side, i, x, mask):
        cfg = self.config
        p = self.params
        prefix = f"{side}.{i}.mix"
        if cfg.is_conv:
            padding = "causal-left" if side == "dec" else "same-zero"
            return glu_conv_block(
                x, p, prefix, cfg.conv_variant, padding,
                cfg.tying, cfg.kernel_widths[i], cfg.dilation,
            )
        return multi_head_attention(x, x, x, p, prefix, cfg.num_heads, mask=mask)

    def encode(self, src_ids):
        """Encoder stack output for a source id sequence, shape [n, d_model]."""
        cfg = self.config
        p = self.params
        src_ids = list(src_ids)
        if len(src_ids) == 0:
            raise ValueError("empty source sequence")
        x = embed(p["embedding"], src_ids)
        if not cfg.is_conv:
            x = add_const(x, sinusoidal_positions(len(src_ids), cfg.d_model, self.dtype))
        for i in range(cfg.num_layers):
            x = sublayer_wrap(
                lambda t, i=i: self._maybe_dropout(self._mix_sublayer("enc", i, t, None)),
                x, p[f"enc.{i}.mix.ln.gamma"], p[f"enc.{i}.mix.ln.beta"],
            )
            x = sublayer_wrap(
                lambda t, i=i: self._maybe_dropout(ffn(t, p, f"enc.{i}.ffn")),
                x, p[f"enc.{i}.ffn.ln.gamma"], p[f"enc.{i}.ffn.ln.beta"],
            )
        if cfg.is_conv and cfg.encoder_cross_attention:
            x = sublayer_wrap(
                lambda t: self._maybe_dropout(
                    multi_head_attention(t, t, t, p, "enc.cross", cfg.num_heads)
                ),
                x, p["enc.cross.ln.gamma"], p["enc.cross.ln.beta"],
            )
        return x

    def decode(self, encoder_out, dec_in_ids):
        """Decoder logits [m, vocab] for teacher-forced input ids."""
        cfg = self.config
        p = self.params
        dec_in_ids = list(dec_in_ids)
        m = len(dec_in_ids)
        if m == 0:
            raise ValueError("empty decoder input")
        if m > cfg.max_target_len:
            raise ValueError(
                f"target length {m} exceeds max_target_len {cfg.max_target_len}"
            )
        x = embed(p["embedding"], dec_in_ids)
        mask = causal_mask(m, self.dtype) if not cfg.is_conv else None
        if not cfg.is_conv:
            x = add_const(x, sinusoidal_positions(m, cfg.d_model, self.dtype))
        for i in range(cfg.num_layers):
            x = sublayer_wrap(
                lambda t, i=i: self._maybe_dropout(self._mix_sublayer("dec", i, t, mask)),
                x, p[f"dec.{i}.mix.ln.gamma"], p[f"dec.{i}.mix.ln.beta"],
            )
            x = sublayer_wrap(
                lambda t, i=i: self._maybe_dropout(
                    multi_head_attention(
                        t, encoder_out, encoder_out, p, f"dec.{i}.xattn",
                        cfg.num_heads,
                    )
                ),
                x, p[f"dec.{i}.xattn.ln.gamma"], p[f"dec.{i}.xattn.ln.beta"],
            )
            x = sublayer_wrap(
                lambda t, i=i: self._maybe_dropout(ffn(t, p, f"dec.{i}.ffn")),
                x, p[f"dec.{i}.ffn.ln.gamma"], p[f"dec.{i}.ffn.ln.beta"],
            )
        # Output projection shares the (transposed) embedding table.
        return matmul(x, p["embedding"], transpose_b=True)

    def forward(self, src_ids, tgt_ids):
        """Teacher-forced logits for the gold target (shifted right internally)."""
        tgt_ids = list(tgt_ids)
        dec_in = [PAD_ID] + tgt_ids[:-1]
        return self.decode(self.encode(src_ids), dec_in)

    def greedy_decode(self, src_ids, max_len=None):
        """Greedy generation until end-of-sequence or the length budget."""
        if max_len is None:
            max_len = self.config.max_target_len
        enc = self.encode(src_ids)
        out = []
        for _ in range(max_len):
            logits = self.decode(enc, [PAD_ID] + out)
            nxt = int(np.argmax(logits.data[-1]))
            out.append(nxt)
            if nxt == EOS_ID:
                break
        return out
