"""Finite-difference verification suite for every differentiable operation.

Each entry builds a small random instance, runs forward+backward, and
compares analytic gradients against central finite differences. Full
miniature models are checked with directional derivatives instead of a
coordinate sweep (same oracle, tractable cost).
"""

from __future__ import annotations

import numpy as np

from . import convs, tensor
from .data import seq_cross_entropy
from .model import ModelConfig, Seq2SeqModel, causal_mask, multi_head_attention
from .tensor import (
    Tensor,
    add,
    check_gradients,
    directional_gradient_check,
    layer_norm,
    matmul,
    mul,
    relu,
    scale,
    sigmoid,
    softmax,
    tensor_sum,
)

TOLERANCE = 1e-4


def _rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def op_checks(seed=0):
    """Yield (name, max relative error) for every primitive operation."""
    rng = np.random.default_rng(seed)

    a = _rand(rng, 3, 4)
    b = _rand(rng, 4, 2)
    yield "matmul", check_gradients(lambda: tensor_sum(sigmoid(matmul(a, b))), [a, b])

    x = _rand(rng, 3, 4)
    y = _rand(rng, 3, 4)
    yield "add", check_gradients(lambda: tensor_sum(sigmoid(add(x, y))), [x, y])

    bias = _rand(rng, 4)
    yield "add_bias", check_gradients(
        lambda: tensor_sum(sigmoid(add(x, bias))), [x, bias]
    )

    yield "mul", check_gradients(lambda: tensor_sum(sigmoid(mul(x, y))), [x, y])
    yield "scale", check_gradients(lambda: tensor_sum(sigmoid(scale(x, 1.7))), [x])
    yield "sigmoid", check_gradients(lambda: tensor_sum(mul(sigmoid(x), x)), [x])
    yield "relu", check_gradients(lambda: tensor_sum(mul(relu(x), x)), [x])
    yield "softmax", check_gradients(lambda: tensor_sum(mul(softmax(x, 1), y)), [x, y])

    gamma = _rand(rng, 4)
    beta = _rand(rng, 4)
    yield "layer_norm", check_gradients(
        lambda: tensor_sum(sigmoid(layer_norm(x, gamma, beta, eps=1e-6))),
        [x, gamma, beta],
    )

    table = _rand(rng, 6, 3)
    ids = [0, 3, 3, 5]
    yield "embed", check_gradients(
        lambda: tensor_sum(sigmoid(tensor.embed(table, ids))), [table]
    )

    parts = [_rand(rng, 3, 2), _rand(rng, 3, 3)]
    yield "concat", check_gradients(
        lambda: tensor_sum(sigmoid(tensor.concat(parts, axis=1))), parts
    )

    for padding in ("same-zero", "causal-left"):
        for dilation in (1, 2):
            xc = _rand(rng, 5, 4)
            w = _rand(rng, 4, 3)
            name = f"depthwise[{padding},dil={dilation}]"
            yield name, check_gradients(
                lambda: tensor_sum(
                    sigmoid(
                        convs.depthwise_conv(
                            xc, convs.DepthwiseKernel(w, dilation), padding
                        )
                    )
                ),
                [xc, w],
            )

    xc = _rand(rng, 5, 4)
    w = _rand(rng, 2, 3)
    yield "lightweight", check_gradients(
        lambda: tensor_sum(
            sigmoid(convs.lightweight_conv(xc, convs.TiedKernel(w), "same-zero"))
        ),
        [xc, w],
    )

    xc = _rand(rng, 5, 4)
    wq = _rand(rng, 4, 2 * 3)
    gen = convs.DynamicKernelGenerator(wq, tying=2, width=3)
    yield "dynamic", check_gradients(
        lambda: tensor_sum(sigmoid(convs.dynamic_conv(xc, gen, "causal-left"))),
        [xc, wq],
    )

    d, heads = 4, 2
    p = {}
    for h in range(heads):
        for role in ("q", "k", "v"):
            p[f"attn.{role}{h}"] = _rand(rng, d, d // heads)
    p["attn.out"] = _rand(rng, d, d)
    q = _rand(rng, 3, d)
    kv = _rand(rng, 5, d)
    tensors = [q, kv] + list(p.values())
    yield "attention", check_gradients(
        lambda: tensor_sum(
            sigmoid(multi_head_attention(q, kv, kv, p, "attn", heads))
        ),
        tensors,
    )

    mask = causal_mask(3)
    yield "attention[causal]", check_gradients(
        lambda: tensor_sum(
            sigmoid(multi_head_attention(q, q, q, p, "attn", heads, mask=mask))
        ),
        [q] + list(p.values()),
    )

    logits = _rand(rng, 4, 6)
    targets = [2, 0, 5, 1]  # includes a pad position (id 0)
    yield "cross_entropy", check_gradients(
        lambda: seq_cross_entropy(logits, targets), [logits]
    )


def model_checks(seed=0, variants=("light", "dynamic", "dilated", "transformer-baseline")):
    """Directional finite-difference checks on 2-layer miniature models."""
    rng = np.random.default_rng(seed)
    src = [120, 130, 140, 150, 160]
    tgt = [121, 131, 141, 1]
    for variant in variants:
        cfg = ModelConfig(
            num_layers=2, d_model=8, d_ff=16, num_heads=2,
            vocab_size=200, conv_variant=variant, tying=2,
            max_target_len=16, seed=seed,
        )
        model = Seq2SeqModel(cfg)

        def loss():
            return seq_cross_entropy(model.forward(src, tgt), tgt)

        err = directional_gradient_check(loss, model.parameters(), rng)
        yield f"model[{variant}]", err
    cfg = ModelConfig(
        num_layers=2, d_model=8, d_ff=16, num_heads=2, vocab_size=200,
        conv_variant="light", tying=2, max_target_len=16,
        encoder_cross_attention=True, seed=seed,
    )
    model = Seq2SeqModel(cfg)

    def loss():
        return seq_cross_entropy(model.forward(src, tgt), tgt)

    yield "model[light+cross_attention]", directional_gradient_check(
        loss, model.parameters(), rng
    )


def run_all(seed=0):
    """(results, ok): every check name with its error, and the overall verdict."""
    results = list(op_checks(seed)) + list(model_checks(seed))
    ok = all(err < TOLERANCE for _, err in results)
    return results, ok
