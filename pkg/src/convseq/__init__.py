"""Convolutional sequence-to-sequence models, span-denoising pre-training,
and attention-vs-convolution scaling benchmarks."""

from .model import ModelConfig, Seq2SeqModel, enable_encoder_cross_attention
from .training import RunConfig, Adafactor, pretrain, finetune, evaluate
from .bench import count_flops, measure_throughput, scaling_report

__version__ = "0.1.0"

__all__ = [
    "ModelConfig",
    "Seq2SeqModel",
    "enable_encoder_cross_attention",
    "RunConfig",
    "Adafactor",
    "pretrain",
    "finetune",
    "evaluate",
    "count_flops",
    "measure_throughput",
    "scaling_report",
    "__version__",
]
