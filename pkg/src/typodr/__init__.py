"""typodr: desk-scale training and evaluation of typo-robust dual-encoder
retrievers."""

from .encoder import EncoderConfig, EncoderParams, encode, encode_backward, tokenize
from .losses import (
    BatchScores,
    Method,
    MethodConfig,
    ScoreSet,
    ce_loss,
    kl_self_teaching,
    mce_loss,
    method_loss,
    softmax_distribution,
)
from .trainer import DualEncoder, TrainConfig, TrainingInstance, lr_at_step, train
from .typos import AugmentationPolicy, TypoTransform, apply_transform, generate_variants

__version__ = "0.1.0"

__all__ = [
    "AugmentationPolicy",
    "BatchScores",
    "DualEncoder",
    "EncoderConfig",
    "EncoderParams",
    "Method",
    "MethodConfig",
    "ScoreSet",
    "TrainConfig",
    "TrainingInstance",
    "TypoTransform",
    "apply_transform",
    "ce_loss",
    "encode",
    "encode_backward",
    "generate_variants",
    "kl_self_teaching",
    "lr_at_step",
    "mce_loss",
    "method_loss",
    "softmax_distribution",
    "tokenize",
    "train",
    "__version__",
]
