"""Minimal differentiable kernels: convolutions, activations, losses, Adam."""

from .adam import AdamOptimizer, AdamParams, AdamState, adam_step
from .conv import (
    ConvSpec,
    LayerWeights,
    conv2d,
    conv2d_backward,
    glorot_uniform,
    init_weights,
    separable_conv2d,
    transposed_conv2d,
    transposed_conv2d_backward,
)
from .ops import (
    ACTIVATION_KINDS,
    activation,
    activation_backward,
    sigmoid,
    sigmoid_ce_with_logits,
    sigmoid_ce_with_logits_backward,
    smooth_l1,
    softmax,
    softmax_cross_entropy,
)
from .weights import load_weights, save_weights

__all__ = [
    "ACTIVATION_KINDS",
    "AdamOptimizer",
    "AdamParams",
    "AdamState",
    "ConvSpec",
    "LayerWeights",
    "activation",
    "activation_backward",
    "adam_step",
    "conv2d",
    "conv2d_backward",
    "glorot_uniform",
    "init_weights",
    "load_weights",
    "save_weights",
    "separable_conv2d",
    "sigmoid",
    "sigmoid_ce_with_logits",
    "sigmoid_ce_with_logits_backward",
    "smooth_l1",
    "softmax",
    "softmax_cross_entropy",
    "transposed_conv2d",
    "transposed_conv2d_backward",
]
