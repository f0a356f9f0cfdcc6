"""2-D convolution kernels: standard, grouped/depthwise, atrous, transposed.

Convention is cross-correlation (no kernel flip), channel-last single-image
tensors [H, W, C], explicit per-side padding (top, bottom, left, right), and
float64 throughout. A dilation ``rate`` of 1 is a standard convolution; the
transposed convolution is the exact adjoint of the forward map, so
<conv2d(x), y> == <x, transposed_conv2d(y)> holds up to float rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, ValidationError

Padding = tuple[int, int, int, int]  # top, bottom, left, right


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    rate: int = 1
    groups: int = 1
    padding: Padding = (0, 0, 0, 0)

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel_h, self.kernel_w) < 1:
            raise ValidationError(f"non-positive dimension in {self}")
        if self.stride < 1 or self.rate < 1 or self.groups < 1:
            raise ValidationError(f"stride/rate/groups must be >= 1 in {self}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValidationError(
                f"channels ({self.in_channels}, {self.out_channels}) not divisible by groups {self.groups}"
            )
        if len(self.padding) != 4 or min(self.padding) < 0:
            raise ValidationError(f"padding must be 4 non-negative ints, got {self.padding}")

    @property
    def is_depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels

    @property
    def is_pointwise(self) -> bool:
        return self.kernel_h == self.kernel_w == 1 and self.rate == 1

    @property
    def dilated_h(self) -> int:
        return self.rate * (self.kernel_h - 1) + 1

    @property
    def dilated_w(self) -> int:
        return self.rate * (self.kernel_w - 1) + 1

    def out_shape(self, in_h: int, in_w: int) -> tuple[int, int]:
        pt, pb, pl, pr = self.padding
        hp, wp = in_h + pt + pb, in_w + pl + pr
        if hp < self.dilated_h or wp < self.dilated_w:
            raise DimensionError(
                f"padded input {hp}x{wp} smaller than dilated kernel "
                f"{self.dilated_h}x{self.dilated_w}"
            )
        return (hp - self.dilated_h) // self.stride + 1, (wp - self.dilated_w) // self.stride + 1

    def min_input_shape(self, out_h: int, out_w: int) -> tuple[int, int]:
        """Smallest input size producing [out_h, out_w]; used by the adjoint."""
        pt, pb, pl, pr = self.padding
        h = (out_h - 1) * self.stride + self.dilated_h - pt - pb
        w = (out_w - 1) * self.stride + self.dilated_w - pl - pr
        if h < 1 or w < 1:
            raise DimensionError(f"no valid input size for output {out_h}x{out_w} under {self}")
        return h, w


@dataclass
class LayerWeights:
    """kernel [out_c, in_c/groups, kh, kw] and bias [out_c]."""

    kernel: np.ndarray
    bias: np.ndarray

    def check(self, spec: ConvSpec) -> None:
        want = (spec.out_channels, spec.in_channels // spec.groups, spec.kernel_h, spec.kernel_w)
        if tuple(self.kernel.shape) != want:
            raise DimensionError(f"kernel shape {self.kernel.shape} != {want} for {spec}")
        if tuple(self.bias.shape) != (spec.out_channels,):
            raise DimensionError(f"bias shape {self.bias.shape} != ({spec.out_channels},)")
        if not (np.all(np.isfinite(self.kernel)) and np.all(np.isfinite(self.bias))):
            raise ValidationError("non-finite weights")


def glorot_uniform(shape: tuple[int, ...], fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


def init_weights(spec: ConvSpec, rng: np.random.Generator) -> LayerWeights:
    fan_in = (spec.in_channels // spec.groups) * spec.kernel_h * spec.kernel_w
    fan_out = (spec.out_channels // spec.groups) * spec.kernel_h * spec.kernel_w
    kernel = glorot_uniform(
        (spec.out_channels, spec.in_channels // spec.groups, spec.kernel_h, spec.kernel_w),
        fan_in,
        fan_out,
        rng,
    )
    return LayerWeights(kernel=kernel, bias=np.zeros(spec.out_channels))


def _check_input(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise DimensionError(f"input must be [H, W, C], got shape {x.shape}")
    if x.shape[2] != spec.in_channels:
        raise DimensionError(f"input has {x.shape[2]} channels, spec wants {spec.in_channels}")
    return x


def _pad(x: np.ndarray, padding: Padding) -> np.ndarray:
    pt, pb, pl, pr = padding
    if pt == pb == pl == pr == 0:
        return x
    return np.pad(x, ((pt, pb), (pl, pr), (0, 0)))


def _tap_slice(k: int, rate: int, stride: int, n_out: int) -> slice:
    start = k * rate
    return slice(start, start + stride * (n_out - 1) + 1, stride)


def conv2d(x: np.ndarray, spec: ConvSpec, w: LayerWeights) -> np.ndarray:
    """Dilated, strided, grouped cross-correlation plus bias."""
    x = _check_input(x, spec)
    w.check(spec)
    oh, ow = spec.out_shape(x.shape[0], x.shape[1])
    xp = _pad(x, spec.padding)
    icpg = spec.in_channels // spec.groups
    ocpg = spec.out_channels // spec.groups
    y = np.zeros((oh, ow, spec.out_channels))
    for g in range(spec.groups):
        xg = xp[:, :, g * icpg : (g + 1) * icpg]
        kg = w.kernel[g * ocpg : (g + 1) * ocpg]
        for ki in range(spec.kernel_h):
            rs = _tap_slice(ki, spec.rate, spec.stride, oh)
            for kj in range(spec.kernel_w):
                cs = _tap_slice(kj, spec.rate, spec.stride, ow)
                y[:, :, g * ocpg : (g + 1) * ocpg] += xg[rs, cs, :] @ kg[:, :, ki, kj].T
    return y + w.bias


def conv2d_backward(
    x: np.ndarray, spec: ConvSpec, w: LayerWeights, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (d_input, d_kernel, d_bias) of a scalar loss given dy."""
    x = _check_input(x, spec)
    dy = np.asarray(dy, dtype=np.float64)
    oh, ow = spec.out_shape(x.shape[0], x.shape[1])
    if dy.shape != (oh, ow, spec.out_channels):
        raise DimensionError(f"dy shape {dy.shape} != {(oh, ow, spec.out_channels)}")
    d_bias = dy.sum(axis=(0, 1))
    d_kernel = _kernel_grad(x, spec, w.kernel.shape, dy)
    d_input = _input_grad(dy, spec, w.kernel, x.shape[0], x.shape[1])
    return d_input, d_kernel, d_bias


def _kernel_grad(x: np.ndarray, spec: ConvSpec, kshape, dy: np.ndarray) -> np.ndarray:
    oh, ow = dy.shape[:2]
    xp = _pad(x, spec.padding)
    icpg = spec.in_channels // spec.groups
    ocpg = spec.out_channels // spec.groups
    dk = np.zeros(kshape)
    for g in range(spec.groups):
        xg = xp[:, :, g * icpg : (g + 1) * icpg]
        dyg = dy[:, :, g * ocpg : (g + 1) * ocpg]
        for ki in range(spec.kernel_h):
            rs = _tap_slice(ki, spec.rate, spec.stride, oh)
            for kj in range(spec.kernel_w):
                cs = _tap_slice(kj, spec.rate, spec.stride, ow)
                dk[g * ocpg : (g + 1) * ocpg, :, ki, kj] = np.tensordot(
                    dyg, xg[rs, cs, :], axes=([0, 1], [0, 1])
                )
    return dk


def _input_grad(
    dy: np.ndarray, spec: ConvSpec, kernel: np.ndarray, in_h: int, in_w: int
) -> np.ndarray:
    pt, pb, pl, pr = spec.padding
    oh, ow = dy.shape[:2]
    icpg = spec.in_channels // spec.groups
    ocpg = spec.out_channels // spec.groups
    dxp = np.zeros((in_h + pt + pb, in_w + pl + pr, spec.in_channels))
    for g in range(spec.groups):
        kg = kernel[g * ocpg : (g + 1) * ocpg]
        dyg = dy[:, :, g * ocpg : (g + 1) * ocpg]
        for ki in range(spec.kernel_h):
            rs = _tap_slice(ki, spec.rate, spec.stride, oh)
            for kj in range(spec.kernel_w):
                cs = _tap_slice(kj, spec.rate, spec.stride, ow)
                dxp[rs, cs, g * icpg : (g + 1) * icpg] += dyg @ kg[:, :, ki, kj]
    return dxp[pt : pt + in_h, pl : pl + in_w, :]


def transposed_conv2d(
    y: np.ndarray,
    spec: ConvSpec,
    w: LayerWeights,
    out_h: int | None = None,
    out_w: int | None = None,
) -> np.ndarray:
    """Adjoint of conv2d under ``spec`` (bias not applied).

    ``spec`` describes the forward convolution being transposed, so the input
    here has spec.out_channels channels and the result spec.in_channels.
    When stride > 1 several input sizes share one output size; out_h/out_w
    pick among them, defaulting to the smallest.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 3 or y.shape[2] != spec.out_channels:
        raise DimensionError(f"adjoint input shape {y.shape} incompatible with {spec}")
    if out_h is None or out_w is None:
        mh, mw = spec.min_input_shape(y.shape[0], y.shape[1])
        out_h = mh if out_h is None else out_h
        out_w = mw if out_w is None else out_w
    if spec.out_shape(out_h, out_w) != (y.shape[0], y.shape[1]):
        raise DimensionError(
            f"target size {out_h}x{out_w} maps to {spec.out_shape(out_h, out_w)}, "
            f"not {y.shape[:2]}"
        )
    w.check(spec)
    return _input_grad(y, spec, w.kernel, out_h, out_w)


def transposed_conv2d_backward(
    y: np.ndarray,
    spec: ConvSpec,
    w: LayerWeights,
    d_out: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients (d_y, d_kernel) for the adjoint map given upstream d_out."""
    d_out = np.asarray(d_out, dtype=np.float64)
    # adjoint of the adjoint is the forward convolution (without bias)
    d_y = conv2d(d_out, spec, LayerWeights(w.kernel, np.zeros(spec.out_channels)))
    d_kernel = _kernel_grad(d_out, spec, w.kernel.shape, y)
    return d_y, d_kernel


def separable_conv2d(
    x: np.ndarray,
    depthwise_spec: ConvSpec,
    depthwise_w: LayerWeights,
    pointwise_spec: ConvSpec,
    pointwise_w: LayerWeights,
) -> np.ndarray:
    """Depthwise spatial filter followed by a 1x1 channel-mixing convolution."""
    if not depthwise_spec.is_depthwise:
        raise ValidationError(f"depthwise spec must have groups == channels: {depthwise_spec}")
    if not pointwise_spec.is_pointwise:
        raise ValidationError(f"pointwise spec must be 1x1 with rate 1: {pointwise_spec}")
    if pointwise_spec.in_channels != depthwise_spec.out_channels:
        raise DimensionError("pointwise input channels must match depthwise output channels")
    return conv2d(conv2d(x, depthwise_spec, depthwise_w), pointwise_spec, pointwise_w)
