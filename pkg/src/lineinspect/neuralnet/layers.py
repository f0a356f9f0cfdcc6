"""Thin layer wrappers composing the kernels into explicit model stacks.

There is no autodiff graph: each layer exposes forward (returning a cache)
and backward, and models chain them by hand. Parameters live in a flat
name -> array dict so serialization and Adam states stay trivial.
"""

from __future__ import annotations

import numpy as np

from .conv import ConvSpec, LayerWeights, conv2d, conv2d_backward, glorot_uniform, init_weights, transposed_conv2d, transposed_conv2d_backward
from .ops import activation, activation_backward

Params = dict[str, np.ndarray]
Grads = dict[str, np.ndarray]


class ConvLayer:
    def __init__(self, name: str, spec: ConvSpec, act: str | None = None):
        self.name = name
        self.spec = spec
        self.act = act

    def init_params(self, params: Params, rng: np.random.Generator) -> None:
        w = init_weights(self.spec, rng)
        params[f"{self.name}/kernel"] = w.kernel
        params[f"{self.name}/bias"] = w.bias

    def _w(self, params: Params) -> LayerWeights:
        return LayerWeights(params[f"{self.name}/kernel"], params[f"{self.name}/bias"])

    def forward(self, x: np.ndarray, params: Params):
        pre = conv2d(x, self.spec, self._w(params))
        out = activation(pre, self.act) if self.act else pre
        return out, (x, pre)

    def backward(self, cache, d_out: np.ndarray, params: Params, grads: Grads) -> np.ndarray:
        x, pre = cache
        d_pre = activation_backward(pre, self.act, d_out) if self.act else d_out
        dx, dk, db = conv2d_backward(x, self.spec, self._w(params), d_pre)
        grads[f"{self.name}/kernel"] = dk
        grads[f"{self.name}/bias"] = db
        return dx


class TransposedConvLayer:
    """Upsampling layer: adjoint of a strided conv, plus bias and activation.

    in_ch/out_ch are in the direction data flows through THIS layer; the
    underlying forward-conv spec is therefore reversed.
    """

    def __init__(self, name: str, in_ch: int, out_ch: int, kernel: int, stride: int,
                 pad: int, act: str | None = None):
        self.name = name
        self.spec = ConvSpec(
            in_channels=out_ch, out_channels=in_ch, kernel_h=kernel, kernel_w=kernel,
            stride=stride, padding=(pad, pad, pad, pad),
        )
        self.out_ch = out_ch
        self.act = act

    def init_params(self, params: Params, rng: np.random.Generator) -> None:
        w = init_weights(self.spec, rng)
        params[f"{self.name}/kernel"] = w.kernel
        params[f"{self.name}/bias"] = np.zeros(self.out_ch)

    def _w(self, params: Params) -> LayerWeights:
        return LayerWeights(params[f"{self.name}/kernel"], np.zeros(self.spec.out_channels))

    def forward(self, x: np.ndarray, params: Params):
        up = transposed_conv2d(x, self.spec, self._w(params))
        pre = up + params[f"{self.name}/bias"]
        out = activation(pre, self.act) if self.act else pre
        return out, (x, pre)

    def backward(self, cache, d_out: np.ndarray, params: Params, grads: Grads) -> np.ndarray:
        x, pre = cache
        d_pre = activation_backward(pre, self.act, d_out) if self.act else d_out
        grads[f"{self.name}/bias"] = d_pre.sum(axis=(0, 1))
        dx, dk = transposed_conv2d_backward(x, self.spec, self._w(params), d_pre)
        grads[f"{self.name}/kernel"] = dk
        return dx


class DenseLayer:
    def __init__(self, name: str, in_dim: int, out_dim: int, act: str | None = None):
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.act = act

    def init_params(self, params: Params, rng: np.random.Generator) -> None:
        params[f"{self.name}/weight"] = glorot_uniform(
            (self.in_dim, self.out_dim), self.in_dim, self.out_dim, rng
        )
        params[f"{self.name}/bias"] = np.zeros(self.out_dim)

    def forward(self, x: np.ndarray, params: Params):
        flat = np.asarray(x).reshape(-1)
        pre = flat @ params[f"{self.name}/weight"] + params[f"{self.name}/bias"]
        out = activation(pre, self.act) if self.act else pre
        return out, (x.shape, flat, pre)

    def backward(self, cache, d_out: np.ndarray, params: Params, grads: Grads) -> np.ndarray:
        in_shape, flat, pre = cache
        d_pre = activation_backward(pre, self.act, d_out) if self.act else d_out
        grads[f"{self.name}/weight"] = np.outer(flat, d_pre)
        grads[f"{self.name}/bias"] = d_pre
        d_flat = params[f"{self.name}/weight"] @ d_pre
        return d_flat.reshape(in_shape)


class ReshapeLayer:
    def __init__(self, shape: tuple[int, ...]):
        self.shape = shape

    def init_params(self, params: Params, rng: np.random.Generator) -> None:
        pass

    def forward(self, x: np.ndarray, params: Params):
        return np.asarray(x).reshape(self.shape), (x.shape,)

    def backward(self, cache, d_out: np.ndarray, params: Params, grads: Grads) -> np.ndarray:
        (in_shape,) = cache
        return d_out.reshape(in_shape)


class Stack:
    """Sequential composition of layers over a shared parameter dict."""

    def __init__(self, layers: list):
        self.layers = layers

    def init_params(self, rng: np.random.Generator) -> Params:
        params: Params = {}
        for layer in self.layers:
            layer.init_params(params, rng)
        return params

    def forward(self, x: np.ndarray, params: Params):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, params)
            caches.append(cache)
        return x, caches

    def backward(self, caches, d_out: np.ndarray, params: Params, grads: Grads) -> np.ndarray:
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            d_out = layer.backward(cache, d_out, params, grads)
        return d_out


def accumulate(total: Grads, part: Grads) -> None:
    for k, v in part.items():
        if k in total:
            total[k] += v
        else:
            total[k] = v.copy()
