# ticketlab/app/nn/layers.py
# -*- coding: utf-8 -*-
"""
Layer kernels with hand-written backward passes, registered by LayerShape.kind.

Each op works on a batch (leading axis B):
  forward(x, kernel, bias)        -> (y, cache)
  backward(dy, cache, kernel)     -> (dx, dkernel, dbias)
Parameter-free ops receive kernel=None and return dkernel=dbias=None.
`kernel` is already masked by the caller.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import softmax

K = 5  # conv kernel side

Grads = Tuple[np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]


# ------------------------------ Registry ------------------------------

@dataclass
class LayerInfo:
    kind: str
    cls: type


_LAYER_REGISTRY: Dict[str, LayerInfo] = {}


def register_layer(kind: str):
    """
    Class decorator to register a layer op by kind.

        @register_layer("relu")
        class ReLU(LayerOp): ...
    """
    kind = kind.lower().strip()

    def _wrap(cls: type) -> type:
        _LAYER_REGISTRY[kind] = LayerInfo(kind=kind, cls=cls)
        cls.kind = kind
        return cls

    return _wrap


def get_layer(kind: str) -> "LayerOp":
    info = _LAYER_REGISTRY.get(kind)
    if not info:
        raise KeyError(f"No layer op registered for kind '{kind}'")
    return info.cls()


class LayerOp(ABC):
    kind: str = "unknown"

    @abstractmethod
    def forward(self, x: np.ndarray, kernel: Optional[np.ndarray], bias: Optional[np.ndarray]) -> Tuple[np.ndarray, Any]:
        raise NotImplementedError

    @abstractmethod
    def backward(self, dy: np.ndarray, cache: Any, kernel: Optional[np.ndarray]) -> Grads:
        raise NotImplementedError


# ------------------------------ Ops ------------------------------

@register_layer("dense")
class Dense(LayerOp):

    def forward(self, x, kernel, bias):
        flat = x.reshape(x.shape[0], -1)
        return flat @ kernel.T + bias, (flat, x.shape)

    def backward(self, dy, cache, kernel):
        flat, shape = cache
        return (dy @ kernel).reshape(shape), dy.T @ flat, dy.sum(axis=0)


@register_layer("conv5x5")
class Conv5x5(LayerOp):
    """Valid 5x5 convolution, stride 1, via im2col. Kernel columns are (C, kh, kw)."""

    def forward(self, x, kernel, bias):
        b, c, h, w = x.shape
        oh, ow = h - K + 1, w - K + 1
        windows = sliding_window_view(x, (K, K), axis=(2, 3))          # (B, C, oh, ow, K, K)
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh, ow, c * K * K)
        y = cols @ kernel.T + bias                                       # (B, oh, ow, out)
        return y.transpose(0, 3, 1, 2), (cols, x.shape)

    def backward(self, dy, cache, kernel):
        cols, (b, c, h, w) = cache
        out = kernel.shape[0]
        oh, ow = h - K + 1, w - K + 1
        dy_t = dy.transpose(0, 2, 3, 1)                                  # (B, oh, ow, out)
        dkernel = dy_t.reshape(-1, out).T @ cols.reshape(-1, c * K * K)
        dbias = dy_t.sum(axis=(0, 1, 2))
        dcols = (dy_t @ kernel).reshape(b, oh, ow, c, K, K)
        dx = np.zeros((b, c, h, w))
        for i in range(K):
            for j in range(K):
                dx[:, :, i:i + oh, j:j + ow] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dx, dkernel, dbias


@register_layer("maxpool2x2")
class MaxPool2x2(LayerOp):
    """Odd trailing rows/cols are dropped; ties route the gradient to the first max."""

    def forward(self, x, kernel, bias):
        b, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        blocks = (
            x[:, :, :2 * h2, :2 * w2]
            .reshape(b, c, h2, 2, w2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, h2, w2, 4)
        )
        idx = blocks.argmax(axis=-1)[..., None]
        y = np.take_along_axis(blocks, idx, axis=-1)[..., 0]
        return y, (idx, x.shape)

    def backward(self, dy, cache, kernel):
        idx, (b, c, h, w) = cache
        h2, w2 = h // 2, w // 2
        blocks = np.zeros((b, c, h2, w2, 4))
        np.put_along_axis(blocks, idx, dy[..., None], axis=-1)
        dx = np.zeros((b, c, h, w))
        dx[:, :, :2 * h2, :2 * w2] = (
            blocks.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * h2, 2 * w2)
        )
        return dx, None, None


@register_layer("relu")
class ReLU(LayerOp):

    def forward(self, x, kernel, bias):
        return np.maximum(x, 0.0), x > 0

    def backward(self, dy, cache, kernel):
        return dy * cache, None, None


@register_layer("softmax")
class Softmax(LayerOp):
    """Forward only; the engine fuses its backward with cross-entropy."""

    def forward(self, x, kernel, bias):
        return softmax(x, axis=-1), None

    def backward(self, dy, cache, kernel):
        raise NotImplementedError("softmax backward is fused with cross-entropy in the engine")
