"""Concrete visual encoder: a small residual conv stack over image patches."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DimensionError, ParameterError
from .tensor import Tensor


@dataclass
class ConvStackConfig:
    channels: tuple = (8, 16, 32)   # last entry is the feature dim M1
    patch_stride: int = 8
    kernel: int = 3

    @property
    def m1(self) -> int:
        return self.channels[-1]


class ConvStack:
    """Residual conv blocks followed by average pooling to the patch grid.

    Each block computes relu(conv3x3(x)) + shortcut(x), where the shortcut
    is the identity when channel counts match and a 1x1 convolution
    otherwise. The final map is average-pooled down to an
    (image / stride)^2 grid of M1-dimensional patch tokens.
    """

    def __init__(self, in_channels: int, image_hw: int, cfg: ConvStackConfig, rng):
        if image_hw % cfg.patch_stride != 0:
            raise ParameterError(
                f"image size {image_hw} not divisible by patch stride {cfg.patch_stride}"
            )
        self.cfg = cfg
        self.image_hw = image_hw
        self.grid = image_hw // cfg.patch_stride
        self.num_patches = self.grid * self.grid
        self.blocks = []
        self._params: dict[str, Tensor] = {}
        c_in = in_channels
        k = cfg.kernel
        for i, c_out in enumerate(cfg.channels):
            w = Tensor(rng.normal(0.0, 1.0 / np.sqrt(c_in * k * k), size=(c_out, c_in, k, k)),
                       requires_grad=True)
            b = Tensor(np.zeros(c_out), requires_grad=True)
            short = None
            if c_in != c_out:
                short = Tensor(rng.normal(0.0, 1.0 / np.sqrt(c_in), size=(c_out, c_in, 1, 1)),
                               requires_grad=True)
            self.blocks.append((w, b, short))
            self._params[f"block{i}.w"] = w
            self._params[f"block{i}.b"] = b
            if short is not None:
                self._params[f"block{i}.short"] = short
            c_in = c_out

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def encode_concrete(self, images: Tensor) -> Tensor:
        """(b, c, h, w) images -> (N, M1, b) patch tokens."""
        if images.ndim != 4:
            raise DimensionError(f"expected (b, c, h, w) images, got {images.shape}")
        b, _, h, w = images.shape
        if h != self.image_hw or w != self.image_hw:
            raise DimensionError(f"expected {self.image_hw}x{self.image_hw} images, got {h}x{w}")
        x = images
        pad = self.cfg.kernel // 2
        for wgt, bias, short in self.blocks:
            y = T.conv2d(x, wgt, stride=1, padding=pad)
            c_out = wgt.shape[0]
            y = T.add(y, T.broadcast_to(T.reshape(bias, (1, c_out, 1, 1)), y.shape))
            y = T.relu(y)
            residual = x if short is None else T.conv2d(x, short, stride=1, padding=0)
            x = T.add(y, residual)
        m1 = self.cfg.m1
        g, win = self.grid, self.cfg.patch_stride
        pooled = T.tensor_mean(
            T.reshape(x, (b, m1, g, win, g, win)), axis=(3, 5)
        )  # (b, M1, g, g)
        tokens = T.reshape(pooled, (b, m1, self.num_patches))
        return T.transpose(tokens, (2, 1, 0))  # (N, M1, b)


def encode_concrete(images: Tensor, params: ConvStack) -> Tensor:
    """Functional alias for :meth:`ConvStack.encode_concrete`."""
    return params.encode_concrete(images)
