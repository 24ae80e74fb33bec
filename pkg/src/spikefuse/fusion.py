"""Summary-ratio gating and fusion of the spiking and conventional streams."""

from __future__ import annotations

import enum

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .tensor import Tensor


class SrMode(enum.Enum):
    FIXED_ZERO = "fixed_zero"   # conventional stream only
    FIXED_ONE = "fixed_one"     # plain sum of both streams
    TRAINABLE = "trainable"     # learned sigmoid gate


class SrGate:
    """Per-token, per-feature sigmoid gate computed from the concrete stream."""

    def __init__(self, m1: int, rng):
        self.weight = Tensor(rng.normal(0.0, 1.0 / np.sqrt(m1), size=(m1, m1)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(m1), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


def summary_ratio(f_cnn: Tensor, gate: SrGate) -> Tensor:
    """sigmoid(affine(F_CNN)) applied per patch token, (N, M1, b) -> same."""
    if f_cnn.ndim != 3 or f_cnn.shape[1] != gate.weight.shape[0]:
        raise DimensionError(
            f"features {f_cnn.shape} do not match gate dim {gate.weight.shape[0]}"
        )
    n, m1, b = f_cnn.shape
    flat = T.reshape(T.transpose(f_cnn, (2, 0, 1)), (b * n, m1))
    pre = T.add(T.matmul(flat, gate.weight),
                T.broadcast_to(T.reshape(gate.bias, (1, m1)), (b * n, m1)))
    sr = T.sigmoid(pre)
    return T.transpose(T.reshape(sr, (b, n, m1)), (1, 2, 0))


def fuse(sr, f_snn: Tensor, f_cnn: Tensor, mode: SrMode) -> Tensor:
    """Gated sum of the two streams; all operands are (N, M1, b).

    trainable: sr * F_SNN + F_CNN, fixed_one: F_SNN + F_CNN,
    fixed_zero: F_CNN untouched.
    """
    if f_snn.shape != f_cnn.shape:
        raise DimensionError(f"stream shapes differ: {f_snn.shape} vs {f_cnn.shape}")
    if mode is SrMode.FIXED_ZERO:
        return f_cnn
    if mode is SrMode.FIXED_ONE:
        return T.add(f_snn, f_cnn)
    if sr is None or sr.shape != f_snn.shape:
        raise DimensionError(
            f"gate shape {None if sr is None else sr.shape} != streams {f_snn.shape}"
        )
    return T.add(T.mul(sr, f_snn), f_cnn)
