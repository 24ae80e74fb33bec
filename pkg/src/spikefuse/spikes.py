"""Probabilistic (Bernoulli rate) spike encoding of intensity images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .rng import stream


@dataclass
class SpikeTrain:
    """Binary (num_units, T) array; each row is one unit's spike history."""

    values: np.ndarray

    @property
    def num_units(self) -> int:
        return self.values.shape[0]

    @property
    def time_steps(self) -> int:
        return self.values.shape[1]


def grayscale(image: np.ndarray) -> np.ndarray:
    """Mean over channels of a (c, h, w) image; passthrough for (h, w)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        return image.mean(axis=0)
    return image


def encode_probabilistic(image, time_steps: int, rng_seed: int) -> SpikeTrain:
    """Encode intensities as independent Bernoulli spikes per step.

    Unit u fires at each step with probability equal to its intensity
    (clamped to [0, 1]). The same (image, T, seed) triple always yields
    the same train.
    """
    if time_steps < 1:
        raise ParameterError(f"time window must be >= 1, got {time_steps}")
    intensities = np.clip(np.asarray(image, dtype=np.float64).reshape(-1), 0.0, 1.0)
    rng = stream(rng_seed, "bernoulli-spikes")
    draws = rng.random((intensities.shape[0], time_steps))
    values = (draws < intensities[:, None]).astype(np.uint8)
    return SpikeTrain(values=values)


def spike_rate(train: SpikeTrain) -> np.ndarray:
    """Per-unit mean firing rate, in [0, 1]."""
    return train.values.mean(axis=1)
