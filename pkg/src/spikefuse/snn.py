"""Spiking encoder: LIF neurons with a tanh surrogate, threshold-scaled
batch normalization, batch-accumulated abstract encoding, and the
trainable semantic-collector readout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, ParameterError
from .spikes import SpikeTrain
from .tensor import Tensor


@dataclass
class LifConfig:
    u_rest: float = 0.0
    u_reset: float = 0.0
    threshold: float = 1.0
    leak: float = 0.5
    surrogate_width: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.leak <= 1.0:
            raise ParameterError(f"leak must be in (0, 1], got {self.leak}")
        if self.threshold <= self.u_reset:
            raise ParameterError(
                f"threshold {self.threshold} must exceed reset {self.u_reset}"
            )
        if self.surrogate_width <= 0:
            raise ParameterError(f"surrogate width must be > 0, got {self.surrogate_width}")


@dataclass
class MembraneState:
    u: Tensor
    step: int = 0


def lif_step(cfg: LifConfig, state: MembraneState, input_current: Tensor):
    """Advance the membrane one step and emit binary spikes.

    Forward: u' = leak * (u - u_rest) + u_rest + input; spike where
    u' >= threshold; fired neurons reset to u_reset. The backward pass
    routes d(spike)/d(u') through the tanh surrogate
    (1 - tanh^2((u' - threshold) / alpha)) / alpha, and treats the spike
    as a constant inside the reset so the membrane path stays exact.
    """
    u = state.u
    if input_current.shape != u.shape:
        raise DimensionError(
            f"input current shape {input_current.shape} != membrane shape {u.shape}"
        )
    u_new = ((u.data - cfg.u_rest) * cfg.leak + cfg.u_rest) + input_current.data
    fired = u_new >= cfg.threshold
    spikes_data = fired.astype(np.float64)
    u_next_data = np.where(fired, cfg.u_reset, u_new)

    parents = (u, input_current)
    spikes = T._make_output(spikes_data, parents)
    u_next = T._make_output(u_next_data, parents)
    if spikes.requires_grad:
        z = (u_new - cfg.threshold) / cfg.surrogate_width
        surrogate = (1.0 - np.tanh(z) ** 2) / cfg.surrogate_width
        keep = (~fired).astype(np.float64)

        def backward_fn(grads):
            g_spike, g_unext = grads
            g_uprime = np.zeros_like(u_new)
            if g_spike is not None:
                g_uprime += g_spike * surrogate
            if g_unext is not None:
                g_uprime += g_unext * keep
            u._accumulate(g_uprime * cfg.leak)
            input_current._accumulate(g_uprime)

        T._record((spikes, u_next), backward_fn)
    return spikes, MembraneState(u=u_next, step=state.step + 1)


def tdbn(pre_activations: Tensor, threshold: float, scale: Tensor, shift: Tensor,
         eps: float = 1e-5) -> Tensor:
    """Threshold-scaled batch normalization over a (population, units) tensor.

    Normalizes each unit to zero mean and unit variance over the whole
    batch-time population, multiplies by the firing threshold, then applies
    the learned scale and shift. Variance is floored at ``eps`` so a
    constant population maps to shift instead of dividing by zero.
    """
    if pre_activations.ndim != 2:
        raise DimensionError(f"tdbn expects 2-D input, got {pre_activations.shape}")
    pop, units = pre_activations.shape
    if pop < 2:
        raise ParameterError(f"tdbn needs a population of >= 2, got {pop}")
    mu = T.tensor_mean(pre_activations, axis=0, keepdims=True)
    centered = T.sub(pre_activations, T.broadcast_to(mu, (pop, units)))
    var = T.tensor_mean(T.mul(centered, centered), axis=0, keepdims=True)
    denom = T.sqrt(T.clip_min(var, eps))
    normed = T.div(centered, T.broadcast_to(denom, (pop, units)))
    scaled = T.mul(normed, threshold)
    gained = T.mul(scaled, T.broadcast_to(T.reshape(scale, (1, units)), (pop, units)))
    return T.add(gained, T.broadcast_to(T.reshape(shift, (1, units)), (pop, units)))


@dataclass
class SemanticCollector:
    """Trainable codebook whose columns are basis semantics."""

    matrix: Tensor  # (M1, M2)

    @property
    def m1(self) -> int:
        return self.matrix.shape[0]

    @property
    def m2(self) -> int:
        return self.matrix.shape[1]


def make_collector(m1: int, m2: int, rng) -> SemanticCollector:
    data = rng.normal(0.0, 1.0 / np.sqrt(m1), size=(m1, m2))
    return SemanticCollector(matrix=Tensor(data, requires_grad=True))


def collector_readout(s_counts: Tensor, collector: SemanticCollector) -> Tensor:
    """Mix collector columns by spike activations, Tensor (N, M2, b) -> (N, M1, b).

    Each patch's feature is the activation-weighted sum of columns divided
    by the patch's total spike count; a silent patch reads out as exact
    zero (no epsilon smoothing), so silence is the additive identity under
    fusion.
    """
    if s_counts.ndim != 3 or s_counts.shape[1] != collector.m2:
        raise DimensionError(
            f"activations {s_counts.shape} do not match collector M2={collector.m2}"
        )
    n, m2, b = s_counts.shape
    per_sample = T.transpose(s_counts, (2, 0, 1))                       # (b, N, M2)
    numer = T.matmul(per_sample, T.transpose(collector.matrix, (1, 0)))  # (b, N, M1)
    totals = T.tensor_sum(per_sample, axis=2, keepdims=True)             # (b, N, 1)
    denom = T.broadcast_to(totals, (b, n, collector.m1))
    mixed = T.safe_div(numer, denom)
    return T.transpose(mixed, (1, 2, 0))                                # (N, M1, b)


class SpikingEncoder:
    """Two affine->tdBN->LIF layers over patch spike trains.

    A batch is presented as one unbroken sequence: membranes carry over
    from sample to sample and reset only after the whole batch, so the
    encoder accumulates evidence across similar neighbours.
    """

    def __init__(self, image_hw: int, patch: int, hidden: int, m2: int,
                 lif: LifConfig, rng):
        if image_hw % patch != 0:
            raise ParameterError(f"image size {image_hw} not divisible by patch {patch}")
        self.image_hw = image_hw
        self.patch = patch
        self.grid = image_hw // patch
        self.num_patches = self.grid * self.grid
        self.patch_pixels = patch * patch
        self.hidden = hidden
        self.m2 = m2
        self.lif = lif
        self.frozen = False
        px = self.patch_pixels
        self.w1 = Tensor(rng.normal(0.0, 1.0 / np.sqrt(px), size=(px, hidden)),
                         requires_grad=True)
        self.w2 = Tensor(rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, m2)),
                         requires_grad=True)
        self.bn1_scale = Tensor(np.ones(hidden), requires_grad=True)
        self.bn1_shift = Tensor(np.zeros(hidden), requires_grad=True)
        self.bn2_scale = Tensor(np.ones(m2), requires_grad=True)
        self.bn2_shift = Tensor(np.zeros(m2), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        return {
            "w1": self.w1, "w2": self.w2,
            "bn1_scale": self.bn1_scale, "bn1_shift": self.bn1_shift,
            "bn2_scale": self.bn2_scale, "bn2_shift": self.bn2_shift,
        }

    def _patchify(self, train: SpikeTrain) -> np.ndarray:
        """(units, T) -> (T, N, patch_pixels) with the CNN's patch grid."""
        hw, p, g = self.image_hw, self.patch, self.grid
        img = train.values.reshape(hw, hw, train.time_steps)
        tiles = img.reshape(g, p, g, p, -1).transpose(0, 2, 1, 3, 4)
        return tiles.reshape(self.num_patches, self.patch_pixels, -1).transpose(2, 0, 1)

    def _run_layer(self, currents: Tensor, width: int):
        """Sequential LIF scan over the leading step axis of (S, N, width)."""
        steps = currents.shape[0]
        per_step = T.unstack(currents, axis=0)
        state = MembraneState(u=Tensor(np.full((self.num_patches, width), self.lif.u_rest)))
        spikes = []
        for t in range(steps):
            s, state = lif_step(self.lif, state, per_step[t])
            spikes.append(s)
        return T.stack(spikes, axis=0)

    def encode_abstract(self, trains: list[SpikeTrain]) -> Tensor:
        """Encode a batch of spike trains into per-sample spike counts.

        Returns a (N, M2, b) tensor of final-layer spike counts; entries
        are integers in [0, T]. Samples run back to back without a
        membrane reset in between.
        """
        if not trains:
            raise ContractError("encode_abstract needs at least one spike train")
        steps = trains[0].time_steps
        units = trains[0].num_units
        for tr in trains:
            if tr.time_steps != steps or tr.num_units != units:
                raise ContractError(
                    f"inconsistent trains: expected ({units}, {steps}), got "
                    f"({tr.num_units}, {tr.time_steps})"
                )
        if units != self.image_hw * self.image_hw:
            raise DimensionError(
                f"train has {units} units, encoder expects {self.image_hw ** 2}"
            )
        b = len(trains)
        x = np.concatenate([self._patchify(tr) for tr in trains], axis=0)
        x = Tensor(x)  # (b*T, N, px), binary constants

        total = b * steps
        flat = T.reshape(x, (total * self.num_patches, self.patch_pixels))
        a1 = T.matmul(flat, self.w1)
        a1 = tdbn(a1, self.lif.threshold, self.bn1_scale, self.bn1_shift)
        s1 = self._run_layer(T.reshape(a1, (total, self.num_patches, self.hidden)),
                             self.hidden)

        flat2 = T.reshape(s1, (total * self.num_patches, self.hidden))
        a2 = T.matmul(flat2, self.w2)
        a2 = tdbn(a2, self.lif.threshold, self.bn2_scale, self.bn2_shift)
        s2 = self._run_layer(T.reshape(a2, (total, self.num_patches, self.m2)),
                             self.m2)

        counts = T.tensor_sum(
            T.reshape(s2, (b, steps, self.num_patches, self.m2)), axis=1
        )  # (b, N, M2)
        return T.transpose(counts, (1, 2, 0))


def set_frozen(encoder_and_collector, flag: bool) -> None:
    """Freeze or unfreeze the spiking stream (encoder plus collector)."""
    encoder_and_collector.frozen = bool(flag)


def encode_abstract(trains: list[SpikeTrain], params: SpikingEncoder,
                    cfg: LifConfig | None = None) -> Tensor:
    """Functional alias for :meth:`SpikingEncoder.encode_abstract`."""
    if cfg is not None:
        params.lif = cfg
    return params.encode_abstract(trains)
