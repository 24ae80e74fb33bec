"""Similarity-driven batch reorganization and the two-phase training schedule."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, ParameterError

PHASE_WARMUP = "frozen_warmup"
PHASE_REORGANIZED = "reorganized"


@dataclass
class EpochPlan:
    batches: list            # list of lists of sample ids
    retrieve_count: int
    phase: str

    def all_ids(self) -> list:
        return [i for batch in self.batches for i in batch]


def similarity_matrix(embeddings: np.ndarray) -> np.ndarray:
    """Cosine similarity of row embeddings (rows are pre-normalized)."""
    e = np.asarray(embeddings, dtype=np.float64)
    return e @ e.T


def retrieve(anchor_id: int, phi: int, sims: np.ndarray) -> list[int]:
    """The anchor plus its phi-1 most similar distinct samples.

    Neighbours are ordered by descending similarity to the anchor, ties
    broken by the lowest id.
    """
    n = sims.shape[0]
    if not 1 <= phi <= n:
        raise ParameterError(f"phi must be in [1, {n}], got {phi}")
    others = [j for j in range(n) if j != anchor_id]
    others.sort(key=lambda j: (-sims[anchor_id, j], j))
    return [anchor_id] + others[: phi - 1]


def reorganize_epoch(ids, phi: int, sims: np.ndarray, batch_size: int,
                     rng) -> EpochPlan:
    """Greedy similarity cover of the dataset into batches.

    Repeatedly picks an unused anchor at random, pulls its phi-1 most
    similar unused neighbours into a group, and packs whole groups into
    batches of at most ``batch_size``. Every id appears exactly once.
    """
    ids = list(ids)
    n = len(ids)
    if phi > batch_size:
        raise ParameterError(f"phi {phi} exceeds batch size {batch_size}")
    if sims.shape != (n, n):
        raise ParameterError(f"similarity matrix {sims.shape} does not cover {n} ids")
    unused = set(range(n))
    groups = []
    while unused:
        pool = sorted(unused)
        anchor = pool[rng.integers(len(pool))]
        unused.discard(anchor)
        take = min(phi - 1, len(unused))
        neighbours = sorted(unused, key=lambda j: (-sims[anchor, j], j))[:take]
        for j in neighbours:
            unused.discard(j)
        groups.append([anchor] + neighbours)

    batches = []
    current: list[int] = []
    for group in groups:
        if current and len(current) + len(group) > batch_size:
            batches.append(current)
            current = []
        current.extend(group)
    if current:
        batches.append(current)
    batches = [[ids[i] for i in batch] for batch in batches]

    plan = EpochPlan(batches=batches, retrieve_count=phi, phase=PHASE_REORGANIZED)
    if Counter(plan.all_ids()) != Counter(ids):
        raise ContractError("reorganization lost or duplicated sample ids")
    return plan


def random_epoch_plan(ids, batch_size: int, rng) -> EpochPlan:
    """Shuffled ids packed into fixed-size batches (warmup batching)."""
    order = list(ids)
    perm = rng.permutation(len(order))
    shuffled = [order[i] for i in perm]
    batches = [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]
    return EpochPlan(batches=batches, retrieve_count=1, phase=PHASE_WARMUP)


def training_schedule(warmup_epochs: int, total_epochs: int) -> list[str]:
    """Phase per epoch: frozen warmup first, then reorganized training."""
    if warmup_epochs >= total_epochs:
        raise ConfigError(
            f"warmup epochs {warmup_epochs} must be < total epochs {total_epochs}"
        )
    return [PHASE_WARMUP] * warmup_epochs + [PHASE_REORGANIZED] * (total_epochs - warmup_epochs)
