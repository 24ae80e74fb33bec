"""Pre-training objectives: contrastive alignment, matching, masked
prediction, and the spiking-to-text alignment loss, plus the label
generation and VQA accuracy utilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, ParameterError
from .tensor import Tensor
from .text import CLS, MASK, PAD, SEP

TAU_MIN, TAU_MAX = 1e-3, 10.0
_NORM_FLOOR = 1e-12


def l2_normalize_rows(x: Tensor) -> Tensor:
    """Rows scaled to unit norm; an exactly-zero row stays zero."""
    sq = T.tensor_sum(T.mul(x, x), axis=-1, keepdims=True)
    norm = T.clip_min(T.sqrt(sq), _NORM_FLOOR)
    return T.div(x, T.broadcast_to(norm, x.shape))


class AlignmentHeads:
    """Projections of both modalities into a shared normalized space."""

    def __init__(self, visual_dim: int, text_dim: int, d_align: int, rng,
                 tau_init: float = 0.07):
        self.h_v_w = Tensor(rng.normal(0, 1.0 / np.sqrt(visual_dim), (visual_dim, d_align)),
                            requires_grad=True)
        self.h_v_b = Tensor(np.zeros(d_align), requires_grad=True)
        self.h_w_w = Tensor(rng.normal(0, 1.0 / np.sqrt(text_dim), (text_dim, d_align)),
                            requires_grad=True)
        self.h_w_b = Tensor(np.zeros(d_align), requires_grad=True)
        # temperature learned in log space, clamped after every step
        self.log_tau = Tensor(np.array(np.log(tau_init)), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        return {"h_v_w": self.h_v_w, "h_v_b": self.h_v_b,
                "h_w_w": self.h_w_w, "h_w_b": self.h_w_b,
                "log_tau": self.log_tau}

    def clamp_tau(self):
        self.log_tau.data = np.clip(self.log_tau.data, np.log(TAU_MIN), np.log(TAU_MAX))

    def tau(self) -> Tensor:
        return T.exp(self.log_tau)

    def project_visual(self, v: Tensor) -> Tensor:
        d = self.h_v_b.shape[0]
        y = T.add(T.matmul(v, self.h_v_w),
                  T.broadcast_to(T.reshape(self.h_v_b, (1, d)), (v.shape[0], d)))
        return l2_normalize_rows(y)

    def project_text(self, w: Tensor) -> Tensor:
        d = self.h_w_b.shape[0]
        y = T.add(T.matmul(w, self.h_w_w),
                  T.broadcast_to(T.reshape(self.h_w_b, (1, d)), (w.shape[0], d)))
        return l2_normalize_rows(y)


@dataclass
class NegativeQueue:
    """FIFO ring of detached embeddings used as extra negatives."""

    capacity: int = 256
    _buffer: list = field(default_factory=list)

    def push(self, embeddings: np.ndarray):
        for row in np.asarray(embeddings, dtype=np.float64):
            self._buffer.append(row.copy())
        overflow = len(self._buffer) - self.capacity
        if overflow > 0:
            del self._buffer[:overflow]

    def __len__(self) -> int:
        return len(self._buffer)

    def as_array(self) -> np.ndarray:
        if not self._buffer:
            return np.zeros((0, 0))
        return np.stack(self._buffer, axis=0)

    def clear(self):
        self._buffer.clear()


def _ce_rows(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of integer labels under row logits."""
    logp = T.log_softmax_rows(logits)
    picked = T.select_last_axis(logp, labels)
    return T.mul(T.tensor_mean(picked), -1.0)


def itc_loss(img_emb: Tensor, txt_emb: Tensor, tau: Tensor,
             img_queue: NegativeQueue, txt_queue: NegativeQueue) -> Tensor:
    """Symmetric InfoNCE over in-batch plus queued negatives.

    Embeddings must already be L2-normalized. Queues are read as extra
    negative columns and updated (detached) only after the loss is built.
    """
    b = img_emb.shape[0]
    if b < 2 and len(txt_queue) == 0 and len(img_queue) == 0:
        raise ContractError("itc_loss needs batch >= 2 or non-empty queues")
    labels = np.arange(b)

    txt_bank = txt_emb
    if len(txt_queue):
        txt_bank = T.concat([txt_emb, Tensor(txt_queue.as_array())], axis=0)
    img_bank = img_emb
    if len(img_queue):
        img_bank = T.concat([img_emb, Tensor(img_queue.as_array())], axis=0)

    inv_tau = T.div(Tensor(1.0), tau)
    logits_i2t = T.mul(T.matmul(img_emb, T.transpose(txt_bank, (1, 0))),
                       T.broadcast_to(inv_tau.reshape(1, 1), (b, txt_bank.shape[0])))
    logits_t2i = T.mul(T.matmul(txt_emb, T.transpose(img_bank, (1, 0))),
                       T.broadcast_to(inv_tau.reshape(1, 1), (b, img_bank.shape[0])))
    loss = T.mul(T.add(_ce_rows(logits_i2t, labels), _ce_rows(logits_t2i, labels)), 0.5)

    img_queue.push(img_emb.data)
    txt_queue.push(txt_emb.data)
    return loss


def hardest_negative_ids(similarity: np.ndarray) -> np.ndarray:
    """Per row, the off-diagonal column with the highest score."""
    sims = similarity.copy()
    np.fill_diagonal(sims, -np.inf)
    return np.argmax(sims, axis=1)


def itm_loss(cls_vectors: Tensor, labels: np.ndarray, head_w: Tensor,
             head_b: Tensor) -> Tensor:
    """Two-way cross-entropy on pooled CLS vectors (1 = match)."""
    n, d2 = cls_vectors.shape[0], head_b.shape[0]
    logits = T.add(T.matmul(cls_vectors, head_w),
                   T.broadcast_to(T.reshape(head_b, (1, d2)), (n, d2)))
    return _ce_rows(logits, np.asarray(labels, dtype=np.int64))


def select_mlm_positions(ids: np.ndarray, mask_rate: float, rng) -> np.ndarray:
    """Indices of tokens to mask: each non-special token independently
    with ``mask_rate``; if the draw selects none, one maskable token is
    forced so the loss is never empty."""
    ids = np.asarray(ids)
    maskable = ~np.isin(ids, (PAD, CLS, SEP, MASK))
    candidates = np.flatnonzero(maskable)
    if candidates.size == 0:
        raise ContractError("sequence has no maskable tokens")
    chosen = candidates[rng.random(candidates.size) < mask_rate]
    if chosen.size == 0:
        chosen = np.array([candidates[rng.integers(candidates.size)]])
    return chosen


def apply_mlm_mask(ids: np.ndarray, positions: np.ndarray) -> np.ndarray:
    masked = ids.copy()
    masked[positions] = MASK
    return masked


def masked_token_ce(logits: Tensor, target_ids: np.ndarray,
                    positions: np.ndarray) -> Tensor:
    """Cross-entropy over the vocabulary at the masked positions only.

    ``logits`` is (L, V) for one sequence; gather rows then average.
    """
    positions = np.asarray(positions, dtype=np.int64)
    picked = T.gather_rows(logits, positions)
    return _ce_rows(picked, np.asarray(target_ids)[positions])


def mvm_loss(patch_logits: Tensor, labels: np.ndarray, silent: np.ndarray) -> Tensor:
    """Cross-entropy over collector classes at masked patches.

    ``patch_logits`` is (n_masked, M2); silent patches (no spikes in the
    reference pass) carry no information and are excluded. All-silent
    masks contribute a zero loss.
    """
    keep = np.flatnonzero(~np.asarray(silent, dtype=bool))
    if keep.size == 0:
        return T.mul(T.tensor_sum(patch_logits), 0.0)
    picked = T.gather_rows(patch_logits, keep)
    return _ce_rows(picked, np.asarray(labels)[keep])


def stua_score(v_emb: Tensor, w_emb: Tensor, heads: AlignmentHeads) -> Tensor:
    """Pairwise cosine alignment of projected spiking and text embeddings.

    ``v_emb`` is (b, M1) pooled spiking features, ``w_emb`` is (b, d) text
    CLS vectors; returns the (b, b) score matrix in [-1, 1].
    """
    hv = heads.project_visual(v_emb)
    hw = heads.project_text(w_emb)
    return T.matmul(hv, T.transpose(hw, (1, 0)))


def stua_loss(scores: Tensor, tau: Tensor) -> Tensor:
    """Half the mean cross-entropy of the softmax-normalized score rows
    against the one-hot diagonal."""
    b = scores.shape[0]
    if scores.ndim != 2 or scores.shape[1] != b:
        raise ContractError(f"stua_loss needs a square score matrix, got {scores.shape}")
    if b < 2:
        raise ContractError("stua_loss needs batch >= 2")
    inv_tau = T.div(Tensor(1.0), tau)
    logits = T.mul(scores, T.broadcast_to(inv_tau.reshape(1, 1), (b, b)))
    return T.mul(_ce_rows(logits, np.arange(b)), 0.5)


@dataclass
class SpikeLabel:
    patch: int
    class_id: int
    silent: bool


def generate_spike_labels(s_counts: np.ndarray, masked_positions) -> list[SpikeLabel]:
    """Per masked patch, the argmax collector unit of the unmasked pass.

    ``s_counts`` is (N, M2) for one sample. Ties resolve to the lowest
    index; an all-zero patch is labelled 0 and flagged silent so callers
    can exclude it from the loss.
    """
    s = np.asarray(s_counts, dtype=np.float64)
    labels = []
    for patch in masked_positions:
        row = s[patch]
        labels.append(SpikeLabel(
            patch=int(patch),
            class_id=int(np.argmax(row)),
            silent=bool(np.all(row == 0.0)),
        ))
    return labels


def vqa_accuracy(num_humans_matching: int) -> float:
    """min(n / 3, 1): the standard annotator-consensus accuracy."""
    if num_humans_matching < 0:
        raise ParameterError(f"annotator count must be >= 0, got {num_humans_matching}")
    return min(num_humans_matching / 3.0, 1.0)
