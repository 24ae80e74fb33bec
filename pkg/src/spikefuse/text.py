"""Whitespace tokenizer with reserved special tokens."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

PAD, CLS, SEP, MASK, UNK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = {"[PAD]": PAD, "[CLS]": CLS, "[SEP]": SEP, "[MASK]": MASK, "[UNK]": UNK}


@dataclass
class Vocabulary:
    token_to_id: dict

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.token_to_id, f, indent=0, sort_keys=False)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as f:
            return cls(token_to_id=json.load(f))


def build_vocab(texts) -> Vocabulary:
    """Specials first, then all words seen in ``texts``, sorted for stability."""
    words = set()
    for t in texts:
        words.update(t.lower().split())
    table = dict(SPECIAL_TOKENS)
    for i, w in enumerate(sorted(words)):
        table[w] = len(SPECIAL_TOKENS) + i
    return Vocabulary(token_to_id=table)


@dataclass
class TokenSequence:
    ids: np.ndarray
    positions: np.ndarray
    type_ids: np.ndarray
    attention_mask: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def tokenize(text: str, vocab: Vocabulary) -> TokenSequence:
    """Lowercase whitespace split wrapped as [CLS] ... [SEP]."""
    ids = [CLS] + [vocab.id_of(w) for w in text.lower().split()] + [SEP]
    n = len(ids)
    return TokenSequence(
        ids=np.array(ids, dtype=np.int64),
        positions=np.arange(n, dtype=np.int64),
        type_ids=np.zeros(n, dtype=np.int64),
        attention_mask=np.ones(n, dtype=np.int64),
    )


def pad_sequences(seqs: list[TokenSequence], length: int | None = None):
    """Stack sequences into (b, L) id/mask arrays padded with PAD."""
    max_len = length if length is not None else max(len(s) for s in seqs)
    b = len(seqs)
    ids = np.full((b, max_len), PAD, dtype=np.int64)
    mask = np.zeros((b, max_len), dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s.ids
        mask[i, : len(s)] = 1
    return ids, mask
