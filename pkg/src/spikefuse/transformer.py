"""Single-stream alignment transformer over concatenated text and image tokens."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, ParameterError
from .tensor import Tensor
from .text import TokenSequence

MASKED_LOGIT = -1e30  # additive stand-in for -inf; exp underflows to exact 0


@dataclass
class TransformerConfig:
    layers: int = 3
    heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    max_seq_len: int = 48

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ParameterError(
                f"model dim {self.d_model} not divisible by {self.heads} heads"
            )


def _linear(rng, n_in, n_out):
    return (Tensor(rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out)), requires_grad=True),
            Tensor(np.zeros(n_out), requires_grad=True))


def _affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    y = T.matmul(x, w)
    return T.add(y, T.broadcast_to(T.reshape(b, (1,) * (y.ndim - 1) + (b.shape[0],)), y.shape))


def _layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    d = x.shape[-1]
    mu = T.tensor_mean(x, axis=-1, keepdims=True)
    centered = T.sub(x, T.broadcast_to(mu, x.shape))
    var = T.tensor_mean(T.mul(centered, centered), axis=-1, keepdims=True)
    denom = T.broadcast_to(T.sqrt(T.add(var, eps)), x.shape)
    normed = T.div(centered, denom)
    scale = T.broadcast_to(T.reshape(gamma, (1,) * (x.ndim - 1) + (d,)), x.shape)
    shift = T.broadcast_to(T.reshape(beta, (1,) * (x.ndim - 1) + (d,)), x.shape)
    return T.add(T.mul(normed, scale), shift)


class AlignTransformer:
    """BERT-style embeddings plus pre-norm self-attention blocks.

    Text tokens get word + position + type-0 embeddings; image patch
    tokens are projected from M1 to the model dim and get their own
    position table and type-1 embeddings. Sequences are concatenated as
    [CLS, text, SEP | image].
    """

    def __init__(self, cfg: TransformerConfig, vocab_size: int, m1: int,
                 num_patches: int, rng):
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.num_patches = num_patches
        d = cfg.d_model
        self._params: dict[str, Tensor] = {}

        def reg(name, t):
            self._params[name] = t
            return t

        emb_std = 0.05
        self.word_emb = reg("word_emb", Tensor(rng.normal(0, emb_std, (vocab_size, d)), requires_grad=True))
        self.text_pos_emb = reg("text_pos_emb", Tensor(rng.normal(0, emb_std, (cfg.max_seq_len, d)), requires_grad=True))
        self.img_pos_emb = reg("img_pos_emb", Tensor(rng.normal(0, emb_std, (num_patches, d)), requires_grad=True))
        self.type_emb = reg("type_emb", Tensor(rng.normal(0, emb_std, (2, d)), requires_grad=True))
        w, b = _linear(rng, m1, d)
        self.img_proj_w = reg("img_proj_w", w)
        self.img_proj_b = reg("img_proj_b", b)

        self.layers = []
        for i in range(cfg.layers):
            layer = {}
            for nm in ("q", "k", "v", "o"):
                lw, lb = _linear(rng, d, d)
                layer[f"{nm}_w"] = reg(f"layer{i}.{nm}_w", lw)
                layer[f"{nm}_b"] = reg(f"layer{i}.{nm}_b", lb)
            f1w, f1b = _linear(rng, d, cfg.d_ff)
            f2w, f2b = _linear(rng, cfg.d_ff, d)
            layer["ff1_w"] = reg(f"layer{i}.ff1_w", f1w)
            layer["ff1_b"] = reg(f"layer{i}.ff1_b", f1b)
            layer["ff2_w"] = reg(f"layer{i}.ff2_w", f2w)
            layer["ff2_b"] = reg(f"layer{i}.ff2_b", f2b)
            for nm in ("ln1", "ln2"):
                layer[f"{nm}_g"] = reg(f"layer{i}.{nm}_g", Tensor(np.ones(d), requires_grad=True))
                layer[f"{nm}_b"] = reg(f"layer{i}.{nm}_b", Tensor(np.zeros(d), requires_grad=True))
            self.layers.append(layer)
        self.final_ln_g = reg("final_ln_g", Tensor(np.ones(d), requires_grad=True))
        self.final_ln_b = reg("final_ln_b", Tensor(np.zeros(d), requires_grad=True))

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    # -- embeddings -----------------------------------------------------
    def embed_text_batch(self, ids: np.ndarray) -> Tensor:
        """(b, Lt) padded ids -> (b, Lt, d) embeddings."""
        b, lt = ids.shape
        emb = T.gather_rows(self.word_emb, ids)
        pos = T.gather_rows(self.text_pos_emb, np.tile(np.arange(lt), (b, 1)))
        typ = T.gather_rows(self.type_emb, np.zeros((b, lt), dtype=np.int64))
        return T.add(T.add(emb, pos), typ)

    def embed_image_batch(self, visual: Tensor) -> Tensor:
        """(b, N, M1) fused tokens -> (b, N, d) embeddings."""
        b, n, _ = visual.shape
        proj = _affine(visual, self.img_proj_w, self.img_proj_b)
        pos = T.gather_rows(self.img_pos_emb, np.tile(np.arange(n), (b, 1)))
        typ = T.gather_rows(self.type_emb, np.ones((b, n), dtype=np.int64))
        return T.add(T.add(proj, pos), typ)

    def embed_joint_batch(self, visual: Tensor, ids: np.ndarray, text_mask: np.ndarray):
        """Concatenate [text | image] embeddings; returns (emb, mask)."""
        b, lt = ids.shape
        n = visual.shape[1]
        if lt + n > self.cfg.max_seq_len:
            raise DimensionError(
                f"sequence of {lt} text + {n} image tokens exceeds max {self.cfg.max_seq_len}"
            )
        emb = T.concat([self.embed_text_batch(ids), self.embed_image_batch(visual)], axis=1)
        mask = np.concatenate([text_mask, np.ones((b, n), dtype=np.int64)], axis=1)
        return emb, mask

    def embed_joint(self, visual: Tensor, seq: TokenSequence) -> Tensor:
        """Single-sample embedding: ((N, M1), tokens) -> (L, d)."""
        ids = seq.ids[None, :]
        vis = T.reshape(visual, (1,) + tuple(visual.shape))
        emb, _ = self.embed_joint_batch(vis, ids, seq.attention_mask[None, :])
        return T.reshape(emb, emb.shape[1:])

    # -- encoder blocks ---------------------------------------------------
    def _attention(self, x: Tensor, mask: np.ndarray, layer, collect=None) -> Tensor:
        b, L, d = x.shape
        h = self.cfg.heads
        dh = d // h

        def split_heads(t):
            return T.transpose(T.reshape(t, (b, L, h, dh)), (0, 2, 1, 3))

        q = split_heads(_affine(x, layer["q_w"], layer["q_b"]))
        k = split_heads(_affine(x, layer["k_w"], layer["k_b"]))
        v = split_heads(_affine(x, layer["v_w"], layer["v_b"]))
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
        bias = np.where(mask[:, None, None, :] == 1, 0.0, MASKED_LOGIT)
        scores = T.add(scores, Tensor(np.broadcast_to(bias, (b, h, L, L)).copy()))
        attn = T.softmax_rows(scores)
        if collect is not None:
            collect.append(attn.data)
        ctx = T.matmul(attn, v)
        merged = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, L, d))
        return _affine(merged, layer["o_w"], layer["o_b"])

    def forward(self, emb: Tensor, mask: np.ndarray, return_attn: bool = False):
        """Pre-norm blocks over (b, L, d) embeddings; returns contextual states."""
        squeeze = emb.ndim == 2
        if squeeze:
            emb = T.reshape(emb, (1,) + tuple(emb.shape))
            mask = np.asarray(mask)[None, :]
        if mask.shape[1] != emb.shape[1]:
            raise DimensionError(f"mask length {mask.shape[1]} != sequence {emb.shape[1]}")
        x = emb
        attn_maps = [] if return_attn else None
        for layer in self.layers:
            normed = _layer_norm(x, layer["ln1_g"], layer["ln1_b"])
            x = T.add(x, self._attention(normed, mask, layer, collect=attn_maps))
            normed = _layer_norm(x, layer["ln2_g"], layer["ln2_b"])
            hidden = T.relu(_affine(normed, layer["ff1_w"], layer["ff1_b"]))
            x = T.add(x, _affine(hidden, layer["ff2_w"], layer["ff2_b"]))
        x = _layer_norm(x, self.final_ln_g, self.final_ln_b)
        if squeeze:
            x = T.reshape(x, x.shape[1:])
        if return_attn:
            return x, attn_maps
        return x


class PooledHeads:
    """CLS pooler plus per-task affine heads on the contextual states."""

    def __init__(self, d_model: int, vocab_size: int, m2: int, rng):
        self._params: dict[str, Tensor] = {}

        def reg(name, pair):
            self._params[f"{name}_w"], self._params[f"{name}_b"] = pair
            return pair

        self.pool_w, self.pool_b = reg("pool", _linear(rng, d_model, d_model))
        self.itm_w, self.itm_b = reg("itm", _linear(rng, d_model, 2))
        self.mlm_w, self.mlm_b = reg("mlm", _linear(rng, d_model, vocab_size))
        self.mvm_w, self.mvm_b = reg("mvm", _linear(rng, d_model, m2))

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def cls_vector(self, contextual: Tensor) -> Tensor:
        """tanh(affine(first row)); works on (L, d) or (b, L, d)."""
        row = T.take_index(contextual, 0, axis=contextual.ndim - 2)
        return T.tanh(_affine(row, self.pool_w, self.pool_b))

    def itm_logits(self, cls_vec: Tensor) -> Tensor:
        return _affine(cls_vec, self.itm_w, self.itm_b)

    def mlm_logits(self, contextual: Tensor) -> Tensor:
        return _affine(contextual, self.mlm_w, self.mlm_b)

    def mvm_logits(self, contextual: Tensor) -> Tensor:
        return _affine(contextual, self.mvm_w, self.mvm_b)

    def pooled_heads(self, contextual: Tensor) -> dict:
        return {
            "cls_vector": self.cls_vector(contextual),
            "mlm_logits": self.mlm_logits(contextual),
            "mvm_logits": self.mvm_logits(contextual),
        }


def transformer_forward(embeddings: Tensor, mask, params: AlignTransformer,
                        return_attn: bool = False):
    """Functional alias for :meth:`AlignTransformer.forward`."""
    return params.forward(embeddings, np.asarray(mask), return_attn=return_attn)
