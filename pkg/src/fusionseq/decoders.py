"""Answer decoders: plain GRU, multiplicative-attention GRU, top-down attention LSTM."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .encoders import EmbeddingTable, GruParams, embed_tokens, gru_cell_step
from .params import ParamStore


@dataclass
class OutputProjection:
    W: Tensor  # [d_h, |vocab|]
    b: Tensor  # [|vocab|]

    @classmethod
    def create(cls, store: ParamStore, name: str, d_h: int, vocab_size: int):
        return cls(store.projection(f"{name}.W", (d_h, vocab_size)),
                   store.zeros(f"{name}.b", (vocab_size,)))

    def __call__(self, h: Tensor) -> Tensor:
        if h.shape[-1] != self.W.shape[0]:
            raise DimensionError(f"output projection: state width {h.shape[-1]} != {self.W.shape[0]}")
        return h @ self.W + self.b


@dataclass
class ValueBank:
    """All encoded states across modalities and time, ``[..., r, d]``."""

    v: Tensor
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.v.shape[-2] < 1:
            raise ValueError("empty value bank")

    @property
    def size(self) -> int:
        return self.v.shape[-2]

    def mean(self) -> Tensor:
        if self.mask is None:
            return self.v.mean(axis=-2)
        m = np.asarray(self.mask, dtype=self.v.dtype)
        w = Tensor((m / m.sum(axis=-1, keepdims=True))[..., None])
        return (self.v * w).sum(axis=-2)

    def take(self, rows) -> "ValueBank":
        """Select batch rows (used to align the bank with beam hypotheses)."""
        mask = None if self.mask is None else np.asarray(self.mask)[rows]
        return ValueBank(self.v[rows], mask)


def _masked_softmax(scores: Tensor, mask) -> Tensor:
    if mask is not None:
        scores = scores + Tensor(np.where(np.asarray(mask) > 0, 0.0, -1e9).astype(scores.dtype))
    return ad.softmax(scores, axis=-1)


# --- simple decoder ----------------------------------------------------------

def simple_decode_step(y_prev, h: Tensor, p: GruParams, out: OutputProjection,
                       table: EmbeddingTable) -> tuple[Tensor, Tensor]:
    """h' = GRU(embed(y_prev), h); returns pre-softmax logits W h' + b and h'."""
    h_next = gru_cell_step(embed_tokens(y_prev, table), h, p)
    return out(h_next), h_next


# --- multiplicative attention ------------------------------------------------

@dataclass
class MultAttentionParams:
    U: Tensor  # [d_x, k]  (value side)
    V: Tensor  # [d_y, k]  (query side)

    @classmethod
    def create(cls, store: ParamStore, name: str, d_x: int, d_y: int, k: int):
        return cls(store.projection(f"{name}.U", (d_x, k)), store.projection(f"{name}.V", (d_y, k)))


def project_values(values: ValueBank, p: MultAttentionParams) -> Tensor:
    """Value-side half of the bilinear score, reusable across decoding steps."""
    return values.v @ p.U


def mult_attention(values: ValueBank, h: Tensor, p: MultAttentionParams,
                   projected: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Low-rank bilinear attention: a_i = v_i^T U^T V h, alpha = softmax(a)."""
    if values.v.shape[-1] != p.U.shape[0] or h.shape[-1] != p.V.shape[0]:
        raise DimensionError(
            f"mult_attention: values {values.v.shape} / state {h.shape} vs U {p.U.shape}, V {p.V.shape}")
    vu = projected if projected is not None else project_values(values, p)
    hv = h @ p.V  # [..., k]
    scores = (vu @ hv.reshape(hv.shape + (1,))).reshape(vu.shape[:-1])
    alpha = _masked_softmax(scores, values.mask)
    context = (alpha.reshape(alpha.shape[:-1] + (1, alpha.shape[-1])) @ values.v)
    return alpha, context.reshape(context.shape[:-2] + (values.v.shape[-1],))


def attention_decode_step(y_prev, h: Tensor, values: ValueBank, p_att: MultAttentionParams,
                          p_gru: GruParams, out: OutputProjection, table: EmbeddingTable,
                          projected: Tensor | None = None):
    alpha, context = mult_attention(values, h, p_att, projected)
    x = ad.concat([embed_tokens(y_prev, table), context], axis=-1)
    h_next = gru_cell_step(x, h, p_gru)
    return out(h_next), h_next, alpha


# --- top-down attention LSTM -------------------------------------------------

@dataclass
class LstmParams:
    """Gate-stacked LSTM weights; columns are ordered (input, forget, cell, output)."""

    W: Tensor  # [d_in, 4d]
    U: Tensor  # [d, 4d]
    b: Tensor  # [4d]

    @property
    def d_in(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.U.shape[0]

    @classmethod
    def create(cls, store: ParamStore, name: str, d_in: int, d: int):
        return cls(store.recurrent(f"{name}.W", (d_in, 4 * d)),
                   store.recurrent(f"{name}.U", (d, 4 * d)),
                   store.zeros(f"{name}.b", (4 * d,)))


def lstm_cell_step(x: Tensor, state: tuple[Tensor, Tensor], p: LstmParams) -> tuple[Tensor, Tensor]:
    h, c = state
    if x.shape[-1] != p.d_in or h.shape[-1] != p.d or c.shape[-1] != p.d:
        raise DimensionError(
            f"lstm_cell_step: input {x.shape}, state {h.shape}/{c.shape} vs d_in={p.d_in}, d={p.d}")
    d = p.d
    gates = x @ p.W + h @ p.U + p.b
    ifo = ad.sigmoid(ad.concat([gates[..., : 2 * d], gates[..., 3 * d:]], axis=-1))
    g = ad.tanh(gates[..., 2 * d: 3 * d])
    i, f, o = ifo[..., :d], ifo[..., d: 2 * d], ifo[..., 2 * d:]
    c_next = f * c + i * g
    return o * ad.tanh(c_next), c_next


@dataclass
class TopDownParams:
    att_lstm: LstmParams  # input [h2; v_mean; embed]
    lang_lstm: LstmParams  # input [h1; context]
    w_a: Tensor  # [k]
    W_va: Tensor  # [d, k]
    W_ha: Tensor  # [d_h, k]

    @classmethod
    def create(cls, store: ParamStore, name: str, d: int, d_h: int, d_e: int, k: int):
        return cls(LstmParams.create(store, f"{name}.att_lstm", d_h + d + d_e, d_h),
                   LstmParams.create(store, f"{name}.lang_lstm", d_h + d, d_h),
                   store.normal(f"{name}.w_a", (k,), 1.0 / np.sqrt(k)),
                   store.projection(f"{name}.W_va", (d, k)),
                   store.projection(f"{name}.W_ha", (d_h, k)))


def topdown_scores(values: ValueBank, h1: Tensor, p: TopDownParams,
                   projected: Tensor | None = None) -> Tensor:
    """b_i = w_a^T tanh(W_va v_i + W_ha h1)."""
    va = projected if projected is not None else values.v @ p.W_va  # [..., r, k]
    ha = h1 @ p.W_ha
    hidden = ad.tanh(va + ha.reshape(ha.shape[:-1] + (1, ha.shape[-1])))
    return hidden @ p.w_a


def topdown_decode_step(y_prev, states, values: ValueBank, v_mean: Tensor, p: TopDownParams,
                        out: OutputProjection, table: EmbeddingTable,
                        projected: Tensor | None = None):
    """One step of the two-layer decoder; ``states`` is (h1, c1, h2, c2)."""
    h1, c1, h2, c2 = states
    x1 = ad.concat([h2, v_mean, embed_tokens(y_prev, table)], axis=-1)
    h1, c1 = lstm_cell_step(x1, (h1, c1), p.att_lstm)
    beta = _masked_softmax(topdown_scores(values, h1, p, projected), values.mask)
    context = (beta.reshape(beta.shape[:-1] + (1, beta.shape[-1])) @ values.v)
    context = context.reshape(context.shape[:-2] + (values.v.shape[-1],))
    h2, c2 = lstm_cell_step(ad.concat([h1, context], axis=-1), (h2, c2), p.lang_lstm)
    return out(h2), (h1, c1, h2, c2), beta
