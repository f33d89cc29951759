"""Token embeddings, GRU cells and the per-modality sequence encoders.

All functions accept optional leading batch axes: a sequence is
``[..., T, d_in]`` and a state is ``[..., d]``.  Masks are ``[..., T]``
arrays with 1 on real positions; padded positions carry the previous state
forward unchanged so the final state is the state at the last real step.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .errors import ConfigError, EmptySequenceError, VocabularyError
from .params import ParamStore

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")


class Vocabulary:
    """Token/id mapping with PAD=0, BOS=1, EOS=2, UNK=3."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.itos):
                raise VocabularyError(f"token id {i} outside vocabulary of {len(self.itos)}")
            if strip and i == EOS:
                break
            if strip and i in (PAD, BOS):
                continue
            out.append(self.itos[i])
        return out

    @classmethod
    def from_corpus(cls, sentences: Iterable[list[str]], min_freq: int = 2) -> "Vocabulary":
        counts = Counter(tok for sent in sentences for tok in sent)
        kept = [t for t, c in counts.items() if c >= min_freq and t not in RESERVED]
        kept.sort(key=lambda t: (-counts[t], t))
        return cls(kept)

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, itos: list[str]) -> "Vocabulary":
        if tuple(itos[:4]) != RESERVED:
            raise VocabularyError("vocabulary must start with the reserved tokens")
        return cls(itos[4:])


@dataclass
class EmbeddingTable:
    weight: Tensor

    @property
    def vocab_size(self) -> int:
        return self.weight.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def create(cls, store: ParamStore, name: str, vocab_size: int, dim: int, std: float = 1.0):
        w = store.normal(name, (vocab_size, dim), std)
        w.data[PAD] = 0.0
        return cls(w)


def embed_tokens(ids, table: EmbeddingTable) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.vocab_size):
        bad = ids[(ids < 0) | (ids >= table.vocab_size)][0]
        raise VocabularyError(f"token id {bad} outside vocabulary of {table.vocab_size}")
    return ad.embedding(table.weight, ids, padding_idx=PAD)


@dataclass
class GruParams:
    """Gate-stacked GRU weights; columns are ordered (update, reset, candidate)."""

    W: Tensor  # d_in x 3d
    U: Tensor  # d x 3d
    b: Tensor  # 3d

    @property
    def d_in(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.U.shape[0]

    @classmethod
    def create(cls, store: ParamStore, name: str, d_in: int, d: int):
        return cls(store.recurrent(f"{name}.W", (d_in, 3 * d)),
                   store.recurrent(f"{name}.U", (d, 3 * d)),
                   store.zeros(f"{name}.b", (3 * d,)))


def _check_width(op: str, t: Tensor, width: int, what: str):
    if t.shape[-1] != width:
        raise DimensionError(f"{op}: {what} has width {t.shape[-1]}, expected {width}")


def _gru_update(xw: Tensor, h: Tensor, U_zr: Tensor, U_h: Tensor, d: int, m=None) -> Tensor:
    zr = ad.sigmoid(xw[..., : 2 * d] + h @ U_zr)
    z, r = zr[..., :d], zr[..., d:]
    cand = ad.tanh(xw[..., 2 * d:] + (r * h) @ U_h)
    if m is not None:
        z = z * m
    return h + z * (cand - h)


def gru_cell_step(x: Tensor, h: Tensor, p: GruParams) -> Tensor:
    """One GRU update: h' = (1 - z) * h + z * tanh(x W_h + (r * h) U_h + b_h)."""
    _check_width("gru_cell_step", x, p.d_in, "input")
    _check_width("gru_cell_step", h, p.d, "state")
    d = p.d
    return _gru_update(x @ p.W + p.b, h, p.U[:, : 2 * d], p.U[:, 2 * d:], d)


@dataclass
class EncodedModality:
    name: str
    states: Tensor  # [..., T, d]
    last: Tensor  # [..., d]
    mask: np.ndarray | None = None  # [..., T]

    @property
    def length(self) -> int:
        return self.states.shape[-2]


def _zeros_state(like: Tensor, lead: tuple, d: int) -> Tensor:
    return Tensor(np.zeros(lead + (d,), dtype=like.dtype))


def _run_gru(x: Tensor, p: GruParams, h0: Tensor | None, mask, reverse: bool) -> list[Tensor]:
    if x.ndim < 2:
        raise DimensionError(f"encode_sequence: expected [..., T, d_in], got {x.shape}")
    T = x.shape[-2]
    if T == 0:
        raise EmptySequenceError("cannot encode an empty sequence; substitute a PAD frame")
    _check_width("encode_sequence", x, p.d_in, "input")
    d = p.d
    h = h0 if h0 is not None else _zeros_state(x, x.shape[:-2], d)
    xw = x @ p.W + p.b
    U_zr, U_h = p.U[:, : 2 * d], p.U[:, 2 * d:]
    m = None if mask is None else np.asarray(mask, dtype=x.dtype)[..., None]
    steps = range(T - 1, -1, -1) if reverse else range(T)
    states: list[Tensor] = [None] * T  # type: ignore[list-item]
    for t in steps:
        h = _gru_update(xw[..., t, :], h, U_zr, U_h, d, None if m is None else m[..., t, :])
        states[t] = h
    return states


def encode_sequence(x: Tensor, p: GruParams, h0: Tensor | None = None,
                    mask=None, name: str = "") -> EncodedModality:
    states = _run_gru(x, p, h0, mask, reverse=False)
    return EncodedModality(name, ad.stack(states, axis=-2), states[-1], mask)


def init_bigru(store: ParamStore, name: str, d_in: int, d: int) -> tuple[GruParams, GruParams]:
    if d % 2:
        raise ConfigError(f"bidirectional reader width must be even, got {d}")
    return (GruParams.create(store, f"{name}.fwd", d_in, d // 2),
            GruParams.create(store, f"{name}.bwd", d_in, d // 2))


def bigru_read(u: Tensor, fwd: GruParams, bwd: GruParams, mask=None) -> Tensor:
    """Concatenate forward and backward GRU states at every position."""
    if fwd.d != bwd.d:
        raise ConfigError(f"reader directions differ in width: {fwd.d} vs {bwd.d}")
    f = _run_gru(u, fwd, None, mask, reverse=False)
    b = _run_gru(u, bwd, None, mask, reverse=True)
    return ad.concat([ad.stack(f, axis=-2), ad.stack(b, axis=-2)], axis=-1)


def last_valid(states: Tensor, mask=None) -> Tensor:
    """Row at the final unmasked position of ``states`` ([..., T, d])."""
    if mask is None:
        return states[..., -1, :]
    mask = np.asarray(mask)
    last = mask.sum(axis=-1).astype(np.int64) - 1
    if states.ndim == 2:
        return states[int(last), :]
    lead = np.indices(last.shape)
    return states[tuple(lead) + (last,)]
