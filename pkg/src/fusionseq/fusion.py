"""Fusion of per-modality encodings into one decoder-initialising vector."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .encoders import EncodedModality, GruParams, bigru_read, last_valid
from .errors import ConfigError, DegenerateWeightsError
from .params import ParamStore

WEIGHT_EPS = 1e-8
FUSION_MODES = ("weight", "sum", "prod", "concat", "conv1x1")
MASKED_SCORE = -1e9


@dataclass
class FusionWeights:
    w: Tensor  # [n]

    @classmethod
    def create(cls, store: ParamStore, name: str, n: int):
        return cls(store.ones(name, (n,)))


@dataclass
class FusedState:
    z: Tensor
    z_fusion_last: Tensor | None = None
    z_self_last: Tensor | None = None


def _weighted_mean(stacked: Tensor, w: FusionWeights) -> Tensor:
    # stacked: [..., n, d]
    n = stacked.shape[-2]
    if w.w.shape != (n,):
        raise DimensionError(f"weighted sum: {n} inputs but weights of shape {w.w.shape}")
    total = float(w.w.data.sum())
    if abs(total) <= WEIGHT_EPS:
        raise DegenerateWeightsError(f"fusion weights sum to {total:.3g}")
    num = (w.w.reshape(n, 1) * stacked).sum(axis=-2)
    return num / w.w.sum()


def fuse_weighted_sum(lasts: list[Tensor], w: FusionWeights) -> FusedState:
    """z = sum_i w_i z_i / sum_i w_i over the last states of each modality."""
    return FusedState(_weighted_mean(ad.stack(lasts, axis=-2), w))


@dataclass
class VariantParams:
    weights: FusionWeights | None = None
    w_cat: Tensor | None = None  # [n * d, d_h], input-major


def fuse_variant(lasts: list[Tensor], mode: str, params: VariantParams | None = None) -> Tensor:
    if mode == "prod":
        out = lasts[0]
        for t in lasts[1:]:
            out = out * t
        return out
    if mode == "sum":
        out = lasts[0]
        for t in lasts[1:]:
            out = out + t
        return out
    if mode == "concat":
        if params is None or params.w_cat is None:
            raise ConfigError("concat fusion needs a projection matrix")
        cat = ad.concat(lasts, axis=-1)
        if cat.shape[-1] != params.w_cat.shape[0]:
            raise DimensionError(
                f"concat fusion: concatenated width {cat.shape[-1]} vs projection {params.w_cat.shape}")
        return cat @ params.w_cat
    if mode == "weight":
        if params is None or params.weights is None:
            raise ConfigError("weighted fusion needs scalar weights")
        return fuse_weighted_sum(lasts, params.weights).z
    raise ConfigError(f"unknown fusion mode {mode!r}")


@dataclass
class ConvKernel1x1:
    K: Tensor  # [n_c, n]
    bias: Tensor  # [n_c]

    @property
    def channels(self) -> int:
        return self.K.shape[0]

    @classmethod
    def create(cls, store: ParamStore, name: str, n: int, n_c: int):
        if n_c < 1:
            raise ConfigError("1x1 convolution needs at least one output channel")
        return cls(store.projection(f"{name}.K", (n_c, n)), store.zeros(f"{name}.bias", (n_c,)))


def conv1x1_fuse(lasts: list[Tensor], k: ConvKernel1x1, w: FusionWeights) -> FusedState:
    """Mix modality channels with a shared 1x1 kernel, then take the weighted mean."""
    stacked = ad.stack(lasts, axis=-2)  # [..., n, d]
    if k.K.shape[1] != stacked.shape[-2]:
        raise DimensionError(f"conv1x1: kernel {k.K.shape} for {stacked.shape[-2]} modalities")
    mixed = k.K @ stacked + k.bias.reshape(k.channels, 1)
    return FusedState(_weighted_mean(mixed, w))


@dataclass
class MultiHeadParams:
    wq: list[Tensor] = field(default_factory=list)  # each [d, d_k]
    wk: list[Tensor] = field(default_factory=list)
    wv: list[Tensor] = field(default_factory=list)
    wo: Tensor | None = None  # [n_heads * d_k, d]

    @property
    def n_heads(self) -> int:
        return len(self.wq)

    @property
    def d(self) -> int:
        return self.wq[0].shape[0]

    @property
    def d_k(self) -> int:
        return self.wq[0].shape[1]

    @classmethod
    def create(cls, store: ParamStore, name: str, d: int, n_heads: int):
        if n_heads < 1 or d % n_heads:
            raise ConfigError(f"model width {d} is not divisible by {n_heads} heads")
        dk = d // n_heads
        p = cls()
        for i in range(n_heads):
            p.wq.append(store.projection(f"{name}.q{i}", (d, dk)))
            p.wk.append(store.projection(f"{name}.k{i}", (d, dk)))
            p.wv.append(store.projection(f"{name}.v{i}", (d, dk)))
        p.wo = store.projection(f"{name}.o", (n_heads * dk, d))
        return p


def mask_bias(mask, dtype=np.float64) -> Tensor | None:
    """Additive score bias that removes padded keys; broadcasts over query rows."""
    if mask is None:
        return None
    m = np.asarray(mask)
    return Tensor(np.where(m[..., None, :] > 0, 0.0, MASKED_SCORE).astype(dtype))


def multi_head_attention(queries: Tensor, keyvalues: Tensor, p: MultiHeadParams,
                         kv_mask=None, weights_out: list | None = None) -> Tensor:
    """Multi-head attention whose second argument supplies both keys and values.

    Each head computes softmax(Q Wq (V Wk)^T / sqrt(d_k)) V Wv; heads are
    concatenated, projected by Wo, and the queries are added back as a
    residual.  Attention matrices are appended to ``weights_out`` if given.
    """
    for t, what in ((queries, "queries"), (keyvalues, "keys/values")):
        if t.shape[-1] != p.d:
            raise DimensionError(f"multi_head_attention: {what} width {t.shape[-1]} != {p.d}")
    scale = 1.0 / math.sqrt(p.d_k)
    bias = mask_bias(kv_mask, queries.dtype)
    heads = []
    for wq, wk, wv in zip(p.wq, p.wk, p.wv):
        scores = (queries @ wq) @ ad.transpose(keyvalues @ wk) * scale
        if bias is not None:
            scores = scores + bias
        attn = ad.softmax(scores, axis=-1)
        if weights_out is not None:
            weights_out.append(attn)
        heads.append(attn @ (keyvalues @ wv))
    joined = heads[0] if len(heads) == 1 else ad.concat(heads, axis=-1)
    return joined @ p.wo + queries


@dataclass
class MultiStageParams:
    fuse: MultiHeadParams
    self_attn: MultiHeadParams
    fuse_reader: tuple[GruParams, GruParams]
    self_reader: tuple[GruParams, GruParams]


def concat_context(parts: list[EncodedModality]) -> tuple[Tensor, np.ndarray | None]:
    """Time-concatenate encodings, packing real positions to the front."""
    states = ad.concat([p.states for p in parts], axis=-2)
    if all(p.mask is None for p in parts):
        return states, None
    masks = [np.ones(p.states.shape[:-1]) if p.mask is None else np.asarray(p.mask, float)
             for p in parts]
    full = np.concatenate(masks, axis=-1)
    # stable sort puts real positions first while keeping their order
    order = np.argsort(-full, axis=-1, kind="stable")
    packed = np.take_along_axis(full, order, axis=-1)
    lead = np.indices(order.shape[:-1])
    idx = tuple(np.broadcast_to(l[..., None], order.shape) for l in lead) + (order,)
    return states[idx], packed


def multi_stage_fuse(zC: EncodedModality | None, zD: EncodedModality | None, zQ: EncodedModality,
                     p: MultiStageParams) -> tuple[Tensor, Tensor]:
    """Question-into-context attention, then self-attention, each read by a BiGRU.

    Returns the final rows of the two reader outputs.
    """
    parts = [m for m in (zC, zD) if m is not None]
    if not parts:
        raise ConfigError("multi-stage fusion needs caption or dialogue context")
    context, ctx_mask = concat_context(parts)
    u_fusion = multi_head_attention(context, zQ.states, p.fuse, kv_mask=zQ.mask)
    z_fusion = bigru_read(u_fusion, *p.fuse_reader, mask=ctx_mask)
    u_self = multi_head_attention(z_fusion, z_fusion, p.self_attn, kv_mask=ctx_mask)
    z_self = bigru_read(u_self, *p.self_reader, mask=ctx_mask)
    return last_valid(z_fusion, ctx_mask), last_valid(z_self, ctx_mask)
