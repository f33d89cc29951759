"""The full encoder-fusion-decoder model and its configuration."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import SeededRng, Tensor
from .decoders import (MultAttentionParams, OutputProjection, TopDownParams, ValueBank,
                       attention_decode_step, project_values, simple_decode_step,
                       topdown_decode_step)
from .encoders import (BOS, EmbeddingTable, EncodedModality, GruParams, embed_tokens,
                       encode_sequence, init_bigru)
from .errors import ConfigError
from .fusion import (FUSION_MODES, ConvKernel1x1, FusionWeights, MultiHeadParams,
                     MultiStageParams, VariantParams, conv1x1_fuse, fuse_variant,
                     fuse_weighted_sum, multi_stage_fuse)
from .params import ParamStore

TEXT_MODALITIES = ("caption", "dialogue", "question", "summary")
FRAME_MODALITIES = ("audio", "video")
# feature-selection flag -> modality name
FEATURE_FLAGS = {"caption": "caption", "dialogue": "dialogue", "question": "question",
                 "vggish": "audio", "i3d": "video", "summary": "summary"}
MODALITY_ORDER = ("caption", "dialogue", "question", "audio", "video", "summary")
DECODERS = ("simple", "attention", "topdown")


@dataclass
class ModelConfig:
    vocab_size: int = 0
    d: int = 256
    d_e: int = 300
    d_a: int = 128
    d_v: int = 256
    n_heads: int = 4
    att_dim: int = 128
    fusion: str = "weight"
    multi_stage: bool = False
    conv_channels: int = 0
    decoder: str = "simple"
    attention_values: str = "all"
    use_caption: bool = True
    use_dialogue: bool = True
    use_vggish: bool = True
    use_i3d: bool = False
    use_summary: bool = False
    dtype: str = "float64"
    beam_size: int = 5
    max_answer_len: int = 20
    length_norm: bool = False

    def validate(self):
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"unknown fusion mode {self.fusion!r}; choose from {FUSION_MODES}")
        if self.decoder not in DECODERS:
            raise ConfigError(f"unknown decoder {self.decoder!r}; choose from {DECODERS}")
        if self.d < 2 or self.d % 2:
            raise ConfigError(f"d must be a positive even number, got {self.d}")
        if self.d % self.n_heads:
            raise ConfigError(f"d={self.d} not divisible by n_heads={self.n_heads}")
        if self.multi_stage and not (self.use_caption or self.use_dialogue):
            raise ConfigError("multi-stage fusion needs caption or dialogue enabled")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        mods = self.modalities()
        for m in self.value_modalities():
            if m not in mods:
                raise ConfigError(f"attention value {m!r} is not an active modality")

    def modalities(self) -> list[str]:
        on = {"caption": self.use_caption, "dialogue": self.use_dialogue, "question": True,
              "audio": self.use_vggish, "video": self.use_i3d, "summary": self.use_summary}
        return [m for m in MODALITY_ORDER if on[m]]

    def value_modalities(self) -> list[str]:
        if self.attention_values.strip() in ("", "all"):
            return self.modalities()
        names = [FEATURE_FLAGS.get(v.strip(), v.strip()) for v in self.attention_values.split(",")]
        return [m for m in MODALITY_ORDER if m in names]

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


@dataclass
class Batch:
    """Padded model inputs for B instances."""

    tokens: dict[str, tuple[np.ndarray, np.ndarray]]  # modality -> (ids [B,T], mask [B,T])
    frames: dict[str, tuple[np.ndarray, np.ndarray]]  # modality -> ([B,T,d], mask [B,T])
    answer_in: np.ndarray  # [B, L], starts with BOS
    answer_out: np.ndarray  # [B, L], ends with EOS
    answer_mask: np.ndarray  # [B, L]
    ids: list[str] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.answer_in.shape[0]


@dataclass
class DecodeContext:
    state: tuple
    values: ValueBank | None = None
    projected: Tensor | None = None
    v_mean: Tensor | None = None

    def select(self, rows) -> "DecodeContext":
        rows = np.asarray(rows)
        return DecodeContext(tuple(s[rows] for s in self.state),
                             None if self.values is None else self.values.take(rows),
                             None if self.projected is None else self.projected[rows],
                             None if self.v_mean is None else self.v_mean[rows])


class FusionModel:
    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        if config.vocab_size < 5:
            raise ConfigError("vocab_size must cover the reserved tokens plus at least one word")
        self.config = c = config
        self.store = store = ParamStore(SeededRng(seed), np.dtype(c.dtype))
        self.modalities = c.modalities()
        self.embed = EmbeddingTable.create(store, "embed", c.vocab_size, c.d_e)
        self.encoders = {m: GruParams.create(store, f"enc.{m}", c.d_e, c.d) for m in self.modalities}
        widths = {"audio": c.d_a, "video": c.d_v}
        self.frame_proj = {
            m: (store.projection(f"proj.{m}.W", (widths[m], c.d_e)), store.zeros(f"proj.{m}.b", (c.d_e,)))
            for m in self.modalities if m in FRAME_MODALITIES}

        self.multi_stage = None
        if c.multi_stage:
            self.multi_stage = MultiStageParams(
                MultiHeadParams.create(store, "stage.fuse", c.d, c.n_heads),
                MultiHeadParams.create(store, "stage.self", c.d, c.n_heads),
                init_bigru(store, "stage.fuse_reader", c.d, c.d),
                init_bigru(store, "stage.self_reader", c.d, c.d))
        n = len(self.modalities) + (2 if c.multi_stage else 0)
        self.n_fused = n
        self.fusion_weights = self.conv = self.w_cat = None
        if c.fusion == "weight":
            self.fusion_weights = FusionWeights.create(store, "fusion.w", n)
        elif c.fusion == "conv1x1":
            n_c = c.conv_channels or n
            self.conv = ConvKernel1x1.create(store, "fusion.conv", n, n_c)
            self.fusion_weights = FusionWeights.create(store, "fusion.w", n_c)
        elif c.fusion == "concat":
            self.w_cat = store.projection("fusion.w_cat", (n * c.d, c.d))

        self.out = OutputProjection.create(store, "out", c.d, c.vocab_size)
        if c.decoder == "simple":
            self.dec_gru = GruParams.create(store, "dec.gru", c.d_e, c.d)
        elif c.decoder == "attention":
            self.att = MultAttentionParams.create(store, "dec.att", c.d, c.d, c.att_dim)
            self.dec_gru = GruParams.create(store, "dec.gru", c.d_e + c.d, c.d)
        else:
            self.topdown = TopDownParams.create(store, "dec.topdown", c.d, c.d, c.d_e, c.att_dim)

    @property
    def params(self) -> dict[str, Tensor]:
        return self.store.params

    # -- encoding -------------------------------------------------------------

    def encode(self, batch: Batch, rng: SeededRng | None = None, keep: float = 1.0
               ) -> dict[str, EncodedModality]:
        """Run every active modality encoder; ``rng`` enables input dropout."""
        out = {}
        for m in self.modalities:
            if m in FRAME_MODALITIES:
                frames, mask = batch.frames[m]
                x = Tensor(np.asarray(frames, dtype=self.store.dtype))
                if rng is not None and keep < 1.0:
                    x = ad.dropout(x, rng.keep_mask(x.shape, keep), keep)
                W, b = self.frame_proj[m]
                x = x @ W + b
            else:
                ids, mask = batch.tokens[m]
                x = embed_tokens(ids, self.embed)
                if rng is not None and keep < 1.0:
                    x = ad.dropout(x, rng.keep_mask(x.shape, keep), keep)
            out[m] = encode_sequence(x, self.encoders[m], mask=mask, name=m)
        return out

    def fuse(self, encs: dict[str, EncodedModality]) -> Tensor:
        lasts = [encs[m].last for m in self.modalities]
        if self.multi_stage is not None:
            z_fusion, z_self = multi_stage_fuse(encs.get("caption"), encs.get("dialogue"),
                                                encs["question"], self.multi_stage)
            lasts += [z_fusion, z_self]
        mode = self.config.fusion
        if mode == "weight":
            return fuse_weighted_sum(lasts, self.fusion_weights).z
        if mode == "conv1x1":
            return conv1x1_fuse(lasts, self.conv, self.fusion_weights).z
        return fuse_variant(lasts, mode, VariantParams(w_cat=self.w_cat))

    def value_bank(self, encs: dict[str, EncodedModality]) -> ValueBank:
        chosen = [encs[m] for m in self.config.value_modalities()]
        v = ad.concat([e.states for e in chosen], axis=-2)
        if all(e.mask is None for e in chosen):
            return ValueBank(v)
        mask = np.concatenate([np.ones(e.states.shape[:-1]) if e.mask is None else np.asarray(e.mask, float)
                               for e in chosen], axis=-1)
        return ValueBank(v, mask)

    # -- decoding -------------------------------------------------------------

    def start(self, batch: Batch, rng: SeededRng | None = None, keep: float = 1.0) -> DecodeContext:
        encs = self.encode(batch, rng, keep)
        z = self.fuse(encs)
        kind = self.config.decoder
        if kind == "simple":
            return DecodeContext((z,))
        values = self.value_bank(encs)
        if kind == "attention":
            return DecodeContext((z,), values, project_values(values, self.att))
        zeros = Tensor(np.zeros(z.shape, dtype=z.dtype))
        return DecodeContext((z, zeros, z, zeros), values, values.v @ self.topdown.W_va, values.mean())

    def step(self, tokens, ctx: DecodeContext) -> tuple[Tensor, DecodeContext]:
        kind = self.config.decoder
        if kind == "simple":
            logits, h = simple_decode_step(tokens, ctx.state[0], self.dec_gru, self.out, self.embed)
            state = (h,)
        elif kind == "attention":
            logits, h, _ = attention_decode_step(tokens, ctx.state[0], ctx.values, self.att,
                                                 self.dec_gru, self.out, self.embed, ctx.projected)
            state = (h,)
        else:
            logits, state, _ = topdown_decode_step(tokens, ctx.state, ctx.values, ctx.v_mean,
                                                   self.topdown, self.out, self.embed, ctx.projected)
        return logits, DecodeContext(state, ctx.values, ctx.projected, ctx.v_mean)

    def forward_logits(self, batch: Batch, rng: SeededRng | None = None, keep: float = 1.0) -> Tensor:
        """Teacher-forced logits ``[B, L, |vocab|]``: exactly one step per target position."""
        ctx = self.start(batch, rng, keep)
        steps = []
        for t in range(batch.answer_in.shape[1]):
            logits, ctx = self.step(batch.answer_in[:, t], ctx)
            steps.append(logits)
        return ad.stack(steps, axis=1)

    def loss(self, batch: Batch, rng: SeededRng | None = None, keep: float = 1.0) -> Tensor:
        from .training import nll_loss
        return nll_loss(self.forward_logits(batch, rng, keep), batch.answer_out, batch.answer_mask)

    def decoder_for(self, batch: Batch) -> "ModelDecoder":
        return ModelDecoder(self, batch)


class ModelDecoder:
    """Single-example adapter exposing the step interface used by beam search."""

    def __init__(self, model: FusionModel, batch: Batch):
        if batch.size != 1:
            raise ValueError("decoder adapter expects a batch of one instance")
        self.model = model
        self.batch = batch
        self.bos = BOS
        from .encoders import EOS
        self.eos = EOS
        self.vocab_size = model.config.vocab_size

    def initial(self) -> DecodeContext:
        with ad.no_record():
            return self.model.start(self.batch)

    def step(self, tokens: np.ndarray, ctx: DecodeContext) -> tuple[np.ndarray, DecodeContext]:
        with ad.no_record():
            logits, ctx = self.model.step(np.asarray(tokens, dtype=np.int64), ctx)
            logp = ad.log_softmax(logits, axis=-1).data
        return logp, ctx

    def reorder(self, ctx: DecodeContext, rows) -> DecodeContext:
        return ctx.select(rows)
