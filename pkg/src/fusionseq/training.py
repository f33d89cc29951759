"""Maximum-likelihood training: masked NLL, Adam with L2, staircase schedule, early stopping."""

from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import TYPE_CHECKING, Callable

import numpy as np

from . import autodiff as ad
from .autodiff import SeededRng, Tape, Tensor
from .errors import ConfigError, DegenerateBatchError, FormatError, NonFiniteGradientError

if TYPE_CHECKING:
    from .encoders import Vocabulary
    from .model import Batch, FusionModel

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = "fusionseq-ckpt-v1"


@dataclass
class TrainConfig:
    lr: float = 5e-4
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 6000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    l2: float = 1e-4
    dropout_keep: float = 0.5
    batch_size: int = 16
    patience: int = 3
    max_epochs: int = 20
    max_updates: int = 0
    clip_norm: float = 5.0
    seed: int = 0
    revision_updates: int = 200

    def validate(self):
        for name in ("lr", "lr_decay_factor", "beta1", "beta2", "adam_eps"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.lr_decay_every < 1:
            raise ConfigError("lr_decay_every must be at least 1")
        if not 0 < self.dropout_keep <= 1:
            raise ConfigError("dropout_keep must lie in (0, 1]")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.l2 < 0 or self.clip_norm < 0:
            raise ConfigError("l2 and clip_norm must be non-negative")

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


def nll_loss(logits: Tensor, targets, mask) -> Tensor:
    """Mean of -log softmax(logits)[target] over unmasked positions."""
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=logits.dtype)
    count = float(mask.sum())
    if count <= 0:
        raise DegenerateBatchError("every target position is masked")
    logp = ad.log_softmax(logits, axis=-1)
    lead = np.indices(targets.shape)
    picked = logp[tuple(lead) + (targets,)]
    return -(picked * Tensor(mask)).sum() / count


def lr_schedule(t: int, c: TrainConfig) -> float:
    """Staircase decay: lr * factor ** floor(t / every)."""
    return c.lr * c.lr_decay_factor ** (t // c.lr_decay_every)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 0.0
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_config(cls, c: TrainConfig) -> "AdamState":
        return cls(c.beta1, c.beta2, c.adam_eps, c.l2)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray] | None, s: AdamState,
              lr: float) -> None:
    """Bias-corrected Adam update in place; L2 enters as l2 * theta in the gradient.

    A missing gradient counts as zero.  Nothing is modified if any gradient is
    non-finite.
    """
    if grads is None:
        grads = {n: p.grad for n, p in params.items()}
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
    s.t += 1
    b1, b2 = s.beta1, s.beta2
    c1, c2 = 1.0 - b1 ** s.t, 1.0 - b2 ** s.t
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros_like(p.data) if g is None else g
        if s.l2:
            g = g + s.l2 * p.data
        m = s.m.get(name)
        if m is None:
            m = s.m[name] = np.zeros_like(p.data)
            s.v[name] = np.zeros_like(p.data)
        v = s.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + s.eps)


def clip_gradients(params: dict[str, Tensor], max_norm: float) -> float:
    """Rescale all gradients to global norm ``max_norm``; returns the pre-clip norm."""
    total = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params.values() if p.grad is not None))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return total


def train_step(model: "FusionModel", batch: "Batch", adam: AdamState, config: TrainConfig,
               rng: SeededRng | None) -> tuple[float, bool]:
    with Tape() as tape:
        loss = model.loss(batch, rng, config.dropout_keep if rng is not None else 1.0)
    ad.backward(loss, tape)
    norm = clip_gradients(model.params, config.clip_norm)
    adam_step(model.params, None, adam, lr_schedule(adam.t + 1, config))
    return loss.item(), config.clip_norm > 0 and norm > config.clip_norm


def evaluate_loss(model: "FusionModel", batches: list["Batch"]) -> float:
    total, count = 0.0, 0.0
    with ad.no_record():
        for b in batches:
            n = float(np.asarray(b.answer_mask).sum())
            total += model.loss(b).item() * n
            count += n
    return total / count if count else float("nan")


@dataclass
class TrainResult:
    history: list[dict]
    updates: int
    best_epoch: int
    best_dev_loss: float
    stopped_early: bool


def train_loop(model: "FusionModel", train_batches: Callable[[int], list["Batch"]],
               dev_batches: list["Batch"], config: TrainConfig,
               on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train until ``max_epochs``/``max_updates`` or until dev loss stalls for ``patience`` epochs.

    ``train_batches(epoch)`` returns that epoch's shuffled batches.  The
    parameters with the best dev loss are restored on exit.
    """
    config.validate()
    adam = AdamState.from_config(config)
    root = SeededRng(config.seed)
    best, best_epoch, stale = math.inf, 0, 0
    best_params = {n: p.data.copy() for n, p in model.params.items()}
    history: list[dict] = []
    stopped_early = False
    for epoch in range(1, config.max_epochs + 1):
        batches = train_batches(epoch)
        if not batches:
            raise ConfigError("training set is empty")
        losses, clipped = [], 0
        for batch in batches:
            rng = root.spawn(adam.t + 1) if config.dropout_keep < 1.0 else None
            loss, was_clipped = train_step(model, batch, adam, config, rng)
            losses.append(loss)
            clipped += was_clipped
            if config.max_updates and adam.t >= config.max_updates:
                break
        dev = evaluate_loss(model, dev_batches) if dev_batches else float(np.mean(losses))
        record = {"epoch": epoch, "updates": adam.t, "train_loss": float(np.mean(losses)),
                  "dev_loss": dev, "lr": lr_schedule(max(adam.t, 1), config), "clipped": clipped}
        history.append(record)
        if clipped:
            log.info("epoch %d: gradient clipping fired %d times", epoch, clipped)
        if on_epoch is not None:
            on_epoch(record)
        if dev < best:
            best, best_epoch, stale = dev, epoch, 0
            best_params = {n: p.data.copy() for n, p in model.params.items()}
        else:
            stale += 1
            if stale >= config.patience:
                stopped_early = True
                break
        if config.max_updates and adam.t >= config.max_updates:
            break
    for n, p in model.params.items():
        p.data[...] = best_params[n]
    return TrainResult(history, adam.t, best_epoch, best, stopped_early)


# --- checkpoints -----------------------------------------------------------

def save_checkpoint(path, model: "FusionModel", vocab: "Vocabulary", train_config: TrainConfig,
                    extra_params: dict[str, Tensor] | None = None, extra_meta: dict | None = None):
    meta = {"version": CHECKPOINT_VERSION,
            "model_config": asdict(model.config),
            "train_config": asdict(train_config),
            "vocab": vocab.to_list(),
            "params": {n: list(p.shape) for n, p in model.params.items()},
            "extra_params": {n: list(p.shape) for n, p in (extra_params or {}).items()},
            "extra": extra_meta or {}}
    arrays = {f"param/{n}": p.data for n, p in model.params.items()}
    arrays.update({f"extra/{n}": p.data for n, p in (extra_params or {}).items()})
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    Path(path).write_bytes(buf.getvalue())


@dataclass
class Checkpoint:
    model: "FusionModel"
    vocab: "Vocabulary"
    train_config: TrainConfig
    extra_params: dict[str, np.ndarray]
    extra: dict


def load_checkpoint(path) -> Checkpoint:
    from .encoders import Vocabulary
    from .model import FusionModel, ModelConfig

    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            arrays = {k: z[k] for k in z.files if k != "__meta__"}
    except (ValueError, KeyError, OSError) as e:
        raise FormatError(f"{path}: not a checkpoint archive ({e})") from None
    if meta.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
    model = FusionModel(ModelConfig(**meta["model_config"]))
    for name, shape in meta["params"].items():
        if name not in model.params or list(model.params[name].shape) != shape:
            raise FormatError(f"{path}: parameter {name} does not match the configured model")
        model.params[name].data[...] = arrays[f"param/{name}"]
    extra = {n: arrays[f"extra/{n}"] for n in meta["extra_params"]}
    return Checkpoint(model, Vocabulary.from_list(meta["vocab"]), TrainConfig(**meta["train_config"]),
                      extra, meta["extra"])
