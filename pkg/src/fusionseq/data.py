"""Dialogue dataset format, vocabulary building, instance construction and batching."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .autodiff import SeededRng
from .encoders import BOS, EOS, PAD, EmbeddingTable, Vocabulary
from .errors import ConfigError, DatasetError, FormatError
from .model import Batch


def tokenize(text: str) -> list[str]:
    return text.lower().split()


@dataclass
class Round:
    question: str
    answer: str


@dataclass
class DialogueExample:
    id: str
    caption: str
    rounds: list[Round]
    audio_features: list[list[float]]
    video_features: list[list[float]] | None = None
    summary: str | None = None

    def to_dict(self) -> dict:
        d = {"id": self.id, "caption": self.caption,
             "rounds": [{"question": r.question, "answer": r.answer} for r in self.rounds],
             "audio_features": self.audio_features}
        if self.video_features is not None:
            d["video_features"] = self.video_features
        if self.summary is not None:
            d["summary"] = self.summary
        return d

    @classmethod
    def from_dict(cls, d: dict, line: int | None = None) -> "DialogueExample":
        if not isinstance(d, dict):
            raise DatasetError("record is not a JSON object", line)
        for key in ("id", "caption", "rounds", "audio_features"):
            if key not in d:
                raise DatasetError(f"missing required field {key!r}", line)
        rounds = d["rounds"]
        if not isinstance(rounds, list) or not rounds:
            raise DatasetError("'rounds' must be a non-empty list", line)
        parsed = []
        for i, r in enumerate(rounds):
            if not isinstance(r, dict) or not isinstance(r.get("question"), str) \
                    or not isinstance(r.get("answer"), str):
                raise DatasetError(f"round {i} needs string 'question' and 'answer'", line)
            parsed.append(Round(r["question"], r["answer"]))
        audio = _frames(d["audio_features"], "audio_features", line)
        video = d.get("video_features")
        if video is not None:
            video = _frames(video, "video_features", line)
        summary = d.get("summary")
        if summary is not None and not isinstance(summary, str):
            raise DatasetError("'summary' must be a string", line)
        if not isinstance(d["caption"], str):
            raise DatasetError("'caption' must be a string", line)
        return cls(str(d["id"]), d["caption"], parsed, audio, video, summary)


def _frames(value, key: str, line: int | None) -> list[list[float]]:
    if not isinstance(value, list) or not value:
        raise DatasetError(f"{key!r} must be a non-empty list of frames", line)
    width = None
    for frame in value:
        if not isinstance(frame, list) or not all(isinstance(x, (int, float)) for x in frame):
            raise DatasetError(f"{key!r} frames must be lists of numbers", line)
        if width is None:
            width = len(frame)
        elif len(frame) != width:
            raise DatasetError(f"{key!r} frames have inconsistent widths", line)
    return [[float(x) for x in frame] for frame in value]


def load_dataset(path) -> list[DialogueExample]:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as e:
                raise DatasetError(f"malformed JSON ({e.msg})", lineno) from None
            examples.append(DialogueExample.from_dict(record, lineno))
    return examples


def save_dataset(path, examples: Iterable[DialogueExample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_dict(), separators=(",", ":")) + "\n")


@dataclass
class FeatureSelection:
    caption: bool = True
    dialogue: bool = True
    question: bool = True
    vggish: bool = True
    i3d: bool = False
    summary: bool = False

    def __post_init__(self):
        if not self.question:
            raise ConfigError("the question modality cannot be disabled")

    @classmethod
    def from_model_config(cls, c) -> "FeatureSelection":
        return cls(c.use_caption, c.use_dialogue, True, c.use_vggish, c.use_i3d, c.use_summary)


def example_texts(ex: DialogueExample) -> Iterable[list[str]]:
    yield tokenize(ex.caption)
    if ex.summary:
        yield tokenize(ex.summary)
    for r in ex.rounds:
        yield tokenize(r.question)
        yield tokenize(r.answer)


def build_vocabulary(examples: list[DialogueExample], min_freq: int = 2) -> Vocabulary:
    if not examples:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    return Vocabulary.from_corpus((s for ex in examples for s in example_texts(ex)), min_freq)


@dataclass
class Instance:
    """One question/answer round with its causal dialogue history."""

    id: str
    caption: list[str]
    dialogue: list[str]
    question: list[str]
    answer: list[str]
    audio: np.ndarray
    video: np.ndarray | None = None
    summary: list[str] = field(default_factory=list)


def make_instances(examples: list[DialogueExample]) -> list[Instance]:
    """Round k sees the answers of rounds < k, EOS-separated, as its dialogue history."""
    out = []
    for ex in examples:
        caption = tokenize(ex.caption)
        audio = np.asarray(ex.audio_features, dtype=np.float64)
        video = None if ex.video_features is None else np.asarray(ex.video_features, dtype=np.float64)
        summary = tokenize(ex.summary) if ex.summary else []
        history: list[str] = []
        for k, r in enumerate(ex.rounds):
            out.append(Instance(f"{ex.id}#{k}", caption, list(history), tokenize(r.question),
                                tokenize(r.answer), audio, video, summary))
            if history:
                history.append("<eos>")
            history.extend(tokenize(r.answer))
    return out


def _pad_ids(seqs: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    # empty sequences become a single PAD position so every encoder sees T >= 1
    T = max(1, max(len(s) for s in seqs))
    ids = np.full((len(seqs), T), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), T))
    for i, s in enumerate(seqs):
        if s:
            ids[i, : len(s)] = s
            mask[i, : len(s)] = 1.0
        else:
            mask[i, 0] = 1.0
    return ids, mask


def _pad_frames(frames: list[np.ndarray | None], width: int) -> tuple[np.ndarray, np.ndarray]:
    frames = [np.zeros((1, width)) if f is None or len(f) == 0 else np.asarray(f) for f in frames]
    T = max(len(f) for f in frames)
    out = np.zeros((len(frames), T, width))
    mask = np.zeros((len(frames), T))
    for i, f in enumerate(frames):
        if f.shape[1] != width:
            raise FormatError(f"feature width {f.shape[1]} does not match configured {width}")
        out[i, : len(f)] = f
        mask[i, : len(f)] = 1.0
    return out, mask


def collate(instances: list[Instance], vocab: Vocabulary, selection: FeatureSelection,
            d_a: int | None = None, d_v: int | None = None) -> Batch:
    tokens = {}
    frames = {}
    for flag, name in (("caption", "caption"), ("dialogue", "dialogue"),
                       ("question", "question"), ("summary", "summary")):
        if getattr(selection, flag):
            tokens[name] = _pad_ids([vocab.encode(getattr(x, name)) for x in instances])
    if selection.vggish:
        width = d_a or instances[0].audio.shape[1]
        frames["audio"] = _pad_frames([x.audio for x in instances], width)
    if selection.i3d:
        width = d_v or next((x.video.shape[1] for x in instances if x.video is not None), 1)
        frames["video"] = _pad_frames([x.video for x in instances], width)
    answers = [vocab.encode(x.answer) for x in instances]
    L = max(len(a) for a in answers) + 1
    a_in = np.full((len(answers), L), PAD, dtype=np.int64)
    a_out = np.full((len(answers), L), PAD, dtype=np.int64)
    a_mask = np.zeros((len(answers), L))
    for i, a in enumerate(answers):
        a_in[i, : len(a) + 1] = [BOS] + a
        a_out[i, : len(a) + 1] = a + [EOS]
        a_mask[i, : len(a) + 1] = 1.0
    return Batch(tokens, frames, a_in, a_out, a_mask, [x.id for x in instances])


def make_batches(instances: list[Instance], vocab: Vocabulary, selection: FeatureSelection,
                 batch_size: int, seed: int | None = None, epoch: int = 0,
                 d_a: int | None = None, d_v: int | None = None) -> list[Batch]:
    """Split into padded batches; with a seed the order is shuffled per epoch."""
    if batch_size < 1:
        raise ConfigError("batch_size must be at least 1")
    order = np.arange(len(instances))
    if seed is not None:
        order = SeededRng(seed).spawn(epoch).permutation(len(instances))
    return [collate([instances[i] for i in order[s: s + batch_size]], vocab, selection, d_a, d_v)
            for s in range(0, len(instances), batch_size)]


def load_pretrained_embeddings(path, vocab: Vocabulary, table: EmbeddingTable) -> float:
    """Overwrite rows of ``table`` for words found in a text vector file.

    Returns the fraction of non-reserved vocabulary entries covered.
    """
    covered = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.rstrip("\n").split(" ")
            if not raw.strip():
                continue
            word, values = parts[0], parts[1:]
            if len(values) != table.dim:
                raise FormatError(f"line {lineno}: vector width {len(values)}, expected {table.dim}")
            if word in vocab.stoi and vocab.stoi[word] != PAD:
                table.weight.data[vocab.stoi[word]] = np.array(values, dtype=np.float64)
                covered.add(word)
    n = len(vocab) - 4
    return len(covered) / n if n > 0 else 0.0


def export_embeddings(path, vocab: Vocabulary, table: EmbeddingTable) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, word in enumerate(vocab.itos):
            if i < 4:
                continue
            fh.write(word + " " + " ".join(repr(float(x)) for x in table.weight.data[i]) + "\n")


def split_holdout(examples: list, fraction: float, seed: int) -> tuple[list, list]:
    order = SeededRng(seed).permutation(len(examples))
    n_dev = max(1, int(math.ceil(len(examples) * fraction))) if len(examples) > 1 else 0
    dev = [examples[i] for i in sorted(order[:n_dev])]
    train = [examples[i] for i in sorted(order[n_dev:])]
    return train, dev
