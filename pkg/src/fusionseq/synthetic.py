"""Synthetic "needle" dialogues standing in for real audio-visual dialogue data.

Every dialogue hides key/value pairs in its caption, its audio frames and
(through earlier answers) its dialogue history.  A question names one key and
the gold answer is ``<key> <value>``, or the bare value when
``answer_format = value``.  Because several pairs share a
modality and their positions vary, a model has to condition the context on
the question to find the right value.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .autodiff import SeededRng
from .data import DialogueExample, Round
from .errors import ConfigError

QUESTION_WORDS = ("what", "about")
FILLERS = ("the", "a", "and")
CONNECTIVES = ("is",)
SOURCES = ("caption", "dialogue", "audio")


@dataclass
class SyntheticTaskSpec:
    vocab_size: int = 50
    n_keys: int = 8
    caption_len: int = 12
    caption_pairs: int = 3
    audio_frames: int = 8
    audio_dim: int = 16
    audio_pairs: int = 1
    video_frames: int = 0
    video_dim: int = 16
    n_rounds: int = 3
    needle_caption: float = 0.6
    needle_dialogue: float = 0.2
    needle_audio: float = 0.2
    noise: float = 0.1
    position: str = "variable"
    answer_format: str = "pair"
    seed: int = 0

    @property
    def n_values(self) -> int:
        return self.vocab_size - 4 - self.n_keys - len(QUESTION_WORDS) - len(FILLERS) - len(CONNECTIVES)

    def keys(self) -> list[str]:
        return [f"k{i}" for i in range(self.n_keys)]

    def values(self) -> list[str]:
        return [f"v{i}" for i in range(self.n_values)]

    def validate(self):
        if self.n_values < 2:
            raise ConfigError(f"vocab_size {self.vocab_size} leaves {self.n_values} value tokens")
        if self.caption_pairs + self.audio_pairs > self.n_keys:
            raise ConfigError("more pairs per dialogue than distinct keys")
        if 2 * self.caption_pairs > self.caption_len:
            raise ConfigError("caption too short for its key/value pairs")
        if 2 * self.audio_pairs > self.audio_frames:
            raise ConfigError("too few audio frames for the audio pairs")
        if self.position not in ("fixed", "variable"):
            raise ConfigError(f"position must be 'fixed' or 'variable', got {self.position!r}")
        if self.answer_format not in ("pair", "value"):
            raise ConfigError(f"answer_format must be 'pair' or 'value', got {self.answer_format!r}")
        if self.answer_format == "value" and self.needle_dialogue > 0:
            # history holds earlier answers only, so a bare value cannot be looked up by key
            raise ConfigError("dialogue needles need answer_format = pair")
        probs = (self.needle_caption, self.needle_dialogue, self.needle_audio)
        if min(probs) < 0 or sum(probs) <= 0:
            raise ConfigError("needle placement probabilities must be non-negative and not all zero")
        if self.needle_caption > 0 and self.caption_pairs < 1:
            raise ConfigError("caption needles need at least one caption pair")
        if self.needle_audio > 0 and self.audio_pairs < 1:
            raise ConfigError("audio needles need at least one audio pair")
        if self.video_frames < 0 or self.video_dim < 1:
            raise ConfigError("video_frames must be >= 0 and video_dim >= 1")
        if self.n_rounds < 1 or self.noise < 0:
            raise ConfigError("n_rounds must be >= 1 and noise >= 0")

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


def audio_codebook(spec: SyntheticTaskSpec) -> dict[str, np.ndarray]:
    """Fixed frame pattern for every key and value token."""
    rng = SeededRng(spec.seed).spawn(7919)
    words = spec.keys() + spec.values()
    table = rng.normal((len(words), spec.audio_dim))
    return dict(zip(words, table))


def _place_pairs(rng: SeededRng, length: int, n_pairs: int, fixed: bool) -> list[int]:
    """Start offsets of non-overlapping two-slot pairs."""
    if fixed:
        return [length - 2 * (n_pairs - i) for i in range(n_pairs)]
    # choose gaps between pairs uniformly: stars and bars over the free slots
    free = length - 2 * n_pairs
    cuts = np.sort(rng.integers(0, free + 1, size=n_pairs))
    return [int(c) + 2 * i for i, c in enumerate(cuts)]


def _filler(rng: SeededRng, spec: SyntheticTaskSpec, values: list[str]) -> str:
    if spec.noise > 0 and rng.gen.random() < min(spec.noise, 1.0):
        return values[int(rng.integers(len(values)))]
    return FILLERS[int(rng.integers(len(FILLERS)))]


def _example(idx: int, rng: SeededRng, spec: SyntheticTaskSpec, book: dict[str, np.ndarray]
             ) -> DialogueExample:
    keys, values = spec.keys(), spec.values()
    fixed = spec.position == "fixed"
    chosen = rng.permutation(len(keys))[: spec.caption_pairs + spec.audio_pairs]
    pair_keys = [keys[i] for i in chosen]
    pair_vals = [values[int(i)] for i in rng.integers(0, len(values), size=len(pair_keys))]
    cap_pairs = list(zip(pair_keys[: spec.caption_pairs], pair_vals[: spec.caption_pairs]))
    aud_pairs = list(zip(pair_keys[spec.caption_pairs:], pair_vals[spec.caption_pairs:]))

    caption = [_filler(rng, spec, values) for _ in range(spec.caption_len)]
    for start, (k, v) in zip(_place_pairs(rng, spec.caption_len, len(cap_pairs), fixed), cap_pairs):
        caption[start: start + 2] = [k, v]

    audio = rng.normal((spec.audio_frames, spec.audio_dim), spec.noise)
    for start, (k, v) in zip(_place_pairs(rng, spec.audio_frames, len(aud_pairs), fixed), aud_pairs):
        audio[start] += book[k]
        audio[start + 1] += book[v]

    probs = np.array([spec.needle_caption, spec.needle_dialogue, spec.needle_audio], dtype=float)
    rounds, asked = [], []
    for j in range(spec.n_rounds):
        p = probs.copy()
        if not asked:
            p[1] = 0.0
        if p.sum() <= 0:
            p = np.array([float(bool(cap_pairs)), 0.0, float(bool(aud_pairs))])
        source = SOURCES[int(rng.gen.choice(3, p=p / p.sum()))]
        if source == "caption":
            k, v = cap_pairs[-1] if fixed else cap_pairs[int(rng.integers(len(cap_pairs)))]
        elif source == "audio":
            k, v = aud_pairs[int(rng.integers(len(aud_pairs)))]
        else:
            k, v = asked[int(rng.integers(len(asked)))]
        asked.append((k, v))
        rounds.append(Round(f"what about {k}", f"{k} {v}" if spec.answer_format == "pair" else v))
    video = None
    if spec.video_frames:
        # i3d stand-in: carries no needle, only noise
        video = np.round(rng.normal((spec.video_frames, spec.video_dim)), 6).tolist()
    return DialogueExample(f"syn{spec.seed}-{idx}", " ".join(caption), rounds,
                           np.round(audio, 6).tolist(), video)


def generate_synthetic(spec: SyntheticTaskSpec, n_examples: int, offset: int = 0) -> list[DialogueExample]:
    """Seeded dialogues; ``offset`` selects a disjoint block of example streams."""
    spec.validate()
    book = audio_codebook(spec)
    root = SeededRng(spec.seed)
    return [_example(i, root.spawn(i), spec, book) for i in range(offset, offset + n_examples)]


def needle_label(example: DialogueExample, round_index: int = -1) -> str:
    return example.rounds[round_index].answer.split()[-1]


# --- yes/no question pairs for response revision ---------------------------

_YESNO_STARTS = ("is", "are", "was", "were", "do", "does", "did", "can", "could",
                 "has", "have", "had", "will", "would", "should")
_WH_STARTS = ("what", "where", "who", "how", "why", "which", "when")
_SUBJECTS = ("he", "she", "they", "the man", "the woman", "the person")
_PREDICATES = ("sitting down", "talking", "holding a phone", "in the kitchen", "laughing",
               "drinking water", "walking away", "alone in the room")
_ANSWER_BODIES = ("he is talking", "she seems calm", "they are in a bedroom",
                  "it looks like a kitchen", "i think so", "there is some noise",
                  "the video is short", "he stays in the room")


def generate_qa_pairs(n: int, seed: int = 0) -> list[tuple[list[str], list[str]]]:
    """Question/answer token pairs mixing yes/no and wh-questions and answer openings."""
    rng = SeededRng(seed)
    out = []
    for _ in range(n):
        subj = _SUBJECTS[int(rng.integers(len(_SUBJECTS)))]
        pred = _PREDICATES[int(rng.integers(len(_PREDICATES)))]
        if rng.gen.random() < 0.6:
            start = _YESNO_STARTS[int(rng.integers(len(_YESNO_STARTS)))]
            if rng.gen.random() < 0.2:
                start = start.upper()
        else:
            start = _WH_STARTS[int(rng.integers(len(_WH_STARTS)))] + " is"
        question = f"{start} {subj} {pred}".split()
        body = _ANSWER_BODIES[int(rng.integers(len(_ANSWER_BODIES)))].split()
        opening = int(rng.integers(4))
        if opening == 0:
            answer = ["yes", ","] + body
        elif opening == 1:
            answer = ["no"] + body
        else:
            answer = body
        out.append((question, answer))
    return out
