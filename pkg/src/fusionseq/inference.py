"""Beam-search answer generation and yes/no response revision."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Protocol

import numpy as np

from . import autodiff as ad
from .autodiff import SeededRng, Tape, Tensor
from .encoders import PAD, EmbeddingTable, GruParams, Vocabulary, embed_tokens, encode_sequence
from .params import ParamStore


class StepDecoder(Protocol):
    bos: int
    eos: int

    def initial(self) -> Any: ...

    def step(self, tokens: np.ndarray, state: Any) -> tuple[np.ndarray, Any]: ...

    def reorder(self, state: Any, rows) -> Any: ...


@dataclass
class BeamHypothesis:
    tokens: list[int]
    logp: float
    state: Any = None
    finished: bool = False


def _score(h: BeamHypothesis, length_norm: bool) -> float:
    if length_norm and h.tokens:
        return h.logp / len(h.tokens)
    return h.logp


def _rank_key(h: BeamHypothesis, length_norm: bool):
    # best first; ties go to the shorter, then lexicographically smaller sequence
    return (-_score(h, length_norm), len(h.tokens), tuple(h.tokens))


def beam_search(decoder: StepDecoder, beam_size: int = 5, max_len: int = 20,
                length_norm: bool = False) -> BeamHypothesis:
    """Keep the ``beam_size`` best hypotheses per step; finished ones stay frozen
    in the pool and compete with live expansions for slots."""
    if beam_size < 1 or max_len < 1:
        raise ValueError("beam_size and max_len must be at least 1")
    ctx = decoder.initial()
    live = [BeamHypothesis([], 0.0)]
    finished: list[BeamHypothesis] = []
    for _ in range(max_len):
        prev = np.array([h.tokens[-1] if h.tokens else decoder.bos for h in live], dtype=np.int64)
        logp, ctx = decoder.step(prev, ctx)
        totals = np.array([h.logp for h in live])[:, None] + logp
        # prefilter: anything below the beam_size-th best raw total cannot survive
        # (exact without length normalisation; with it, keep everything)
        flat = totals.reshape(-1)
        if not length_norm and flat.size > beam_size:
            cutoff = np.partition(flat, flat.size - beam_size)[flat.size - beam_size]
            picks = np.nonzero(flat >= cutoff)[0]
        else:
            picks = np.arange(flat.size)
        V = totals.shape[1]
        pool: list[tuple[BeamHypothesis, int | None]] = [(h, None) for h in finished]
        for p in picks:
            i, tok = divmod(int(p), V)
            pool.append((BeamHypothesis(live[i].tokens + [tok], float(flat[p]), None,
                                        tok == decoder.eos), i))
        pool.sort(key=lambda e: _rank_key(e[0], length_norm))
        pool = pool[:beam_size]
        finished = [h for h, _ in pool if h.finished]
        nxt = [(h, i) for h, i in pool if not h.finished]
        if not nxt:
            live = []
            break
        ctx = decoder.reorder(ctx, [i for _, i in nxt])
        live = [h for h, _ in nxt]
        for row, h in enumerate(live):
            h.state = row
    pool = finished + live
    return min(pool, key=lambda h: _rank_key(h, length_norm))


def greedy_decode(decoder: StepDecoder, max_len: int = 20) -> BeamHypothesis:
    ctx = decoder.initial()
    tokens, total = [], 0.0
    prev = decoder.bos
    for _ in range(max_len):
        logp, ctx = decoder.step(np.array([prev], dtype=np.int64), ctx)
        tok = int(np.argmax(logp[0]))
        total += float(logp[0, tok])
        tokens.append(tok)
        if tok == decoder.eos:
            return BeamHypothesis(tokens, total, None, True)
        prev = tok
    return BeamHypothesis(tokens, total, None, False)


# --- response revision -----------------------------------------------------

YESNO_OPENERS = frozenset({"is", "are", "was", "were", "do", "does", "did", "can", "could",
                           "has", "have", "had", "will", "would", "should"})
INSERT_YES, INSERT_NO, NO_INSERT = 0, 1, 2
REVISION_CLASSES = ("insert-yes", "insert-no", "no-insert")


def classify_yesno_rule(question: list[str]) -> bool:
    """True when the first non-padding token opens a yes/no question."""
    words = [w for w in question if w != "<pad>"]
    if not words:
        raise ValueError("empty question")
    return words[0].lower() in YESNO_OPENERS


def revision_label(answer: list[str]) -> int:
    first = answer[0].lower() if answer else ""
    return {"yes": INSERT_YES, "no": INSERT_NO}.get(first, NO_INSERT)


class RevisionModel:
    """Question GRU encoder followed by a linear layer over the three revision classes."""

    def __init__(self, vocab: Vocabulary, d_e: int = 32, d: int = 32, seed: int = 0, dtype=np.float64):
        self.vocab = vocab
        self.store = store = ParamStore(SeededRng(seed), dtype)
        self.embed = EmbeddingTable.create(store, "revision.embed", len(vocab), d_e)
        self.encoder = GruParams.create(store, "revision.gru", d_e, d)
        self.W = store.projection("revision.W", (d, len(REVISION_CLASSES)))
        self.b = store.zeros("revision.b", (len(REVISION_CLASSES),))

    @property
    def params(self) -> dict[str, Tensor]:
        return self.store.params

    def logits(self, questions: list[list[str]]) -> Tensor:
        seqs = [self.vocab.encode(q) or [PAD] for q in questions]
        T = max(len(s) for s in seqs)
        ids = np.full((len(seqs), T), PAD, dtype=np.int64)
        mask = np.zeros((len(seqs), T))
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = s
            mask[i, : len(s)] = 1.0
        enc = encode_sequence(embed_tokens(ids, self.embed), self.encoder, mask=mask)
        return enc.last @ self.W + self.b

    def predict(self, question: list[str]) -> int:
        with ad.no_record():
            return int(np.argmax(self.logits([question]).data[0]))


def train_revision_model(pairs: list[tuple[list[str], list[str]]], vocab: Vocabulary,
                         updates: int = 200, batch_size: int = 16, lr: float = 5e-3,
                         seed: int = 0, d: int = 32) -> RevisionModel:
    """Fit the classifier on rule-detected yes/no questions labelled by the gold opening word."""
    from .training import AdamState, adam_step, nll_loss

    rm = RevisionModel(vocab, d_e=d, d=d, seed=seed)
    data = [(q, revision_label(a)) for q, a in pairs if q and classify_yesno_rule(q)]
    if not data:
        return rm
    rng = SeededRng(seed)
    adam = AdamState()
    for _ in range(updates):
        idx = rng.integers(0, len(data), size=min(batch_size, len(data)))
        qs = [data[i][0] for i in idx]
        labels = np.array([data[i][1] for i in idx])
        with Tape() as tape:
            loss = nll_loss(rm.logits(qs), labels, np.ones(len(labels)))
        ad.backward(loss, tape)
        adam_step(rm.params, None, adam, lr)
    return rm


def revise_response(question: list[str], answer: list[str], rm: RevisionModel | None = None,
                    decision: int | None = None) -> list[str]:
    """Prepend "yes ," or "no ," to answers of rule-detected yes/no questions.

    ``decision`` overrides the classifier.  Answers already opening with yes/no
    are returned unchanged, which makes the operation idempotent.
    """
    if not classify_yesno_rule(question):
        return list(answer)
    if answer and answer[0].lower() in ("yes", "no"):
        return list(answer)
    if decision is None:
        if rm is None:
            raise ValueError("revise_response needs a revision model or an explicit decision")
        decision = rm.predict(question)
    if decision == INSERT_YES:
        return ["yes", ","] + list(answer)
    if decision == INSERT_NO:
        return ["no", ","] + list(answer)
    return list(answer)


def write_generations(path, records: list[dict]) -> None:
    """JSON-lines: example_id, question, answer_tokens, logp, revised."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            row = {k: r[k] for k in ("example_id", "question", "answer_tokens", "logp", "revised")}
            fh.write(json.dumps(row) + "\n")


def greedy_decode_batch(model, batch, max_len: int = 20) -> list[list[int]]:
    """Greedy decoding of a whole batch at once; each row stops at its first EOS."""
    from .encoders import BOS, EOS

    with ad.no_record():
        ctx = model.start(batch)
        prev = np.full(batch.size, BOS, dtype=np.int64)
        out = [[] for _ in range(batch.size)]
        done = np.zeros(batch.size, dtype=bool)
        for _ in range(max_len):
            logits, ctx = model.step(prev, ctx)
            prev = np.argmax(logits.data, axis=-1)
            for i, tok in enumerate(prev):
                if not done[i]:
                    out[i].append(int(tok))
                    done[i] = tok == EOS
            if done.all():
                break
    return out
