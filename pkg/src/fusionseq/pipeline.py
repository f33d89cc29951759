"""Train / decode / score helpers shared by the CLI and the ablation harness."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import (DialogueExample, FeatureSelection, Instance, build_vocabulary, collate,
                   make_batches, make_instances)
from .encoders import EOS, Vocabulary
from .errors import ConfigError
from .inference import (RevisionModel, beam_search, classify_yesno_rule, greedy_decode_batch,
                        revise_response, train_revision_model)
from .metrics import evaluate_corpus
from .model import FusionModel, ModelConfig
from .training import TrainConfig, TrainResult, train_loop


@dataclass
class Trained:
    model: FusionModel
    vocab: Vocabulary
    result: TrainResult
    revision: RevisionModel | None = None


def fit(mc: ModelConfig, tc: TrainConfig, train: list[DialogueExample],
        dev: list[DialogueExample], log=None, revision: bool = True) -> Trained:
    """Build the vocabulary on ``train``, then train a model (and the revision classifier)."""
    if not train:
        raise ConfigError("training set is empty")
    vocab = build_vocabulary(train)
    mc = replace(mc, vocab_size=len(vocab))
    model = FusionModel(mc, seed=tc.seed)
    sel = FeatureSelection.from_model_config(mc)
    tr_inst, dev_inst = make_instances(train), make_instances(dev)
    dev_batches = make_batches(dev_inst, vocab, sel, 64, d_a=mc.d_a, d_v=mc.d_v) if dev_inst else []
    result = train_loop(
        model,
        lambda epoch: make_batches(tr_inst, vocab, sel, tc.batch_size, seed=tc.seed, epoch=epoch,
                                   d_a=mc.d_a, d_v=mc.d_v),
        dev_batches, tc, on_epoch=log)
    rm = None
    if revision:
        pairs = [(x.question, x.answer) for x in tr_inst]
        rm = train_revision_model(pairs, vocab, updates=tc.revision_updates, seed=tc.seed)
    return Trained(model, vocab, result, rm)


def decode(model: FusionModel, vocab: Vocabulary, inst: Instance, beam_size: int | None = None,
           max_len: int | None = None):
    """Beam-search one instance; returns (tokens without EOS, log-probability)."""
    c = model.config
    sel = FeatureSelection.from_model_config(c)
    batch = collate([inst], vocab, sel, c.d_a, c.d_v)
    hyp = beam_search(model.decoder_for(batch), beam_size or c.beam_size, max_len or c.max_answer_len,
                      c.length_norm)
    return vocab.decode(hyp.tokens), hyp.logp


def generate_records(trained: Trained, instances: list[Instance], revise: bool = False,
                     beam_size: int | None = None) -> list[dict]:
    records = []
    for inst in instances:
        tokens, logp = decode(trained.model, trained.vocab, inst, beam_size)
        revised = tokens
        if revise and inst.question and classify_yesno_rule(inst.question):
            revised = revise_response(inst.question, tokens, trained.revision)
        records.append({"example_id": inst.id, "question": " ".join(inst.question),
                        "answer_tokens": revised if revise else tokens, "logp": logp,
                        "revised": revise and revised != tokens, "reference": inst.answer})
    return records


def score(records: list[dict]) -> dict:
    return evaluate_corpus([r["answer_tokens"] for r in records],
                           [[r["reference"]] for r in records])


def greedy_answers(model: FusionModel, vocab: Vocabulary, instances: list[Instance],
                   max_len: int | None = None) -> list[list[int]]:
    """Greedy decodes in batches of 64, each cut before its first EOS."""
    c = model.config
    sel = FeatureSelection.from_model_config(c)
    out = []
    for s in range(0, len(instances), 64):
        batch = collate(instances[s: s + 64], vocab, sel, c.d_a, c.d_v)
        for row in greedy_decode_batch(model, batch, max_len or c.max_answer_len):
            out.append(row[: row.index(EOS)] if EOS in row else row)
    return out


def needle_accuracy(model: FusionModel, vocab: Vocabulary, instances: list[Instance]) -> float:
    """Fraction of answers whose last gold token (the needle) is decoded at its gold position."""
    if not instances:
        return float("nan")
    preds = greedy_answers(model, vocab, instances)
    hits = 0
    for pred, inst in zip(preds, instances):
        gold = vocab.encode(inst.answer)
        hits += bool(gold) and len(pred) >= len(gold) and pred[len(gold) - 1] == gold[-1]
    return hits / len(instances)


def exact_match(model: FusionModel, vocab: Vocabulary, instances: list[Instance]) -> np.ndarray:
    """Per-instance flags: the greedy answer equals the gold answer."""
    preds = greedy_answers(model, vocab, instances)
    return np.array([p == vocab.encode(x.answer) for p, x in zip(preds, instances)], dtype=bool)
