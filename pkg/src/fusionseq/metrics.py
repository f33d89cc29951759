"""Corpus BLEU-1..4, ROUGE-L and CIDEr over whitespace tokens, plus the copy baseline.

Sentences are normalised first: lowercase, whitespace split, trailing "." and
"," stripped from every token, and tokens left empty dropped.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

Tokens = list[str]


def normalize_tokens(sentence: str) -> Tokens:
    out = []
    for tok in sentence.lower().split():
        tok = tok.rstrip(".,")
        if tok:
            out.append(tok)
    return out


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def _as_tokens(s) -> Tokens:
    return normalize_tokens(s) if isinstance(s, str) else list(s)


def _prepare(candidates, references):
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} reference sets")
    if not candidates:
        raise ValueError("empty corpus")
    cands = [_as_tokens(c) for c in candidates]
    refs = []
    for r in references:
        group = [r] if isinstance(r, str) else list(r)
        if not group:
            raise ValueError("every candidate needs at least one reference")
        refs.append([_as_tokens(g) for g in group])
    return cands, refs


def bleu_n(candidates, references, n_max: int = 4) -> list[float]:
    """Corpus BLEU-1..n_max with clipped counts and the closest-reference brevity penalty.

    A candidate is a string or a token list.  ``references[i]`` is one string,
    or a list of references each given as a string or a token list.
    """
    cands, refs = _prepare(candidates, references)
    matched = [0] * n_max
    total = [0] * n_max
    c_len = r_len = 0
    for cand, group in zip(cands, refs):
        c_len += len(cand)
        r_len += min((abs(len(r) - len(cand)), len(r)) for r in group)[1]
        for n in range(1, n_max + 1):
            counts = ngram_counts(cand, n)
            ref_max: Counter = Counter()
            for r in group:
                ref_max |= ngram_counts(r, n)
            matched[n - 1] += sum(min(c, ref_max[g]) for g, c in counts.items())
            total[n - 1] += max(0, len(cand) - n + 1)
    if c_len == 0:
        return [0.0] * n_max
    bp = 1.0 if c_len >= r_len else math.exp(1.0 - r_len / c_len)
    scores = []
    log_sum = 0.0
    for n in range(n_max):
        if matched[n] == 0 or total[n] == 0:
            scores.extend([0.0] * (n_max - n))
            break
        log_sum += math.log(matched[n] / total[n])
        scores.append(bp * math.exp(log_sum / (n + 1)))
    return scores


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_pair(cand: Sequence[str], ref: Sequence[str], beta2: float = 1.2) -> float:
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return (1 + beta2) * p * r / (r + beta2 * p)


def rouge_l(candidates, references, beta2: float = 1.2) -> float:
    """Mean over the corpus of the best LCS F-measure against any reference."""
    cands, refs = _prepare(candidates, references)
    return sum(max(rouge_l_pair(c, r, beta2) for r in group)
               for c, group in zip(cands, refs)) / len(cands)


@dataclass
class CorpusIdf:
    df: dict[tuple, int]
    size: int

    @classmethod
    def from_references(cls, references, n_max: int = 4) -> "CorpusIdf":
        _, refs = _prepare([""] * len(references), references)
        df: Counter = Counter()
        for group in refs:
            seen = set()
            for r in group:
                for n in range(1, n_max + 1):
                    seen.update(ngram_counts(r, n))
            df.update(seen)
        if not refs:
            raise ValueError("empty reference corpus")
        return cls(dict(df), len(refs))

    def idf(self, gram: tuple) -> float:
        return math.log(self.size) - math.log(max(1, self.df.get(gram, 0)))


def _tfidf(tokens: Sequence[str], n: int, idf: CorpusIdf) -> dict[tuple, float]:
    return {g: c * idf.idf(g) for g, c in ngram_counts(tokens, n).items()}


def _cosine(a: dict, b: dict) -> float:
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0 or nb == 0:
        return 0.0
    return sum(v * b.get(g, 0.0) for g, v in a.items()) / (na * nb)


def cider(candidates, references, idf: CorpusIdf | None = None, n_max: int = 4) -> float:
    """10 x mean over n of the reference-averaged tf-idf cosine (no length penalty)."""
    cands, refs = _prepare(candidates, references)
    if idf is None:
        idf = CorpusIdf.from_references(references, n_max)
    total = 0.0
    for cand, group in zip(cands, refs):
        per_n = []
        for n in range(1, n_max + 1):
            vc = _tfidf(cand, n, idf)
            per_n.append(sum(_cosine(vc, _tfidf(r, n, idf)) for r in group) / len(group))
        total += sum(per_n) / n_max
    return 10.0 * total / len(cands)


def naive_copy_baseline(questions: list) -> list:
    return list(questions)


METRIC_KEYS = ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "cider")


def evaluate_corpus(candidates, references) -> dict:
    b = bleu_n(candidates, references, 4)
    report = {f"bleu{i + 1}": b[i] for i in range(4)}
    report["rouge_l"] = rouge_l(candidates, references)
    report["cider"] = cider(candidates, references)
    report["n_examples"] = len(candidates)
    return report


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def report_table(report: dict) -> str:
    rows = [(k, f"{report[k]:.4f}") for k in METRIC_KEYS if k in report]
    rows.append(("n_examples", str(report.get("n_examples", ""))))
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k.ljust(width)}  {v.rjust(8)}" for k, v in rows) + "\n"
