"""Caption quality metrics: corpus BLEU, consensus tf-idf scoring, and LCS F-measure.

All metrics operate on token sequences produced by :func:`tokenize`
(lowercase, whitespace split, edge punctuation stripped) and care only
about token identity, never spelling or language. The consensus metric
needs corpus-level document frequencies, captured once in
:class:`CorpusStats` and immutable afterwards.
"""

from __future__ import annotations

import math
import string
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .errors import ValidationError

__all__ = [
    "tokenize",
    "ngram_counts",
    "bleu",
    "bleu_avg4",
    "CorpusStats",
    "build_corpus_stats",
    "cider",
    "rouge_l",
]

TokenSeq = list

_EDGE_PUNCT = string.punctuation


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation, drop empties."""
    out = []
    for raw in text.lower().split():
        tok = raw.strip(_EDGE_PUNCT)
        if tok:
            out.append(tok)
    return out


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    """Multiset of the n-grams of ``tokens`` as tuples."""
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_len(cand_len: int, refs: Sequence[Sequence[str]]) -> int:
    # Ties between equally close reference lengths go to the shorter one.
    return min((len(r) for r in refs),
               key=lambda ref_len: (abs(ref_len - cand_len), ref_len))


def bleu(candidates: Sequence[Sequence[str]],
         references: Sequence[Sequence[Sequence[str]]],
         max_n: int) -> float:
    """Corpus-level BLEU with clipped precisions and brevity penalty.

    Geometric mean of the clipped n-gram precisions for n = 1..max_n,
    multiplied by exp(min(0, 1 - r/c)) where r sums each candidate's
    closest reference length and c the candidate lengths. No smoothing:
    a zero precision at any order zeroes the score.
    """
    if not candidates:
        raise ValidationError("bleu needs at least one candidate")
    if len(candidates) != len(references):
        raise ValidationError("candidate and reference lists differ in length")
    if not 1 <= max_n <= 4:
        raise ValidationError(f"max_n must be in 1..4, got {max_n}")
    matched = [0] * (max_n + 1)
    total = [0] * (max_n + 1)
    cand_len_sum = 0
    ref_len_sum = 0
    for cand, refs in zip(candidates, references):
        if not refs:
            raise ValidationError("every candidate needs a non-empty reference set")
        cand_len_sum += len(cand)
        ref_len_sum += _closest_ref_len(len(cand), refs)
        for n in range(1, max_n + 1):
            counts = ngram_counts(cand, n)
            if not counts:
                continue
            ceiling = Counter()
            for ref in refs:
                for gram, cnt in ngram_counts(ref, n).items():
                    ceiling[gram] = max(ceiling[gram], cnt)
            matched[n] += sum(min(cnt, ceiling[gram]) for gram, cnt in counts.items())
            total[n] += sum(counts.values())
    if cand_len_sum == 0:
        return 0.0
    log_prec = 0.0
    for n in range(1, max_n + 1):
        if matched[n] == 0 or total[n] == 0:
            return 0.0
        log_prec += math.log(matched[n] / total[n]) / max_n
    brevity = math.exp(min(0.0, 1.0 - ref_len_sum / cand_len_sum))
    return brevity * math.exp(log_prec)


def bleu_avg4(candidates: Sequence[Sequence[str]],
              references: Sequence[Sequence[Sequence[str]]]) -> float:
    """Arithmetic mean of BLEU-1 through BLEU-4."""
    return sum(bleu(candidates, references, n) for n in range(1, 5)) / 4.0


@dataclass(frozen=True)
class CorpusStats:
    """Document frequencies per n-gram order over a reference corpus.

    ``doc_freq[n-1]`` maps each n-gram to the number of images whose
    reference set contains it at least once; ``n_docs`` counts images.
    """

    doc_freq: tuple
    n_docs: int

    def idf(self, n: int, gram: tuple) -> float:
        return math.log(self.n_docs / max(self.doc_freq[n - 1].get(gram, 0), 1))


def build_corpus_stats(reference_corpus: Sequence[Sequence[Sequence[str]]],
                       max_n: int = 4) -> CorpusStats:
    """Count, per n-gram, in how many images' references it appears.

    Repetitions within one image never raise a document frequency.
    """
    if not reference_corpus:
        raise ValidationError("corpus must be non-empty")
    freqs = tuple({} for _ in range(max_n))
    for refs in reference_corpus:
        for n in range(1, max_n + 1):
            seen = set()
            for ref in refs:
                seen.update(ngram_counts(ref, n).keys())
            for gram in seen:
                freqs[n - 1][gram] = freqs[n - 1].get(gram, 0) + 1
    return CorpusStats(doc_freq=freqs, n_docs=len(reference_corpus))


def _tfidf_vector(tokens: Sequence[str], n: int, stats: CorpusStats) -> dict:
    return {gram: cnt * stats.idf(n, gram)
            for gram, cnt in ngram_counts(tokens, n).items()}


def _cosine(u: dict, v: dict) -> float:
    nu = math.sqrt(sum(x * x for x in u.values()))
    nv = math.sqrt(sum(x * x for x in v.values()))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    dot = sum(x * v[g] for g, x in u.items() if g in v)
    return dot / (nu * nv)


def cider(candidate: Sequence[str],
          refs: Sequence[Sequence[str]],
          stats: CorpusStats) -> float:
    """Consensus score: 10 x the mean over n = 1..4 of the mean
    reference cosine between tf-idf n-gram vectors.

    A vector that is identically zero (no n-grams, or all idf zero)
    contributes cosine 0 by convention.
    """
    if not refs:
        raise ValidationError("reference set must be non-empty")
    per_n = []
    for n in range(1, 5):
        cand_vec = _tfidf_vector(candidate, n, stats)
        sims = [_cosine(cand_vec, _tfidf_vector(ref, n, stats)) for ref in refs]
        per_n.append(sum(sims) / len(sims))
    return 10.0 * sum(per_n) / len(per_n)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], refs: Sequence[Sequence[str]]) -> float:
    """Best F1 over references of longest-common-subsequence precision/recall."""
    if not refs:
        raise ValidationError("reference set must be non-empty")
    best = 0.0
    for ref in refs:
        lcs = _lcs_length(candidate, ref)
        if lcs == 0:
            continue
        precision = lcs / len(candidate)
        recall = lcs / len(ref)
        best = max(best, 2.0 * precision * recall / (precision + recall))
    return best
