"""ROUGE scoring: n-gram overlap, LCS variants, and the scalar objectives
built from them.

All functions are pure and deterministic.  Scores are computed in double
precision; rounding to report precision happens only at rendering time
(see :mod:`lexsum.extraction`).  Candidate and reference text is expected
as token sequences produced by :func:`lexsum.corpus.tokenize` so that every
module in the pipeline scores identically.

Multi-sentence summaries are scored on the flat concatenation of their
sentence token lists, in the order given, so bigrams and subsequences cross
sentence boundaries.  The summary-level LCS variant (``rouge_l_sum``) is the
exception: it keeps sentence structure and aggregates union-LCS hits per
reference sentence.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from itertools import chain
from typing import Sequence

TokenSeq = Sequence[str]
SentenceTokens = Sequence[Sequence[str]]


@dataclass(frozen=True)
class RougeScore:
    """Precision / recall / F1 triple, each in [0, 1]."""

    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class RougeTriple:
    """The three scores reported per system: unigram, bigram, LCS."""

    r1: RougeScore
    r2: RougeScore
    rl: RougeScore


def score_from_overlap(overlap: int, cand_total: int, ref_total: int) -> RougeScore:
    """Build a RougeScore from integer overlap and totals.

    Shared by the generic scorers and the oracle's incremental bookkeeping so
    that both paths produce bit-identical floats from the same counts.
    Empty denominators yield 0, as does a zero precision+recall sum.
    """
    p = overlap / cand_total if cand_total > 0 else 0.0
    r = overlap / ref_total if ref_total > 0 else 0.0
    f1 = 2.0 * p * r / (p + r) if p + r > 0 else 0.0
    return RougeScore(p, r, f1)


def flatten(sentences: SentenceTokens) -> list[str]:
    """Concatenate sentence token lists, in the order given."""
    return list(chain.from_iterable(sentences))


def ngram_counts(tokens: TokenSeq, n: int) -> Counter:
    """Multiset of contiguous n-grams; total count is max(0, len - n + 1)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def overlap_count(cand_counts: Counter, ref_counts: Counter) -> int:
    """Clipped overlap: sum over grams of min(candidate count, reference count)."""
    if len(ref_counts) < len(cand_counts):
        cand_counts, ref_counts = ref_counts, cand_counts
    return sum(min(c, ref_counts[g]) for g, c in cand_counts.items())


def rouge_n(candidate: TokenSeq, reference: TokenSeq, n: int) -> RougeScore:
    """ROUGE-N with clipped n-gram overlap."""
    cand_counts = ngram_counts(candidate, n)
    ref_counts = ngram_counts(reference, n)
    overlap = overlap_count(cand_counts, ref_counts)
    return score_from_overlap(
        overlap, sum(cand_counts.values()), sum(ref_counts.values())
    )


def lcs_length(a: TokenSeq, b: TokenSeq) -> int:
    """Length of the longest common subsequence, via row-wise DP."""
    if not a or not b:
        return 0
    if len(b) > len(a):  # keep the inner row short
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: TokenSeq, reference: TokenSeq) -> RougeScore:
    """ROUGE-L on flat token sequences: LCS length over both lengths."""
    l = lcs_length(candidate, reference)
    return score_from_overlap(l, len(candidate), len(reference))


def _lcs_match_indices(ref: TokenSeq, cand: TokenSeq) -> set[int]:
    """Indices of ``ref`` tokens on one canonical LCS with ``cand``.

    The backtrace prefers diagonal moves, then moving up in ``ref``; any
    single LCS is acceptable for union aggregation, but the choice is fixed
    so scoring is deterministic.
    """
    n, m = len(ref), len(cand)
    if n == 0 or m == 0:
        return set()
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        row, above = table[i], table[i - 1]
        for j in range(1, m + 1):
            if ref[i - 1] == cand[j - 1]:
                row[j] = above[j - 1] + 1
            else:
                row[j] = max(above[j], row[j - 1])
    matched: set[int] = set()
    i, j = n, m
    while i > 0 and j > 0:
        if ref[i - 1] == cand[j - 1]:
            matched.add(i - 1)
            i -= 1
            j -= 1
        elif table[i - 1][j] >= table[i][j - 1]:
            i -= 1
        else:
            j -= 1
    return matched


def rouge_l_sum(
    candidate_sentences: SentenceTokens, reference_sentences: SentenceTokens
) -> RougeScore:
    """Summary-level ROUGE-L.

    For each reference sentence, take the union over candidate sentences of
    LCS-matched reference positions, then count hits clipped by how often
    each token remains available in the candidate and reference multisets.
    Precision and recall are over total candidate / reference token counts.
    """
    cand_counts = Counter(flatten(candidate_sentences))
    ref_counts = Counter(flatten(reference_sentences))
    cand_total = sum(cand_counts.values())
    ref_total = sum(ref_counts.values())
    hits = 0
    for ref_sent in reference_sentences:
        union: set[int] = set()
        for cand_sent in candidate_sentences:
            union |= _lcs_match_indices(ref_sent, cand_sent)
        for idx in sorted(union):
            token = ref_sent[idx]
            if cand_counts[token] > 0 and ref_counts[token] > 0:
                hits += 1
                cand_counts[token] -= 1
                ref_counts[token] -= 1
    return score_from_overlap(hits, cand_total, ref_total)


def rouge_triple(
    candidate_sentences: SentenceTokens,
    reference_sentences: SentenceTokens,
    rouge_l_variant: str = "flat",
) -> RougeTriple:
    """ROUGE-1/2/L of a candidate summary against a reference summary.

    ``rouge_l_variant`` selects the LCS flavor: ``"flat"`` scores the
    concatenated token sequences, ``"sum"`` uses the summary-level union-LCS.
    """
    cand = flatten(candidate_sentences)
    ref = flatten(reference_sentences)
    if rouge_l_variant == "flat":
        rl = rouge_l(cand, ref)
    elif rouge_l_variant == "sum":
        rl = rouge_l_sum(candidate_sentences, reference_sentences)
    else:
        raise ValueError(f"unknown rouge_l_variant {rouge_l_variant!r}")
    return RougeTriple(rouge_n(cand, ref, 1), rouge_n(cand, ref, 2), rl)


def reward(
    candidate_sentences: SentenceTokens,
    reference_sentences: SentenceTokens,
    rouge_l_variant: str = "flat",
) -> float:
    """Terminal episode reward: mean of the ROUGE-1, ROUGE-2 and ROUGE-L F1s."""
    triple = rouge_triple(candidate_sentences, reference_sentences, rouge_l_variant)
    return (triple.r1.f1 + triple.r2.f1 + triple.rl.f1) / 3.0


def oracle_objective(
    candidate_sentences: SentenceTokens, reference_sentences: SentenceTokens
) -> float:
    """Label-generation objective: mean of the ROUGE-1 and ROUGE-2 F1s."""
    cand = flatten(candidate_sentences)
    ref = flatten(reference_sentences)
    return (rouge_n(cand, ref, 1).f1 + rouge_n(cand, ref, 2).f1) / 2.0
