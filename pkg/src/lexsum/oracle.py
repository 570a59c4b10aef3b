"""Extractive training labels: greedy selection of the sentence subset that
maximizes ROUGE against the gold summary, plus an exhaustive reference
implementation for verification and a corpus-scale labeling runner.

Selections are scored as sets: the candidate summary is the selected
sentences concatenated in document order, so the objective of a subset does
not depend on the order it was discovered in.  ``OracleLabel.indices`` still
records the selection order, which ranks sentences by marginal value.
"""

from __future__ import annotations

import bisect
import json
from collections import Counter
from dataclasses import dataclass
from itertools import combinations
from multiprocessing import Pool
from pathlib import Path
from typing import Sequence

from . import metrics
from .corpus import Corpus, DataError, Document, GoldSummary

EXACT_MAX_SENTENCES = 20


@dataclass(frozen=True)
class OracleLabel:
    """Selected sentence indices (in selection order) and the achieved
    objective of the selected set."""

    doc_id: str
    indices: tuple[int, ...]
    objective: float


def _require_gold(document: Document, gold: GoldSummary | None) -> GoldSummary:
    gold = gold if gold is not None else document.gold_summary
    if gold is None or not gold.sentences:
        raise DataError(f"document {document.id!r} has no gold summary")
    return gold


def score_selection(
    document: Document,
    indices: Sequence[int],
    gold: GoldSummary | None = None,
    objective: str = "r12",
) -> float:
    """Objective of a sentence subset, scored in document order."""
    gold = _require_gold(document, gold)
    cand = [document.sentences[i].tokens for i in sorted(indices)]
    if objective == "r12":
        return metrics.oracle_objective(cand, gold.sentence_tokens())
    if objective == "reward":
        return metrics.reward(cand, gold.sentence_tokens())
    raise ValueError(f"unknown objective {objective!r}")


class _IncrementalR12:
    """Incremental (ROUGE-1_f + ROUGE-2_f)/2 of a growing sentence set.

    Keeps unigram/bigram counts of the document-order concatenation and the
    clipped overlaps against the reference, so evaluating the gain of adding
    one sentence is O(sentence length).  Counts are integers; the objective
    is derived through :func:`metrics.score_from_overlap`, which makes it
    bit-identical to rescoring the same selection with :mod:`lexsum.metrics`.
    """

    def __init__(self, document: Document, gold: GoldSummary):
        self.tokens = [s.tokens for s in document.sentences]
        ref = metrics.flatten(gold.sentence_tokens())
        self.ref1 = metrics.ngram_counts(ref, 1)
        self.ref2 = metrics.ngram_counts(ref, 2)
        self.ref1_total = sum(self.ref1.values())
        self.ref2_total = sum(self.ref2.values())
        self.selected: list[int] = []  # sorted, all non-empty
        self.uni: Counter = Counter()
        self.bi: Counter = Counter()
        self.ov1 = 0
        self.ov2 = 0
        self.tok_total = 0
        self.bi_total = 0

    def objective(self) -> float:
        f1 = metrics.score_from_overlap(self.ov1, self.tok_total, self.ref1_total).f1
        f2 = metrics.score_from_overlap(self.ov2, self.bi_total, self.ref2_total).f1
        return (f1 + f2) / 2.0

    def _bigram_changes(self, idx: int) -> list[tuple[tuple[str, str], int]]:
        """Bigram count deltas caused by inserting sentence ``idx`` into the
        document-order concatenation (internal bigrams plus boundary fixups)."""
        toks = self.tokens[idx]
        changes: list[tuple[tuple[str, str], int]] = [
            (g, 1) for g in zip(toks, toks[1:])
        ]
        pos = bisect.bisect_left(self.selected, idx)
        left = self.selected[pos - 1] if pos > 0 else None
        right = self.selected[pos] if pos < len(self.selected) else None
        if left is not None and right is not None:
            changes.append(((self.tokens[left][-1], self.tokens[right][0]), -1))
        if left is not None:
            changes.append(((self.tokens[left][-1], toks[0]), 1))
        if right is not None:
            changes.append(((toks[-1], self.tokens[right][0]), 1))
        return changes

    def _deltas(self, idx: int) -> tuple[int, int, int]:
        """(overlap1 delta, overlap2 delta, bigram-total delta) for adding idx."""
        toks = self.tokens[idx]
        d1 = 0
        for g, c in Counter((t,) for t in toks).items():
            have = self.uni[g]
            d1 += min(have + c, self.ref1[g]) - min(have, self.ref1[g])
        d2 = 0
        dbi = 0
        overlay: dict[tuple[str, str], int] = {}
        for g, delta in self._bigram_changes(idx):
            cur = overlay.get(g, self.bi[g])
            new = cur + delta
            d2 += min(new, self.ref2[g]) - min(cur, self.ref2[g])
            overlay[g] = new
            dbi += delta
        return d1, d2, dbi

    def candidate_objective(self, idx: int) -> float:
        toks = self.tokens[idx]
        if not toks:
            return self.objective()
        d1, d2, dbi = self._deltas(idx)
        f1 = metrics.score_from_overlap(
            self.ov1 + d1, self.tok_total + len(toks), self.ref1_total
        ).f1
        f2 = metrics.score_from_overlap(
            self.ov2 + d2, self.bi_total + dbi, self.ref2_total
        ).f1
        return (f1 + f2) / 2.0

    def add(self, idx: int) -> None:
        toks = self.tokens[idx]
        d1, d2, dbi = self._deltas(idx)
        for g, delta in self._bigram_changes(idx):
            self.bi[g] += delta
        self.uni.update((t,) for t in toks)
        self.ov1 += d1
        self.ov2 += d2
        self.tok_total += len(toks)
        self.bi_total += dbi
        bisect.insort(self.selected, idx)


def greedy_oracle(
    document: Document,
    gold: GoldSummary | None = None,
    objective: str = "r12",
) -> OracleLabel:
    """Greedy approximation of the best extractive summary.

    At each step the remaining sentence with the largest objective gain is
    added (ties go to the lowest index); extraction stops as soon as no
    remaining sentence has a strictly positive gain.
    """
    gold = _require_gold(document, gold)
    if not document.sentences:
        raise DataError(f"document {document.id!r} has no sentences")
    n = len(document.sentences)
    order: list[int] = []
    if objective == "r12":
        state = _IncrementalR12(document, gold)
        remaining = list(range(n))
        current = state.objective()
        for _ in range(n):
            best_idx, best_obj = -1, current
            for idx in remaining:
                cand = state.candidate_objective(idx)
                if cand > best_obj:
                    best_idx, best_obj = idx, cand
            if best_idx < 0:
                break
            state.add(best_idx)
            remaining.remove(best_idx)
            order.append(best_idx)
            current = best_obj
        return OracleLabel(document.id, tuple(order), current)
    if objective == "reward":
        # non-incremental fallback; O(N^2) rescorings including an LCS each
        remaining = list(range(n))
        current = 0.0
        for _ in range(n):
            best_idx, best_obj = -1, current
            for idx in remaining:
                cand = score_selection(document, order + [idx], gold, "reward")
                if cand > best_obj:
                    best_idx, best_obj = idx, cand
            if best_idx < 0:
                break
            remaining.remove(best_idx)
            order.append(best_idx)
            current = best_obj
        return OracleLabel(document.id, tuple(order), current)
    raise ValueError(f"unknown objective {objective!r}")


def exact_oracle(
    document: Document,
    gold: GoldSummary | None = None,
    max_sentences: int | None = None,
    objective: str = "r12",
) -> OracleLabel:
    """Exhaustive best subset, for verification on small documents.

    Enumerates subsets by increasing size, then lexicographically, keeping
    the first strict improvement; ties therefore resolve to fewer sentences
    and then the lexicographically smallest index set.  Guarded to N <= 20.
    """
    gold = _require_gold(document, gold)
    n = len(document.sentences)
    if n > EXACT_MAX_SENTENCES:
        raise DataError(
            f"exact_oracle is limited to {EXACT_MAX_SENTENCES} sentences "
            f"(document has {n}); use greedy_oracle instead"
        )
    cap = n if max_sentences is None else min(max_sentences, n)
    best: tuple[int, ...] = ()
    best_obj = 0.0
    for k in range(1, cap + 1):
        for combo in combinations(range(n), k):
            obj = score_selection(document, combo, gold, objective)
            if obj > best_obj:
                best, best_obj = combo, obj
    return OracleLabel(document.id, best, best_obj)


@dataclass(frozen=True)
class LabelingSummary:
    """Outcome of a corpus labeling run."""

    written: int
    skipped: tuple[tuple[str, str], ...]  # (doc id, reason)
    mean_objective: float


def _label_one(args: tuple[Document, str]) -> tuple[str, OracleLabel | None, str]:
    document, objective = args
    if document.gold_summary is None or not document.gold_summary.sentences:
        return document.id, None, "no gold summary"
    if not document.sentences:
        return document.id, None, "no sentences"
    return document.id, greedy_oracle(document, objective=objective), ""


def label_corpus(
    corpus: Corpus,
    output_path: str | Path,
    workers: int = 1,
    objective: str = "r12",
) -> LabelingSummary:
    """Label every document with its greedy oracle selection.

    Documents are processed in parallel but written in input order, so the
    output file is byte-identical for any worker count.  Documents without a
    gold summary are recorded as skipped, not fatal.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    jobs = [(doc, objective) for doc in corpus]
    if workers == 1:
        results = [_label_one(job) for job in jobs]
    else:
        with Pool(processes=workers) as pool:
            results = list(pool.imap(_label_one, jobs, chunksize=8))
    skipped: list[tuple[str, str]] = []
    objectives: list[float] = []
    with open(output_path, "w", encoding="utf-8") as fh:
        for doc_id, label, reason in results:
            if label is None:
                skipped.append((doc_id, reason))
                continue
            fh.write(
                json.dumps(
                    {
                        "id": label.doc_id,
                        "indices": list(label.indices),
                        "objective": label.objective,
                    }
                )
                + "\n"
            )
            objectives.append(label.objective)
    mean = sum(objectives) / len(objectives) if objectives else 0.0
    return LabelingSummary(len(objectives), tuple(skipped), mean)


def load_labels(path: str | Path) -> dict[str, OracleLabel]:
    """Read a labels file back into a doc-id keyed mapping."""
    labels: dict[str, OracleLabel] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                label = OracleLabel(
                    str(rec["id"]), tuple(int(i) for i in rec["indices"]),
                    float(rec["objective"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"line {line_no}: malformed label ({exc})") from exc
            labels[label.doc_id] = label
    return labels
