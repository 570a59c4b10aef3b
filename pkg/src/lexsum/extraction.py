"""Deterministic inference and evaluation.

Greedy extraction checks the stop probability against a threshold before
every selection, so the threshold controls summary length from step 0.
Selected sentences are scored in extraction order.  The module also provides
the Lead-N baseline, a stop-threshold sweep and a multi-system evaluation
report rendered as one-decimal percentages.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import metrics
from .corpus import Corpus, DataError, Document
from .policy import EncodedDocument, ExtractionState, PolicyNetwork

ExtractorFn = Callable[[Document], Sequence[int]]


@dataclass(frozen=True)
class ExtractionConfig:
    """Inference controls: stop threshold and a hard summary-length cap."""

    stop_threshold: float = 0.65
    max_summary_sentences: int = 10

    def __post_init__(self):
        if not 0.0 <= self.stop_threshold <= 1.0:
            raise ValueError("stop_threshold must be in [0, 1]")
        if self.max_summary_sentences < 1:
            raise ValueError("max_summary_sentences must be >= 1")


def extract_trajectory(
    network: PolicyNetwork,
    document: Document,
    max_sentences: int,
    cache: EncodedDocument | None = None,
) -> tuple[list[int], list[float]]:
    """Argmax selection sequence with the stop probability observed before
    each step.

    The selection rule does not involve the threshold, so one trajectory
    serves every threshold: extraction at threshold tau keeps the prefix
    before the first step whose stop probability exceeds tau.
    """
    if cache is None:
        with ad.no_grad():
            cache = network.encode_document(document)
    state = ExtractionState.initial(document, network.config.max_sentences)
    indices: list[int] = []
    stop_probs: list[float] = []
    while state.remaining and len(indices) < max_sentences:
        dist = network.action_distribution(state, cache)
        stop_probs.append(dist.stop_prob)
        pick = state.remaining[int(np.argmax(dist.sentence_probs))]
        indices.append(pick)
        state = state.advance(pick)
    return indices, stop_probs


def extract(
    network: PolicyNetwork,
    document: Document,
    config: ExtractionConfig = ExtractionConfig(),
    cache: EncodedDocument | None = None,
) -> list[int]:
    """Deterministic greedy extraction.

    Each step stops if the stop probability exceeds the threshold, otherwise
    appends the highest-probability remaining sentence (lowest index on
    exact ties).
    """
    indices, stop_probs = extract_trajectory(
        network, document, config.max_summary_sentences, cache
    )
    for t, p in enumerate(stop_probs):
        if p > config.stop_threshold:
            return indices[:t]
    return indices


def lead_n(document: Document, n: int = 10) -> list[int]:
    """The first n sentence indices (fewer if the document is shorter)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return list(range(min(n, len(document.sentences))))


@dataclass(frozen=True)
class SweepRow:
    tau: float
    mean_sentences: float
    mean_reward: float
    r1_f1: float
    r2_f1: float
    rl_f1: float


@dataclass(frozen=True)
class SweepReport:
    rows: tuple[SweepRow, ...]
    recommended_tau: float

    def render(self) -> str:
        lines = ["tau\tmean_sentences\tmean_reward\tr1_f1\tr2_f1\trl_f1"]
        for row in self.rows:
            lines.append(
                f"{row.tau:.2f}\t{row.mean_sentences:.2f}\t{row.mean_reward:.4f}"
                f"\t{row.r1_f1:.4f}\t{row.r2_f1:.4f}\t{row.rl_f1:.4f}"
            )
        lines.append(f"recommended_tau\t{self.recommended_tau:.2f}")
        return "\n".join(lines)


def sweep_threshold(
    network: PolicyNetwork,
    corpus: Corpus,
    thresholds: Sequence[float],
    max_sentences: int = 10,
) -> SweepReport:
    """Evaluate greedy extraction at each threshold over a corpus.

    Per document the trajectory is computed once and sliced per threshold.
    The recommended threshold maximizes mean reward, ties to the smaller tau.
    """
    taus = list(thresholds)
    if taus != sorted(taus):
        raise ValueError("thresholds must be sorted ascending")
    trajectories = []
    for doc in corpus:
        if doc.gold_summary is None:
            raise DataError(f"document {doc.id!r} has no gold summary")
        trajectories.append((doc, extract_trajectory(network, doc, max_sentences)))
    rows: list[SweepRow] = []
    for tau in taus:
        counts, rewards, r1s, r2s, rls = [], [], [], [], []
        for doc, (indices, stop_probs) in trajectories:
            cut = len(indices)
            for t, p in enumerate(stop_probs):
                if p > tau:
                    cut = t
                    break
            chosen = indices[:cut]
            cand = [doc.sentences[i].tokens for i in chosen]
            ref = doc.gold_summary.sentence_tokens()
            triple = metrics.rouge_triple(cand, ref)
            counts.append(len(chosen))
            rewards.append((triple.r1.f1 + triple.r2.f1 + triple.rl.f1) / 3.0)
            r1s.append(triple.r1.f1)
            r2s.append(triple.r2.f1)
            rls.append(triple.rl.f1)
        n = len(trajectories)
        rows.append(
            SweepRow(
                tau=tau,
                mean_sentences=sum(counts) / n,
                mean_reward=sum(rewards) / n,
                r1_f1=sum(r1s) / n,
                r2_f1=sum(r2s) / n,
                rl_f1=sum(rls) / n,
            )
        )
    best = max(range(len(rows)), key=lambda i: (rows[i].mean_reward, -rows[i].tau))
    return SweepReport(rows=tuple(rows), recommended_tau=rows[best].tau)


@dataclass(frozen=True)
class EvalRow:
    """Corpus-averaged F1 percentages (one decimal) for one system."""

    system: str
    r1: float
    r2: float
    rl: float
    rl_sum: float
    mean_sentences: float


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[EvalRow, ...]
    documents: int
    skipped: int

    def render(self) -> str:
        lines = [f"# documents={self.documents} skipped={self.skipped}"]
        lines.append("system\tr1\tr2\trl\trl_sum\tmean_sentences")
        for row in self.rows:
            lines.append(
                f"{row.system}\t{row.r1:.1f}\t{row.r2:.1f}\t{row.rl:.1f}"
                f"\t{row.rl_sum:.1f}\t{row.mean_sentences:.2f}"
            )
        return "\n".join(lines)

    @classmethod
    def parse(cls, text: str) -> "EvalReport":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("#"):
            raise DataError("not an evaluation report")
        meta = dict(part.split("=") for part in lines[0][1:].split())
        rows = []
        for line in lines[2:]:
            system, r1, r2, rl, rl_sum, mean_sents = line.split("\t")
            rows.append(
                EvalRow(
                    system=system, r1=float(r1), r2=float(r2), rl=float(rl),
                    rl_sum=float(rl_sum), mean_sentences=float(mean_sents),
                )
            )
        return cls(
            rows=tuple(rows),
            documents=int(meta["documents"]),
            skipped=int(meta["skipped"]),
        )


def evaluate(
    corpus: Corpus, systems: Sequence[tuple[str, ExtractorFn]]
) -> EvalReport:
    """Score each system's extractions against gold summaries.

    Per document and system the extracted sentences (in the order the system
    returns them) are scored with ROUGE-1/2, flat ROUGE-L and summary-level
    ROUGE-L; F1s are macro-averaged across documents and reported as
    percentages rounded to one decimal.  Documents without a gold summary
    are skipped and counted.
    """
    scored_docs = [d for d in corpus if d.gold_summary is not None]
    skipped = len(corpus) - len(scored_docs)
    if not scored_docs:
        raise DataError("no documents with gold summaries to evaluate")
    rows: list[EvalRow] = []
    for name, extractor in systems:
        sums = np.zeros(4)
        count_total = 0
        for doc in scored_docs:
            indices = list(extractor(doc))
            cand = [doc.sentences[i].tokens for i in indices]
            ref = doc.gold_summary.sentence_tokens()
            flat_c, flat_r = metrics.flatten(cand), metrics.flatten(ref)
            sums += (
                metrics.rouge_n(flat_c, flat_r, 1).f1,
                metrics.rouge_n(flat_c, flat_r, 2).f1,
                metrics.rouge_l(flat_c, flat_r).f1,
                metrics.rouge_l_sum(cand, ref).f1,
            )
            count_total += len(indices)
        means = sums / len(scored_docs)
        rows.append(
            EvalRow(
                system=name,
                r1=round(means[0] * 100, 1),
                r2=round(means[1] * 100, 1),
                rl=round(means[2] * 100, 1),
                rl_sum=round(means[3] * 100, 1),
                mean_sentences=round(count_total / len(scored_docs), 2),
            )
        )
    return EvalReport(rows=tuple(rows), documents=len(scored_docs), skipped=skipped)
