"""Synthetic corpora with planted summary sentences.

The real training corpus cannot be redistributed, so experiments and tests
run on generated documents: filler sentences drawn from one vocabulary and
a few "marker" sentences drawn from a disjoint sub-vocabulary.  The gold
summary is exactly the marker sentences, which makes the best extraction
known by construction and learnability measurable.
"""

from __future__ import annotations

import numpy as np

from .corpus import Corpus, Document, GoldSummary, Sentence


def make_marker_corpus(
    n_docs: int,
    n_sentences: int = 20,
    n_markers: int = 4,
    filler_vocab: int = 30,
    marker_vocab: int = 8,
    min_tokens: int = 5,
    max_tokens: int = 8,
    seed: int = 0,
    id_prefix: str = "doc",
) -> Corpus:
    """Generate documents whose gold summary is the marker sentences' text."""
    if n_markers > n_sentences:
        raise ValueError("n_markers cannot exceed n_sentences")
    rng = np.random.default_rng(seed)
    fillers = [f"w{i:03d}" for i in range(filler_vocab)]
    markers = [f"key{i:02d}" for i in range(marker_vocab)]
    documents = []
    for d in range(n_docs):
        positions = set(rng.choice(n_sentences, size=n_markers, replace=False).tolist())
        sentences = []
        for i in range(n_sentences):
            pool = markers if i in positions else fillers
            length = int(rng.integers(min_tokens, max_tokens + 1))
            toks = [pool[int(j)] for j in rng.integers(0, len(pool), size=length)]
            sentences.append(Sentence.from_raw(" ".join(toks)))
        gold = GoldSummary(tuple(sentences[i] for i in sorted(positions)))
        documents.append(
            Document(
                id=f"{id_prefix}{d:05d}",
                sentences=tuple(sentences),
                gold_summary=gold,
            )
        )
    return Corpus(documents)
