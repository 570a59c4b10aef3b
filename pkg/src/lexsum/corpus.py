"""Corpus ingestion: sentence segmentation, tokenization, JSONL loading,
deterministic splitting, vocabulary construction and dataset statistics.

The tokenizer here is the single shared definition of a "word" for the whole
pipeline; every scoring path imports it so ROUGE numbers are comparable
across modules.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np


class DataError(Exception):
    """Malformed or inconsistent input data (CLI exit code 2)."""


# Trailing words that end with a period but do not end a sentence.  Matched
# case-insensitively against the whitespace-delimited token ending at a
# candidate boundary.
ABBREVIATIONS = frozenset(
    {
        "v.", "vs.", "u.s.", "u.s.c.", "u.s.c.a.", "s.ct.", "f.2d.", "f.3d.",
        "no.", "nos.", "inc.", "co.", "corp.", "ltd.", "l.l.c.",
        "mr.", "mrs.", "ms.", "dr.", "jr.", "sr.", "esq.", "hon.",
        "st.", "ave.", "dept.", "dist.", "div.", "fed.", "cir.",
        "stat.", "sec.", "secs.", "art.", "cl.", "ch.", "pt.", "pp.", "p.",
        "rev.", "supp.", "ann.", "reg.", "amend.",
        "e.g.", "i.e.", "cf.", "id.", "ibid.", "et.", "al.", "etc.", "approx.",
    }
)

_BOUNDARY = re.compile(r"[.?!]+(?=\s+[A-Z])")
_TOKEN = re.compile(r"[a-z0-9]+")


def segment_text(raw: str) -> list[str]:
    """Split raw text into sentences.

    A boundary is a run of ``.?!`` followed by whitespace and an uppercase
    letter, unless the word ending at the punctuation is a known
    abbreviation.  Joining the result restores the input up to whitespace.
    """
    sentences: list[str] = []
    start = 0
    for m in _BOUNDARY.finditer(raw):
        end = m.end()
        i = end
        while i > start and not raw[i - 1].isspace():
            i -= 1
        if raw[i:end].lower() in ABBREVIATIONS:
            continue
        piece = raw[start:end].strip()
        if piece:
            sentences.append(piece)
        start = end
    tail = raw[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def tokenize(text: str) -> list[str]:
    """Lowercase and split into alphanumeric runs; digits kept, no stemming."""
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class Sentence:
    """One sentence: raw surface text plus its derived tokens."""

    raw: str
    tokens: tuple[str, ...]

    @classmethod
    def from_raw(cls, raw: str) -> "Sentence":
        return cls(raw=raw, tokens=tuple(tokenize(raw)))


@dataclass(frozen=True)
class GoldSummary:
    """Reference summary sentences (text, possibly not verbatim from the doc)."""

    sentences: tuple[Sentence, ...]

    def sentence_tokens(self) -> list[tuple[str, ...]]:
        return [s.tokens for s in self.sentences]


@dataclass(frozen=True)
class Document:
    """An ordered list of sentences with an id and an optional gold summary."""

    id: str
    sentences: tuple[Sentence, ...]
    gold_summary: GoldSummary | None = None

    def sentence_tokens(self) -> list[tuple[str, ...]]:
        return [s.tokens for s in self.sentences]

    def word_count(self) -> int:
        return sum(len(s.tokens) for s in self.sentences)


class Corpus:
    """A sequence of documents with unique ids, in load order."""

    def __init__(self, documents: Sequence[Document]):
        self.documents = list(documents)
        seen: set[str] = set()
        for doc in self.documents:
            if doc.id in seen:
                raise DataError(f"duplicate document id {doc.id!r}")
            seen.add(doc.id)

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self) -> Iterator[Document]:
        return iter(self.documents)

    def __getitem__(self, i: int) -> Document:
        return self.documents[i]

    def ids(self) -> list[str]:
        return [d.id for d in self.documents]


def _document_from_record(record: dict, line_no: int) -> Document:
    if not isinstance(record, dict) or "id" not in record:
        raise DataError(f"line {line_no}: record must be an object with an 'id'")
    doc_id = str(record["id"])
    if "sentences" in record:
        sentences = tuple(Sentence.from_raw(s) for s in record["sentences"])
        summary_texts = record.get("summary_sentences")
    elif "text" in record:
        sentences = tuple(Sentence.from_raw(s) for s in segment_text(record["text"]))
        summary_raw = record.get("summary")
        summary_texts = segment_text(summary_raw) if summary_raw else None
    else:
        raise DataError(f"line {line_no}: record needs 'text' or 'sentences'")
    gold = None
    if summary_texts:
        gold = GoldSummary(tuple(Sentence.from_raw(s) for s in summary_texts))
    return Document(id=doc_id, sentences=sentences, gold_summary=gold)


def load_corpus(path: str | Path, fmt: str = "jsonl") -> Corpus:
    """Load a corpus from JSONL, one document object per line.

    Records carry either raw ``text`` (segmented here) or a pre-segmented
    ``sentences`` array, which bypasses segmentation.  Line order is
    preserved; malformed lines and duplicate ids raise :class:`DataError`.
    """
    if fmt != "jsonl":
        raise DataError(f"unsupported corpus format {fmt!r}")
    documents: list[Document] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {line_no}: malformed JSON ({exc.msg})") from exc
            documents.append(_document_from_record(record, line_no))
    return Corpus(documents)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write the canonical pre-segmented JSONL form (round-trips exactly)."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus:
            record: dict = {"id": doc.id, "sentences": [s.raw for s in doc.sentences]}
            if doc.gold_summary is not None:
                record["summary_sentences"] = [
                    s.raw for s in doc.gold_summary.sentences
                ]
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def allocate_split_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    """Floor-allocate ``n`` items to the given ratios, remainder to the first."""
    if any(r < 0 for r in ratios):
        raise DataError("split ratios must be non-negative")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {sum(ratios)}")
    sizes = [math.floor(r * n) for r in ratios]
    sizes[0] += n - sum(sizes)
    return sizes


def split_corpus(
    corpus: Corpus,
    ratios: Sequence[float] = (0.94, 0.03, 0.03),
    seed: int = 0,
) -> tuple[Corpus, Corpus, Corpus]:
    """Deterministic disjoint train/val/test partition.

    Sizes are floor-allocated with the remainder going to train.  Documents
    keep their original relative order inside each split.
    """
    if len(ratios) != 3:
        raise DataError("expected exactly three ratios (train, val, test)")
    nonzero = sum(1 for r in ratios if r > 0)
    if len(corpus) < nonzero:
        raise DataError(
            f"corpus of {len(corpus)} documents cannot be split {nonzero} ways"
        )
    sizes = allocate_split_sizes(len(corpus), ratios)
    perm = np.random.default_rng(seed).permutation(len(corpus))
    parts: list[Corpus] = []
    offset = 0
    for size in sizes:
        chosen = sorted(perm[offset : offset + size])
        parts.append(Corpus([corpus[i] for i in chosen]))
        offset += size
    return parts[0], parts[1], parts[2]


PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


class Vocab:
    """Token/id bijection with fixed PAD=0 and UNK=1 specials."""

    def __init__(self, tokens: Iterable[str]):
        self.id_to_token: list[str] = [PAD_TOKEN, UNK_TOKEN]
        self.token_to_id: dict[str, int] = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
        for tok in tokens:
            if tok in self.token_to_id:
                raise ValueError(f"duplicate vocabulary token {tok!r}")
            self.token_to_id[tok] = len(self.id_to_token)
            self.id_to_token.append(tok)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, tokens: Sequence[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK_ID) for t in tokens]

    def tokens(self) -> list[str]:
        """Non-special tokens in insertion order (for serialization)."""
        return self.id_to_token[2:]


def build_vocab(corpus: Corpus, min_freq: int = 1) -> Vocab:
    """Vocabulary of document tokens with frequency >= min_freq.

    Insertion order is descending frequency, ties broken lexicographically,
    so construction is deterministic for a given corpus.
    """
    if min_freq < 1:
        raise ValueError(f"min_freq must be >= 1, got {min_freq}")
    counts: Counter = Counter()
    for doc in corpus:
        for sent in doc.sentences:
            counts.update(sent.tokens)
    kept = sorted(
        (t for t, c in counts.items() if c >= min_freq),
        key=lambda t: (-counts[t], t),
    )
    return Vocab(kept)


@dataclass(frozen=True)
class FieldStats:
    average: float
    median: float
    q90: float


@dataclass(frozen=True)
class CorpusStats:
    """Per-corpus length distributions and the summary compression ratio."""

    words_per_doc: FieldStats
    sentences_per_doc: FieldStats
    words_per_summary: FieldStats | None
    sentences_per_summary: FieldStats | None
    compression_ratio: float | None


def _field_stats(values: Sequence[int]) -> FieldStats:
    ordered = sorted(values)
    n = len(ordered)
    # median: lower-middle element for even counts; q90: ceil(0.9 n)-th value
    return FieldStats(
        average=sum(ordered) / n,
        median=float(ordered[(n - 1) // 2]),
        q90=float(ordered[math.ceil(0.9 * n) - 1]),
    )


def compute_stats(corpus: Corpus) -> CorpusStats:
    """Length statistics over a corpus; summary fields cover documents that
    have a gold summary (None when none do)."""
    if len(corpus) == 0:
        raise DataError("cannot compute statistics of an empty corpus")
    doc_words = [doc.word_count() for doc in corpus]
    doc_sents = [len(doc.sentences) for doc in corpus]
    with_summary = [doc for doc in corpus if doc.gold_summary is not None]
    if with_summary:
        sum_words = [
            sum(len(s.tokens) for s in d.gold_summary.sentences) for d in with_summary
        ]
        sum_sents = [len(d.gold_summary.sentences) for d in with_summary]
        total_doc_words = sum(d.word_count() for d in with_summary)
        ratio = sum(sum_words) / total_doc_words if total_doc_words else None
        return CorpusStats(
            words_per_doc=_field_stats(doc_words),
            sentences_per_doc=_field_stats(doc_sents),
            words_per_summary=_field_stats(sum_words),
            sentences_per_summary=_field_stats(sum_sents),
            compression_ratio=ratio,
        )
    return CorpusStats(
        words_per_doc=_field_stats(doc_words),
        sentences_per_doc=_field_stats(doc_sents),
        words_per_summary=None,
        sentences_per_summary=None,
        compression_ratio=None,
    )


def render_stats(stats: CorpusStats) -> str:
    """Human-readable statistics table."""
    rows = [("", "average", "median", "q90")]

    def add(name: str, f: FieldStats | None) -> None:
        if f is None:
            rows.append((name, "-", "-", "-"))
        else:
            rows.append((name, f"{f.average:.1f}", f"{f.median:.1f}", f"{f.q90:.1f}"))

    add("words per document", stats.words_per_doc)
    add("sentences per document", stats.sentences_per_doc)
    add("words per summary", stats.words_per_summary)
    add("sentences per summary", stats.sentences_per_summary)
    width = max(len(r[0]) for r in rows)
    lines = [
        f"{name:<{width}}  {a:>9}  {b:>9}  {c:>9}" for name, a, b, c in rows
    ]
    if stats.compression_ratio is not None:
        lines.append(f"compression ratio: {stats.compression_ratio:.3f}")
    return "\n".join(lines)
