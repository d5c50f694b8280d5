"""Term vocabulary with counts, rare-term folding, and prevalence weights."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .preprocess import NULL_TERM, OBSCURE_TERM, TermRecord

_FORMAT_VERSION = 1
NULL_INDEX = 0
OBSCURE_INDEX = 1


class VocabError(Exception):
    pass


@dataclass
class Vocabulary:
    """Frozen term<->index bijection with per-term training counts.

    Index 0 is NULL_TERM, index 1 is OBSCURE_TERM (which also absorbs the
    counts of folded rare terms).  Remaining indices are assigned by
    descending count, ties broken lexicographically.
    """

    terms: list[str]
    counts: np.ndarray  # int64, len == |V|
    total_tokens: int
    floor: int
    term_to_index: dict[str, int]

    def __post_init__(self):
        assert self.terms[NULL_INDEX] == NULL_TERM
        assert self.terms[OBSCURE_INDEX] == OBSCURE_TERM

    def __len__(self) -> int:
        return len(self.terms)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Vocabulary)
            and self.terms == other.terms
            and np.array_equal(self.counts, other.counts)
            and self.total_tokens == other.total_tokens
            and self.floor == other.floor
        )

    def index_of(self, term: str) -> int:
        """Index of a term; absent terms fold into OBSCURE_TERM."""
        return self.term_to_index.get(term, OBSCURE_INDEX)

    def term_weight(self, idx: int) -> float:
        """Information content -ln(count / total) of the term at idx."""
        count = int(self.counts[idx])
        if count <= 0:
            raise VocabError(f"term index {idx} has zero count")
        return -math.log(count / self.total_tokens)

    def weight_vector(self) -> np.ndarray:
        """Per-index weights for loss weighting and sampling.

        Indices that never occurred in the training corpus (possible for the
        reserved slots) are treated as if seen once, i.e. maximally rare.
        """
        counts = np.maximum(self.counts.astype(np.float64), 1.0)
        return -np.log(counts / float(self.total_tokens))


def build(term_stream: Iterable[TermRecord], floor: int = 10) -> Vocabulary:
    """Two-pass vocabulary construction with rare-term folding."""
    raw_counts: dict[str, int] = {}
    total = 0
    for record in term_stream:
        for term in record.terms:
            raw_counts[term] = raw_counts.get(term, 0) + 1
            total += 1
    if total == 0:
        raise VocabError("cannot build a vocabulary from an empty stream")

    null_count = raw_counts.pop(NULL_TERM, 0)
    obscure_count = raw_counts.pop(OBSCURE_TERM, 0)
    kept: list[tuple[str, int]] = []
    for term, count in raw_counts.items():
        if count >= floor:
            kept.append((term, count))
        else:
            obscure_count += count
    kept.sort(key=lambda item: (-item[1], item[0]))

    terms = [NULL_TERM, OBSCURE_TERM] + [term for term, _ in kept]
    counts = np.array(
        [null_count, obscure_count] + [count for _, count in kept], dtype=np.int64
    )
    return Vocabulary(
        terms=terms,
        counts=counts,
        total_tokens=total,
        floor=floor,
        term_to_index={term: i for i, term in enumerate(terms)},
    )


def _escape(term: str) -> str:
    return (
        term.replace("\\", "\\\\")
        .replace("\t", "\\t")
        .replace("\n", "\\n")
        .replace("\r", "\\r")
    )


def _unescape(term: str) -> str:
    out = []
    it = iter(term)
    for ch in it:
        if ch != "\\":
            out.append(ch)
            continue
        nxt = next(it, "")
        out.append({"t": "\t", "n": "\n", "r": "\r", "\\": "\\"}.get(nxt, "\\" + nxt))
    return "".join(out)


def save(vocab: Vocabulary, path: str) -> None:
    """Write the vocab file: header, one term per line, trailing checksum."""
    lines = [
        f"logbaseline-vocab\t{_FORMAT_VERSION}\t{len(vocab)}\t"
        f"{vocab.total_tokens}\t{vocab.floor}"
    ]
    for idx, term in enumerate(vocab.terms):
        lines.append(f"{idx}\t{_escape(term)}\t{int(vocab.counts[idx])}")
    body = "\n".join(lines) + "\n"
    checksum = zlib.crc32(body.encode("utf-8"))
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(body)
        handle.write(f"#crc\t{checksum:08x}\n")


def load(path: str) -> Vocabulary:
    with open(path, "r", encoding="utf-8", newline="") as handle:
        content = handle.read()
    # strict "\n" splitting: terms may contain unicode line separators
    lines = content.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 2 or not lines[-1].startswith("#crc\t"):
        raise VocabError(f"{path}: missing checksum line (truncated file?)")
    body = "\n".join(lines[:-1]) + "\n"
    expected = lines[-1].split("\t", 1)[1]
    actual = f"{zlib.crc32(body.encode('utf-8')):08x}"
    if actual != expected:
        raise VocabError(f"{path}: checksum mismatch ({actual} != {expected})")

    header = lines[0].split("\t")
    if len(header) != 5 or header[0] != "logbaseline-vocab":
        raise VocabError(f"{path}: not a vocab file")
    if int(header[1]) != _FORMAT_VERSION:
        raise VocabError(f"{path}: unsupported vocab version {header[1]}")
    size, total_tokens, floor = int(header[2]), int(header[3]), int(header[4])

    terms: list[str] = []
    counts = np.zeros(size, dtype=np.int64)
    for line in lines[1:-1]:
        idx_s, term, count_s = line.split("\t")
        idx = int(idx_s)
        if idx != len(terms):
            raise VocabError(f"{path}: out-of-order index {idx}")
        terms.append(_unescape(term))
        counts[idx] = int(count_s)
    if len(terms) != size:
        raise VocabError(f"{path}: expected {size} terms, found {len(terms)}")

    return Vocabulary(
        terms=terms,
        counts=counts,
        total_tokens=total_tokens,
        floor=floor,
        term_to_index={term: i for i, term in enumerate(terms)},
    )
