"""Caption phrase extraction and embedding-based candidate ranking.

This is the open-vocabulary branch operating on precomputed fixtures: a
rule-based phrase extractor (fixed stopword lexicon, no tagger) and
cosine ranking of candidate texts against a mask's region embedding.
"""
from __future__ import annotations

import importlib.resources
import logging
import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyCaption,
    MissingRegionEmbedding,
    MissingTextEmbedding,
    SchemaError,
    ZeroVector,
)

log = logging.getLogger(__name__)

ORIGIN_CAPTION = "caption_phrase"
ORIGIN_CLOSED = "closed_set_name"

MAX_PHRASE_TOKENS = 3

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")


@dataclass(frozen=True)
class Caption:
    """One caption describing one mask region."""

    mask_id: str
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise SchemaError(f"caption for mask {self.mask_id!r} is empty")


@dataclass(frozen=True)
class CandidateLabel:
    text: str
    similarity: float  # cosine(region, text) in [-1, 1]
    origin: str  # ORIGIN_CAPTION or ORIGIN_CLOSED


class EmbeddingTable:
    """Named unit vectors for mask regions and label texts.

    Vectors are L2-normalized at construction; names are matched after
    lowercasing and trimming.
    """

    def __init__(self, dim: int, entries: dict):
        if dim < 1:
            raise SchemaError(f"embedding dim must be positive, got {dim}")
        self.dim = dim
        self.entries = {}
        for name, vec in entries.items():
            key = name.strip().lower()
            if key in self.entries:
                raise SchemaError(f"duplicate embedding name {key!r}")
            v = np.asarray(vec, dtype=np.float64)
            if v.shape != (dim,):
                raise DimensionMismatch(
                    f"embedding {key!r} has shape {v.shape}, expected ({dim},)"
                )
            norm = float(np.linalg.norm(v))
            if norm == 0.0:
                raise ZeroVector(f"embedding {key!r} is the zero vector")
            self.entries[key] = v / norm

    def get(self, name: str):
        return self.entries.get(name.strip().lower())

    def __len__(self):
        return len(self.entries)


def load_stopwords(path=None) -> frozenset[str]:
    """Load the stopword lexicon; defaults to the embedded data file."""
    if path is None:
        return _default_stopwords()
    with open(path, encoding="utf-8") as f:
        text = f.read()
    return _parse_stopwords(text)


def _parse_stopwords(text: str) -> frozenset[str]:
    words = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line:
            words.add(line)
    return frozenset(words)


@lru_cache(maxsize=1)
def _default_stopwords() -> frozenset[str]:
    text = (importlib.resources.files("maskfuse") / "data" / "stopwords.txt").read_text(
        encoding="utf-8"
    )
    return _parse_stopwords(text)


def extract_noun_phrases(caption: Caption, stopwords=None) -> list[str]:
    """Candidate label phrases from a caption, deterministic and rule-based.

    Lowercase, split on whitespace/punctuation, drop stopwords; every
    maximal surviving run contributes its windows of up to 3 tokens plus
    each token alone. Order is first occurrence; duplicates removed.
    """
    if stopwords is None:
        stopwords = _default_stopwords()
    tokens = _TOKEN_RE.findall(caption.text.lower())
    runs: list[list[str]] = []
    current: list[str] = []
    for tok in tokens:
        if tok in stopwords:
            if current:
                runs.append(current)
                current = []
        else:
            current.append(tok)
    if current:
        runs.append(current)

    out: list[str] = []
    seen: set[str] = set()

    def add(phrase: str):
        if phrase not in seen:
            seen.add(phrase)
            out.append(phrase)

    for run in runs:
        width = min(len(run), MAX_PHRASE_TOKENS)
        for i in range(len(run) - width + 1):
            add(" ".join(run[i : i + width]))
        for tok in run:
            add(tok)

    if not out:
        raise EmptyCaption(f"caption for mask {caption.mask_id!r} has no candidate phrases")
    return out


def cosine(a, b) -> float:
    """Cosine similarity, clamped to [-1, 1] against rounding."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"vector shapes differ: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine undefined for zero vector")
    return float(np.clip(float(np.dot(a, b)) / (na * nb), -1.0, 1.0))


def rank_candidates(
    region_key: str,
    phrases,
    closed_names,
    table: EmbeddingTable,
    top_k: int = 3,
    strict: bool = False,
) -> list[CandidateLabel]:
    """Top-k candidate labels for a region by cosine similarity.

    Ties break lexicographically by text. In lenient mode (default),
    candidates without a text embedding are skipped with a warning;
    strict mode raises MissingTextEmbedding.
    """
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    region = table.get(region_key)
    if region is None:
        raise MissingRegionEmbedding(f"no region embedding for {region_key!r}")

    candidates: list[tuple[str, str]] = []
    seen: set[str] = set()
    for text, origin in [(p, ORIGIN_CAPTION) for p in phrases] + [
        (n, ORIGIN_CLOSED) for n in closed_names
    ]:
        key = text.strip().lower()
        if key and key not in seen:
            seen.add(key)
            candidates.append((key, origin))

    scored = []
    for text, origin in candidates:
        vec = table.get(text)
        if vec is None:
            if strict:
                raise MissingTextEmbedding(f"no text embedding for candidate {text!r}")
            log.warning("skipping candidate %r: no text embedding", text)
            continue
        scored.append(CandidateLabel(text=text, similarity=cosine(region, vec), origin=origin))

    scored.sort(key=lambda c: (-c.similarity, c.text))
    return scored[:top_k]
