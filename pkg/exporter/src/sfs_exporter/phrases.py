"""Caption phrase extraction, kept rule-compatible with the engine.

The stopword lexicon is read from the engine's data file so exported
text-embedding tables cover exactly the phrases the engine will rank.
"""
from __future__ import annotations

import re
from functools import lru_cache

MAX_PHRASE_TOKENS = 3
_TOKEN_RE = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")


@lru_cache(maxsize=4)
def load_lexicon(path=None) -> frozenset:
    """Stopword set; defaults to the lexicon shipped inside the engine package."""
    if path is None:
        import importlib.resources

        text = (importlib.resources.files("maskfuse") / "data" / "stopwords.txt").read_text(
            encoding="utf-8"
        )
    else:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    words = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line:
            words.add(line)
    return frozenset(words)


def extract_phrases(caption: str, stopwords) -> list[str]:
    """Same rules as the engine: stopword-split runs, 3-token windows, singles."""
    tokens = _TOKEN_RE.findall(caption.lower())
    runs = []
    current = []
    for tok in tokens:
        if tok in stopwords:
            if current:
                runs.append(current)
                current = []
        else:
            current.append(tok)
    if current:
        runs.append(current)
    out = []
    seen = set()
    for run in runs:
        width = min(len(run), MAX_PHRASE_TOKENS)
        for i in range(len(run) - width + 1):
            phrase = " ".join(run[i : i + width])
            if phrase not in seen:
                seen.add(phrase)
                out.append(phrase)
        for tok in run:
            if tok not in seen:
                seen.add(tok)
                out.append(tok)
    return out
