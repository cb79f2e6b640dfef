"""Bundled text: a seeded template-grammar English corpus and helpers.

The shipped ``data/corpus.txt`` is produced by :func:`generate_corpus` with
the defaults below, so it can be regenerated bit-for-bit.
"""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

DEFAULT_CORPUS_BYTES = 200 * 1024
DEFAULT_CORPUS_SEED = 1234

_NAMES = [
    "Anna", "Ben", "Clara", "David", "Ella", "Frank", "Grace", "Henry", "Iris", "Jack",
    "Kate", "Leo", "Mia", "Noah", "Olive", "Paul", "Rose", "Sam", "Tess", "Will",
]
_NOUNS = [
    "host", "child", "meeting", "cat", "dog", "hat", "rain", "light", "hand", "boat",
    "field", "trail", "diary", "angel", "bread", "house", "river", "garden", "letter", "road",
    "king", "ship", "train", "car", "lamp", "table", "book", "door", "window", "horse",
    "bird", "tree", "stone", "coat", "farm", "town", "mill", "well", "wall", "bell",
    "song", "game", "ring", "card", "cup", "map", "box", "pan", "pot", "mouse",
]
_ADJECTIVES = [
    "happy", "quiet", "tired", "silver", "casual", "calm", "cold", "warm", "bright", "dark",
    "young", "old", "small", "large", "sad", "late", "early", "kind", "wild", "fair",
    "loud", "soft", "tall", "short", "clean", "busy", "brave", "proud", "rich", "poor",
]
_VERBS_PAST = [
    "found", "saw", "carried", "opened", "painted", "cleaned", "fixed", "sold", "bought", "moved",
    "filled", "lifted", "watched", "followed", "closed", "built", "washed", "pulled", "held", "kept",
]
_VERBS_INTRANS = [
    "started", "waited", "smiled", "slept", "rested", "walked", "sang", "laughed", "stayed", "left",
]
_TIMES = [
    "later", "today", "at noon", "at night", "in the morning", "after dinner", "before dawn",
    "on monday", "last week", "every day", "soon", "again",
]
_PLACES = [
    "by the river", "in the garden", "near the farm", "at the mill", "on the road",
    "in the town", "under the tree", "by the wall", "at the well", "in the house",
]


def _pick(rng: np.random.Generator, items):
    return items[int(rng.integers(len(items)))]


def _noun_phrase(rng) -> str:
    det = _pick(rng, ["the", "the", "a", "her", "his", "our", "their"])
    if rng.random() < 0.5:
        return f"{det} {_pick(rng, _ADJECTIVES)} {_pick(rng, _NOUNS)}"
    if det == "a":
        det = "the"
    return f"{det} {_pick(rng, _NOUNS)}"


def _subject(rng) -> str:
    return _pick(rng, _NAMES) if rng.random() < 0.4 else _noun_phrase(rng)


def _sentence(rng) -> str:
    kind = int(rng.integers(6))
    if kind == 0:
        s = f"{_subject(rng)} {_pick(rng, _VERBS_PAST)} {_noun_phrase(rng)} {_pick(rng, _PLACES)}"
    elif kind == 1:
        s = f"{_subject(rng)} {_pick(rng, _VERBS_INTRANS)} {_pick(rng, _TIMES)}"
    elif kind == 2:
        s = f"{_noun_phrase(rng)} looks {_pick(rng, _ADJECTIVES)}"
    elif kind == 3:
        s = f"{_subject(rng)} will start {_pick(rng, _TIMES)}"
    elif kind == 4:
        s = (f"{_subject(rng)} {_pick(rng, _VERBS_PAST)} {_noun_phrase(rng)} and "
             f"{_pick(rng, _VERBS_INTRANS)} {_pick(rng, _TIMES)}")
    else:
        s = f"{_noun_phrase(rng)} was {_pick(rng, _ADJECTIVES)} {_pick(rng, _PLACES)}"
    return s[0].upper() + s[1:] + "."


def generate_corpus(n_bytes: int = DEFAULT_CORPUS_BYTES, seed: int = DEFAULT_CORPUS_SEED) -> str:
    """Lines of 2-5 sentences each, about ``n_bytes`` of ASCII in total."""
    rng = np.random.default_rng(seed)
    lines: list[str] = []
    size = 0
    while size < n_bytes:
        line = " ".join(_sentence(rng) for _ in range(int(rng.integers(2, 6))))
        lines.append(line)
        size += len(line) + 1
    return "\n".join(lines) + "\n"


def default_corpus() -> str:
    return resources.files("pertprune").joinpath("data/corpus.txt").read_text(encoding="utf-8")


def read_corpus(path: str | Path) -> str:
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        raise ValueError(f"corpus {path} is empty")
    return text


def read_samples(path: str | Path) -> list[str]:
    """One sample per non-empty line."""
    return [line for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def split_corpus(text: str, holdout: float = 0.1) -> tuple[str, str]:
    """Split on a line boundary into (train, held-out)."""
    lines = text.splitlines()
    cut = max(1, int(round(len(lines) * (1.0 - holdout))))
    return "\n".join(lines[:cut]) + "\n", "\n".join(lines[cut:]) + "\n"


def calibration_samples(text: str, n: int = 4, max_chars: int = 100, seed: int = 0) -> list[str]:
    """Pick ``n`` distinct lines, trimmed to whole sentences within ``max_chars``."""
    lines = [line for line in text.splitlines() if line.strip()]
    if len(lines) < n:
        raise ValueError(f"need {n} lines, corpus has {len(lines)}")
    rng = np.random.default_rng(seed)
    out = []
    for i in rng.choice(len(lines), size=n, replace=False):
        line = lines[int(i)]
        if len(line) > max_chars:
            cut = line.rfind(". ", 0, max_chars)
            line = line[: cut + 1] if cut > 0 else line[:max_chars]
        out.append(line)
    return out
