"""Character-level word edits: adjacent swap, single replacement, single insertion.

Edits are seeded and deterministic. An optional lexicon of real-word flips
(``later -> alter``) is preferred over random edits when it matches words in
a sample, so that the edit changes meaning rather than producing a typo.
"""
from __future__ import annotations

import logging
import re
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

METHODS = ("swap", "replace", "insert")
MAX_ATTEMPTS = 8
WORD_RE = re.compile(r"[A-Za-z]+")


def perturb_swap(word: str, position: int) -> str:
    """Exchange the characters at ``position`` and ``position + 1``."""
    if len(word) < 2:
        raise ValueError(f"cannot swap inside a word shorter than 2 characters: {word!r}")
    if not 0 <= position < len(word) - 1:
        raise IndexError(f"swap position {position} out of range for {word!r}")
    return word[:position] + word[position + 1] + word[position] + word[position + 2:]


def perturb_replace(word: str, position: int, new_char: str) -> str:
    if not 0 <= position < len(word):
        raise IndexError(f"replace position {position} out of range for {word!r}")
    if len(new_char) != 1:
        raise ValueError("new_char must be a single character")
    if word[position] == new_char:
        raise ValueError(f"replacement {new_char!r} equals the existing character")
    return word[:position] + new_char + word[position + 1:]


def perturb_insert(word: str, position: int, new_char: str) -> str:
    if not 0 <= position <= len(word):
        raise IndexError(f"insert position {position} out of range for {word!r}")
    if len(new_char) != 1:
        raise ValueError("new_char must be a single character")
    return word[:position] + new_char + word[position:]


def classify_edit(before: str, after: str) -> str | None:
    """Name the single edit turning ``before`` into ``after``, or None."""
    if len(after) == len(before) + 1:
        for i in range(len(after)):
            if after[:i] + after[i + 1:] == before:
                return "insert"
        return None
    if len(after) != len(before) or before == after:
        return None
    diff = [i for i, (a, b) in enumerate(zip(before, after)) if a != b]
    if len(diff) == 1:
        return "replace"
    if len(diff) == 2 and diff[1] == diff[0] + 1 and perturb_swap(before, diff[0]) == after:
        return "swap"
    return None


def load_lexicon(path: str | Path | None = None) -> list[tuple[str, str]]:
    """Read ``source<TAB>target`` pairs; ``None`` loads the bundled list."""
    if path is None:
        text = resources.files("pertprune").joinpath("data/lexicon.tsv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise ValueError(f"lexicon line {lineno}: expected 'source<TAB>target', got {line!r}")
        pairs.append((parts[0], parts[1]))
    return pairs


@dataclass(frozen=True)
class PerturbationSpec:
    method: str = "swap"
    words_per_sample: int = 1
    seed: int = 0
    draws: int = 4
    lexicon: tuple[tuple[str, str], ...] | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown perturbation method {self.method!r}; choose from {METHODS}")
        if self.words_per_sample < 1:
            raise ValueError("words_per_sample must be >= 1")
        if self.draws < 1:
            raise ValueError("draws must be >= 1")
        if self.lexicon is not None:
            object.__setattr__(self, "lexicon", tuple(tuple(p) for p in self.lexicon))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "words_per_sample": self.words_per_sample,
            "seed": self.seed,
            "draws": self.draws,
            "lexicon": None if self.lexicon is None else [list(p) for p in self.lexicon],
        }


@dataclass(frozen=True)
class Edit:
    word_position: int
    before: str
    after: str


@dataclass
class PerturbedPair:
    original: str
    perturbed: str
    edits: list[Edit]
    skipped: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "original": self.original,
            "perturbed": self.perturbed,
            "edits": [[e.word_position, e.before, e.after] for e in self.edits],
            "skipped": list(self.skipped),
        }


def apply_edits(text: str, edits: Sequence[Edit]) -> str:
    """Rewrite the words of ``text`` at the edited ordinal positions."""
    by_pos = {e.word_position: e for e in edits}
    out, last = [], 0
    for n, m in enumerate(WORD_RE.finditer(text)):
        e = by_pos.get(n)
        if e is None:
            continue
        if m.group() != e.before:
            raise ValueError(f"word {n} is {m.group()!r}, edit expects {e.before!r}")
        out.append(text[last:m.start()])
        out.append(e.after)
        last = m.end()
    out.append(text[last:])
    return "".join(out)


def _match_case(template: str, word: str) -> str:
    if template[:1].isupper():
        return word[:1].upper() + word[1:]
    return word


def _random_edit(word: str, method: str, rng: np.random.Generator) -> str | None:
    """One random edit of ``method``; None after MAX_ATTEMPTS no-op draws."""
    letters = string.ascii_lowercase
    for _ in range(MAX_ATTEMPTS):
        if method == "swap":
            if len(word) < 2:
                return None
            pos = int(rng.integers(len(word) - 1))
            if word[pos] == word[pos + 1]:
                continue
            return perturb_swap(word, pos)
        if method == "replace":
            pos = int(rng.integers(len(word)))
            ch = letters[int(rng.integers(26))]
            if word[pos].isupper():
                ch = ch.upper()
            if ch == word[pos]:
                continue
            return perturb_replace(word, pos, ch)
        pos = int(rng.integers(len(word) + 1))
        return perturb_insert(word, pos, letters[int(rng.integers(26))])
    return None


def perturb_sample(
    text: str,
    spec: PerturbationSpec,
    rng: np.random.Generator,
    lexicon_map: dict[str, list[str]] | None = None,
) -> PerturbedPair:
    words = [m.group() for m in WORD_RE.finditer(text)]
    want = spec.words_per_sample
    if len(words) < want:
        raise ValueError(f"sample has {len(words)} words, fewer than words_per_sample={want}")

    chosen: list[int] = []
    if lexicon_map:
        hits = [i for i, w in enumerate(words) if w.lower() in lexicon_map]
        if hits:
            order = rng.permutation(len(hits))
            chosen = [hits[int(j)] for j in order[:want]]
    rest = [i for i in range(len(words)) if i not in chosen]
    if spec.method == "swap":
        rest = [i for i in rest if len(words[i]) >= 2]
    order = rng.permutation(len(rest))
    candidates = [rest[int(j)] for j in order]

    edits: list[Edit] = []
    skipped: list[int] = []
    for i in chosen:
        targets = lexicon_map[words[i].lower()]
        after = _match_case(words[i], targets[int(rng.integers(len(targets)))])
        edits.append(Edit(i, words[i], after))
    for i in candidates:
        if len(edits) >= want:
            break
        after = _random_edit(words[i], spec.method, rng)
        if after is None:
            log.warning("no effective %s edit for word %r after %d attempts; skipped",
                        spec.method, words[i], MAX_ATTEMPTS)
            skipped.append(i)
            continue
        edits.append(Edit(i, words[i], after))
    edits.sort(key=lambda e: e.word_position)
    return PerturbedPair(text, apply_edits(text, edits), edits, skipped)


def lexicon_for_method(lexicon, method: str) -> dict[str, list[str]]:
    """Lower-cased source -> targets, keeping only pairs whose edit is ``method``."""
    out: dict[str, list[str]] = {}
    for src, dst in lexicon or ():
        if classify_edit(src.lower(), dst.lower()) == method:
            out.setdefault(src.lower(), []).append(dst.lower())
    return out


def perturb_corpus(samples: Sequence[str], spec: PerturbationSpec, draw_index: int) -> list[PerturbedPair]:
    """Perturb every sample for one draw; a pure function of its arguments."""
    if not samples:
        raise ValueError("cannot perturb an empty corpus")
    if not 0 <= draw_index < spec.draws:
        raise IndexError(f"draw_index {draw_index} out of range for {spec.draws} draws")
    rng = np.random.default_rng([spec.seed, draw_index])
    lex = lexicon_for_method(spec.lexicon, spec.method) if spec.lexicon else None
    return [perturb_sample(s, spec, rng, lex) for s in samples]


def perturbed_views(samples: Sequence[str], spec: PerturbationSpec) -> list[list[str]]:
    """All K perturbed copies of ``samples`` as plain strings, indexed [draw][sample]."""
    return [[p.perturbed for p in perturb_corpus(samples, spec, k)] for k in range(spec.draws)]
