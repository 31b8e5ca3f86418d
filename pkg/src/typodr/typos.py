"""Character-level typo generation for queries.

Five transformations are supported: random character insertion, deletion,
substitution, swapping of neighboring characters, and keyboard-adjacent
character swapping.  A single transformation always yields a string at
Damerau-Levenshtein distance exactly 1 from the source, so Substitute
never re-inserts the original character and NeighborSwap refuses
positions where the two characters are equal.

All randomness flows through SplitMix64 (see rng.py), so variant
generation is bit-reproducible across platforms for a fixed seed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from .errors import InputError
from .rng import SplitMix64

ALPHABET = "abcdefghijklmnopqrstuvwxyz"

_QWERTY_ROWS = ["qwertyuiop", "asdfghjkl", "zxcvbnm"]


def _build_qwerty_adjacency() -> dict[str, tuple[str, ...]]:
    """US QWERTY adjacency over lowercase letters.

    Key (r, i) neighbors, in order: left and right on the same row, then
    the row above at columns i-1 and i, then the row below at columns i
    and i+1.  Symmetric by construction.
    """
    adj: dict[str, list[str]] = {}
    for r, row in enumerate(_QWERTY_ROWS):
        for i, ch in enumerate(row):
            neighbors: list[str] = []
            if i > 0:
                neighbors.append(row[i - 1])
            if i + 1 < len(row):
                neighbors.append(row[i + 1])
            if r > 0:
                above = _QWERTY_ROWS[r - 1]
                for j in (i - 1, i):
                    if 0 <= j < len(above):
                        neighbors.append(above[j])
            if r + 1 < len(_QWERTY_ROWS):
                below = _QWERTY_ROWS[r + 1]
                for j in (i, i + 1):
                    if 0 <= j < len(below):
                        neighbors.append(below[j])
            adj[ch] = tuple(dict.fromkeys(neighbors))
    return adj


#: Ordered adjacency map; adj['q'] == ('w', 'a', 's').
KEYBOARD_ADJACENCY: dict[str, tuple[str, ...]] = _build_qwerty_adjacency()


class TypoTransform(Enum):
    INSERT = "insert"
    DELETE = "delete"
    SUBSTITUTE = "substitute"
    NEIGHBOR_SWAP = "neighbor_swap"
    KEYBOARD_SWAP = "keyboard_swap"


ALL_TRANSFORMS = tuple(TypoTransform)


@dataclass(frozen=True)
class AugmentationPolicy:
    """How many variants to make and which words are fair game."""

    k: int
    min_word_len: int = 3
    transforms_per_variant: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.k < 0:
            raise InputError("k must be >= 0")
        if self.min_word_len < 3:
            raise InputError("min_word_len must be >= 3")
        if self.transforms_per_variant < 1:
            raise InputError("transforms_per_variant must be >= 1")


def apply_transform(
    text: str,
    kind: TypoTransform,
    position: int,
    choice: int = 0,
) -> str:
    """Apply one deterministic transformation at `position`.

    `choice` indexes the replacement alphabet for Insert/Substitute (for
    Substitute, the alphabet with the current character removed, so the
    result always differs) or the adjacency list for KeyboardSwap; it is
    ignored for Delete and NeighborSwap.
    """
    if not text:
        raise InputError("cannot transform empty text")
    n = len(text)
    if kind is TypoTransform.INSERT:
        if not 0 <= position <= n:
            raise InputError(f"insert position {position} out of range for length {n}")
        ch = ALPHABET[choice % len(ALPHABET)]
        return text[:position] + ch + text[position:]
    if not 0 <= position < n:
        raise InputError(f"position {position} out of range for length {n}")
    if kind is TypoTransform.DELETE:
        return text[:position] + text[position + 1 :]
    if kind is TypoTransform.SUBSTITUTE:
        pool = ALPHABET.replace(text[position], "")
        ch = pool[choice % len(pool)]
        return text[:position] + ch + text[position + 1 :]
    if kind is TypoTransform.NEIGHBOR_SWAP:
        if position >= n - 1:
            raise InputError(f"swap position {position} out of range for length {n}")
        if text[position] == text[position + 1]:
            raise InputError("cannot swap equal adjacent characters")
        return (
            text[:position]
            + text[position + 1]
            + text[position]
            + text[position + 2 :]
        )
    if kind is TypoTransform.KEYBOARD_SWAP:
        neighbors = KEYBOARD_ADJACENCY.get(text[position])
        if not neighbors:
            raise InputError(
                f"character {text[position]!r} has no keyboard neighbors"
            )
        return text[:position] + neighbors[choice % len(neighbors)] + text[position + 1 :]
    raise InputError(f"unknown transform kind {kind!r}")


_WORD_RE = re.compile(r"\S+")


def _feasible_positions(word: str, kind: TypoTransform) -> list[int]:
    if kind is TypoTransform.INSERT:
        return list(range(len(word) + 1))
    if kind in (TypoTransform.DELETE, TypoTransform.SUBSTITUTE):
        return list(range(len(word)))
    if kind is TypoTransform.NEIGHBOR_SWAP:
        return [i for i in range(len(word) - 1) if word[i] != word[i + 1]]
    if kind is TypoTransform.KEYBOARD_SWAP:
        return [i for i in range(len(word)) if word[i] in KEYBOARD_ADJACENCY]
    raise InputError(f"unknown transform kind {kind!r}")


def _corrupt_once(
    text: str, spans: list[tuple[int, int]], rng: SplitMix64
) -> tuple[str, TypoTransform]:
    """Apply one uniformly chosen transform to one uniformly chosen word."""
    span = spans[rng.randrange(len(spans))]
    word = text[span[0] : span[1]]
    kind = ALL_TRANSFORMS[rng.randrange(len(ALL_TRANSFORMS))]
    positions = _feasible_positions(word, kind)
    if not positions:
        # Degenerate word (e.g. all-equal characters, or no letters for a
        # keyboard swap); fall back to a kind that always applies.
        feasible = [k for k in ALL_TRANSFORMS if _feasible_positions(word, k)]
        kind = feasible[rng.randrange(len(feasible))]
        positions = _feasible_positions(word, kind)
    pos = positions[rng.randrange(len(positions))]
    choice = rng.next_u64()
    new_word = apply_transform(word, kind, pos, choice)
    return text[: span[0]] + new_word + text[span[1] :], kind


def _eligible_spans(text: str, min_word_len: int) -> list[tuple[int, int]]:
    return [
        m.span()
        for m in _WORD_RE.finditer(text)
        if m.end() - m.start() >= min_word_len
    ]


def generate_variants_detailed(
    query: str, policy: AugmentationPolicy
) -> tuple[list[str], list[list[TypoTransform]], bool]:
    """Like generate_variants, but also reports the transform kinds applied
    to each variant (useful for auditing the kind distribution)."""
    query = query.lower()
    if policy.k == 0:
        return [], [], False
    if not _eligible_spans(query, policy.min_word_len):
        return [query] * policy.k, [[] for _ in range(policy.k)], True
    rng = SplitMix64(policy.seed)
    variants = []
    kinds: list[list[TypoTransform]] = []
    for _ in range(policy.k):
        text = query
        applied: list[TypoTransform] = []
        for _ in range(policy.transforms_per_variant):
            spans = _eligible_spans(text, policy.min_word_len)
            if not spans:
                break
            text, kind = _corrupt_once(text, spans, rng)
            applied.append(kind)
        variants.append(text)
        kinds.append(applied)
    return variants, kinds, False


def generate_variants(query: str, policy: AugmentationPolicy) -> tuple[list[str], bool]:
    """Produce `policy.k` typoed variants of `query`.

    The query is lowercased first.  Each variant applies
    `transforms_per_variant` transformations, each to a uniformly chosen
    word of length >= `min_word_len`.  Returns (variants, noop) where
    `noop` is True when no word was eligible and the variants are plain
    copies of the (lowercased) query.
    """
    variants, _, noop = generate_variants_detailed(query, policy)
    return variants, noop
