"""Shared vocabulary: label alphabets, labeled sequences, label windows."""

from __future__ import annotations

import itertools
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

EPS = -1
"""Label index standing for the empty symbol (positions s <= 0)."""


class LabelAlphabet:
    """Ordered, duplicate-free set of label strings with dense indices."""

    def __init__(self, labels: Iterable[str] = ()):
        self._labels: list[str] = []
        self._index: dict[str, int] = {}
        for lab in labels:
            if lab in self._index:
                raise ValueError(f"duplicate label {lab!r}")
            self.add(lab)

    def add(self, label: str) -> int:
        idx = self._index.get(label)
        if idx is None:
            idx = len(self._labels)
            self._labels.append(label)
            self._index[label] = idx
        return idx

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise KeyError(f"unknown label {label!r}") from None

    def __contains__(self, label) -> bool:
        return label in self._index

    def __getitem__(self, i: int) -> str:
        return self._labels[i]

    def __len__(self) -> int:
        return len(self._labels)

    def __iter__(self):
        return iter(self._labels)

    def __eq__(self, other) -> bool:
        return isinstance(other, LabelAlphabet) and self._labels == other._labels

    def __repr__(self) -> str:
        return f"LabelAlphabet({self._labels!r})"

    @property
    def labels(self) -> list[str]:
        return list(self._labels)

    @property
    def size(self) -> int:
        return len(self._labels)

    def encode(self, labels: Sequence[str]) -> tuple[int, ...]:
        return tuple(self.index(lab) for lab in labels)

    def decode(self, indices: Sequence[int]) -> list[str]:
        return [self._labels[i] for i in indices]


@dataclass(frozen=True)
class LabeledSequence:
    """A token sequence with aligned label indices."""

    tokens: tuple[str, ...]
    labels: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "labels", tuple(int(y) for y in self.labels))
        if len(self.tokens) == 0:
            raise ValueError("empty sequence")
        if len(self.tokens) != len(self.labels):
            raise ValueError(
                f"{len(self.tokens)} tokens but {len(self.labels)} labels"
            )
        if min(self.labels) < 0:
            raise ValueError("negative label index")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class ChainGraphSpec:
    """Chain factor graph of Markov order p: one factor per position."""

    markov_order: int
    lengths: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.markov_order < 1:
            raise ValueError("markov_order must be >= 1")

    def n_factors(self, i: int) -> int:
        return self.lengths[i]


def window_at(y: Sequence[int], s: int, p: int) -> tuple[int, ...]:
    """Labels (y_{s-p+1}, ..., y_s) for 1-based position ``s``.

    Positions before the start are the empty symbol and are dropped, so the
    result has length ``min(s, p)``.
    """
    if not 1 <= s <= len(y):
        raise ValueError(f"position {s} outside [1, {len(y)}]")
    if p < 0:
        raise ValueError("order must be nonnegative")
    return tuple(y[max(0, s - p):s])


def full_windows(n_labels: int, p: int):
    """All |Delta|^p label windows of length p, in lexicographic order."""
    return itertools.product(range(n_labels), repeat=p)


def all_sequences(n_labels: int, length: int):
    return itertools.product(range(n_labels), repeat=length)


def substream(seed: int, name: str):
    """Independent generator for a named use of one master seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])
