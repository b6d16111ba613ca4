"""Synthetic tagged corpora drawn from a second-order generative chain."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LabelAlphabet, LabeledSequence, substream
from .data_io import Corpus

_STEMS = "bcdfghjklmnprstvz"
_VOWELS = "aeiou"


@dataclass
class ChainSource:
    """Second-order label chain with label-specific word emissions."""

    n_labels: int
    trans: np.ndarray          # (r+1, r+1, r): P(y_t | y_{t-2}, y_{t-1}); index r is the start
    emit: np.ndarray           # (r, V): P(word | label)
    vocab: list

    def sample(self, n_sentences: int, rng, min_len: int = 4, max_len: int = 14):
        r = self.n_labels
        out = []
        for _ in range(n_sentences):
            l = int(rng.integers(min_len, max_len + 1))
            a, b = r, r
            toks, labs = [], []
            for _ in range(l):
                y = int(rng.choice(r, p=self.trans[a, b]))
                toks.append(self.vocab[int(rng.choice(len(self.vocab), p=self.emit[y]))])
                labs.append(y)
                a, b = b, y
            out.append(LabeledSequence(tuple(toks), tuple(labs)))
        return out


def _word(rng, suffix: str) -> str:
    n = int(rng.integers(1, 3))
    stem = "".join(rng.choice(list(_STEMS)) + rng.choice(list(_VOWELS)) for _ in range(n))
    return stem + suffix


def make_source(n_labels: int = 8, words_per_label: int = 40, shared_words: int = 30,
                seed: int = 0, sharpness: float = 0.3) -> ChainSource:
    """Random source; ``sharpness`` is the Dirichlet concentration of transitions.

    Each label owns words ending in its own suffix; a pool of shared words is
    emitted by every label, which makes context (the label history) matter.
    """
    rng = substream(seed, "synthetic-source")
    r = n_labels
    suffixes = [_STEMS[i % len(_STEMS)] + _VOWELS[i % len(_VOWELS)] + "x" * (i // 10)
                for i in range(r)]
    vocab, owner = [], []
    seen = set()
    for y in range(r):
        while sum(1 for o in owner if o == y) < words_per_label:
            w = _word(rng, suffixes[y])
            if w not in seen:
                seen.add(w)
                vocab.append(w)
                owner.append(y)
    while len(vocab) < r * words_per_label + shared_words:
        w = _word(rng, "")
        if w not in seen:
            seen.add(w)
            vocab.append(w)
            owner.append(-1)
    owner = np.array(owner)
    trans = rng.dirichlet(np.full(r, sharpness), size=(r + 1, r + 1))
    emit = np.zeros((r, len(vocab)))
    for y in range(r):
        own = np.flatnonzero(owner == y)
        zipf = 1.0 / np.arange(1, own.size + 1)
        emit[y, own] = 0.6 * zipf / zipf.sum()
        shared = np.flatnonzero(owner == -1)
        emit[y, shared] = 0.4 * rng.dirichlet(np.full(shared.size, 0.5))
    return ChainSource(r, trans, emit, vocab)


def synthetic_corpus(n_sentences: int = 2000, n_labels: int = 8, seed: int = 0,
                     **source_kw) -> Corpus:
    src = make_source(n_labels=n_labels, seed=seed, **source_kw)
    seqs = src.sample(n_sentences, substream(seed, "synthetic-sample"))
    return Corpus(seqs, LabelAlphabet([f"L{i}" for i in range(n_labels)]))
