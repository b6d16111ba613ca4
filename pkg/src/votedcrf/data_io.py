"""Corpus readers, cross-validation folds, label noise and model persistence."""

from __future__ import annotations

import hashlib
import json
import os
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .core import LabelAlphabet, LabeledSequence, substream
from .features import FeatureBank, corpus_stats

MODEL_FORMAT = "votedcrf-model"
MODEL_VERSION = 1
FORMATS = ("conllu", "two-column")


class CorpusFormatError(ValueError):
    """Malformed corpus input; the message carries the file and line number."""


class ModelFileError(ValueError):
    """Unreadable, mismatched or corrupted model file."""


@dataclass
class Corpus:
    sentences: list
    alphabet: LabelAlphabet
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.stats:
            self.stats = corpus_stats(self.sentences, self.alphabet)

    def __len__(self) -> int:
        return len(self.sentences)

    def subset(self, idx) -> "Corpus":
        return Corpus([self.sentences[i] for i in idx], self.alphabet)


def _finish(rows, alphabet, sentences):
    if rows:
        toks = tuple(t for t, _ in rows)
        labs = tuple(alphabet.add(lab) for _, lab in rows)
        sentences.append(LabeledSequence(toks, labs))


def parse_corpus(lines, fmt: str = "two-column", name: str = "<input>",
                 alphabet: LabelAlphabet | None = None) -> Corpus:
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    alphabet = alphabet if alphabet is not None else LabelAlphabet()
    sentences: list[LabeledSequence] = []
    rows: list[tuple[str, str]] = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip():
            _finish(rows, alphabet, sentences)
            rows = []
            continue
        if fmt == "conllu":
            if line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 10:
                raise CorpusFormatError(
                    f"{name}:{lineno}: expected 10 tab-separated columns, got {len(cols)}")
            tid = cols[0]
            if "-" in tid or "." in tid:
                continue  # multiword ranges and empty nodes
            if not tid.isdigit():
                raise CorpusFormatError(f"{name}:{lineno}: bad token id {tid!r}")
            form, upos = cols[1], cols[3]
        else:
            cols = line.split("\t")
            if len(cols) != 2:
                raise CorpusFormatError(
                    f"{name}:{lineno}: expected 'token<TAB>label', got {len(cols)} fields")
            form, upos = cols
        if not form or not upos or upos == "_":
            raise CorpusFormatError(f"{name}:{lineno}: empty token or label")
        rows.append((form, upos))
    _finish(rows, alphabet, sentences)
    if not sentences:
        raise CorpusFormatError(f"{name}: no sentences")
    return Corpus(sentences, alphabet)


def load_corpus(path: str, fmt: str = "two-column",
                alphabet: LabelAlphabet | None = None) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus(fh, fmt, name=str(path), alphabet=alphabet)


def write_two_column(corpus: Corpus, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in corpus.sentences:
            for tok, lab in zip(seq.tokens, seq.labels):
                fh.write(f"{tok}\t{corpus.alphabet[lab]}\n")
            fh.write("\n")


# ----------------------------------------------------------------------
@dataclass(frozen=True)
class FoldPlan:
    """Five folds; run i validates on fold i and tests on fold i+1 (mod 5)."""

    folds: tuple
    k: int = 5

    def run(self, i: int) -> tuple[list[int], list[int], list[int]]:
        """(train, validation, test) sentence indices of run i."""
        if not 0 <= i < self.k:
            raise ValueError(f"run {i} outside [0, {self.k})")
        val, test = i, (i + 1) % self.k
        train = sorted(j for f in range(self.k) if f not in (val, test) for j in self.folds[f])
        return train, list(self.folds[val]), list(self.folds[test])

    def roles(self, i: int) -> dict:
        return {"validation": i, "test": (i + 1) % self.k,
                "train": [f for f in range(self.k) if f not in (i, (i + 1) % self.k)]}


def make_folds(corpus, seed: int = 0, k: int = 5) -> FoldPlan:
    n = len(corpus)
    if n < k:
        raise ValueError(f"{n} sentences cannot fill {k} folds")
    perm = substream(seed, "folds").permutation(n)
    folds = tuple(tuple(sorted(int(j) for j in perm[f::k])) for f in range(k))
    return FoldPlan(folds, k)


# ----------------------------------------------------------------------
@dataclass
class NoiseReport:
    eligible: int
    flipped: int
    ineligible: int
    ineligible_flipped: int = 0


def inject_noise(corpus: Corpus, rate: float = 0.2, min_count: int = 5, seed: int = 0,
                 report: bool = False):
    """Flip the label of each frequent token with probability ``rate``.

    A token is frequent when its surface form occurs at least ``min_count``
    times in the whole corpus; a flip draws uniformly among the other labels.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    r = len(corpus.alphabet)
    if r < 2:
        raise ValueError("cannot flip labels with a single-label alphabet")
    counts = Counter(tok for seq in corpus.sentences for tok in seq.tokens)
    rng = substream(seed, "noise")
    out = []
    eligible = flipped = 0
    for seq in corpus.sentences:
        labs = list(seq.labels)
        elig = np.array([counts[t] >= min_count for t in seq.tokens])
        u = rng.random(len(labs))
        shift = rng.integers(1, r, size=len(labs))
        for t in np.flatnonzero(elig & (u < rate)):
            labs[t] = (labs[t] + int(shift[t])) % r
            flipped += 1
        eligible += int(elig.sum())
        out.append(LabeledSequence(seq.tokens, tuple(labs)))
    noisy = Corpus(out, corpus.alphabet)
    if report:
        n_tok = sum(len(s) for s in corpus.sentences)
        return noisy, NoiseReport(eligible, flipped, n_tok - eligible)
    return noisy


# ----------------------------------------------------------------------
def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def save_model(path: str, weights, bank: FeatureBank, config: dict, kind: str = "vcrf") -> None:
    """Write ``path`` (JSON) and the bank it refers to at ``path + '.bank'``."""
    values = np.asarray(getattr(weights, "values", weights), dtype=float)
    if values.size != bank.dimension:
        raise ValueError("weight vector does not match the bank dimension")
    bank_text = bank.dumps()
    nz = np.flatnonzero(values)
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": kind,
        "config": config,
        "labels": bank.alphabet.labels,
        "dimension": int(bank.dimension),
        "bank_file": os.path.basename(path) + ".bank",
        "bank_sha256": _sha256(bank_text),
        "weights": {"cols": [int(j) for j in nz], "vals": [float(values[j]) for j in nz]},
    }
    with open(path + ".bank", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(bank_text)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(doc, sort_keys=True, indent=1) + "\n")


@dataclass
class LoadedModel:
    kind: str
    weights: np.ndarray
    bank: FeatureBank
    config: dict


def load_model(path: str) -> LoadedModel:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: not a model file ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFileError(f"{path}: not a {MODEL_FORMAT} file")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFileError(
            f"{path}: model version {doc.get('version')!r}, expected {MODEL_VERSION}")
    bank_path = os.path.join(os.path.dirname(path), doc["bank_file"])
    with open(bank_path, encoding="utf-8", newline="") as fh:
        bank_text = fh.read()
    if _sha256(bank_text) != doc["bank_sha256"]:
        raise ModelFileError(f"{bank_path}: feature bank hash does not match the model")
    try:
        bank = FeatureBank.loads(bank_text)
    except (ValueError, IndexError) as exc:
        raise ModelFileError(f"{bank_path}: {exc}") from None
    if bank.dimension != doc["dimension"] or bank.alphabet.labels != doc["labels"]:
        raise ModelFileError(f"{path}: bank and model disagree on dimension or labels")
    w = np.zeros(bank.dimension)
    w[np.asarray(doc["weights"]["cols"], dtype=np.int64)] = doc["weights"]["vals"]
    return LoadedModel(doc["kind"], w, bank, doc["config"])


def write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=2) + "\n")
