"""Markovian indicator-product feature families and the feature bank.

A family ``H_{k1,k2,k3}`` fires, at position s, the product of a word-window
indicator (k1 tokens around s), a tag-window indicator (the last k2 labels)
and a suffix/prefix indicator (k3 characters of the current token).  Every
split of k1 into (left, right) word context and every split of k3 into
(suffix, prefix) lengths is a separate sub-template of the same family.
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import EPS, LabelAlphabet, window_at

SEP = "\x1f"
BOS = "<s>"
EOS = "</s>"
EPS_MARK = "<eps>"
BANK_FORMAT = "votedcrf-bank"
BANK_VERSION = 1


@dataclass(frozen=True)
class FeatureTemplate:
    """Orders of one feature family: word window, tag window, affix length."""

    k1: int
    k2: int
    k3: int

    def __post_init__(self):
        if min(self.k1, self.k2, self.k3) < 0:
            raise ValueError("template orders must be nonnegative")
        if self.k1 + self.k2 + self.k3 < 1:
            raise ValueError("template must have k1 + k2 + k3 >= 1")

    def splits(self) -> list[tuple[int, int, int, int]]:
        """(left, right, suffix_len, prefix_len) for every sub-template."""
        return [
            (t, self.k1 - t, a, self.k3 - a)
            for t in range(self.k1 + 1)
            for a in range(self.k3 + 1)
        ]

    def complexity_key(self, vocab: int, labels: int, chars: int) -> float:
        return (
            self.k1 * math.log(max(vocab, 1))
            + self.k2 * math.log(max(labels, 1))
            + self.k3 * math.log(max(chars, 1))
        )

    def __str__(self) -> str:
        return f"{self.k1},{self.k2},{self.k3}"

    @classmethod
    def parse(cls, text: str) -> "FeatureTemplate":
        k1, k2, k3 = (int(v) for v in text.split(","))
        return cls(k1, k2, k3)


DEFAULT_TEMPLATES = (
    FeatureTemplate(0, 1, 0),
    FeatureTemplate(0, 2, 0),
    FeatureTemplate(1, 1, 0),
    FeatureTemplate(0, 1, 1),
    FeatureTemplate(0, 1, 2),
    FeatureTemplate(0, 1, 3),
    FeatureTemplate(1, 2, 0),
    FeatureTemplate(2, 1, 0),
    FeatureTemplate(2, 2, 0),
    FeatureTemplate(3, 1, 0),
    FeatureTemplate(1, 2, 2),
)


def parse_templates(spec: str) -> list[FeatureTemplate]:
    """Parse ``"1,1,0;0,2,0"`` into templates."""
    return [FeatureTemplate.parse(part) for part in spec.split(";") if part.strip()]


def family_penalty(t: FeatureTemplate, m: int, vocab: int, labels: int, chars: int) -> float:
    """Complexity penalty r_k = sqrt(2 (k1 log|V| + k2 log|D| + k3 log|S|) / m)."""
    if m < 1:
        raise ValueError("sample size must be >= 1")
    if min(vocab, labels, chars) < 1:
        raise ValueError("cardinalities must be >= 1")
    return math.sqrt(2.0 * t.complexity_key(vocab, labels, chars) / m)


def family_penalty_columns(
    t: FeatureTemplate, n_family_columns: int, r_inf: float = 1.0
) -> float:
    """Alternative penalty r_inf * |F(k)| * sqrt(log N_k).

    |F(k)| is taken as the tag-window order of the family (the number of
    label variables each of its factors touches) and N_k as the number of
    columns the family owns.
    """
    if n_family_columns <= 1:
        return 0.0
    return r_inf * max(t.k2, 1) * math.sqrt(math.log(n_family_columns))


class SparseVec:
    """Sparse vector as strictly increasing column indices with nonzero values."""

    __slots__ = ("cols", "vals")

    def __init__(self, cols=(), vals=()):
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if cols.shape != vals.shape:
            raise ValueError("cols and vals differ in shape")
        if cols.size:
            uniq, inv = np.unique(cols, return_inverse=True)
            summed = np.bincount(inv, weights=vals, minlength=uniq.size)
            keep = summed != 0
            cols, vals = uniq[keep], summed[keep]
        self.cols = cols
        self.vals = vals

    @classmethod
    def from_dense(cls, x: np.ndarray) -> "SparseVec":
        nz = np.flatnonzero(x)
        return cls(nz, np.asarray(x)[nz])

    def to_dense(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        if self.cols.size and self.cols[-1] >= n:
            raise ValueError("column out of range")
        out[self.cols] = self.vals
        return out

    def dot(self, w: np.ndarray) -> float:
        return float(np.dot(w[self.cols], self.vals)) if self.cols.size else 0.0

    def items(self):
        return list(zip(self.cols.tolist(), self.vals.tolist()))

    def __add__(self, other: "SparseVec") -> "SparseVec":
        return SparseVec(
            np.concatenate([self.cols, other.cols]),
            np.concatenate([self.vals, other.vals]),
        )

    def __mul__(self, c: float) -> "SparseVec":
        return SparseVec(self.cols, self.vals * c)

    __rmul__ = __mul__

    def __len__(self) -> int:
        return int(self.cols.size)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SparseVec)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.vals, other.vals)
        )

    def __repr__(self) -> str:
        return f"SparseVec({self.items()!r})"


@dataclass
class SequenceLattice:
    """Feature columns of one token sequence, compiled against a frozen bank.

    For every tag order k the triples ``(pos[k][e], win[k][e], col[k][e])``
    say that column ``col`` fires at 0-based position ``pos`` when the last k
    labels (with EPS encoded as ``n_labels``) have dense index ``win`` in
    base ``n_labels + 1``, most significant digit first.
    """

    length: int
    n_labels: int
    pos: dict
    win: dict
    col: dict

    @property
    def orders(self):
        return sorted(self.pos)

    def n_entries(self) -> int:
        return sum(v.size for v in self.col.values())


def _word(tokens: Sequence[str], i: int) -> str:
    if i < 0:
        return BOS
    if i >= len(tokens):
        return EOS
    return tokens[i]


def _tag_field(labels: Sequence[int]) -> str:
    return SEP.join(EPS_MARK if a == EPS else str(a) for a in labels)


def _parse_tag_field(text: str, k2: int) -> tuple[int, ...]:
    if k2 == 0:
        return ()
    return tuple(EPS if f == EPS_MARK else int(f) for f in text.split(SEP))


class FeatureBank:
    """Indexed union of feature families.

    Columns are created in grow mode by :meth:`add_sequence` (or
    :func:`extract_position` with ``mode="grow"``).  After :meth:`freeze`
    the index is read-only and sequences can be compiled into lattices.

    Parameters
    ----------
    templates : sequence of FeatureTemplate
        Family ``k`` is ``templates[k]``; callers wanting the families in
        increasing-complexity order should use :meth:`from_corpus`.
    alphabet : LabelAlphabet
    """

    def __init__(self, templates: Sequence[FeatureTemplate], alphabet: LabelAlphabet):
        self.templates = list(templates)
        if len(set(self.templates)) != len(self.templates):
            raise ValueError("duplicate template")
        self.alphabet = alphabet
        self.n_labels = len(alphabet)
        # sub-template id -> (family, left, right, suffix_len, prefix_len, k2)
        self.subs: list[tuple[int, int, int, int, int, int]] = []
        for fam, t in enumerate(self.templates):
            for left, right, suf, pre in t.splits():
                self.subs.append((fam, left, right, suf, pre, t.k2))
        self._index: dict[tuple[int, str], dict[tuple[int, ...], int]] = {}
        self.family_of: list[int] = []
        self.frozen = False
        self._lookup = None
        self.stats: dict = {}

    @classmethod
    def from_corpus(
        cls,
        templates: Sequence[FeatureTemplate],
        sequences: Sequence,
        alphabet: LabelAlphabet,
        stats: dict | None = None,
        freeze: bool = True,
    ) -> "FeatureBank":
        """Order families by complexity and grow the bank on gold windows."""
        stats = dict(stats) if stats else corpus_stats(sequences, alphabet)
        ordered = sorted(
            templates,
            key=lambda t: t.complexity_key(stats["vocab"], stats["labels"], stats["chars"]),
        )
        bank = cls(ordered, alphabet)
        bank.stats = stats
        for seq in sequences:
            bank.add_sequence(seq.tokens, seq.labels)
        if freeze:
            bank.freeze()
        return bank

    # ------------------------------------------------------------------
    @property
    def dimension(self) -> int:
        return len(self.family_of)

    @property
    def n_families(self) -> int:
        return len(self.templates)

    @property
    def markov_order(self) -> int:
        return max([1] + [t.k2 for t in self.templates])

    def family_array(self) -> np.ndarray:
        return np.asarray(self.family_of, dtype=np.int64)

    def family_sizes(self) -> np.ndarray:
        return np.bincount(self.family_array(), minlength=self.n_families)

    def xkeys(self, tokens: Sequence[str], s: int) -> list[tuple[int, str | None]]:
        """Input-side key of every sub-template at 1-based position s.

        The key is None when the affix part cannot fire (token too short).
        """
        i = s - 1
        tok = tokens[i]
        out = []
        for sid, (_, left, right, suf, pre, _) in enumerate(self.subs):
            if suf > len(tok) or pre > len(tok):
                out.append((sid, None))
                continue
            fields = [_word(tokens, j) for j in range(i - left + 1, i + right + 1)]
            fields.append(tok[len(tok) - suf:] if suf else "")
            fields.append(tok[:pre])
            out.append((sid, SEP.join(fields)))
        return out

    def _tag_window(self, z: Sequence[int], k2: int) -> tuple[int, ...]:
        if k2 == 0:
            return ()
        z = tuple(z[-k2:])
        return (EPS,) * (k2 - len(z)) + z

    def lookup(self, sid: int, xkey: str, tagwin: tuple[int, ...], grow: bool) -> int | None:
        bucket = self._index.get((sid, xkey))
        if bucket is not None:
            col = bucket.get(tagwin)
            if col is not None:
                return col
        if not grow:
            return None
        if self.frozen:
            raise RuntimeError("feature bank is frozen")
        if bucket is None:
            bucket = self._index[(sid, xkey)] = {}
        col = len(self.family_of)
        bucket[tagwin] = col
        self.family_of.append(self.subs[sid][0])
        return col

    def add_sequence(self, tokens: Sequence[str], labels: Sequence[int]) -> None:
        p = self.markov_order
        for s in range(1, len(tokens) + 1):
            extract_position(tokens, window_at(labels, s, p), s, self, mode="grow")

    def freeze(self) -> "FeatureBank":
        r1 = self.n_labels + 1
        lookup = {}
        for (sid, xkey), bucket in self._index.items():
            k2 = self.subs[sid][5]
            wins = np.empty(len(bucket), dtype=np.int64)
            cols = np.empty(len(bucket), dtype=np.int64)
            for e, (tagwin, col) in enumerate(bucket.items()):
                idx = 0
                for a in tagwin:
                    idx = idx * r1 + (self.n_labels if a == EPS else a)
                wins[e] = idx
                cols[e] = col
            lookup[(sid, xkey)] = (k2, wins, cols)
        self._lookup = lookup
        self.frozen = True
        return self

    def compile(self, tokens: Sequence[str]) -> SequenceLattice:
        """Gather every column that can fire anywhere in ``tokens``."""
        if not self.frozen:
            raise RuntimeError("compile requires a frozen bank")
        parts: dict[int, tuple[list, list, list]] = {}
        for s in range(1, len(tokens) + 1):
            for key in self.xkeys(tokens, s):
                if key[1] is None:
                    continue
                hit = self._lookup.get(key)
                if hit is None:
                    continue
                k2, wins, cols = hit
                pos_l, win_l, col_l = parts.setdefault(k2, ([], [], []))
                pos_l.append(np.full(wins.size, s - 1, dtype=np.int64))
                win_l.append(wins)
                col_l.append(cols)
        pos, win, col = {}, {}, {}
        for k2, (pos_l, win_l, col_l) in parts.items():
            pos[k2] = np.concatenate(pos_l)
            win[k2] = np.concatenate(win_l)
            col[k2] = np.concatenate(col_l)
        return SequenceLattice(len(tokens), self.n_labels, pos, win, col)

    # ------------------------------------------------------------------
    def patterns(self):
        """Yield (pattern_string, column, family) in column order."""
        rows = []
        for (sid, xkey), bucket in self._index.items():
            for tagwin, col in bucket.items():
                rows.append((col, f"{sid}{SEP}{xkey}{SEP}{_tag_field(tagwin)}"))
        rows.sort()
        for col, pat in rows:
            yield pat, col, self.family_of[col]

    def dumps(self) -> str:
        buf = io.StringIO()
        buf.write(f"{BANK_FORMAT}\t{BANK_VERSION}\n")
        buf.write(f"N\t{self.dimension}\n")
        buf.write("labels\t" + "\t".join(self.alphabet) + "\n")
        buf.write("templates\t" + "\t".join(str(t) for t in self.templates) + "\n")
        for key in sorted(self.stats):
            buf.write(f"stat\t{key}\t{self.stats[key]}\n")
        buf.write("end-header\n")
        for pat, col, fam in self.patterns():
            buf.write(f"{col}\t{fam}\t{pat.encode('unicode_escape').decode('ascii')}\n")
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    @classmethod
    def loads(cls, text: str) -> "FeatureBank":
        lines = text.split("\n")
        head = lines[0].split("\t")
        if len(head) != 2 or head[0] != BANK_FORMAT:
            raise ValueError("not a feature bank file")
        if int(head[1]) != BANK_VERSION:
            raise ValueError(f"unsupported bank version {head[1]}")
        n = int(lines[1].split("\t")[1])
        labels = lines[2].split("\t")[1:]
        templates = [FeatureTemplate.parse(t) for t in lines[3].split("\t")[1:]]
        bank = cls(templates, LabelAlphabet(labels))
        i = 4
        while lines[i] != "end-header":
            _, key, val = lines[i].split("\t")
            bank.stats[key] = int(val)
            i += 1
        family_of = [0] * n
        for line in lines[i + 1:]:
            if not line:
                continue
            col, fam, pat = line.split("\t", 2)
            pat = pat.encode("ascii").decode("unicode_escape")
            sid_s, rest = pat.split(SEP, 1)
            sid = int(sid_s)
            k2 = bank.subs[sid][5]
            # x-key has (left + right) word fields plus suffix and prefix
            _, left, right, _, _, _ = bank.subs[sid]
            nx = left + right + 2
            fields = rest.split(SEP)
            xkey = SEP.join(fields[:nx])
            tagwin = _parse_tag_field(SEP.join(fields[nx:]), k2)
            bank._index.setdefault((sid, xkey), {})[tagwin] = int(col)
            family_of[int(col)] = int(fam)
        bank.family_of = family_of
        return bank.freeze()


def corpus_stats(sequences: Iterable, alphabet: LabelAlphabet) -> dict:
    """|V|, |Sigma|, |Delta|, token and sentence counts of a sample."""
    vocab, chars = set(), set()
    n_tok = n_sent = 0
    for seq in sequences:
        n_sent += 1
        n_tok += len(seq.tokens)
        vocab.update(seq.tokens)
        for tok in seq.tokens:
            chars.update(tok)
    return {
        "sentences": n_sent,
        "tokens": n_tok,
        "vocab": len(vocab),
        "chars": len(chars),
        "labels": len(alphabet),
    }


def extract_position(
    x: Sequence[str], z: Sequence[int], s: int, bank: FeatureBank, mode: str = "frozen"
) -> SparseVec:
    """Feature vector psi~(x, z, s) of window ``z`` ending at position ``s``.

    Every sub-template fires at most one column with value 1.  In ``grow``
    mode unseen patterns receive fresh columns; in ``frozen`` mode they are
    dropped.
    """
    if mode not in ("frozen", "grow"):
        raise ValueError(f"unknown mode {mode!r}")
    if not 1 <= s <= len(x):
        raise ValueError(f"position {s} outside [1, {len(x)}]")
    if len(z) > bank.markov_order:
        raise ValueError(
            f"window of length {len(z)} exceeds the bank's tag order {bank.markov_order}"
        )
    grow = mode == "grow"
    cols = []
    for sid, xkey in bank.xkeys(x, s):
        if xkey is None:
            continue
        col = bank.lookup(sid, xkey, bank._tag_window(z, bank.subs[sid][5]), grow)
        if col is not None:
            cols.append(col)
    return SparseVec(cols, np.ones(len(cols)))


def global_features(x: Sequence[str], y: Sequence[int], bank: FeatureBank) -> SparseVec:
    """Psi(x, y) as the sum of position vectors over the sequence."""
    if len(x) != len(y):
        raise ValueError(f"{len(x)} tokens but {len(y)} labels")
    p = bank.markov_order
    out = SparseVec()
    for s in range(1, len(x) + 1):
        out = out + extract_position(x, window_at(y, s, p), s, bank)
    return out


def family_penalty_vector(bank: FeatureBank, m: int, stats: dict | None = None,
                          formula: str = "counting") -> np.ndarray:
    """One penalty r_k per family, in family order."""
    stats = stats or bank.stats
    if formula == "counting":
        return np.array([
            family_penalty(t, m, stats["vocab"], stats["labels"], stats["chars"])
            for t in bank.templates
        ])
    if formula == "columns":
        sizes = bank.family_sizes()
        return np.array([
            family_penalty_columns(t, int(n)) for t, n in zip(bank.templates, sizes)
        ])
    raise ValueError(f"unknown penalty formula {formula!r}")
