"""Bounded definite losses, surrogate losses and clipped empirical margin losses."""

from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np

from .core import EPS, window_at


class MarkovianLoss:
    """Loss decomposing as ``sum_t L_t(y window at t, y' window at t)``.

    Parameters
    ----------
    order : int
        Window length the per-position term inspects.
    position_loss : callable
        ``position_loss(z, z_ref, t, l)`` for effective windows ``z`` and
        ``z_ref`` (tuples of label indices, shorter near the start) ending at
        1-based position ``t`` of a length-``l`` sequence.
    bound : callable or float
        ``M`` as a function of the sequence length, or a constant.
    """

    kind = "custom"

    def __init__(self, order: int, position_loss: Callable, bound=1.0):
        if order < 1:
            raise ValueError("loss order must be >= 1")
        self.markov_order = order
        self._position_loss = position_loss
        self._bound = bound

    def position_loss(self, z, z_ref, t: int, l: int) -> float:
        return float(self._position_loss(tuple(z), tuple(z_ref), t, l))

    def bound(self, length: int | None = None) -> float:
        return float(self._bound(length) if callable(self._bound) else self._bound)

    def __call__(self, y: Sequence[int], y2: Sequence[int]) -> float:
        return loss(self, y, y2)

    def decomposed(self, y: Sequence[int], y2: Sequence[int]) -> float:
        l = len(y)
        q = self.markov_order
        return sum(
            self.position_loss(window_at(y, t, q), window_at(y2, t, q), t, l)
            for t in range(1, l + 1)
        )

    def table(self, y_ref: Sequence[int], n_labels: int, p: int) -> np.ndarray:
        """Per-position loss over dense windows: array (l, (r+1)^p).

        Window digits use ``n_labels`` for the empty symbol; entries for
        invalid windows are left at 0 (the automaton masks them).
        """
        l = len(y_ref)
        q = self.markov_order
        if q > p:
            raise ValueError(f"loss order {q} exceeds automaton order {p}")
        r1 = n_labels + 1
        out = np.zeros((l, r1 ** p))
        for t in range(1, l + 1):
            ref = window_at(y_ref, t, q)
            eff = min(t, p)
            for z in itertools.product(range(n_labels), repeat=eff):
                idx = 0
                for a in (n_labels,) * (p - eff) + z:
                    idx = idx * r1 + a
                out[t - 1, idx] = self.position_loss(z[-q:], ref, t, l)
        return out


class HammingLoss(MarkovianLoss):
    """(1/l) * #mismatches, or the raw count when ``normalize=False``."""

    kind = "hamming"

    def __init__(self, normalize: bool = True):
        self.normalize = normalize
        self.markov_order = 1

    def position_loss(self, z, z_ref, t, l):
        miss = 1.0 if z[-1] != z_ref[-1] else 0.0
        return miss / l if self.normalize else miss

    def bound(self, length=None):
        if self.normalize:
            return 1.0
        if length is None:
            raise ValueError("unnormalized Hamming bound needs the sequence length")
        return float(length)

    def table(self, y_ref, n_labels, p):
        l = len(y_ref)
        r1 = n_labels + 1
        last = np.arange(r1 ** p) % r1
        scale = 1.0 / l if self.normalize else 1.0
        return (last[None, :] != np.asarray(y_ref)[:, None]) * scale

    def __repr__(self):
        return f"HammingLoss(normalize={self.normalize})"


class ZeroLoss(MarkovianLoss):
    """L == 0. Not definite; used for plain CRF likelihood and degenerate checks."""

    kind = "zero"

    def __init__(self):
        self.markov_order = 1

    def position_loss(self, z, z_ref, t, l):
        return 0.0

    def bound(self, length=None):
        return 0.0

    def table(self, y_ref, n_labels, p):
        return np.zeros((len(y_ref), (n_labels + 1) ** p))


def make_loss(name: str) -> MarkovianLoss:
    if name == "hamming":
        return HammingLoss()
    if name == "hamming-count":
        return HammingLoss(normalize=False)
    if name == "zero":
        return ZeroLoss()
    raise ValueError(f"unknown loss {name!r}")


def loss(kind: MarkovianLoss, y: Sequence[int], y2: Sequence[int]) -> float:
    if len(y) != len(y2):
        raise ValueError(f"length mismatch: {len(y)} vs {len(y2)}")
    if len(y) == 0:
        raise ValueError("empty sequences")
    if isinstance(kind, HammingLoss):
        miss = sum(a != b for a, b in zip(y, y2))
        return miss / len(y) if kind.normalize else float(miss)
    return kind.decomposed(y, y2)


# ----------------------------------------------------------------------
SURROGATES = ("StructSVM", "M3N", "CRF", "StructBoost", "ExpAdd")


def surrogate(kind: str, u: float, v: float) -> float:
    """Phi_u(v), an upper bound on u * 1[v <= 0] for u >= 0."""
    if u < 0:
        raise ValueError("loss value u must be nonnegative")
    if kind == "StructSVM":
        return max(0.0, u * (1.0 - v))
    if kind == "M3N":
        return max(0.0, u - v)
    if kind == "CRF":
        d = u - v
        # log(1 + e^d) without overflow
        return d + math.log1p(math.exp(-d)) if d > 0 else math.log1p(math.exp(d))
    if kind == "StructBoost":
        return u * math.exp(-v)
    if kind == "ExpAdd":
        return math.exp(u - v)
    raise ValueError(f"unknown surrogate {kind!r}")


def clip(r, M: float):
    return np.minimum(M, np.maximum(0.0, r))


def empirical_margin_loss(variant: str, data, rho: float, tau: float = 0.0, M: float = 1.0) -> float:
    """Clipped additive or multiplicative empirical margin loss.

    ``data`` holds one ``(gold_score, competitor_scores, competitor_losses)``
    triple per example, the competitors ranging over outputs y' != y.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    vals = []
    for gold, scores, losses in data:
        scores = np.asarray(scores, dtype=float)
        losses = np.asarray(losses, dtype=float)
        gap = (gold - scores) / rho
        if variant == "add":
            inner = np.max(losses + tau - gap)
        elif variant == "mult":
            inner = np.max(losses * (1.0 + tau - gap))
        else:
            raise ValueError(f"unknown variant {variant!r}")
        vals.append(float(clip(inner, M)))
    if not vals:
        raise ValueError("empty sample")
    return float(np.mean(vals))
