"""VStructBoost: exponential surrogate sum_y L(y, y_i) e^{-w.(Psi(y_i) - Psi(y))}.

Loss-weighted path sums come from an expectation-semiring pass over the
same chain automaton, so the cost stays linear in the number of transitions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .automaton import (
    loss_weighted_marginals,
    moment_flows,
    viterbi_wfa,
    wfa_from_lattice,
)
from .features import FeatureBank, SparseVec
from .losses import MarkovianLoss
from .optim import WeightVector
from .vcrf import (
    PreparedExample,
    VcrfConfig,
    _as_array,
    _train,
    column_penalties,
    expected_features,
    prepare,
)


class UnsupportedLossError(TypeError):
    """The loss has no Markovian decomposition the automaton can carry."""


@dataclass
class StructBoostConfig(VcrfConfig):
    """Exponential surrogate: S_i grows like |Delta|^l near w = 0, so steps are clipped."""

    eta0: float = 0.5
    clip_norm: float | None = 1.0


class _LossMarginals:
    """Adapter so expected_features can consume loss-weighted marginals."""

    def __init__(self, q, n_labels, p):
        self.q, self.n_labels, self.markov_order = q, n_labels, p

    def suffix_marginals(self, k):
        r1 = self.n_labels + 1
        l = self.q.shape[0]
        return self.q.reshape(l, r1 ** (self.markov_order - k), r1 ** k).sum(axis=1)


def _check_loss(loss):
    if not isinstance(loss, MarkovianLoss):
        raise UnsupportedLossError(f"{type(loss).__name__} is not a Markovian loss")


def structboost_smooth(w: np.ndarray, ex: PreparedExample, p: int, with_grad: bool = True):
    """Unscaled e^{-w.Psi(y_i)} S_i with S_i = sum_y L(y, y_i) e^{w.Psi(y)}, and its gradient."""
    wfa = wfa_from_lattice(ex.lattice, w, p)
    mt = moment_flows(wfa, ex.loss_table)
    gold = float(w[ex.gold_cols].sum())
    with np.errstate(over="ignore"):
        value = float(np.exp(mt.log_s - gold)) if mt.expected_loss > 0.0 else 0.0
        if not with_grad:
            return value, None, None
        scale = float(np.exp(mt.log_z - gold))
    qL = loss_weighted_marginals(wfa, mt, ex.loss_table)
    cols, vals = expected_features(ex.lattice, _LossMarginals(qL, wfa.n_labels, p))
    cols = np.concatenate([cols, ex.gold_cols])
    vals = np.concatenate([vals * scale, np.full(ex.gold_cols.size, -value)])
    uniq, inv = np.unique(cols, return_inverse=True)
    return value, uniq, np.bincount(inv, weights=vals, minlength=uniq.size)


def loss_sum(w, example, bank: FeatureBank, cfg: VcrfConfig) -> float:
    """S_i = sum_y L(y, y_i) e^{w.Psi(x_i, y)}."""
    _check_loss(cfg.loss)
    w = _as_array(w)
    p = cfg.order(bank)
    (ex,) = prepare([example], bank, p, cfg.loss)
    mt = moment_flows(wfa_from_lattice(ex.lattice, w, p), ex.loss_table)
    return math.exp(mt.log_s) if mt.expected_loss > 0 else 0.0


def structboost_data_term(w, data, bank: FeatureBank, cfg: VcrfConfig) -> float:
    _check_loss(cfg.loss)
    w = _as_array(w)
    p = cfg.order(bank)
    prepared = prepare(data, bank, p, cfg.loss)
    return float(np.mean([structboost_smooth(w, ex, p, False)[0] for ex in prepared]))


def structboost_objective(w, data, bank: FeatureBank, cfg: VcrfConfig) -> float:
    w = _as_array(w)
    pen = column_penalties(bank, cfg, len(data))
    return structboost_data_term(w, data, bank, cfg) + float(np.dot(pen, np.abs(w)))


def structboost_max_objective(w, data, bank: FeatureBank, cfg: VcrfConfig) -> float:
    """Max-form data term (1/m) sum_i max_{y != y_i} L(y, y_i) e^{-w.dPsi}, by enumeration.

    Non-differentiable and exponential in the sequence length; an evaluation
    metric for short sequences only.
    """
    from .core import all_sequences
    from .features import global_features
    from .losses import loss as loss_value

    w = _as_array(w)
    vals = []
    for seq in data:
        gold = global_features(seq.tokens, seq.labels, bank).dot(w)
        best = 0.0
        for y in all_sequences(bank.n_labels, len(seq)):
            if tuple(y) == seq.labels:
                continue
            s = global_features(seq.tokens, y, bank).dot(w)
            best = max(best, loss_value(cfg.loss, y, seq.labels) * math.exp(s - gold))
        vals.append(best)
    return float(np.mean(vals))


def structboost_gradient(w, example, bank: FeatureBank, cfg: VcrfConfig, m: int = 1) -> SparseVec:
    _check_loss(cfg.loss)
    w = _as_array(w)
    p = cfg.order(bank)
    (ex,) = prepare([example], bank, p, cfg.loss)
    _, cols, vals = structboost_smooth(w, ex, p)
    return SparseVec(cols, vals / m)


def train_structboost(data, bank: FeatureBank, cfg: VcrfConfig, w0=None):
    _check_loss(cfg.loss)
    return _train(data, bank, cfg, structboost_smooth, w0)


def predict(w, x, bank: FeatureBank, cfg: VcrfConfig) -> list[int]:
    return viterbi_wfa(wfa_from_lattice(bank.compile(x), _as_array(w), cfg.order(bank)))


__all__ = [
    "StructBoostConfig",
    "UnsupportedLossError",
    "WeightVector",
    "loss_sum",
    "predict",
    "structboost_data_term",
    "structboost_gradient",
    "structboost_max_objective",
    "structboost_objective",
    "structboost_smooth",
    "train_structboost",
]
