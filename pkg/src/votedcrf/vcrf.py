"""VCRF: loss-augmented CRF likelihood with per-family L1 penalties (lambda r_k + beta)."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .automaton import (
    encode_window,
    forward_backward,
    transition_marginals,
    viterbi_wfa,
    wfa_from_lattice,
)
from .core import LabeledSequence, substream
from .features import FeatureBank, SparseVec, family_penalty_vector
from .losses import HammingLoss, MarkovianLoss, make_loss
from .optim import WeightVector, proximal_gradient, proximal_sgd

SOLVERS = ("sgd", "prox-gd")


@dataclass
class VcrfConfig:
    lam: float = 0.0
    beta: float = 0.0
    epochs: int = 50
    eta0: float = 0.5
    decay: float | None = None
    markov_order: int | None = None
    loss: MarkovianLoss = field(default_factory=HammingLoss)
    seed: int = 0
    penalty_formula: str = "counting"
    tol: float = 1e-6
    batch_size: int = 1
    n_jobs: int = 1
    full_batch: bool = False
    clip_norm: float | None = None
    solver: str = "sgd"

    def __post_init__(self):
        if isinstance(self.loss, str):
            self.loss = make_loss(self.loss)
        if self.lam < 0 or self.beta < 0:
            raise ValueError("lambda and beta must be nonnegative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}, got {self.solver!r}")

    def order(self, bank: FeatureBank) -> int:
        p = self.markov_order or bank.markov_order
        if p < bank.markov_order:
            raise ValueError(f"markov_order {p} below the bank's tag order {bank.markov_order}")
        return max(p, self.loss.markov_order)

    def echo(self) -> dict:
        d = asdict(self)
        d["loss"] = self.loss.kind if not isinstance(self.loss, HammingLoss) or self.loss.normalize \
            else "hamming-count"
        return d


@dataclass
class PreparedExample:
    lattice: object
    labels: tuple
    gold_cols: np.ndarray
    loss_table: np.ndarray
    touched: np.ndarray


def prepare(data: Sequence[LabeledSequence], bank: FeatureBank, p: int,
            loss: MarkovianLoss) -> list[PreparedExample]:
    out = []
    r = bank.n_labels
    for seq in data:
        lat = bank.compile(seq.tokens)
        gold = []
        for k in lat.orders:
            gwin = np.array([
                encode_window(seq.labels[max(0, t - k):t], r, k) for t in range(1, len(seq) + 1)
            ], dtype=np.int64)
            hit = lat.win[k] == gwin[lat.pos[k]]
            gold.append(lat.col[k][hit])
        gold_cols = np.concatenate(gold) if gold else np.zeros(0, dtype=np.int64)
        touched = np.unique(np.concatenate([lat.col[k] for k in lat.orders])) \
            if lat.orders else np.zeros(0, dtype=np.int64)
        out.append(PreparedExample(lat, seq.labels, gold_cols,
                                   loss.table(seq.labels, r, p), touched))
    return out


def expected_features(lattice, marginals) -> tuple[np.ndarray, np.ndarray]:
    """(cols, vals) of sum_s sum_z Q(z, s) psi~(x, z, s), duplicates not merged."""
    cols, vals = [], []
    for k in lattice.orders:
        qk = marginals.suffix_marginals(k)
        cols.append(lattice.col[k])
        vals.append(qk[lattice.pos[k], lattice.win[k]])
    if not cols:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    return np.concatenate(cols), np.concatenate(vals)


def vcrf_smooth(w: np.ndarray, ex: PreparedExample, p: int, with_grad: bool = True):
    """Unscaled data term log sum_y e^{L(y, y_i) + w.Psi(y)} - w.Psi(y_i) and its gradient."""
    wfa = wfa_from_lattice(ex.lattice, w, p, ex.loss_table)
    flows = forward_backward(wfa)
    value = flows.log_z - float(w[ex.gold_cols].sum())
    if not with_grad:
        return value, None, None
    cols, vals = expected_features(ex.lattice, transition_marginals(wfa, flows))
    cols = np.concatenate([cols, ex.gold_cols])
    vals = np.concatenate([vals, -np.ones(ex.gold_cols.size)])
    uniq, inv = np.unique(cols, return_inverse=True)
    return value, uniq, np.bincount(inv, weights=vals, minlength=uniq.size)


def column_penalties(bank: FeatureBank, cfg, m: int) -> np.ndarray:
    """lambda * r_{family(j)} + beta for every column j."""
    r = family_penalty_vector(bank, m, formula=cfg.penalty_formula)
    return cfg.lam * r[bank.family_array()] + cfg.beta


def _as_array(w) -> np.ndarray:
    return w.values if isinstance(w, WeightVector) else np.asarray(w, dtype=float)


def vcrf_objective(w, data, bank: FeatureBank, cfg: VcrfConfig, m_penalty: int | None = None) -> float:
    """(1/m) sum_i [log Z_i(loss-absorbed) - w.Psi(x_i, y_i)] + sum_k (lambda r_k + beta)||w_k||_1."""
    w = _as_array(w)
    p = cfg.order(bank)
    prepared = prepare(data, bank, p, cfg.loss)
    pen = column_penalties(bank, cfg, m_penalty or len(data))
    data_term = np.mean([vcrf_smooth(w, ex, p, with_grad=False)[0] for ex in prepared])
    return float(data_term + np.dot(pen, np.abs(w)))


def vcrf_data_term(w, data, bank: FeatureBank, cfg: VcrfConfig) -> float:
    w = _as_array(w)
    p = cfg.order(bank)
    prepared = prepare(data, bank, p, cfg.loss)
    return float(np.mean([vcrf_smooth(w, ex, p, with_grad=False)[0] for ex in prepared]))


def vcrf_gradient(w, example: LabeledSequence, bank: FeatureBank, cfg: VcrfConfig,
                  m: int = 1) -> SparseVec:
    """Gradient of (1/m)[log Z_i - w.Psi(x_i, y_i)]: expected minus observed features."""
    w = _as_array(w)
    p = cfg.order(bank)
    (ex,) = prepare([example], bank, p, cfg.loss)
    _, cols, vals = vcrf_smooth(w, ex, p)
    return SparseVec(cols, vals / m)


def _train(data, bank, cfg, smooth, w0=None):
    if not data:
        raise ValueError("empty training data")
    p = cfg.order(bank)
    prepared = prepare(data, bank, p, cfg.loss)
    pen = column_penalties(bank, cfg, len(data))

    def smooth_value(w):
        return float(np.mean([smooth(w, ex, p, False)[0] for ex in prepared]))

    def objective(w):
        return smooth_value(w) + float(np.dot(pen, np.abs(w)))

    w0 = np.zeros(bank.dimension) if w0 is None else _as_array(w0)
    if cfg.solver == "prox-gd":
        w, trace = proximal_gradient(
            prepared, lambda w, ex: smooth(w, ex, p), smooth_value, w0, pen,
            iters=cfg.epochs, eta0=cfg.eta0, tol=cfg.tol, n_jobs=cfg.n_jobs,
        )
        return WeightVector(w, bank.family_array()), trace
    rng = substream(cfg.seed, "sgd-shuffle")
    w, trace = proximal_sgd(
        prepared, lambda w, ex: smooth(w, ex, p), objective, w0, pen,
        epochs=cfg.epochs, eta0=cfg.eta0, decay=cfg.decay, tol=cfg.tol,
        batch_size=cfg.batch_size, rng=rng, n_jobs=cfg.n_jobs, full_batch=cfg.full_batch,
        clip_norm=cfg.clip_norm,
    )
    return WeightVector(w, bank.family_array()), trace


def train_vcrf(data, bank: FeatureBank, cfg: VcrfConfig, w0=None):
    """Proximal SGD on the VCRF objective. Returns (WeightVector, TrainLog)."""
    return _train(data, bank, cfg, vcrf_smooth, w0)


def predict(w, x: Sequence[str], bank: FeatureBank, cfg: VcrfConfig) -> list[int]:
    p = cfg.order(bank)
    return viterbi_wfa(wfa_from_lattice(bank.compile(x), _as_array(w), p))
