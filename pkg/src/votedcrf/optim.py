"""Weight vectors and the proximal stochastic gradient harness shared by trainers."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .features import SparseVec

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Raised when the objective stops being finite."""


class WeightVector:
    """Parameter vector w partitioned into per-family blocks w_k."""

    def __init__(self, values, family_of):
        self.values = np.asarray(values, dtype=np.float64)
        self.family_of = np.asarray(family_of, dtype=np.int64)
        if self.values.shape != self.family_of.shape:
            raise ValueError("weights and family map differ in size")

    @classmethod
    def zeros(cls, bank) -> "WeightVector":
        return cls(np.zeros(bank.dimension), bank.family_array())

    def __len__(self) -> int:
        return self.values.size

    def block_norms(self, n_families: int | None = None) -> np.ndarray:
        n = n_families if n_families is not None else int(self.family_of.max(initial=-1)) + 1
        return np.bincount(self.family_of, weights=np.abs(self.values), minlength=n)

    def l1(self) -> float:
        return float(np.abs(self.values).sum())

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.values))

    def nnz_per_family(self, n_families: int | None = None) -> np.ndarray:
        n = n_families if n_families is not None else int(self.family_of.max(initial=-1)) + 1
        return np.bincount(self.family_of[self.values != 0], minlength=n)

    def to_sparse(self) -> SparseVec:
        return SparseVec.from_dense(self.values)


def soft_threshold(x: np.ndarray, t) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


@dataclass
class TrainLog:
    objectives: list = field(default_factory=list)
    nnz: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    converged: bool = False
    epochs_run: int = 0

    def as_dict(self) -> dict:
        return {
            "objectives": [float(v) for v in self.objectives],
            "nnz": [int(v) for v in self.nnz],
            "converged": self.converged,
            "epochs_run": self.epochs_run,
        }


def _reduce(parts):
    cols = np.concatenate([c for c, _ in parts])
    vals = np.concatenate([v for _, v in parts])
    uniq, inv = np.unique(cols, return_inverse=True)
    return uniq, np.bincount(inv, weights=vals, minlength=uniq.size)


def proximal_sgd(examples, smooth, objective, w0, penalty, *, epochs, eta0, decay,
                 tol, batch_size, rng, n_jobs=1, full_batch=False, log_every=True,
                 clip_norm=None):
    """FOBOS-style proximal SGD on ``mean_i smooth_i(w) + sum_j penalty_j |w_j|``.

    ``smooth(w, ex)`` returns ``(value, cols, grad_vals)`` of one example's
    unscaled smooth term.  Soft-thresholding of coordinates an example does
    not touch is deferred and applied in one shot the next time they are
    read (thresholds compose additively), which keeps each step sparse.

    With ``clip_norm`` set, a mini-batch gradient whose 2-norm exceeds it is
    rescaled to that norm before the step.
    """
    w = np.array(w0, dtype=np.float64)
    n = len(examples)
    penalty = np.asarray(penalty, dtype=np.float64)
    touched = [ex.touched for ex in examples]
    pending_since = np.zeros(w.size)
    cum_eta = 0.0
    step = 0
    bs = n if full_batch else max(1, min(batch_size, n))
    n_batches = math.ceil(n / bs)
    decay = decay if decay else n_batches
    trace = TrainLog()
    prev = objective(w)
    trace.objectives.append(prev)
    trace.nnz.append(int(np.count_nonzero(w)))
    pool = ThreadPoolExecutor(n_jobs) if n_jobs > 1 and bs > 1 else None
    try:
        for epoch in range(epochs):
            order = np.arange(n) if full_batch else rng.permutation(n)
            for b in range(n_batches):
                idx = order[b * bs:(b + 1) * bs]
                cols = touched[idx[0]] if len(idx) == 1 else np.unique(
                    np.concatenate([touched[i] for i in idx]))
                lag = cum_eta - pending_since[cols]
                w[cols] = soft_threshold(w[cols], lag * penalty[cols])
                pending_since[cols] = cum_eta
                if pool is not None:
                    parts = list(pool.map(lambda i: smooth(w, examples[i])[1:], idx))
                else:
                    parts = [smooth(w, examples[i])[1:] for i in idx]
                gcols, gvals = parts[0] if len(parts) == 1 else _reduce(parts)
                gvals = gvals / len(idx)
                if clip_norm is not None:
                    gn = float(np.linalg.norm(gvals))
                    if gn > clip_norm:
                        gvals = gvals * (clip_norm / gn)
                eta = eta0 / (1.0 + step / decay)
                if full_batch:
                    # every coordinate takes the prox step at once
                    w[gcols] -= eta * gvals
                    w = soft_threshold(w, (cum_eta + eta - pending_since) * penalty)
                    pending_since[:] = cum_eta + eta
                else:
                    w[gcols] -= eta * gvals
                    w[cols] = soft_threshold(w[cols], eta * penalty[cols])
                    pending_since[cols] = cum_eta + eta
                cum_eta += eta
                step += 1
                trace.step_sizes.append(eta)
            w = soft_threshold(w, (cum_eta - pending_since) * penalty)
            pending_since[:] = cum_eta
            cur = objective(w)
            trace.objectives.append(cur)
            trace.nnz.append(int(np.count_nonzero(w)))
            trace.epochs_run = epoch + 1
            if log_every:
                log.info("epoch %d objective %.8g nnz %d", epoch + 1, cur, trace.nnz[-1])
            if not np.isfinite(cur) or not np.all(np.isfinite(w)):
                raise TrainingError(
                    f"objective became non-finite at epoch {epoch + 1} "
                    f"(step size {eta:.3g}, previous objective {prev:.6g})"
                )
            if abs(prev - cur) <= tol * max(abs(prev), 1e-12):
                trace.converged = True
                break
            prev = cur
    finally:
        if pool is not None:
            pool.shutdown()
    return w, trace


def proximal_gradient(examples, smooth, smooth_value, w0, penalty, *, iters, eta0, tol,
                      n_jobs=1, log_every=True, grow=2.0):
    """Full-batch proximal gradient with backtracking on ``f(w) + sum_j penalty_j |w_j|``.

    ``smooth_value(w)`` is the mean smooth term f.  A step of size eta is
    accepted when f(w+) <= f(w) + g.(w+ - w) + ||w+ - w||^2 / (2 eta), so the
    objective never increases; accepted step sizes grow by ``grow`` for the
    next iteration.  Suited to objectives whose curvature varies over many
    orders of magnitude, where a fixed SGD schedule overshoots.
    """
    w = np.array(w0, dtype=np.float64)
    n = len(examples)
    penalty = np.asarray(penalty, dtype=np.float64)
    trace = TrainLog()
    f = smooth_value(w)
    prev = f + float(np.dot(penalty, np.abs(w)))
    trace.objectives.append(prev)
    trace.nnz.append(int(np.count_nonzero(w)))
    eta = eta0
    pool = ThreadPoolExecutor(n_jobs) if n_jobs > 1 else None
    try:
        for it in range(iters):
            if pool is not None:
                parts = list(pool.map(lambda ex: smooth(w, ex)[1:], examples))
            else:
                parts = [smooth(w, ex)[1:] for ex in examples]
            gcols, gvals = _reduce(parts)
            g = np.zeros(w.size)
            g[gcols] = gvals / n
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"gradient became non-finite at iteration {it + 1}")
            while True:
                cand = soft_threshold(w - eta * g, eta * penalty)
                d = cand - w
                fc = smooth_value(cand)
                if np.isfinite(fc) and fc <= f + float(g @ d) + float(d @ d) / (2 * eta) + 1e-12 * abs(f):
                    break
                eta /= 2.0
                if eta < 1e-300:
                    raise TrainingError(f"line search failed at iteration {it + 1}")
            w, f = cand, fc
            cur = f + float(np.dot(penalty, np.abs(w)))
            trace.objectives.append(cur)
            trace.nnz.append(int(np.count_nonzero(w)))
            trace.step_sizes.append(eta)
            trace.epochs_run = it + 1
            if log_every:
                log.info("iteration %d objective %.8g step %.3g nnz %d", it + 1, cur, eta, trace.nnz[-1])
            if abs(prev - cur) <= tol * max(abs(prev), 1e-12):
                trace.converged = True
                break
            prev = cur
            eta *= grow
    finally:
        if pool is not None:
            pool.shutdown()
    return w, trace
