"""Order-p chain automaton over label windows.

States at layer t are the last ``min(t, p-1)`` labels.  They are stored
densely as base-(r+1) integers over p-1 slots where the digit r is the empty
symbol, so a state near the start is the shorter window left-padded with
empty symbols.  Transitions at position t are indexed by the full window
``source . b`` (p slots); windows whose empty symbols are not a prefix, or
that are too long for position t, carry weight -inf and are never
reported as transitions.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .core import window_at
from .features import FeatureBank, SequenceLattice

TIE_TOL = 1e-9


def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(a - m).sum(axis=axis)) + np.squeeze(m, axis=axis)


@lru_cache(maxsize=256)
def _digits(n_labels: int, p: int) -> np.ndarray:
    """digits[w, j]: slot j (0 = oldest) of dense window w."""
    r1 = n_labels + 1
    w = np.arange(r1 ** p)
    return np.stack([(w // r1 ** (p - 1 - j)) % r1 for j in range(p)], axis=1) if p else \
        np.zeros((1, 0), dtype=np.int64)


@lru_cache(maxsize=1024)
def window_mask(length: int, n_labels: int, p: int) -> np.ndarray:
    """valid[t-1, w]: window w is a real window ending at position t."""
    dig = _digits(n_labels, p)
    is_eps = dig == n_labels
    n_eps = is_eps.sum(axis=1)
    # empty symbols must form a prefix
    prefix_ok = np.ones(dig.shape[0], dtype=bool)
    for j in range(1, p):
        prefix_ok &= ~(is_eps[:, j] & ~is_eps[:, j - 1])
    t = np.arange(1, length + 1)[:, None]
    need = np.maximum(0, p - t)
    mask = (n_eps[None, :] == need) & prefix_ok[None, :]
    mask.setflags(write=False)
    return mask


def encode_window(z: Sequence[int], n_labels: int, p: int) -> int:
    """Dense index of an effective window (length <= p)."""
    if len(z) > p:
        raise ValueError("window longer than automaton order")
    r1 = n_labels + 1
    idx = 0
    for a in (n_labels,) * (p - len(z)) + tuple(z):
        idx = idx * r1 + a
    return idx


def decode_window(idx: int, n_labels: int, p: int) -> tuple[int, ...]:
    r1 = n_labels + 1
    out = []
    for _ in range(p):
        out.append(idx % r1)
        idx //= r1
    return tuple(a for a in reversed(out) if a != n_labels)


def lattice_scores(lattice: SequenceLattice, w: np.ndarray, p: int) -> np.ndarray:
    """Transition log-weights w . psi~(x, z, t) over dense windows: (l, (r+1)^p)."""
    l, r = lattice.length, lattice.n_labels
    r1 = r + 1
    out = np.zeros((l, r1 ** p))
    for k in lattice.orders:
        if k > p:
            raise ValueError(f"feature tag order {k} exceeds automaton order {p}")
        size = r1 ** k
        sk = np.bincount(
            lattice.pos[k] * size + lattice.win[k],
            weights=w[lattice.col[k]],
            minlength=l * size,
        ).reshape(l, 1, size)
        out.reshape(l, r1 ** (p - k), size)[...] += sk
    out[~window_mask(l, r, p)] = -np.inf
    return out


@dataclass
class ChainWfa:
    """Deterministic acyclic automaton with log transition weights.

    ``log_weights[t-1, w]`` is the log-weight of the transition reading the
    last label of window ``w`` at position t (-inf when absent).
    """

    markov_order: int
    n_labels: int
    log_weights: np.ndarray

    @property
    def length(self) -> int:
        return self.log_weights.shape[0]

    @property
    def n_window_slots(self) -> int:
        return (self.n_labels + 1) ** self.markov_order

    @property
    def n_state_slots(self) -> int:
        return (self.n_labels + 1) ** (self.markov_order - 1)

    @property
    def initial(self) -> int:
        return self.n_state_slots - 1

    def valid(self) -> np.ndarray:
        return window_mask(self.length, self.n_labels, self.markov_order)

    @property
    def n_transitions(self) -> int:
        return int(self.valid().sum())

    def states(self, t: int) -> list[tuple[tuple[int, ...], int]]:
        """Reachable states of layer t as (effective window, t)."""
        p, r = self.markov_order, self.n_labels
        if t == 0:
            return [((), 0)]
        eff = min(t, p - 1)
        seen = sorted({decode_window(w, r, p)[-eff:] if eff else ()
                       for w in np.flatnonzero(self.valid()[t - 1])})
        return [(s, t) for s in seen]

    def transitions(self):
        """Yield (source state, label, log-weight, target state)."""
        p, r = self.markov_order, self.n_labels
        valid = self.valid()
        for t in range(1, self.length + 1):
            for w in np.flatnonzero(valid[t - 1]):
                z = decode_window(int(w), r, p)
                src = z[:-1][-(p - 1):] if p > 1 else ()
                tgt = z[-(p - 1):] if p > 1 else ()
                if len(src) > t - 1:
                    src = src[len(src) - (t - 1):]
                yield (src, t - 1), z[-1], float(self.log_weights[t - 1, w]), (tgt, t)

    def path_weight(self, y: Sequence[int]) -> float:
        if len(y) != self.length:
            raise ValueError("label sequence length differs from automaton length")
        p, r = self.markov_order, self.n_labels
        return float(sum(
            self.log_weights[t - 1, encode_window(window_at(y, t, p), r, p)]
            for t in range(1, self.length + 1)
        ))

    def dump(self, labels: Sequence[str] | None = None) -> str:
        """Edge list ``source<TAB>label<TAB>logweight<TAB>target`` for debugging."""
        def name(state):
            win, t = state
            syms = [labels[a] if labels else str(a) for a in win]
            return f"({' '.join(syms) or 'eps'},{t})"

        lines = []
        for src, b, lw, tgt in self.transitions():
            lab = labels[b] if labels else str(b)
            lines.append(f"{name(src)}\t{lab}\t{lw!r}\t{name(tgt)}")
        return "\n".join(lines) + "\n"


def wfa_from_lattice(lattice: SequenceLattice, w: np.ndarray, p: int,
                     loss_table: np.ndarray | None = None) -> ChainWfa:
    lw = lattice_scores(lattice, w, p)
    if loss_table is not None:
        lw = lw + loss_table
    return ChainWfa(p, lattice.n_labels, lw)


def build_chain_wfa(x: Sequence[str], w: np.ndarray, bank: FeatureBank, p: int,
                    loss_absorb=None) -> ChainWfa:
    """Automaton for ``x``; ``loss_absorb=(loss, y_ref)`` adds L_t to the weights."""
    if p < bank.markov_order:
        raise ValueError(f"order {p} below the bank's tag order {bank.markov_order}")
    table = None
    if loss_absorb is not None:
        loss_fn, y_ref = loss_absorb
        if loss_fn.markov_order > p:
            raise ValueError(
                f"loss order {loss_fn.markov_order} exceeds automaton order {p}"
            )
        if len(y_ref) != len(x):
            raise ValueError("reference labels do not match the token count")
        table = loss_fn.table(y_ref, bank.n_labels, p)
    return wfa_from_lattice(bank.compile(x), np.asarray(w, dtype=float), p, table)


# ----------------------------------------------------------------------
@dataclass
class FlowTables:
    """Forward/backward log masses per layer: alpha[t], beta[t] over state slots."""

    alpha: np.ndarray
    beta: np.ndarray
    log_z: float


def forward_backward(wfa: ChainWfa) -> FlowTables:
    l = wfa.length
    r1 = wfa.n_labels + 1
    S = wfa.n_state_slots
    lw = wfa.log_weights
    alpha = np.full((l + 1, S), -np.inf)
    beta = np.full((l + 1, S), -np.inf)
    alpha[0, wfa.initial] = 0.0
    beta[l] = 0.0
    tgt = np.arange(r1 * S) % S
    for t in range(1, l + 1):
        win = (alpha[t - 1][:, None] + lw[t - 1].reshape(S, r1)).reshape(r1, S)
        alpha[t] = _lse(win, axis=0)
    for t in range(l, 0, -1):
        beta[t - 1] = _lse((lw[t - 1] + beta[t][tgt]).reshape(S, r1), axis=1)
    return FlowTables(alpha, beta, float(beta[0, wfa.initial]))


@dataclass
class TransitionMarginals:
    """q[s-1, w]: probability that the path uses window w at position s."""

    q: np.ndarray
    n_labels: int
    markov_order: int

    def at(self, z: Sequence[int], s: int) -> float:
        return float(self.q[s - 1, encode_window(z, self.n_labels, self.markov_order)])

    def windows(self, s: int) -> dict[tuple[int, ...], float]:
        valid = window_mask(self.q.shape[0], self.n_labels, self.markov_order)[s - 1]
        return {
            decode_window(int(w), self.n_labels, self.markov_order): float(self.q[s - 1, w])
            for w in np.flatnonzero(valid)
        }

    def totals(self) -> np.ndarray:
        return self.q.sum(axis=1)

    def suffix_marginals(self, k: int) -> np.ndarray:
        """Marginals over the last k slots: (l, (r+1)^k)."""
        r1 = self.n_labels + 1
        l = self.q.shape[0]
        return self.q.reshape(l, r1 ** (self.markov_order - k), r1 ** k).sum(axis=1)


def _edge_log_flow(wfa: ChainWfa, flows: FlowTables) -> np.ndarray:
    r1 = wfa.n_labels + 1
    S = wfa.n_state_slots
    src = np.arange(r1 * S) // r1
    tgt = np.arange(r1 * S) % S
    return flows.alpha[:-1][:, src] + wfa.log_weights + flows.beta[1:][:, tgt]


def transition_marginals(wfa: ChainWfa, flows: FlowTables) -> TransitionMarginals:
    with np.errstate(invalid="ignore"):
        q = np.exp(_edge_log_flow(wfa, flows) - flows.log_z)
    q[~np.isfinite(q)] = 0.0
    return TransitionMarginals(q, wfa.n_labels, wfa.markov_order)


# ----------------------------------------------------------------------
@dataclass
class MomentTables:
    """Forward/backward masses paired with loss-weighted mass ratios.

    ``ratio_fwd[t, s]`` is (sum over paths into s of weight * loss so far)
    divided by the path mass into s; ``ratio_bwd`` likewise for suffixes.
    """

    alpha: np.ndarray
    ratio_fwd: np.ndarray
    beta: np.ndarray
    ratio_bwd: np.ndarray
    log_z: float
    expected_loss: float

    @property
    def log_s(self) -> float:
        """log of S = sum_y L(y) exp(score(y))."""
        with np.errstate(divide="ignore"):
            return self.log_z + float(np.log(self.expected_loss))


def _softmax_rows(a: np.ndarray, axis: int) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(a - m)
    tot = e.sum(axis=axis, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = e / tot
    return np.where(tot > 0, out, 0.0)


def moment_flows(wfa: ChainWfa, loss_table: np.ndarray) -> MomentTables:
    """Expectation-semiring forward-backward: masses and loss-weighted masses."""
    l = wfa.length
    r1 = wfa.n_labels + 1
    S = wfa.n_state_slots
    lw = wfa.log_weights
    L = np.where(np.isfinite(lw), loss_table, 0.0)
    alpha = np.full((l + 1, S), -np.inf)
    beta = np.full((l + 1, S), -np.inf)
    rf = np.zeros((l + 1, S))
    rb = np.zeros((l + 1, S))
    alpha[0, wfa.initial] = 0.0
    beta[l] = 0.0
    src = np.arange(r1 * S) // r1
    tgt = np.arange(r1 * S) % S
    for t in range(1, l + 1):
        win = (alpha[t - 1][src] + lw[t - 1]).reshape(r1, S)
        val = (rf[t - 1][src] + L[t - 1]).reshape(r1, S)
        alpha[t] = _lse(win, axis=0)
        rf[t] = (_softmax_rows(win, axis=0) * val).sum(axis=0)
    for t in range(l, 0, -1):
        win = (lw[t - 1] + beta[t][tgt]).reshape(S, r1)
        val = (L[t - 1] + rb[t][tgt]).reshape(S, r1)
        beta[t - 1] = _lse(win, axis=1)
        rb[t - 1] = (_softmax_rows(win, axis=1) * val).sum(axis=1)
    i0 = wfa.initial
    return MomentTables(alpha, rf, beta, rb, float(beta[0, i0]), float(rb[0, i0]))


def loss_weighted_marginals(wfa: ChainWfa, mt: MomentTables, loss_table: np.ndarray) -> np.ndarray:
    """sum_{y using window w at s} L(y) p(y), as an (l, (r+1)^p) array."""
    r1 = wfa.n_labels + 1
    S = wfa.n_state_slots
    src = np.arange(r1 * S) // r1
    tgt = np.arange(r1 * S) % S
    flows = FlowTables(mt.alpha, mt.beta, mt.log_z)
    with np.errstate(invalid="ignore"):
        q = np.exp(_edge_log_flow(wfa, flows) - mt.log_z)
    ok = np.isfinite(q)
    q = np.where(ok, q, 0.0)
    extra = mt.ratio_fwd[:-1][:, src] + np.where(ok, loss_table, 0.0) + mt.ratio_bwd[1:][:, tgt]
    return q * extra


# ----------------------------------------------------------------------
def _max_backward(wfa: ChainWfa) -> np.ndarray:
    l = wfa.length
    r1 = wfa.n_labels + 1
    S = wfa.n_state_slots
    tgt = np.arange(r1 * S) % S
    vb = np.full((l + 1, S), -np.inf)
    vb[l] = 0.0
    for t in range(l, 0, -1):
        vb[t - 1] = (wfa.log_weights[t - 1] + vb[t][tgt]).reshape(S, r1).max(axis=1)
    return vb


def viterbi_wfa(wfa: ChainWfa) -> list[int]:
    """Max-sum path; among (near-)ties the lexicographically smallest labels."""
    r1 = wfa.n_labels + 1
    r = wfa.n_labels
    S = wfa.n_state_slots
    vb = _max_backward(wfa)
    state = wfa.initial
    prefix = 0.0
    out = []
    for t in range(1, wfa.length + 1):
        wins = state * r1 + np.arange(r)
        cand = prefix + wfa.log_weights[t - 1, wins] + vb[t][wins % S]
        best = cand.max()
        b = int(np.flatnonzero(cand >= best - TIE_TOL * (1.0 + abs(best)))[0])
        prefix += wfa.log_weights[t - 1, wins[b]]
        state = int(wins[b] % S)
        out.append(b)
    return out


def viterbi(x: Sequence[str], w: np.ndarray, bank: FeatureBank, p: int) -> list[int]:
    """argmax_y w . Psi(x, y) (no loss term)."""
    return viterbi_wfa(build_chain_wfa(x, w, bank, p))


def max_score_by_mismatches(wfa: ChainWfa, y_ref: Sequence[int]) -> np.ndarray:
    """best[d] = max path weight over y with exactly d positions differing from y_ref."""
    l = wfa.length
    r1 = wfa.n_labels + 1
    S = wfa.n_state_slots
    D = l + 1
    last = np.arange(r1 * S) % r1
    src = np.arange(r1 * S) // r1
    alpha = np.full((S, D), -np.inf)
    alpha[wfa.initial, 0] = 0.0
    for t in range(1, l + 1):
        v = alpha[src] + wfa.log_weights[t - 1][:, None]
        miss = last != y_ref[t - 1]
        shifted = np.full_like(v, -np.inf)
        shifted[:, 1:] = v[:, :-1]
        v = np.where(miss[:, None], shifted, v)
        alpha = v.reshape(r1, S, D).max(axis=0)
    return alpha.max(axis=0)
