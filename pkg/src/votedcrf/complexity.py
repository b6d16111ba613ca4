"""Empirical factor-graph Rademacher complexity and generalization bounds.

For linear hypotheses with ||w||_q <= Lambda the supremum inside the
complexity has a closed form through the dual norm, so every Monte-Carlo
draw reduces to one sparse matrix-vector product:

    R_S = (Lambda / m) E_eps || sum_{i, f, z} sqrt(|F_i|) eps_{i,f,z} psi(x_i, z, f) ||_*

with ||.||_* the inf-norm when q = 1 and the 2-norm when q = 2.  Chains have
one factor per position (|F_i| = l_i) and Y_f = Delta^p.
"""

from __future__ import annotations

import itertools
import json
import math
import zlib
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse

from .automaton import encode_window, max_score_by_mismatches, wfa_from_lattice
from .features import FeatureBank
from .losses import HammingLoss, clip

SQRT2 = math.sqrt(2.0)


class DomainError(ValueError):
    """Inputs outside the domain where a quantity is defined."""


def _tokens(item):
    return item.tokens if hasattr(item, "tokens") else tuple(item)


@dataclass
class FactorFeatures:
    """Rows are (example, position, full window z); columns are features."""

    matrix: sparse.csr_matrix
    row_example: np.ndarray
    lengths: np.ndarray
    n_labels: int
    markov_order: int

    @property
    def row_weight(self) -> np.ndarray:
        """|F_i| for the example each row belongs to."""
        return self.lengths[self.row_example].astype(float)

    @property
    def m(self) -> int:
        return self.lengths.size


def factor_features(sample, bank: FeatureBank, p: int | None = None) -> FactorFeatures:
    """psi(x_i, z, s) for every example i, position s and z in Delta^p.

    Near the start of a sequence only the last ``s`` labels of z exist, so
    windows agreeing on them share a feature vector.
    """
    if len(sample) == 0:
        raise DomainError("empty sample")
    p = p or bank.markov_order
    if p < bank.markov_order:
        raise ValueError(f"order {p} below the bank's tag order {bank.markov_order}")
    r = bank.n_labels
    n_z = r ** p
    zs = list(itertools.product(range(r), repeat=p))
    rows, cols = [], []
    lengths = []
    offset = 0
    for i, item in enumerate(sample):
        x = _tokens(item)
        l = len(x)
        lengths.append(l)
        lat = bank.compile(x)
        for k in lat.orders:
            # key[s-1, zi]: dense k-window that z presents at position s
            key = np.empty((l, n_z), dtype=np.int64)
            for s in range(1, l + 1):
                eff = min(s, p, k)
                key[s - 1] = [encode_window(z[p - eff:], r, k) for z in zs]
            pos, win, col = lat.pos[k], lat.win[k], lat.col[k]
            for e in range(pos.size):
                zi = np.flatnonzero(key[pos[e]] == win[e])
                rows.append(offset + pos[e] * n_z + zi)
                cols.append(np.full(zi.size, col[e]))
        offset += l * n_z
    n_rows = offset
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    mat = sparse.coo_matrix(
        (np.ones(rows.size), (rows, cols)), shape=(n_rows, bank.dimension)
    ).tocsr()
    mat.sum_duplicates()
    lengths = np.asarray(lengths, dtype=np.int64)
    row_example = np.repeat(np.arange(lengths.size), lengths * n_z)
    return FactorFeatures(mat, row_example, lengths, r, p)


def _dual_norms(v: np.ndarray, norm: int) -> np.ndarray:
    if norm == 1:
        return np.abs(v).max(axis=-1, initial=0.0)
    if norm == 2:
        return np.sqrt((v * v).sum(axis=-1))
    raise ValueError(f"norm must be 1 or 2, got {norm}")


def _scaled(ff: FactorFeatures) -> sparse.csr_matrix:
    return sparse.diags(np.sqrt(ff.row_weight)) @ ff.matrix


def draw_signs(n_rows: int, draws: int, seed: int) -> np.ndarray:
    """Sign matrix (draws, n_rows); draw d uses its own child of the master seed."""
    root = np.random.SeedSequence([int(seed), zlib.crc32(b"mc-draws")])
    out = np.empty((draws, n_rows))
    for d, child in enumerate(root.spawn(draws)):
        out[d] = np.random.default_rng(child).choice((-1.0, 1.0), size=n_rows)
    return out


@dataclass
class McEstimate:
    value: float
    stderr: float
    draws: int


def _mc_from_features(ff: FactorFeatures, norm: int, Lambda: float, draws: int,
                      seed: int) -> McEstimate:
    if draws < 1:
        raise DomainError("draws must be >= 1")
    if Lambda < 0:
        raise DomainError("Lambda must be nonnegative")
    phi = _scaled(ff)
    eps = draw_signs(phi.shape[0], draws, seed)
    v = np.asarray((phi.T @ eps.T).T)
    vals = Lambda * _dual_norms(v, norm) / ff.m
    stderr = float(vals.std(ddof=1) / math.sqrt(draws)) if draws > 1 else float("nan")
    return McEstimate(float(vals.mean()), stderr, draws)


def mc_factor_graph_complexity(sample, bank: FeatureBank, norm: int = 2, Lambda: float = 1.0,
                               draws: int = 200, seed: int = 0,
                               markov_order: int | None = None) -> McEstimate:
    """Monte-Carlo estimate of the empirical factor-graph Rademacher complexity."""
    return _mc_from_features(factor_features(sample, bank, markov_order), norm, Lambda, draws, seed)


def exact_factor_graph_complexity(sample, bank: FeatureBank, norm: int = 2, Lambda: float = 1.0,
                                  markov_order: int | None = None, max_rows: int = 20) -> float:
    """Exact expectation by averaging over all 2^rows sign patterns."""
    ff = factor_features(sample, bank, markov_order)
    phi = _scaled(ff).toarray()
    n = phi.shape[0]
    if n > max_rows:
        raise DomainError(f"{n} sign variables exceed the enumeration limit {max_rows}")
    eps = np.array(list(itertools.product((-1.0, 1.0), repeat=n))).reshape(-1, n)
    return float(Lambda * _dual_norms(eps @ phi, norm).mean() / ff.m)


# ----------------------------------------------------------------------
@dataclass
class SampleStats:
    m: int
    N: int
    r_inf: float
    r_2: float
    sparsity: float
    sum_factor_term: float


def sample_stats(ff: FactorFeatures) -> SampleStats:
    mat = ff.matrix
    r_inf = float(abs(mat).max()) if mat.nnz else 0.0
    sq = np.asarray(mat.multiply(mat).sum(axis=1)).ravel()
    r_2 = float(math.sqrt(sq.max())) if sq.size else 0.0
    return SampleStats(
        m=ff.m,
        N=mat.shape[1],
        r_inf=r_inf,
        r_2=r_2,
        sparsity=_sparsity(ff),
        sum_factor_term=float((ff.lengths.astype(float) ** 2).sum() * ff.n_labels ** ff.markov_order),
    )


def _sparsity(ff: FactorFeatures) -> float:
    mat = ff.matrix.tocsc()
    if mat.nnz == 0:
        return 0.0
    ind = mat.copy()
    ind.data = (ind.data != 0).astype(float)
    weighted = ind.T @ ff.row_weight
    return float(np.max(weighted))


def sparsity_factor(sample, bank: FeatureBank, markov_order: int | None = None) -> float:
    """s = max_j sum_i sum_f sum_z |F_i| 1[psi_{f,j}(x_i, z) != 0]."""
    return _sparsity(factor_features(sample, bank, markov_order))


def bound_h1(stats: SampleStats, Lambda1: float) -> float:
    """Lambda1 r_inf sqrt(2 s log(2N)) / m.

    N may be any real >= 1/2 so the formula can be evaluated symbolically;
    below that log(2N) is negative and N = 0 is the empty feature space.
    """
    if not stats.N >= 0.5:
        raise DomainError(f"feature dimension N={stats.N} leaves log(2N) negative")
    if stats.m < 1:
        raise DomainError("sample size must be >= 1")
    return Lambda1 * stats.r_inf * math.sqrt(2.0 * stats.sparsity * math.log(2 * stats.N)) / stats.m


def bound_h2(stats: SampleStats, Lambda2: float) -> float:
    """Lambda2 r_2 sqrt(sum_i sum_f sum_z |F_i|) / m."""
    if stats.m < 1:
        raise DomainError("sample size must be >= 1")
    return Lambda2 * stats.r_2 * math.sqrt(stats.sum_factor_term) / stats.m


# ----------------------------------------------------------------------
@dataclass
class BoundInputs:
    rho: float
    delta: float
    M: float = 1.0
    m: int = 1
    c: float | None = None
    p_families: int = 1
    alpha_weights: Sequence[float] = (1.0,)
    per_family_complexity: Sequence[float] = (0.0,)

    def __post_init__(self):
        if not self.rho > 0:
            raise DomainError("rho must be positive")
        if not 0 < self.delta <= 1:
            raise DomainError("delta must lie in (0, 1]")
        if self.m < 1:
            raise DomainError("m must be >= 1")
        if self.M < 0:
            raise DomainError("M must be nonnegative")
        a = np.asarray(self.alpha_weights, dtype=float)
        if a.size and (np.any(a < 0) or abs(a.sum() - 1.0) > 1e-9):
            raise DomainError("alpha weights must lie in the simplex")
        if len(self.per_family_complexity) != a.size:
            raise DomainError("one complexity value per alpha weight is required")


def uniform_rho_term(rho: float, m: int) -> float:
    """sqrt(log(log2(2 / rho)) / m), the price of holding for every rho in (0, 1]."""
    if not 0 < rho <= 1:
        raise DomainError("uniform-rho term needs rho in (0, 1]")
    return math.sqrt(math.log(math.log2(2.0 / rho)) / m)


def generalization_bound(variant: str, empirical_loss: float, complexity: float,
                         inputs: BoundInputs, empirical: bool = False,
                         uniform_rho: bool = False) -> float:
    """Margin bound: loss + (4 sqrt2 [M] / rho) R + kappa M sqrt(log(1/delta) / 2m).

    kappa is 1 with the expected complexity and 3 with the empirical one.
    """
    scale = 4.0 * SQRT2 / inputs.rho
    if variant == "mult":
        scale *= inputs.M
    elif variant != "add":
        raise ValueError(f"unknown variant {variant!r}")
    kappa = 3.0 if empirical else 1.0
    conc = kappa * inputs.M * math.sqrt(math.log(1.0 / inputs.delta) / (2.0 * inputs.m))
    extra = uniform_rho_term(inputs.rho, inputs.m) if uniform_rho else 0.0
    return empirical_loss + scale * complexity + conc + extra


def vrm_constant(inputs: BoundInputs) -> float:
    """C(rho, M, c, m, p) of the voted-risk bound."""
    rho, M, m, p = inputs.rho, inputs.M, inputs.m, inputs.p_families
    if p < 2:
        raise DomainError("the voted-risk bound needs at least two families")
    if inputs.c is None or not math.isfinite(inputs.c):
        raise DomainError("the voted-risk bound needs a finite output-set size c")
    logp = math.log(p)
    arg = inputs.c ** 2 * rho ** 2 * m / (4.0 * logp)
    if arg <= 1.0:
        raise DomainError(
            f"log(c^2 rho^2 m / (4 log p)) = log({arg:.4g}) is not positive; m is too small"
        )
    n = math.ceil(4.0 / rho ** 2 * math.log(arg))
    return (2.0 * M / rho) * math.sqrt(logp / m) + 3.0 * M * math.sqrt(
        n * logp / m + math.log(2.0 / inputs.delta) / (2.0 * m)
    )


def vrm_bound(inputs: BoundInputs, variant: str = "add", empirical_loss: float = 0.0) -> float:
    """empirical_loss + (4 sqrt2 [M] / rho) sum_t alpha_t R_t + C(rho, M, c, m, p)."""
    scale = 4.0 * SQRT2 / inputs.rho
    if variant == "mult":
        scale *= inputs.M
    elif variant != "add":
        raise ValueError(f"unknown variant {variant!r}")
    mix = float(np.dot(inputs.alpha_weights, inputs.per_family_complexity))
    return empirical_loss + scale * mix + vrm_constant(inputs)


# ----------------------------------------------------------------------
def margin_losses(w, data, bank: FeatureBank, p: int, rho: float, tau: float = 0.0,
                  loss: HammingLoss | None = None) -> dict:
    """Clipped additive and multiplicative empirical margin losses of a linear model.

    Exact for Hamming losses: the best competitor is searched separately for
    every mismatch count d >= 1, which fixes the loss value of the competitor.
    """
    loss = loss or HammingLoss()
    if not isinstance(loss, HammingLoss):
        raise ValueError("exact margin losses are implemented for Hamming losses only")
    if rho <= 0:
        raise DomainError("rho must be positive")
    w = np.asarray(w, dtype=float)
    add, mult = [], []
    M = 0.0
    for seq in data:
        l = len(seq)
        lat = bank.compile(seq.tokens)
        best = max_score_by_mismatches(wfa_from_lattice(lat, w, p), seq.labels)
        gold = best[0]
        d = np.arange(1, l + 1)
        ok = np.isfinite(best[1:])
        if not ok.any():
            add.append(0.0)
            mult.append(0.0)
            continue
        lv = d[ok] / l if loss.normalize else d[ok].astype(float)
        gap = (gold - best[1:][ok]) / rho
        Mi = loss.bound(l)
        M = max(M, Mi)
        add.append(float(clip(np.max(lv + tau - gap), Mi)))
        mult.append(float(clip(np.max(lv * (1.0 + tau - gap)), Mi)))
    if not add:
        raise DomainError("empty sample")
    return {"add": float(np.mean(add)), "mult": float(np.mean(mult)), "M": M}


# ----------------------------------------------------------------------
@dataclass
class ComplexityReport:
    mc_estimate: float
    mc_stderr: float
    draws: int
    norm: int
    Lambda: float
    seed: int
    markov_order: int
    bound_h1: float
    bound_h2: float
    sparsity_s: float
    r_inf: float
    r_2: float
    N: int
    m: int
    sum_factor_term: float
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        lines = []
        for k, v in sorted(self.as_dict().items()):
            if isinstance(v, list):
                v = " | ".join(v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=2) + "\n"


H1_NOTE = ("bound_h1 uses Lambda1 r_inf sqrt(2 s log 2N) / m; the shorter form without "
           "the factor sqrt(2) is not a valid upper bound in general")


def complexity_report(sample, bank: FeatureBank, norm: int = 2, Lambda: float = 1.0,
                      draws: int = 200, seed: int = 0,
                      markov_order: int | None = None) -> ComplexityReport:
    p = markov_order or bank.markov_order
    ff = factor_features(sample, bank, p)
    est = _mc_from_features(ff, norm, Lambda, draws, seed)
    st = sample_stats(ff)
    return ComplexityReport(
        mc_estimate=est.value, mc_stderr=est.stderr, draws=draws, norm=norm, Lambda=Lambda,
        seed=seed, markov_order=p,
        bound_h1=bound_h1(st, Lambda) if st.N else 0.0,
        bound_h2=bound_h2(st, Lambda),
        sparsity_s=st.sparsity, r_inf=st.r_inf, r_2=st.r_2, N=st.N, m=st.m,
        sum_factor_term=st.sum_factor_term, notes=[H1_NOTE],
    )


@dataclass
class ConcentrationReport:
    seed: int
    resamples: int
    estimates: list
    sign_max_deviation: float
    swap_deviations: list
    swap_max_deviation: float
    bootstrap_estimates: list
    bootstrap_std: float
    bounded_difference: float

    def as_dict(self) -> dict:
        return asdict(self)


def concentration_probe(sample, bank: FeatureBank, norm: int = 2, Lambda: float = 1.0,
                        resamples: int = 10, seed: int = 0, draws: int = 200,
                        markov_order: int | None = None) -> ConcentrationReport:
    """Spread of the estimate under fresh sign draws, single-example swaps and resampling.

    ``bootstrap_std`` is the spread over samples of size m drawn with
    replacement from ``sample`` (same sign seed), a proxy for the deviation
    of the empirical complexity from its mean over samples.

    ``bounded_difference`` is the largest change one swapped example can cause,
    2 C max_i |F_i|^{3/2} |Delta|^p / m with C = Lambda r bounding |w . psi|.
    """
    if resamples < 2:
        raise DomainError("resamples must be >= 2")
    sample = list(sample)
    p = markov_order or bank.markov_order
    ff = factor_features(sample, bank, p)
    estimates = [
        _mc_from_features(ff, norm, Lambda, draws, seed * 1_000_003 + k).value
        for k in range(resamples)
    ]
    base = _mc_from_features(ff, norm, Lambda, draws, seed).value
    rng = np.random.default_rng([int(seed), zlib.crc32(b"concentration-swap")])
    swaps = []
    m = len(sample)
    for _ in range(resamples):
        j, k = (int(v) for v in rng.integers(0, m, size=2))
        swapped = sample[:j] + [sample[k]] + sample[j + 1:]
        est = _mc_from_features(factor_features(swapped, bank, p), norm, Lambda, draws, seed)
        swaps.append(abs(est.value - base))
    boot = []
    for _ in range(resamples):
        idx = rng.integers(0, m, size=m)
        boot.append(_mc_from_features(factor_features([sample[i] for i in idx], bank, p),
                                      norm, Lambda, draws, seed).value)
    st = sample_stats(ff)
    C = Lambda * (st.r_inf if norm == 1 else st.r_2)
    lmax = float(ff.lengths.max())
    bd = 2.0 * C * lmax ** 1.5 * ff.n_labels ** p / m
    mean = float(np.mean(estimates))
    return ConcentrationReport(
        seed=seed, resamples=resamples, estimates=estimates,
        sign_max_deviation=float(np.max(np.abs(np.array(estimates) - mean))),
        swap_deviations=swaps, swap_max_deviation=float(max(swaps)),
        bootstrap_estimates=boot, bootstrap_std=float(np.std(boot, ddof=1)),
        bounded_difference=bd,
    )
