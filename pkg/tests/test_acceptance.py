"""Acceptance criteria; each test prints one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` to see the verdict lines.
Criterion 7 needs a UD Tamil CoNLL-U file named by the environment
variable VOTEDCRF_UD_TAMIL and is skipped otherwise.
"""

import argparse
import filecmp
import math
import os
import time

import numpy as np
import pytest

from oracles import (
    brute_log_z,
    brute_marginals,
    brute_structboost_term,
    brute_vcrf_grad,
    brute_vcrf_term,
    brute_viterbi,
    central_difference,
    random_instance,
)
from votedcrf.automaton import build_chain_wfa, forward_backward, transition_marginals, viterbi_wfa
from votedcrf.cli import DEFAULT_GRID, main, run_cv
from votedcrf.complexity import (
    bound_h1,
    bound_h2,
    factor_features,
    mc_factor_graph_complexity,
    sample_stats,
)
from votedcrf.data_io import inject_noise, load_corpus, write_two_column
from votedcrf.features import DEFAULT_TEMPLATES
from votedcrf.losses import SURROGATES, HammingLoss, surrogate
from votedcrf.structboost import StructBoostConfig, structboost_data_term, structboost_gradient
from votedcrf.synthetic import synthetic_corpus
from votedcrf.vcrf import VcrfConfig, vcrf_data_term, vcrf_gradient, vcrf_objective

# reduced protocol for the synthetic cross-validation runs
CV_LAMBDAS = [0.0, 1e-3, 1e-2, 1e-1]
CV_BETAS = [0.0]
CV_EPOCHS = 3


def verdict(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
    assert ok, detail


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


# -- 1 ------------------------------------------------------------------------------------

def test_criterion_1_enumeration_oracle(capsys):
    t0 = time.perf_counter()
    L = HammingLoss()
    worst = 0.0
    viterbi_ok = True
    for seed in range(100):
        rng = np.random.default_rng(10_000 + seed)
        bank, w, seq, train = random_instance(rng, max_len=6, max_labels=3, max_order=2)
        p = bank.markov_order
        x = seq.tokens
        wfa = build_chain_wfa(x, w, bank, p)
        fl = forward_backward(wfa)
        # relative error of Z itself, from the log-domain values
        worst = max(worst, abs(math.expm1(fl.log_z - brute_log_z(x, w, bank))))
        q = transition_marginals(wfa, fl)
        for (s, z), v in brute_marginals(x, w, bank, p).items():
            worst = max(worst, _rel(q.at(z, s), v))
        viterbi_ok &= viterbi_wfa(wfa) == brute_viterbi(x, w, bank)
        want = np.mean([brute_vcrf_term(t, w, bank, L) for t in train])
        worst = max(worst, _rel(vcrf_data_term(w, train, bank, VcrfConfig()), want))
        want = np.mean([brute_structboost_term(t, w, bank, L) for t in train])
        worst = max(worst, _rel(structboost_data_term(w, train, bank, StructBoostConfig()), want))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and viterbi_ok and dt < 60
    verdict(capsys, 1, ok, f"100 instances, worst relative error {worst:.2e}, "
                           f"viterbi exact={viterbi_ok}, {dt:.1f}s")


# -- 2 ------------------------------------------------------------------------------------

def test_criterion_2_gradient_checks(capsys):
    t0 = time.perf_counter()
    worst = {"vcrf": 0.0, "structboost": 0.0}
    checked = skipped = 0
    seed = 0
    while checked < 20:
        rng = np.random.default_rng(20_000 + seed)
        seed += 1
        bank, w, seq, _ = random_instance(rng, max_len=5)
        if not np.any(brute_vcrf_grad(seq, w, bank, HammingLoss())):
            # only label-independent features fire, so both gradients vanish identically
            skipped += 1
            continue
        checked += 1
        cfg = VcrfConfig()
        g = vcrf_gradient(w, seq, bank, cfg).to_dense(bank.dimension)
        fd = central_difference(lambda v: vcrf_data_term(v, [seq], bank, cfg), w, h=1e-5)
        worst["vcrf"] = max(worst["vcrf"], np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
        sb = StructBoostConfig()
        g = structboost_gradient(w, seq, bank, sb).to_dense(bank.dimension)
        fd = central_difference(lambda v: structboost_data_term(v, [seq], bank, sb), w, h=1e-5)
        worst["structboost"] = max(worst["structboost"],
                                   np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
    dt = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-5 and dt < 60
    verdict(capsys, 2, ok, f"20 instances each, worst relative error vcrf {worst['vcrf']:.2e}, "
                           f"structboost {worst['structboost']:.2e} ({skipped} zero-gradient draws redrawn), {dt:.1f}s")


# -- 3 ------------------------------------------------------------------------------------

def test_criterion_3_normalization_and_flow(capsys):
    worst_q = worst_flow = 0.0
    for seed in range(1000):
        rng = np.random.default_rng(30_000 + seed)
        bank, w, seq, _ = random_instance(rng, max_len=8, max_labels=4)
        w = w * rng.uniform(0.1, 8.0)
        p = bank.markov_order + int(rng.integers(0, 2))
        loss = (HammingLoss(), seq.labels) if rng.random() < 0.5 else None
        wfa = build_chain_wfa(seq.tokens, w, bank, p, loss)
        fl = forward_backward(wfa)
        q = transition_marginals(wfa, fl)
        worst_q = max(worst_q, float(np.abs(q.totals() - 1.0).max()))
        s = fl.alpha + fl.beta
        m = s.max(axis=1, keepdims=True)
        layer = (m[:, 0] + np.log(np.exp(s - m).sum(axis=1)))
        worst_flow = max(worst_flow, float(np.abs(layer - fl.log_z).max()))
    ok = worst_q <= 1e-10 and worst_flow <= 1e-10
    verdict(capsys, 3, ok, f"1000 automata, max |sum Q - 1| {worst_q:.2e}, "
                           f"max layer mass deviation {worst_flow:.2e}")


# -- 4 ------------------------------------------------------------------------------------

def test_criterion_4_complexity_bounds(capsys):
    excess = {1: -np.inf, 2: -np.inf}
    worst_case_ok = True
    n = 24
    for seed in range(n):
        rng = np.random.default_rng(40_000 + seed)
        bank, _, _, train = random_instance(rng, max_len=6, n_train=int(rng.integers(2, 8)))
        p = bank.markov_order + int(rng.integers(0, 2))
        st = sample_stats(factor_features(train, bank, p))
        worst_case_ok &= st.sparsity <= st.sum_factor_term
        worst_case_ok &= st.sum_factor_term == sum(len(s) ** 2 for s in train) * bank.n_labels ** p
        for norm, bound in ((1, bound_h1(st, 1.0)), (2, bound_h2(st, 1.0))):
            est = mc_factor_graph_complexity(train, bank, norm=norm, draws=200, seed=seed,
                                             markov_order=p)
            # excess over the bound in standard errors, beyond a rounding allowance
            over = est.value - bound * (1 + 1e-12)
            excess[norm] = max(excess[norm], over / est.stderr if est.stderr > 0 else
                               (0.0 if over <= 0 else np.inf))
    ok = excess[1] <= 3 and excess[2] <= 3 and worst_case_ok
    verdict(capsys, 4, ok, f"{n} corpora, max (mc - bound)/stderr norm1 {excess[1]:.2f}, "
                           f"norm2 {excess[2]:.2f}; s <= sum l^2|D|^p: {worst_case_ok}")


# -- 5 ------------------------------------------------------------------------------------

def test_criterion_5_surrogate_grid(capsys):
    us = [k / 10 for k in range(11)]
    vs = [-3 + k / 10 for k in range(61)]
    bad = [(kind, u, v) for kind in SURROGATES for u in us for v in vs
           if not surrogate(kind, u, v) >= (u if v <= 0 else 0.0)]
    verdict(capsys, 5, not bad, f"{len(SURROGATES)} surrogates x {len(us) * len(vs)} grid points, "
                                f"violations {len(bad)}")


# -- 6 and 8 ------------------------------------------------------------------------------

def _cv_args(seed=0):
    return argparse.Namespace(seed=seed, templates=list(DEFAULT_TEMPLATES), epochs=CV_EPOCHS,
                              order=None, loss="hamming", penalty="counting", eta0=None)


def _sparsity_direction(res):
    rows = []
    ok = True
    for r in res["runs"]:
        sel = r["vcrf"]
        zero = next(c for c in r["grid"] if c["lambda"] == 0.0 and c["beta"] == sel["beta"])
        ok &= sel["lambda"] > 0 and sel["nonzero_features"] < zero["nonzero_features"]
        rows.append(f"{sel['nonzero_features']}<{zero['nonzero_features']}@lambda={sel['lambda']:g}")
    return ok, rows


def test_criterion_6_reduction_and_sparsity(capsys):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(60_000 + seed)
        bank, w, _, train = random_instance(rng)
        beta = float(rng.uniform(0, 0.1))
        got = vcrf_objective(w, train, bank, VcrfConfig(lam=0.0, beta=beta))
        crf = np.mean([brute_vcrf_term(s, w, bank, HammingLoss()) for s in train]) + beta * np.abs(w).sum()
        worst = max(worst, _rel(got, crf))
    corpus = synthetic_corpus(2000, n_labels=8, seed=0)
    res = run_cv(corpus, _cv_args(), "vcrf", CV_LAMBDAS, CV_BETAS)
    sparse_ok, rows = _sparsity_direction(res)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-12 and sparse_ok and dt < 600
    verdict(capsys, 6, ok, f"lambda=0 vs L1-CRF worst relative {worst:.1e}; selected nonzeros per run "
                           f"{', '.join(rows)}; {dt:.0f}s")


@pytest.mark.skipif(not os.environ.get("VOTEDCRF_UD_TAMIL"),
                    reason="set VOTEDCRF_UD_TAMIL to a UD Tamil CoNLL-U file")
def test_criterion_7_treebank_direction(capsys):
    t0 = time.perf_counter()
    corpus = load_corpus(os.environ["VOTEDCRF_UD_TAMIL"], "conllu")
    args = _cv_args()
    args.epochs = int(os.environ.get("VOTEDCRF_UD_EPOCHS", "5"))
    res = run_cv(corpus, args, "vcrf", list(DEFAULT_GRID), list(DEFAULT_GRID))
    v, c = res["summary"]["vcrf"], res["summary"]["crf"]
    dt = time.perf_counter() - t0
    ok = v["token_error_mean"] <= c["token_error_mean"] and dt <= 3600
    verdict(capsys, 7, ok, f"{len(corpus)} sentences, token error VCRF {100 * v['token_error_mean']:.2f} "
                           f"vs CRF {100 * c['token_error_mean']:.2f}, {dt:.0f}s")


def test_criterion_8_noise(capsys):
    t0 = time.perf_counter()
    big = synthetic_corpus(11_500, n_labels=8, seed=8)
    n_tok = big.stats["tokens"]
    assert n_tok >= 100_000
    noisy, rep = inject_noise(big, rate=0.2, min_count=5, seed=8, report=True)
    counts = {}
    for s in big.sentences:
        for t in s.tokens:
            counts[t] = counts.get(t, 0) + 1
    flipped = inel_flipped = 0
    for a, b in zip(big.sentences, noisy.sentences):
        for t, x, y in zip(a.tokens, a.labels, b.labels):
            if x != y:
                if counts[t] >= 5:
                    flipped += 1
                else:
                    inel_flipped += 1
    sigma = math.sqrt(rep.eligible * 0.2 * 0.8)
    z = (flipped - 0.2 * rep.eligible) / sigma
    stats_ok = abs(z) <= 3 and inel_flipped == 0
    corpus = inject_noise(synthetic_corpus(2000, n_labels=8, seed=0), 0.2, 5, seed=0)
    res = run_cv(corpus, _cv_args(), "vcrf", CV_LAMBDAS, CV_BETAS)
    v, c = res["summary"]["vcrf"], res["summary"]["crf"]
    direction_ok = v["token_error_mean"] <= c["token_error_mean"]
    dt = time.perf_counter() - t0
    verdict(capsys, 8, stats_ok and direction_ok,
            f"{n_tok} tokens, flip fraction {flipped / rep.eligible:.4f} (z={z:+.2f}), "
            f"ineligible flipped {inel_flipped}; noisy token error VCRF {100 * v['token_error_mean']:.2f} "
            f"vs CRF {100 * c['token_error_mean']:.2f}; {dt:.0f}s")


# -- 9 ------------------------------------------------------------------------------------

COMMANDS = [
    ["train", "--data", "c.tsv", "--templates", "0,1,0;1,1,0;0,1,2", "--epochs", "3",
     "--lambda", "0.01", "--beta", "0.001", "--out", "m.json"],
    ["train", "--data", "c.tsv", "--templates", "0,1,0;1,1,0", "--epochs", "3", "--kind", "structboost",
     "--out", "sb.json"],
    ["predict", "--data", "c.tsv", "--model", "m.json", "--out", "pred.tsv"],
    ["eval", "--data", "c.tsv", "--model", "sb.json", "--out", "eval.json"],
    ["cv", "--data", "c.tsv", "--templates", "0,1,0;1,1,0", "--epochs", "2", "--lambda-grid", "0,0.01",
     "--beta-grid", "0", "--noise-rate", "0.2", "--min-count", "2", "--out", "cv"],
    ["noise", "--data", "c.tsv", "--noise-rate", "0.3", "--min-count", "2", "--seed", "4", "--out", "noisy.tsv"],
    ["complexity", "--data", "c.tsv", "--templates", "0,1,0;1,1,0", "--norm", "1", "--draws", "50",
     "--out", "cx.json"],
    ["bound", "--data", "c.tsv", "--model", "m.json", "--rho", "0.5", "--delta", "0.1", "--draws", "50",
     "--out", "bound.json"],
]


def test_criterion_9_determinism(capsys, tmp_path, monkeypatch):
    corpus = synthetic_corpus(60, n_labels=4, seed=9)
    stdout = {}
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        write_two_column(corpus, str(d / "c.tsv"))
        monkeypatch.chdir(d)
        outs = []
        for argv in COMMANDS:
            code = main(argv)
            outs.append(capsys.readouterr().out)
            assert code == 0, (argv, code)
        stdout[run] = outs
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    files = []

    def walk(c, prefix=""):
        files.extend(prefix + f for f in c.common_files)
        for name, sub in c.subdirs.items():
            walk(sub, prefix + name + "/")

    walk(cmp)
    same = [filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False) for f in files]
    ok = (all(same) and not cmp.left_only and not cmp.right_only
          and stdout["a"] == stdout["b"] and len(files) >= 12)
    verdict(capsys, 9, ok, f"{len(COMMANDS)} commands rerun, {sum(same)}/{len(files)} output files "
                           f"byte-identical, stdout identical={stdout['a'] == stdout['b']}")
