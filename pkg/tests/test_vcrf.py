import math

import numpy as np
import pytest

from oracles import brute_vcrf_grad, brute_vcrf_term, central_difference, random_instance
from votedcrf.core import LabelAlphabet, LabeledSequence
from votedcrf.features import FeatureBank, FeatureTemplate, global_features
from votedcrf.losses import HammingLoss, ZeroLoss
from votedcrf.optim import TrainingError, WeightVector, soft_threshold
from votedcrf.vcrf import (
    VcrfConfig,
    column_penalties,
    predict,
    train_vcrf,
    vcrf_data_term,
    vcrf_gradient,
    vcrf_objective,
)

AB = LabelAlphabet(["N", "V"])
TOY = [
    LabeledSequence(("dog", "runs"), (0, 1)),
    LabeledSequence(("cat", "sleeps"), (0, 1)),
    LabeledSequence(("dog", "sleeps"), (0, 1)),
    LabeledSequence(("runs", "dog"), (1, 0)),
    LabeledSequence(("cat",), (0,)),
]


def _toy_bank(templates=(FeatureTemplate(1, 1, 0), FeatureTemplate(0, 2, 0))):
    return FeatureBank.from_corpus(list(templates), TOY, AB)


def test_zero_weights_zero_loss_value():
    bank = _toy_bank()
    cfg = VcrfConfig(loss=ZeroLoss())
    want = np.mean([len(s) * math.log(2) for s in TOY])
    assert vcrf_objective(np.zeros(bank.dimension), TOY, bank, cfg) == pytest.approx(want, rel=1e-14)


@pytest.mark.parametrize("seed", range(8))
def test_value_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    bank, w, seq, train = random_instance(rng)
    cfg = VcrfConfig()
    got = vcrf_data_term(w, train, bank, cfg)
    want = np.mean([brute_vcrf_term(s, w, bank, HammingLoss()) for s in train])
    assert got == pytest.approx(want, rel=1e-9)


def test_lambda_zero_is_l1_crf():
    rng = np.random.default_rng(3)
    bank, w, _, train = random_instance(rng)
    beta = 0.01
    cfg = VcrfConfig(lam=0.0, beta=beta)
    crf = vcrf_data_term(w, train, bank, cfg) + beta * np.abs(w).sum()
    assert vcrf_objective(w, train, bank, cfg) == pytest.approx(crf, rel=1e-12)


def test_gradient_uniform_single_position():
    bank = FeatureBank.from_corpus([FeatureTemplate(0, 1, 0)], TOY, AB)
    cfg = VcrfConfig(loss=ZeroLoss())
    ex = LabeledSequence(("cat",), (0,))
    g = vcrf_gradient(np.zeros(bank.dimension), ex, bank, cfg, m=4).to_dense(bank.dimension)
    psi = [global_features(("cat",), (b,), bank).to_dense(bank.dimension) for b in (0, 1)]
    np.testing.assert_allclose(g, (0.5 * psi[0] + 0.5 * psi[1] - psi[0]) / 4, atol=1e-15)


def test_gradient_vanishes_when_gold_dominates():
    bank = _toy_bank()
    ex = TOY[0]
    w = 40.0 * global_features(ex.tokens, ex.labels, bank).to_dense(bank.dimension)
    g = vcrf_gradient(w, ex, bank, VcrfConfig())
    assert np.abs(g.vals).max() < 1e-12


@pytest.mark.parametrize("seed", range(6))
def test_gradient_matches_enumeration_and_differences(seed):
    rng = np.random.default_rng(50 + seed)
    bank, w, seq, _ = random_instance(rng)
    cfg = VcrfConfig()
    g = vcrf_gradient(w, seq, bank, cfg).to_dense(bank.dimension)
    np.testing.assert_allclose(g, brute_vcrf_grad(seq, w, bank, HammingLoss()), atol=1e-9)
    fd = central_difference(lambda v: vcrf_data_term(v, [seq], bank, cfg), w)
    assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-12)


def test_penalty_vector():
    bank = _toy_bank()
    pen = column_penalties(bank, VcrfConfig(lam=2.0, beta=0.5), len(TOY))
    assert pen.shape == (bank.dimension,) and np.all(pen >= 0.5)


def test_separable_toy_reaches_zero_training_error():
    bank = _toy_bank()
    cfg = VcrfConfig(epochs=30)
    w, log = train_vcrf(TOY, bank, cfg)
    assert all(predict(w, s.tokens, bank, cfg) == list(s.labels) for s in TOY)
    assert log.objectives[-1] < log.objectives[0]


def test_huge_lambda_zeroes_everything():
    bank = _toy_bank()
    w, _ = train_vcrf(TOY, bank, VcrfConfig(lam=1e4, epochs=5))
    assert w.nnz == 0
    assert predict(w, ("dog", "runs"), bank, VcrfConfig()) == [0, 0]


def test_lambda_sparser_than_crf():
    rng = np.random.default_rng(9)
    bank, _, _, train = random_instance(rng, n_train=12, max_len=6)
    w0, _ = train_vcrf(train, bank, VcrfConfig(lam=0.0, beta=0.0, epochs=10, seed=1))
    w1, _ = train_vcrf(train, bank, VcrfConfig(lam=0.5, beta=0.0, epochs=10, seed=1))
    assert w0.nnz >= w1.nnz


def test_full_batch_small_step_monotone():
    bank = _toy_bank()
    cfg = VcrfConfig(full_batch=True, eta0=0.05, decay=1e9, epochs=40, tol=0.0, lam=0.01, beta=0.001)
    _, log = train_vcrf(TOY, bank, cfg)
    assert np.all(np.diff(log.objectives) <= 1e-9)


def test_minibatch_threads_match_serial():
    bank = _toy_bank()
    a, _ = train_vcrf(TOY, bank, VcrfConfig(epochs=4, batch_size=2, n_jobs=1, lam=0.1))
    b, _ = train_vcrf(TOY, bank, VcrfConfig(epochs=4, batch_size=2, n_jobs=3, lam=0.1))
    assert np.array_equal(a.values, b.values)


def test_seed_determinism():
    bank = _toy_bank()
    a, la = train_vcrf(TOY, bank, VcrfConfig(epochs=3, seed=4, lam=0.1))
    b, lb = train_vcrf(TOY, bank, VcrfConfig(epochs=3, seed=4, lam=0.1))
    assert np.array_equal(a.values, b.values) and la.objectives == lb.objectives


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises():
    bank = _toy_bank()
    with pytest.raises(TrainingError):
        train_vcrf(TOY, bank, VcrfConfig(eta0=1e308, epochs=3))


def test_config_validation():
    with pytest.raises(ValueError):
        VcrfConfig(lam=-1)
    with pytest.raises(ValueError):
        VcrfConfig(epochs=0)
    with pytest.raises(ValueError):
        train_vcrf([], _toy_bank(), VcrfConfig())
    with pytest.raises(ValueError):
        VcrfConfig(markov_order=1).order(_toy_bank())


def test_soft_threshold_shrinks():
    x = np.array([-3.0, -0.5, 0.0, 0.2, 4.0])
    y = soft_threshold(x, 1.0)
    assert np.all(np.abs(y) <= np.abs(x))
    assert list(y) == [-2.0, 0.0, 0.0, 0.0, 3.0]


def test_weight_vector_blocks():
    w = WeightVector([1.0, -2.0, 0.0, 3.0], [0, 0, 1, 1])
    assert list(w.block_norms()) == [3.0, 3.0]
    assert w.l1() == 6.0 and w.nnz == 3
    assert list(w.nnz_per_family()) == [2, 1]


def test_prox_gd_solver_monotone_and_sparse():
    bank = _toy_bank()
    cfg = VcrfConfig(solver="prox-gd", epochs=25, beta=0.01, tol=0.0)
    w, log = train_vcrf(TOY, bank, cfg)
    assert np.all(np.diff(log.objectives) <= 1e-12)
    assert all(predict(w, s.tokens, bank, cfg) == list(s.labels) for s in TOY)
    with pytest.raises(ValueError):
        VcrfConfig(solver="newton")
