"""scikit-learn style front ends for the two trainers.

``X`` is a list of token sequences and ``y`` a list of label-string
sequences of the same shape.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import structboost, vcrf
from .core import LabelAlphabet, LabeledSequence
from .evaluation import tag_errors
from .features import DEFAULT_TEMPLATES, FeatureBank, FeatureTemplate, parse_templates


def check_sequences(X, y=None):
    """Validate sequence inputs; returns (tokens list, labels list or None)."""
    if isinstance(X, str) or not hasattr(X, "__len__"):
        raise TypeError("X must be a list of token sequences")
    X = [tuple(str(t) for t in x) for x in X]
    if not X:
        raise ValueError("X is empty")
    for i, x in enumerate(X):
        if not x:
            raise ValueError(f"sequence {i} is empty")
    if y is None:
        return X, None
    y = [tuple(str(t) for t in s) for s in y]
    if len(y) != len(X):
        raise ValueError(f"{len(X)} token sequences but {len(y)} label sequences")
    for i, (x, s) in enumerate(zip(X, y)):
        if len(x) != len(s):
            raise ValueError(f"sequence {i}: {len(x)} tokens but {len(s)} labels")
    return X, y


def _resolve_templates(templates):
    if templates is None:
        return list(DEFAULT_TEMPLATES)
    if isinstance(templates, str):
        return parse_templates(templates)
    return [t if isinstance(t, FeatureTemplate) else FeatureTemplate(*t) for t in templates]


class _ChainTagger(BaseEstimator):
    _kind = "vcrf"

    def __init__(self, templates=None, lam=0.0, beta=0.0, epochs=50, eta0=None,
                 markov_order=None, loss="hamming", penalty_formula="counting",
                 batch_size=1, n_jobs=1, tol=1e-6, seed=0, clip_norm=None, solver="sgd"):
        self.templates = templates
        self.lam = lam
        self.beta = beta
        self.epochs = epochs
        self.eta0 = eta0
        self.markov_order = markov_order
        self.loss = loss
        self.penalty_formula = penalty_formula
        self.batch_size = batch_size
        self.n_jobs = n_jobs
        self.tol = tol
        self.seed = seed
        self.clip_norm = clip_norm
        self.solver = solver

    def _config(self):
        cls = structboost.StructBoostConfig if self._kind == "structboost" else vcrf.VcrfConfig
        kw = dict(lam=self.lam, beta=self.beta, epochs=self.epochs, markov_order=self.markov_order,
                  loss=self.loss, penalty_formula=self.penalty_formula,
                  batch_size=self.batch_size, n_jobs=self.n_jobs, tol=self.tol, seed=self.seed,
                  solver=self.solver)
        if self.eta0 is not None:
            kw["eta0"] = self.eta0
        if self.clip_norm is not None:
            kw["clip_norm"] = self.clip_norm if self.clip_norm > 0 else None
        return cls(**kw)

    def _train(self, data, bank, cfg):
        return vcrf.train_vcrf(data, bank, cfg)

    def fit(self, X, y):
        X, y = check_sequences(X, y)
        alphabet = LabelAlphabet()
        data = [LabeledSequence(x, tuple(alphabet.add(v) for v in s)) for x, s in zip(X, y)]
        if len(alphabet) < 2:
            raise ValueError("need at least two distinct labels")
        cfg = self._config()
        bank = FeatureBank.from_corpus(_resolve_templates(self.templates), data, alphabet)
        w, log = self._train(data, bank, cfg)
        self.alphabet_ = alphabet
        self.bank_ = bank
        self.config_ = cfg
        self.coef_ = w.values
        self.history_ = log
        self.n_features_ = bank.dimension
        return self

    def _check_fitted(self):
        if not hasattr(self, "coef_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet")

    def predict(self, X):
        self._check_fitted()
        X, _ = check_sequences(X)
        return [self.alphabet_.decode(vcrf.predict(self.coef_, x, self.bank_, self.config_))
                for x in X]

    def score(self, X, y):
        """1 - token error."""
        X, y = check_sequences(X, y)
        return 1.0 - tag_errors([list(s) for s in y], self.predict(X))["token_error"]

    @property
    def nnz_(self) -> int:
        self._check_fitted()
        return int(np.count_nonzero(self.coef_))


class VCRF(_ChainTagger):
    """Chain CRF trained with loss-augmented likelihood and per-family L1 penalties."""

    _kind = "vcrf"


class VStructBoost(_ChainTagger):
    """Chain tagger trained on the exponential loss-weighted surrogate."""

    _kind = "structboost"

    def _train(self, data, bank, cfg):
        return structboost.train_structboost(data, bank, cfg)
