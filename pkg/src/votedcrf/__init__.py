"""Voted conditional random fields and structured boosting on chain automata."""

from .core import EPS, LabelAlphabet, LabeledSequence, substream
from .features import DEFAULT_TEMPLATES, FeatureBank, FeatureTemplate, SparseVec
from .losses import HammingLoss, MarkovianLoss, make_loss
from .optim import TrainingError, WeightVector
from .structboost import train_structboost
from .vcrf import VcrfConfig, train_vcrf

__version__ = "0.1.0"
