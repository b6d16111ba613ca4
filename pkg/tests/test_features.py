import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from votedcrf.core import LabelAlphabet, LabeledSequence, window_at
from votedcrf.features import (
    DEFAULT_TEMPLATES,
    FeatureBank,
    FeatureTemplate,
    SparseVec,
    extract_position,
    family_penalty,
    family_penalty_columns,
    family_penalty_vector,
    global_features,
    parse_templates,
)

POS = LabelAlphabet(["DET", "NN", "VBD", "RB", "JJ"])
SENT = ("The", "cat", "was", "surprisingly", "agile")
TAGS = POS.encode(["DET", "NN", "VBD", "RB", "JJ"])


def _bank(templates, seqs=None, alphabet=POS):
    seqs = seqs or [LabeledSequence(SENT, TAGS)]
    return FeatureBank.from_corpus(templates, seqs, alphabet)


def _describe(bank, sv):
    pats = {col: pat for pat, col, _ in bank.patterns()}
    return [pats[c].split("\x1f") for c in sv.cols]


def test_pos_example_fires_trigram_tag_bigram_and_suffix():
    bank = _bank([FeatureTemplate(3, 2, 2)])
    s = 4  # 'surprisingly'
    z = window_at(TAGS, s, 2)
    assert POS.decode(z) == ["VBD", "RB"]
    v = extract_position(SENT, z, s, bank)
    assert np.all(v.vals == 1.0)
    fields = _describe(bank, v)
    vbd_rb = [str(POS.index("VBD")), str(POS.index("RB"))]
    # sub-template with one word left and one right, suffix of length two
    hit = [f for f in fields if f[1:4] == ["was", "surprisingly", "agile"] and f[4] == "ly"]
    assert len(hit) == 1 and hit[0][-2:] == vbd_rb
    assert all(f[-2:] == vbd_rb for f in fields)


def test_empty_template_list_gives_empty_vector():
    bank = _bank([])
    assert bank.dimension == 0
    assert len(extract_position(SENT, (1,), 2, bank)) == 0


def test_extraction_is_deterministic_and_binary():
    bank = _bank(DEFAULT_TEMPLATES)
    for s in range(1, 6):
        z = window_at(TAGS, s, bank.markov_order)
        a = extract_position(SENT, z, s, bank)
        assert a == extract_position(SENT, z, s, bank)
        assert np.all(a.vals == 1.0)


def test_window_longer_than_order_rejected():
    bank = _bank([FeatureTemplate(0, 1, 0)])
    with pytest.raises(ValueError):
        extract_position(SENT, (0, 1), 2, bank)


def test_frozen_drops_unseen_grow_adds():
    bank = FeatureBank([FeatureTemplate(1, 1, 0)], POS)
    v = extract_position(("dog",), (0,), 1, bank, mode="grow")
    assert len(v) == 2 and bank.dimension == 2
    bank.freeze()
    # the split looking only at the next word (</s>) still fires; the one on "dog" does not
    v = extract_position(("cow",), (0,), 1, bank)
    assert len(v) == 1 and _describe(bank, v)[0][1] == "</s>"
    with pytest.raises(RuntimeError):
        extract_position(("cow",), (0,), 1, bank, mode="grow")


def test_affix_longer_than_token_does_not_fire():
    bank = _bank([FeatureTemplate(0, 1, 4)])
    assert len(extract_position(("a",), (0,), 1, bank)) == 0


def test_global_single_position_and_accumulation():
    bank = _bank([FeatureTemplate(0, 1, 0)], [LabeledSequence(("a", "b"), (0, 0))])
    g1 = global_features(("a",), (0,), bank)
    assert g1 == extract_position(("a",), (0,), 1, bank)
    g = global_features(("a", "b"), (0, 0), bank)
    assert list(g.vals) == [2.0]


def test_global_length_mismatch():
    bank = _bank([FeatureTemplate(0, 1, 0)])
    with pytest.raises(ValueError):
        global_features(("a", "b"), (0,), bank)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abcd"), st.integers(0, 2)), min_size=1, max_size=7))
def test_global_equals_sum_of_positions(pairs):
    al = LabelAlphabet(["X", "Y", "Z"])
    toks = tuple(t for t, _ in pairs)
    labs = tuple(y for _, y in pairs)
    bank = FeatureBank.from_corpus(DEFAULT_TEMPLATES[:6], [LabeledSequence(toks, labs)], al)
    p = bank.markov_order
    dense = np.zeros(bank.dimension)
    for s in range(1, len(toks) + 1):
        dense += extract_position(toks, window_at(labs, s, p), s, bank).to_dense(bank.dimension)
    g = global_features(toks, labs, bank)
    assert np.array_equal(g.to_dense(bank.dimension), dense)
    assert len(g) <= len(toks) * sum(len(t.splits()) for t in bank.templates)


def test_penalty_examples():
    assert FeatureTemplate(1, 0, 0) and family_penalty(FeatureTemplate(1, 0, 0), 2, math.e, 1, 1) \
        == pytest.approx(1.0, rel=1e-15)
    want = math.sqrt(2 * (2 * math.log(10000) + math.log(16)) / 121443)
    assert family_penalty(FeatureTemplate(2, 1, 0), 121443, 10000, 16, 30) == pytest.approx(want, rel=1e-15)


def test_zero_order_template_rejected_and_zero_penalty_for_singletons():
    with pytest.raises(ValueError):
        FeatureTemplate(0, 0, 0)
    # log 1 = 0 makes the penalty vanish when every cardinality is one
    assert family_penalty(FeatureTemplate(1, 1, 1), 5, 1, 1, 1) == 0.0


@given(st.integers(0, 3), st.integers(0, 3), st.integers(0, 3), st.integers(1, 1000))
def test_penalty_monotone(k1, k2, k3, m):
    if k1 + k2 + k3 == 0:
        return
    base = family_penalty(FeatureTemplate(k1, k2, k3), m, 500, 12, 40)
    assert family_penalty(FeatureTemplate(k1 + 1, k2, k3), m, 500, 12, 40) >= base
    assert family_penalty(FeatureTemplate(k1, k2 + 1, k3), m, 500, 12, 40) >= base
    assert family_penalty(FeatureTemplate(k1, k2, k3 + 1), m, 500, 12, 40) >= base
    assert family_penalty(FeatureTemplate(k1, k2, k3), m + 1, 500, 12, 40) < base


def test_families_sorted_by_complexity():
    bank = _bank(list(reversed(DEFAULT_TEMPLATES)))
    r = family_penalty_vector(bank, 10)
    assert np.all(np.diff(r) >= 0)
    assert len(family_penalty_vector(bank, 10, formula="columns")) == bank.n_families


def test_columns_penalty():
    assert family_penalty_columns(FeatureTemplate(0, 2, 0), 1) == 0.0
    assert family_penalty_columns(FeatureTemplate(0, 2, 0), 100) == pytest.approx(2 * math.sqrt(math.log(100)))


def test_block_partition():
    bank = _bank(DEFAULT_TEMPLATES)
    w = np.random.default_rng(0).normal(size=bank.dimension)
    blocks = np.bincount(bank.family_array(), weights=np.abs(w), minlength=bank.n_families)
    assert blocks.sum() == pytest.approx(np.abs(w).sum(), rel=1e-12)
    assert bank.family_sizes().sum() == bank.dimension


def test_sparsevec_invariants():
    v = SparseVec([3, 1, 3, 5], [1.0, 2.0, -1.0, 4.0])
    assert list(v.cols) == [1, 5] and list(v.vals) == [2.0, 4.0]
    assert (v + v) == v * 2
    assert v.dot(np.arange(6.0)) == 2.0 + 20.0


def test_bank_round_trip():
    bank = _bank(DEFAULT_TEMPLATES)
    again = FeatureBank.loads(bank.dumps())
    assert again.dumps() == bank.dumps()
    assert again.digest() == bank.digest()
    z = window_at(TAGS, 3, bank.markov_order)
    assert extract_position(SENT, z, 3, again) == extract_position(SENT, z, 3, bank)


def test_parse_templates():
    assert parse_templates("1,1,0; 0,2,0") == [FeatureTemplate(1, 1, 0), FeatureTemplate(0, 2, 0)]
