import itertools

import pytest
from hypothesis import given, strategies as st

from votedcrf.core import (
    ChainGraphSpec,
    LabelAlphabet,
    LabeledSequence,
    full_windows,
    substream,
    window_at,
)


def test_window_examples():
    a, b, c = 0, 1, 2
    assert window_at([a, b, c], 3, 2) == (b, c)
    assert window_at([a, b, c], 1, 2) == (a,)
    assert window_at([a], 1, 3) == (a,)


@pytest.mark.parametrize("s", [0, 4, -1])
def test_window_out_of_range(s):
    with pytest.raises(ValueError):
        window_at([0, 1, 2], s, 2)


@given(st.lists(st.integers(0, 3), min_size=1, max_size=8), st.integers(1, 4), st.data())
def test_window_length_is_min_s_p(y, p, data):
    s = data.draw(st.integers(1, len(y)))
    z = window_at(y, s, p)
    assert len(z) == min(s, p)
    assert list(z) == y[s - len(z):s]


@pytest.mark.parametrize("r,p", [(1, 1), (2, 3), (3, 2), (4, 1)])
def test_full_windows_count(r, p):
    wins = list(full_windows(r, p))
    assert len(wins) == len(set(wins)) == r ** p


def test_alphabet_bijection():
    al = LabelAlphabet(["NN", "VB", "DT"])
    assert al.size == 3
    assert [al.index(x) for x in al] == [0, 1, 2]
    assert al.decode(al.encode(["DT", "NN"])) == ["DT", "NN"]
    assert al.add("VB") == 1 and al.add("JJ") == 3
    with pytest.raises(KeyError):
        al.index("XX")
    with pytest.raises(ValueError):
        LabelAlphabet(["A", "A"])


def test_labeled_sequence_checks():
    seq = LabeledSequence(["a", "b"], [0, 1])
    assert seq.tokens == ("a", "b") and len(seq) == 2
    with pytest.raises(ValueError):
        LabeledSequence(["a"], [0, 1])
    with pytest.raises(ValueError):
        LabeledSequence([], [])
    with pytest.raises(ValueError):
        LabeledSequence(["a"], [-1])


def test_chain_graph_spec():
    g = ChainGraphSpec(2, (3, 5))
    assert g.n_factors(1) == 5
    with pytest.raises(ValueError):
        ChainGraphSpec(0)


def test_substreams_independent_and_reproducible():
    a1 = substream(7, "folds").random(4)
    a2 = substream(7, "folds").random(4)
    b = substream(7, "noise").random(4)
    assert (a1 == a2).all()
    assert not (a1 == b).all()
