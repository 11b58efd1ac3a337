import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seedgnn.graphs import Graph, SeedSet
from seedgnn.pairspace import (PairSpaceTooLarge, check_pair_budget, count_witnesses_oracle,
                               encode_seeds, kron_propagate, propagate, unvec, vec)


def er(n, p, rng):
    a = np.triu(rng.random((n, n)) < p, 1)
    return Graph.from_dense(a | a.T)


def random_seeds(n1, n2, k, rng):
    k = min(k, n1, n2)
    return SeedSet(np.column_stack([rng.choice(n1, k, replace=False), rng.choice(n2, k, replace=False)]))


def test_encode_empty_seeds():
    assert not encode_seeds(SeedSet([]), 3, 4).any()


def test_encode_single_seed():
    s = encode_seeds(SeedSet([[0, 0]]), 2, 2)
    assert s.shape == (2, 2, 1)
    assert s[0, 0, 0] == 1 and s.sum() == 1


def test_vec_row_convention():
    s = encode_seeds(SeedSet([[1, 2]]), 3, 4)
    assert np.flatnonzero(vec(s)[:, 0]).tolist() == [6]


def test_vec_small_example():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None]
    assert vec(x)[:, 0].tolist() == [1.0, 2.0, 3.0, 4.0]


def test_vec_round_trip():
    x = np.random.default_rng(0).normal(size=(3, 5, 2))
    assert np.array_equal(unvec(vec(x), 3, 5), x)


def test_unvec_shape_error():
    with pytest.raises(ValueError):
        unvec(np.zeros((7, 1)), 2, 3)


def test_encode_out_of_range():
    with pytest.raises(ValueError):
        encode_seeds(SeedSet([[0, 5]]), 2, 2)


def test_propagate_zero():
    g = Graph.from_edges(3, [(0, 1), (1, 2)])
    assert not propagate(g, np.zeros((3, 3, 2)), g).any()


def test_propagate_single_edge_witness():
    g = Graph.from_edges(2, [(0, 1)])
    out = propagate(g, encode_seeds(SeedSet([[0, 0]]), 2, 2), g)
    assert out[:, :, 0].tolist() == [[0.0, 0.0], [0.0, 1.0]]


def test_propagate_dimension_mismatch():
    g = Graph.from_edges(3, [(0, 1)])
    with pytest.raises(ValueError):
        propagate(g, np.zeros((2, 3, 1)), g)


@pytest.mark.parametrize("p", [0.5, 0.02])
def test_propagate_matches_kronecker_oracle(p):
    # integer features keep every sum exact, so equality is bitwise
    rng = np.random.default_rng(1)
    for _ in range(20):
        n1, n2 = rng.integers(1, 9, size=2)
        g1, g2 = er(n1, p, rng), er(n2, p, rng)
        f = rng.integers(-5, 6, size=(n1, n2, 3)).astype(float)
        assert np.array_equal(propagate(g1, f, g2), kron_propagate(g1, f, g2))


def test_propagate_random_real_features_close_to_oracle():
    rng = np.random.default_rng(2)
    g1, g2 = er(8, 0.5, rng), er(8, 0.5, rng)
    f = rng.normal(size=(8, 8, 2))
    np.testing.assert_allclose(propagate(g1, f, g2), kron_propagate(g1, f, g2), rtol=0, atol=1e-12)


def test_witness_single_edge_example():
    g = Graph.from_edges(2, [(0, 1)])
    seeds = SeedSet([[0, 0]])
    assert np.array_equal(count_witnesses_oracle(g, g, seeds, 1), propagate(g, encode_seeds(seeds, 2, 2), g))


def test_witness_oracle_no_seeds():
    g = er(6, 0.5, np.random.default_rng(0))
    assert not count_witnesses_oracle(g, g, SeedSet([]), 2).any()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_witness_identity(seed):
    rng = np.random.default_rng(seed)
    n1, n2 = rng.integers(1, 13, size=2)
    g1, g2 = er(n1, 0.4, rng), er(n2, 0.4, rng)
    seeds = random_seeds(n1, n2, 3, rng)
    assert np.array_equal(propagate(g1, encode_seeds(seeds, n1, n2), g2),
                          count_witnesses_oracle(g1, g2, seeds, 1))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_propagate_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    g1, g2 = er(7, 0.4, rng), er(9, 0.4, rng)
    x, y = rng.normal(size=(2, 7, 9, 2))
    lhs = propagate(g1, a * x + b * y, g2)
    rhs = a * propagate(g1, x, g2) + b * propagate(g1, y, g2)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-11)


def test_propagate_is_self_adjoint():
    rng = np.random.default_rng(3)
    g1, g2 = er(6, 0.5, rng), er(7, 0.5, rng)
    x, y = rng.normal(size=(2, 6, 7, 1))
    assert np.isclose(np.sum(propagate(g1, x, g2) * y), np.sum(x * propagate(g1, y, g2)))


def test_pair_budget(monkeypatch):
    monkeypatch.setenv("SEEDGNN_MAX_PAIR_ENTRIES", "100")
    check_pair_budget(10, 10, 1)
    with pytest.raises(PairSpaceTooLarge):
        check_pair_budget(10, 10, 2)
    with pytest.raises(MemoryError):
        encode_seeds(SeedSet([]), 11, 10)
