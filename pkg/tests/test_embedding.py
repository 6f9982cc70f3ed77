import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ot_lp, softmax_by_hand
from trajattr.embedding import (
    DataEmbedding,
    data_embedding,
    normalize_distances,
    read_data_embeddings_csv,
    total_variation,
    wasserstein_simplex,
    write_data_embeddings_csv,
)


def test_zero_sum_gives_uniform():
    e = data_embedding([[1.0, -2.0, 0.5], [-1.0, 2.0, -0.5]], M=3.0, T_soft=0.7)
    np.testing.assert_allclose(e.probs, [1 / 3] * 3, atol=1e-15)


def test_symmetric_pair():
    e = data_embedding([[1.0, 0.0], [0.0, 1.0]], M=2.0, T_soft=1.0)
    np.testing.assert_allclose(e.probs, [0.5, 0.5], atol=1e-15)


def test_single_embedding_matches_hand_softmax():
    expected = softmax_by_hand([2.0, 0.0])
    assert expected[0] == pytest.approx(math.e**2 / (math.e**2 + 1), abs=1e-15)
    e = data_embedding([[2.0, 0.0]], M=1.0, T_soft=1.0)
    np.testing.assert_allclose(e.probs, expected, atol=1e-12)
    assert round(e.probs[0], 4) == 0.8808 and round(e.probs[1], 4) == 0.1192


@pytest.mark.parametrize("M, T", [(0, 1), (1, 0), (-1, 1)])
def test_bad_constants(M, T):
    with pytest.raises(ValueError):
        data_embedding([[1.0]], M, T)


def test_overflow_safe():
    e = data_embedding([[1e6, 0.0, -1e6]], M=1.0, T_soft=1e-3)
    assert np.all(np.isfinite(e.probs)) and e.probs[0] == 1.0


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 12), d=st.integers(1, 10), seed=st.integers(0, 10_000))
def test_permutation_invariance_exact(n, d, seed):
    rng = np.random.default_rng(seed)
    vecs = list(rng.normal(size=(n, d)) * 3)
    a = data_embedding(vecs, M=n, T_soft=0.5)
    b = data_embedding([vecs[i] for i in rng.permutation(n)], M=n, T_soft=0.5)
    assert np.array_equal(a.probs, b.probs)
    assert abs(a.probs.sum() - 1) <= 1e-9 and np.all(a.probs > 0)


def test_high_temperature_tends_to_uniform():
    rng = np.random.default_rng(0)
    e = data_embedding(list(rng.normal(size=(10, 16)) * 5), M=1.0, T_soft=1e6)
    assert np.max(np.abs(e.probs - 1 / 16)) < 1e-4


def test_wasserstein_identity():
    p = [0.2, 0.3, 0.5]
    assert wasserstein_simplex(p, p) == 0.0


def test_wasserstein_two_point():
    assert wasserstein_simplex([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0, abs=1e-9)
    assert ot_lp([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0, abs=1e-9)


def test_wasserstein_three_point_against_lp():
    p, q = [0.5, 0.5, 0.0], [0.0, 0.5, 0.5]
    assert ot_lp(p, q) == pytest.approx(1.0, abs=1e-9)
    assert wasserstein_simplex(p, q) == pytest.approx(1.0, abs=1e-9)


def test_wasserstein_dimension_mismatch():
    with pytest.raises(ValueError):
        wasserstein_simplex([1.0], [0.5, 0.5])


def _random_simplex(rng, d):
    x = rng.random(d)
    return x / x.sum()


def test_wasserstein_matches_lp_on_random_pairs():
    rng = np.random.default_rng(3)
    for _ in range(20):
        p, q = _random_simplex(rng, 6), _random_simplex(rng, 6)
        assert wasserstein_simplex(p, q) == pytest.approx(ot_lp(p, q), abs=1e-7)


def test_metric_axioms_on_random_triples():
    rng = np.random.default_rng(7)
    for _ in range(100):
        d = int(rng.integers(2, 12))
        p, q, r = (_random_simplex(rng, d) for _ in range(3))
        assert wasserstein_simplex(p, q) == wasserstein_simplex(q, p)
        assert wasserstein_simplex(p, q) >= 0
        assert wasserstein_simplex(p, r) <= wasserstein_simplex(p, q) + wasserstein_simplex(q, r) + 1e-9


def test_total_variation():
    assert total_variation([1.0, 0.0], [0.0, 1.0]) == 1.0
    assert total_variation([0.5, 0.5], [0.5, 0.5]) == 0.0


def test_normalize_by_max():
    out, flag = normalize_distances([(0, 2.0), (1, 1.0), (2, 0.5)])
    assert out == [(0, 1.0), (1, 0.5), (2, 0.25)] and not flag
    assert normalize_distances([(4, 3.7)])[0] == [(4, 1.0)]


def test_normalize_all_zero_warns():
    with pytest.warns(RuntimeWarning):
        out, flag = normalize_distances([(0, 0.0), (1, 0.0)])
    assert flag and out == [(0, 0.0), (1, 0.0)]


def test_normalize_exactly_one_max():
    rng = np.random.default_rng(2)
    out, _ = normalize_distances([(j, float(v)) for j, v in enumerate(rng.random(10))])
    vals = [v for _, v in out]
    assert vals.count(1.0) == 1 and all(0 <= v <= 1 for v in vals)


def test_simplex_invariant_enforced():
    with pytest.raises(ValueError):
        DataEmbedding(np.array([0.6, 0.6]))


def test_csv_round_trip(tmp_path):
    embs = [data_embedding([[0.1, 0.2, 0.3]], 1.0), data_embedding([[1.0, 0.0, 0.0]], 2.0, source="complement:0")]
    write_data_embeddings_csv(embs, tmp_path / "e.csv")
    back = read_data_embeddings_csv(tmp_path / "e.csv")
    assert [b.source for b in back] == ["original", "complement:0"]
    assert all(np.array_equal(a.probs, b.probs) for a, b in zip(embs, back))
