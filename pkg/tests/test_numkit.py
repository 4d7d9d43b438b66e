import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lltk.numkit import knn, pairwise_distances, seeded_rng


def brute_euclidean(X):
    n = len(X)
    D = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            D[i][j] = math.sqrt(sum((a - b) ** 2 for a, b in zip(X[i], X[j])))
    return np.array(D)


def test_identical_rows_have_zero_distance():
    X = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [0.5, -1.0, 2.0]])
    for metric in ("euclidean", "cosine"):
        assert pairwise_distances(X, metric)[0, 1] == 0.0


def test_orthogonal_cosine_is_one():
    D = pairwise_distances([[1.0, 0.0], [0.0, 1.0]], "cosine")
    assert D[0, 1] == pytest.approx(1.0, abs=1e-15)


def test_opposite_cosine_is_two():
    D = pairwise_distances([[1.0, 0.0], [-3.0, 0.0]], "cosine")
    assert D[0, 1] == pytest.approx(2.0, abs=1e-15)


def test_euclidean_matches_double_loop():
    X = np.random.default_rng(3).normal(size=(10, 5))
    np.testing.assert_allclose(pairwise_distances(X), brute_euclidean(X.tolist()), rtol=0, atol=1e-12)


def test_cosine_zero_row_is_named():
    with pytest.raises(ValueError, match="row 1"):
        pairwise_distances([[1.0, 1.0], [0.0, 0.0], [2.0, 1.0]], "cosine")


def test_unknown_metric():
    with pytest.raises(ValueError):
        pairwise_distances(np.eye(3), "manhattan")


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (6, 3), elements=st.floats(-10, 10)), st.sampled_from(["euclidean", "cosine"]))
def test_symmetric_zero_diagonal(X, metric):
    if metric == "cosine" and np.any(np.linalg.norm(X, axis=1) == 0):
        return
    D = pairwise_distances(X, metric)
    assert np.array_equal(D, D.T)
    assert np.all(np.diag(D) == 0.0)
    assert np.all(D >= 0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (5, 4), elements=st.floats(0.1, 10)), st.floats(1e-3, 1e3))
def test_cosine_scale_invariant(X, c):
    np.testing.assert_allclose(pairwise_distances(c * X, "cosine"), pairwise_distances(X, "cosine"),
                               atol=1e-12)


def test_knn_collinear():
    D = pairwise_distances(np.array([[0.0], [1.0], [3.0]]))
    nb = knn(D, 1)
    assert nb.indices[:, 0].tolist() == [1, 0, 1]
    assert nb.distances[:, 0].tolist() == [1.0, 1.0, 2.0]


def test_knn_duplicates_first():
    X = np.array([[0.0, 0.0], [5.0, 5.0], [0.0, 0.0], [1.0, 0.0]])
    nb = knn(pairwise_distances(X), 2)
    assert nb.indices[0].tolist() == [2, 3]
    assert nb.distances[0, 0] == 0.0


def test_knn_ties_lower_index():
    X = np.array([[0.0], [1.0], [-1.0], [2.0]])
    nb = knn(pairwise_distances(X), 2)
    assert nb.indices[0].tolist() == [1, 2]


def test_knn_matches_full_sort():
    X = np.random.default_rng(7).normal(size=(20, 3))
    D = pairwise_distances(X)
    nb = knn(D, 5)
    for i in range(20):
        others = sorted((D[i, j], j) for j in range(20) if j != i)[:5]
        assert nb.indices[i].tolist() == [j for _, j in others]
        assert i not in nb.indices[i]
        assert np.all(np.diff(nb.distances[i]) >= 0)


def test_knn_rejects_large_k():
    with pytest.raises(ValueError):
        knn(np.zeros((3, 3)), 3)


def test_knn_permutation_relabels():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(15, 2))
    perm = rng.permutation(15)
    a = knn(pairwise_distances(X), 4)
    b = knn(pairwise_distances(X[perm]), 4)
    # b's row r is point perm[r]; map its neighbours back to original indices
    for r in range(15):
        assert perm[b.indices[r]].tolist() == a.indices[perm[r]].tolist()


def test_rng_reproducible_and_streams_differ():
    a = seeded_rng(5, 0).standard_normal(8)
    b = seeded_rng(5, 0).standard_normal(8)
    c = seeded_rng(5, 1).standard_normal(8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_rng_frozen_values():
    # pins the generator so a platform or numpy change is noticed
    assert seeded_rng(0, 0).integers(0, 2**32, size=3).tolist() == [149215387, 49592932, 2628306354]
    assert seeded_rng(0, 1).integers(0, 2**32, size=3).tolist() == [4188131702, 3493329091, 1277232997]
