import math

import numpy as np
import pytest

from csvm.core.kernel import GramCache, KernelKind, KernelSpec, cross_kernel, gram, kernel_eval


def test_rbf_value():
    spec = KernelSpec(KernelKind.RBF, gamma=1.0)
    assert kernel_eval(spec, [0, 0], [1, 1]) == pytest.approx(math.exp(-2.0), rel=1e-12)


def test_linear_value():
    spec = KernelSpec(KernelKind.LINEAR)
    assert kernel_eval(spec, [1, 2], [3, 4]) == pytest.approx(11.0)
    assert spec.gamma is None


def test_rbf_requires_positive_gamma():
    with pytest.raises(ValueError):
        KernelSpec(KernelKind.RBF, gamma=0.0)
    with pytest.raises(ValueError):
        KernelSpec(KernelKind.RBF)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        kernel_eval(KernelSpec(KernelKind.LINEAR), [1, 2], [1, 2, 3])


def test_gram_is_symmetric_with_unit_diagonal():
    X = np.random.default_rng(3).normal(size=(15, 4))
    G = gram(KernelSpec(KernelKind.RBF, gamma=0.3), X)
    assert G.size == 15
    np.testing.assert_array_equal(G.entries, G.entries.T)
    np.testing.assert_allclose(np.diag(G.entries), 1.0)
    assert np.linalg.eigvalsh(G.entries).min() > -1e-10


def test_gram_is_read_only():
    G = gram(KernelSpec(KernelKind.LINEAR), np.eye(3))
    with pytest.raises(ValueError):
        G.entries[0, 0] = 5.0


def test_single_point_rbf_gram():
    G = gram(KernelSpec(KernelKind.RBF, gamma=2.0), [[1.0, 2.0]])
    np.testing.assert_array_equal(G.entries, [[1.0]])


def test_gram_matches_pairwise_evaluation():
    X = np.random.default_rng(5).normal(size=(6, 3))
    spec = KernelSpec(KernelKind.RBF, gamma=0.7)
    G = gram(spec, X).entries
    for i in range(6):
        for j in range(6):
            assert G[i, j] == pytest.approx(kernel_eval(spec, X[i], X[j]), rel=1e-12)
    np.testing.assert_allclose(cross_kernel(spec, X, X), G, rtol=1e-12)


def test_block_and_cache():
    X = np.arange(12, dtype=float).reshape(4, 3)
    spec = KernelSpec(KernelKind.LINEAR)
    cache = GramCache(X)
    G = cache.get(spec)
    assert cache.get(spec) is G
    np.testing.assert_allclose(G.block([0, 2], [1, 3]), X[[0, 2]] @ X[[1, 3]].T)


@pytest.mark.parametrize("seed", range(20))
def test_gram_is_positive_semidefinite(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(int(rng.integers(1, 51)), int(rng.integers(1, 6))))
    rbf = KernelSpec(KernelKind.RBF, gamma=2.0 ** int(rng.integers(-5, 4)))
    for spec in (KernelSpec(KernelKind.LINEAR), rbf):
        assert np.linalg.eigvalsh(gram(spec, X).entries).min() >= -1e-8


def test_cache_slices_subsets():
    X = np.random.default_rng(3).normal(size=(9, 2))
    spec = KernelSpec(KernelKind.RBF, gamma=0.5)
    cache = GramCache(X)
    assert cache.specs == ()
    rows = np.array([7, 1, 4])
    np.testing.assert_allclose(cache.block(spec, rows), gram(spec, X[rows]).entries, rtol=1e-12, atol=1e-15)
    np.testing.assert_array_equal(cache.block(spec), gram(spec, X).entries)
    assert cache.specs == (spec,)
