import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from specproj.exceptions import EmptyBatchError, NotPSDError, ValidationError
from specproj.linalg import make_symmetric
from specproj.sampling import (
    SampleBatch,
    SeedSpec,
    TripleSplit,
    draw_batch,
    draw_covariance,
    gamma_eigenvalues,
    gamma_matrix,
    make_sampler,
)
from specproj.spectral import spectral_structure

from .conftest import random_multicluster, seeds


def test_zero_covariance_draws_zero():
    batch = draw_batch(make_sampler(np.zeros((3, 3)), 1), 10)
    np.testing.assert_array_equal(batch.vectors, 0.0)


def test_identity_sample_covariance_near_identity():
    p, n = 4, 100_000
    x = draw_batch(make_sampler(np.eye(p), 5), n).vectors
    cov = x.T @ x / n
    # standard error of each entry is about 1/sqrt(n) (sqrt(2/n) on the diagonal)
    se = np.where(np.eye(p, dtype=bool), np.sqrt(2 / n), np.sqrt(1 / n))
    assert np.all(np.abs(cov - np.eye(p)) <= 5 * se)


def test_replay_is_deterministic():
    sampler = make_sampler(np.diag([2.0, 1.0]), 99)
    a = draw_batch(sampler, 20, 3, "X").vectors
    b = draw_batch(make_sampler(np.diag([2.0, 1.0]), 99), 20, 3, "X").vectors
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, draw_batch(sampler, 20, 4, "X").vectors)


def test_roles_are_independent():
    sampler = make_sampler(np.eye(3), 1)
    n = 50_000
    x = draw_batch(sampler, n, 0, "X").vectors
    y = draw_batch(sampler, n, 0, "Xtilde").vectors
    cross = x.T @ y / n
    assert np.max(np.abs(cross)) < 5 / np.sqrt(n)


def test_sample_size_must_be_positive():
    sampler = make_sampler(np.eye(2), 0)
    for n in (0, -1, 2.5):
        with pytest.raises(EmptyBatchError):
            draw_batch(sampler, n)


def test_seed_range():
    with pytest.raises(ValidationError):
        SeedSpec(-1)
    SeedSpec(2**64 - 1)


def test_not_psd_rejected():
    with pytest.raises(NotPSDError):
        make_sampler(np.diag([1.0, -1.0]), 0)
    with pytest.raises(NotPSDError):
        make_sampler([[1.0, 2.0], [2.0, 1.0]], 0)


@settings(max_examples=20, deadline=None)
@given(seed=seeds)
def test_dense_sampler_root(seed):
    rng = np.random.default_rng(seed)
    sigma, _, _ = random_multicluster(rng)
    root = make_sampler(sigma, seed).sqrt_sigma.entries
    np.testing.assert_allclose(root @ root, sigma.entries, atol=1e-10)


def test_wishart_route_matches_vector_route_in_law():
    # entrywise two-sample KS between the Bartlett route and explicit vectors
    sigma = make_symmetric([[2.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 0.5]])
    sampler = make_sampler(sigma, 21)
    n, reps = 10, 3000
    w = np.array([draw_covariance(sampler, n, i, "W").entries for i in range(reps)])
    v = []
    for i in range(reps):
        x = draw_batch(sampler, n, i, "V").vectors
        v.append(x.T @ x / n)
    v = np.array(v)
    pvals = [stats.ks_2samp(w[:, i, j], v[:, i, j]).pvalue for i in range(3) for j in range(i, 3)]
    # six tests; Bonferroni at 0.001
    assert min(pvals) > 0.001 / 6
    np.testing.assert_allclose(w.mean(axis=0), sigma.entries, atol=0.05)


def test_covariance_small_n_falls_back_to_vectors():
    sampler = make_sampler(np.eye(5), 3)
    cov = draw_covariance(sampler, 2, 0, "X")
    x = draw_batch(sampler, 2, 0, "X").vectors
    np.testing.assert_allclose(cov.entries, x.T @ x / 2, atol=1e-14)
    assert np.linalg.matrix_rank(cov.entries) <= 2


def test_batch_validation():
    with pytest.raises(EmptyBatchError):
        SampleBatch(np.zeros((0, 3)))
    with pytest.raises(ValidationError):
        SampleBatch(np.zeros(3))
    b = SampleBatch(np.ones((2, 3)))
    assert (b.n, b.p) == (2, 3)
    with pytest.raises(ValueError):
        b.vectors[0, 0] = 2.0


def test_triple_split():
    split = TripleSplit.from_array(np.arange(20.0).reshape(10, 2))
    assert split.x.n == split.x_tilde.n == split.x_bar.n == 3
    np.testing.assert_array_equal(split.x_tilde.vectors[0], [6.0, 7.0])
    with pytest.raises(EmptyBatchError):
        TripleSplit.from_array(np.ones((2, 2)))


def test_gamma_single_aligned_sample(diag211):
    ss = spectral_structure(diag211)
    batch = SampleBatch([[3.0, 1.0, 0.0]])
    g = gamma_matrix(batch, ss, 1).entries
    np.testing.assert_allclose(g, np.diag([9.0, 0, 0]))
    np.testing.assert_allclose(gamma_eigenvalues(batch, ss, 1), [9.0])
    np.testing.assert_allclose(gamma_eigenvalues(batch, ss, 2), [1.0, 0.0], atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(seed=seeds, n=st.integers(1, 20))
def test_gamma_eigenvalues_match_matrix(seed, n):
    rng = np.random.default_rng(seed)
    sigma, _, _ = random_multicluster(rng)
    ss = spectral_structure(sigma)
    batch = draw_batch(make_sampler(sigma, seed), n)
    for r in range(1, ss.n_clusters + 1):
        full = np.sort(np.linalg.eigvalsh(gamma_matrix(batch, ss, r).entries))[::-1]
        np.testing.assert_allclose(full[: ss.multiplicity(r)], gamma_eigenvalues(batch, ss, r), atol=1e-10)
        np.testing.assert_allclose(full[ss.multiplicity(r):], 0, atol=1e-10)
