import math

import numpy as np
import pytest
from hypothesis import given, settings

from specproj.exceptions import (
    EmptySpectrumError,
    GapUndefinedError,
    InvalidClusterError,
    InvalidSpikeError,
    NegativeEigenvalueError,
    SpikeIndexOutOfRangeError,
    ZeroOperatorError,
)
from specproj.linalg import eigvalsh, make_symmetric, op_norm
from specproj.spectral import SpikedModel, build_spiked, effective_rank, spectral_structure

from .conftest import random_multicluster, seeds


def test_diag211_structure(diag211):
    ss = spectral_structure(diag211)
    np.testing.assert_allclose(ss.distinct_eigenvalues, [2, 1])
    assert ss.multiplicities == (1, 2)
    assert ss.guarded_gaps == (1.0, 1.0)
    np.testing.assert_allclose(ss.projector(1).entries, np.diag([1, 0, 0]), atol=1e-15)
    np.testing.assert_allclose(ss.projector(2).entries, np.diag([0, 1, 1]), atol=1e-15)


def test_identity_single_cluster_without_gap():
    ss = spectral_structure(np.eye(5))
    assert ss.n_clusters == 1
    assert ss.multiplicities == (5,)
    np.testing.assert_allclose(ss.projector(1).entries, np.eye(5), atol=1e-14)
    with pytest.raises(GapUndefinedError):
        ss.guarded_gap(1)


def test_spiked_p4_structure():
    sigma = build_spiked(SpikedModel(4, [2.0], 0.1))
    ss = spectral_structure(sigma)
    np.testing.assert_allclose(ss.distinct_eigenvalues, [2.1, 0.1])
    assert ss.multiplicities == (1, 3)
    assert ss.guarded_gap(1) == pytest.approx(2.0)


def test_rank_deficient_last_gap_is_distance_to_zero():
    ss = spectral_structure(np.diag([3.0, 1.0, 0.0]))
    assert ss.rank == 2
    assert ss.guarded_gap(2) == pytest.approx(1.0)
    ss = spectral_structure(np.diag([3.0, 2.5, 0.0]))
    assert ss.guarded_gap(2) == pytest.approx(0.5)


def test_cluster_index_is_one_based():
    ss = spectral_structure(np.diag([2.0, 1.0]))
    with pytest.raises(InvalidClusterError):
        ss.projector(0)
    with pytest.raises(InvalidClusterError):
        ss.projector(3)


def test_errors_on_bad_covariances():
    with pytest.raises(NegativeEigenvalueError):
        spectral_structure(np.diag([1.0, -0.5]))
    with pytest.raises(EmptySpectrumError):
        spectral_structure(np.zeros((3, 3)))


def test_near_equal_eigenvalues_cluster_together():
    ss = spectral_structure(np.diag([2.0, 1.0 + 1e-12, 1.0]))
    assert ss.multiplicities == (1, 2)
    ss = spectral_structure(np.diag([2.0, 1.0 + 1e-6, 1.0]))
    assert ss.multiplicities == (1, 1, 1)


@settings(max_examples=50, deadline=None)
@given(seed=seeds)
def test_projector_invariants(seed):
    rng = np.random.default_rng(seed)
    sigma, mus, mults = random_multicluster(rng)
    ss = spectral_structure(sigma)
    np.testing.assert_allclose(ss.distinct_eigenvalues, mus, rtol=1e-10)
    assert ss.multiplicities == tuple(int(m) for m in mults)
    total = np.zeros_like(sigma.entries)
    recon = np.zeros_like(sigma.entries)
    for r in range(1, ss.n_clusters + 1):
        p = ss.projector(r).entries
        np.testing.assert_allclose(p @ p, p, atol=1e-12)
        np.testing.assert_allclose(p, p.T, atol=0)
        assert np.trace(p) == pytest.approx(ss.multiplicity(r), abs=1e-10)
        for s in range(r + 1, ss.n_clusters + 1):
            np.testing.assert_allclose(p @ ss.projector(s).entries, 0, atol=1e-12)
        total += p
        recon += ss.mu(r) * p
    np.testing.assert_allclose(total, np.eye(sigma.dim), atol=1e-12)
    np.testing.assert_allclose(recon, sigma.entries, atol=1e-10)
    # guarded gaps are the min of adjacent gaps
    g = np.diff(-ss.distinct_eigenvalues)
    assert ss.guarded_gap(1) == pytest.approx(g[0])
    for r in range(2, ss.n_clusters):
        assert ss.guarded_gap(r) == pytest.approx(min(g[r - 2], g[r - 1]))


def test_effective_rank_examples(diag211):
    assert effective_rank(np.eye(5)) == pytest.approx(5.0)
    assert effective_rank(diag211) == pytest.approx(2.0)
    sigma = build_spiked(SpikedModel(1000, [2.0], 0.1))
    assert effective_rank(sigma) == pytest.approx(102 / 2.1, rel=1e-12)
    assert 102 / 2.1 == pytest.approx(48.5714, abs=1e-4)
    with pytest.raises(ZeroOperatorError):
        effective_rank(np.zeros((2, 2)))


@settings(max_examples=40, deadline=None)
@given(seed=seeds)
def test_effective_rank_between_one_and_rank(seed):
    rng = np.random.default_rng(seed)
    sigma, _, mults = random_multicluster(rng)
    r = effective_rank(sigma)
    assert 1 - 1e-12 <= r <= sigma.dim + 1e-12
    # scale invariant
    assert effective_rank(3.7 * sigma) == pytest.approx(r, rel=1e-12)


def test_build_spiked_axis_aligned():
    sigma = build_spiked(SpikedModel(3, [2.0], 0.1))
    np.testing.assert_allclose(sigma.entries, np.diag([2.1, 0.1, 0.1]))
    assert build_spiked(SpikedModel(3, [2.0], 0.1), "projector") == sigma


def test_build_spiked_rotated_direction():
    theta = np.ones(3) / math.sqrt(3)
    sigma = build_spiked(SpikedModel(3, [2.0], 0.1, theta))
    np.testing.assert_allclose(sigma.entries, 2 * np.outer(theta, theta) + 0.1 * np.eye(3), atol=1e-15)
    assert op_norm(sigma) == pytest.approx(2.1)
    np.testing.assert_allclose(eigvalsh(sigma), [2.1, 0.1, 0.1], atol=1e-14)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(p=5, spike_variances=[1.0, 1.0], noise_variance=0.1),
        dict(p=5, spike_variances=[1.0, 2.0], noise_variance=0.1),
        dict(p=5, spike_variances=[-1.0], noise_variance=0.1),
        dict(p=5, spike_variances=[1.0], noise_variance=0.0),
        dict(p=1, spike_variances=[2.0, 1.0], noise_variance=0.1),
        dict(p=3, spike_variances=[1.0], noise_variance=0.1, spike_directions=[1.0, 1.0, 0.0]),
    ],
)
def test_invalid_spiked_models(kwargs):
    with pytest.raises(InvalidSpikeError):
        SpikedModel(**kwargs)


def test_build_requires_noise_directions():
    with pytest.raises(InvalidSpikeError):
        build_spiked(SpikedModel(2, [2.0, 1.0], 0.1))


def test_spike_index_range():
    model = SpikedModel(4, [2.0, 1.0], 0.1)
    assert model.spike(2) == 1.0
    with pytest.raises(SpikeIndexOutOfRangeError):
        model.spike(3)
