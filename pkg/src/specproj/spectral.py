"""Population spectral structure and spiked covariance models.

Cluster indices ``r`` are 1-based throughout, so ``r = 1`` is the cluster of
the largest distinct eigenvalue.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from .exceptions import (
    EmptySpectrumError,
    GapUndefinedError,
    InvalidClusterError,
    InvalidSpikeError,
    NegativeEigenvalueError,
    SpikeIndexOutOfRangeError,
    ValidationError,
    ZeroOperatorError,
)
from .linalg import SymmetricOperator, as_operator, eigh, op_norm, trace

DEFAULT_CLUSTER_TOL = 1e-8
DEFAULT_RANK_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SpectralStructure:
    """Distinct eigenvalues, clusters and spectral projectors of a covariance.

    Attributes
    ----------
    source : SymmetricOperator
        The covariance the structure was derived from.
    distinct_eigenvalues : ndarray
        Cluster means ``mu_1 > mu_2 > ... > mu_R > 0``.
    clusters : tuple of ndarray
        0-based positions into the non-increasing eigenvalue list.
    multiplicities : tuple of int
    projectors : tuple of SymmetricOperator
    bases : tuple of ndarray
        Orthonormal ``p x m_r`` eigenvector blocks; ``P_r = V_r V_r^T``.
    gaps : tuple of float
        ``g_r = mu_r - mu_{r+1}``. For the last cluster this is the distance
        to the dropped zero eigenvalues when ``Sigma`` is rank deficient and
        ``inf`` (undefined) otherwise.
    guarded_gaps : tuple of float or None
        ``min(g_{r-1}, g_r)`` with the first cluster using ``g_1``; ``None``
        when no finite gap exists.
    """

    source: SymmetricOperator
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    distinct_eigenvalues: np.ndarray
    clusters: tuple
    multiplicities: tuple
    projectors: tuple
    bases: tuple
    gaps: tuple
    guarded_gaps: tuple
    cluster_tolerance: float
    rank_tolerance: float
    op_norm: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_clusters(self) -> int:
        return len(self.distinct_eigenvalues)

    @property
    def dim(self) -> int:
        return self.source.dim

    @property
    def rank(self) -> int:
        return int(sum(self.multiplicities))

    def check_cluster(self, r: int) -> int:
        """Return the 0-based position of cluster ``r`` or raise."""
        if isinstance(r, bool) or not isinstance(r, (int, np.integer)):
            raise InvalidClusterError(f"cluster index must be an int, got {r!r}")
        if not 1 <= r <= self.n_clusters:
            raise InvalidClusterError(f"cluster index {r} outside 1..{self.n_clusters}")
        return int(r) - 1

    def mu(self, r: int) -> float:
        return float(self.distinct_eigenvalues[self.check_cluster(r)])

    def multiplicity(self, r: int) -> int:
        return int(self.multiplicities[self.check_cluster(r)])

    def projector(self, r: int) -> SymmetricOperator:
        return self.projectors[self.check_cluster(r)]

    def basis(self, r: int) -> np.ndarray:
        return self.bases[self.check_cluster(r)]

    def cluster(self, r: int) -> np.ndarray:
        return self.clusters[self.check_cluster(r)]

    def guarded_gap(self, r: int) -> float:
        g = self.guarded_gaps[self.check_cluster(r)]
        if g is None:
            raise GapUndefinedError(f"no spectral gap is defined for cluster {r}")
        return g

    def separation_radius(self, r: int) -> float:
        """``(1/4) min_{s <= r} gbar_s``, the cluster-identifiability radius."""
        gs = [self.guarded_gap(s) for s in range(1, r + 1)]
        return 0.25 * min(gs)

    @property
    def effective_rank(self) -> float:
        return effective_rank(self.source)


def spectral_structure(
    sigma,
    cluster_tolerance: float = DEFAULT_CLUSTER_TOL,
    rank_tolerance: float = DEFAULT_RANK_TOL,
) -> SpectralStructure:
    """Group the spectrum of ``sigma`` into clusters of (numerically) equal eigenvalues.

    Eigenvalues below ``rank_tolerance * ||sigma||`` are dropped. Remaining
    eigenvalues are chained into one cluster while consecutive values differ
    by at most ``cluster_tolerance * ||sigma||``; each cluster's eigenvalue is
    the mean of its members.
    """
    if cluster_tolerance < 0 or rank_tolerance < 0:
        raise ValidationError("tolerances must be non-negative")
    sigma = as_operator(sigma)
    dec = eigh(sigma)
    w, v = dec.eigenvalues, dec.eigenvectors
    norm = float(max(abs(w[0]), abs(w[-1])))
    if norm == 0.0:
        raise EmptySpectrumError("operator is zero")
    if w[-1] < -rank_tolerance * norm:
        raise NegativeEigenvalueError(
            f"eigenvalue {w[-1]:.3e} is negative beyond tolerance; not a covariance"
        )
    keep = np.flatnonzero(w >= rank_tolerance * norm)
    # a strictly positive tolerance is needed to drop exact zeros
    if rank_tolerance == 0:
        keep = np.flatnonzero(w > 0)
    if keep.size == 0:
        raise EmptySpectrumError("all eigenvalues fall below the rank tolerance")
    rank_deficient = keep.size < w.size

    groups: list[list[int]] = [[int(keep[0])]]
    for i in keep[1:]:
        if w[groups[-1][-1]] - w[i] <= cluster_tolerance * norm:
            groups[-1].append(int(i))
        else:
            groups.append([int(i)])

    mus = np.array([float(np.mean(w[g])) for g in groups])
    bases = tuple(v[:, g] for g in groups)
    projectors = tuple(SymmetricOperator._trusted(b @ b.T) for b in bases)
    R = len(groups)
    gaps = [mus[i] - mus[i + 1] for i in range(R - 1)]
    gaps.append(float(mus[-1]) if rank_deficient else math.inf)
    guarded: list[Optional[float]] = []
    for i in range(R):
        g = gaps[0] if i == 0 else min(gaps[i - 1], gaps[i])
        guarded.append(float(g) if math.isfinite(g) else None)

    return SpectralStructure(
        source=sigma,
        eigenvalues=w,
        eigenvectors=v,
        distinct_eigenvalues=mus,
        clusters=tuple(np.array(g) for g in groups),
        multiplicities=tuple(len(g) for g in groups),
        projectors=projectors,
        bases=bases,
        gaps=tuple(float(g) for g in gaps),
        guarded_gaps=tuple(guarded),
        cluster_tolerance=float(cluster_tolerance),
        rank_tolerance=float(rank_tolerance),
        op_norm=norm,
    )


def effective_rank(sigma) -> float:
    """``trace(sigma) / ||sigma||_op`` for a nonzero PSD covariance."""
    norm = op_norm(sigma)
    if norm == 0.0:
        raise ZeroOperatorError("effective rank of the zero operator is undefined")
    return trace(sigma) / norm


@dataclass(frozen=True, eq=False)
class SpikedModel:
    """Low-rank signal plus isotropic noise.

    ``spike_directions`` defaults to the first ``m`` coordinate axes.
    """

    p: int
    spike_variances: Sequence[float]
    noise_variance: float
    spike_directions: Optional[np.ndarray] = None

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.spike_variances, dtype=float))
        object.__setattr__(self, "spike_variances", s)
        if s.size < 1:
            raise InvalidSpikeError("need at least one spike")
        if np.any(s <= 0) or np.any(np.diff(s) >= 0):
            raise InvalidSpikeError("spike variances must be positive and strictly decreasing")
        if self.noise_variance <= 0:
            raise InvalidSpikeError("noise variance must be positive")
        if self.p < s.size:
            raise InvalidSpikeError(f"need p >= m, got p={self.p}, m={s.size}")
        if self.spike_directions is None:
            theta = np.eye(self.p, s.size)
        else:
            theta = np.asarray(self.spike_directions, dtype=float)
            if theta.ndim == 1:
                theta = theta[:, None]
            if theta.shape != (self.p, s.size):
                raise InvalidSpikeError(
                    f"directions must have shape {(self.p, s.size)}, got {theta.shape}"
                )
            if np.max(np.abs(theta.T @ theta - np.eye(s.size))) > 1e-12:
                raise InvalidSpikeError("spike directions are not orthonormal")
        theta = theta.copy()
        theta.flags.writeable = False
        object.__setattr__(self, "spike_directions", theta)

    @property
    def m(self) -> int:
        return int(self.spike_variances.size)

    def spike(self, r: int) -> float:
        if not 1 <= r <= self.m:
            raise SpikeIndexOutOfRangeError(f"spike index {r} outside 1..{self.m}")
        return float(self.spike_variances[r - 1])


def build_spiked(
    model: SpikedModel, variant: Literal["full_identity", "projector"] = "full_identity"
) -> SymmetricOperator:
    """Materialize ``sum_j s_j^2 theta_j theta_j^T + sigma^2 I_p``.

    In a finite ambient space of dimension ``p`` the projector onto the span
    of the first ``p`` basis vectors is the identity, so both variants give
    the same matrix.
    """
    if variant not in ("full_identity", "projector"):
        raise ValidationError(f"unknown spiked-model variant {variant!r}")
    if model.p <= model.m:
        raise InvalidSpikeError(f"need p > m to build a covariance, got p={model.p}, m={model.m}")
    theta = model.spike_directions
    sigma = (theta * model.spike_variances) @ theta.T
    sigma[np.diag_indices(model.p)] += model.noise_variance
    return SymmetricOperator._trusted(sigma)
