"""Reproducible mean-zero Gaussian sampling.

Every random draw comes from its own substream, derived from
``(master_seed, replication, role, *extra)`` with :class:`numpy.random.SeedSequence`
and the PCG64 generator. Standard normals use numpy's ziggurat sampler. A
batch therefore depends only on its key, never on worker count or the order
in which replications are scheduled.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .exceptions import DimensionMismatchError, EmptyBatchError, NotPSDError, ValidationError
from .linalg import SymmetricOperator, as_operator, eigh
from .spectral import SpectralStructure

PSD_TOL = 1e-10

ROLE_X = "X"
ROLE_XTILDE = "Xtilde"
ROLE_XBAR = "Xbar"


def _role_word(role: str) -> int:
    return zlib.crc32(role.encode("utf-8"))


@dataclass(frozen=True)
class SeedSpec:
    """Master seed plus the rule that turns it into independent substreams."""

    master_seed: int = 0

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValidationError("master seed must be an unsigned 64-bit integer")

    def sequence(self, replication: int, role: str, *extra: int) -> np.random.SeedSequence:
        key = (int(replication), _role_word(role), *(int(x) for x in extra))
        return np.random.SeedSequence(entropy=int(self.master_seed), spawn_key=key)

    def generator(self, replication: int, role: str, *extra: int) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.sequence(replication, role, *extra)))


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """``n`` observations of a ``p``-dimensional vector, one per row."""

    vectors: np.ndarray

    def __post_init__(self):
        x = np.array(self.vectors, dtype=float)
        if x.ndim != 2:
            raise ValidationError(f"sample must be 2-d (n, p), got shape {x.shape}")
        if x.shape[0] < 1:
            raise EmptyBatchError("sample batch has no observations")
        if x.shape[1] < 1:
            raise ValidationError("sample batch has zero dimension")
        x.flags.writeable = False
        object.__setattr__(self, "vectors", x)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def p(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True, eq=False)
class TripleSplit:
    """Three independent equal-size subsamples (roles X, Xtilde, Xbar)."""

    x: SampleBatch
    x_tilde: SampleBatch
    x_bar: SampleBatch

    def __post_init__(self):
        shapes = {b.vectors.shape for b in (self.x, self.x_tilde, self.x_bar)}
        if len(shapes) != 1:
            raise DimensionMismatchError(f"subsamples differ in shape: {sorted(shapes)}")

    @classmethod
    def from_array(cls, data) -> "TripleSplit":
        """Split ``3n`` rows into consecutive thirds; trailing rows are dropped."""
        x = np.asarray(data, dtype=float)
        if x.ndim != 2 or x.shape[0] < 3:
            raise EmptyBatchError("need at least 3 observations to form three subsamples")
        n = x.shape[0] // 3
        return cls(SampleBatch(x[:n]), SampleBatch(x[n : 2 * n]), SampleBatch(x[2 * n : 3 * n]))


@dataclass(frozen=True, eq=False)
class GaussianSampler:
    sqrt_sigma: SymmetricOperator
    seed: SeedSpec
    sqrt_diagonal: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return self.sqrt_sigma.dim

    def _color(self, z: np.ndarray) -> np.ndarray:
        # rows of z are standard normal vectors
        if self.sqrt_diagonal is not None:
            return z * self.sqrt_diagonal
        return z @ self.sqrt_sigma.entries


def make_sampler(sigma, seed: SeedSpec | int = 0) -> GaussianSampler:
    """Sampler of ``N(0, sigma)`` vectors realized as ``sigma^{1/2} Z``.

    Raises
    ------
    NotPSDError
        If ``sigma`` has an eigenvalue below ``-1e-10 * ||sigma||``.
    """
    if not isinstance(seed, SeedSpec):
        seed = SeedSpec(int(seed))
    sigma = as_operator(sigma)
    arr = sigma.entries
    if np.count_nonzero(arr - np.diag(np.diagonal(arr))) == 0:
        d = np.diagonal(arr).copy()
        scale = float(np.max(np.abs(d)))
        if np.min(d) < -PSD_TOL * scale:
            raise NotPSDError(f"diagonal entry {np.min(d):.3e} is negative")
        root = np.sqrt(np.clip(d, 0.0, None))
        return GaussianSampler(SymmetricOperator._trusted(np.diag(root)), seed, root)
    dec = eigh(sigma)
    w = dec.eigenvalues
    scale = float(max(abs(w[0]), abs(w[-1])))
    if w[-1] < -PSD_TOL * scale:
        raise NotPSDError(f"eigenvalue {w[-1]:.3e} is negative beyond tolerance")
    v = dec.eigenvectors
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return GaussianSampler(SymmetricOperator._trusted(root), seed)


def _check_n(n: int) -> int:
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise EmptyBatchError(f"sample size must be a positive integer, got {n!r}")
    return int(n)


def draw_batch(
    sampler: GaussianSampler, n: int, replication: int = 0, role: str = ROLE_X, *extra: int
) -> SampleBatch:
    """``n`` i.i.d. draws from the substream keyed by ``(replication, role, *extra)``."""
    n = _check_n(n)
    z = sampler.seed.generator(replication, role, *extra).standard_normal((n, sampler.dim))
    return SampleBatch(sampler._color(z))


def draw_covariance(
    sampler: GaussianSampler, n: int, replication: int = 0, role: str = ROLE_X, *extra: int
) -> SymmetricOperator:
    """Sample covariance of ``n`` draws, sampled directly from its Wishart law.

    Uses the Bartlett decomposition, which needs ``p * (p + 1) / 2`` random
    numbers instead of ``n * p``. Falls back to drawing vectors when
    ``n < p``. The draws differ from :func:`draw_batch` on the same key; only
    the distribution is the same.
    """
    n = _check_n(n)
    p = sampler.dim
    if n < p:
        return sample_covariance_array(draw_batch(sampler, n, replication, role, *extra).vectors)
    gen = sampler.seed.generator(replication, role, *extra)
    a = np.zeros((p, p))
    a[np.diag_indices(p)] = np.sqrt(gen.chisquare(n - np.arange(p)))
    rows, cols = np.tril_indices(p, -1)
    a[rows, cols] = gen.standard_normal(rows.size)
    if sampler.sqrt_diagonal is not None:
        b = a * sampler.sqrt_diagonal[:, None]
    else:
        b = sampler.sqrt_sigma.entries @ a
    return SymmetricOperator._trusted(_gram_rows(b) / n)


def _gram_rows(b: np.ndarray) -> np.ndarray:
    # b @ b.T via a symmetric rank-k update, mirrored to the lower triangle
    c = scipy.linalg.blas.dsyrk(1.0, b)
    return np.triu(c) + np.triu(c, 1).T


def sample_covariance_array(x: np.ndarray) -> SymmetricOperator:
    x = np.asarray(x, dtype=float)
    return SymmetricOperator._trusted(_gram_rows(np.ascontiguousarray(x.T)) / x.shape[0])


def _check_batch_dim(batch: SampleBatch, ss: SpectralStructure) -> None:
    if batch.p != ss.dim:
        raise DimensionMismatchError(f"batch dimension {batch.p} != operator dimension {ss.dim}")


def gamma_matrix(batch: SampleBatch, ss: SpectralStructure, r: int) -> SymmetricOperator:
    """``(1/n) sum_i P_r X_i (P_r X_i)^T``, a rank ``<= m_r`` operator."""
    _check_batch_dim(batch, ss)
    v = ss.basis(r)
    y = batch.vectors @ v
    return SymmetricOperator._trusted(v @ (y.T @ y / batch.n) @ v.T)


def gamma_eigenvalues(batch: SampleBatch, ss: SpectralStructure, r: int) -> np.ndarray:
    """The ``m_r`` eigenvalues of :func:`gamma_matrix`, non-increasing."""
    _check_batch_dim(batch, ss)
    y = batch.vectors @ ss.basis(r)
    return np.linalg.eigvalsh(y.T @ y / batch.n)[::-1]

