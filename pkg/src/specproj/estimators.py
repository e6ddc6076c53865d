"""Data-driven statistics for the risk of empirical spectral projectors.

The functional API mirrors the quantities computed per replication in the
Monte Carlo engine. :class:`EmpiricalSpectralProjector` and
:class:`ProjectorRiskEstimator` wrap them as scikit-learn estimators so they
compose with pipelines and ``get_params``/``set_params``.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import (
    DegenerateTopEigenvaluesError,
    EmptyBatchError,
    NegativeInnerError,
    NonpositiveBError,
    ValidationError,
    ZeroDenominatorError,
)
from .linalg import SymmetricOperator, _as_array, hs_inner, top_eigh
from .sampling import SampleBatch, TripleSplit, sample_covariance_array

# inner products this far below zero mean the inputs are not projectors
NEGATIVE_INNER_TOL = 1e-12


def sample_covariance(batch: SampleBatch | np.ndarray, center: bool = False) -> SymmetricOperator:
    """``(1/n) X^T X``; not mean-centered unless ``center`` is set.

    Centering is off by default because the model is mean-zero; it exists
    for external data only.
    """
    x = batch.vectors if isinstance(batch, SampleBatch) else np.asarray(batch, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1:
        raise EmptyBatchError("sample covariance needs at least one observation")
    if center:
        x = x - x.mean(axis=0)
    return sample_covariance_array(x)


def bias_estimator(p_a, p_b) -> float:
    """``sqrt(<P_a, P_b>) - 1`` for projectors from two independent subsamples."""
    inner = hs_inner(p_a, p_b)
    if inner < -NEGATIVE_INNER_TOL:
        raise NegativeInnerError(f"projector inner product {inner:.3e} is negative")
    return math.sqrt(max(inner, 0.0)) - 1.0


def bias_estimator_from_bases(v_a: np.ndarray, v_b: np.ndarray) -> float:
    """Same as :func:`bias_estimator` given orthonormal bases of the two ranges."""
    return math.sqrt(float(np.sum((v_a.T @ v_b) ** 2))) - 1.0


def variance_estimator(b_hat: float, b_tilde: float) -> float:
    """``((1 + b_hat)^2 - (1 + b_tilde)^2)^2``."""
    return ((1.0 + b_hat) ** 2 - (1.0 + b_tilde) ** 2) ** 2


def b_hat_n(sigma_hat, p: int) -> float:
    """Plug-in estimate of ``B_n`` for a single-spike model from the top two eigenvalues."""
    mu = top_eigh(_as_array(sigma_hat), 2).eigenvalues
    return b_hat_n_from_eigenvalues(mu[0], mu[1], p)


def b_hat_n_from_eigenvalues(mu1: float, mu2: float, p: int) -> float:
    if mu1 - mu2 <= 1e-12 * abs(mu1):
        raise DegenerateTopEigenvaluesError("top two eigenvalues coincide")
    return 2.0 * math.sqrt(2.0) * mu1 * mu2 / (mu1 - mu2) ** 2 * math.sqrt(p - 1)


def statistic_theory(hs_sq_err: float, b_hat: float, B_n: float, n: int) -> float:
    """``(n / B_n) (||P_hat - P||_2^2 + 2 b_hat)``, asymptotically standard normal."""
    if not B_n > 0:
        raise NonpositiveBError(f"normalizer must be positive, got {B_n}")
    return n / B_n * (hs_sq_err + 2.0 * b_hat)


def statistic_data_driven(hs_sq_err: float, b_hat: float, B_hat_n: float, n: int) -> float:
    if not B_hat_n > 0:
        raise NonpositiveBError(f"normalizer must be positive, got {B_hat_n}")
    return n / B_hat_n * (hs_sq_err + 2.0 * b_hat)


def statistic_pure(hs_sq_err: float, b_hat: float, b_tilde: float) -> float:
    """Self-normalized ratio with a Cauchy-type limit."""
    denom = abs((1.0 + b_hat) ** 2 - (1.0 + b_tilde) ** 2)
    if denom == 0.0:
        raise ZeroDenominatorError("b_hat == b_tilde gives a zero normalizer")
    return (hs_sq_err + 2.0 * b_hat) / denom


def _positions(start: int, multiplicity: int) -> np.ndarray:
    if start < 0 or multiplicity < 1:
        raise ValidationError("start must be >= 0 and multiplicity >= 1")
    return np.arange(start, start + multiplicity)


class EmpiricalSpectralProjector(TransformerMixin, BaseEstimator):
    """Projector onto a block of sample-covariance eigenvectors.

    Parameters
    ----------
    start : int, default=0
        0-based position of the first eigenvalue in the block (non-increasing order).
    multiplicity : int, default=1
        Number of consecutive eigenvectors in the block.
    center : bool, default=False
        Subtract the column means before forming the covariance.

    Attributes
    ----------
    covariance_ : ndarray of shape (n_features, n_features)
    eigenvalues_ : ndarray of shape (start + multiplicity,)
        Leading eigenvalues of ``covariance_``.
    components_ : ndarray of shape (multiplicity, n_features)
    projector_ : ndarray of shape (n_features, n_features)
    """

    def __init__(self, start=0, multiplicity=1, center=False):
        self.start = start
        self.multiplicity = multiplicity
        self.center = center

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=1)
        pos = _positions(self.start, self.multiplicity)
        p = X.shape[1]
        if pos[-1] >= p:
            raise ValidationError(f"block ends at {pos[-1]} but there are only {p} features")
        self.mean_ = X.mean(axis=0) if self.center else np.zeros(p)
        self.covariance_ = sample_covariance(X, center=self.center).entries.copy()
        dec = top_eigh(self.covariance_, int(pos[-1]) + 1)
        self.eigenvalues_ = dec.eigenvalues
        basis = dec.eigenvectors[:, pos]
        self.components_ = basis.T
        self.projector_ = basis @ basis.T
        self.n_features_in_ = p
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return (X - self.mean_) @ self.components_.T


class ProjectorRiskEstimator(BaseEstimator):
    """Estimate the squared Hilbert-Schmidt risk of an empirical eigenprojector.

    ``fit`` splits the rows into three equal consecutive subsamples and
    estimates, from data alone, the risk ``E||P_hat - P||_2^2`` by
    ``-2 b_hat`` and its standard deviation by
    ``|(1 + b_hat)^2 - (1 + b_tilde)^2|``. The target block is given by
    ``start``/``multiplicity`` as in :class:`EmpiricalSpectralProjector`.

    Attributes
    ----------
    projector_ : ndarray
        Projector estimated from the first subsample.
    b_hat_, b_tilde_ : float
    risk_ : float
    std_ : float
    B_hat_ : float or None
        Plug-in single-spike normalizer (only when ``start == 0`` and
        ``multiplicity == 1``).
    n_ : int
        Size of each subsample.
    """

    def __init__(self, start=0, multiplicity=1, center=False):
        self.start = start
        self.multiplicity = multiplicity
        self.center = center

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=3)
        split = TripleSplit.from_array(X)
        fits = [
            EmpiricalSpectralProjector(self.start, self.multiplicity, self.center).fit(b.vectors)
            for b in (split.x, split.x_tilde, split.x_bar)
        ]
        bases = [f.components_.T for f in fits]
        self.b_hat_ = bias_estimator_from_bases(bases[0], bases[1])
        self.b_tilde_ = bias_estimator_from_bases(bases[1], bases[2])
        self.risk_ = -2.0 * self.b_hat_
        self.std_ = math.sqrt(variance_estimator(self.b_hat_, self.b_tilde_))
        self.projector_ = fits[0].projector_
        self.eigenvalues_ = fits[0].eigenvalues_
        self.B_hat_ = None
        if self.start == 0 and self.multiplicity == 1 and X.shape[1] >= 2:
            cov = fits[0].covariance_
            mu = top_eigh(cov, 2).eigenvalues
            try:
                self.B_hat_ = b_hat_n_from_eigenvalues(mu[0], mu[1], X.shape[1])
            except DegenerateTopEigenvaluesError:
                self.B_hat_ = None
        self.n_ = split.x.n
        self.n_features_in_ = X.shape[1]
        return self

    def loss(self, P):
        """Squared HS distance from the fitted projector to a reference projector ``P``."""
        check_is_fitted(self)
        P = check_array(P)
        return float(np.sum((self.projector_ - P) ** 2))

    def normalized_error(self, P):
        """Pure data-driven statistic for a known reference projector ``P``."""
        return statistic_pure(self.loss(P), self.b_hat_, self.b_tilde_)
