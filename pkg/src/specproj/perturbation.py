"""First-order perturbation of spectral projectors.

For a population structure ``ss`` and an empirical covariance ``sigma_hat``
the empirical projector onto the eigenvectors at the positions of cluster
``r`` splits as ``P_hat - P = L_r(E) + S_r(E)`` with ``E = sigma_hat - sigma``.
The remainder is always computed as a residual.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import DimensionMismatchError, GapUndefinedError
from .linalg import (
    SymmetricOperator,
    _as_array,
    eigvalsh,
    hs_norm,
    lowrank_op_norm,
    top_eigh,
)
from .spectral import SpectralStructure

PROJECTOR_BOUND_CONST = 4.0
REMAINDER_BOUND_CONST = 14.0


def _resolvent_weights(ss: SpectralStructure, r: int) -> np.ndarray:
    # weight 1/(mu_r - mu_s) on every retained eigenvector outside cluster r
    idx = ss.check_cluster(r)
    key = ("resolvent_weights", idx)
    if key not in ss._cache:
        mu_r = ss.distinct_eigenvalues[idx]
        weights = []
        for s, (mu_s, m_s) in enumerate(zip(ss.distinct_eigenvalues, ss.multiplicities)):
            coef = 0.0 if s == idx else 1.0 / (mu_r - mu_s)
            weights.extend([coef] * m_s)
        ss._cache[key] = np.array(weights)
    return ss._cache[key]


def _retained_vectors(ss: SpectralStructure) -> np.ndarray:
    key = "retained_vectors"
    if key not in ss._cache:
        ss._cache[key] = np.hstack(ss.bases)
    return ss._cache[key]


def partial_resolvent(ss: SpectralStructure, r: int) -> SymmetricOperator:
    """Reduced resolvent ``sum_{s != r} P_s / (mu_r - mu_s)``."""
    idx = ss.check_cluster(r)
    key = ("resolvent", idx)
    if key not in ss._cache:
        v = _retained_vectors(ss)
        c = (v * _resolvent_weights(ss, r)) @ v.T
        ss._cache[key] = SymmetricOperator._trusted(c)
    return ss._cache[key]


def _check_dims(ss: SpectralStructure, a: np.ndarray) -> None:
    if a.shape != (ss.dim, ss.dim):
        raise DimensionMismatchError(f"expected {(ss.dim, ss.dim)} operator, got shape {a.shape}")


def _linear_factor(ss: SpectralStructure, r: int, e: np.ndarray) -> np.ndarray:
    # W = C_r E V_r, so that L_r(E) = W V^T + V W^T
    return partial_resolvent(ss, r).entries @ (e @ ss.basis(r))


def linear_term(ss: SpectralStructure, r: int, e) -> SymmetricOperator:
    """``L_r(E) = C_r E P_r + P_r E C_r``."""
    e = _as_array(e)
    _check_dims(ss, e)
    v = ss.basis(r)
    w = _linear_factor(ss, r, e)
    return SymmetricOperator._trusted(w @ v.T + v @ w.T)


@dataclass(frozen=True, eq=False)
class EmpiricalProjection:
    """Empirical projector on the eigenvectors at the positions of one cluster."""

    projector: SymmetricOperator
    basis: np.ndarray
    eigenvalues: np.ndarray
    error_norm: Optional[float]
    separation_ok: Optional[bool]


def _separation(ss: SpectralStructure, r: int, error_norm: float) -> bool:
    try:
        gap = ss.guarded_gap(r)
    except GapUndefinedError:
        return False
    return error_norm < gap / 2


def empirical_basis(ss: SpectralStructure, r: int, sigma_hat) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvectors (and eigenvalues) of ``sigma_hat`` at the sorted positions of cluster ``r``."""
    s = _as_array(sigma_hat)
    _check_dims(ss, s)
    positions = ss.cluster(r)
    dec = top_eigh(s, int(positions[-1]) + 1)
    return dec.eigenvectors[:, positions], dec.eigenvalues[positions]


def empirical_projector(
    ss: SpectralStructure, r: int, sigma_hat, *, check_separation: bool = True
) -> EmpiricalProjection:
    """Project onto the empirical eigenvectors indexed by cluster ``r``.

    Matching is by sorted position, never by nearest eigenvalue.
    ``separation_ok`` reports whether ``||sigma_hat - sigma|| < gbar_r / 2``;
    it is ``None`` when ``check_separation`` is false.
    """
    basis, vals = empirical_basis(ss, r, sigma_hat)
    err = ok = None
    if check_separation:
        err = float(np.max(np.abs(eigvalsh(_as_array(sigma_hat) - ss.source.entries))))
        ok = _separation(ss, r, err)
    return EmpiricalProjection(
        projector=SymmetricOperator._trusted(basis @ basis.T),
        basis=basis,
        eigenvalues=vals,
        error_norm=err,
        separation_ok=ok,
    )


@dataclass(frozen=True, eq=False)
class PerturbationDecomposition:
    r: int
    E: SymmetricOperator
    P_hat: SymmetricOperator
    L: SymmetricOperator
    S: SymmetricOperator
    error_op: float
    linear_hs: float
    remainder_op: float
    diff_hs: float
    diff_op: float
    gap: Optional[float]
    separation_ok: bool

    @property
    def diff_hs_sq(self) -> float:
        return self.diff_hs**2

    @property
    def linear_hs_sq(self) -> float:
        return self.linear_hs**2

    @property
    def projector_bound(self) -> float:
        """``4 ||E|| / gbar_r``; infinite when the gap is undefined."""
        if self.gap is None:
            return np.inf
        return PROJECTOR_BOUND_CONST * self.error_op / self.gap

    @property
    def remainder_bound(self) -> float:
        if self.gap is None:
            return np.inf
        return REMAINDER_BOUND_CONST * (self.error_op / self.gap) ** 2

    def bounds_hold(self) -> tuple[bool, bool]:
        """Whether the projector and remainder bounds hold; both vacuous without separation."""
        if not self.separation_ok:
            return True, True
        return self.diff_op <= self.projector_bound, self.remainder_op <= self.remainder_bound


def decompose(
    ss: SpectralStructure,
    r: int,
    sigma_hat,
    *,
    error_op: Optional[float] = None,
    basis_hat: Optional[np.ndarray] = None,
) -> PerturbationDecomposition:
    """Split ``P_hat_r - P_r`` into its linear term and remainder, with norms.

    Operator norms of the low-rank parts are computed from thin factors, so
    only ``||E||`` needs a full eigensolve (skipped if ``error_op`` is given).
    ``basis_hat`` may pass in already computed empirical eigenvectors for
    the positions of cluster ``r``.
    """
    s = _as_array(sigma_hat)
    _check_dims(ss, s)
    e = s - ss.source.entries
    e = 0.5 * (e + e.T)
    v = ss.basis(r)
    m = v.shape[1]
    v_hat = empirical_basis(ss, r, s)[0] if basis_hat is None else basis_hat
    w = _linear_factor(ss, r, e)

    p = ss.projector(r).entries
    p_hat = v_hat @ v_hat.T
    lin = w @ v.T + v @ w.T
    rem = p_hat - p - lin

    if error_op is None:
        error_op = float(np.max(np.abs(eigvalsh(e))))
    eye, zero = np.eye(m), np.zeros((m, m))
    diff_op = lowrank_op_norm(np.hstack([v_hat, v]), np.block([[eye, zero], [zero, -eye]]))
    remainder_op = lowrank_op_norm(
        np.hstack([v_hat, v, w]),
        np.block([[eye, zero, zero], [zero, -eye, -eye], [zero, -eye, zero]]),
    )
    try:
        gap = ss.guarded_gap(r)
    except GapUndefinedError:
        gap = None
    return PerturbationDecomposition(
        r=r,
        E=SymmetricOperator._trusted(e),
        P_hat=SymmetricOperator._trusted(p_hat),
        L=SymmetricOperator._trusted(lin),
        S=SymmetricOperator._trusted(rem),
        error_op=error_op,
        linear_hs=hs_norm(lin),
        remainder_op=remainder_op,
        diff_hs=hs_norm(p_hat - p),
        diff_op=diff_op,
        gap=gap,
        separation_ok=_separation(ss, r, error_op),
    )
