"""Closed-form risk and variance constants for empirical spectral projectors.

``A_r`` is the leading constant of ``E||P_hat_r - P_r||_2^2 ~ A_r / n`` and
``B_r`` that of its standard deviation ``~ B_r / n``. Each is computed two
ways, from operator traces and from the eigenvalue sums, and the routes are
cross-checked in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    GapUndefinedError,
    RequiresUnitNoiseError,
    SpikeIndexOutOfRangeError,
    ValidationError,
)
from .linalg import hs_norm, op_norm, trace
from .perturbation import partial_resolvent
from .spectral import SpectralStructure, SpikedModel, effective_rank


def _sandwiches(ss: SpectralStructure, r: int) -> tuple[np.ndarray, np.ndarray]:
    sigma = ss.source.entries
    p = ss.projector(r).entries
    c = partial_resolvent(ss, r).entries
    return p @ sigma @ p, c @ sigma @ c


def a_r_operator(ss: SpectralStructure, r: int) -> float:
    """``2 tr(P_r S P_r) tr(C_r S C_r)``."""
    psp, csc = _sandwiches(ss, r)
    return 2.0 * trace(psp) * trace(csc)


def a_r_eigensum(ss: SpectralStructure, r: int) -> float:
    """``2 sum_{s != r} m_r mu_r m_s mu_s / (mu_s - mu_r)^2``."""
    i = ss.check_cluster(r)
    mu, m = ss.distinct_eigenvalues, ss.multiplicities
    return 2.0 * sum(
        m[i] * mu[i] * m[s] * mu[s] / (mu[s] - mu[i]) ** 2 for s in range(len(mu)) if s != i
    )


def b_r_operator(ss: SpectralStructure, r: int) -> float:
    """``2 sqrt(2) ||P_r S P_r||_2 ||C_r S C_r||_2``."""
    psp, csc = _sandwiches(ss, r)
    return 2.0 * math.sqrt(2.0) * hs_norm(psp) * hs_norm(csc)


def b_r_eigensum(ss: SpectralStructure, r: int) -> float:
    """Square root of ``8 sum_{s != r} m_r mu_r^2 m_s mu_s^2 / (mu_s - mu_r)^4``."""
    i = ss.check_cluster(r)
    mu, m = ss.distinct_eigenvalues, ss.multiplicities
    total = sum(
        m[i] * mu[i] ** 2 * m[s] * mu[s] ** 2 / (mu[s] - mu[i]) ** 4
        for s in range(len(mu))
        if s != i
    )
    return math.sqrt(8.0 * total)


def _spike_index(model: SpikedModel, r: int) -> int:
    if isinstance(r, bool) or not 1 <= r <= model.m:
        raise SpikeIndexOutOfRangeError(f"spike index {r} outside 1..{model.m}")
    return r - 1


def a_r_spiked(model: SpikedModel, r: int) -> float:
    """``A_r`` of a spiked model in closed form.

    The noise term carries the factor ``sigma^2`` so that the value agrees
    with :func:`a_r_operator` for any noise level.
    """
    i = _spike_index(model, r)
    s, sig2 = model.spike_variances, model.noise_variance
    lam = s[i] + sig2
    noise = (model.p - model.m) * lam * sig2 / s[i] ** 2
    cross = sum((s[j] + sig2) * lam / (s[i] - s[j]) ** 2 for j in range(model.m) if j != i)
    return 2.0 * (noise + cross)


def b_r_spiked(model: SpikedModel, r: int) -> float:
    i = _spike_index(model, r)
    s, sig2 = model.spike_variances, model.noise_variance
    lam = s[i] + sig2
    noise = lam**2 * sig2**2 * (model.p - model.m) / s[i] ** 4
    cross = sum(lam**2 * (s[j] + sig2) ** 2 / (s[i] - s[j]) ** 4 for j in range(model.m) if j != i)
    return 2.0 * math.sqrt(2.0) * math.sqrt(noise + cross)


def b_r_spiked_asymptotic(model: SpikedModel, r: int) -> float:
    """Large-``p`` limit ``2 sqrt(2) (s_r^2 + sigma^2) sigma^2 sqrt(p) / s_r^4``."""
    i = _spike_index(model, r)
    s, sig2 = model.spike_variances, model.noise_variance
    return 2.0 * math.sqrt(2.0) * (s[i] + sig2) * sig2 * math.sqrt(model.p) / s[i] ** 2


def var_linear_exact(ss: SpectralStructure, r: int, n: int) -> float:
    """Exact variance of ``||L_r(E)||_2^2`` for a Gaussian sample of size ``n``."""
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    a = a_r_eigensum(ss, r)
    b = b_r_eigensum(ss, r)
    m = ss.multiplicity(r)
    return b**2 / n**2 * (1.0 + (m + 1) / n) + 2.0 * a**2 / (m * n**3)


def birnbaum_risk(model: SpikedModel, n: int, j: int) -> float:
    """Leading term of the eigenvector risk under the ``2(1 - |<a, b>|)`` loss.

    Only valid for unit noise variance; the ``(1 + o(1))`` factor is dropped.
    """
    if model.noise_variance != 1.0:
        raise RequiresUnitNoiseError("the risk formula assumes noise variance 1")
    i = _spike_index(model, j)
    s = model.spike_variances
    first = (model.p - model.m) * (1 + s[i]) / (n * s[i] ** 2)
    rest = sum((1 + s[i]) * (1 + s[k]) / (s[i] - s[k]) ** 2 for k in range(model.m) if k != i)
    return first + rest / n


def risk_envelope_opnorm(sigma, n: int) -> float:
    """``||S|| max(sqrt(r(S)/n), r(S)/n)``, the operator-norm error rate without constant."""
    norm = op_norm(sigma)
    ratio = effective_rank(sigma) / n
    return norm * max(math.sqrt(ratio), ratio)


@dataclass(frozen=True)
class TheoryConstants:
    r: int
    A_r: float
    B_r: float
    n: int
    risk_approx: float
    var_linear_exact: float
    effective_rank: float
    gap: float | None
    m_r: int


def theory_constants(ss: SpectralStructure, r: int, n: int) -> TheoryConstants:
    ss.check_cluster(r)
    a = a_r_eigensum(ss, r)
    try:
        gap = ss.guarded_gap(r)
    except GapUndefinedError:
        gap = None
    return TheoryConstants(
        r=r,
        A_r=a,
        B_r=b_r_eigensum(ss, r),
        n=n,
        risk_approx=a / n,
        var_linear_exact=var_linear_exact(ss, r, n),
        effective_rank=effective_rank(ss.source),
        gap=gap,
        m_r=ss.multiplicity(r),
    )


def a_r_bounds(ss: SpectralStructure, r: int) -> tuple[float, float]:
    """Lower and upper bounds on ``A_r`` in terms of the effective rank.

    The lower bound subtracts ``m_r^2 mu_r^2 / ||S||^2``; with a single
    power of ``m_r`` it fails for repeated eigenvalues (e.g. ``diag(1, 1, eps)``).
    The two forms coincide for simple eigenvalues.

    Raises
    ------
    GapUndefinedError
        If cluster ``r`` has no guarded gap.
    """
    mu, m = ss.mu(r), ss.multiplicity(r)
    norm = ss.op_norm
    eff = effective_rank(ss.source)
    gap = ss.guarded_gap(r)
    upper = 2.0 * m * mu / gap**2 * norm * eff
    lower = 2.0 * (m * mu / norm * eff - (m * mu) ** 2 / norm**2)
    return lower, upper

