"""Monte Carlo engine for empirical spectral projectors.

One replication draws three independent samples of size ``n`` (roles
``X``, ``Xtilde``, ``Xbar``), forms their sample covariances and records the
projector error, its linear term, the bias estimators and the normalized
statistics. Replications are independent work items; every random number is
keyed by ``(seed, replication, role, n)``, so aggregates do not depend on the
number of workers.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Literal, Optional, Sequence

import numpy as np
from scipy import stats

from .estimators import (
    b_hat_n_from_eigenvalues,
    bias_estimator_from_bases,
    statistic_data_driven,
    statistic_pure,
    statistic_theory,
    variance_estimator,
)
from .exceptions import ConvergenceFailure, DomainViolationError, SpecProjError, ValidationError
from .linalg import SymmetricOperator, as_operator, top_eigh
from .perturbation import decompose, partial_resolvent
from .sampling import (
    ROLE_X,
    ROLE_XBAR,
    ROLE_XTILDE,
    SeedSpec,
    draw_batch,
    draw_covariance,
    gamma_eigenvalues,
    make_sampler,
    sample_covariance_array,
)
from .spectral import SpikedModel, build_spiked, effective_rank, spectral_structure
from .theory import a_r_eigensum, b_r_eigensum, risk_envelope_opnorm

log = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.01

Sampling = Literal["auto", "vectors", "wishart"]


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """What to simulate.

    Exactly one of ``model`` and ``sigma`` must be given. ``sampling``
    selects how sample covariances are drawn: ``"vectors"`` forms them from
    ``n`` Gaussian vectors, ``"wishart"`` samples the covariance directly
    (Bartlett), and ``"auto"`` uses the Wishart route whenever ``n >= p``.
    """

    model: Optional[SpikedModel] = None
    sigma: Optional[SymmetricOperator] = None
    r: int = 1
    ns: tuple = (100, 500, 2000)
    replications: int = 500
    seed: SeedSpec = field(default_factory=SeedSpec)
    out: Optional[Path] = None
    workers: int = 1
    sampling: Sampling = "auto"
    bins: object = "fd"
    cluster_tolerance: float = 1e-8
    rank_tolerance: float = 1e-12

    def __post_init__(self):
        if (self.model is None) == (self.sigma is None):
            raise ValidationError("give exactly one of a spiked model or an explicit covariance")
        if self.sigma is not None:
            object.__setattr__(self, "sigma", as_operator(self.sigma))
        if self.replications < 2:
            raise ValidationError("need at least 2 replications")
        ns = tuple(int(n) for n in self.ns)
        if not ns or min(ns) < 1:
            raise ValidationError("sample sizes must be positive")
        object.__setattr__(self, "ns", ns)
        if not isinstance(self.seed, SeedSpec):
            object.__setattr__(self, "seed", SeedSpec(int(self.seed)))
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        if self.sampling not in ("auto", "vectors", "wishart"):
            raise ValidationError(f"unknown sampling route {self.sampling!r}")
        if self.out is not None:
            object.__setattr__(self, "out", Path(self.out))

    def covariance(self) -> SymmetricOperator:
        return self.sigma if self.sigma is not None else build_spiked(self.model)

    @property
    def p(self) -> int:
        return self.model.p if self.model is not None else self.sigma.dim

    def describe(self) -> dict:
        d = {
            "r": self.r,
            "ns": list(self.ns),
            "replications": self.replications,
            "seed": int(self.seed.master_seed),
            "sampling": self.sampling,
            "bins": self.bins,
            "cluster_tolerance": self.cluster_tolerance,
            "rank_tolerance": self.rank_tolerance,
            "p": self.p,
        }
        if self.model is not None:
            d["model"] = {
                "p": self.model.p,
                "spike_variances": [float(s) for s in self.model.spike_variances],
                "noise_variance": float(self.model.noise_variance),
            }
        else:
            d["model"] = "explicit covariance"
        return d


def preset_config(name: str, **overrides) -> ExperimentConfig:
    """``desk`` runs in minutes; ``paper`` uses p = 1000, n up to 10^4 and takes hours."""
    if name == "desk":
        base = dict(model=SpikedModel(200, [2.0], 0.1), ns=(100, 500, 2000), replications=500)
    elif name == "paper":
        base = dict(
            model=SpikedModel(1000, [2.0], 0.1),
            ns=(100, 200, 300, 500, 1000, 10_000),
            replications=1000,
        )
    else:
        raise ValidationError(f"unknown preset {name!r}")
    base.update(overrides)
    return ExperimentConfig(**base)


@dataclass(frozen=True)
class ReplicationRecord:
    n: int
    rep: int
    hs_sq_err: float
    linear_sq: float
    b_hat: float
    b_tilde: float
    B_hat_n: float
    op_err: float
    separation_ok: bool
    diff_op: float
    remainder_op: float
    projector_bound_ok: bool
    remainder_bound_ok: bool
    stat_theory: float
    stat_data_driven: float
    stat_pure: float


RECORD_FIELDS = [f.name for f in fields(ReplicationRecord)]


@dataclass(frozen=True)
class FailedReplication:
    n: int
    rep: int
    reason: str


class _Context:
    """Per-process quantities derived once from the config."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        sigma = cfg.covariance()
        self.ss = spectral_structure(sigma, cfg.cluster_tolerance, cfg.rank_tolerance)
        self.sampler = make_sampler(sigma, cfg.seed)
        self.r = cfg.r
        self.A = a_r_eigensum(self.ss, cfg.r)
        self.B = b_r_eigensum(self.ss, cfg.r)
        self.p = sigma.dim
        self.positions = self.ss.cluster(cfg.r)

    def covariance(self, n: int, rep: int, role: str) -> SymmetricOperator:
        route = self.cfg.sampling
        if route == "auto":
            route = "wishart" if n >= self.p else "vectors"
        if route == "wishart":
            return draw_covariance(self.sampler, n, rep, role, n)
        return sample_covariance_array(draw_batch(self.sampler, n, rep, role, n).vectors)


def _replicate(ctx: _Context, n: int, rep: int) -> ReplicationRecord:
    r, pos = ctx.r, ctx.positions
    k = int(pos[-1]) + 1
    sig_hat = ctx.covariance(n, rep, ROLE_X)
    sig_tilde = ctx.covariance(n, rep, ROLE_XTILDE)
    sig_bar = ctx.covariance(n, rep, ROLE_XBAR)

    top = top_eigh(sig_hat.entries, min(k + 1, ctx.p))
    v_hat = top.eigenvectors[:, pos]
    v_tilde = top_eigh(sig_tilde.entries, k).eigenvectors[:, pos]
    v_bar = top_eigh(sig_bar.entries, k).eigenvectors[:, pos]

    dec = decompose(ctx.ss, r, sig_hat, basis_hat=v_hat)
    b_hat = bias_estimator_from_bases(v_hat, v_tilde)
    b_tilde = bias_estimator_from_bases(v_tilde, v_bar)
    mu = top.eigenvalues
    B_hat = b_hat_n_from_eigenvalues(mu[0], mu[1], ctx.p) if mu.size > 1 else math.nan
    hs = dec.diff_hs_sq
    proj_ok, rem_ok = dec.bounds_hold()
    return ReplicationRecord(
        n=n,
        rep=rep,
        hs_sq_err=hs,
        linear_sq=dec.linear_hs_sq,
        b_hat=b_hat,
        b_tilde=b_tilde,
        B_hat_n=B_hat,
        op_err=dec.error_op,
        separation_ok=dec.separation_ok,
        diff_op=dec.diff_op,
        remainder_op=dec.remainder_op,
        projector_bound_ok=proj_ok,
        remainder_bound_ok=rem_ok,
        stat_theory=statistic_theory(hs, b_hat, ctx.B, n) if ctx.B > 0 else math.nan,
        stat_data_driven=statistic_data_driven(hs, b_hat, B_hat, n) if B_hat > 0 else math.nan,
        stat_pure=statistic_pure(hs, b_hat, b_tilde),
    )


def run_replication(cfg: ExperimentConfig, n: int, rep_index: int, *, _ctx=None) -> ReplicationRecord:
    """One replication at sample size ``n``; deterministic in ``(cfg.seed, n, rep_index)``."""
    ctx = _ctx if _ctx is not None else _Context(cfg)
    return _replicate(ctx, n, rep_index)


def _run_chunk(cfg: ExperimentConfig, n: int, reps: Sequence[int]):
    ctx = _Context(cfg)
    records, failures = [], []
    for rep in reps:
        try:
            rec = _replicate(ctx, n, rep)
        except (SpecProjError, np.linalg.LinAlgError, ConvergenceFailure, ArithmeticError) as exc:
            failures.append(FailedReplication(n, rep, f"{type(exc).__name__}: {exc}"))
            continue
        numeric = [getattr(rec, f) for f in ("hs_sq_err", "linear_sq", "b_hat", "b_tilde", "op_err")]
        if not all(math.isfinite(x) for x in numeric):
            failures.append(FailedReplication(n, rep, "non-finite record"))
            continue
        records.append(rec)
    return records, failures


def _chunks(reps: int, parts: int) -> list[range]:
    parts = max(1, min(parts, reps))
    bounds = np.linspace(0, reps, parts + 1).astype(int)
    return [range(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: dict
    failures: list
    wall_time: float
    A: float
    B: float

    def for_n(self, n: int) -> list[ReplicationRecord]:
        return self.records[n]

    def column(self, n: int, name: str) -> np.ndarray:
        return np.array([getattr(rec, name) for rec in self.records[n]], dtype=float)

    @property
    def n_attempted(self) -> int:
        return len(self.config.ns) * self.config.replications

    @property
    def failure_rate(self) -> float:
        return len(self.failures) / self.n_attempted

    @property
    def failure_rate_exceeded(self) -> bool:
        return self.failure_rate > MAX_FAILURE_RATE

    def bound_violations(self) -> dict:
        """Counts of separated replications violating each perturbation bound."""
        out = {"separated": 0, "projector": 0, "remainder": 0}
        for recs in self.records.values():
            for rec in recs:
                if rec.separation_ok:
                    out["separated"] += 1
                    out["projector"] += not rec.projector_bound_ok
                    out["remainder"] += not rec.remainder_bound_ok
        return out


def run_experiment(cfg: ExperimentConfig, ns: Optional[Iterable[int]] = None) -> ExperimentResult:
    """Run all replications for every sample size and merge them by index."""
    ns = tuple(ns) if ns is not None else cfg.ns
    t0 = time.perf_counter()
    tasks = [(n, chunk) for n in ns for chunk in _chunks(cfg.replications, cfg.workers * 2)]
    if cfg.workers == 1:
        outputs = [_run_chunk(cfg, n, chunk) for n, chunk in tasks]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_run_chunk, cfg, n, chunk) for n, chunk in tasks]
            outputs = [f.result() for f in futures]
    records = {n: [] for n in ns}
    failures = []
    for recs, fails in outputs:
        for rec in recs:
            records[rec.n].append(rec)
        failures.extend(fails)
    for n in ns:
        records[n].sort(key=lambda rec: rec.rep)
    failures.sort(key=lambda f: (f.n, f.rep))
    if failures:
        log.warning("%d replications failed", len(failures))
    ctx_ss = spectral_structure(cfg.covariance(), cfg.cluster_tolerance, cfg.rank_tolerance)
    return ExperimentResult(
        config=replace(cfg, ns=ns),
        records=records,
        failures=failures,
        wall_time=time.perf_counter() - t0,
        A=a_r_eigensum(ctx_ss, cfg.r),
        B=b_r_eigensum(ctx_ss, cfg.r),
    )


def _as_result(obj) -> ExperimentResult:
    return obj if isinstance(obj, ExperimentResult) else run_experiment(obj)


@dataclass(frozen=True)
class Table1Row:
    n: int
    m_hat: float
    A_over_n: float
    dev_A_over_n: float
    dev_minus2bhat: float


@dataclass(frozen=True)
class Table2Row:
    n: int
    S2_hat: float
    Bn2_over_n2: float
    dev_Bn2: float
    dev_Vtilde: float


def table1(experiment) -> list[Table1Row]:
    """Risk rows: deviation of ``A/n`` from the sample risk (one aggregate), and
    the mean over replications of the per-replication deviation of ``-2 b_hat``."""
    res = _as_result(experiment)
    rows = []
    for n in res.config.ns:
        hs = res.column(n, "hs_sq_err")
        b = res.column(n, "b_hat")
        m_hat = float(np.mean(hs))
        rows.append(
            Table1Row(
                n=n,
                m_hat=m_hat,
                A_over_n=res.A / n,
                dev_A_over_n=abs(res.A / n - m_hat) / abs(m_hat),
                dev_minus2bhat=float(np.mean(np.abs(2.0 * b + m_hat) / abs(m_hat))),
            )
        )
    return rows


def table2(experiment) -> list[Table2Row]:
    res = _as_result(experiment)
    rows = []
    for n in res.config.ns:
        hs = res.column(n, "hs_sq_err")
        v = np.array(
            [variance_estimator(rec.b_hat, rec.b_tilde) for rec in res.for_n(n)], dtype=float
        )
        s2 = float(np.var(hs, ddof=1))
        bn2 = res.B**2 / n**2
        rows.append(
            Table2Row(
                n=n,
                S2_hat=s2,
                Bn2_over_n2=bn2,
                dev_Bn2=abs(bn2 - s2) / s2,
                dev_Vtilde=float(np.mean(np.abs(v - s2) / s2)),
            )
        )
    return rows


def ks_distance(sample, cdf) -> float:
    """One-sample Kolmogorov-Smirnov distance ``sup |F_n - F|``."""
    x = np.sort(np.asarray(sample, dtype=float))
    m = x.size
    if m == 0:
        raise ValidationError("empty sample")
    f = cdf(x)
    i = np.arange(1, m + 1)
    return float(max(np.max(i / m - f), np.max(f - (i - 1) / m)))


@dataclass(frozen=True)
class DensityEstimate:
    statistic: str
    n: int
    bin_centers: np.ndarray
    density: np.ndarray
    reference_density: np.ndarray
    reference: str
    ks_distance: Optional[float]
    mean: float
    variance: float


STATISTICS = {
    "theory": ("stat_theory", "standard normal"),
    "data_driven": ("stat_data_driven", "standard normal"),
    "pure": ("stat_pure", "standard Cauchy (unverified overlay)"),
}


def _density(values: np.ndarray, bins, reference) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    hist, edges = np.histogram(values, bins=bins, density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return centers, hist, reference.pdf(centers)


def densities(experiment, bins=None) -> list[DensityEstimate]:
    """Histograms of the three normalized statistics with reference densities.

    KS distances are reported against the standard normal for the two
    statistics whose limit is standard normal; the self-normalized ratio only
    gets a Cauchy overlay.
    """
    res = _as_result(experiment)
    bins = res.config.bins if bins is None else bins
    out = []
    for n in res.config.ns:
        for name, (attr, ref_name) in STATISTICS.items():
            vals = res.column(n, attr)
            vals = vals[np.isfinite(vals)]
            ref = stats.norm if name != "pure" else stats.cauchy
            # Freedman-Diaconis on Cauchy-like tails gives huge bin counts; clip the support
            shown = vals
            if name == "pure" and vals.size:
                lo, hi = np.quantile(vals, [0.01, 0.99])
                shown = vals[(vals >= lo) & (vals <= hi)]
            centers, dens, refd = _density(shown, bins, ref)
            out.append(
                DensityEstimate(
                    statistic=name,
                    n=n,
                    bin_centers=centers,
                    density=dens,
                    reference_density=refd,
                    reference=ref_name,
                    ks_distance=ks_distance(vals, stats.norm.cdf) if name != "pure" else None,
                    mean=float(np.mean(vals)),
                    variance=float(np.var(vals, ddof=1)),
                )
            )
    return out


def ks_theory_by_n(experiment) -> dict:
    res = _as_result(experiment)
    return {n: ks_distance(res.column(n, "stat_theory"), stats.norm.cdf) for n in res.config.ns}


def ks_standard_error(
    sample, cdf, n_boot: int = 500, seed: SeedSpec | int = 0
) -> float:
    """Bootstrap standard error of :func:`ks_distance`."""
    seed = seed if isinstance(seed, SeedSpec) else SeedSpec(int(seed))
    x = np.asarray(sample, dtype=float)
    gen = seed.generator(0, "ks-bootstrap", x.size)
    boots = [ks_distance(x[gen.integers(0, x.size, x.size)], cdf) for _ in range(n_boot)]
    return float(np.std(boots, ddof=1))


def sample_linear_sq(
    sigma, r: int, n: int, replications: int, seed: SeedSpec | int = 0
) -> np.ndarray:
    """``||L_r(E)||_2^2`` over independent replications, from explicit sample vectors."""
    sigma = as_operator(sigma)
    seed = seed if isinstance(seed, SeedSpec) else SeedSpec(int(seed))
    ss = spectral_structure(sigma)
    sampler = make_sampler(sigma, seed)
    c = partial_resolvent(ss, r).entries
    v = ss.basis(r)
    sv = sigma.entries @ v
    out = np.empty(replications)
    for i in range(replications):
        x = draw_batch(sampler, n, i, "linear", n).vectors
        ev = x.T @ (x @ v) / n - sv
        # ||W V^T + V W^T||^2 = 2 ||W||^2 since V^T W = 0
        out[i] = 2.0 * float(np.sum((c @ ev) ** 2))
    return out


@dataclass(frozen=True)
class VarianceCheck:
    sample_variance: float
    expected: float
    standard_error: float
    n_se: float

    @property
    def z(self) -> float:
        return (self.sample_variance - self.expected) / self.standard_error

    @property
    def ok(self) -> bool:
        return abs(self.sample_variance - self.expected) <= self.n_se * self.standard_error


def variance_check(values, expected: float, n_se: float = 4.0) -> VarianceCheck:
    """Compare the sample variance with ``expected`` in units of its standard error.

    The standard error uses the fourth central moment,
    ``Var(s^2) ~ (mu_4 - s^4 (N - 3) / (N - 1)) / N``.
    """
    x = np.asarray(values, dtype=float)
    N = x.size
    s2 = float(np.var(x, ddof=1))
    m4 = float(np.mean((x - x.mean()) ** 4))
    se = math.sqrt(max(m4 - s2**2 * (N - 3) / (N - 1), 0.0) / N)
    return VarianceCheck(s2, float(expected), se, n_se)


@dataclass(frozen=True)
class TwoSampleReport:
    statistic: float
    pvalue: float
    alpha: float
    accepted: bool
    left: np.ndarray = field(repr=False)
    right: np.ndarray = field(repr=False)


def verify_representation(
    sigma,
    r: int,
    n: int,
    replications: int = 5000,
    seed: SeedSpec | int = 0,
    alpha: float = 0.01,
) -> TwoSampleReport:
    """Two-sample KS check that ``n ||L_r(E)||_2^2`` has the law of
    ``2 sum_k gamma_k ||C_r X^(k)||^2`` (gamma_k the eigenvalues of the
    projected sample covariance, ``X^(k)`` fresh independent copies).

    Both sides are simulated from disjoint substreams.
    """
    sigma = as_operator(sigma)
    seed = seed if isinstance(seed, SeedSpec) else SeedSpec(int(seed))
    ss = spectral_structure(sigma)
    sampler = make_sampler(sigma, seed)
    c = partial_resolvent(ss, r).entries
    v = ss.basis(r)
    m = v.shape[1]
    left = np.empty(replications)
    right = np.empty(replications)
    for i in range(replications):
        e = sample_covariance_array(draw_batch(sampler, n, i, "repr-left").vectors).entries
        e = e - sigma.entries
        w = c @ (e @ v)
        left[i] = n * 2.0 * float(np.sum(w**2))
        gammas = gamma_eigenvalues(draw_batch(sampler, n, i, "repr-gamma"), ss, r)
        copies = draw_batch(sampler, m, i, "repr-copies").vectors @ c
        right[i] = 2.0 * float(np.sum(gammas * np.sum(copies**2, axis=1)))
    if np.all(left == right):
        stat, pval = 0.0, 1.0
    else:
        res = stats.ks_2samp(left, right)
        stat, pval = float(res.statistic), float(res.pvalue)
    return TwoSampleReport(stat, pval, alpha, pval > alpha, left, right)


@dataclass(frozen=True)
class MGFReport:
    u: np.ndarray
    upper_log_lhs: np.ndarray
    upper_log_rhs: np.ndarray
    lower_log_lhs: np.ndarray
    lower_log_rhs: np.ndarray
    ok: bool

    @property
    def upper_lhs(self):
        return np.exp(self.upper_log_lhs)

    @property
    def upper_rhs(self):
        return np.exp(self.upper_log_rhs)

    @property
    def lower_lhs(self):
        return np.exp(self.lower_log_lhs)

    @property
    def lower_rhs(self):
        return np.exp(self.lower_log_rhs)


MGF_EDGE = 2.0**-0.5


def mgf_domain_edge(lambdas) -> float:
    """Supremum of ``u`` with ``2 u max(lambda) < 2^{-1/2}``."""
    return MGF_EDGE / (2.0 * float(np.max(lambdas)))


def verify_mgf(lambdas, u_grid, *, slack: float = 1e-12) -> MGFReport:
    """Compare the closed-form MGFs of ``sum_k lambda_k (xi_k^2 - 1)`` and its
    negative against their sub-Gaussian bounds at every ``u`` of the grid.

    Upper tail: ``prod_k (e^{2u l}(1 - 2u l))^{-1/2} <= exp(4 u^2 sum l^2)``.
    Lower tail: ``prod_k e^{u l} / sqrt(1 + 2u l) <= exp(u^2 sum l^2)``.
    Comparisons are made on logs with absolute ``slack`` for roundoff.
    """
    lam = np.atleast_1d(np.asarray(lambdas, dtype=float))
    u = np.atleast_1d(np.asarray(u_grid, dtype=float))
    if lam.size == 0 or np.any(lam <= 0):
        raise DomainViolationError("weights must be positive")
    if np.any(u < 0):
        raise DomainViolationError("u must be non-negative")
    if np.any(2.0 * u * lam.max() >= MGF_EDGE):
        raise DomainViolationError("grid leaves the domain 2 u max(lambda) < 2^{-1/2}")
    x = 2.0 * np.outer(u, lam)
    sum_sq = float(np.sum(lam**2))
    up_lhs = -0.5 * np.sum(x + np.log1p(-x), axis=1)
    up_rhs = 4.0 * u**2 * sum_sq
    lo_lhs = np.sum(0.5 * x - 0.5 * np.log1p(x), axis=1)
    lo_rhs = u**2 * sum_sq
    ok = bool(np.all(up_lhs <= up_rhs + slack) and np.all(lo_lhs <= lo_rhs + slack))
    return MGFReport(u, up_lhs, up_rhs, lo_lhs, lo_rhs, ok)


@dataclass(frozen=True)
class EnvelopeRow:
    p: int
    n: int
    effective_rank: float
    envelope: float
    mean_op_err: float
    op_ratio: float
    A: float
    B: float
    m_hat: float
    risk_ratio: float
    xi_quantiles: dict


def calibrate_envelopes(
    ps: Sequence[int] = (50, 200, 1000),
    ns: Sequence[int] = (100, 1000, 10_000),
    replications: int = 50,
    spike_variance: float = 2.0,
    noise_variance: float = 0.1,
    seed: SeedSpec | int = 0,
    workers: int = 1,
    ts: Sequence[float] = (1.0, 2.0, 3.0),
) -> list[EnvelopeRow]:
    """Empirical ratios against the rate envelopes over a ``(p, n)`` grid.

    Reports ``mean ||S_hat - S|| / envelope``, ``m_hat n / A`` and, for each
    ``t``, the ``1 - e^{-t}`` quantile of ``|xi|`` divided by ``B sqrt(t) / n``
    where ``xi`` is the centered squared HS error.
    """
    rows = []
    for p in ps:
        model = SpikedModel(p, [spike_variance], noise_variance)
        for n in ns:
            cfg = ExperimentConfig(
                model=model, ns=(n,), replications=replications, seed=seed, workers=workers
            )
            res = run_experiment(cfg)
            sigma = cfg.covariance()
            env = risk_envelope_opnorm(sigma, n)
            op = res.column(n, "op_err")
            hs = res.column(n, "hs_sq_err")
            xi = np.abs(hs - hs.mean())
            quant = {
                float(t): float(np.quantile(xi, 1 - math.exp(-t)) / (res.B * math.sqrt(t) / n))
                for t in ts
            }
            rows.append(
                EnvelopeRow(
                    p=p,
                    n=n,
                    effective_rank=effective_rank(sigma),
                    envelope=env,
                    mean_op_err=float(op.mean()),
                    op_ratio=float(op.mean() / env),
                    A=res.A,
                    B=res.B,
                    m_hat=float(hs.mean()),
                    risk_ratio=float(hs.mean() * n / res.A),
                    xi_quantiles=quant,
                )
            )
    return rows


# -- output ------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])
    return path


def write_records(result: ExperimentResult, out: Path) -> list[Path]:
    paths = []
    for n, recs in result.records.items():
        rows = ([getattr(rec, f) for f in RECORD_FIELDS] for rec in recs)
        paths.append(write_csv(Path(out) / f"records_n{n}.csv", RECORD_FIELDS, rows))
    return paths


def write_tables(result: ExperimentResult, out: Path) -> list[Path]:
    t1, t2 = table1(result), table2(result)
    return [
        write_csv(
            Path(out) / "table1.csv",
            ["n", "dev_A_over_n", "dev_minus2bhat", "m_hat", "A_over_n"],
            ([r.n, r.dev_A_over_n, r.dev_minus2bhat, r.m_hat, r.A_over_n] for r in t1),
        ),
        write_csv(
            Path(out) / "table2.csv",
            ["n", "dev_Bn2", "dev_Vtilde", "S2_hat", "Bn2_over_n2"],
            ([r.n, r.dev_Bn2, r.dev_Vtilde, r.S2_hat, r.Bn2_over_n2] for r in t2),
        ),
    ]


def write_densities(estimates: Sequence[DensityEstimate], out: Path) -> list[Path]:
    paths = []
    for est in estimates:
        rows = zip(est.bin_centers, est.density, est.reference_density)
        paths.append(
            write_csv(
                Path(out) / f"density_{est.statistic}_n{est.n}.csv",
                ["bin_center", "density", "reference_density"],
                rows,
            )
        )
    return paths


def write_manifest(out: Path, config: ExperimentConfig, **extra) -> Path:
    """JSON manifest; the timestamp lives here and nowhere else."""
    path = Path(out) / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {
        "config": config.describe(),
        "seed": int(config.seed.master_seed),
        "seed_derivation": "SeedSequence(entropy=seed, spawn_key=(rep, crc32(role), n)) -> PCG64",
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    body.update(extra)
    path.write_text(json.dumps(_jsonable(body), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if hasattr(obj, "__dataclass_fields__"):
        return _jsonable(asdict(obj))
    return obj


def failure_summary(result: ExperimentResult) -> dict:
    return {
        "failed": len(result.failures),
        "attempted": result.n_attempted,
        "rate": result.failure_rate,
        "exceeded": result.failure_rate_exceeded,
        "examples": [asdict(f) for f in result.failures[:5]],
    }

