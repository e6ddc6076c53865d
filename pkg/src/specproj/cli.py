"""Command line interface: ``specproj {analyze,simulate,tables,densities,verify}``.

Exit codes: 0 all checks passed, 1 a check failed, 2 usage or configuration
error, 3 too many replications failed numerically.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import montecarlo as mc
from .estimators import sample_covariance
from .exceptions import GapUndefinedError, SpecProjError
from .linalg import make_symmetric, read_matrix_csv, read_numeric_csv
from .sampling import SeedSpec
from .spectral import SpikedModel, effective_rank, spectral_structure
from .theory import (
    a_r_eigensum,
    a_r_operator,
    b_r_eigensum,
    b_r_operator,
    var_linear_exact,
)

log = logging.getLogger("specproj")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

# config-file keys and how to parse them; keys mirror the long flags
CONFIG_KEYS = {
    "seed": int,
    "preset": str,
    "p": int,
    "n": lambda s: [int(x) for x in s.replace(",", " ").split()],
    "reps": int,
    "spike_var": lambda s: [float(x) for x in s.replace(",", " ").split()],
    "noise_var": float,
    "out": str,
    "workers": int,
    "matrix": str,
    "r": int,
    "sampling": str,
    "center": lambda s: s.strip().lower() in ("1", "true", "yes", "on"),
    "verify_reps": int,
    "variance_reps": int,
}


class UsageError(Exception):
    pass


def read_config_file(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return values


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value file; flags override it")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--preset", choices=["desk", "paper"])
    p.add_argument("--p", type=int, help="ambient dimension of the spiked model")
    p.add_argument("--n", type=int, action="append", help="sample size (repeatable)")
    p.add_argument("--reps", type=int, help="replications per sample size")
    p.add_argument("--spike-var", type=float, action="append", help="spike variance (repeatable)")
    p.add_argument("--noise-var", type=float)
    p.add_argument("--matrix", help="explicit covariance CSV instead of a spiked model")
    p.add_argument("--r", type=int, help="target cluster (1-based)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="worker processes (default: all cores)")
    p.add_argument("--sampling", choices=["auto", "vectors", "wishart"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specproj", description="Spectral projector perturbation toolkit"
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="spectral report for a covariance or data file")
    src = a.add_mutually_exclusive_group(required=True)
    src.add_argument("--matrix", help="covariance CSV, one matrix row per line")
    src.add_argument("--data", help="observations CSV, one observation per row")
    a.add_argument("--center", action="store_true", help="mean-center data (off-model)")
    a.add_argument("--cluster-tol", type=float, default=1e-8)
    a.add_argument("--rank-tol", type=float, default=1e-12)
    a.add_argument("--out", help="write the JSON report here instead of stdout")

    for name, text in [
        ("simulate", "run replications and write per-replication records"),
        ("tables", "risk and variance tables"),
        ("densities", "histograms and KS distances of the normalized statistics"),
        ("verify", "run the invariant suite"),
    ]:
        sp = sub.add_parser(name, help=text)
        _add_experiment_flags(sp)
        if name == "verify":
            sp.add_argument("--verify-reps", type=int, help="replications per side for the KS check")
            sp.add_argument("--variance-reps", type=int, help="replications for the variance check")
        if name in ("simulate", "tables", "densities", "verify"):
            sp.add_argument("--center", action="store_true", help=argparse.SUPPRESS)
    return parser


def resolve_settings(args: argparse.Namespace) -> dict:
    """Merge preset defaults, config file and flags (in increasing priority)."""
    file_vals = read_config_file(args.config) if getattr(args, "config", None) else {}
    flag_vals = {
        k: v
        for k, v in vars(args).items()
        if k in CONFIG_KEYS and v is not None and not (k == "center" and v is False)
    }
    merged = {**file_vals, **flag_vals}
    preset = merged.get("preset", "desk")
    base = mc.preset_config(preset)
    settings = {
        "preset": preset,
        "seed": 0,
        "p": base.model.p,
        "n": list(base.ns),
        "reps": base.replications,
        "spike_var": [float(s) for s in base.model.spike_variances],
        "noise_var": float(base.model.noise_variance),
        "out": "specproj-out",
        "workers": os.cpu_count() or 1,
        "matrix": None,
        "r": 1,
        "sampling": "auto",
        "verify_reps": 5000,
        "variance_reps": 10_000,
    }
    spiked_keys = {"p", "spike_var", "noise_var"} & set(merged)
    if merged.get("matrix") and spiked_keys:
        raise UsageError(
            f"--matrix is mutually exclusive with spiked-model parameters {sorted(spiked_keys)}"
        )
    settings.update(merged)
    return settings


def experiment_config(settings: dict) -> mc.ExperimentConfig:
    common = dict(
        r=settings["r"],
        ns=tuple(settings["n"]),
        replications=settings["reps"],
        seed=SeedSpec(settings["seed"]),
        out=Path(settings["out"]),
        workers=settings["workers"],
        sampling=settings["sampling"],
    )
    if settings.get("matrix"):
        return mc.ExperimentConfig(sigma=read_matrix_csv(settings["matrix"]), **common)
    model = SpikedModel(settings["p"], settings["spike_var"], settings["noise_var"])
    return mc.ExperimentConfig(model=model, **common)


def analyze_report(sigma, cluster_tol: float = 1e-8, rank_tol: float = 1e-12) -> dict:
    ss = spectral_structure(sigma, cluster_tol, rank_tol)
    clusters = []
    for r in range(1, ss.n_clusters + 1):
        entry = {
            "r": r,
            "mu": ss.mu(r),
            "multiplicity": ss.multiplicity(r),
            "positions": [int(i) for i in ss.cluster(r)],
        }
        try:
            entry["gap"] = ss.guarded_gap(r)
        except GapUndefinedError:
            entry["gap"] = None
            entry["note"] = "spectral gap undefined"
        if entry["gap"] is not None:
            entry["A_r"] = a_r_eigensum(ss, r)
            entry["A_r_operator"] = a_r_operator(ss, r)
            entry["B_r"] = b_r_eigensum(ss, r)
            entry["B_r_operator"] = b_r_operator(ss, r)
        clusters.append(entry)
    return {
        "dim": ss.dim,
        "eigenvalues": [float(x) for x in ss.eigenvalues],
        "effective_rank": effective_rank(ss.source),
        "op_norm": ss.op_norm,
        "trace": float(np.trace(ss.source.entries)),
        "clusters": clusters,
    }


def cmd_analyze(args) -> int:
    if args.matrix:
        sigma = read_matrix_csv(args.matrix)
        source = {"matrix": str(args.matrix)}
    else:
        data = np.array(read_numeric_csv(args.data))
        sigma = sample_covariance(data, center=args.center)
        source = {"data": str(args.data), "n": int(data.shape[0]), "centered": bool(args.center)}
        if args.center:
            log.warning("mean-centering changes the model; results are off-model")
    report = {"source": source, **analyze_report(sigma, args.cluster_tol, args.rank_tol)}
    text = json.dumps(mc._jsonable(report), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _finish(result: mc.ExperimentResult, out: Path, **extra) -> int:
    viol = result.bound_violations()
    mc.write_manifest(
        out,
        result.config,
        failures=mc.failure_summary(result),
        bound_violations=viol,
        wall_time=result.wall_time,
        A_r=result.A,
        B_r=result.B,
        **extra,
    )
    if result.failure_rate_exceeded:
        log.error("failure rate %.3f exceeds %.2f", result.failure_rate, mc.MAX_FAILURE_RATE)
        return EXIT_NUMERIC
    if viol["projector"] or viol["remainder"]:
        log.error("perturbation bound violations: %s", viol)
        return EXIT_FAIL
    return EXIT_OK


def cmd_simulate(settings) -> int:
    cfg = experiment_config(settings)
    result = mc.run_experiment(cfg)
    mc.write_records(result, cfg.out)
    return _finish(result, cfg.out)


def cmd_tables(settings) -> int:
    cfg = experiment_config(settings)
    result = mc.run_experiment(cfg)
    mc.write_tables(result, cfg.out)
    rows = {
        "table1": [vars(r) for r in mc.table1(result)],
        "table2": [vars(r) for r in mc.table2(result)],
    }
    for row in rows["table1"]:
        log.info("table1 %s", row)
    return _finish(result, cfg.out, tables=rows)


def cmd_densities(settings) -> int:
    cfg = experiment_config(settings)
    result = mc.run_experiment(cfg)
    ests = mc.densities(result)
    mc.write_densities(ests, cfg.out)
    ks = {
        f"{e.statistic}_n{e.n}": {
            "ks_to_normal": e.ks_distance,
            "mean": e.mean,
            "variance": e.variance,
            "reference": e.reference,
        }
        for e in ests
    }
    return _finish(result, cfg.out, densities=ks)


def run_verify_suite(settings) -> dict:
    """Invariant checks on the configured model plus fixed small models."""
    cfg = experiment_config(settings)
    checks = {}
    result = mc.run_experiment(cfg)
    viol = result.bound_violations()
    checks["perturbation_bounds"] = {
        **viol,
        "ok": viol["projector"] == 0 and viol["remainder"] == 0,
    }
    sigma = cfg.covariance()
    ss = spectral_structure(sigma)
    n_var = settings["variance_reps"]
    for n in cfg.ns:
        vals = mc.sample_linear_sq(sigma, cfg.r, n, n_var, cfg.seed)
        chk = mc.variance_check(vals, var_linear_exact(ss, cfg.r, n))
        checks[f"linear_variance_n{n}"] = {**vars(chk), "z": chk.z, "ok": chk.ok}
    n_repr = settings["verify_reps"]
    for label, diag in [("singleton", [2.0, 1.0, 1.0]), ("multiplicity2", [2.0, 2.0, 1.0])]:
        rep = mc.verify_representation(
            make_symmetric(np.diag(diag)), 1, 50, n_repr, SeedSpec(settings["seed"])
        )
        checks[f"representation_{label}"] = {
            "ks": rep.statistic,
            "pvalue": rep.pvalue,
            "ok": rep.accepted,
        }
    rng = np.random.default_rng(settings["seed"])
    mgf_ok = True
    for _ in range(20):
        lam = rng.uniform(0.01, 2.0, size=rng.integers(1, 10))
        edge = mc.mgf_domain_edge(lam)
        mgf_ok &= mc.verify_mgf(lam, np.linspace(0.0, edge, 101)[:-1]).ok
    checks["mgf"] = {"ok": bool(mgf_ok)}
    routes_ok = True
    for _ in range(20):
        sigma = _random_multicluster(rng)
        s2 = spectral_structure(sigma)
        for r in range(1, s2.n_clusters + 1):
            a1, a2 = a_r_operator(s2, r), a_r_eigensum(s2, r)
            b1, b2 = b_r_operator(s2, r), b_r_eigensum(s2, r)
            routes_ok &= math.isclose(a1, a2, rel_tol=1e-10) and math.isclose(b1, b2, rel_tol=1e-10)
    checks["dual_routes"] = {"ok": bool(routes_ok)}
    return {"checks": checks, "result": result}


def _random_multicluster(rng: np.random.Generator):
    k = int(rng.integers(2, 5))
    mus = np.sort(rng.uniform(0.5, 5.0, size=k))[::-1]
    mults = rng.integers(1, 4, size=k)
    diag = np.repeat(mus, mults)
    q, _ = np.linalg.qr(rng.standard_normal((diag.size, diag.size)))
    return make_symmetric((q * diag) @ q.T)


def cmd_verify(settings) -> int:
    suite = run_verify_suite(settings)
    result = suite["result"]
    checks = suite["checks"]
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "verify.json").write_text(
        json.dumps(mc._jsonable(checks), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    for name, check in checks.items():
        print(f"{'PASS' if check['ok'] else 'FAIL'}  {name}")
    code = _finish(result, out, checks=checks)
    if code != EXIT_OK:
        return code
    return EXIT_OK if all(c["ok"] for c in checks.values()) else EXIT_FAIL


COMMANDS = {
    "simulate": cmd_simulate,
    "tables": cmd_tables,
    "densities": cmd_densities,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    t0 = time.perf_counter()
    try:
        if args.command == "analyze":
            return cmd_analyze(args)
        settings = resolve_settings(args)
        code = COMMANDS[args.command](settings)
    except UsageError as exc:
        parser.error(str(exc))
    except SpecProjError as exc:
        print(f"specproj: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"specproj: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    log.info("%s finished in %.1fs", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
