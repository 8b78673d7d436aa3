"""Ensemble runs, moment estimation and theory-vs-experiment reports.

Sample i of an ensemble is synthesized from a seed derived by a splitmix64
hash of (base_seed, i, attempt), so results are bit-identical for any
parallelism and resampling is reproducible. Non-Morse samples (degeneracy
floor) and samples with a critical value on a threshold endpoint are
redrawn with the attempt counter bumped; both events land in the audit.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import __version__
from .analytic import (
    ThresholdInterval,
    expected_epc_interval,
    interval_weight,
    leading_covariance,
)
from .harmonics import GridSamples, evaluate_values, synthesize
from .topology import (
    CompletenessError,
    DegenerateSampleError,
    SearchConfig,
    build_triangulation,
    epc_mesh,
    epc_morse,
    find_critical_points,
)

_MASK64 = (1 << 64) - 1
_MAX_RESAMPLE_ATTEMPTS = 16
_ENDPOINT_TOL = 1e-9


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(base_seed: int, *parts: int) -> int:
    """Order-independent 64-bit seed mix of (base_seed, parts...)."""
    state = base_seed & _MASK64
    for p in parts:
        state = _splitmix64(state ^ (p & _MASK64))
    return state


def normalize_thresholds(items) -> tuple[ThresholdInterval, ...]:
    """Reals become half-lines [u, inf); pairs become intervals."""
    out = []
    for item in items:
        if isinstance(item, ThresholdInterval):
            out.append(item)
        elif np.isscalar(item):
            out.append(ThresholdInterval.half_line(float(item)))
        else:
            lo, hi = item
            out.append(ThresholdInterval(float(lo), float(hi)))
    return tuple(out)


@dataclass(frozen=True)
class EnsembleConfig:
    ell: int
    n_samples: int
    base_seed: int
    thresholds: tuple[ThresholdInterval, ...]
    method: str = "morse"
    oversampling: int = 8
    parallelism: int = 0  # 0 = auto
    search: SearchConfig = dc_field(default_factory=SearchConfig)

    def __post_init__(self):
        object.__setattr__(self, "thresholds", normalize_thresholds(self.thresholds))
        if self.n_samples < 2:
            raise ValueError("need at least 2 samples")
        if not self.thresholds:
            raise ValueError("thresholds must be non-empty")
        if self.method not in ("morse", "mesh", "both"):
            raise ValueError("method must be morse, mesh or both")

    @property
    def methods(self) -> tuple[str, ...]:
        return ("morse", "mesh") if self.method == "both" else (self.method,)

    @property
    def primary_method(self) -> str:
        return self.methods[0]


@dataclass(frozen=True)
class EnsembleResult:
    config: EnsembleConfig
    chi: dict
    seeds: tuple[int, ...]
    audit: tuple[dict, ...]

    def __post_init__(self):
        want = (self.config.n_samples, len(self.config.thresholds))
        for method, matrix in self.chi.items():
            if matrix.shape != want:
                raise ValueError(f"{method} chi matrix has shape {matrix.shape}, want {want}")

    def matrix(self, method: str | None = None) -> np.ndarray:
        return self.chi[method or self.config.primary_method]


_TRI_CACHE: dict = {}


def _cached_triangulation(ell: int, oversampling: int):
    key = (ell, oversampling)
    if key not in _TRI_CACHE:
        _TRI_CACHE[key] = build_triangulation(ell, oversampling)
    return _TRI_CACHE[key]


def _finite_endpoints(thresholds) -> np.ndarray:
    pts = [e for t in thresholds for e in (t.lower, t.upper) if math.isfinite(e)]
    return np.array(pts)


def _one_sample(args):
    config, index = args
    audit: list[dict] = []
    endpoints = _finite_endpoints(config.thresholds)
    attempt = 0
    while True:
        if attempt >= _MAX_RESAMPLE_ATTEMPTS:
            raise RuntimeError(f"sample {index}: resample limit reached")
        seed = derive_seed(config.base_seed, index, attempt)
        field = synthesize(config.ell, seed)
        chis: dict = {}
        if "morse" in config.methods:
            try:
                points = find_critical_points(field, config.search)
            except DegenerateSampleError as exc:
                audit.append(
                    {"sample": index, "event": "resample-degenerate",
                     "seed": seed, "detail": str(exc)}
                )
                attempt += 1
                continue
            except CompletenessError as exc:
                raise CompletenessError(f"sample {index} (seed {seed}): {exc}") from exc
            values = np.array([p.value for p in points])
            if endpoints.size and values.size:
                gap = np.abs(values[:, None] - endpoints[None, :]).min()
                if gap <= _ENDPOINT_TOL:
                    audit.append(
                        {"sample": index, "event": "resample-endpoint",
                         "seed": seed, "detail": f"critical value within {gap:.1e} of a threshold"}
                    )
                    attempt += 1
                    continue
            chis["morse"] = [epc_morse(points, t).chi for t in config.thresholds]
        if "mesh" in config.methods:
            tri = _cached_triangulation(config.ell, config.oversampling)
            vals = evaluate_values(field, tri.thetas, tri.phis)
            samples = GridSamples(geometry=tri, thetas=tri.thetas, phis=tri.phis, values=vals)
            chis["mesh"] = [epc_mesh(samples, t).chi for t in config.thresholds]
        if config.method == "both":
            for j, t in enumerate(config.thresholds):
                if chis["morse"][j] != chis["mesh"][j]:
                    audit.append(
                        {"sample": index, "event": "method-disagreement", "seed": seed,
                         "detail": f"{t.label()}: morse={chis['morse'][j]} mesh={chis['mesh'][j]}"}
                    )
        return index, seed, chis, audit


def run_ensemble(config: EnsembleConfig) -> EnsembleResult:
    """Measure chi for every (sample, threshold); pure function of the config.

    The per-sample work is embarrassingly parallel; results are gathered and
    sorted by sample index, so any parallelism setting gives identical
    output. Completeness failures abort the run with the offending sample
    and seed named.
    """
    n = config.n_samples
    jobs = [(config, i) for i in range(n)]
    workers = config.parallelism
    if workers == 0:
        workers = max(1, min(8, os.cpu_count() or 1))
    if workers > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_one_sample, jobs, chunksize=max(1, n // (workers * 4))))
    else:
        raw = [_one_sample(job) for job in jobs]
    raw.sort(key=lambda item: item[0])
    seeds = tuple(item[1] for item in raw)
    audit = tuple(entry for item in raw for entry in item[3])
    chi = {
        method: np.array([item[2][method] for item in raw], dtype=np.int64)
        for method in config.methods
    }
    return EnsembleResult(config=config, chi=chi, seeds=seeds, audit=audit)


# ---------------------------------------------------------------------------
# Moment estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentEstimate:
    """Column means/variances plus pair covariances, with standard errors.

    Mean SEs are s/sqrt(n); second-moment SEs are leave-one-out jackknife,
    which behaves better than normal-theory SEs for the integer-valued,
    heavy-ish-tailed chi at moderate n.
    """

    n: int
    means: np.ndarray
    variances: np.ndarray
    se_mean: np.ndarray
    se_variance: np.ndarray
    degenerate: np.ndarray
    pairs: tuple
    covariances: np.ndarray
    correlations: np.ndarray
    se_covariance: np.ndarray


def _jackknife_se(loo: np.ndarray) -> float:
    n = loo.shape[0]
    return math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))


def estimate_moments(
    result: EnsembleResult, pairs=(), method: str | None = None
) -> MomentEstimate:
    """Unbiased sample moments of the chi matrix, with jackknife SEs."""
    x = result.matrix(method).astype(float)
    n, _ = x.shape
    if n < 2:
        raise ValueError("need at least 2 samples")
    means = x.mean(axis=0)
    variances = x.var(axis=0, ddof=1)
    degenerate = variances == 0.0
    se_mean = np.sqrt(variances / n)

    s1 = x.sum(axis=0)
    s2 = (x * x).sum(axis=0)
    if n > 2:
        loo_mean = (s1[None, :] - x) / (n - 1)
        loo_var = (s2[None, :] - x * x - (n - 1) * loo_mean**2) / (n - 2)
        se_variance = np.array([_jackknife_se(loo_var[:, j]) for j in range(x.shape[1])])
    else:  # jackknife of a variance needs n >= 3
        se_variance = np.full(x.shape[1], math.nan)

    pairs = tuple((int(i), int(j)) for i, j in pairs)
    covs, corrs, se_covs = [], [], []
    for i, j in pairs:
        xi, xj = x[:, i], x[:, j]
        cov = float(np.sum((xi - means[i]) * (xj - means[j])) / (n - 1))
        denom = variances[i] * variances[j]
        corrs.append(cov / math.sqrt(denom) if denom > 0 else math.nan)
        covs.append(cov)
        if n > 2:
            sxy = float(np.sum(xi * xj))
            loo_mi = (s1[i] - xi) / (n - 1)
            loo_mj = (s1[j] - xj) / (n - 1)
            loo_cov = (sxy - xi * xj - (n - 1) * loo_mi * loo_mj) / (n - 2)
            se_covs.append(_jackknife_se(loo_cov))
        else:
            se_covs.append(math.nan)
    return MomentEstimate(
        n=n,
        means=means,
        variances=variances,
        se_mean=se_mean,
        se_variance=se_variance,
        degenerate=degenerate,
        pairs=pairs,
        covariances=np.array(covs),
        correlations=np.array(corrs),
        se_covariance=np.array(se_covs),
    )


# ---------------------------------------------------------------------------
# Theory comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    quantity: str
    u_or_pair: str
    empirical: float
    theory: float
    stderr_or_ratio: float
    z_or_band: float
    status: str


_SUBLEADING_WEIGHT_TOL = 1e-8


def compare_to_theory(estimate: MomentEstimate, config: EnsembleConfig) -> list[ReportRow]:
    """Empirical vs predicted rows for every threshold and requested pair.

    Means are compared to the exact expectation (z = (emp - theory)/SE).
    Variances are compared to the leading-order prediction via a ratio;
    thresholds where the leading term vanishes are tagged
    subleading-dominated instead of reporting a meaningless ratio.
    Correlations carry the predicted sign of the weight product.
    """
    rows = []
    thresholds = config.thresholds
    for j, interval in enumerate(thresholds):
        theory_mean = expected_epc_interval(config.ell, interval)
        se = float(estimate.se_mean[j])
        z = (float(estimate.means[j]) - theory_mean) / se if se > 0 else math.nan
        rows.append(
            ReportRow(
                "mean", interval.label(), float(estimate.means[j]),
                theory_mean, se, z,
                "degenerate" if estimate.degenerate[j] else "ok",
            )
        )
        theory_var = leading_covariance(config.ell, interval, interval)
        emp_var = float(estimate.variances[j])
        sev = float(estimate.se_variance[j])
        if abs(interval_weight(interval)) < _SUBLEADING_WEIGHT_TOL:
            rows.append(
                ReportRow("variance", interval.label(), emp_var, theory_var,
                          math.nan, math.nan, "subleading-dominated")
            )
        else:
            zv = (emp_var - theory_var) / sev if sev > 0 else math.nan
            rows.append(
                ReportRow("variance", interval.label(), emp_var, theory_var,
                          emp_var / theory_var, zv, "ok")
            )
    for k, (i, j) in enumerate(estimate.pairs):
        ti, tj = thresholds[i], thresholds[j]
        label = f"{ti.label()}|{tj.label()}"
        theory_cov = leading_covariance(config.ell, ti, tj)
        emp_cov = float(estimate.covariances[k])
        ratio = emp_cov / theory_cov if theory_cov != 0 else math.nan
        rows.append(
            ReportRow("covariance", label, emp_cov, theory_cov, ratio,
                      (emp_cov - theory_cov) / float(estimate.se_covariance[k])
                      if estimate.se_covariance[k] > 0 else math.nan,
                      "ok" if theory_cov != 0 else "subleading-dominated")
        )
        sign = math.copysign(1.0, interval_weight(ti) * interval_weight(tj))
        emp_corr = float(estimate.correlations[k])
        match = "ok" if math.copysign(1.0, emp_corr) == sign else "sign-mismatch"
        rows.append(
            ReportRow("correlation", label, emp_corr, sign, math.nan, math.nan,
                      match if math.isfinite(emp_corr) else "degenerate")
        )
    return rows


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _column_labels(config: EnsembleConfig) -> list[str]:
    labels = []
    for method in config.methods:
        prefix = f"{method}|" if config.method == "both" else ""
        labels.extend(prefix + t.label() for t in config.thresholds)
    return labels


def write_runs_csv(result: EnsembleResult, path) -> None:
    """Chi matrix as CSV plus a JSON sidecar (config, seeds, audit, version)."""
    config = result.config
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["seed_index"] + _column_labels(config))
        for i in range(config.n_samples):
            row = [i]
            for method in config.methods:
                row.extend(int(v) for v in result.chi[method][i])
            writer.writerow(row)
    sidecar = {
        "config": {
            "ell": config.ell,
            "n_samples": config.n_samples,
            "base_seed": config.base_seed,
            "thresholds": [[t.lower, t.upper] for t in config.thresholds],
            "method": config.method,
            "oversampling": config.oversampling,
        },
        "seeds": list(result.seeds),
        "audit": list(result.audit),
        "version": __version__,
    }
    with open(_sidecar_path(path), "w", newline="\n") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sidecar_path(path) -> str:
    base, _ = os.path.splitext(str(path))
    return base + ".json"


def read_runs_csv(path) -> EnsembleResult:
    """Rebuild an EnsembleResult from a runs CSV and its JSON sidecar."""
    with open(_sidecar_path(path)) as fh:
        sidecar = json.load(fh)
    cfg = sidecar["config"]
    config = EnsembleConfig(
        ell=cfg["ell"],
        n_samples=cfg["n_samples"],
        base_seed=cfg["base_seed"],
        thresholds=tuple(ThresholdInterval(lo, hi) for lo, hi in cfg["thresholds"]),
        method=cfg["method"],
        oversampling=cfg["oversampling"],
    )
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=np.int64)
    n_thr = len(config.thresholds)
    chi = {}
    for k, method in enumerate(config.methods):
        chi[method] = data[:, 1 + k * n_thr : 1 + (k + 1) * n_thr]
    return EnsembleResult(
        config=config,
        chi=chi,
        seeds=tuple(sidecar["seeds"]),
        audit=tuple(sidecar["audit"]),
    )


def write_report_csv(rows: list[ReportRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["quantity", "u_or_pair", "empirical", "theory",
             "stderr_or_ratio", "z_or_band", "status"]
        )
        for row in rows:
            writer.writerow(
                [row.quantity, row.u_or_pair, _fmt(row.empirical), _fmt(row.theory),
                 _fmt(row.stderr_or_ratio), _fmt(row.z_or_band), row.status]
            )
