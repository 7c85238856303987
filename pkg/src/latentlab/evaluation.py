"""Identifiability metrics and the approximate-recovery bound audit.

Per trained run we report: bidirectional linear R^2 (OLS with intercept, fit
on a train split, scored held-out), the orthogonality error of the fitted
linear map, the whitening deviation eps = ||Cov(y) - I||_F, the alignment gap
delta = max(0, align - 2(1-rho) tr Cov(y)), the normalized gap
D = delta / (2 rho (1-rho)), the bound D + (eps + D)^2, and the orthogonal
Procrustes recovery error min_Q E||y - Q z||^2.  The audit passes when the
recovery error is at most the bound plus a bootstrap slack (3 resampled SEs,
200 resamples); rare finite-sample violations are expected and tolerated at
the population of runs, not per run.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats as sstats

from . import rng
from .world import ParameterError

DEGENERATE_CROSSCOV = 1e-12
BOOTSTRAP_RESAMPLES = 200


def fit_linear_map(source: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """OLS with intercept: target ~ source @ A + b."""
    design = np.concatenate([source, np.ones((source.shape[0], 1))], axis=1)
    coef, _, _, _ = np.linalg.lstsq(design, target, rcond=None)
    return coef[:-1], coef[-1]


def r2_score(target: np.ndarray, pred: np.ndarray) -> float:
    """Total-variance R^2 (columns pooled); can be negative out of sample."""
    resid = float(((target - pred) ** 2).sum())
    total = float(((target - target.mean(axis=0)) ** 2).sum())
    if total <= 0.0:
        return 1.0 if resid == 0.0 else 0.0
    return 1.0 - resid / total


def linear_r2(source: np.ndarray, target: np.ndarray, split_seed: int = 0) -> float:
    """Held-out linear predictability, 50/50 split with a fixed seed."""
    n = source.shape[0]
    if n < 4:
        raise ParameterError("need at least 4 rows for a split R^2")
    perm = rng.stream(split_seed, rng.SPLIT).permutation(n)
    half = n // 2
    tr, te = perm[:half], perm[half:]
    coef, intercept = fit_linear_map(source[tr], target[tr])
    return r2_score(target[te], source[te] @ coef + intercept)


def procrustes(h_out: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, float, bool]:
    """Best orthogonal Q for min_Q mean ||h - Qz||^2 via SVD of E[h z^T].

    Returns (Q, mean squared residual, degenerate flag).
    """
    h_out = np.asarray(h_out, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if h_out.shape != z.shape or h_out.ndim != 2 or h_out.shape[1] < 1:
        raise ParameterError("procrustes needs two equal-shape (n, d) matrices")
    cross = h_out.T @ z / h_out.shape[0]
    if np.linalg.norm(cross) < DEGENERATE_CROSSCOV:
        q = np.eye(z.shape[1])
        return q, float(((h_out - z @ q.T) ** 2).sum(axis=1).mean()), True
    u, _, vt = np.linalg.svd(cross)
    q = u @ vt
    err = float(((h_out - z @ q.T) ** 2).sum(axis=1).mean())
    return q, err, False


def orthogonality_error(q_hat: np.ndarray) -> float:
    """||Q^T Q - I||_F / sqrt(n) for a fitted linear map."""
    q_hat = np.asarray(q_hat, dtype=np.float64)
    n = q_hat.shape[1]
    return float(np.linalg.norm(q_hat.T @ q_hat - np.eye(n)) / np.sqrt(n))


def covariance(y: np.ndarray) -> np.ndarray:
    centered = y - y.mean(axis=0)
    return centered.T @ centered / (y.shape[0] - 1)


def whiten(y: np.ndarray, reference: np.ndarray | None = None,
           eig_floor: float = 1e-10) -> np.ndarray:
    """Whitened copy of y (symmetric inverse-sqrt of the reference covariance)."""
    ref = y if reference is None else reference
    cov = covariance(ref)
    vals, vecs = np.linalg.eigh(cov)
    inv_sqrt = vecs @ np.diag(1.0 / np.sqrt(np.maximum(vals, eig_floor))) @ vecs.T
    return (y - ref.mean(axis=0)) @ inv_sqrt


def alignment_estimate(y: np.ndarray, y_prime: np.ndarray) -> tuple[float, float]:
    """Mean squared pair distance and its standard error."""
    d = ((y - y_prime) ** 2).sum(axis=1)
    return float(d.mean()), float(d.std(ddof=1) / np.sqrt(d.size))


@dataclass
class BoundAudit:
    eps_whitening: float
    delta_gap: float
    d_term: float
    bound_value: float
    procrustes_error: float
    procrustes_se: float
    slack: float
    passed: bool
    degenerate: bool


def bound_audit(y: np.ndarray, y_prime: np.ndarray, z: np.ndarray, rho: float,
                align_loss: float | None = None, boot_seed: int = 0,
                n_boot: int = BOOTSTRAP_RESAMPLES) -> BoundAudit:
    """Audit recovery error <= D + (eps + D)^2 on centered embeddings."""
    y = y - y.mean(axis=0)
    y_prime = y_prime - y_prime.mean(axis=0)
    cov = covariance(y)
    n = y.shape[1]
    eps = float(np.linalg.norm(cov - np.eye(n)))
    if align_loss is None:
        align_loss, _ = alignment_estimate(y, y_prime)
    delta = max(0.0, align_loss - 2.0 * (1.0 - rho) * float(np.trace(cov)))
    d_term = delta / (2.0 * rho * (1.0 - rho))
    bound = d_term + (eps + d_term) ** 2
    _, err, degenerate = procrustes(y, z)
    gen = rng.stream(boot_seed, rng.BOOTSTRAP)
    count = y.shape[0]
    boots = np.empty(n_boot)
    for i in range(n_boot):
        idx = gen.integers(0, count, size=count)
        _, boots[i], _ = procrustes(y[idx], z[idx])
    se = float(boots.std(ddof=1))
    slack = 3.0 * se
    return BoundAudit(eps, delta, d_term, bound, err, se, slack,
                      passed=err <= bound + slack, degenerate=degenerate)


# ---------------------------------------------------------------------------
# per-run report, CSV/JSON persistence, aggregation
# ---------------------------------------------------------------------------

REPORT_COLUMNS = [
    "run_id", "seed", "config_hash", "method", "channel", "mixing", "n_latent",
    "rho", "lam", "alpha", "steps",
    "r2_z_to_h", "r2_h_to_z", "r2_z_to_x", "r2_x_to_z",
    "orth_error", "eps_whitening", "delta_gap", "d_term", "bound_value",
    "procrustes_error", "bound_slack", "bound_pass",
    "align_eval", "align_white", "align_white_se",
    "final_align", "final_reg", "final_total",
    "grad_underflow_step", "diverged_step", "converged",
]


@dataclass
class EvalReport:
    run_id: str
    seed: int
    config_hash: str
    method: str
    channel: str
    mixing: str
    n_latent: int
    rho: float
    lam: float
    alpha: float
    steps: int
    r2_z_to_h: float
    r2_h_to_z: float
    r2_z_to_x: float
    r2_x_to_z: float
    orth_error: float
    eps_whitening: float
    delta_gap: float
    d_term: float
    bound_value: float
    procrustes_error: float
    bound_slack: float
    bound_pass: bool
    align_eval: float
    align_white: float
    align_white_se: float
    final_align: float
    final_reg: float
    final_total: float
    grad_underflow_step: int = -1
    diverged_step: int = -1
    converged: bool = False

    def __post_init__(self) -> None:
        if self.delta_gap < 0:
            raise ParameterError("delta_gap must be clamped to >= 0")
        recomputed = self.d_term + (self.eps_whitening + self.d_term) ** 2
        if not np.isclose(recomputed, self.bound_value, rtol=1e-12, atol=1e-12):
            raise ParameterError("bound_value must equal D + (eps + D)^2")

    def to_row(self) -> list:
        d = asdict(self)
        return [d[c] for c in REPORT_COLUMNS]


def append_reports_csv(reports, path) -> None:
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(REPORT_COLUMNS)
        for rep in reports:
            writer.writerow(rep.to_row())


def write_report_json(report: EvalReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(asdict(report), fh, indent=1, sort_keys=True)


def read_reports_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def aggregate_reports(reports, r2_threshold: float = 0.9) -> dict:
    """Summary table plus Spearman correlation of losses vs R^2.

    Restricted to converged runs (held-out R^2 above the threshold), matching
    how loss-predictivity is assessed.
    """
    rows = [r for r in reports]
    summary = {
        "n_runs": len(rows),
        "rows": [
            {"run_id": r.run_id, "method": r.method, "r2_h_to_z": r.r2_h_to_z,
             "final_align": r.final_align, "final_reg": r.final_reg,
             "bound_pass": r.bound_pass}
            for r in rows
        ],
    }
    conv = [r for r in rows if r.r2_h_to_z > r2_threshold]
    summary["n_converged"] = len(conv)
    if len(conv) >= 3:
        align = np.array([r.final_align for r in conv])
        r2 = np.array([r.r2_h_to_z for r in conv])
        if np.ptp(align) > 0 and np.ptp(r2) > 0:
            corr, _ = sstats.spearmanr(align, r2)
            summary["spearman_align_vs_r2"] = float(corr)
    return summary
