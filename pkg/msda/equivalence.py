"""
Equivalence module - binary-case checks relating the two-class direction
to the ℓ1 least-squares (DSDA) and constrained (ROAD) formulations.

For K = 2 the group penalty is a plain ℓ1 penalty and

    θ̂_DSDA(a·λ) = s · θ̂(λ),   s = m / (1 + m·c0),   m = n1·n2 / (n(n−2)),
    a = 2·n1·n2 / (n(1 + m·c0)),   c0 = θ̂(λ)ᵀ(μ̂2 − μ̂1),

while θ̂(λ)/c0 solves the ROAD problem at penalty λ/c0.
"""

import math
from dataclasses import asdict, dataclass
from typing import List, Optional

import numpy as np
import pandas as pd
from loguru import logger

from .data_model import LabeledDataset
from .errors import DataError
from .solver import SolverOptions, lambda_grid, lambda_max, solve
from .suffstats import SuffStats, compute_stats

DSDA_KKT_TOL = 1e-8


@dataclass
class DSDAResult:
    theta: np.ndarray
    intercept: float
    lam: float
    sweeps: int
    kkt_residual: float
    converged: bool


def _soft(v: float, t: float) -> float:
    if v > t:
        return v - t
    if v < -t:
        return v + t
    return 0.0


def dsda_gram(data: LabeledDataset):
    """Centered Gram matrix XcᵀXc and Xcᵀyc for the response coded 1/2."""
    X = data.features
    y = data.labels.astype(float)
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    return Xc.T @ Xc, Xc.T @ yc


def dsda_lambda_max(data: LabeledDataset) -> float:
    _, b = dsda_gram(data)
    return 2.0 * float(np.max(np.abs(b)))


def dsda_kkt_residual(G: np.ndarray, b: np.ndarray, theta: np.ndarray, lam: float) -> float:
    g = 2.0 * (G @ theta - b)
    active = theta != 0
    live = np.diag(G) > 0
    residual = 0.0
    if np.any(active):
        residual = max(residual, float(np.max(np.abs(g[active] + lam * np.sign(theta[active])))))
    inactive = ~active & live
    if np.any(inactive):
        residual = max(residual, float(np.max(np.abs(g[inactive]) - lam, initial=0.0)))
    return residual


def solve_dsda(data: LabeledDataset, lam: float, max_sweeps: int = 100_000,
               kkt_tol: float = DSDA_KKT_TOL) -> DSDAResult:
    """ℓ1-penalized least squares of the 1/2-coded labels on X, with intercept.

    Minimizes Σ_i (Y_i − θ0 − X_iᵀθ)² + λ‖θ‖₁ by cyclic coordinate descent.
    The intercept is profiled out by centering.
    """
    if data.K != 2:
        raise DataError(f"DSDA needs exactly two classes, got K={data.K}")
    if lam < 0:
        raise DataError("lambda must be >= 0")

    G, b = dsda_gram(data)
    diag = np.diag(G)
    theta = np.zeros(data.p)
    Gtheta = np.zeros(data.p)
    half = lam / 2.0
    sweeps = 0
    residual = math.inf

    while sweeps < max_sweeps:
        biggest = 0.0
        for j in range(data.p):
            if diag[j] <= 0.0:
                continue
            old = theta[j]
            new = _soft(b[j] - Gtheta[j] + diag[j] * old, half) / diag[j]
            if new != old:
                Gtheta += G[:, j] * (new - old)
                theta[j] = new
                biggest = max(biggest, abs(new - old))
        sweeps += 1
        if biggest <= 1e-14 * (1.0 + float(np.max(np.abs(theta)))):
            residual = dsda_kkt_residual(G, b, theta, lam)
            if residual <= kkt_tol:
                break
            # drift in the running product; rebuild it and keep sweeping
            Gtheta = G @ theta
            if biggest == 0.0:
                break

    converged = residual <= kkt_tol
    if not converged:
        residual = dsda_kkt_residual(G, b, theta, lam)
        logger.warning(f"DSDA at lambda={lam:.6g} stopped with KKT residual {residual:.3g}")
    intercept = float(data.labels.mean() - data.features.mean(axis=0) @ theta)
    return DSDAResult(theta, intercept, float(lam), sweeps, residual, converged)


def road_kkt_residual(stats: SuffStats, theta: np.ndarray, lam: float) -> float:
    """Stationarity residual of  min ½θᵀΣ̂θ + λ‖θ‖₁  s.t. θᵀδ̂ = 1.

    The multiplier is the least-squares fit on the active coordinates; the
    result is the largest of the active stationarity gap, the inactive
    subgradient excess and the constraint violation.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    delta = stats.delta[:, 0]
    grad = stats.cov_matmul(theta)
    active = theta != 0
    live = ~stats.zero_variance

    v = grad[active] + lam * np.sign(theta[active])
    d = delta[active]
    nu = float(d @ v / (d @ d)) if np.any(d) else 0.0

    residual = abs(float(theta @ delta) - 1.0)
    if np.any(active):
        residual = max(residual, float(np.max(np.abs(v - nu * d))))
    inactive = ~active & live
    if np.any(inactive):
        excess = np.abs(grad[inactive] - nu * delta[inactive]) - lam
        residual = max(residual, float(np.max(excess, initial=0.0)))
    return residual


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


@dataclass
class EquivalenceReport:
    lam: float
    c0: float
    c1: float
    a: float                    # n|c1|/|c0|
    a_exact: float
    dsda_lambda: float
    cosine_msda_dsda: float
    cosine_stated: float
    road_kkt_residual: float
    skipped: bool = False


def _skipped(lam: float) -> EquivalenceReport:
    nan = float("nan")
    return EquivalenceReport(lam, 0.0, nan, nan, nan, nan, nan, nan, nan, skipped=True)


def check_proposition1(data: LabeledDataset, lambdas: Optional[np.ndarray] = None,
                       n_lambda: int = 20, lambda_min_ratio: float = 0.05,
                       tol: float = 1e-12, max_sweeps: int = 100_000) -> List[EquivalenceReport]:
    """Checks the DSDA and ROAD equivalences of the two-class solution along a grid.

    The two-class problem is solved on the raw features. λ values whose
    solution is zero (c0 = 0) are reported as skipped.
    """
    if data.K != 2:
        raise DataError(f"the equivalence check needs K = 2, got K={data.K}")

    stats = compute_stats(data, cov_mode="dense")
    if lambdas is None:
        lambdas = lambda_grid(lambda_max(stats), n_lambda, lambda_min_ratio)
    lambdas = np.asarray(lambdas, dtype=float)

    n1, n2 = (int(c) for c in data.class_counts)
    n = data.n
    m = n1 * n2 / (n * (n - 2))
    delta = stats.delta[:, 0]

    reports = []
    for lam in lambdas:
        coef, diag = solve(stats, SolverOptions(lam=float(lam), tol=tol, max_sweeps=max_sweeps))
        theta = coef.theta[:, 0]
        c0 = float(theta @ delta)
        if c0 == 0.0:
            logger.debug(f"lambda={lam:.6g}: zero solution, skipped")
            reports.append(_skipped(float(lam)))
            continue

        a_exact = 2.0 * n1 * n2 / (n * (1.0 + m * c0))
        exact = solve_dsda(data, a_exact * lam)

        c1 = float(solve_dsda(data, lam).theta @ delta)
        a_stated = n * abs(c1) / abs(c0)
        cosine_stated = float("nan")
        if a_stated > 0:
            cosine_stated = _cosine(theta, solve_dsda(data, a_stated * lam).theta)

        report = EquivalenceReport(
            lam=float(lam),
            c0=c0,
            c1=c1,
            a=a_stated,
            a_exact=a_exact,
            dsda_lambda=a_exact * lam,
            cosine_msda_dsda=_cosine(theta, exact.theta),
            cosine_stated=cosine_stated,
            road_kkt_residual=road_kkt_residual(stats, theta / c0, lam / abs(c0)),
        )
        logger.debug(f"lambda={lam:.6g}: cosine={report.cosine_msda_dsda:.12f} "
                     f"road={report.road_kkt_residual:.3g}")
        reports.append(report)

    checked = [r for r in reports if not r.skipped]
    if checked:
        logger.info(f"Equivalence over {len(checked)} lambdas: min cosine "
                    f"{min(r.cosine_msda_dsda for r in checked):.12f}, max ROAD residual "
                    f"{max(r.road_kkt_residual for r in checked):.3g}")
    return reports


def reports_frame(reports: List[EquivalenceReport]) -> pd.DataFrame:
    frame = pd.DataFrame([asdict(r) for r in reports])
    if frame.empty:
        frame = pd.DataFrame(columns=list(EquivalenceReport.__dataclass_fields__))
    frame = frame.rename(columns={"lam": "lambda"})
    frame["skipped"] = frame["skipped"].astype(int)
    return frame


def random_binary_dataset(n: int = 100, p: int = 50, seed: int = 42, shift: float = 0.8,
                          informative: int = 5) -> LabeledDataset:
    """Gaussian two-class data; class 2 is shifted on the first features."""
    if n < 4 or p < 1:
        raise DataError("need n >= 4 and p >= 1")
    rng = np.random.default_rng(seed)
    labels = np.repeat([1, 2], [n // 2, n - n // 2])
    X = rng.standard_normal((n, p))
    X[labels == 2, :min(informative, p)] += shift
    return LabeledDataset(X, labels, 2)
