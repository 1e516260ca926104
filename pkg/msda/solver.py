"""
Solver module - group-lasso penalized discriminant directions.

Minimizes  Σ_k { ½ θ_kᵀ Σ̂ θ_k − δ̂ᵏᵀ θ_k } + λ Σ_j ‖θ_·j‖  over the p×(K−1)
matrix Θ by cyclic exact minimization over one feature row at a time.
"""

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from .errors import DataError
from .suffstats import SuffStats


@dataclass(frozen=True)
class CoefMatrix:
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float, copy=True)
        if theta.ndim != 2:
            raise DataError("coefficients must be a p x (K-1) matrix")
        if not np.all(np.isfinite(theta)):
            raise DataError("coefficients must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def zeros(cls, p: int, n_directions: int) -> "CoefMatrix":
        return cls(np.zeros((p, n_directions)))

    @property
    def p(self) -> int:
        return self.theta.shape[0]

    @property
    def active_blocks(self) -> np.ndarray:
        return np.flatnonzero(np.any(self.theta != 0.0, axis=1))

    @property
    def active_set(self) -> frozenset:
        return frozenset(int(j) for j in self.active_blocks)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.theta)

    def unscaled(self, scale: Optional[np.ndarray]) -> "CoefMatrix":
        """Coefficients for raw features when fitted on features / scale."""
        if scale is None:
            return self
        return CoefMatrix(self.theta / scale[:, None])


@dataclass
class SolverOptions:
    lam: float = 0.0
    tol: float = 1e-6
    max_sweeps: int = 1000
    active_set: bool = True
    track_objective: bool = False

    def validate(self) -> None:
        if not self.tol > 0:
            raise DataError("tol must be > 0")
        if self.max_sweeps < 1:
            raise DataError("max_sweeps must be >= 1")
        if not self.lam >= 0:
            raise DataError("lambda must be >= 0")


@dataclass
class SolveDiagnostics:
    lam: float
    sweeps: int
    max_change: float
    converged: bool
    kkt_residual: float
    n_active: int
    objective_trace: List[float] = field(default_factory=list)


class SolverState:
    """Working copy of Θ plus the cache u = Σ̂Θ."""

    def __init__(self, theta: np.ndarray, u: np.ndarray):
        self.theta = theta
        self.u = u
        self.sweep_count = 0
        self.last_max_change = math.inf
        self.last_block_change = 0.0

    @classmethod
    def start(cls, stats: SuffStats, warm_start: Optional[CoefMatrix] = None) -> "SolverState":
        shape = (stats.p, stats.K - 1)
        if warm_start is None:
            theta = np.zeros(shape)
        else:
            if warm_start.theta.shape != shape:
                raise DataError(f"warm start has shape {warm_start.theta.shape}, expected {shape}")
            theta = np.array(warm_start.theta, copy=True)
            theta[stats.zero_variance] = 0.0
        state = cls(theta, np.zeros(shape))
        state.resync(stats)
        return state

    def resync(self, stats: SuffStats) -> None:
        if np.any(self.theta):
            self.u = np.array(stats.cov_matmul(self.theta), dtype=float)
        else:
            self.u = np.zeros_like(self.theta)

    def coef(self) -> CoefMatrix:
        return CoefMatrix(self.theta)

    def active_blocks(self) -> np.ndarray:
        return np.flatnonzero(np.any(self.theta != 0.0, axis=1))


@dataclass
class SolutionPath:
    lambdas: np.ndarray
    solutions: List[CoefMatrix]
    kkt_residuals: List[float]
    sweeps: List[int]
    diagnostics: List[SolveDiagnostics] = field(default_factory=list)
    truncated: bool = False

    def __len__(self):
        return len(self.lambdas)

    @property
    def active_counts(self) -> List[int]:
        return [len(c.active_blocks) for c in self.solutions]

    @property
    def converged(self) -> List[bool]:
        return [d.converged for d in self.diagnostics]

    def head(self, length: int) -> "SolutionPath":
        """The first `length` points; shorter than the path marks it truncated."""
        if length >= len(self):
            return self
        return SolutionPath(self.lambdas[:length], self.solutions[:length], self.kkt_residuals[:length],
                            self.sweeps[:length], self.diagnostics[:length], truncated=True)

    def unscaled(self, scale: Optional[np.ndarray]) -> "SolutionPath":
        if scale is None:
            return self
        return replace(self, solutions=[c.unscaled(scale) for c in self.solutions])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "lambda": self.lambdas,
            "n_active": self.active_counts,
            "kkt_residual": self.kkt_residuals,
            "sweeps": self.sweeps,
            "converged": [int(c) for c in self.converged] if self.diagnostics else 1,
        })


def group_soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    """v·(1 − t/‖v‖)₊, with 0 when ‖v‖ = 0."""
    v = np.asarray(v, dtype=float)
    norm = math.sqrt(float(v @ v))
    if norm <= t:
        return np.zeros_like(v)
    return v * (1.0 - t / norm)


def block_update(state: SolverState, stats: SuffStats, j: int, lam: float) -> SolverState:
    """Exact minimization over row j of Θ with the other rows held fixed.

    θ̃_·j = (δ̂_·j − Σ_{l≠j} σ̂_lj θ_·l) / σ̂_jj, then the group soft-threshold
    at λ/σ̂_jj. The change is written into `state.last_block_change`.
    """
    old = state.theta[j]
    if stats.zero_variance[j]:
        new = np.zeros_like(old)
    else:
        sjj = stats.cov_diag[j]
        # numerator of θ̃; thresholding it at λ is the same as θ̃ at λ/σ̂_jj
        z = stats.delta[j] - state.u[j] + sjj * old
        new = group_soft_threshold(z, lam) / sjj

    diff = new - old
    change = float(np.max(np.abs(diff))) if diff.size else 0.0
    if change > 0.0:
        state.u += np.outer(stats.cov_column(j), diff)
        state.theta[j] = new
    state.last_block_change = change
    return state


def objective(stats: SuffStats, theta, lam: float) -> float:
    theta = theta.theta if isinstance(theta, CoefMatrix) else np.asarray(theta, dtype=float)
    if theta.shape != (stats.p, stats.K - 1):
        raise DataError("coefficient shape does not match the statistics")
    if not np.any(theta):
        return 0.0
    quad = 0.5 * float(np.sum(theta * stats.cov_matmul(theta)))
    lin = float(np.sum(stats.delta * theta))
    return quad - lin + lam * float(np.sum(np.linalg.norm(theta, axis=1)))


def lambda_max(stats: SuffStats) -> float:
    """Smallest λ at which Θ = 0 is optimal."""
    norms = np.linalg.norm(stats.delta, axis=1)
    norms = norms[~stats.zero_variance]
    return float(norms.max()) if norms.size else 0.0


def kkt_residual(stats: SuffStats, theta, lam: float) -> float:
    """Distance of Θ from the optimality conditions; 0 iff Θ is optimal.

    With g = Σ̂Θ − δ̂: active rows need g_·j + λθ_·j/‖θ_·j‖ = 0 (sup norm),
    inactive rows need ‖g_·j‖ ≤ λ. Zero-variance rows are not checked.
    """
    theta = theta.theta if isinstance(theta, CoefMatrix) else np.asarray(theta, dtype=float)
    g = stats.cov_matmul(theta) - stats.delta
    norms = np.linalg.norm(theta, axis=1)
    checked = ~stats.zero_variance
    active = (norms > 0) & checked
    inactive = (norms == 0) & checked

    residual = 0.0
    if active.any():
        r = g[active] + lam * theta[active] / norms[active][:, None]
        residual = max(residual, float(np.max(np.abs(r))))
    if inactive.any():
        excess = np.linalg.norm(g[inactive], axis=1) - lam
        residual = max(residual, float(np.max(excess, initial=0.0)))
    return residual


def _sweep(state: SolverState, stats: SuffStats, blocks, lam: float) -> float:
    biggest = 0.0
    for j in blocks:
        block_update(state, stats, j, lam)
        if state.last_block_change > biggest:
            biggest = state.last_block_change
    state.sweep_count += 1
    state.last_max_change = biggest
    return biggest


def _active_sweeps(state: SolverState, stats: SuffStats, lam: float, options: SolverOptions,
                   trace: List[float]) -> float:
    """Sweeps over the active rows only, until they settle or the budget runs out.

    Rows outside the active set are zero, so the active part of u only needs
    the active submatrix of Σ̂. The full u is rebuilt afterwards.
    """
    A = state.active_blocks()
    if A.size == 0:
        return 0.0
    S = np.column_stack([stats.cov_column(int(j))[A] for j in A])
    diag = stats.cov_diag[A]
    delta = stats.delta[A]
    theta = state.theta[A]
    u = S @ theta

    change = math.inf
    while state.sweep_count < options.max_sweeps:
        change = 0.0
        for i in range(A.size):
            old = theta[i]
            new = group_soft_threshold(delta[i] - u[i] + diag[i] * old, lam) / diag[i]
            diff = new - old
            step = float(np.max(np.abs(diff)))
            if step > 0.0:
                u += np.outer(S[:, i], diff)
                theta[i] = new
                change = max(change, step)
        state.sweep_count += 1
        state.last_max_change = change
        if options.track_objective:
            state.theta[A] = theta
            trace.append(objective(stats, state.theta, lam))
        if change < options.tol:
            break

    state.theta[A] = theta
    state.resync(stats)
    return change


def solve(stats: SuffStats, options: SolverOptions,
          warm_start: Optional[CoefMatrix] = None) -> Tuple[CoefMatrix, SolveDiagnostics]:
    """Blockwise coordinate descent at one λ.

    Full sweeps run in ascending feature order. With the active-set strategy
    one full sweep is followed by sweeps over the active rows, on the active
    submatrix of Σ̂, until they settle, then a full sweep. This repeats until
    a full sweep leaves the active set unchanged and moves nothing by more
    than `tol`.
    """
    options.validate()
    lam = options.lam
    state = SolverState.start(stats, warm_start)
    every = [int(j) for j in np.flatnonzero(~stats.zero_variance)]
    trace: List[float] = []
    if options.track_objective:
        trace.append(objective(stats, state.theta, lam))

    def run(blocks) -> float:
        change = _sweep(state, stats, blocks, lam)
        if options.track_objective:
            trace.append(objective(stats, state.theta, lam))
        return change

    converged = False
    if not options.active_set:
        while state.sweep_count < options.max_sweeps:
            if run(every) < options.tol:
                converged = True
                break
    else:
        change = run(every)
        converged = change < options.tol
        while not converged and state.sweep_count < options.max_sweeps:
            _active_sweeps(state, stats, lam, options, trace)
            if state.sweep_count >= options.max_sweeps:
                break
            before = state.active_blocks()
            change = run(every)
            converged = change < options.tol and np.array_equal(before, state.active_blocks())

    coef = state.coef()
    diagnostics = SolveDiagnostics(
        lam=lam,
        sweeps=state.sweep_count,
        max_change=state.last_max_change,
        converged=converged,
        kkt_residual=kkt_residual(stats, coef, lam),
        n_active=len(coef.active_blocks),
        objective_trace=trace,
    )
    if not converged:
        logger.warning(f"No convergence at lambda={lam:.6g} after {state.sweep_count} sweeps "
                       f"(last change {state.last_max_change:.3g})")
    else:
        logger.debug(f"lambda={lam:.6g}: {state.sweep_count} sweeps, {diagnostics.n_active} active, "
                     f"kkt={diagnostics.kkt_residual:.3g}")
    return coef, diagnostics


def lambda_grid(lam_max: float, n_lambda: int, lambda_min_ratio: float) -> np.ndarray:
    """Geometric grid from lam_max down to lam_max * lambda_min_ratio."""
    if n_lambda < 1:
        raise DataError("n_lambda must be >= 1")
    if not 0 < lambda_min_ratio < 1:
        raise DataError("lambda_min_ratio must lie in (0, 1)")
    if lam_max <= 0:
        # no between-class signal: every solution is zero, any positive grid will do
        logger.warning("lambda_max is zero (class means coincide); using a unit grid")
        lam_max = 1.0
    if n_lambda == 1:
        return np.array([lam_max])
    return lam_max * lambda_min_ratio ** (np.arange(n_lambda) / (n_lambda - 1))


def solve_path(stats: SuffStats, n_lambda: int = 100, lambda_min_ratio: float = 0.05,
               options: Optional[SolverOptions] = None,
               lambdas: Optional[np.ndarray] = None, max_active: Optional[int] = None) -> SolutionPath:
    """Warm-started solves along a descending λ grid starting at lambda_max.

    The path stops early once a solution has more than `max_active` active
    features (n − K by default); that solution is dropped and the path is
    marked truncated.
    """
    options = options or SolverOptions()
    if lambdas is None:
        if n_lambda < 2:
            raise DataError("n_lambda must be >= 2")
        lambdas = lambda_grid(lambda_max(stats), n_lambda, lambda_min_ratio)
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.size > 1 and np.any(np.diff(lambdas) >= 0):
        raise DataError("lambdas must be strictly descending")
    if max_active is None:
        max_active = stats.n - stats.K if stats.n > stats.K else stats.p

    solutions, residuals, sweeps, diagnostics = [], [], [], []
    warm = None
    truncated = False
    for lam in lambdas:
        coef, diag = solve(stats, replace(options, lam=float(lam)), warm)
        if solutions and diag.n_active > max_active:
            truncated = True
            logger.info(f"Path stopped at lambda={lam:.6g}: {diag.n_active} active features "
                        f"exceed {max_active}")
            break
        solutions.append(coef)
        residuals.append(diag.kkt_residual)
        sweeps.append(diag.sweeps)
        diagnostics.append(diag)
        warm = coef

    logger.info(f"Path of {len(solutions)} lambdas: final active set {diagnostics[-1].n_active}, "
                f"{sum(sweeps)} sweeps in total")
    return SolutionPath(lambdas[:len(solutions)], solutions, residuals, sweeps, diagnostics, truncated)
