"""
Core module - the fitting pipeline shared by the CLI, cross-validation and
the simulation studies.
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

from .classify import ScreeningReport, error_rate, f_screen, fit_projected_lda
from .data_model import LabeledDataset, ModelArtifact
from .solver import (CoefMatrix, SolutionPath, SolveDiagnostics, SolverOptions,
                     lambda_grid, lambda_max, solve, solve_path)
from .suffstats import SuffStats, compute_stats


@dataclass
class FitSettings:
    standardize: bool = True
    tol: float = 1e-6
    max_sweeps: int = 1000
    active_set: bool = True
    cov_mode: str = "auto"
    uniform_priors: bool = False
    max_active: Optional[int] = None

    def solver_options(self, lam: float = 0.0) -> SolverOptions:
        return SolverOptions(lam=lam, tol=self.tol, max_sweeps=self.max_sweeps,
                             active_set=self.active_set)


def fit_stats(data: LabeledDataset, settings: FitSettings) -> SuffStats:
    """Statistics the solver runs on: standardized unless switched off."""
    stats = compute_stats(data, cov_mode=settings.cov_mode, uniform_priors=settings.uniform_priors)
    return stats.standardized() if settings.standardize else stats


def path_lambdas(data: LabeledDataset, settings: FitSettings, n_lambda: int,
                 lambda_min_ratio: float) -> np.ndarray:
    return lambda_grid(lambda_max(fit_stats(data, settings)), n_lambda, lambda_min_ratio)


def fit_path(data: LabeledDataset, settings: FitSettings, lambdas: Optional[np.ndarray] = None,
             n_lambda: int = 100, lambda_min_ratio: float = 0.05) -> Tuple[SolutionPath, SuffStats]:
    """Solution path with coefficients on the raw feature scale.

    The λ values stay on the scale the solver ran on.
    """
    stats = fit_stats(data, settings)
    if lambdas is None:
        lambdas = lambda_grid(lambda_max(stats), n_lambda, lambda_min_ratio)
    path = solve_path(stats, options=settings.solver_options(), lambdas=lambdas,
                      max_active=settings.max_active)
    return path.unscaled(stats.scale), stats


def fit_at(data: LabeledDataset, lam: float, settings: FitSettings) -> Tuple[CoefMatrix, SolveDiagnostics]:
    stats = fit_stats(data, settings)
    coef, diag = solve(stats, settings.solver_options(lam))
    return coef.unscaled(stats.scale), diag


def path_errors(train: LabeledDataset, X: np.ndarray, labels: np.ndarray, path: SolutionPath,
                uniform_priors: bool = False) -> np.ndarray:
    """Held-out error of the projected-LDA rule at every point of a path."""
    errors = np.empty(len(path))
    for i, coef in enumerate(path.solutions):
        classifier = fit_projected_lda(train, coef, uniform_priors, warn=False)
        errors[i] = error_rate(classifier, X, labels)
    return errors


@dataclass
class FitResult:
    artifact: ModelArtifact
    path: SolutionPath
    selected_index: int
    diagnostics: SolveDiagnostics
    cv: Any = None
    screening: Optional[ScreeningReport] = None

    @property
    def converged(self) -> bool:
        return self.diagnostics.converged


def fit_model(data: LabeledDataset, settings: Optional[FitSettings] = None, n_lambda: int = 100,
              lambda_min_ratio: float = 0.05, folds: int = 5, seed: int = 42,
              screen: Optional[int] = None, lam: Optional[float] = None,
              jobs: Optional[int] = 1, metadata: Optional[Dict[str, Any]] = None) -> FitResult:
    """Screen, tune λ by cross-validation, refit on all rows and build the model.

    With `lam` given the cross-validation step is skipped and the model is
    solved at that λ (on the solver's scale).
    """
    from .modelsel import cross_validate

    settings = settings or FitSettings()
    screening = None
    screening_map = None
    work = data
    if screen is not None:
        screening = f_screen(data, screen)
        screening_map = screening.kept
        work = data.select_features(screening.kept)

    cv = None
    if lam is not None:
        path, _ = fit_path(work, settings, lambdas=np.array([float(lam)]))
        index = 0
    else:
        path, _ = fit_path(work, settings, n_lambda=n_lambda, lambda_min_ratio=lambda_min_ratio)
        cv = cross_validate(work, n_folds=folds, seed=seed, settings=settings,
                            lambdas=path.lambdas, jobs=jobs)
        path = path.head(len(cv.lambdas))
        index = cv.best_index

    coef = path.solutions[index]
    diagnostics = path.diagnostics[index]
    classifier = fit_projected_lda(work, coef, settings.uniform_priors)

    meta: Dict[str, Any] = {
        "standardize": settings.standardize,
        "uniform_priors": settings.uniform_priors,
        "tol": settings.tol,
        "seed": seed,
        "folds": None if cv is None else folds,
        "converged": diagnostics.converged,
        "kkt_residual": diagnostics.kkt_residual,
    }
    meta.update(metadata or {})

    artifact = ModelArtifact(
        coef=coef,
        classifier=classifier,
        lam=float(path.lambdas[index]),
        screening_map=screening_map,
        label_names=data.label_names,
        feature_names=work.feature_names,
        n_features=data.p if screening_map is not None else None,
        metadata=meta,
    )
    logger.info(f"Selected lambda={artifact.lam:.6g} with {len(coef.active_blocks)} active features")
    return FitResult(artifact, path, index, diagnostics, cv, screening)


def support_names(artifact: ModelArtifact) -> List[str]:
    """Names (or raw column indices) of the features in the model's support."""
    rows = artifact.coef.active_blocks
    if artifact.feature_names is not None:
        return [artifact.feature_names[j] for j in rows]
    if artifact.screening_map is not None:
        return [str(int(artifact.screening_map[j])) for j in rows]
    return [str(int(j)) for j in rows]
