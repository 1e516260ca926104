"""
Model selection module - stratified K-fold cross-validation over the λ path,
validation-set tuning and support recovery counts.
"""

from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from .classify import deviance, fit_projected_lda
from .core import FitSettings, fit_path, path_errors, path_lambdas
from .data_model import LabeledDataset
from .errors import DataError
from .solver import SolutionPath
from .workers import parallel_map


@dataclass
class CVResult:
    lambdas: np.ndarray
    mean_cv_error: np.ndarray
    se_cv_error: np.ndarray
    best_lambda: float
    best_index: int
    fold_assignments: np.ndarray
    seed: int
    fold_errors: np.ndarray     # n_folds x n_lambda

    def to_frame(self) -> pd.DataFrame:
        selected = np.zeros(len(self.lambdas), dtype=int)
        selected[self.best_index] = 1
        return pd.DataFrame({
            "lambda": self.lambdas,
            "mean_cv_error": self.mean_cv_error,
            "se_cv_error": self.se_cv_error,
            "selected": selected,
        })


@dataclass(frozen=True)
class SelectionMetrics:
    C: int
    IC: int


def selection_metrics(estimated_support: Iterable[int], true_support: Iterable[int]) -> SelectionMetrics:
    estimated = {int(j) for j in estimated_support}
    truth = {int(j) for j in true_support}
    return SelectionMetrics(C=len(estimated & truth), IC=len(estimated - truth))


def stratified_folds(labels: np.ndarray, n_folds: int, seed: int) -> np.ndarray:
    """Fold index per row; each class is shuffled and dealt round-robin.

    The dealing position carries over from one class to the next, so fold
    sizes differ by at most one.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    folds = np.empty(labels.size, dtype=np.int64)
    offset = 0
    for k in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == k))
        folds[members] = (offset + np.arange(members.size)) % n_folds
        offset += members.size
    return folds


def _check_folds(data: LabeledDataset, folds: np.ndarray, n_folds: int) -> None:
    for f in range(n_folds):
        train = folds != f
        missing = set(range(1, data.K + 1)) - set(np.unique(data.labels[train]).tolist())
        if missing:
            raise DataError(f"fold {f} training part has no rows of class(es) {sorted(missing)}")
        if train.sum() <= data.K:
            raise DataError(f"fold {f} training part has only {int(train.sum())} rows")


def draw_folds(data: LabeledDataset, n_folds: int, seed: int) -> Tuple[np.ndarray, int]:
    """Stratified folds under `seed`, re-drawn once with seed+1 if unusable."""
    folds = stratified_folds(data.labels, n_folds, seed)
    try:
        _check_folds(data, folds, n_folds)
        return folds, seed
    except DataError as e:
        logger.warning(f"Re-drawing folds with seed {seed + 1}: {e}")
    folds = stratified_folds(data.labels, n_folds, seed + 1)
    _check_folds(data, folds, n_folds)
    return folds, seed + 1


def _fold_errors(job) -> np.ndarray:
    data, folds, f, lambdas, settings = job
    train = data.subset(np.flatnonzero(folds != f))
    held = folds == f
    path, _ = fit_path(train, settings, lambdas=lambdas)
    errors = path_errors(train, data.features[held], data.labels[held], path, settings.uniform_priors)
    logger.debug(f"fold {f}: min error {errors.min():.4f}")
    return errors


def cross_validate(data: LabeledDataset, n_folds: int = 5, n_lambda: int = 100,
                   lambda_min_ratio: float = 0.05, seed: int = 42,
                   settings: Optional[FitSettings] = None, lambdas: Optional[np.ndarray] = None,
                   jobs: Optional[int] = 1) -> CVResult:
    """K-fold cross-validation of the projected-LDA error along the λ path.

    The grid comes from the full data and is shared by every fold, cut to the
    points every fold path reached. The best λ is the first minimizer along
    the descending grid, i.e. the largest λ among tied errors.
    """
    settings = settings or FitSettings()
    if n_folds < 2:
        raise DataError("n_folds must be >= 2")
    small = [k + 1 for k, c in enumerate(data.class_counts) if c < n_folds]
    if small:
        raise DataError(f"class(es) {small} have fewer than {n_folds} rows")

    if lambdas is None:
        lambdas = path_lambdas(data, settings, n_lambda, lambda_min_ratio)
    lambdas = np.asarray(lambdas, dtype=float)

    folds, used_seed = draw_folds(data, n_folds, seed)
    jobs_list = [(data, folds, f, lambdas, settings) for f in range(n_folds)]
    per_fold = parallel_map(_fold_errors, jobs_list, jobs)
    # fold paths can stop early; keep the stretch every fold reached
    reached = min(len(e) for e in per_fold)
    if reached < lambdas.size:
        logger.info(f"CV grid cut to {reached} of {lambdas.size} lambdas (fold paths stopped early)")
        lambdas = lambdas[:reached]
    fold_errors = np.vstack([e[:reached] for e in per_fold])

    mean = fold_errors.mean(axis=0)
    se = fold_errors.std(axis=0, ddof=1) / np.sqrt(n_folds)
    best = select_index(mean)
    logger.info(f"{n_folds}-fold CV: best lambda {lambdas[best]:.6g}, error {mean[best]:.4f}")
    return CVResult(lambdas, mean, se, float(lambdas[best]), best, folds, used_seed, fold_errors)


def select_index(errors: np.ndarray) -> int:
    """First minimizer; on a descending grid ties go to the larger λ."""
    return int(np.argmin(np.asarray(errors)))


def validation_select(train: LabeledDataset, X_val: np.ndarray, y_val: np.ndarray,
                      path: SolutionPath, uniform_priors: bool = False) -> Tuple[int, np.ndarray]:
    """Index of the path point with the smallest validation error, plus all errors.

    Validation errors move in steps of 1/m and tie over long stretches of the
    path. Among tied points the smallest validation deviance wins, then the
    larger λ.
    """
    errors = path_errors(train, X_val, y_val, path, uniform_priors)
    tied = np.flatnonzero(errors == errors.min())
    if tied.size == 1:
        return int(tied[0]), errors
    deviances = [deviance(fit_projected_lda(train, path.solutions[i], uniform_priors, warn=False),
                          X_val, y_val) for i in tied]
    return int(tied[select_index(np.array(deviances))]), errors