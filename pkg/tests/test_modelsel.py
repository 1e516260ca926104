import numpy as np
import pytest

from msda.classify import deviance, fit_projected_lda
from msda.core import FitSettings, fit_model, fit_path
from msda.data_model import LabeledDataset
from msda.errors import DataError
from msda.modelsel import (cross_validate, draw_folds, select_index, selection_metrics,
                           stratified_folds, validation_select)


def test_folds_partition_rows_and_balance_classes():
    labels = np.repeat([1, 2, 3], [12, 9, 7])
    folds = stratified_folds(labels, 5, seed=3)
    assert folds.shape == labels.shape
    assert set(folds.tolist()) == set(range(5))
    sizes = np.bincount(folds, minlength=5)
    assert sizes.max() - sizes.min() <= 1
    for k in (1, 2, 3):
        per_class = np.bincount(folds[labels == k], minlength=5)
        assert per_class.max() - per_class.min() <= 1


def test_folds_are_deterministic_per_seed():
    labels = np.arange(40) % 4 + 1
    assert np.array_equal(stratified_folds(labels, 5, 11), stratified_folds(labels, 5, 11))
    assert not np.array_equal(stratified_folds(labels, 5, 11), stratified_folds(labels, 5, 12))


def test_draw_folds_keeps_usable_seed(rng, make_dataset):
    data = make_dataset(rng, n=30, p=3, K=3)
    folds, seed = draw_folds(data, 5, 7)
    assert seed == 7
    assert np.array_equal(folds, stratified_folds(data.labels, 5, 7))


def test_class_smaller_than_folds_is_rejected(rng):
    X = rng.standard_normal((12, 3))
    labels = np.array([1] * 5 + [2] * 5 + [3] * 2)
    with pytest.raises(DataError, match="fewer than 5 rows"):
        cross_validate(LabeledDataset(X, labels, 3), n_folds=5, n_lambda=5)


def test_too_few_folds(rng, make_dataset):
    with pytest.raises(DataError):
        cross_validate(make_dataset(rng, n=30, p=3, K=3), n_folds=1)


def test_separable_data_reaches_near_zero_error(rng):
    labels = np.arange(90) % 3 + 1
    X = rng.standard_normal((90, 10))
    X[:, 0] += 8.0 * labels
    X[:, 1] -= 8.0 * (labels == 2)
    cv = cross_validate(LabeledDataset(X, labels, 3), n_folds=5, n_lambda=10, seed=1)
    assert cv.mean_cv_error[cv.best_index] <= 0.02
    assert cv.mean_cv_error[cv.best_index] == cv.mean_cv_error.min()


def test_pure_noise_is_near_chance(rng):
    labels = np.arange(120) % 3 + 1
    X = rng.standard_normal((120, 10))
    cv = cross_validate(LabeledDataset(X, labels, 3), n_folds=5, n_lambda=10, seed=2)
    assert float(np.median(cv.mean_cv_error)) == pytest.approx(2 / 3, abs=0.15)
    assert cv.mean_cv_error.min() >= 0.4


def test_cv_result_shapes_and_frame(rng, make_dataset):
    data = make_dataset(rng, n=40, p=5, K=2)
    cv = cross_validate(data, n_folds=4, n_lambda=6, seed=5)
    assert cv.fold_errors.shape == (4, 6)
    assert np.allclose(cv.mean_cv_error, cv.fold_errors.mean(axis=0))
    assert np.allclose(cv.se_cv_error, cv.fold_errors.std(axis=0, ddof=1) / 2.0)
    assert cv.best_lambda == cv.lambdas[cv.best_index]
    frame = cv.to_frame()
    assert list(frame.columns) == ["lambda", "mean_cv_error", "se_cv_error", "selected"]
    assert frame["selected"].sum() == 1


def test_cv_is_reproducible(rng, make_dataset):
    data = make_dataset(rng, n=40, p=5, K=3)
    a = cross_validate(data, n_folds=4, n_lambda=5, seed=9)
    b = cross_validate(data, n_folds=4, n_lambda=5, seed=9)
    assert np.array_equal(a.mean_cv_error, b.mean_cv_error)
    assert a.best_index == b.best_index


def test_parallel_folds_match_serial(rng, make_dataset):
    data = make_dataset(rng, n=40, p=5, K=2)
    a = cross_validate(data, n_folds=4, n_lambda=5, seed=3, jobs=1)
    b = cross_validate(data, n_folds=4, n_lambda=5, seed=3, jobs=2)
    assert np.array_equal(a.fold_errors, b.fold_errors)


def test_ties_select_the_largest_lambda():
    assert select_index(np.array([0.3, 0.1, 0.1, 0.2])) == 1
    assert select_index(np.array([0.5, 0.5])) == 0


def test_selection_metrics_examples():
    m = selection_metrics([0, 1, 2, 9], range(8))
    assert (m.C, m.IC) == (3, 1)
    assert selection_metrics([], range(8)).C == 0
    assert selection_metrics(range(8), range(8)).IC == 0


def test_validation_select(rng, make_dataset):
    train = make_dataset(rng, n=60, p=6, K=3, shift=2.0)
    val = make_dataset(rng, n=60, p=6, K=3, shift=2.0)
    path, _ = fit_path(train, FitSettings(), n_lambda=8)
    index, errors = validation_select(train, val.features, val.labels, path)
    assert errors.shape == (8,)
    assert errors[index] == errors.min()


def test_validation_ties_go_to_the_smallest_deviance(rng, make_dataset):
    train = make_dataset(rng, n=90, p=8, K=3, shift=3.0, informative=2)
    val = make_dataset(rng, n=30, p=8, K=3, shift=3.0, informative=2)
    path, _ = fit_path(train, FitSettings(), n_lambda=15)
    index, errors = validation_select(train, val.features, val.labels, path)
    tied = np.flatnonzero(errors == errors.min())
    assert index in tied

    def held_out_deviance(i):
        return deviance(fit_projected_lda(train, path.solutions[i], warn=False), val.features, val.labels)

    assert held_out_deviance(index) == min(held_out_deviance(i) for i in tied)


def test_fit_model_with_cv_and_screening(rng, make_dataset):
    data = make_dataset(rng, n=60, p=12, K=3, shift=2.0, informative=3)
    result = fit_model(data, n_lambda=8, folds=3, seed=4, screen=6)
    artifact = result.artifact
    assert artifact.screening_map.tolist() == result.screening.kept.tolist()
    assert artifact.n_features == 12
    assert artifact.lam == result.cv.best_lambda
    assert artifact.predict(data.features).shape == (60,)
    assert artifact.metadata["folds"] == 3


def test_fit_model_at_fixed_lambda(rng, make_dataset):
    data = make_dataset(rng, n=40, p=5, K=2)
    result = fit_model(data, lam=0.0)
    assert result.cv is None
    assert result.artifact.lam == 0.0
    assert len(result.artifact.coef.active_blocks) == 5


def test_cv_and_fit_with_stopped_paths(rng, make_dataset):
    data = make_dataset(rng, n=45, p=6, K=3, shift=1.5)
    settings = FitSettings(max_active=2)
    cv = cross_validate(data, n_folds=3, n_lambda=10, seed=1, settings=settings, jobs=1)
    assert len(cv.lambdas) < 10
    assert cv.fold_errors.shape == (3, len(cv.lambdas))
    assert cv.best_index < len(cv.lambdas)

    result = fit_model(data, settings, n_lambda=10, folds=3, seed=1)
    assert result.path.truncated
    assert len(result.path) == len(result.cv.lambdas)
    assert len(result.artifact.coef.active_blocks) <= 2
