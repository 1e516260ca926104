import json

import numpy as np
import pytest

from msda.errors import DataError
from msda.simbench import (ARCovariance, BlockCSCovariance, CSCovariance, ModelSpec, StudyOptions,
                           bayes_classifier, bayes_error, bootstrap_median_se, describe_model,
                           load_model_spec, make_model, run_replicate, run_study, sample_dataset,
                           split_evenly)


@pytest.mark.parametrize("model_id, K, support", [(1, 4, 8), (2, 6, 12), (3, 4, 4),
                                                  (4, 4, 4), (5, 4, 8), (6, 4, 8)])
def test_builtin_models(model_id, K, support):
    spec = make_model(model_id)
    assert spec.K == K
    assert spec.p == 800
    assert len(spec.true_support) == support
    assert np.allclose(spec.mu, spec.cov.dense() @ spec.beta, atol=1e-10)


def test_invalid_model_id():
    for bad in (0, 7, "x"):
        with pytest.raises(DataError):
            make_model(bad)


def test_ar_covariance_entries():
    S = ARCovariance(0.5, 6).dense()
    assert S[0, 2] == pytest.approx(0.25)
    assert np.allclose(np.diag(S), 1.0)


def test_structured_products_match_dense(rng):
    B = rng.standard_normal((20, 3))
    for cov in (CSCovariance(0.8, 20), BlockCSCovariance(0.5, 4, 5), ARCovariance(0.5, 20)):
        assert np.allclose(cov.apply(B), cov.dense() @ B)


@pytest.mark.parametrize("cov", [ARCovariance(0.8, 6), CSCovariance(0.5, 6), BlockCSCovariance(0.5, 3, 2)],
                         ids=["ar", "cs", "block_cs"])
def test_samplers_have_the_right_covariance(cov):
    X = cov.sample(np.random.default_rng(0), 200_000)
    assert np.max(np.abs(X.mean(axis=0))) <= 0.01
    assert np.max(np.abs(np.cov(X, rowvar=False) - cov.dense())) <= 0.02


def test_models_three_and_four_redraw_coefficients():
    a = make_model(3, p=20, u_rng=np.random.default_rng(1))
    b = make_model(3, p=20, u_rng=np.random.default_rng(2))
    assert not np.array_equal(a.beta, b.beta)
    assert np.all(np.abs(a.beta[:4] - np.arange(1, 5)) <= 0.25)
    assert np.array_equal(make_model(4, p=20).beta, make_model(4, p=20).beta)
    fixed = make_model(1, p=20)
    assert fixed.redrawn(np.random.default_rng(0)) is fixed


def test_sampling_is_deterministic():
    spec = make_model(1, p=30)
    a = sample_dataset(spec, 5, seed=3)
    b = sample_dataset(spec, 5, seed=3)
    assert np.array_equal(a.features, b.features)
    assert a.labels.tolist() == [1] * 5 + [2] * 5 + [3] * 5 + [4] * 5
    assert sample_dataset(spec, [1, 2, 3, 4], seed=0).class_counts.tolist() == [1, 2, 3, 4]


def test_split_evenly():
    assert split_evenly(1000, 6) == [167, 167, 167, 167, 166, 166]
    assert sum(split_evenly(1000, 4)) == 1000


def test_equal_coefficients_give_chance_error(tmp_path):
    path = tmp_path / "flat.json"
    path.write_text(json.dumps({"K": 3, "p": 4, "beta": [], "cov": {"type": "cs", "rho": 0.2}}), encoding="utf-8")
    spec = load_model_spec(str(path))
    assert bayes_classifier(spec).degenerate
    assert bayes_error(spec, m=3000, seed=1) == pytest.approx(2 / 3, abs=1e-12)


def test_bayes_error_of_fixed_model_ignores_coefficient_draws():
    spec = make_model(1, p=20)
    assert bayes_error(spec, m=2000, seed=3) == bayes_error(spec, m=2000, seed=3, coefficient_draws=7)


def test_bayes_error_averages_over_coefficient_draws(monkeypatch):
    drawn = []
    redrawn = ModelSpec.redrawn

    def record(self, rng):
        spec = redrawn(self, rng)
        drawn.append(spec.beta)
        return spec

    monkeypatch.setattr(ModelSpec, "redrawn", record)
    err = bayes_error(make_model(3, p=20), m=600, seed=2, coefficient_draws=3)
    assert len(drawn) == 3
    assert not np.array_equal(drawn[0], drawn[1])
    assert 0.0 <= err <= 1.0
    assert bayes_error(make_model(3, p=20), m=600, seed=2, coefficient_draws=3) == err
    with pytest.raises(DataError):
        bayes_error(make_model(3, p=20), m=600, coefficient_draws=0)


def test_load_model_spec(tmp_path):
    doc = {"name": "toy", "K": 3, "p": 10,
           "beta": [[0, 2, 1.5], [1, 3, -1.0]],
           "cov": {"type": "block_cs", "rho": 0.3, "block_size": 5}}
    path = tmp_path / "toy.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    spec = load_model_spec(str(path))
    assert spec.model_id == "toy"
    assert spec.true_support.tolist() == [0, 1]
    assert describe_model(spec)["support"] == 2


@pytest.mark.parametrize("doc", [
    {"K": 2, "p": 4, "beta": [[9, 1, 1.0]], "cov": {"type": "ar", "rho": 0.5}},
    {"K": 2, "p": 4, "beta": [], "cov": {"type": "wavy", "rho": 0.5}},
    {"K": 2, "p": 4, "beta": [], "cov": {"type": "block_cs", "rho": 0.5, "block_size": 3}},
    {"K": 2, "beta": [], "cov": {"type": "ar", "rho": 0.5}},
])
def test_bad_model_spec(tmp_path, doc):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(DataError):
        load_model_spec(str(path))


def test_bootstrap_median_se():
    rng = np.random.default_rng(0)
    assert bootstrap_median_se(np.full(10, 0.2), rng) == pytest.approx(0.0, abs=1e-12)
    assert bootstrap_median_se(np.arange(50.0), rng) > 0.0


def _small_options(**kw):
    return StudyOptions(n_per_class=20, test_size=200, n_lambda=8, **kw)


def test_single_replicate_is_reproducible():
    spec = make_model(1, p=40)
    a = run_replicate(spec, 7, options=_small_options())
    b = run_replicate(spec, 7, options=_small_options())
    assert a.test_error == b.test_error
    assert a.chosen_lambda == b.chosen_lambda
    assert 0.0 <= a.test_error <= 1.0
    assert 0 <= a.C <= 8
    assert a.IC <= 32


def test_cv_tuning_replicate():
    result = run_replicate(make_model(5, p=30), 3, tuning="cv", options=_small_options(folds=3))
    assert result.seed == 3
    assert 0.0 <= result.test_error <= 1.0


def test_study_with_one_replicate():
    summary = run_study(make_model(1, p=40), 1, base_seed=5, options=_small_options())
    assert summary.n_replicates == 1
    assert summary.std_errors["test_error"] == pytest.approx(0.0, abs=1e-12)
    assert summary.medians["test_error"] == summary.replicates[0].test_error
    frame = summary.to_frame()
    assert frame["metric"].tolist() == ["test_error", "bayes_error", "C", "IC"]
    assert len(summary.replicates_frame()) == 1


def test_study_rejects_bad_arguments():
    spec = make_model(1, p=40)
    with pytest.raises(DataError):
        run_study(spec, 0)
    with pytest.raises(DataError):
        run_study(spec, 1, tuning="grid")


@pytest.mark.slow
def test_study_is_independent_of_workers():
    spec = make_model(3, p=40)
    a = run_study(spec, 4, base_seed=1, options=_small_options(), jobs=1)
    b = run_study(spec, 4, base_seed=1, options=_small_options(), jobs=2)
    assert a.to_frame().equals(b.to_frame())


@pytest.mark.slow
@pytest.mark.parametrize("model_id, expected, tol", [(1, 0.110, 0.007), (4, 0.053, 0.007), (6, 0.142, 0.007)])
def test_bayes_errors_of_builtin_models(model_id, expected, tol):
    assert bayes_error(make_model(model_id), seed=0) == pytest.approx(expected, abs=tol)


@pytest.mark.slow
def test_model_one_study():
    summary = run_study(make_model(1), 50, base_seed=42, jobs=None)
    assert summary.medians["C"] == 8
    assert 0.105 <= summary.medians["test_error"] <= 0.145
    assert summary.medians["IC"] <= 30


@pytest.mark.slow
def test_model_six_study_keeps_the_true_support():
    summary = run_study(make_model(6), 50, base_seed=42, jobs=None)
    assert summary.medians["C"] == 8
    assert summary.medians["IC"] <= 5
