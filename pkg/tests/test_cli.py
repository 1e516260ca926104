import json

import numpy as np
import pandas as pd
import pytest

from msda.cli import build_parser, main
from msda.config import RunConfig, default_seed
from msda.errors import DataError


@pytest.fixture
def labeled_csv(tmp_path, rng):
    labels = np.array(["cat", "dog", "eel"])[np.arange(60) % 3]
    X = rng.standard_normal((60, 6))
    X[labels == "dog", 0] += 3.0
    X[labels == "eel", 1] += 3.0
    frame = pd.DataFrame(X, columns=[f"g{j}" for j in range(6)])
    frame["species"] = labels
    path = tmp_path / "train.csv"
    frame.to_csv(path, index=False)
    return path, frame


def test_fit_then_predict(tmp_path, labeled_csv):
    path, frame = labeled_csv
    model = tmp_path / "model.json"
    assert main(["fit", "--input", str(path), "--output", str(model), "--n-lambda", "6",
                 "--folds", "3", "--jobs", "1", "--quiet"]) == 0
    doc = json.loads(model.read_text(encoding="utf-8"))
    assert doc["label_names"] == ["cat", "dog", "eel"]
    path_csv = pd.read_csv(tmp_path / "model_path.csv")
    assert len(path_csv) == 6
    assert "mean_cv_error" in path_csv.columns

    features = tmp_path / "features.csv"
    frame.drop(columns=["species"]).to_csv(features, index=False)
    out = tmp_path / "pred.csv"
    assert main(["predict", "--model", str(model), "--input", str(features), "--output", str(out),
                 "--quiet"]) == 0
    predicted = pd.read_csv(out)["label"]
    assert len(predicted) == 60
    assert set(predicted) <= {"cat", "dog", "eel"}
    assert np.mean(predicted.to_numpy() == frame["species"].to_numpy()) >= 0.8

    again = tmp_path / "pred2.csv"
    assert main(["predict", "--model", str(model), "--input", str(path), "--output", str(again),
                 "--label-column", "species", "--quiet"]) == 0
    assert pd.read_csv(again)["label"].tolist() == predicted.tolist()


def test_fit_reports_non_convergence(tmp_path, labeled_csv):
    path, _ = labeled_csv
    model = tmp_path / "m.json"
    code = main(["fit", "--input", str(path), "--output", str(model), "--lambda", "0",
                 "--max-sweeps", "1", "--tol", "1e-14", "--quiet"])
    assert code == 3
    assert model.exists()
    assert json.loads(model.read_text(encoding="utf-8"))["metadata"]["converged"] is False


def test_missing_input_file(tmp_path):
    code = main(["cv", "--input", str(tmp_path / "absent.csv"), "--output", str(tmp_path / "o.csv"),
                 "--quiet"])
    assert code == 2


def test_predict_with_corrupt_model(tmp_path, labeled_csv):
    path, _ = labeled_csv
    bad = tmp_path / "bad.json"
    bad.write_text("{\"schema\": ", encoding="utf-8")
    code = main(["predict", "--model", str(bad), "--input", str(path), "--output",
                 str(tmp_path / "p.csv"), "--quiet"])
    assert code == 2


def test_cv_and_screen_outputs(tmp_path, labeled_csv):
    path, _ = labeled_csv
    cv_out = tmp_path / "cv.csv"
    assert main(["cv", "--input", str(path), "--output", str(cv_out), "--n-lambda", "5",
                 "--folds", "3", "--jobs", "1", "--quiet"]) == 0
    cv = pd.read_csv(cv_out)
    assert list(cv.columns) == ["lambda", "mean_cv_error", "se_cv_error", "selected"]
    assert cv["selected"].sum() == 1

    screen_out = tmp_path / "screen.csv"
    assert main(["screen", "--input", str(path), "--output", str(screen_out), "--d-n", "2",
                 "--quiet"]) == 0
    screen = pd.read_csv(screen_out)
    assert sorted(screen.loc[screen["kept"] == 1, "name"]) == ["g0", "g1"]


def test_path_with_coefficients(tmp_path, labeled_csv):
    path, _ = labeled_csv
    out, coefs = tmp_path / "path.csv", tmp_path / "coef.csv"
    assert main(["path", "--input", str(path), "--output", str(out), "--coef-output", str(coefs),
                 "--n-lambda", "4", "--quiet"]) == 0
    assert len(pd.read_csv(out)) == 4
    coef = pd.read_csv(coefs)
    assert set(coef["direction"]) <= {2, 3}
    assert (coef["lambda_index"] > 0).all()


def test_fisher_command(tmp_path, labeled_csv):
    path, _ = labeled_csv
    model = tmp_path / "m.json"
    assert main(["fit", "--input", str(path), "--output", str(model), "--lambda", "0.05",
                 "--quiet"]) == 0
    out = tmp_path / "eta.csv"
    assert main(["fisher", "--model", str(model), "--input", str(path), "--output", str(out),
                 "--quiet"]) == 0
    eta = pd.read_csv(out)
    assert "eta_1" in eta.columns
    assert np.linalg.norm(eta["eta_1"]) == pytest.approx(1.0)


def test_equiv_generated_instance(tmp_path):
    out = tmp_path / "equiv.csv"
    assert main(["equiv", "--output", str(out), "--grid", "5", "--n", "60", "--p", "10",
                 "--quiet"]) == 0
    frame = pd.read_csv(out)
    assert len(frame) == 5
    checked = frame[frame["skipped"] == 0]
    assert (checked["cosine_msda_dsda"] >= 1 - 1e-6).all()
    assert (checked["road_kkt_residual"] <= 1e-6).all()


def test_equiv_single_lambda_is_skipped(tmp_path):
    out = tmp_path / "equiv.csv"
    assert main(["equiv", "--output", str(out), "--grid", "1", "--n", "40", "--p", "5",
                 "--quiet"]) == 0
    assert pd.read_csv(out)["skipped"].tolist() == [1]


def test_equiv_rejects_three_classes(tmp_path, labeled_csv):
    path, _ = labeled_csv
    assert main(["equiv", "--input", str(path), "--output", str(tmp_path / "e.csv"), "--quiet"]) == 2


def test_simulate_small_study(tmp_path, capsys):
    out = tmp_path / "study.csv"
    assert main(["simulate", "--model", "1", "--p", "30", "--replicates", "2", "--n-lambda", "5",
                 "--jobs", "1", "--output", str(out), "--quiet"]) == 0
    frame = pd.read_csv(out)
    assert frame["metric"].tolist() == ["test_error", "bayes_error", "C", "IC"]
    assert (tmp_path / "study_table.txt").exists()
    assert "support 8" in capsys.readouterr().out


def test_simulate_argument_errors(tmp_path):
    out = str(tmp_path / "s.csv")
    assert main(["simulate", "--model", "1", "--replicates", "0", "--output", out, "--quiet"]) == 2
    assert main(["simulate", "--model", "9", "--replicates", "1", "--output", out, "--quiet"]) == 2
    assert main(["simulate", "--replicates", "1", "--output", out, "--quiet"]) == 2


def test_missing_output_is_an_error(labeled_csv):
    path, _ = labeled_csv
    assert main(["screen", "--input", str(path), "--quiet"]) == 2


def test_seed_from_environment(monkeypatch):
    monkeypatch.setenv("MSDA_SEED", "17")
    assert default_seed() == 17
    config = RunConfig.from_namespace(build_parser().parse_args(["cv", "--input", "x.csv"]))
    assert config.seed == 17
    monkeypatch.setenv("MSDA_SEED", "abc")
    with pytest.raises(DataError):
        default_seed()
    monkeypatch.delenv("MSDA_SEED")
    assert default_seed() == 42


def test_unknown_subcommand_exits():
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_fit_above_lambda_max_gives_empty_support(tmp_path, labeled_csv):
    path, _ = labeled_csv
    model = tmp_path / "m.json"
    assert main(["fit", "--input", str(path), "--output", str(model), "--lambda", "1e6", "--quiet"]) == 0
    doc = json.loads(model.read_text(encoding="utf-8"))
    assert doc["classifier"]["degenerate"] is True


def test_predict_column_mismatch(tmp_path, labeled_csv):
    path, frame = labeled_csv
    model = tmp_path / "m.json"
    assert main(["fit", "--input", str(path), "--output", str(model), "--lambda", "0.1", "--quiet"]) == 0
    narrow = tmp_path / "narrow.csv"
    frame.iloc[:, :4].to_csv(narrow, index=False)
    assert main(["predict", "--model", str(model), "--input", str(narrow), "--output",
                 str(tmp_path / "p.csv"), "--quiet"]) == 2


def test_simulate_does_not_depend_on_jobs(tmp_path):
    outputs = []
    for jobs in ("1", "2"):
        out = tmp_path / f"study_{jobs}.csv"
        assert main(["simulate", "--model", "6", "--p", "20", "--replicates", "3", "--n-lambda", "4",
                     "--seed", "7", "--jobs", jobs, "--output", str(out), "--quiet"]) == 0
        outputs.append(out.read_text(encoding="utf-8"))
    assert outputs[0] == outputs[1]


def test_screen_defaults_to_every_feature_when_n_exceeds_p(tmp_path, rng):
    frame = pd.DataFrame(rng.standard_normal((30, 4)), columns=["a", "b", "c", "d"])
    frame["y"] = np.arange(30) % 3
    path = tmp_path / "narrow.csv"
    frame.to_csv(path, index=False)
    out = tmp_path / "screen.csv"
    assert main(["screen", "--input", str(path), "--output", str(out), "--quiet"]) == 0
    assert pd.read_csv(out)["kept"].sum() == 4


def test_path_plot_carries_cv_errors(tmp_path, labeled_csv, monkeypatch):
    path, _ = labeled_csv
    seen = {}

    def chart(solution_path, cv_errors=None, **kwargs):
        seen["points"], seen["errors"] = len(solution_path), cv_errors
        return "chart"

    monkeypatch.setattr("msda.reports.path_chart", chart)
    assert main(["path", "--input", str(path), "--output", str(tmp_path / "path.csv"), "--plot",
                 "--n-lambda", "5", "--folds", "3", "--jobs", "1", "--quiet"]) == 0
    assert seen["points"] == 5
    assert len(seen["errors"]) == 5
    assert np.all((seen["errors"] >= 0) & (seen["errors"] <= 1))


def test_max_active_stops_the_path(tmp_path, labeled_csv):
    path, _ = labeled_csv
    out = tmp_path / "path.csv"
    assert main(["path", "--input", str(path), "--output", str(out), "--n-lambda", "10",
                 "--lambda-min-ratio", "0.001", "--max-active", "1", "--quiet"]) == 0
    frame = pd.read_csv(out)
    assert len(frame) < 10
    assert frame["n_active"].max() <= 1
    assert main(["path", "--input", str(path), "--output", str(out), "--max-active", "0", "--quiet"]) == 2
