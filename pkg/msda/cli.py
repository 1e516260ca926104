"""
CLI module - batch entry points: fit, predict, cv, path, screen, simulate,
equiv and fisher.
"""

import argparse
import os
import sys
from typing import List, Optional

import numpy as np
import pandas as pd
from loguru import logger
from rich.console import Console
from rich.table import Table

from .classify import f_screen, recover_fisher
from .config import RunConfig
from .core import fit_model, fit_path, support_names
from .data_model import LabeledDataset, load_csv, load_model, parse_features, read_table, save_model, write_csv
from .errors import ConvergenceError, DataError, MSDAError
from .suffstats import compute_stats

console = Console()


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = "DEBUG" if verbose else "WARNING" if quiet else "INFO"
    logger.remove()
    logger.add(sys.stderr, level=level, format="<level>{level: <8}</level> {message}")


def handle_error(error: MSDAError) -> int:
    print(f"[ERROR] {error}", file=sys.stderr)
    return error.exit_code


def _load(config: RunConfig) -> LabeledDataset:
    if not config.input:
        raise DataError("--input is required")
    data = load_csv(config.input, config.label_column_value, not config.no_header,
                    config.label_order_values)
    if config.baseline is not None:
        data = data.with_baseline(config.baseline)
    return data


def _require_output(config: RunConfig) -> str:
    if not config.output:
        raise DataError("--output is required")
    return config.output


def coefficient_frame(path, feature_names=None) -> pd.DataFrame:
    """Long-form coefficients: one row per (lambda index, feature, direction)."""
    rows = []
    for i, coef in enumerate(path.solutions):
        for j in coef.active_blocks:
            for d in range(coef.theta.shape[1]):
                rows.append((i, float(path.lambdas[i]), int(j),
                             feature_names[j] if feature_names else str(j), d + 2,
                             format(coef.theta[j, d], ".17g")))
    return pd.DataFrame(rows, columns=["lambda_index", "lambda", "feature", "name", "direction", "coef"])


def cmd_fit(config: RunConfig) -> int:
    output = _require_output(config)
    data = _load(config)
    result = fit_model(data, config.settings(), n_lambda=config.n_lambda,
                       lambda_min_ratio=config.lambda_min_ratio, folds=config.folds,
                       seed=config.seed, screen=config.screen, lam=config.lam, jobs=config.jobs,
                       metadata={"input": os.path.basename(config.input)})
    save_model(result.artifact, output)

    path_output = config.path_output or os.path.splitext(output)[0] + "_path.csv"
    frame = result.path.to_frame()
    if result.cv is not None:
        frame["mean_cv_error"] = result.cv.mean_cv_error
        frame["se_cv_error"] = result.cv.se_cv_error
    write_csv(frame, path_output)

    table = Table(title="Fitted model")
    table.add_column("Field")
    table.add_column("Value")
    table.add_row("lambda", f"{result.artifact.lam:.6g}")
    table.add_row("classes", ", ".join(result.artifact.label_names))
    table.add_row("active features", str(len(result.artifact.coef.active_blocks)))
    table.add_row("support", ", ".join(support_names(result.artifact)[:20]))
    if result.cv is not None:
        table.add_row("CV error", f"{result.cv.mean_cv_error[result.selected_index]:.4f}")
    table.add_row("converged", str(result.converged))
    console.print(table)

    if not result.converged:
        raise ConvergenceError(f"no convergence at the selected lambda {result.artifact.lam:.6g}")
    return 0


def cmd_predict(config: RunConfig) -> int:
    output = _require_output(config)
    if not config.model:
        raise DataError("--model is required")
    if not config.input:
        raise DataError("--input is required")
    artifact = load_model(config.model)
    frame = read_table(config.input, not config.no_header)

    truth = None
    if config.label_column != "none":
        column = config.label_column_value
        if isinstance(column, str):
            if column not in frame.columns:
                raise DataError(f"label column {column!r} not found")
            column = list(frame.columns).index(column)
        if frame.shape[1] == artifact.input_width + 1:
            truth = frame.iloc[:, column].astype(str).str.strip().tolist()
            frame = frame.drop(columns=frame.columns[column])

    labels = artifact.predict_names(parse_features(frame))
    write_csv(pd.DataFrame({"label": labels}), output)
    logger.info(f"Wrote {len(labels)} predictions to {output}")

    if truth is not None:
        error = float(np.mean(np.array(labels) != np.array(truth)))
        console.print(f"Error rate against the input labels: {error:.4f}")
    return 0


def cmd_cv(config: RunConfig) -> int:
    from .modelsel import cross_validate

    output = _require_output(config)
    data = _load(config)
    result = cross_validate(data, n_folds=config.folds, n_lambda=config.n_lambda,
                            lambda_min_ratio=config.lambda_min_ratio, seed=config.seed,
                            settings=config.settings(), jobs=config.jobs)
    write_csv(result.to_frame(), output)
    console.print(f"Best lambda {result.best_lambda:.6g}: CV error "
                  f"{result.mean_cv_error[result.best_index]:.4f} "
                  f"(se {result.se_cv_error[result.best_index]:.4f})")
    return 0


def cmd_path(config: RunConfig) -> int:
    output = _require_output(config)
    data = _load(config)
    path, _ = fit_path(data, config.settings(), n_lambda=config.n_lambda,
                       lambda_min_ratio=config.lambda_min_ratio)
    write_csv(path.to_frame(), output)
    if config.path_output:
        write_csv(coefficient_frame(path, data.feature_names), config.path_output)
    if config.plot:
        from .modelsel import cross_validate
        from .reports import path_chart
        try:
            cv = cross_validate(data, n_folds=config.folds, seed=config.seed, settings=config.settings(),
                                lambdas=path.lambdas, jobs=config.jobs)
            console.print(path_chart(path.head(len(cv.lambdas)), cv_errors=cv.mean_cv_error))
        except DataError as e:
            logger.warning(f"Charting without CV errors: {e}")
            console.print(path_chart(path))
    return 0


def cmd_screen(config: RunConfig) -> int:
    output = _require_output(config)
    data = _load(config)
    d_n = config.screen if config.screen is not None else min(data.n, data.p)
    report = f_screen(data, d_n)
    write_csv(report.to_frame(data.feature_names), output)
    console.print(f"Kept {report.d_n} of {data.p} features")
    return 0


def cmd_simulate(config: RunConfig) -> int:
    from .reports import study_table, study_text
    from .simbench import DEFAULT_P, StudyOptions, describe_model, load_model_spec, make_model, run_study

    output = _require_output(config)
    if config.spec_file:
        spec = load_model_spec(config.spec_file)
    elif config.model_id is not None:
        spec = make_model(config.model_id, config.p or DEFAULT_P)
    else:
        raise DataError("--model or --spec-file is required")
    info = describe_model(spec)
    console.print(f"Model {info['model']}: K={info['K']}, p={info['p']}, cov {info['cov']}, "
                  f"support {info['support']}")

    options = StudyOptions(tuning=config.tuning, n_lambda=config.n_lambda,
                           lambda_min_ratio=config.lambda_min_ratio, folds=config.folds,
                           fixed_u=config.fixed_u, settings=config.settings())
    summary = run_study(spec, config.replicates, base_seed=config.seed, tuning=config.tuning,
                        options=options, jobs=config.jobs)

    write_csv(summary.to_frame(), output)
    stem = os.path.splitext(output)[0]
    with open(stem + "_table.txt", "w", encoding="utf-8") as f:
        f.write(study_text([summary]))
    if config.path_output:
        write_csv(summary.replicates_frame(), config.path_output)
    console.print(study_table([summary]))
    logger.info(f"Study finished in {summary.wall_time:.1f}s")
    return 0


def cmd_equiv(config: RunConfig) -> int:
    from .equivalence import check_proposition1, random_binary_dataset, reports_frame

    output = _require_output(config)
    if config.input:
        data = _load(config)
    else:
        data = random_binary_dataset(n=config.n, p=config.p or 50, seed=config.seed)
    reports = check_proposition1(data, n_lambda=config.grid, lambda_min_ratio=config.lambda_min_ratio)
    write_csv(reports_frame(reports), output)

    checked = [r for r in reports if not r.skipped]
    if checked:
        console.print(f"{len(checked)} lambdas checked: min cosine "
                      f"{min(r.cosine_msda_dsda for r in checked):.12f}, max ROAD residual "
                      f"{max(r.road_kkt_residual for r in checked):.3g}")
    else:
        console.print("Every lambda gave a zero solution; all rows skipped")
    return 0


def cmd_fisher(config: RunConfig) -> int:
    output = _require_output(config)
    if not config.model:
        raise DataError("--model is required")
    artifact = load_model(config.model)
    data = _load(config)
    if data.p != artifact.input_width:
        raise DataError(f"model expects {artifact.input_width} features, input has {data.p}")
    if artifact.screening_map is not None:
        data = data.select_features(artifact.screening_map)

    directions = recover_fisher(artifact.coef, compute_stats(data, cov_mode=config.cov_mode))
    frame = pd.DataFrame({
        "feature": np.arange(data.p),
        "name": list(data.feature_names) if data.feature_names else [str(j) for j in range(data.p)],
    })
    for r in range(directions.n_directions):
        frame[f"eta_{r + 1}"] = [format(v, ".17g") for v in directions.eta[:, r]]
    write_csv(frame, output)
    console.print(f"Recovered {directions.n_directions} direction(s); eigenvalues "
                  + ", ".join(f"{v:.6g}" for v in directions.eigenvalues))
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "cv": cmd_cv,
    "path": cmd_path,
    "screen": cmd_screen,
    "simulate": cmd_simulate,
    "equiv": cmd_equiv,
    "fisher": cmd_fisher,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", action="store_true", help="debug logging")
    common.add_argument("--quiet", action="store_true", help="warnings and errors only")
    common.add_argument("--seed", type=int, default=None, help="random seed (default: $MSDA_SEED or 42)")
    common.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
    common.add_argument("--output", help="output file")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--input", help="labeled CSV file")
    data.add_argument("--label-column", dest="label_column", default="-1",
                      help="label column name or 0-based index (default: last)")
    data.add_argument("--no-header", dest="no_header", action="store_true")
    data.add_argument("--label-order", dest="label_order", help="comma separated labels; the first is class 1")
    data.add_argument("--baseline", help="label to use as class 1")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--n-lambda", dest="n_lambda", type=int, default=100)
    solver.add_argument("--lambda-min-ratio", dest="lambda_min_ratio", type=float, default=0.05)
    solver.add_argument("--tol", type=float, default=1e-6)
    solver.add_argument("--max-sweeps", dest="max_sweeps", type=int, default=1000)
    solver.add_argument("--no-standardize", dest="standardize", action="store_false")
    solver.add_argument("--cov-mode", dest="cov_mode", choices=["auto", "dense", "on-demand"], default="auto")
    solver.add_argument("--uniform-priors", dest="uniform_priors", action="store_true")
    solver.add_argument("--folds", type=int, default=5)
    solver.add_argument("--max-active", dest="max_active", type=int,
                        help="stop the path once more features are active (default: n - K)")

    parser = argparse.ArgumentParser(prog="msda", description="Multiclass sparse discriminant analysis")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("fit", parents=[common, data, solver], help="fit a model with CV-selected lambda")
    p.add_argument("--screen", type=int, help="keep the d_n features with the largest F statistics")
    p.add_argument("--lambda", dest="lam", type=float, help="fixed lambda (solver scale); skips CV")
    p.add_argument("--path-output", dest="path_output", help="path CSV (default: <output>_path.csv)")

    p = sub.add_parser("predict", parents=[common], help="predict labels with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--no-header", dest="no_header", action="store_true")
    p.add_argument("--label-column", dest="label_column", default="none",
                   help="column holding true labels, dropped before prediction")

    sub.add_parser("cv", parents=[common, data, solver], help="cross-validate the lambda path")

    p = sub.add_parser("path", parents=[common, data, solver], help="solve the regularization path")
    p.add_argument("--plot", action="store_true", help="draw the path in the terminal")
    p.add_argument("--coef-output", dest="path_output", help="long-form coefficient CSV")

    p = sub.add_parser("screen", parents=[common, data], help="F-test feature screening")
    p.add_argument("--d-n", dest="screen", type=int, help="features to keep (default: min(n, p))")

    p = sub.add_parser("simulate", parents=[common, solver], help="replicated simulation study")
    p.add_argument("--model", dest="model_id", help="built-in model 1..6")
    p.add_argument("--spec-file", dest="spec_file", help="custom model JSON")
    p.add_argument("--replicates", type=int, default=50)
    p.add_argument("--tuning", choices=["validation", "cv"], default="validation")
    p.add_argument("--fixed-u", dest="fixed_u", action="store_true", help="keep models 3/4 coefficients fixed")
    p.add_argument("--p", type=int, help="dimension (default 800)")
    p.add_argument("--replicates-output", dest="path_output", help="per-replicate CSV")

    p = sub.add_parser("equiv", parents=[common, data], help="two-class equivalence check")
    p.add_argument("--grid", type=int, default=20, help="number of lambdas")
    p.add_argument("--lambda-min-ratio", dest="lambda_min_ratio", type=float, default=0.05)
    p.add_argument("--n", type=int, default=100, help="rows of the generated instance")
    p.add_argument("--p", type=int, help="features of the generated instance (default 50)")

    p = sub.add_parser("fisher", parents=[common, data], help="Fisher directions from a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--cov-mode", dest="cov_mode", choices=["auto", "dense", "on-demand"], default="auto")

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose, args.quiet)

    try:
        config = RunConfig.from_namespace(args)
        config.validate()
        return COMMANDS[config.subcommand](config)
    except MSDAError as e:
        return handle_error(e)
