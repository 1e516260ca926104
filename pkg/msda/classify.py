"""
Classify module - projected LDA, Bayes-rule prediction, F-test screening
and Fisher-direction recovery.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd
from loguru import logger
from scipy import linalg
from scipy.special import logsumexp
from scipy.stats import f_oneway

from .data_model import LabeledDataset
from .errors import DataError
from .solver import CoefMatrix
from .suffstats import SuffStats, variance_floor

# eigenvalues below this fraction of the largest are treated as zero
PINV_CUTOFF = 1e-10


@dataclass
class FittedClassifier:
    projection: np.ndarray      # p x (K-1)
    proj_means: np.ndarray      # K x (K-1)
    proj_prec: np.ndarray       # (K-1) x (K-1)
    log_priors: np.ndarray      # K
    projected_rank: int
    degenerate: bool = False

    @property
    def K(self) -> int:
        return self.proj_means.shape[0]


def projected_precision(cov: np.ndarray) -> Tuple[np.ndarray, int]:
    """Pseudo-inverse of a symmetric PSD matrix and its numerical rank."""
    cov = (cov + cov.T) / 2
    if cov.size == 0:
        return np.zeros_like(cov), 0
    w, V = np.linalg.eigh(cov)
    top = max(float(w.max()), 0.0)
    keep = w > PINV_CUTOFF * top
    if top == 0.0 or not keep.any():
        return np.zeros_like(cov), 0
    Vk = V[:, keep]
    return (Vk / w[keep]) @ Vk.T, int(keep.sum())


def fit_projected_lda(data: LabeledDataset, theta: CoefMatrix, uniform_priors: bool = False,
                      warn: bool = True) -> FittedClassifier:
    """Classical LDA on the scores XΘ̂ (K−1 columns).

    A zero Θ̂ gives a prior-only classifier flagged `degenerate`.
    """
    projection = np.asarray(theta.theta if isinstance(theta, CoefMatrix) else theta, dtype=float)
    if projection.shape[0] != data.p:
        raise DataError(f"coefficient rows {projection.shape[0]} != feature count {data.p}")

    Z = data.features @ projection
    idx = data.labels - 1
    means = np.vstack([Z[idx == k].mean(axis=0) for k in range(data.K)])
    centered = Z - means[idx]
    cov = centered.T @ centered / (data.n - data.K)
    prec, rank = projected_precision(cov)

    if uniform_priors:
        log_priors = np.full(data.K, -np.log(data.K))
    else:
        log_priors = np.log(data.class_counts / data.n)

    degenerate = rank == 0
    if degenerate and warn:
        logger.warning("Zero projection: the classifier predicts from the priors only")

    return FittedClassifier(projection, means, prec, log_priors, rank, degenerate)


def discriminant_scores(classifier: FittedClassifier, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != classifier.projection.shape[0]:
        raise DataError(f"expected {classifier.projection.shape[0]} feature columns")
    if not np.all(np.isfinite(X)):
        bad = np.flatnonzero(~np.all(np.isfinite(X), axis=1))
        raise DataError(f"non-finite values in input rows {bad[:10].tolist()}")

    M = classifier.proj_means
    PM = classifier.proj_prec @ M.T
    Z = X @ classifier.projection
    return Z @ PM - 0.5 * np.einsum("kd,dk->k", M, PM) + classifier.log_priors


def predict(classifier: FittedClassifier, X: np.ndarray) -> np.ndarray:
    """Bayes-rule labels in 1..K; ties go to the smallest class index."""
    return np.argmax(discriminant_scores(classifier, X), axis=1) + 1


def error_rate(classifier: FittedClassifier, X: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(predict(classifier, X) != np.asarray(labels)))


def log_posteriors(classifier: FittedClassifier, X: np.ndarray) -> np.ndarray:
    scores = discriminant_scores(classifier, X)
    return scores - logsumexp(scores, axis=1, keepdims=True)


def deviance(classifier: FittedClassifier, X: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log posterior of the true class."""
    labels = np.asarray(labels)
    logp = log_posteriors(classifier, X)
    return float(-np.mean(logp[np.arange(labels.size), labels - 1]))


@dataclass
class ScreeningReport:
    f_stats: np.ndarray
    kept: np.ndarray        # ascending feature indices
    d_n: int
    ranking: np.ndarray     # all features, best first

    def to_frame(self, feature_names=None) -> pd.DataFrame:
        rank = np.empty_like(self.ranking)
        rank[self.ranking] = np.arange(1, len(self.ranking) + 1)
        kept = np.zeros(len(self.f_stats), dtype=int)
        kept[self.kept] = 1
        names = feature_names if feature_names is not None else [str(j) for j in range(len(self.f_stats))]
        return pd.DataFrame({
            "feature": np.arange(len(self.f_stats)),
            "name": list(names),
            "f_stat": self.f_stats,
            "rank": rank,
            "kept": kept,
        })


def f_statistics(data: LabeledDataset) -> np.ndarray:
    """One-way ANOVA F per feature.

    A feature with no within-class spread gets +inf when the class means
    differ and 0 when it is constant overall.
    """
    X = data.features
    groups = [X[data.labels == k] for k in range(1, data.K + 1)]
    within = sum(len(g) * g.var(axis=0) for g in groups) / (data.n - data.K)

    floor = variance_floor(X)
    flat = within <= floor
    f = np.zeros(data.p)
    if not flat.all():
        f[~flat] = f_oneway(*[g[:, ~flat] for g in groups], axis=0).statistic
    f[flat & (X.var(axis=0) > floor)] = np.inf
    return f


def f_screen(data: LabeledDataset, d_n: int) -> ScreeningReport:
    """Keeps the d_n features with the largest F statistics."""
    if not 1 <= d_n <= data.p:
        raise DataError(f"d_n must lie in 1..{data.p}, got {d_n}")
    f = f_statistics(data)
    ranking = np.lexsort((np.arange(data.p), -f))
    kept = np.sort(ranking[:d_n])
    logger.info(f"F screening kept {d_n} of {data.p} features")
    return ScreeningReport(f, kept, int(d_n), ranking)


@dataclass
class FisherDirections:
    eta: np.ndarray             # p x r, unit columns
    eigenvalues: np.ndarray     # r, descending
    support: np.ndarray

    @property
    def n_directions(self) -> int:
        return len(self.eigenvalues)


def _orient(vectors: np.ndarray) -> np.ndarray:
    vectors = vectors / np.linalg.norm(vectors, axis=0)
    signs = np.sign(vectors[np.argmax(np.abs(vectors), axis=0), np.arange(vectors.shape[1])])
    return vectors * np.where(signs == 0, 1.0, signs)


def recover_fisher(theta: CoefMatrix, stats: SuffStats) -> FisherDirections:
    """Fisher directions from Θ̂ via the right eigenvectors of θ̂₀Πδ̂₀ᵀ.

    Only the rows in support(Θ̂) enter the eigenproblem; the result is zero
    elsewhere.
    """
    Theta = theta.theta
    p, K = stats.p, stats.K
    if Theta.shape != (p, K - 1):
        raise DataError("coefficients do not match the statistics")

    support = theta.active_blocks
    if support.size == 0:
        return FisherDirections(np.zeros((p, 0)), np.zeros(0), support)

    theta0 = np.hstack([np.zeros((support.size, 1)), Theta[support]])
    Pi = np.eye(K) - np.full((K, K), 1.0 / K)
    delta0 = (stats.class_means[:, support] - stats.grand_mean[support]).T
    M = theta0 @ Pi @ delta0.T

    vals, vecs = linalg.eig(M)
    size = np.linalg.norm(M, 2)
    accept = (vals.real > PINV_CUTOFF * size) & (np.abs(vals.imag) <= 1e-8 * size)
    order = np.flatnonzero(accept)[np.argsort(-vals.real[accept], kind="stable")]

    eta = np.zeros((p, order.size))
    if order.size:
        eta[support] = _orient(vecs[:, order].real)
    return FisherDirections(eta, vals.real[order], support)


def fisher_directions_direct(stats: SuffStats) -> FisherDirections:
    """Fisher directions from the generalized problem Σ̂_b η = ν Σ̂ η (dense Σ̂)."""
    centered = stats.class_means - stats.grand_mean
    Sb = (centered.T * stats.priors) @ centered
    S = stats.cov.dense()
    vals, vecs = linalg.eigh(Sb, S)
    top = max(float(vals.max()), 0.0)
    keep = np.flatnonzero(vals > PINV_CUTOFF * top)[::-1] if top > 0 else np.zeros(0, dtype=int)
    eta = _orient(vecs[:, keep]) if keep.size else np.zeros((stats.p, 0))
    return FisherDirections(eta, vals[keep], np.arange(stats.p))
