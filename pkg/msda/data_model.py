"""
Data model module - labeled datasets, CSV ingestion and model files.
"""

import json
import os
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from .errors import DataError, ModelFileError

if TYPE_CHECKING:
    from .classify import FittedClassifier
    from .solver import CoefMatrix

SCHEMA_NAME = "msda-model"
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    K: int
    feature_names: Optional[Tuple[str, ...]] = None
    label_names: Tuple[str, ...] = ()

    def __post_init__(self):
        features = np.array(self.features, dtype=float, copy=True)
        labels = np.array(self.labels, dtype=np.int64, copy=True)

        if features.ndim != 2:
            raise DataError("features must be a 2-d matrix")
        if labels.shape != (features.shape[0],):
            raise DataError(f"expected {features.shape[0]} labels, got {labels.shape[0]}")
        if not np.all(np.isfinite(features)):
            raise DataError("features contain non-finite values")
        if labels.size and (labels.min() < 1 or labels.max() > self.K):
            raise DataError(f"labels must lie in 1..{self.K}")

        counts = np.bincount(labels, minlength=self.K + 1)[1:]
        empty = [k + 1 for k in range(self.K) if counts[k] == 0]
        if empty:
            raise DataError(f"class(es) {empty} have zero rows")
        if features.shape[0] <= self.K:
            raise DataError(f"n <= K: {features.shape[0]} rows for {self.K} classes")

        names = self.label_names or tuple(str(k) for k in range(1, self.K + 1))
        if len(names) != self.K:
            raise DataError("label_names must have K entries")
        if self.feature_names is not None and len(self.feature_names) != features.shape[1]:
            raise DataError("feature_names must have p entries")

        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "label_names", tuple(names))
        if self.feature_names is not None:
            object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.K + 1)[1:]

    @classmethod
    def from_arrays(cls, features, labels, feature_names=None,
                    label_order: Optional[Sequence] = None) -> "LabeledDataset":
        """Builds a dataset from raw labels of any hashable type.

        Labels already equal to 1..K are kept; anything else is mapped to
        1..K in first-appearance order unless `label_order` is given.
        """
        codes, names = _encode_labels(list(labels), label_order)
        return cls(features, codes, len(names), feature_names, names)

    def subset(self, rows) -> "LabeledDataset":
        rows = np.asarray(rows)
        return LabeledDataset(self.features[rows], self.labels[rows], self.K,
                              self.feature_names, self.label_names)

    def select_features(self, columns) -> "LabeledDataset":
        columns = np.asarray(columns, dtype=np.int64)
        names = None
        if self.feature_names is not None:
            names = tuple(self.feature_names[j] for j in columns)
        return LabeledDataset(self.features[:, columns], self.labels, self.K,
                              names, self.label_names)

    def with_baseline(self, label: str) -> "LabeledDataset":
        """Returns the dataset re-coded so that `label` is class 1.

        The remaining classes keep their relative order.
        """
        label = str(label)
        if label not in self.label_names:
            raise DataError(f"unknown baseline label {label!r}")
        old = self.label_names.index(label) + 1
        order = [old] + [k for k in range(1, self.K + 1) if k != old]
        remap = np.zeros(self.K + 1, dtype=np.int64)
        for new, k in enumerate(order, start=1):
            remap[k] = new
        names = tuple(self.label_names[k - 1] for k in order)
        return LabeledDataset(self.features, remap[self.labels], self.K,
                              self.feature_names, names)

    def names_of(self, codes) -> List[str]:
        return [self.label_names[int(c) - 1] for c in codes]


def _encode_labels(raw: List[Any], label_order: Optional[Sequence] = None) -> Tuple[np.ndarray, Tuple[str, ...]]:
    values = [str(v).strip() for v in raw]

    if label_order is not None:
        names = tuple(str(v).strip() for v in label_order)
        if len(set(names)) != len(names):
            raise DataError("label order contains duplicates")
    else:
        seen: Dict[str, None] = {}
        for v in values:
            seen.setdefault(v, None)
        names = tuple(seen)
        # integer labels that already read 1..K keep their meaning
        try:
            as_int = sorted(int(v) for v in names)
            if as_int == list(range(1, len(names) + 1)):
                names = tuple(str(k) for k in as_int)
        except ValueError:
            pass

    index = {name: k for k, name in enumerate(names, start=1)}
    unknown = sorted(set(values) - set(index))
    if unknown:
        raise DataError(f"labels {unknown} are not in the label order")
    codes = np.array([index[v] for v in values], dtype=np.int64)
    return codes, names


def load_csv(path: str, label_column: Union[str, int] = -1, has_header: bool = True,
             label_order: Optional[Sequence] = None) -> LabeledDataset:
    """Reads a labeled CSV file.

    Args:
        path: comma separated UTF-8 file
        label_column: header name, or 0-based position (negative allowed)
        has_header: first row holds column names
        label_order: optional explicit label order; its first entry is class 1

    Returns:
        LabeledDataset, with the label name mapping in `label_names`
    """
    frame = read_table(path, has_header)

    if isinstance(label_column, str) and not has_header:
        raise DataError("label column given by name but the file has no header")
    if isinstance(label_column, str):
        if label_column not in frame.columns:
            raise DataError(f"label column {label_column!r} not found")
        position = list(frame.columns).index(label_column)
    else:
        position = int(label_column)
        if not -frame.shape[1] <= position < frame.shape[1]:
            raise DataError(f"label column index {position} out of range")
        position %= frame.shape[1]

    raw_labels = frame.iloc[:, position].tolist()
    feature_frame = frame.drop(columns=frame.columns[position])
    features = parse_features(feature_frame)

    feature_names = None
    if has_header:
        feature_names = tuple(str(c) for c in feature_frame.columns)

    codes, names = _encode_labels(raw_labels, label_order)
    dataset = LabeledDataset(features, codes, len(names), feature_names, names)
    logger.debug(f"Loaded {path}: n={dataset.n}, p={dataset.p}, K={dataset.K}, labels={names}")
    return dataset


def read_table(path: str, has_header: bool = True) -> pd.DataFrame:
    if not os.path.isfile(path):
        raise DataError(f"missing file: {path}")
    try:
        frame = pd.read_csv(path, header=0 if has_header else None, dtype=str,
                            keep_default_na=False, skipinitialspace=True, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"unreadable CSV {path}: {e}")
    if frame.shape[0] == 0 or frame.shape[1] == 0:
        raise DataError(f"empty CSV: {path}")
    return frame


def parse_features(frame: pd.DataFrame) -> np.ndarray:
    numeric = frame.apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))
    bad = numeric.isna().to_numpy()
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise DataError(f"non-numeric feature cell at row {row + 1}, column {frame.columns[col]!r}")
    values = numeric.to_numpy(dtype=float)
    if not np.all(np.isfinite(values)):
        raise DataError("non-finite feature value")
    return values


def write_csv(frame: pd.DataFrame, path: str, float_format: str = "%.10g") -> None:
    # printf-style formats are locale independent
    frame.to_csv(path, index=False, float_format=float_format, lineterminator="\n")


@dataclass
class ModelArtifact:
    coef: "CoefMatrix"
    classifier: "FittedClassifier"
    lam: float
    screening_map: Optional[np.ndarray] = None
    label_names: Tuple[str, ...] = ()
    feature_names: Optional[Tuple[str, ...]] = None
    n_features: Optional[int] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        theta = self.coef.theta
        if theta.shape[1] != self.classifier.projection.shape[1]:
            raise DataError("coef columns do not match the classifier projection dimension")
        if theta.shape != self.classifier.projection.shape:
            raise DataError("classifier projection does not match coef")
        if self.screening_map is not None and len(self.screening_map) != theta.shape[0]:
            raise DataError(f"screening_map length {len(self.screening_map)} != coef rows {theta.shape[0]}")
        if self.lam < 0:
            raise DataError("lambda must be >= 0")

    @property
    def input_width(self) -> int:
        if self.n_features is not None:
            return self.n_features
        return self.coef.theta.shape[0]

    def reduce(self, X: np.ndarray) -> np.ndarray:
        """Maps raw feature rows onto the columns the model was fitted on."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.input_width:
            raise DataError(f"expected {self.input_width} feature columns, got {X.shape[-1]}")
        if self.screening_map is not None:
            return X[:, self.screening_map]
        return X

    def predict(self, X: np.ndarray) -> np.ndarray:
        from .classify import predict
        return predict(self.classifier, self.reduce(X))

    def predict_names(self, X: np.ndarray) -> List[str]:
        return [self.label_names[int(c) - 1] for c in self.predict(X)]


def _encode_float(x: float) -> str:
    return format(float(x), ".17g")


def _encode_matrix(a: np.ndarray) -> Dict[str, Any]:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": [_encode_float(x) for x in a.ravel()]}


def _decode_matrix(obj: Dict[str, Any]) -> np.ndarray:
    shape = tuple(int(s) for s in obj["shape"])
    data = np.array([float(x) for x in obj["data"]], dtype=float)
    return data.reshape(shape)


def save_model(artifact: ModelArtifact, path: str) -> None:
    artifact.validate()
    clf = artifact.classifier
    metadata = dict(artifact.metadata)

    doc = {
        "schema": SCHEMA_NAME,
        "schema_version": SCHEMA_VERSION,
        "lambda": _encode_float(artifact.lam),
        "coef": _encode_matrix(artifact.coef.theta),
        "classifier": {
            "projection": _encode_matrix(clf.projection),
            "proj_means": _encode_matrix(clf.proj_means),
            "proj_prec": _encode_matrix(clf.proj_prec),
            "log_priors": [_encode_float(x) for x in clf.log_priors],
            "projected_rank": int(clf.projected_rank),
            "degenerate": bool(clf.degenerate),
        },
        "screening_map": None if artifact.screening_map is None else [int(j) for j in artifact.screening_map],
        "label_names": list(artifact.label_names),
        "feature_names": None if artifact.feature_names is None else list(artifact.feature_names),
        "n_features": artifact.n_features,
        "metadata": metadata,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
    logger.info(f"Model written to {path}")


def load_model(path: str) -> ModelArtifact:
    from .classify import FittedClassifier
    from .solver import CoefMatrix

    if not os.path.isfile(path):
        raise DataError(f"missing file: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ModelFileError(f"malformed model file {path}: {e}")

    if not isinstance(doc, dict) or doc.get("schema") != SCHEMA_NAME:
        raise ModelFileError(f"{path} is not a model file")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ModelFileError(f"model schema version {doc.get('schema_version')} != {SCHEMA_VERSION}")

    try:
        c = doc["classifier"]
        classifier = FittedClassifier(
            projection=_decode_matrix(c["projection"]),
            proj_means=_decode_matrix(c["proj_means"]),
            proj_prec=_decode_matrix(c["proj_prec"]),
            log_priors=np.array([float(x) for x in c["log_priors"]]),
            projected_rank=int(c["projected_rank"]),
            degenerate=bool(c["degenerate"]),
        )
        smap = doc["screening_map"]
        names = doc["feature_names"]
        artifact = ModelArtifact(
            coef=CoefMatrix(_decode_matrix(doc["coef"])),
            classifier=classifier,
            lam=float(doc["lambda"]),
            screening_map=None if smap is None else np.array(smap, dtype=np.int64),
            label_names=tuple(doc["label_names"]),
            feature_names=None if names is None else tuple(names),
            n_features=doc["n_features"],
            metadata=dict(doc["metadata"]),
        )
        artifact.validate()
    except (KeyError, TypeError, ValueError, DataError) as e:
        raise ModelFileError(f"malformed model file {path}: {e}")
    return artifact
