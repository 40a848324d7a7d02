"""Data ingestion, rank-based preprocessing, splitting and synthetic benchmarks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "Dataset",
    "QuantileTransformer",
    "SyntheticSpec",
    "SyntheticData",
    "load_csv",
    "write_csv",
    "fit_quantile_transform",
    "apply_transform",
    "generate_synthetic",
    "signal_components",
    "split",
]


@dataclass
class Dataset:
    """Numeric design matrix with a target column.

    ``features`` is ``(n, p)``; ``target`` is ``(n,)`` holding reals for
    regression or 0/1 labels for binary classification.
    """

    features: np.ndarray
    target: np.ndarray
    feature_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DataError("features must be a 2-d matrix")
        self.target = np.asarray(self.target, dtype=np.float64).reshape(-1)
        if self.target.shape[0] != self.features.shape[0]:
            raise DataError(
                f"target length {self.target.shape[0]} does not match "
                f"{self.features.shape[0]} feature rows"
            )
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain non-finite values")
        if not np.all(np.isfinite(self.target)):
            raise DataError("target contains non-finite values")
        if not self.feature_names:
            self.feature_names = [f"x{j + 1}" for j in range(self.features.shape[1])]
        if len(self.feature_names) != self.features.shape[1]:
            raise DataError("feature_names length does not match column count")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def is_binary(self) -> bool:
        return bool(np.all((self.target == 0.0) | (self.target == 1.0)))

    def check_binary(self):
        if not self.is_binary():
            raise DataError("classification targets must be 0/1")

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.features[rows], self.target[rows], list(self.feature_names))


def _parse_cell(text, row, col):
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"unparseable cell at row {row}, column {col!r}: {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"non-finite value at row {row}, column {col!r}: {text!r}")
    return value


def read_matrix(path) -> tuple[list[str], np.ndarray]:
    """Read a headed numeric CSV into ``(header, matrix)``.

    Rows are numbered from 1 for the first data line in error messages.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: missing header row") from None
        header = [h.strip() for h in header]
        rows = []
        for i, line in enumerate(reader, start=1):
            if not line:
                continue
            if len(line) != len(header):
                raise DataError(
                    f"{path}: row {i} has {len(line)} cells, expected {len(header)}"
                )
            rows.append([_parse_cell(cell.strip(), i, header[j]) for j, cell in enumerate(line)])
    matrix = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return header, matrix


def load_csv(path, target_column: str) -> Dataset:
    """Load a CSV file, splitting off ``target_column`` as the target."""
    header, matrix = read_matrix(path)
    if target_column not in header:
        raise DataError(f"target column not found: {target_column!r}")
    t = header.index(target_column)
    keep = [j for j in range(len(header)) if j != t]
    return Dataset(matrix[:, keep], matrix[:, t], [header[j] for j in keep])


def write_csv(ds: Dataset, path, target_name: str = "y"):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(ds.feature_names) + [target_name])
        for row, y in zip(ds.features, ds.target):
            w.writerow([repr(float(v)) for v in row] + [repr(float(y))])


# ---------------------------------------------------------------------------
# rank transform


@dataclass
class QuantileTransformer:
    """Per-feature monotone piecewise-linear map onto [0, 1].

    ``knots[j]`` are the sorted distinct training values of feature ``j`` and
    ``heights[j]`` their average-rank CDF heights. Constant training columns
    have a single knot and map everything to 0.5.
    """

    knots: list[np.ndarray]
    heights: list[np.ndarray]
    warnings: list[str] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.knots)

    def transform(self, features) -> np.ndarray:
        return apply_transform(self, features)

    def inverse(self, j: int, u) -> np.ndarray:
        """Map ranks ``u`` in [0, 1] back to raw units of feature ``j``."""
        u = np.asarray(u, dtype=np.float64)
        k, h = self.knots[j], self.heights[j]
        if k.size == 1:
            return np.full_like(u, k[0])
        # inverse of the clamp: ranks below the first height land on the minimum
        return np.interp(u, h, k)

    def to_dict(self) -> dict:
        return {
            "knots": [k.tolist() for k in self.knots],
            "heights": [h.tolist() for h in self.heights],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuantileTransformer":
        knots = [np.asarray(k, dtype=np.float64) for k in d["knots"]]
        heights = [np.asarray(h, dtype=np.float64) for h in d["heights"]]
        if len(knots) != len(heights) or any(k.shape != h.shape for k, h in zip(knots, heights)):
            raise DataError("malformed transformer: knots and heights disagree")
        return cls(knots, heights)


def fit_quantile_transform(train_features) -> QuantileTransformer:
    """Fit the average-rank map of every column of ``train_features``."""
    X = np.asarray(train_features, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("train_features must be 2-d")
    n = X.shape[0]
    if n < 2:
        raise DataError("at least 2 rows are needed to fit the rank transform")
    knots, heights, warnings = [], [], []
    for j in range(X.shape[1]):
        values, inverse, counts = np.unique(X[:, j], return_inverse=True, return_counts=True)
        if values.size == 1:
            knots.append(values)
            heights.append(np.array([0.5]))
            warnings.append(f"feature {j + 1} is constant; mapped to 0.5")
            continue
        last = np.cumsum(counts) - 1
        first = last - counts + 1
        knots.append(values)
        heights.append((first + last) / (2.0 * (n - 1)))
    return QuantileTransformer(knots, heights, warnings)


def apply_transform(t: QuantileTransformer, features) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != t.n_features:
        raise DataError(f"expected {t.n_features} columns, got {X.shape[1]}")
    out = np.empty_like(X)
    for j in range(X.shape[1]):
        k, h = t.knots[j], t.heights[j]
        if k.size == 1:
            out[:, j] = 0.5
            continue
        col = np.interp(X[:, j], k, h)
        col[X[:, j] < k[0]] = 0.0
        col[X[:, j] > k[-1]] = 1.0
        out[:, j] = col
    return out


# ---------------------------------------------------------------------------
# synthetic benchmarks


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str = "F1"
    n: int = 15000
    snr: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _GENERATORS:
            raise ConfigError(f"unknown synthetic kind {self.kind!r}; expected F1, F2 or F3")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if not self.snr > 0:
            raise ConfigError("snr must be > 0")


@dataclass
class SyntheticData:
    dataset: Dataset
    signal: frozenset
    noiseless: np.ndarray
    noise_var: float

    @property
    def noise_std(self) -> float:
        return math.sqrt(self.noise_var)


def _f1(X):
    x1, x2, x3, x4, x5 = X.T
    return (
        10 * x1
        + 10 * x2
        + 20 * (x3 - 0.3) * (x3 - 0.6)
        + 20 * x4
        + 5 * x5
        + 10 * np.sin(np.pi * x1 * x2)
    )


def _f2(X):
    x1, x2, x3, x4, x5, x6, x7, x8, x9, x10 = X.T
    return (
        np.pi ** (x1 * x2) * np.sqrt(2 * x3)
        - np.arcsin(x4)
        + np.log(x3 + x5)
        - (x9 / x10) * np.sqrt(x7 / x8)
        - x2 * x7
    )


def _f3(X):
    x1, x2, x3, x4, x5, x6, x7, x8, x9, x10 = X.T
    # x3 ** (2|x4|) read as |x3| ** (2|x4|) so negative bases stay real
    return (
        np.exp(np.abs(x1 - x2))
        + np.abs(x2 * x3)
        - np.abs(x3) ** (2 * np.abs(x4))
        + np.log(x4**2 + x5**2 + x7**2 + x8**2)
        + x9
        + 1 / (1 + x10**2)
    )


def _inputs_f1(rng, n):
    return rng.uniform(0.0, 1.0, size=(n, 5))


def _inputs_f2(rng, n):
    X = rng.uniform(0.0, 1.0, size=(n, 10))
    narrow = [3, 4, 7, 9]  # x4, x5, x8, x10 ~ U(0.6, 1)
    X[:, narrow] = 0.6 + 0.4 * X[:, narrow]
    return X


def _inputs_f3(rng, n):
    return rng.uniform(-1.0, 1.0, size=(n, 10))


# Feature groups (1-based) that appear together in one additive term of each
# formula. A main effect or pair is a signal component iff its features all
# occur inside one group.
_TERMS = {
    "F1": [(1,), (2,), (3,), (4,), (5,), (1, 2)],
    # pi^(x1 x2) sqrt(2 x3), asin(x4), log(x3 + x5), (x9/x10) sqrt(x7/x8), x2 x7
    "F2": [(1, 2, 3), (4,), (3, 5), (7, 8, 9, 10), (2, 7)],
    # exp|x1-x2|, |x2 x3|, |x3|^(2|x4|), log(x4^2+x5^2+x7^2+x8^2), x9, 1/(1+x10^2)
    "F3": [(1, 2), (2, 3), (3, 4), (4, 5, 7, 8), (9,), (10,)],
}

_GENERATORS = {
    "F1": (_inputs_f1, _f1, 5),
    "F2": (_inputs_f2, _f2, 10),
    "F3": (_inputs_f3, _f3, 10),
}


def signal_components(kind: str, order: int = 2) -> frozenset:
    """True signal components (0-based index tuples) up to ``order``."""
    from itertools import combinations

    out = set()
    for term in _TERMS[kind]:
        for r in range(1, order + 1):
            for S in combinations(term, r):
                out.add(tuple(j - 1 for j in S))
    return frozenset(out)


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    """Draw a synthetic benchmark data set.

    The noise variance is the empirical variance of the noiseless signal
    divided by ``spec.snr``; ``snr=inf`` yields noiseless targets.
    """
    inputs, fn, p = _GENERATORS[spec.kind]
    rng = np.random.default_rng(spec.seed)
    X = inputs(rng, spec.n)
    signal = fn(X)
    noise_var = float(np.var(signal)) / spec.snr if math.isfinite(spec.snr) else 0.0
    eps = rng.standard_normal(spec.n) * math.sqrt(noise_var)
    ds = Dataset(X, signal + eps, [f"x{j + 1}" for j in range(p)])
    return SyntheticData(ds, signal_components(spec.kind), signal, noise_var)


def noiseless_function(kind: str):
    """The noiseless regression function of a synthetic benchmark."""
    return _GENERATORS[kind][1]


# ---------------------------------------------------------------------------
# splitting


def split(d: Dataset, ratios=(0.7, 0.1, 0.2), seed: int = 0):
    """Random disjoint (train, val, test) partition.

    Validation and test sizes are floor-rounded; the remainder goes to train.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError("ratios must be three positive numbers summing to 1")
    n = d.n
    n_val = int(math.floor(n * ratios[1] + 1e-9))
    n_test = int(math.floor(n * ratios[2] + 1e-9))
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise DataError(f"split of {n} rows with ratios {ratios} leaves an empty part")
    perm = np.random.default_rng(seed).permutation(n)
    tr, va, te = np.split(perm, [n_train, n_train + n_val])
    return d.subset(tr), d.subset(va), d.subset(te)
