"""Dataset ingestion, normalization, splitting, and synthetic generators.

The synthetic generators stand in for external benchmark data: one plants a
known informative feature subset (so selection quality has a ground-truth
oracle), the other produces a small-n / large-d sparse binary-outcome table
that overfit-prone networks need regularization to handle.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError

_CACHE_MAGIC = b"BMDSET01"


@dataclass
class Dataset:
    """Feature matrix plus labels.

    Labels are int64 class ids for classification (binary tasks use {0, 1}).
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: list[str] | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DataError(f"features must be 2-d, got shape {self.features.shape}")
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 1 or self.labels.shape[0] != self.features.shape[0]:
            raise DataError(
                f"labels shape {self.labels.shape} does not match {self.features.shape[0]} rows"
            )
        if self.features.shape[0] < 1:
            raise DataError("dataset is empty")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    def subset(self, rows) -> "Dataset":
        return Dataset(self.features[rows], self.labels[rows], self.feature_names)

    def select_features(self, columns) -> "Dataset":
        cols = np.asarray(list(columns), dtype=np.int64)
        names = None
        if self.feature_names is not None:
            names = [self.feature_names[c] for c in cols]
        return Dataset(self.features[:, cols], self.labels.copy(), names)


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    validation_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.test_fraction < 1.0 and 0.0 <= self.validation_fraction < 1.0):
            raise DataError("split fractions must be in [0, 1)")
        if self.test_fraction + self.validation_fraction >= 1.0:
            raise DataError("split fractions must sum to less than 1")


def split_dataset(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset | None, Dataset]:
    """Random (train, validation, test) partition; validation is None at fraction 0."""
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(ds.n)
    n_test = int(round(spec.test_fraction * ds.n))
    n_val = int(round(spec.validation_fraction * ds.n))
    test = ds.subset(order[:n_test])
    val = ds.subset(order[n_test:n_test + n_val]) if n_val > 0 else None
    train = ds.subset(order[n_test + n_val:])
    return train, val, test


def load_csv(path, label_col: int = -1, header: bool = False) -> Dataset:
    """Numeric CSV -> Dataset. Raises DataError naming the offending row."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    rows = []
    names = None
    with fh:
        reader = csv.reader(fh)
        for line_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if header and names is None and line_no == 1:
                names = row
                continue
            rows.append((line_no, row))
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(rows[0][1])
    if width < 2:
        raise DataError(f"{path}: rows need at least one feature and a label")
    col = label_col if label_col >= 0 else width + label_col
    if not 0 <= col < width:
        raise DataError(f"label column {label_col} outside row width {width}")
    features = np.empty((len(rows), width - 1))
    raw_labels = np.empty(len(rows))
    for i, (line_no, row) in enumerate(rows):
        if len(row) != width:
            raise DataError(f"row {line_no}: expected {width} fields, got {len(row)}")
        try:
            values = [float(tok) for tok in row]
        except ValueError:
            bad = next(tok for tok in row if not _is_float(tok))
            raise DataError(f"row {line_no}: non-numeric value {bad!r}") from None
        raw_labels[i] = values.pop(col)
        features[i] = values
    if np.all(raw_labels == np.floor(raw_labels)):
        labels = raw_labels.astype(np.int64)
    else:
        labels = raw_labels
    if names is not None:
        if len(names) != width:
            raise DataError(f"header has {len(names)} fields, rows have {width}")
        names = [nm for j, nm in enumerate(names) if j != col]
    return Dataset(features, labels, names)


def _is_float(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


def save_cache(ds: Dataset, path):
    """Binary sidecar: magic, dims, row-major float64 features, labels.

    Layout (little endian): 8-byte magic "BMDSET01", uint64 n, uint64 d,
    uint64 label kind (0 = int64 class ids, 1 = float64 targets), n*d
    float64 features, n labels.
    """
    label_kind = 0 if ds.labels.dtype == np.int64 else 1
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<QQQ", ds.n, ds.d, label_kind))
        fh.write(np.ascontiguousarray(ds.features, dtype="<f8").tobytes())
        if label_kind == 0:
            fh.write(np.ascontiguousarray(ds.labels, dtype="<i8").tobytes())
        else:
            fh.write(np.ascontiguousarray(ds.labels, dtype="<f8").tobytes())


def load_cache(path) -> Dataset:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _CACHE_MAGIC:
            raise DataError(f"{path}: not a dataset cache (bad magic {magic!r})")
        n, d, label_kind = struct.unpack("<QQQ", fh.read(24))
        features = np.frombuffer(fh.read(n * d * 8), dtype="<f8").reshape(n, d)
        dtype = "<i8" if label_kind == 0 else "<f8"
        labels = np.frombuffer(fh.read(n * 8), dtype=dtype)
    return Dataset(features.copy(), labels.copy())


def normalize(train: Dataset, others=()) -> tuple[Dataset, list[Dataset]]:
    """Linear per-column rescale to [0, 1] with statistics from the train set.

    Zero-range columns map to 0 everywhere; values outside the train range
    in the other datasets are clipped into [0, 1].
    """
    lo = train.features.min(axis=0)
    hi = train.features.max(axis=0)
    span = hi - lo
    zero = span == 0.0
    safe_span = np.where(zero, 1.0, span)

    def apply(ds: Dataset) -> Dataset:
        scaled = (ds.features - lo) / safe_span
        scaled[:, zero] = 0.0
        np.clip(scaled, 0.0, 1.0, out=scaled)
        return Dataset(scaled, ds.labels.copy(), ds.feature_names)

    return apply(train), [apply(ds) for ds in others]


def duplicate_to_min_batches(ds: Dataset, batch_size: int, min_batches: int = 30) -> Dataset:
    """Repeat the whole dataset until it yields at least min_batches minibatches."""
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    if ds.n // batch_size >= min_batches:
        return ds
    factor = -(-min_batches * batch_size // ds.n)  # ceil division
    features = np.tile(ds.features, (factor, 1))
    labels = np.tile(ds.labels, factor)
    return Dataset(features, labels, ds.feature_names)


def synth_planted_features(
    n: int, d: int, informative: int, noise: float = 0.0, seed: int = 0
) -> tuple[Dataset, np.ndarray]:
    """Binary dataset whose labels depend on exactly ``informative`` columns.

    Labels come from a random two-layer tanh function of the planted
    columns, thresholded at its median so classes stay balanced, then
    flipped independently with probability ``noise``. The remaining columns
    are independent uniform noise. Returns the dataset and the sorted
    planted index vector.
    """
    if informative > d:
        raise DataError("informative feature count cannot exceed d")
    rng = np.random.default_rng(seed)
    features = rng.uniform(size=(n, d))
    planted = np.sort(rng.choice(d, size=informative, replace=False))
    if informative == 0:
        labels = rng.integers(0, 2, size=n)
        return Dataset(features, labels.astype(np.int64)), planted
    hidden = 3
    w1 = rng.normal(scale=2.0 / np.sqrt(informative), size=(informative, hidden))
    b1 = rng.normal(scale=0.5, size=hidden)
    w2 = rng.normal(size=hidden)
    score = np.tanh((features[:, planted] - 0.5) @ w1 + b1) @ w2
    labels = (score > np.median(score)).astype(np.int64)
    if noise > 0.0:
        flip = rng.random(n) < noise
        labels[flip] = 1 - labels[flip]
    return Dataset(features, labels), planted


def synth_overfit_prone(
    n: int, d: int, sparse_rate: float = 0.94, seed: int = 0
) -> Dataset:
    """Small-n / large-d sparse binary-outcome table that invites overfitting.

    Every feature is zero with probability ``sparse_rate``. The outcome
    follows a sparse ground-truth rule: a linear term over a small active
    feature set plus a few pairwise interactions, squashed to a probability,
    so labels carry irreducible noise for a network to overfit.
    """
    if not 0.0 <= sparse_rate <= 1.0:
        raise DataError("sparse_rate must be in [0, 1]")
    rng = np.random.default_rng(seed)
    present = rng.random((n, d)) >= sparse_rate
    features = present * rng.uniform(size=(n, d))
    n_active = min(30, d)
    active = rng.choice(d, size=n_active, replace=False)
    w_lin = rng.normal(size=n_active) * 4.0
    logit = features[:, active] @ w_lin
    n_pairs = min(8, n_active // 2)
    for i in range(n_pairs):
        a, b = active[2 * i], active[2 * i + 1]
        logit += 6.0 * rng.normal() * features[:, a] * features[:, b]
    logit -= np.median(logit)
    prob = 1.0 / (1.0 + np.exp(-5.0 * logit))
    labels = (rng.random(n) < prob).astype(np.int64)
    return Dataset(features, labels)
