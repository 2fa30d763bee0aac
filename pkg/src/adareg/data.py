"""Dataset ingestion, generation, subsampling, and minibatching.

Sources: IDX image/label pairs (big-endian headers, magic 2051 for images
and 2049 for labels), numeric CSV regression tables whose trailing columns
are the targets, and a synthetic correlated multitask generator standing in
for robot-arm style regression (21 inputs, 7 related tasks by default).
Every routine is deterministic for fixed inputs and seeds.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    CountMismatch,
    ParseError,
    RaggedRows,
    SizeTooLarge,
    TruncatedFile,
)
from .net import Batch

__all__ = [
    "DatasetKind",
    "Dataset",
    "SyntheticMultitaskSpec",
    "load_idx",
    "write_idx",
    "load_csv_regression",
    "synth_multitask",
    "subsample",
    "batches",
    "standardize_inputs",
]

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049


class DatasetKind:
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # (n, d_in)
    targets: np.ndarray  # int labels (n,) or reals (n, d_out)
    kind: str

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"inputs must be (n, d) with n >= 1, got {x.shape}")
        if not np.isfinite(x).all():
            raise ValueError("inputs contain non-finite values")
        if self.kind == DatasetKind.CLASSIFICATION:
            y = np.asarray(self.targets, dtype=int)
            if y.shape != (x.shape[0],):
                raise ValueError(f"labels must be ({x.shape[0]},), got {y.shape}")
            if y.min() < 0:
                raise ValueError("class labels must be non-negative")
        elif self.kind == DatasetKind.REGRESSION:
            y = np.asarray(self.targets, dtype=float)
            if y.ndim == 1:
                y = y[:, None]
            if y.shape[0] != x.shape[0]:
                raise ValueError("inputs and targets disagree on n")
            if not np.isfinite(y).all():
                raise ValueError("targets contain non-finite values")
        else:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def num_classes(self) -> int:
        if self.kind != DatasetKind.CLASSIFICATION:
            raise ValueError("num_classes only applies to classification")
        return int(self.targets.max()) + 1

    def as_batch(self) -> Batch:
        return Batch(self.inputs, self.targets)


@dataclass(frozen=True)
class SyntheticMultitaskSpec:
    """Parameters of the correlated multitask regression generator."""

    n_train: int
    n_test: int
    input_dim: int = 21
    num_tasks: int = 7
    task_correlation: float = 0.0
    noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.n_train, self.n_test, self.input_dim, self.num_tasks) < 1:
            raise ValueError("all sizes must be positive")
        if not 0.0 <= self.task_correlation < 1.0:
            raise ValueError("task_correlation must lie in [0, 1)")
        if self.noise_std <= 0.0:
            raise ValueError("noise_std must be positive")


def _read_be_u32(f, path, what: str) -> int:
    raw = f.read(4)
    if len(raw) != 4:
        raise TruncatedFile(f"{path}: ran out of bytes reading {what}")
    return struct.unpack(">I", raw)[0]


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label file pair into a classification dataset.

    Pixels are scaled from bytes to [0, 1] and images flattened row-major
    to (n, rows*cols).
    """
    images_path = Path(images_path)
    labels_path = Path(labels_path)
    with open(images_path, "rb") as f:
        magic = _read_be_u32(f, images_path, "magic number")
        if magic != IMAGES_MAGIC:
            raise BadMagic(
                f"{images_path}: magic {magic}, expected {IMAGES_MAGIC}"
            )
        count = _read_be_u32(f, images_path, "item count")
        rows = _read_be_u32(f, images_path, "row count")
        cols = _read_be_u32(f, images_path, "column count")
        payload = f.read()
    expected = count * rows * cols
    if len(payload) < expected:
        raise TruncatedFile(
            f"{images_path}: expected {expected} pixel bytes, got {len(payload)}"
        )
    pixels = np.frombuffer(payload[:expected], dtype=np.uint8)
    inputs = pixels.reshape(count, rows * cols).astype(float) / 255.0

    with open(labels_path, "rb") as f:
        magic = _read_be_u32(f, labels_path, "magic number")
        if magic != LABELS_MAGIC:
            raise BadMagic(
                f"{labels_path}: magic {magic}, expected {LABELS_MAGIC}"
            )
        label_count = _read_be_u32(f, labels_path, "item count")
        label_bytes = f.read()
    if len(label_bytes) < label_count:
        raise TruncatedFile(
            f"{labels_path}: expected {label_count} label bytes, "
            f"got {len(label_bytes)}"
        )
    if label_count != count:
        raise CountMismatch(
            f"{count} images but {label_count} labels"
        )
    labels = np.frombuffer(label_bytes[:label_count], dtype=np.uint8).astype(int)
    return Dataset(inputs, labels, DatasetKind.CLASSIFICATION)


def write_idx(ds: Dataset, images_path, labels_path, rows: int, cols: int) -> None:
    """Write a classification dataset as an IDX image/label pair.

    Inputs must be [0, 1] scaled with rows*cols features; values are
    quantized back to bytes, so only byte-grid data round-trips exactly.
    """
    if ds.kind != DatasetKind.CLASSIFICATION:
        raise ValueError("only classification datasets can be written as IDX")
    if ds.inputs.shape[1] != rows * cols:
        raise ValueError(
            f"inputs have {ds.inputs.shape[1]} features, need {rows * cols}"
        )
    pixels = np.clip(np.rint(ds.inputs * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGES_MAGIC, ds.n, rows, cols))
        f.write(pixels.tobytes())
    labels = ds.targets.astype(np.uint8)
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, ds.n))
        f.write(labels.tobytes())


def _parse_cell(cell: str, row: int, col: int, path) -> float:
    try:
        return float(cell)
    except ValueError:
        raise ParseError(
            f"{path}: row {row}, column {col}: cannot parse {cell!r}"
        ) from None


def load_csv_regression(path, num_targets: int) -> Dataset:
    """Load a numeric CSV where the last ``num_targets`` columns are targets.

    A single header row is auto-detected (first row with any non-numeric
    cell) and skipped.  Rows of unequal width raise RaggedRows; bad cells
    raise ParseError with their location.
    """
    path = Path(path)
    if num_targets < 1:
        raise ValueError("num_targets must be >= 1")
    with open(path, newline="") as f:
        rows = [
            (i, [cell.strip() for cell in row])
            for i, row in enumerate(csv.reader(f))
            if row and any(cell.strip() for cell in row)
        ]
    if not rows:
        raise ParseError(f"{path}: file holds no data rows")

    def _numeric_row(cells):
        try:
            [float(c) for c in cells]
            return True
        except ValueError:
            return False

    start = 0
    if not _numeric_row(rows[0][1]):
        start = 1
        if len(rows) == 1:
            raise ParseError(f"{path}: only a header row present")
    width = len(rows[start][1])
    if width < num_targets + 1:
        raise ParseError(
            f"{path}: {width} columns cannot hold {num_targets} targets "
            "plus at least one input"
        )
    data = np.empty((len(rows) - start, width))
    for out_row, (line, cells) in enumerate(rows[start:]):
        if len(cells) != width:
            raise RaggedRows(
                f"{path}: row {line} has {len(cells)} cells, expected {width}"
            )
        for j, cell in enumerate(cells):
            data[out_row, j] = _parse_cell(cell, line, j, path)
    return Dataset(
        data[:, : width - num_targets],
        data[:, width - num_targets :],
        DatasetKind.REGRESSION,
    )


def synth_multitask(spec: SyntheticMultitaskSpec) -> tuple[Dataset, Dataset]:
    """Generate correlated multitask regression data, split train/test.

    Targets follow y = tanh(x A.T) B + eps.  The rows of B are i.i.d. draws
    from a Gaussian whose correlation between any two coordinates is
    ``task_correlation``, so task columns of B (and hence the noiseless
    targets) share that pairwise correlation.  Inputs are standard normal;
    train and test are disjoint slices of one stream.
    """
    rng = np.random.default_rng(spec.seed)
    d = spec.input_dim
    k = 2 * d  # hidden width of the generative map
    t = spec.num_tasks

    a = rng.normal(size=(k, d)) / np.sqrt(d)
    corr = np.full((t, t), spec.task_correlation)
    np.fill_diagonal(corr, 1.0)
    chol = np.linalg.cholesky(corr)
    b = (rng.normal(size=(k, t)) @ chol.T) / np.sqrt(k)

    n_total = spec.n_train + spec.n_test
    x = rng.normal(size=(n_total, d))
    clean = np.tanh(x @ a.T) @ b
    y = clean + rng.normal(scale=spec.noise_std, size=clean.shape)

    train = Dataset(x[: spec.n_train], y[: spec.n_train], DatasetKind.REGRESSION)
    test = Dataset(x[spec.n_train :], y[spec.n_train :], DatasetKind.REGRESSION)
    return train, test


def subsample(ds: Dataset, size: int, seed, stratified: bool = False) -> Dataset:
    """Seeded subsample of ``size`` examples, keeping input/target pairing.

    With ``stratified`` on a classification dataset, per-class counts differ
    by at most one (classes in ascending label order receive the remainder).
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    if size > ds.n:
        raise SizeTooLarge(f"requested {size} of {ds.n} examples")
    rng = np.random.default_rng(seed)
    if stratified and ds.kind == DatasetKind.CLASSIFICATION:
        classes = np.unique(ds.targets)
        base, extra = divmod(size, classes.size)
        picked = []
        for rank, label in enumerate(classes):
            want = base + (1 if rank < extra else 0)
            pool = np.flatnonzero(ds.targets == label)
            if want > pool.size:
                raise SizeTooLarge(
                    f"class {label} has {pool.size} examples, need {want}"
                )
            picked.append(rng.permutation(pool)[:want])
        idx = rng.permutation(np.concatenate(picked))
    else:
        idx = rng.permutation(ds.n)[:size]
    return Dataset(ds.inputs[idx], ds.targets[idx], ds.kind)


def batches(ds: Dataset, batch_size: int, seed):
    """Yield one epoch of minibatches after a seeded shuffle.

    The final short batch is included, so the union of all yielded batches
    is exactly the dataset.  Each call shuffles afresh from its seed;
    iterate once per epoch with a distinct seed.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    perm = np.random.default_rng(seed).permutation(ds.n)
    for lo in range(0, ds.n, batch_size):
        take = perm[lo : lo + batch_size]
        yield Batch(ds.inputs[take], ds.targets[take])


def standardize_inputs(train: Dataset, test: Dataset) -> tuple[Dataset, Dataset]:
    """Per-feature standardization fit on train, applied to both splits.

    Constant features are left unscaled (divisor 1) rather than divided by
    zero.
    """
    mean = train.inputs.mean(axis=0)
    std = train.inputs.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    return (
        Dataset((train.inputs - mean) / std, train.targets, train.kind),
        Dataset((test.inputs - mean) / std, test.targets, test.kind),
    )
