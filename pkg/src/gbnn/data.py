"""Dataset loading, preprocessing, fold planning and mini-batching."""
import csv
import gzip
import struct
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError, FormatError, ParseError

TABULAR = "tabular"
IMAGE = "image"

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Features plus one-hot labels.

    ``features`` is N x Fe for tabular data and N x H x W x C for images.
    """

    features: np.ndarray
    labels_onehot: np.ndarray
    class_names: list
    kind: str = TABULAR

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels_onehot = np.ascontiguousarray(self.labels_onehot, dtype=np.float64)
        n = self.features.shape[0]
        if n == 0:
            raise DataError("dataset is empty")
        if self.labels_onehot.shape[0] != n:
            raise DataError(
                f"{n} feature rows but {self.labels_onehot.shape[0]} label rows")
        if self.num_classes < 2:
            raise DataError("need at least two classes")
        if len(self.class_names) != self.num_classes:
            raise DataError("one class name per label column required")
        check_onehot(self.labels_onehot)
        if self.kind not in (TABULAR, IMAGE):
            raise DataError(f"unknown dataset kind {self.kind!r}")

    def __len__(self):
        return self.features.shape[0]

    @property
    def num_classes(self):
        return self.labels_onehot.shape[1]

    @property
    def input_shape(self):
        return self.features.shape[1:]

    @property
    def labels(self):
        return self.labels_onehot.argmax(axis=1)

    def subset(self, idx):
        return replace(self, features=self.features[idx], labels_onehot=self.labels_onehot[idx])


def check_onehot(y):
    y = np.asarray(y)
    if y.ndim != 2:
        raise DataError(f"one-hot labels must be 2-D, got shape {y.shape}")
    ok = np.all((y == 0) | (y == 1), axis=1) & (y.sum(axis=1) == 1)
    if not ok.all():
        raise DataError(f"row {int(np.argmin(ok))} is not a one-hot vector")


def onehot(indices, num_classes):
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros((indices.shape[0], num_classes))
    out[np.arange(indices.shape[0]), indices] = 1.0
    return out


def _encode_labels(raw_labels, class_names=None):
    """Map labels to contiguous indices in order of first appearance."""
    names = list(class_names) if class_names is not None else []
    lookup = {name: i for i, name in enumerate(names)}
    idx = []
    for value in raw_labels:
        if value not in lookup:
            if class_names is not None:
                raise DataError(f"label {value!r} not among known classes")
            lookup[value] = len(names)
            names.append(value)
        idx.append(lookup[value])
    return np.array(idx, dtype=np.int64), names


def _open_text(path):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8", newline="")
    return open(path, encoding="utf-8", newline="")


def load_csv(path, label_column=-1, has_header=False, class_names=None):
    """Read a comma-separated numeric table.

    ``label_column`` is an index (negative counts from the end) or, when the
    file has a header, a column name.  Labels are kept as strings and mapped
    to classes in order of first appearance unless ``class_names`` pins the
    mapping (used when loading a test file for an existing model).
    """
    with _open_text(path) as fh:
        rows = list(csv.reader(fh))
    header = None
    first_row = 1
    if has_header:
        if not rows:
            raise DataError(f"{path}: no header row")
        header, rows = rows[0], rows[1:]
        first_row = 2
    rows = [(i, r) for i, r in enumerate(rows, start=first_row) if any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: no data rows")

    width = len(rows[0][1])
    if isinstance(label_column, str):
        if header is None or label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not in header")
        col = header.index(label_column)
    else:
        col = int(label_column)
        if not -width <= col < width:
            raise DataError(f"{path}: label column {label_column} out of range")
        col %= width

    feats, raw_labels = [], []
    for lineno, row in rows:
        if len(row) != width:
            raise ParseError(f"{path}: row {lineno} has {len(row)} cells, expected {width}")
        label = row[col].strip()
        if not label:
            raise ParseError(f"{path}: row {lineno}, column {col}: missing label")
        values = []
        for j, cell in enumerate(row):
            if j == col:
                continue
            try:
                values.append(float(cell))
            except ValueError:
                raise ParseError(
                    f"{path}: row {lineno}, column {j}: non-numeric cell {cell!r}") from None
        feats.append(values)
        raw_labels.append(label)

    idx, names = _encode_labels(raw_labels, class_names)
    if len(names) < 2:
        raise DataError(f"{path}: only one class present")
    return Dataset(np.array(feats, dtype=np.float64), onehot(idx, len(names)), names, TABULAR)


def _read_idx(path, magic):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise FormatError(f"{path}: truncated IDX header")
    found, count = struct.unpack(">II", blob[:8])
    if found != magic:
        raise FormatError(f"{path}: bad IDX magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", blob[4:header])
    size = int(np.prod(dims))
    if len(blob) - header < size:
        raise FormatError(f"{path}: truncated IDX payload ({len(blob) - header} of {size} bytes)")
    return np.frombuffer(blob, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path, class_names=None):
    """Read an MNIST-style IDX image/label pair into an N x H x W x 1 dataset.

    Pixel values stay in [0, 255]; use :func:`preprocess` to rescale.
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if class_names is None:
        k = max(int(labels.max()) + 1, 2)
        class_names = [str(i) for i in range(k)]
    if labels.max() >= len(class_names):
        raise DataError(f"label {int(labels.max())} outside {len(class_names)} classes")
    return Dataset(images.astype(np.float64)[..., None],
                   onehot(labels, len(class_names)), list(class_names), IMAGE)


def write_idx(path, array, magic):
    """Write a uint8 array as an IDX file (inverse of the reader)."""
    array = np.asarray(array, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def save_dataset(path, ds):
    np.savez(path, features=ds.features, labels_onehot=ds.labels_onehot,
             class_names=np.array(ds.class_names, dtype=str), kind=np.array(ds.kind))


def load_dataset(path):
    with np.load(path, allow_pickle=False) as z:
        return Dataset(z["features"], z["labels_onehot"], [str(c) for c in z["class_names"]],
                       str(z["kind"]))


@dataclass
class Preprocessor:
    """Fitted preprocessing.  ``apply`` reuses the stored statistics, so test
    folds are transformed with train-fold statistics only."""

    mode: str
    mean: np.ndarray = None
    std: np.ndarray = None
    clamped: list = field(default_factory=list)

    def apply(self, ds):
        if self.mode == "none":
            return ds
        if self.mode == "rescale":
            return replace(ds, features=ds.features / 255.0)
        if ds.features.shape[1:] != self.mean.shape:
            raise DataError(
                f"features of shape {ds.features.shape[1:]} do not match "
                f"fitted statistics {self.mean.shape}")
        return replace(ds, features=(ds.features - self.mean) / self.std)

    def to_dict(self):
        out = {"mode": self.mode}
        if self.mean is not None:
            out["mean"] = self.mean.tolist()
            out["std"] = self.std.tolist()
        return out

    @classmethod
    def from_dict(cls, d):
        mean = np.array(d["mean"]) if "mean" in d else None
        std = np.array(d["std"]) if "std" in d else None
        return cls(d["mode"], mean, std)


def fit_preprocessor(ds, mode):
    if mode in ("none", "rescale"):
        return Preprocessor(mode)
    if mode != "standardize":
        raise ConfigError(f"unknown preprocessing mode {mode!r}")
    mean = ds.features.mean(axis=0)
    std = ds.features.std(axis=0)
    zero = std == 0
    clamped = [int(i) for i in np.flatnonzero(zero.ravel())]
    if clamped:
        warnings.warn(f"zero-variance features {clamped}: variance clamped to 1", stacklevel=2)
    std = np.where(zero, 1.0, std)
    return Preprocessor(mode, mean, std, clamped)


def preprocess(ds, mode):
    """Fit ``mode`` on ``ds`` and apply it; returns ``(dataset, preprocessor)``."""
    prep = fit_preprocessor(ds, mode)
    return prep.apply(ds), prep


@dataclass
class FoldPlan:
    folds: list
    k: int
    seed: int


def kfold(n, k, seed=0):
    """Shuffle ``range(n)`` with ``seed`` and cut it into ``k`` test folds of
    near-equal size."""
    if k < 2:
        raise ConfigError("k must be >= 2")
    if k > n:
        raise ConfigError(f"cannot make {k} folds from {n} samples")
    perm = np.random.default_rng(seed).permutation(n)
    folds = []
    for test in np.array_split(perm, k):
        mask = np.ones(n, dtype=bool)
        mask[test] = False
        folds.append((np.flatnonzero(mask), np.sort(test)))
    return FoldPlan(folds, k, seed)


def batches(n, size, seed=0):
    """Yield shuffled index arrays of length ``size`` (the last may be short)."""
    if size < 1:
        raise ConfigError("batch size must be >= 1")
    perm = np.random.default_rng(seed).permutation(n)
    for start in range(0, n, size):
        yield perm[start:start + size]


def holdout_split(n, test_fraction, seed=0):
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(n * test_fraction)))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])
