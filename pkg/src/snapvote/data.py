"""Datasets: CSV ingestion, synthetic class blobs and the train/valid split."""

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from snapvote.errors import ShapeError

SPLITS = ("labeled-train", "unlabeled", "test", "valid")


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray = None
    n_classes: int = None
    split: str = "labeled-train"
    label_values: list = field(default_factory=list)  # original value of each class id

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if self.labels is not None and len(self.labels) != len(self.features):
            raise ShapeError(f"{len(self.features)} rows but {len(self.labels)} labels")

    def __len__(self):
        return len(self.features)

    @property
    def labeled(self):
        return self.labels is not None

    def subset(self, idx, split=None):
        labels = None if self.labels is None else self.labels[idx]
        return replace(self, features=self.features[idx], labels=labels,
                       split=split or self.split)


def _read_rows(path):
    rows = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                bad = next(c for c in row if not _is_float(c))
                raise ValueError(f"{path}: row {i}: non-numeric cell {bad!r}") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise ShapeError(f"{path}: row {i} has {len(r)} columns, expected {width}")
    arr = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{path}: non-finite values")
    return arr


def _is_float(cell):
    try:
        float(cell)
        return True
    except ValueError:
        return False


def encode_labels(raw, label_values=None):
    """Map raw label values to contiguous ids.

    With ``label_values`` given (e.g. from the training split) the same mapping
    is reused; otherwise the sorted unique values define it.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if label_values is None:
        label_values = sorted(set(raw.tolist()))
    lookup = {v: i for i, v in enumerate(label_values)}
    try:
        ids = np.array([lookup[v] for v in raw.tolist()], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]} not in the known label set") from None
    return ids, list(label_values)


def load_csv(path, labels="none", label_path=None, split=None, label_values=None,
             n_classes=None):
    """Read a comma-separated matrix of decimal floats.

    Args:
        labels: ``"none"``, ``"last-column"`` or ``"separate-file"``.
        label_path: the one-column label file for ``"separate-file"``.
        label_values: reuse an existing label mapping.
    """
    data = _read_rows(path)
    if labels == "none":
        return Dataset(data, None, n_classes, split or "unlabeled")
    if labels == "last-column":
        if data.shape[1] < 2:
            raise ShapeError(f"{path}: need at least one feature column plus labels")
        features, raw = data[:, :-1], data[:, -1]
    elif labels == "separate-file":
        if label_path is None:
            raise ValueError("separate-file schema needs label_path")
        features = data
        raw = _read_rows(label_path)
        if raw.shape[1] != 1:
            raise ShapeError(f"{label_path}: expected one label column, got {raw.shape[1]}")
        raw = raw[:, 0]
        if len(raw) != len(features):
            raise ShapeError(
                f"{label_path} has {len(raw)} labels but {path} has {len(features)} rows"
            )
    else:
        raise ValueError(f"unknown label schema {labels!r}")
    ids, values = encode_labels(raw, label_values)
    K = n_classes if n_classes is not None else len(values)
    return Dataset(np.ascontiguousarray(features), ids, K, split or "labeled-train", values)


def fmt(x):
    return f"{x:.17g}"


def write_csv(path, X, y=None):
    """Write ``X`` (and ``y`` as a last column) with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        for i, row in enumerate(np.asarray(X, dtype=np.float64)):
            cells = [fmt(v) for v in row]
            if y is not None:
                cells.append(str(int(y[i])))
            fh.write(",".join(cells) + "\n")


def split_train_valid(ds, fraction=0.9, seed=0):
    """Seeded shuffle split into ``floor(fraction*n)`` training rows and the rest."""
    if not ds.labeled:
        raise ValueError("cannot split an unlabeled dataset into train/valid")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    n = len(ds)
    n_train = math.floor(fraction * n + 1e-9)
    perm = np.random.default_rng(seed).permutation(n)
    train_idx, valid_idx = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    return ds.subset(train_idx, "labeled-train"), ds.subset(valid_idx, "valid")


@dataclass(frozen=True)
class BlobSpec:
    """Parameters of the synthetic task.

    Class means live in a ``latent_dim``-dimensional space; each example is
    its class mean plus unit Gaussian noise, linearly embedded into
    ``n_features`` dimensions and topped with isotropic ``noise``.
    """

    n_labeled: int = 50
    n_unlabeled: int = 10000
    n_test: int = 2000
    n_features: int = 200
    n_classes: int = 5
    latent_dim: int = 4
    separation: float = 3.0
    noise: float = 6.0
    seed: int = 0


def make_blobs(spec):
    """Returns ``{"train": ..., "unlabeled": ..., "test": ...}`` datasets."""
    rng = np.random.default_rng(spec.seed)
    K, m, D = spec.n_classes, spec.latent_dim, spec.n_features
    means = rng.normal(0.0, spec.separation, size=(K, m))
    embed = rng.normal(0.0, 1.0 / math.sqrt(m), size=(m, D))

    def draw(n):
        y = rng.integers(0, K, size=n)
        z = means[y] + rng.normal(size=(n, m))
        x = z @ embed + spec.noise * rng.normal(size=(n, D))
        return x, y

    Xl, yl = draw(spec.n_labeled)
    Xu, _ = draw(spec.n_unlabeled)
    Xt, yt = draw(spec.n_test)
    values = [float(k) for k in range(K)]
    return {
        "train": Dataset(Xl, yl, K, "labeled-train", values),
        "unlabeled": Dataset(Xu, None, K, "unlabeled"),
        "test": Dataset(Xt, yt, K, "test", values),
    }


def write_dataset_files(datasets, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, ds in datasets.items():
        path = out_dir / f"{name}.csv"
        write_csv(path, ds.features, ds.labels)
        paths[name] = path
    return paths
