"""Supervised fine-tuning with SGD + momentum and per-epoch snapshot capture."""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from snapvote import nn
from snapvote.errors import EnsembleError, ShapeError, TrainingDivergenceError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.025
    momentum: float = 0.5
    dropout_rate: float = 0.0
    max_epoch: int = 100
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.max_epoch < 1:
            raise ValueError(f"max_epoch must be >= 1, got {self.max_epoch}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class EpochWindow:
    """A contiguous range of epochs.

    ``strict`` selects ``low < epoch < high`` (``high - low - 1`` epochs);
    ``inclusive`` selects ``low <= epoch <= high`` (``high - low + 1`` epochs).
    """

    low: int
    high: int
    convention: str = "inclusive"

    def __post_init__(self):
        if self.convention not in ("strict", "inclusive"):
            raise ValueError(f"unknown window convention {self.convention!r}")
        if not self.low < self.high:
            raise ValueError(f"window needs low < high, got ({self.low}, {self.high})")

    def __call__(self, epoch):
        if self.convention == "strict":
            return self.low < epoch < self.high
        return self.low <= epoch <= self.high

    @property
    def size(self):
        if self.convention == "strict":
            return max(0, self.high - self.low - 1)
        return self.high - self.low + 1

    def select(self, epochs):
        return [e for e in epochs if self(e)]

    def __str__(self):
        if self.convention == "strict":
            return f"({self.low}, {self.high})"
        return f"[{self.low}, {self.high}]"


def strict_window(low, high):
    return EpochWindow(low, high, "strict")


def inclusive_window(low, high):
    return EpochWindow(low, high, "inclusive")


@dataclass
class Snapshot:
    epoch: int
    softmax_train: np.ndarray
    softmax_valid: np.ndarray
    softmax_test: np.ndarray
    valid_error: float
    layer_reps: dict = field(default_factory=dict)  # name -> (train, test)

    def matrices(self):
        """Named matrices in persistence order."""
        out = [
            ("softmax_train", self.softmax_train),
            ("softmax_valid", self.softmax_valid),
            ("softmax_test", self.softmax_test),
        ]
        for name, (rep_train, rep_test) in self.layer_reps.items():
            out.append((f"{name}/train", rep_train))
            out.append((f"{name}/test", rep_test))
        return out

    @classmethod
    def from_matrices(cls, epoch, valid_error, named):
        named = dict(named)
        reps = {}
        for key in named:
            if key.endswith("/train"):
                layer = key[: -len("/train")]
                reps[layer] = (named[key], named[f"{layer}/test"])
        return cls(
            epoch,
            named["softmax_train"],
            named["softmax_valid"],
            named["softmax_test"],
            valid_error,
            reps,
        )


class SnapshotStore:
    """Epoch-ordered collection of snapshots from one training run."""

    def __init__(self, run_id, fingerprint, snapshots=()):
        self.run_id = run_id
        self.fingerprint = fingerprint
        self.snapshots = []
        for s in snapshots:
            self.add(s)

    def add(self, snapshot):
        if self.snapshots and snapshot.epoch <= self.snapshots[-1].epoch:
            raise ValueError(
                f"snapshot epochs must increase: {snapshot.epoch} after "
                f"{self.snapshots[-1].epoch}"
            )
        self.snapshots.append(snapshot)

    @property
    def epochs(self):
        return [s.epoch for s in self.snapshots]

    def __len__(self):
        return len(self.snapshots)

    def __iter__(self):
        return iter(self.snapshots)

    def get(self, epoch):
        for s in self.snapshots:
            if s.epoch == epoch:
                return s
        raise EnsembleError(f"no snapshot at epoch {epoch}; available: {_summarize(self.epochs)}")

    def select(self, window):
        """Snapshots whose epoch falls inside ``window``, ascending."""
        chosen = [s for s in self.snapshots if window(s.epoch)]
        if not chosen:
            raise EnsembleError(
                f"window {window} ({window.convention}) selects no snapshots; "
                f"available epochs: {_summarize(self.epochs)}"
            )
        return chosen


def _summarize(epochs):
    if not epochs:
        return "none"
    if len(epochs) > 8:
        return f"{epochs[0]}..{epochs[-1]} ({len(epochs)} snapshots)"
    return ", ".join(str(e) for e in epochs)


def fingerprint(*parts):
    """Stable hex digest of JSON-serialisable config parts."""
    blob = json.dumps(
        [asdict(p) if hasattr(p, "__dataclass_fields__") else p for p in parts],
        sort_keys=True,
        default=str,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def sgd_step(params, grads, velocity, cfg):
    """Momentum SGD: ``v <- momentum*v - lr*g``; ``p <- p + v``.

    Returns new ``(params, velocity)`` lists; inputs are not modified.
    """
    if not len(params) == len(grads) == len(velocity):
        raise ShapeError("params, grads and velocity must have the same length")
    new_p, new_v = [], []
    for p, g, v in zip(params, grads, velocity):
        if not np.shape(p) == np.shape(g) == np.shape(v):
            raise ShapeError(f"shape mismatch: param {np.shape(p)}, grad {np.shape(g)}, "
                             f"velocity {np.shape(v)}")
        v = cfg.momentum * v - cfg.learning_rate * g
        new_v.append(v)
        new_p.append(p + v)
    return new_p, new_v


def apply_dropout(rep, rate, rng):
    """Inverted dropout. ``rate == 0`` returns the input unchanged."""
    rep = np.asarray(rep, dtype=np.float64)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return rep.copy()
    return rep * nn.dropout_mask(rep.shape, rate, rng)


def error_rate(probs, labels):
    return float(np.mean(nn.argmax_rows(probs) != labels))


@dataclass
class TrainResult:
    store: SnapshotStore
    curve: list  # (epoch, train_error, valid_error)
    losses: list  # mean training NLL per epoch


def train(net, X, y, cfg, capture=None, valid=None, X_test=None, capture_layers=(),
          run_id="run"):
    """Fine-tune ``net`` in place for exactly ``cfg.max_epoch`` epochs.

    Args:
        net: the network to train (mutated).
        X, y: training features and labels.
        cfg: a ``TrainConfig``.
        capture: predicate on the 1-based epoch; a snapshot is stored when it
            returns True. ``None`` captures nothing.
        valid: optional ``(X_valid, y_valid)`` used for the learning curve and
            each snapshot's ``valid_error`` (NaN when absent).
        X_test: optional unlabeled probe set whose softmax output is captured.
        capture_layers: hidden-layer names whose train/test representations
            are stored in each snapshot.

    Returns:
        A ``TrainResult``.
    """
    X = nn.check_input(net, X)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] != y.shape[0]:
        raise ShapeError(f"X has {X.shape[0]} rows but y has {y.shape[0]} labels")
    if X.shape[0] == 0:
        raise ShapeError("empty training set")
    unknown = set(capture_layers) - set(net.layer_names)
    if unknown:
        raise ValueError(f"unknown layers requested for capture: {sorted(unknown)}")
    layer_index = {name: i for i, name in enumerate(net.layer_names)}
    X_valid, y_valid = valid if valid is not None else (np.empty((0, X.shape[1])), None)
    X_test = np.empty((0, X.shape[1])) if X_test is None else nn.check_input(net, X_test)

    rng = np.random.default_rng(cfg.seed)
    n = X.shape[0]
    velocity = [np.zeros_like(p) for p in net.params()]
    store = SnapshotStore(run_id, fingerprint(cfg, list(capture_layers)))
    curve, losses = [], []

    for epoch in range(1, cfg.max_epoch + 1):
        if cfg.batch_size >= n:
            batches = [np.arange(n)]
        else:
            order = rng.permutation(n)
            batches = [order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
        total = 0.0
        for idx in batches:
            loss, grads = nn.loss_and_grads(net, X[idx], y[idx], cfg.dropout_rate, rng)
            if not np.isfinite(loss):
                raise TrainingDivergenceError(epoch, epoch - 1)
            scale = 1.0 / len(idx)
            params, velocity = sgd_step(net.params(), [g * scale for g in grads], velocity, cfg)
            net.set_params(params)
            total += loss
        losses.append(total / n)

        reps_train = nn.forward(net, X)
        p_train = reps_train[-1]
        if not np.all(np.isfinite(p_train)):
            raise TrainingDivergenceError(epoch, epoch - 1)
        train_err = error_rate(p_train, y)
        p_valid = nn.predict_proba(net, X_valid) if len(X_valid) else np.empty((0, net.n_classes))
        valid_err = error_rate(p_valid, y_valid) if len(X_valid) else float("nan")
        curve.append((epoch, train_err, valid_err))

        if capture is not None and capture(epoch):
            reps_test = nn.forward(net, X_test) if len(X_test) else None
            layer_reps = {}
            for name in capture_layers:
                i = layer_index[name]
                test_rep = reps_test[i] if reps_test is not None else np.empty((0, net.layers[i].spec.output_dim))
                layer_reps[name] = (reps_train[i], test_rep)
            p_test = reps_test[-1] if reps_test is not None else np.empty((0, net.n_classes))
            store.add(Snapshot(epoch, p_train, p_valid, p_test, valid_err, layer_reps))
        log.debug("epoch %d loss %.6f train_err %.4f valid_err %.4f",
                  epoch, losses[-1], train_err, valid_err)
    return TrainResult(store, curve, losses)
