"""Voting and stacking over training snapshots and layer representations.

Three procedures are provided, plus their combination:

* vertical voting: at one epoch, fit a forest on each selected hidden layer's
  training representation and average their class probabilities on the test
  representations;
* horizontal voting: average the softmax test outputs of every snapshot in an
  epoch window;
* horizontal stacking: concatenate the window's softmax outputs into one
  feature vector per example and fit a meta forest on the training side;
* combined voting: vertical voting at every epoch of the window, then a
  horizontal vote over the per-epoch results.

Votes are means rather than sums. The argmax is the same and the outputs
stay row-stochastic.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from snapvote.errors import EnsembleError, ShapeError
from snapvote.forest import ForestConfig, rf_fit, rf_predict_proba
from snapvote.trainer import EpochWindow

KINDS = ("vertical", "horizontal", "stacked", "combined")


@dataclass(frozen=True)
class EnsembleSpec:
    kind: str
    window: EpochWindow = None
    objective_epoch: int = None
    layers: tuple = ()
    classifier: ForestConfig = ForestConfig()
    meta_classifier: ForestConfig = ForestConfig()
    layer_weights: tuple = None  # optional non-uniform vertical voting

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown ensemble kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("vertical", "combined") and not self.layers:
            raise ValueError(f"{self.kind} voting needs at least one layer")
        if self.kind == "vertical" and self.objective_epoch is None:
            raise ValueError("vertical voting needs an objective epoch")
        if self.kind in ("horizontal", "stacked", "combined") and self.window is None:
            raise ValueError(f"{self.kind} ensemble needs an epoch window")
        if self.layer_weights is not None and len(self.layer_weights) != len(self.layers):
            raise ValueError("layer_weights must have one entry per layer")

    @property
    def needs_layer_reps(self):
        return self.kind in ("vertical", "combined")


@dataclass
class Prediction:
    """Row-stochastic class probabilities plus the argmax labels.

    ``members`` keeps the constituent probability matrices keyed by layer name
    or epoch, and ``provenance`` lists where they came from.
    """

    probs: np.ndarray
    labels: np.ndarray
    provenance: list = field(default_factory=list)
    members: dict = field(default_factory=dict)


TIE_TOLERANCE = 1e-12


def tie_argmax(probs, tol=TIE_TOLERANCE):
    """Row argmax where classes within ``tol`` of the row maximum count as tied.

    The lowest tied index wins. The tolerance keeps the tie rule stable under
    the last-bit rounding differences between equivalent summation orders.
    """
    probs = np.asarray(probs, dtype=np.float64)
    near = probs >= probs.max(axis=1, keepdims=True) - tol
    return np.argmax(near, axis=1)


def vote(preds, weights=None):
    """Mean of equally shaped probability matrices and its row argmax.

    Each element's sum is correctly rounded (``math.fsum``), so the result
    does not depend on the order of ``preds`` and exact ties stay exact. Ties
    in the argmax go to the lowest class index (see ``tie_argmax``).
    """
    preds = list(preds)
    if not preds:
        raise EnsembleError("nothing to vote over")
    shape = np.shape(preds[0])
    for i, p in enumerate(preds):
        if np.shape(p) != shape:
            raise ShapeError(f"prediction {i} has shape {np.shape(p)}, expected {shape}")
    stack = np.stack([np.asarray(p, dtype=np.float64) for p in preds])
    if weights is None:
        cols = stack.reshape(len(preds), -1).T
        sums = np.array([math.fsum(c) for c in cols]).reshape(shape)
        mean = sums / len(preds)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (len(preds),) or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be nonnegative, one per prediction, not all zero")
        mean = np.tensordot(w / w.sum(), stack, axes=1)
    return mean, tie_argmax(mean)


def _layer_reps(snapshot, layers):
    missing = [name for name in layers if name not in snapshot.layer_reps]
    if missing:
        raise EnsembleError(
            f"snapshot at epoch {snapshot.epoch} has no representation for layer(s) "
            f"{', '.join(missing)}"
        )
    return [snapshot.layer_reps[name] for name in layers]


def vertical_vote_snapshot(snapshot, layers, y, classifier, weights=None):
    """Vertical vote at a single snapshot. ``members`` maps layer -> probs."""
    members = {}
    for name, (rep_train, rep_test) in zip(layers, _layer_reps(snapshot, layers)):
        model = rf_fit(rep_train, y, classifier, n_classes=snapshot.softmax_train.shape[1])
        members[name] = rf_predict_proba(model, rep_test)
    probs, labels = vote(list(members.values()), weights)
    prov = [f"epoch {snapshot.epoch} layer {name}" for name in layers]
    return Prediction(probs, labels, prov, members)


def vertical_vote(store, spec, y):
    """Forests on each layer of ``spec.layers`` at ``spec.objective_epoch``, averaged."""
    snapshot = store.get(spec.objective_epoch)
    return vertical_vote_snapshot(snapshot, spec.layers, y, spec.classifier, spec.layer_weights)


def _probe(snapshot, probe):
    try:
        return getattr(snapshot, f"softmax_{probe}")
    except AttributeError:
        raise ValueError(f"unknown probe set {probe!r}") from None


def horizontal_vote(store, spec, probe="test"):
    """Average the softmax outputs of every snapshot inside ``spec.window``."""
    chosen = store.select(spec.window)
    probs, labels = vote([_probe(s, probe) for s in chosen])
    members = {s.epoch: _probe(s, probe) for s in chosen}
    return Prediction(probs, labels, [f"epoch {s.epoch}" for s in chosen], members)


def build_stacked_features(preds):
    """Concatenate ``S`` (n x K) matrices into one (n x S*K) matrix.

    Row ``i`` is ``[p_1[i], p_2[i], ..., p_S[i]]`` in the given order.
    """
    preds = list(preds)
    if not preds:
        raise EnsembleError("nothing to stack")
    shape = np.shape(preds[0])
    for i, p in enumerate(preds):
        if np.ndim(p) != 2 or np.shape(p) != shape:
            raise ShapeError(f"prediction {i} has shape {np.shape(p)}, expected {shape}")
    return np.hstack([np.asarray(p, dtype=np.float64) for p in preds])


def stack_predict(train_preds, test_preds, y, meta_classifier):
    """Meta forest on stacked training outputs, applied to stacked test outputs.

    ``train_preds`` and ``test_preds`` map epoch -> probability matrix and must
    cover the same epochs; columns are laid out in ascending epoch order.
    """
    only_train = sorted(set(train_preds) - set(test_preds))
    only_test = sorted(set(test_preds) - set(train_preds))
    if only_train or only_test:
        raise EnsembleError(
            f"train/test epoch lists differ: train-only {only_train}, test-only {only_test}"
        )
    epochs = sorted(train_preds)
    F_train = build_stacked_features([train_preds[e] for e in epochs])
    F_test = build_stacked_features([test_preds[e] for e in epochs])
    K = np.shape(train_preds[epochs[0]])[1]
    model = rf_fit(F_train, y, meta_classifier, n_classes=K)
    probs = rf_predict_proba(model, F_test)
    return Prediction(probs, tie_argmax(probs), [f"epoch {e}" for e in epochs])


def horizontal_stack(store, spec, y):
    """Stacked ensemble over the window: train-side softmax -> meta forest -> test."""
    chosen = store.select(spec.window)
    return stack_predict(
        {s.epoch: s.softmax_train for s in chosen},
        {s.epoch: s.softmax_test for s in chosen},
        y,
        spec.meta_classifier,
    )


def combined_vote(store, spec, y):
    """Vertical vote at each epoch of the window, then a horizontal vote.

    With uniform layer weights the mean of per-epoch means equals the mean of
    all (epoch, layer) forest outputs, which is what gets computed so that no
    intermediate rounding can break an exact tie.
    """
    members, prov, flat = {}, [], []
    for snapshot in store.select(spec.window):
        try:
            pred = vertical_vote_snapshot(snapshot, spec.layers, y, spec.classifier,
                                          spec.layer_weights)
        except EnsembleError as exc:
            raise EnsembleError(f"combined vote, epoch {snapshot.epoch}: {exc}") from exc
        members[snapshot.epoch] = pred.probs
        prov.extend(pred.provenance)
        flat.extend(pred.members.values())
    if spec.layer_weights is None:
        probs, labels = vote(flat)
    else:
        probs, labels = vote(list(members.values()))
    return Prediction(probs, labels, prov, members)


def run_ensemble(store, spec, y):
    if spec.kind == "vertical":
        return vertical_vote(store, spec, y)
    if spec.kind == "horizontal":
        return horizontal_vote(store, spec)
    if spec.kind == "stacked":
        return horizontal_stack(store, spec, y)
    return combined_vote(store, spec, y)
