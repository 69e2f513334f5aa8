"""End-to-end runs: data, pretraining, training, ensembles and reports.

Every stage reads and writes files inside one output directory::

    manifest                 JSON: config, fingerprint, stages, snapshots
    curve.tsv                epoch, train error, validation error
    snapshots/               one SNAP file per kept epoch
    scaler.bin               min-max statistics of the unlabeled pool
    pretrain/daes.bin        pretrained stack (models 2 to 6)
    pretrain/loss.tsv        per-layer reconstruction loss curves
    labels.csv               example_index,label for the test set
    predictions.csv          headline method's predicted labels
    probabilities.csv        headline method's class probabilities
    predictions/<name>.csv   labels of every reported method
    reports/accuracy.tsv
    reports/error_stats.tsv
    reports/per_layer.tsv

A failing stage leaves a ``STALE`` file naming it; the next successful stage
removes the marker.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from snapvote import data as data_mod
from snapvote import ensemble, metrics, nn, pretrain, storage, trainer
from snapvote.config import derive_seed
from snapvote.data import fmt
from snapvote.errors import ConfigError, FormatError, ShapeError
from snapvote.nn import LayerSpec

STAGES = ("pretrain", "train", "ensemble", "eval", "report")


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Prepared:
    X_train: np.ndarray
    y_train: np.ndarray
    X_valid: np.ndarray
    y_valid: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray  # None when the test labels are unknown
    X_unlabeled: np.ndarray
    scaler: pretrain.MinMaxScaler
    n_classes: int
    label_values: list


def _load_files(dc):
    train_schema = "separate-file" if dc.train_labels else "last-column"
    train = data_mod.load_csv(dc.train, labels=train_schema, label_path=dc.train_labels)
    values = train.label_values
    if dc.test_labels == "none":
        test = data_mod.load_csv(dc.test, split="test")
    else:
        schema = "separate-file" if dc.test_labels else "last-column"
        test = data_mod.load_csv(dc.test, labels=schema, label_path=dc.test_labels,
                                 split="test", label_values=values)
    unlabeled = None
    if dc.unlabeled:
        unlabeled = data_mod.load_csv(dc.unlabeled, split="unlabeled")
    return train, test, unlabeled


def prepare_data(cfg):
    """Load or generate the data, split off validation rows and scale to [0, 1].

    The scaler is fit on the unlabeled pool (or the labeled rows if there is
    none) and applied to every split.
    """
    dc = cfg.data
    if dc.source == "synthetic":
        sets = data_mod.make_blobs(dc.blobs)
        train, test, unlabeled = sets["train"], sets["test"], sets["unlabeled"]
    else:
        train, test, unlabeled = _load_files(dc)
    widths = {train.features.shape[1], test.features.shape[1]}
    if unlabeled is not None:
        widths.add(unlabeled.features.shape[1])
    if len(widths) != 1:
        raise ShapeError(f"splits disagree on the feature count: {sorted(widths)}")
    tr, va = data_mod.split_train_valid(train, dc.valid_fraction, derive_seed(cfg.seed, "split"))
    pool = unlabeled.features if unlabeled is not None else train.features
    scaler = pretrain.MinMaxScaler().fit(pool)
    return Prepared(scaler.transform(tr.features), tr.labels,
                    scaler.transform(va.features), va.labels,
                    scaler.transform(test.features), test.labels,
                    scaler.transform(pool), scaler, train.n_classes, list(train.label_values))


def network_specs(cfg, input_dim, n_classes):
    dims = [input_dim, *cfg.maxout_sizes]
    specs = [LayerSpec("maxout", a, b, cfg.pool_size) for a, b in zip(dims, dims[1:])]
    specs.append(LayerSpec("softmax", dims[-1], n_classes))
    return specs


def build_network(cfg, daes, input_dim, n_classes):
    d_in = daes[-1].n_hidden if daes else input_dim
    rng = np.random.default_rng(derive_seed(cfg.seed, "init"))
    return pretrain.init_network(daes, network_specs(cfg, d_in, n_classes), rng)


def config_fingerprint(cfg):
    return trainer.fingerprint(cfg.to_dict())


# -- file helpers -----------------------------------------------------------

def _manifest(out_dir):
    try:
        return storage.read_manifest(out_dir)
    except FormatError:
        return {}


def _update_manifest(out_dir, cfg, stage, **extra):
    man = _manifest(out_dir)
    fp = config_fingerprint(cfg)
    if man.get("config_fingerprint") not in (None, fp):
        raise ConfigError(f"{out_dir} holds a run of a different configuration "
                          f"({man['config_fingerprint']} != {fp})")
    man.update(extra)
    man.update({"config_fingerprint": fp, "config": cfg.to_dict(), "run_id": cfg.run_id,
                "model": cfg.model, "seed": cfg.seed})
    stages = [s for s in man.get("stages", []) if s != stage] + [stage]
    man["stages"] = [s for s in STAGES if s in stages]
    storage.write_manifest(out_dir, man)
    return man


def check_manifest(out_dir, cfg):
    man = _manifest(out_dir)
    fp = config_fingerprint(cfg)
    if man and man.get("config_fingerprint") != fp:
        raise ConfigError(f"{out_dir} holds a run of a different configuration")
    return man


def write_labels(path, labels):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("example_index,label\n")
        for i, y in enumerate(labels):
            fh.write(f"{i},{int(y)}\n")


def read_labels(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["example_index", "label"]:
        raise FormatError(f"{path}: missing 'example_index,label' header")
    idx = [int(r[0]) for r in rows[1:]]
    if idx != list(range(len(idx))):
        raise FormatError(f"{path}: example indices are not 0..n-1 in order")
    return np.array([int(r[1]) for r in rows[1:]], dtype=np.int64)


def write_tsv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(fmt(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def read_tsv(path):
    with open(path) as fh:
        lines = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    header, rows = lines[0], lines[1:]
    return [dict(zip(header, r)) for r in rows]


# -- stages -----------------------------------------------------------------

def stage_pretrain(cfg, prep, out_dir):
    if cfg.pretrain is None:
        raise ConfigError(f"model {cfg.model} has no pretraining stage")
    out_dir = Path(out_dir)
    (out_dir / "pretrain").mkdir(parents=True, exist_ok=True)
    daes = pretrain.stack_pretrain(prep.X_unlabeled, cfg.pretrain)
    storage.save_daes(out_dir / "pretrain" / "daes.bin", daes)
    write_tsv(out_dir / "pretrain" / "loss.tsv", ["layer", "epoch", "loss"],
              [(i, e, float(v)) for i, d in enumerate(daes) for e, v in enumerate(d.loss_curve)])
    _update_manifest(out_dir, cfg, "pretrain")
    return daes


def load_pretrained(cfg, out_dir):
    if cfg.pretrain is None:
        return []
    path = Path(out_dir) / "pretrain" / "daes.bin"
    if not path.exists():
        raise FormatError(f"{path} missing; run the pretrain stage first")
    return storage.load_daes(path)


def stage_train(cfg, prep, daes, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    storage.save_scaler(out_dir / "scaler.bin", prep.scaler)
    net = build_network(cfg, daes, prep.X_train.shape[1], prep.n_classes)
    keep = cfg.capture_epochs()
    layers = ()
    if cfg.ensemble is not None and cfg.ensemble.needs_layer_reps:
        layers = cfg.ensemble.layers
    res = trainer.train(net, prep.X_train, prep.y_train, cfg.train, capture=keep.__contains__,
                        valid=(prep.X_valid, prep.y_valid), X_test=prep.X_test,
                        capture_layers=layers, run_id=cfg.run_id)
    res.store.fingerprint = config_fingerprint(cfg)
    for old in (out_dir / "snapshots").glob("epoch_*.bin"):
        old.unlink()
    storage.save_store(res.store, out_dir, extra=_manifest(out_dir))
    write_tsv(out_dir / "curve.tsv", ["epoch", "train_error", "valid_error"],
              [(e, float(tr), float(va)) for e, tr, va in res.curve])
    _update_manifest(out_dir, cfg, "train", label_values=prep.label_values,
                     n_classes=prep.n_classes)
    return res


def _write_prediction(out_dir, name, pred):
    write_labels(Path(out_dir) / "predictions" / f"{name}.csv", pred.labels)


def compute_predictions(cfg, store, y_train):
    """Every prediction a run reports, keyed by method name.

    Returns ``(preds, per_layer)`` where ``per_layer`` maps layer name to a
    Prediction (vertical runs only) and carries the epoch it was taken at.
    """
    final = store.get(cfg.train.max_epoch)
    probs = final.softmax_test
    preds = {"softmax": ensemble.Prediction(probs, nn.argmax_rows(probs),
                                            [f"epoch {final.epoch}"])}
    per_layer, layer_epoch = {}, None
    spec = cfg.ensemble
    if spec is not None:
        preds[cfg.method] = ensemble.run_ensemble(store, spec, y_train)
        if spec.kind in ("vertical", "combined"):
            if spec.kind == "vertical":
                layer_epoch, vv = spec.objective_epoch, preds[cfg.method]
            else:
                layer_epoch = store.select(spec.window)[-1].epoch
                vv = ensemble.vertical_vote_snapshot(store.get(layer_epoch), spec.layers, y_train,
                                                     spec.classifier, spec.layer_weights)
            for name, p in vv.members.items():
                per_layer[name] = ensemble.Prediction(p, nn.argmax_rows(p), [f"epoch {layer_epoch}"])
            per_layer["voted"] = ensemble.Prediction(vv.probs, vv.labels, vv.provenance)
    return preds, per_layer, layer_epoch


def stage_ensemble(cfg, prep, out_dir):
    out_dir = Path(out_dir)
    store = storage.load_store(out_dir)
    preds, per_layer, layer_epoch = compute_predictions(cfg, store, prep.y_train)
    for old in (out_dir / "predictions").glob("*.csv"):
        old.unlink()
    for name, pred in preds.items():
        _write_prediction(out_dir, name, pred)
    for name, pred in per_layer.items():
        _write_prediction(out_dir, f"layer_{name}", pred)
    head = preds[cfg.method]
    write_labels(out_dir / "predictions.csv", head.labels)
    with open(out_dir / "probabilities.csv", "w") as fh:
        for row in head.probs:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    if prep.y_test is not None:
        write_labels(out_dir / "labels.csv", prep.y_test)
    elif (out_dir / "labels.csv").exists():
        (out_dir / "labels.csv").unlink()
    _update_manifest(out_dir, cfg, "ensemble", methods=sorted(preds), headline=cfg.method,
                     per_layer_epoch=layer_epoch, per_layer=sorted(per_layer))
    return preds, per_layer


def _window_desc(cfg):
    return cfg.ensemble.window if cfg.ensemble is not None else None


def stage_eval(cfg, out_dir):
    """Accuracy, error-stats and per-layer tables from the emitted files."""
    out_dir = Path(out_dir)
    man = _manifest(out_dir)
    if "ensemble" not in man.get("stages", []):
        raise FormatError("no predictions yet; run the ensemble stage first")
    labels_path = out_dir / "labels.csv"
    truth = read_labels(labels_path) if labels_path.exists() else None
    rows = []
    if truth is not None:
        for name in man["methods"]:
            pred = read_labels(out_dir / "predictions" / f"{name}.csv")
            rows.append((name, "test", f"predictions/{name}.csv", metrics.accuracy(pred, truth)))
    write_tsv(out_dir / "reports" / "accuracy.tsv", ["method", "split", "predictions", "accuracy"], rows)

    stats_rows = []
    window = _window_desc(cfg)
    if window is not None:
        store = storage.load_store(out_dir)
        s = metrics.error_stats(store, window)
        stats_rows.append((str(window), window.convention, s.count, s.min, s.max, s.mean, s.std))
    write_tsv(out_dir / "reports" / "error_stats.tsv",
              ["window", "convention", "count", "min", "max", "mean", "std"], stats_rows)

    layer_rows = []
    if truth is not None:
        for name in man.get("per_layer", []):
            pred = read_labels(out_dir / "predictions" / f"layer_{name}.csv")
            layer_rows.append((man["per_layer_epoch"], name, f"predictions/layer_{name}.csv",
                               metrics.accuracy(pred, truth)))
    write_tsv(out_dir / "reports" / "per_layer.tsv",
              ["epoch", "layer", "predictions", "accuracy"], layer_rows)
    _update_manifest(out_dir, cfg, "eval")
    return rows, stats_rows, layer_rows


def stage_report(cfg, out_dir, compare=()):
    from snapvote import plotting

    out_dir = Path(out_dir)
    figures = [plotting.learning_curve(out_dir / "curve.tsv", out_dir / "reports" / "learning_curve.png",
                                       window=_window_desc(cfg))]
    runs = [out_dir, *compare]
    if len(runs) > 1:
        figures.append(plotting.model_comparison(runs, out_dir / "reports" / "comparison.png"))
    _update_manifest(out_dir, cfg, "report")
    return figures


def verify(out_dir):
    """Recompute every reported accuracy; returns a list of discrepancy strings."""
    out_dir = Path(out_dir)
    problems = []
    labels_path = out_dir / "labels.csv"
    truth = read_labels(labels_path) if labels_path.exists() else None
    for table in ("accuracy.tsv", "per_layer.tsv"):
        path = out_dir / "reports" / table
        if not path.exists():
            problems.append(f"missing reports/{table}")
            continue
        for row in read_tsv(path):
            if truth is None:
                problems.append(f"{table}: accuracy reported but labels.csv is missing")
                break
            pred = read_labels(out_dir / row["predictions"])
            again = metrics.accuracy(pred, truth)
            if float(row["accuracy"]) != again:
                problems.append(f"{table} {row['predictions']}: reported {row['accuracy']}, "
                                f"recomputed {fmt(again)}")
    head = out_dir / "predictions.csv"
    man = _manifest(out_dir)
    if head.exists() and man.get("headline"):
        a = read_labels(head)
        b = read_labels(out_dir / "predictions" / f"{man['headline']}.csv")
        if not np.array_equal(a, b):
            problems.append("predictions.csv differs from the headline method's predictions")
        probs = np.loadtxt(out_dir / "probabilities.csv", delimiter=",", ndmin=2)
        if not np.array_equal(nn.argmax_rows(probs), a):
            problems.append("probabilities.csv argmax differs from predictions.csv")
    return problems


def _stale(out_dir, stage, exc):
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    (Path(out_dir) / "STALE").write_text(f"{stage}: {exc}\n")


def run_stage(stage, fn, out_dir, *args):
    try:
        result = fn(*args)
    except Exception as exc:
        _stale(out_dir, stage, exc)
        raise StageError(stage, exc) from exc
    marker = Path(out_dir) / "STALE"
    if marker.exists():
        marker.unlink()
    return result


def run_experiment(cfg, out_dir, report=True):
    """All stages in order. Returns the parsed accuracy rows."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    check_manifest(out_dir, cfg)
    prep = run_stage("data", prepare_data, out_dir, cfg)
    daes = []
    if cfg.pretrain is not None:
        daes = run_stage("pretrain", stage_pretrain, out_dir, cfg, prep, out_dir)
    run_stage("train", stage_train, out_dir, cfg, prep, daes, out_dir)
    run_stage("ensemble", stage_ensemble, out_dir, cfg, prep, out_dir)
    rows, _, _ = run_stage("eval", stage_eval, out_dir, cfg, out_dir)
    if report:
        run_stage("report", stage_report, out_dir, cfg, out_dir)
    return rows
