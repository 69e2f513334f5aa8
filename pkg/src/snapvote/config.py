"""Experiment configuration: INI files resolved against the model presets.

Schema (every key optional; unknown sections or keys are errors)::

    [experiment]
    model = 2              # 1..6
    preset = desk          # desk | full
    scale = 50             # divide the reference layer widths by this
    min_width = 8
    run_id = model2

    [data]
    source = synthetic     # synthetic | csv
    seed = 0               # pins the generator; defaults to the global seed
    valid_fraction = 0.9
    # synthetic generator
    n_labeled, n_unlabeled, n_test, n_features, n_classes,
    latent_dim, separation, noise
    # csv files; labels are the last column unless a labels file is given
    train, train_labels, unlabeled, test, test_labels   # test_labels = none allowed

    [architecture]
    dae_sizes = 1500,1000,1500,1200,1500   # reference widths, scaled
    maxout_sizes = 1500,1500,1500
    pool_size = 2

    [pretrain]   corruption_level, epochs, learning_rate, momentum, batch_size, tied
    [train]      learning_rate, momentum, dropout_rate, max_epoch, batch_size
    [ensemble]   window_low, window_high, convention, objective_epoch, layers
    [forest]     n_trees, max_features, max_depth, min_samples_leaf, bootstrap
    [meta_forest] same keys as [forest]

Model presets: 1 has no pretraining, 2 adds the denoising autoencoder stack,
and 3 to 6 add vertical, horizontal, combined and stacked ensembles to 2.
"""

import configparser
import dataclasses
from dataclasses import dataclass, field

from snapvote.data import BlobSpec
from snapvote.ensemble import EnsembleSpec
from snapvote.errors import ConfigError
from snapvote.forest import ForestConfig
from snapvote.pretrain import PretrainConfig
from snapvote.trainer import EpochWindow, TrainConfig

REFERENCE_DAE = (1500, 1000, 1500, 1200, 1500)
REFERENCE_MAXOUT = (1500, 1500, 1500)
ENSEMBLE_OF_MODEL = {3: "vertical", 4: "horizontal", 5: "combined", 6: "stacked"}
METHOD_NAMES = {1: "softmax", 2: "softmax", 3: "vertical_vote", 4: "horizontal_vote",
                5: "combined_vote", 6: "horizontal_stack"}

# Offsets that derive every stage seed from the global one.
SEED_OFFSETS = {"data": 0, "split": 1, "init": 2, "train": 3, "pretrain": 4,
                "forest": 5, "meta_forest": 6}

PRESETS = {
    "desk": {"max_epoch": 300, "window": (261, 300), "n_trees": 100},
    "full": {"max_epoch": 1000, "window": (651, 850), "n_trees": 500},
}

DESK_TRAIN = {"learning_rate": 0.025, "momentum": 0.5, "dropout_rate": 0.5, "batch_size": 10}
DESK_PRETRAIN = {"corruption_level": 0.25, "epochs": 20, "learning_rate": 0.1,
                 "momentum": 0.5, "batch_size": 32, "tied": True}

SCHEMA = {
    "experiment": {"model": int, "preset": str, "scale": float, "min_width": int, "run_id": str},
    "data": {"source": str, "seed": int, "valid_fraction": float, "n_labeled": int, "n_unlabeled": int,
             "n_test": int, "n_features": int, "n_classes": int, "latent_dim": int,
             "separation": float, "noise": float, "train": str, "train_labels": str,
             "unlabeled": str, "test": str, "test_labels": str},
    "architecture": {"dae_sizes": "ints", "maxout_sizes": "ints", "pool_size": int},
    "pretrain": {"corruption_level": float, "epochs": int, "learning_rate": float,
                 "momentum": float, "batch_size": int, "tied": bool},
    "train": {"learning_rate": float, "momentum": float, "dropout_rate": float,
              "max_epoch": int, "batch_size": int},
    "ensemble": {"window_low": int, "window_high": int, "convention": str,
                 "objective_epoch": int, "layers": "names"},
    "forest": {"n_trees": int, "max_features": str, "max_depth": int,
               "min_samples_leaf": int, "bootstrap": bool},
}
SCHEMA["meta_forest"] = SCHEMA["forest"]


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    valid_fraction: float = 0.9
    blobs: BlobSpec = BlobSpec()
    train: str = None
    train_labels: str = None
    unlabeled: str = None
    test: str = None
    test_labels: str = None


@dataclass(frozen=True)
class ExperimentConfig:
    model: int
    seed: int
    run_id: str
    preset: str
    data: DataConfig
    dae_sizes: tuple
    maxout_sizes: tuple
    pool_size: int
    train: TrainConfig
    pretrain: PretrainConfig = None
    ensemble: EnsembleSpec = None
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def method(self):
        return METHOD_NAMES[self.model]

    @property
    def hidden_names(self):
        n = len(self.dae_sizes) + len(self.maxout_sizes)
        return [f"h{i}" for i in range(n)]

    def capture_epochs(self):
        """Epochs whose snapshot the run must keep."""
        keep = {self.train.max_epoch}
        spec = self.ensemble
        if spec is not None:
            if spec.window is not None:
                keep.update(spec.window.select(range(1, self.train.max_epoch + 1)))
            if spec.objective_epoch is not None:
                keep.add(spec.objective_epoch)
        return keep

    def to_dict(self):
        """Plain, JSON-friendly view of the resolved configuration."""
        def plain(obj):
            if dataclasses.is_dataclass(obj):
                return {f.name: plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)
                        if f.name != "raw"}
            if isinstance(obj, (list, tuple)):
                return [plain(v) for v in obj]
            if isinstance(obj, EpochWindow):
                return str(obj)
            return obj
        return plain(self)


def derive_seed(seed, stage):
    return seed + SEED_OFFSETS[stage]


def scale_sizes(sizes, scale, min_width):
    return tuple(max(min_width, int(round(s / scale))) for s in sizes)


def _parse(section, key, text, kind):
    try:
        if kind == "ints":
            return tuple(int(v) for v in text.split(",") if v.strip())
        if kind == "names":
            return tuple(v.strip() for v in text.split(",") if v.strip())
        if kind is bool:
            low = text.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(text)
            return low in ("true", "yes", "1")
        return kind(text.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {text!r} is not a valid {getattr(kind, '__name__', kind)}")


def read_ini(text):
    """Parse INI text into ``{section: {key: typed value}}`` against the schema."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    out = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]; known: {sorted(SCHEMA)}")
        known = SCHEMA[section]
        out[section] = {}
        for key, value in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{section}]; known: {sorted(known)}")
            out[section][key] = _parse(section, key, value, known[key])
    return out


def _forest(values, default_trees, seed):
    kw = {"n_trees": default_trees, "seed": seed}
    kw.update(values)
    mf = kw.get("max_features", "sqrt")
    if isinstance(mf, str) and mf != "sqrt":
        try:
            kw["max_features"] = float(mf) if "." in mf else int(mf)
        except ValueError:
            raise ConfigError(f"max_features must be 'sqrt', an int or a fraction, got {mf!r}")
    try:
        return ForestConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def resolve(sections, seed=0):
    """Build an ExperimentConfig from parsed sections and the global seed."""
    exp = dict(sections.get("experiment", {}))
    model = exp.get("model", 2)
    if model not in range(1, 7):
        raise ConfigError(f"model must be 1..6, got {model}")
    preset_name = exp.get("preset", "desk")
    if preset_name not in PRESETS:
        raise ConfigError(f"preset must be one of {sorted(PRESETS)}, got {preset_name!r}")
    preset = PRESETS[preset_name]
    scale = exp.get("scale", 50.0 if preset_name == "desk" else 1.0)
    min_width = exp.get("min_width", 8)
    if scale <= 0 or min_width < 1:
        raise ConfigError("scale must be > 0 and min_width >= 1")

    if model == 1 and "pretrain" in sections:
        raise ConfigError("model 1 has no pretraining; remove the [pretrain] section")
    if model < 3 and any(s in sections for s in ("ensemble", "forest", "meta_forest")):
        raise ConfigError(f"model {model} has no ensemble stage")

    data_kw = dict(sections.get("data", {}))
    source = data_kw.pop("source", "synthetic")
    if source not in ("synthetic", "csv"):
        raise ConfigError(f"data source must be synthetic or csv, got {source!r}")
    fraction = data_kw.pop("valid_fraction", 0.9)
    files = {k: data_kw.pop(k) for k in ("train", "train_labels", "unlabeled", "test", "test_labels")
             if k in data_kw}
    if source == "csv":
        if data_kw:
            raise ConfigError(f"generator keys {sorted(data_kw)} given for csv data")
        for k in ("train", "test"):
            if k not in files:
                raise ConfigError(f"csv data needs a {k} file")
    elif files:
        raise ConfigError(f"file keys {sorted(files)} given for synthetic data")
    data_seed = data_kw.pop("seed", derive_seed(seed, "data"))
    blobs = BlobSpec(seed=data_seed, **data_kw)
    data = DataConfig(source, fraction, blobs, **files)

    arch = sections.get("architecture", {})
    if model == 1 and "dae_sizes" in arch and arch["dae_sizes"]:
        raise ConfigError("model 1 has no autoencoder layers; dae_sizes must be empty")
    dae_ref = arch.get("dae_sizes", REFERENCE_DAE) if model > 1 else ()
    if model > 1 and not dae_ref:
        raise ConfigError(f"model {model} needs at least one autoencoder layer")
    dae_sizes = scale_sizes(dae_ref, scale, min_width)
    maxout_sizes = scale_sizes(arch.get("maxout_sizes", REFERENCE_MAXOUT), scale, min_width)
    if not maxout_sizes:
        raise ConfigError("at least one maxout layer is required")
    pool_size = arch.get("pool_size", 2)

    train_kw = dict(DESK_TRAIN, max_epoch=preset["max_epoch"])
    train_kw.update(sections.get("train", {}))
    try:
        train_cfg = TrainConfig(seed=derive_seed(seed, "train"), **train_kw)
        pretrain_cfg = None
        if model > 1:
            pre_kw = dict(DESK_PRETRAIN)
            pre_kw.update(sections.get("pretrain", {}))
            pretrain_cfg = PretrainConfig(hidden_sizes=dae_sizes, seed=derive_seed(seed, "pretrain"),
                                          **pre_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    ens = None
    if model >= 3:
        ens = _ensemble(model, sections, preset, train_cfg.max_epoch, dae_sizes, maxout_sizes, seed)

    run_id = exp.get("run_id", f"model{model}")
    return ExperimentConfig(model, seed, run_id, preset_name, data, dae_sizes, maxout_sizes,
                            pool_size, train_cfg, pretrain_cfg, ens, raw=sections)


def _ensemble(model, sections, preset, max_epoch, dae_sizes, maxout_sizes, seed):
    kw = dict(sections.get("ensemble", {}))
    kind = ENSEMBLE_OF_MODEL[model]
    n_hidden = len(dae_sizes) + len(maxout_sizes)
    names = [f"h{i}" for i in range(n_hidden)]
    default_layers = tuple(names[-3:])
    layers = kw.get("layers", default_layers)
    for name in layers:
        if name not in names:
            raise ConfigError(f"layer {name!r} is not a hidden layer; have {names}")

    low, high = preset["window"]
    if max_epoch != preset["max_epoch"] and "window_low" not in kw:
        # keep the window at the tail of a shortened or lengthened run
        width = high - low
        high = min(high, max_epoch)
        low = max(1, high - width)
    low = kw.get("window_low", low)
    high = kw.get("window_high", high)
    convention = kw.get("convention", "inclusive")
    try:
        window = EpochWindow(low, high, convention)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    selected = window.select(range(1, max_epoch + 1))
    if kind != "vertical" and not selected:
        raise ConfigError(f"window {window} {convention} selects no epoch of 1..{max_epoch}")
    objective = kw.get("objective_epoch", max_epoch)
    if not 1 <= objective <= max_epoch:
        raise ConfigError(f"objective_epoch {objective} outside 1..{max_epoch}")

    forest = _forest(sections.get("forest", {}), preset["n_trees"], derive_seed(seed, "forest"))
    meta = _forest(sections.get("meta_forest", {}), preset["n_trees"], derive_seed(seed, "meta_forest"))
    try:
        return EnsembleSpec(
            kind,
            window=None if kind == "vertical" else window,
            objective_epoch=objective if kind == "vertical" else None,
            layers=tuple(layers) if kind in ("vertical", "combined") else (),
            classifier=forest, meta_classifier=meta)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, seed=0, overrides=None):
    """Read an INI file (or nothing) and resolve it; ``overrides`` merge per section."""
    sections = {}
    if path is not None:
        try:
            text = open(path).read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        sections = read_ini(text)
    for sec, values in (overrides or {}).items():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key in values:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
        sections.setdefault(sec, {}).update(values)
    return resolve(sections, seed)


def parse_override(text):
    """``section.key=value`` -> (section, key, typed value)."""
    name, sep, value = text.partition("=")
    sec, dot, key = name.strip().partition(".")
    if not sep or not dot:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    if sec not in SCHEMA or key not in SCHEMA[sec]:
        raise ConfigError(f"unknown setting {sec}.{key}")
    return sec, key, _parse(sec, key, value, SCHEMA[sec][key])
