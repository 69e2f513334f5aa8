"""Greedy layer-wise denoising-autoencoder pretraining."""

import logging
from dataclasses import dataclass, field

import numpy as np

from snapvote import nn
from snapvote.errors import ShapeError, TrainingDivergenceError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PretrainConfig:
    hidden_sizes: tuple = ()
    corruption_level: float = 0.25
    epochs: int = 10
    learning_rate: float = 0.1
    momentum: float = 0.5
    batch_size: int = 32
    tied: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.corruption_level < 1.0:
            raise ValueError(f"corruption_level must be in [0, 1), got {self.corruption_level}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError(f"hidden sizes must be positive, got {self.hidden_sizes}")


@dataclass
class DaeLayer:
    W: np.ndarray  # (d_in, d_hid), shared with the decoder when tied
    b_enc: np.ndarray
    b_dec: np.ndarray
    W_dec: np.ndarray = None  # (d_hid, d_in) when untied
    corruption_level: float = 0.25
    loss_curve: list = field(default_factory=list, compare=False)

    @property
    def tied(self):
        return self.W_dec is None

    @property
    def n_in(self):
        return self.W.shape[0]

    @property
    def n_hidden(self):
        return self.W.shape[1]

    def params(self):
        ps = [self.W, self.b_enc, self.b_dec]
        if not self.tied:
            ps.append(self.W_dec)
        return ps

    def set_params(self, ps):
        self.W, self.b_enc, self.b_dec = ps[0], ps[1], ps[2]
        if not self.tied:
            self.W_dec = ps[3]

    def decoder_weights(self):
        return self.W.T if self.tied else self.W_dec


def init_dae(n_in, n_hidden, rng, tied=True, corruption_level=0.25):
    W = nn.glorot_uniform(n_in, n_hidden, rng)
    W_dec = None if tied else nn.glorot_uniform(n_hidden, n_in, rng)
    return DaeLayer(W, np.zeros(n_hidden), np.zeros(n_in), W_dec, corruption_level)


class MinMaxScaler:
    """Per-feature rescaling to [0, 1] with statistics frozen at fit time.

    Values outside the fitted range are clipped; constant features map to 0.
    """

    def __init__(self, low=None, high=None):
        self.low = low
        self.high = high

    def fit(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] == 0:
            raise ShapeError("cannot fit a scaler on an empty matrix")
        self.low = X.min(axis=0)
        self.high = X.max(axis=0)
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        span = self.high - self.low
        safe = np.where(span > 0, span, 1.0)
        out = np.where(span > 0, (X - self.low) / safe, 0.0)
        return np.clip(out, 0.0, 1.0)


def corrupt(X, level, rng):
    """Masking noise: each entry is zeroed independently with probability ``level``."""
    X = np.asarray(X, dtype=np.float64)
    if not 0.0 <= level < 1.0:
        raise ValueError(f"corruption level must be in [0, 1), got {level}")
    if level == 0.0:
        return X.copy()
    return np.where(rng.random(X.shape) < level, 0.0, X)


def encode(layer, X):
    return nn.sigmoid(np.asarray(X, dtype=np.float64) @ layer.W + layer.b_enc)


def reconstruct(layer, X):
    return nn.sigmoid(encode(layer, X) @ layer.decoder_weights() + layer.b_dec)


def reconstruction_loss(layer, clean, corrupted=None):
    """Summed cross-entropy of ``clean`` given the reconstruction of ``corrupted``."""
    corrupted = clean if corrupted is None else corrupted
    logits = encode(layer, corrupted) @ layer.decoder_weights() + layer.b_dec
    return float(np.sum(np.logaddexp(0.0, logits) - clean * logits))


def dae_loss_and_grads(layer, clean, corrupted):
    """Summed reconstruction cross-entropy and gradients aligned to ``layer.params()``."""
    h = encode(layer, corrupted)
    W_dec = layer.decoder_weights()
    logits = h @ W_dec + layer.b_dec
    loss = float(np.sum(np.logaddexp(0.0, logits) - clean * logits))

    d_logits = nn.sigmoid(logits) - clean
    g_b_dec = d_logits.sum(axis=0)
    g_W_dec = h.T @ d_logits
    d_pre = (d_logits @ W_dec.T) * h * (1.0 - h)
    g_W = corrupted.T @ d_pre
    g_b_enc = d_pre.sum(axis=0)
    if layer.tied:
        return loss, [g_W + g_W_dec.T, g_b_enc, g_b_dec]
    return loss, [g_W, g_b_enc, g_b_dec, g_W_dec]


def layer_rng(seed, index):
    """Independent generator for pretraining layer ``index``."""
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(index + 1)[index])


def train_dae_layer(X, n_hidden, cfg, rng=None):
    """Fit one denoising autoencoder with minibatch momentum SGD.

    The loss curve has ``cfg.epochs + 1`` entries: the mean per-example clean
    reconstruction loss before training and after every epoch.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ShapeError("pretraining input must be a nonempty 2-D matrix")
    rng = layer_rng(cfg.seed, 0) if rng is None else rng
    layer = init_dae(X.shape[1], n_hidden, rng, cfg.tied, cfg.corruption_level)
    n = X.shape[0]
    curve = [reconstruction_loss(layer, X) / n]
    velocity = [np.zeros_like(p) for p in layer.params()]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            clean = X[idx]
            noisy = corrupt(clean, cfg.corruption_level, rng)
            loss, grads = dae_loss_and_grads(layer, clean, noisy)
            if not np.isfinite(loss):
                raise TrainingDivergenceError(epoch, epoch - 1, stage="pretrain")
            scale = cfg.learning_rate / len(idx)
            velocity = [cfg.momentum * v - scale * g for v, g in zip(velocity, grads)]
            layer.set_params([p + v for p, v in zip(layer.params(), velocity)])
        curve.append(reconstruction_loss(layer, X) / n)
        log.debug("dae epoch %d loss %.6f", epoch, curve[-1])
    layer.loss_curve = curve
    return layer


def stack_pretrain(unlabeled, cfg):
    """Greedy stack: layer ``i`` trains on the clean encoding of layers ``0..i-1``."""
    X = np.asarray(unlabeled, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ShapeError("unlabeled set is empty")
    layers = []
    for i, n_hidden in enumerate(cfg.hidden_sizes):
        try:
            layer = train_dae_layer(X, n_hidden, cfg, layer_rng(cfg.seed, i))
        except TrainingDivergenceError as exc:
            raise TrainingDivergenceError(exc.epoch, exc.last_good_epoch,
                                          stage=f"pretrain layer {i}") from exc
        layers.append(layer)
        X = encode(layer, X)
    return layers


def init_network(daes, supervised_specs, rng):
    """Network whose first layers carry the DAE encoders; the rest are fresh.

    Decoders are dropped. With no DAE layers this is ``Network.from_specs``.
    """
    supervised_specs = list(supervised_specs)
    if daes and supervised_specs and daes[-1].n_hidden != supervised_specs[0].input_dim:
        raise ShapeError(
            f"pretrained stack outputs {daes[-1].n_hidden} features but the first "
            f"supervised layer expects {supervised_specs[0].input_dim}"
        )
    for prev, nxt in zip(daes, daes[1:]):
        if prev.n_hidden != nxt.n_in:
            raise ShapeError(f"DAE chain break: {prev.n_hidden} -> {nxt.n_in}")
    names = nn.layer_names(len(daes) + len(supervised_specs))
    layers = []
    for dae, name in zip(daes, names):
        spec = nn.LayerSpec("affine_sigmoid", dae.n_in, dae.n_hidden)
        layers.append(nn.Layer(spec, name, dae.W.copy(), dae.b_enc.copy()))
    for spec, name in zip(supervised_specs, names[len(daes):]):
        layers.append(nn.init_layer(spec, name, rng))
    return nn.Network(layers)
