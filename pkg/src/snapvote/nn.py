"""Dense feed-forward networks: layers, forward and backward passes.

Every array is float64. A network is an ordered list of layers; the last one
is an affine + softmax head and every other layer is a hidden layer named
``h0``, ``h1``, ... in input-to-output order. ``forward`` returns the output
of every layer so that intermediate representations can be handed to other
classifiers.
"""

from dataclasses import dataclass

import numpy as np

from snapvote.errors import ShapeError

KINDS = ("affine_sigmoid", "affine_tanh", "affine_relu", "maxout", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    input_dim: int
    output_dim: int
    pool_size: int = 2  # maxout only

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}; expected one of {KINDS}")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError(f"layer dims must be positive, got {self.input_dim}x{self.output_dim}")
        if self.kind == "maxout" and self.pool_size < 2:
            raise ValueError(f"maxout pool size must be >= 2, got {self.pool_size}")


class Layer:
    """One parameterised layer.

    Maxout layers keep ``pool_size`` affine pieces, so their weights have shape
    ``(k, input_dim, output_dim)`` and biases ``(k, output_dim)``. All other
    kinds use ``(input_dim, output_dim)`` and ``(output_dim,)``.
    """

    def __init__(self, spec, name, W, b):
        self.spec = spec
        self.name = name
        self.W = W
        self.b = b

    @property
    def kind(self):
        return self.spec.kind

    def __repr__(self):
        return f"Layer({self.name}, {self.kind}, {self.spec.input_dim}->{self.spec.output_dim})"


def glorot_uniform(fan_in, fan_out, rng, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def init_layer(spec, name, rng):
    if spec.kind == "maxout":
        shape = (spec.pool_size, spec.input_dim, spec.output_dim)
        W = glorot_uniform(spec.input_dim, spec.output_dim, rng, shape)
        b = np.zeros((spec.pool_size, spec.output_dim))
    else:
        W = glorot_uniform(spec.input_dim, spec.output_dim, rng)
        b = np.zeros(spec.output_dim)
    return Layer(spec, name, W, b)


def layer_names(n_layers):
    return [f"h{i}" for i in range(n_layers - 1)] + ["softmax"]


class Network:
    """Ordered stack of layers ending in a softmax head."""

    def __init__(self, layers):
        if not layers:
            raise ValueError("a network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.spec.output_dim != nxt.spec.input_dim:
                raise ShapeError(
                    f"layer {prev.name} outputs {prev.spec.output_dim} features "
                    f"but {nxt.name} expects {nxt.spec.input_dim}"
                )
        for layer in layers[:-1]:
            if layer.kind == "softmax":
                raise ValueError(f"softmax layer {layer.name} must be the final layer")
        if layers[-1].kind != "softmax":
            raise ValueError("the final layer of a classification network must be softmax")
        self.layers = list(layers)

    @classmethod
    def from_specs(cls, specs, rng):
        names = layer_names(len(specs))
        return cls([init_layer(s, n, rng) for s, n in zip(specs, names)])

    @property
    def input_dim(self):
        return self.layers[0].spec.input_dim

    @property
    def n_classes(self):
        return self.layers[-1].spec.output_dim

    @property
    def layer_names(self):
        return [layer.name for layer in self.layers]

    def params(self):
        """Flat list of parameter arrays: ``[W0, b0, W1, b1, ...]``."""
        out = []
        for layer in self.layers:
            out.extend((layer.W, layer.b))
        return out

    def set_params(self, params):
        for i, layer in enumerate(self.layers):
            layer.W, layer.b = params[2 * i], params[2 * i + 1]

    def copy(self):
        return Network([Layer(l.spec, l.name, l.W.copy(), l.b.copy()) for l in self.layers])

    def __repr__(self):
        dims = [self.input_dim] + [l.spec.output_dim for l in self.layers]
        return "Network(" + "-".join(str(d) for d in dims) + ")"


def sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def maxout_forward(pieces):
    """Elementwise maximum over a list of equally shaped affine outputs.

    Returns ``(output, argmax)`` where ``argmax`` holds, per element, the index
    of the winning piece. Ties go to the lowest index.
    """
    if len(pieces) < 2:
        raise ShapeError(f"maxout needs at least 2 pieces, got {len(pieces)}")
    shape = np.shape(pieces[0])
    for i, p in enumerate(pieces):
        if np.shape(p) != shape:
            raise ShapeError(f"maxout piece {i} has shape {np.shape(p)}, expected {shape}")
    stack = np.stack([np.asarray(p, dtype=np.float64) for p in pieces])
    arg = np.argmax(stack, axis=0)
    out = np.take_along_axis(stack, arg[None], axis=0)[0]
    return out, arg


def dropout_mask(shape, rate, rng):
    """Inverted-dropout mask: kept entries are ``1/(1-rate)``, dropped are 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def check_input(net, batch):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise ShapeError(f"expected a 2-D batch, got {batch.ndim}-D")
    if batch.shape[1] != net.input_dim:
        raise ShapeError(
            f"batch has {batch.shape[1]} columns but the network expects {net.input_dim}"
        )
    return batch


def _layer_forward(layer, a):
    kind = layer.kind
    if kind == "maxout":
        pieces = [a @ layer.W[p] + layer.b[p] for p in range(layer.W.shape[0])]
        out, arg = maxout_forward(pieces)
        return out, arg
    z = a @ layer.W + layer.b
    if kind == "affine_sigmoid":
        return sigmoid(z), None
    if kind == "affine_tanh":
        return np.tanh(z), None
    if kind == "affine_relu":
        return np.maximum(z, 0.0), z
    # softmax head: keep logits for a stable log-likelihood
    return softmax(z), z


def forward_cache(net, batch, dropout_rate=0.0, rng=None):
    """Forward pass that keeps what ``backward`` needs.

    Dropout (inverted) is applied to the output of every maxout layer when
    ``dropout_rate > 0``; ``rng`` is then required.

    Returns:
        reps: list of per-layer outputs (after dropout, if any).
        cache: list of ``(layer_input, aux, mask)`` per layer.
    """
    a = check_input(net, batch)
    reps, cache = [], []
    for layer in net.layers:
        out, aux = _layer_forward(layer, a)
        mask = None
        if dropout_rate > 0.0 and layer.kind == "maxout":
            mask = dropout_mask(out.shape, dropout_rate, rng)
            out = out * mask
        cache.append((a, aux, mask))
        reps.append(out)
        a = out
    return reps, cache


def forward(net, batch):
    """Inference pass. Returns one representation per layer, softmax last."""
    reps, _ = forward_cache(net, batch)
    return reps


def predict_proba(net, batch):
    return forward(net, batch)[-1]


def _check_targets(net, batch, targets):
    targets = np.asarray(targets)
    if batch.shape[0] == 0:
        raise ShapeError("empty batch")
    if targets.shape != (batch.shape[0],):
        raise ShapeError(f"batch has {batch.shape[0]} rows but {targets.shape[0]} targets")
    if targets.min() < 0 or targets.max() >= net.n_classes:
        raise ValueError(f"targets must lie in [0, {net.n_classes})")
    return targets.astype(np.int64)


def backward_from_cache(net, reps, cache, targets):
    """Summed negative log-likelihood and its gradients for a cached pass.

    Gradients are returned in the order of ``net.params()``.
    """
    n = targets.shape[0]
    logits = cache[-1][1]
    loss = -log_softmax(logits)[np.arange(n), targets].sum()
    grads = [None] * (2 * len(net.layers))

    delta = reps[-1].copy()
    delta[np.arange(n), targets] -= 1.0
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        a_in, aux, mask = cache[i]
        if i != len(net.layers) - 1:
            # delta is dL/d(output of layer i)
            if mask is not None:
                delta = delta * mask
            out = reps[i]  # masks exist only on maxout layers
            if layer.kind == "affine_sigmoid":
                delta = delta * out * (1.0 - out)
            elif layer.kind == "affine_tanh":
                delta = delta * (1.0 - out * out)
            elif layer.kind == "affine_relu":
                delta = delta * (aux > 0)
        if layer.kind == "maxout":
            k = layer.W.shape[0]
            gW = np.empty_like(layer.W)
            gb = np.empty_like(layer.b)
            d_in = np.zeros_like(a_in)
            for p in range(k):
                dp = np.where(aux == p, delta, 0.0)
                gW[p] = a_in.T @ dp
                gb[p] = dp.sum(axis=0)
                d_in += dp @ layer.W[p].T
        else:
            gW = a_in.T @ delta
            gb = delta.sum(axis=0)
            d_in = delta @ layer.W.T
        grads[2 * i], grads[2 * i + 1] = gW, gb
        delta = d_in
    return float(loss), grads


def backward(net, batch, targets):
    """Loss (summed NLL over the batch) and per-parameter gradients.

    No dropout is applied. Returns ``(loss, grads)`` with ``grads`` aligned to
    ``net.params()``.
    """
    batch = check_input(net, batch)
    targets = _check_targets(net, batch, targets)
    reps, cache = forward_cache(net, batch)
    return backward_from_cache(net, reps, cache, targets)


def loss_and_grads(net, batch, targets, dropout_rate=0.0, rng=None):
    batch = check_input(net, batch)
    targets = _check_targets(net, batch, targets)
    reps, cache = forward_cache(net, batch, dropout_rate, rng)
    return backward_from_cache(net, reps, cache, targets)


def nll(net, batch, targets):
    """Summed negative log-likelihood without gradients."""
    batch = check_input(net, batch)
    targets = _check_targets(net, batch, targets)
    _, cache = forward_cache(net, batch)
    return float(-log_softmax(cache[-1][1])[np.arange(len(targets)), targets].sum())


def argmax_rows(probs):
    """Row-wise argmax, lowest index on ties."""
    return np.argmax(probs, axis=1)
