"""Small fully-connected ReLU classifier with hand-written derivatives.

Parameters are flattened layer-major; inside a layer the weight matrix comes
first (row-major, shape ``(out, in)``) followed by the bias. Every vector of
length ``P`` in this package (gradients, Hessian-vector products, inverse-HVP
solutions) uses that order.

The Hessian-vector product is computed with the R-operator: a forward pass of
directional derivatives followed by a backward pass of the gradient's
directional derivative. ReLU has zero second derivative away from the kink,
and the kink is treated as having zero second derivative as well.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

ACTIVATIONS = ("relu", "identity")
MODEL_MAGIC = b"NNIFMDL1"


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape

    @property
    def n_params(self) -> int:
        out, inp = self.weight.shape
        return out * (inp + 1)


@dataclass(frozen=True)
class ModelParams:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        if not self.layers:
            raise ModelError("model needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ModelError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.weight.shape[0],):
                raise ModelError(f"layer {i}: bias shape {layer.bias.shape} does not match weight")
            if i > 0 and layer.weight.shape[1] != self.layers[i - 1].weight.shape[0]:
                raise ModelError(f"layer {i}: input width does not match previous layer")
            if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
                raise ModelError(f"layer {i}: non-finite parameters")
            layer.weight.setflags(write=False)
            layer.bias.setflags(write=False)
        if self.layers[-1].activation != "identity":
            raise ModelError("last layer must produce logits (identity activation)")
        if self.n_classes < 2:
            raise ModelError("need at least two classes")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def n_classes(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def n_hidden(self) -> int:
        return len(self.layers) - 1

    @property
    def embedding_index(self) -> int:
        """Index of the embedding in :attr:`ActivationTrace.hidden` (-1 means the raw input)."""
        return self.n_hidden - 1

    @property
    def embedding_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    @property
    def widths(self) -> list[int]:
        return [self.input_dim] + [layer.weight.shape[0] for layer in self.layers]

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.weight.ravel(), l.bias]) for l in self.layers])

    def with_flat(self, theta: np.ndarray) -> "ModelParams":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ModelError(f"expected {self.n_params} parameters, got shape {theta.shape}")
        layers = []
        for layer, (w, b) in zip(self.layers, _split(self, theta)):
            layers.append(Layer(w.copy(), b.copy(), layer.activation))
        return ModelParams(tuple(layers))


@dataclass
class ActivationTrace:
    """Post-activation vectors for one input (or a batch, leading axis = examples)."""

    inputs: np.ndarray
    hidden: list[np.ndarray]
    logits: np.ndarray
    pre_activations: list[np.ndarray] = field(repr=False, default_factory=list)

    @property
    def embedding(self) -> np.ndarray:
        return self.hidden[-1] if self.hidden else self.inputs

    def layer(self, index: int) -> np.ndarray:
        return self.hidden[index]


def _split(params: ModelParams, theta: np.ndarray):
    out, pos = [], 0
    for layer in params.layers:
        o, i = layer.weight.shape
        w = theta[pos:pos + o * i].reshape(o, i)
        pos += o * i
        b = theta[pos:pos + o]
        pos += o
        out.append((w, b))
    return out


def init_model(widths: Sequence[int], seed: int) -> ModelParams:
    """Create an MLP with ReLU hidden layers and a linear logit layer.

    ``widths`` is ``[input_dim, hidden..., n_classes]``. Weights are drawn
    layer by layer from ``U(-a, a)`` with ``a = sqrt(6 / (in + out))`` using
    ``numpy.random.default_rng(seed)``; each weight matrix is drawn with shape
    ``(out, in)`` in one call. Biases start at zero.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise ModelError("architecture needs an input width and an output width")
    if any(w < 1 for w in widths):
        raise ModelError(f"non-positive width in {widths}")
    if widths[-1] < 2:
        raise ModelError("need at least two classes")
    rng = np.random.default_rng(seed)
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        act = "identity" if k == len(widths) - 2 else "relu"
        layers.append(Layer(w, np.zeros(fan_out), act))
    return ModelParams(tuple(layers))


def _as_batch(params: ModelParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ModelError(f"input has shape {x.shape}, model expects dimension {params.input_dim}")
    return x, single


def _labels(params: ModelParams, y, n: int) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y))
    if y.shape != (n,):
        raise ModelError(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(y == np.round(y)):
            raise ModelError("labels must be integers")
        y = y.astype(np.int64)
    if np.any((y < 0) | (y >= params.n_classes)):
        raise ModelError(f"label out of range [0, {params.n_classes})")
    return y


def _run(params: ModelParams, X: np.ndarray):
    zs, acts = [], [X]
    a = X
    for layer in params.layers:
        z = a @ layer.weight.T + layer.bias
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z
        zs.append(z)
        acts.append(a)
    return zs, acts


def _backward(params: ModelParams, zs, acts, d_logits, d_hidden=None):
    """Back-propagate ``d_logits`` (and optional extra gradients on hidden outputs).

    Returns the per-layer ``dZ`` list and the gradient with respect to the input.
    """
    n_layers = len(params.layers)
    d_z = [None] * n_layers
    d_a = d_logits
    for l in range(n_layers - 1, -1, -1):
        layer = params.layers[l]
        if d_hidden is not None and l < n_layers - 1 and d_hidden.get(l) is not None:
            d_a = d_a + d_hidden[l]
        dz = d_a * (zs[l] > 0) if layer.activation == "relu" else d_a
        d_z[l] = dz
        d_a = dz @ layer.weight
    return d_z, d_a


def _param_grad(params: ModelParams, acts, d_z) -> np.ndarray:
    parts = []
    for l in range(len(params.layers)):
        parts.append((d_z[l].T @ acts[l]).ravel())
        parts.append(d_z[l].sum(axis=0))
    return np.concatenate(parts)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def forward(params: ModelParams, x) -> ActivationTrace:
    X, single = _as_batch(params, x)
    zs, acts = _run(params, X)
    if single:
        return ActivationTrace(acts[0][0], [a[0] for a in acts[1:-1]], acts[-1][0], [z[0] for z in zs])
    return ActivationTrace(X, acts[1:-1], acts[-1], zs)


def logits(params: ModelParams, x) -> np.ndarray:
    return forward(params, x).logits


def predict(params: ModelParams, x) -> np.ndarray:
    """Arg-max class; ``np.argmax`` returns the lowest index on ties."""
    return np.argmax(logits(params, x), axis=-1)


def embedding(params: ModelParams, x) -> np.ndarray:
    return forward(params, x).embedding


def losses(params: ModelParams, x, y) -> np.ndarray:
    X, _ = _as_batch(params, x)
    y = _labels(params, y, X.shape[0])
    z = _run(params, X)[1][-1]
    return -log_softmax(z)[np.arange(len(y)), y]


def loss(params: ModelParams, x, y) -> float:
    """Softmax cross-entropy; the mean over the batch when ``x`` is 2-D."""
    return float(losses(params, x, y).mean())


def _mean_backward(params, X, y):
    y = _labels(params, y, X.shape[0])
    zs, acts = _run(params, X)
    p = softmax(acts[-1])
    p[np.arange(len(y)), y] -= 1.0
    d_z, d_x = _backward(params, zs, acts, p / X.shape[0])
    return zs, acts, d_z, d_x


def grad_params(params: ModelParams, x, y) -> np.ndarray:
    """Gradient of :func:`loss` with respect to the flat parameter vector."""
    X, _ = _as_batch(params, x)
    _, acts, d_z, _ = _mean_backward(params, X, y)
    return _param_grad(params, acts, d_z)


def grad_input(params: ModelParams, x, y) -> np.ndarray:
    """Gradient of each example's own loss with respect to its input.

    Unlike :func:`grad_params` this is not averaged: row ``i`` is
    ``d loss_i / d x_i``.
    """
    X, single = _as_batch(params, x)
    _, _, _, d_x = _mean_backward(params, X, y)
    d_x = d_x * X.shape[0]
    return d_x[0] if single else d_x


def per_example_grads(params: ModelParams, x, y) -> np.ndarray:
    """Row ``i`` is the parameter gradient of example ``i``'s loss, shape ``(n, P)``."""
    X, _ = _as_batch(params, x)
    n = X.shape[0]
    _, acts, d_z, _ = _mean_backward(params, X, y)
    parts = []
    for l in range(len(params.layers)):
        dz = d_z[l] * n
        parts.append(np.einsum("ni,nj->nij", dz, acts[l]).reshape(n, -1))
        parts.append(dz)
    return np.concatenate(parts, axis=1)


def input_vjp(params: ModelParams, x, d_logits, d_embedding=None) -> np.ndarray:
    """Pull back cotangents on the logits (and optionally the embedding) to the input."""
    X, single = _as_batch(params, x)
    d_logits = np.atleast_2d(np.asarray(d_logits, dtype=np.float64))
    zs, acts = _run(params, X)
    d_hidden = None
    if d_embedding is not None:
        if params.n_hidden == 0:
            raise ModelError("model has no hidden embedding layer")
        d_hidden = {params.n_hidden - 1: np.atleast_2d(d_embedding)}
    _, d_x = _backward(params, zs, acts, d_logits, d_hidden)
    return d_x[0] if single else d_x


def logit_jacobian(params: ModelParams, x) -> np.ndarray:
    """Jacobian of the logits with respect to the input, shape ``(n, K, d)``."""
    X, single = _as_batch(params, x)
    zs, acts = _run(params, X)
    n, k = X.shape[0], params.n_classes
    jac = np.empty((n, k, X.shape[1]))
    for c in range(k):
        seed = np.zeros((n, k))
        seed[:, c] = 1.0
        jac[:, c, :] = _backward(params, zs, acts, seed)[1]
    return jac[0] if single else jac


def hvp(params: ModelParams, x, y, v) -> np.ndarray:
    """Product of the mean-loss Hessian over ``(x, y)`` with the flat vector ``v``."""
    X, _ = _as_batch(params, x)
    n = X.shape[0]
    if n == 0:
        raise ModelError("hvp needs a non-empty batch")
    y = _labels(params, y, n)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (params.n_params,):
        raise ModelError(f"direction has shape {v.shape}, expected ({params.n_params},)")
    dirs = _split(params, v)
    zs, acts = _run(params, X)
    n_layers = len(params.layers)

    # forward pass of directional derivatives
    r_acts = [np.zeros_like(X)]
    r_zs = []
    for l, layer in enumerate(params.layers):
        vw, vb = dirs[l]
        rz = r_acts[l] @ layer.weight.T + acts[l] @ vw.T + vb
        r_zs.append(rz)
        r_acts.append(rz * (zs[l] > 0) if layer.activation == "relu" else rz)

    # backward pass: gradient and its directional derivative together
    p = softmax(acts[-1])
    delta = p.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    rz_top = r_zs[-1]
    r_delta = (p * rz_top - p * np.sum(p * rz_top, axis=1, keepdims=True)) / n

    parts = [None] * (2 * n_layers)
    for l in range(n_layers - 1, -1, -1):
        layer = params.layers[l]
        vw, _ = dirs[l]
        parts[2 * l] = (r_delta.T @ acts[l] + delta.T @ r_acts[l]).ravel()
        parts[2 * l + 1] = r_delta.sum(axis=0)
        if l > 0:
            prev = params.layers[l - 1]
            mask = (zs[l - 1] > 0) if prev.activation == "relu" else 1.0
            prev_delta = (delta @ layer.weight) * mask
            r_delta = (r_delta @ layer.weight + delta @ vw) * mask
            delta = prev_delta
    return np.concatenate(parts)


def hessian(params: ModelParams, x, y) -> np.ndarray:
    """Dense mean-loss Hessian assembled column by column from :func:`hvp`."""
    p = params.n_params
    h = np.empty((p, p))
    e = np.zeros(p)
    for j in range(p):
        e[j] = 1.0
        h[:, j] = hvp(params, x, y, e)
        e[j] = 0.0
    return h


def accuracy(params: ModelParams, x, y) -> float:
    y = np.asarray(y)
    if len(y) == 0:
        return float("nan")
    return float(np.mean(predict(params, x) == y))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 100
    batch_size: int = 64
    weight_decay: float = 4e-4
    seed: int = 0


def train(params: ModelParams, x, y, hyper: TrainConfig = TrainConfig(), val=None) -> ModelParams:
    """Minibatch SGD with classical momentum and L2 weight decay.

    Weight decay acts on every parameter, so the regularised objective is the
    mean cross-entropy plus ``weight_decay / 2 * ||theta||^2``. Shuffling uses
    ``default_rng(hyper.seed)``. If ``val = (x_val, y_val)`` is given, the
    parameters after the epoch with the best validation accuracy are returned
    (earliest epoch on ties); otherwise the final parameters.
    """
    X, _ = _as_batch(params, x)
    n = X.shape[0]
    if n == 0:
        raise ModelError("empty training set")
    if hyper.lr < 0:
        raise ModelError("learning rate must be non-negative")
    y = _labels(params, y, n)
    rng = np.random.default_rng(hyper.seed)
    theta = params.flat()
    velocity = np.zeros_like(theta)
    best, best_acc = params, -1.0
    if val is not None:
        best_acc = accuracy(params, *val)
    bs = max(1, int(hyper.batch_size))
    current = params
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            g = grad_params(current, X[idx], y[idx]) + hyper.weight_decay * theta
            velocity = hyper.momentum * velocity - hyper.lr * g
            theta = theta + velocity
            current = params.with_flat(theta)
        if val is not None:
            acc = accuracy(current, *val)
            if acc > best_acc:
                best, best_acc = current, acc
    return best if val is not None else current


def save_model(params: ModelParams, path) -> None:
    """Write ``NNIFMDL1`` + little-endian header + float64 parameters in flat order."""
    header = struct.pack("<II", len(params.layers), params.input_dim)
    for layer in params.layers:
        o, i = layer.weight.shape
        header += struct.pack("<IIB", o, i, ACTIVATIONS.index(layer.activation))
    Path(path).write_bytes(MODEL_MAGIC + header + params.flat().astype("<f8").tobytes())


def load_model(path) -> ModelParams:
    data = Path(path).read_bytes()
    if data[:8] != MODEL_MAGIC:
        raise ModelError(f"{path}: not an NNIF model file")
    n_layers, _ = struct.unpack_from("<II", data, 8)
    pos = 16
    layers = []
    for _ in range(n_layers):
        o, i, act = struct.unpack_from("<IIB", data, pos)
        pos += 9
        layers.append(Layer(np.zeros((o, i)), np.zeros(o), ACTIVATIONS[act]))
    skeleton = ModelParams(tuple(layers))
    theta = np.frombuffer(data, dtype="<f8", offset=pos)
    if theta.size != skeleton.n_params:
        raise ModelError(f"{path}: truncated parameter block")
    return skeleton.with_flat(theta.astype(np.float64))
