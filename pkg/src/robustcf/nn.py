"""Small feed-forward binary classifiers in plain numpy.

ReLU hidden layers and a sigmoid output, ``m: R^d -> (0, 1)``. Layer ``l`` maps
``a -> a @ W[l].T + b[l]`` so ``W[l]`` has shape ``(sizes[l+1], sizes[l])``.
The ReLU derivative at exactly 0 is taken as 0.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .rng import SplitMix64, derive_seed

FORMAT_TAG = "robustcf.mlp"
FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MlpModel:
    layer_sizes: tuple
    weights: tuple
    biases: tuple
    hidden_activation: str = "relu"
    output_activation: str = "sigmoid"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        _check_sizes(sizes)
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("need one weight matrix and bias vector per layer")
        ws = tuple(_readonly(w) for w in self.weights)
        bs = tuple(_readonly(b) for b in self.biases)
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.shape != (sizes[i + 1], sizes[i]):
                raise ValueError(f"layer {i}: weight shape {w.shape} != {(sizes[i + 1], sizes[i])}")
            if b.shape != (sizes[i + 1],):
                raise ValueError(f"layer {i}: bias shape {b.shape} != {(sizes[i + 1],)}")
        if self.hidden_activation != "relu" or self.output_activation != "sigmoid":
            raise ValueError("only relu hidden / sigmoid output activations are supported")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    def __call__(self, x):
        return forward(self, x)

    def equals(self, other: "MlpModel") -> bool:
        """Bitwise equality of all parameters."""
        return (
            self.layer_sizes == other.layer_sizes
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")


def _check_sizes(sizes: Sequence[int]):
    if len(sizes) < 2:
        raise ValueError(f"layer_sizes needs an input and an output layer, got {list(sizes)}")
    if sizes[-1] != 1:
        raise ValueError(f"output layer must have size 1, got {sizes[-1]}")
    if any(s < 1 for s in sizes):
        raise ValueError(f"layer sizes must be positive, got {list(sizes)}")


def init_mlp(layer_sizes: Sequence[int], seed: int) -> MlpModel:
    """Gaussian weights with std ``1/sqrt(fan_in)``, zero biases.

    Layer ``l`` draws ``sizes[l+1] * sizes[l]`` normals row-major from the stream
    ``derive_seed(seed, "init", l)``.
    """
    sizes = tuple(int(s) for s in layer_sizes)
    _check_sizes(sizes)
    weights, biases = [], []
    for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gen = SplitMix64(derive_seed(seed, "init", layer))
        weights.append(gen.normal((fan_out, fan_in)) / np.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return MlpModel(sizes, tuple(weights), tuple(biases))


def _as_batch(model: MlpModel, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ValueError(f"expected input dimension {model.input_dim}, got shape {x.shape}")
    return X, single


_P_LO = np.finfo(np.float64).tiny
_P_HI = 1.0 - 2.0**-53


def _sigmoid(z):
    # clipped so the output stays strictly inside (0, 1) in floating point
    return np.clip(expit(z), _P_LO, _P_HI)


def _forward_pass(model: MlpModel, X: np.ndarray):
    """Pre-activations of every layer and activations feeding every layer."""
    acts, pres = [X], []
    a = X
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        pres.append(z)
        if i < last:
            a = np.maximum(z, 0.0)
            acts.append(a)
    return pres, acts


def logit(model: MlpModel, x):
    X, single = _as_batch(model, x)
    z = _forward_pass(model, X)[0][-1][:, 0]
    return float(z[0]) if single else z


def forward(model: MlpModel, x):
    """``m(x)``; a float for one point, an ``(n,)`` array for an ``(n, d)`` batch."""
    X, single = _as_batch(model, x)
    p = _sigmoid(_forward_pass(model, X)[0][-1][:, 0])
    return float(p[0]) if single else p


def _backprop_input(model: MlpModel, pres, delta: np.ndarray) -> np.ndarray:
    # delta: dL/d(output pre-activation), shape (n, 1)
    for i in range(len(model.weights) - 1, -1, -1):
        delta = delta @ model.weights[i]
        if i > 0:
            delta = delta * (pres[i - 1] > 0)
    return delta


def input_gradient(model: MlpModel, x):
    """Exact ``dm/dx`` by backpropagation; ``(d,)`` for one point or ``(n, d)``."""
    X, single = _as_batch(model, x)
    pres, _ = _forward_pass(model, X)
    p = _sigmoid(pres[-1])
    g = _backprop_input(model, pres, p * (1.0 - p))
    return g[0] if single else g


def forward_and_gradient(model: MlpModel, X: np.ndarray):
    """``m`` and ``dm/dx`` on a batch, sharing one forward pass."""
    X, _ = _as_batch(model, X)
    pres, _ = _forward_pass(model, X)
    p = _sigmoid(pres[-1])
    g = _backprop_input(model, pres, p * (1.0 - p))
    return p[:, 0], g


def _param_grads(model: MlpModel, X: np.ndarray, dz_out_fn):
    """Gradients of a loss w.r.t. all parameters.

    ``dz_out_fn(p)`` returns dL/d(output pre-activation) given the outputs
    ``p`` (shape ``(n, 1)``); it must already include any batch averaging.
    """
    pres, acts = _forward_pass(model, X)
    p = _sigmoid(pres[-1])
    delta = dz_out_fn(p)
    gws = [None] * len(model.weights)
    gbs = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        gws[i] = delta.T @ acts[i]
        gbs[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i]) * (pres[i - 1] > 0)
    return p, gws, gbs


class Adam:
    """Adam over a list of parameter arrays, updated in place."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _bce_from_logits(z: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def train(model: MlpModel, data, cfg: TrainConfig) -> MlpModel:
    """Minibatch Adam on binary cross-entropy; returns a new model.

    The batch order of epoch ``e`` is ``SplitMix64(derive_seed(cfg.seed, "batches", e)).permutation(n)``.
    """
    X = np.asarray(data.features, dtype=np.float64)
    y = np.asarray(data.labels, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ValueError(f"feature dimension {X.shape[1:]} does not match model input {model.input_dim}")
    ws = [np.array(w) for w in model.weights]
    bs = [np.array(b) for b in model.biases]
    work = _MutableMlp(model.layer_sizes, ws, bs)
    opt = Adam(ws + bs, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon)
    n = X.shape[0]
    for epoch in range(cfg.epochs):
        order = SplitMix64(derive_seed(cfg.seed, "batches", epoch)).permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            yb = y[idx, None]
            _, gws, gbs = _param_grads(work, X[idx], lambda p: (p - yb) / len(idx))
            opt.step(gws + gbs)
        loss = _bce_from_logits(_forward_pass(work, X)[0][-1][:, 0], y)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(w)) for w in ws):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
    return MlpModel(model.layer_sizes, tuple(ws), tuple(bs))


class _MutableMlp:
    # duck-typed stand-in for MlpModel whose arrays are updated in place
    def __init__(self, layer_sizes, weights, biases):
        self.layer_sizes = layer_sizes
        self.weights = weights
        self.biases = biases

    @property
    def input_dim(self):
        return self.layer_sizes[0]


def fit_mlp(layer_sizes: Sequence[int], data, cfg: TrainConfig) -> MlpModel:
    """``init_mlp(layer_sizes, cfg.seed)`` followed by ``train``."""
    return train(init_mlp(layer_sizes, cfg.seed), data, cfg)


def accuracy(model: MlpModel, data) -> float:
    if len(data.labels) == 0:
        raise ValueError("empty dataset")
    pred = forward(model, data.features) >= 0.5
    return float(np.mean(pred == (np.asarray(data.labels) == 1)))


def analytic_lipschitz(model: MlpModel) -> float:
    """Global Lipschitz bound ``(1/4) * prod ||W_l||_2`` of ``m``."""
    return 0.25 * float(np.prod([np.linalg.norm(w, 2) for w in model.weights]))


def local_lipschitz_estimate(model: MlpModel, x, n_samples: int, radius: float, seed: int) -> float:
    """Sampled lower bound on the local Lipschitz constant around ``x``.

    Returns ``max_i |m(x) - m(x_i)| / ||x - x_i||`` over ``n_samples`` points drawn
    uniformly from the radius ball. This never exceeds the true local constant
    and is only a heuristic estimate of it.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    if not radius > 0:
        raise ValueError("radius must be > 0")
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[0]
    gen = SplitMix64(derive_seed(seed, "lipschitz-ball"))
    direction = gen.normal((n_samples, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * gen.uniform(n_samples) ** (1.0 / d)
    pts = x + direction * r[:, None]
    dist = np.linalg.norm(pts - x, axis=1)
    keep = dist > 0
    if not np.any(keep):
        return 0.0
    diffs = np.abs(forward(model, pts[keep]) - forward(model, x))
    return float(np.max(diffs / dist[keep]))


def to_dict(model: MlpModel) -> dict:
    return {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "layer_sizes": list(model.layer_sizes),
        "hidden_activation": model.hidden_activation,
        "output_activation": model.output_activation,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }


def from_dict(doc: dict) -> MlpModel:
    if doc.get("format") != FORMAT_TAG:
        raise ValueError(f"not a model document (format={doc.get('format')!r})")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}")
    return MlpModel(
        tuple(doc["layer_sizes"]),
        tuple(np.array(w, dtype=np.float64).reshape(len(w), -1) for w in doc["weights"]),
        tuple(np.array(b, dtype=np.float64) for b in doc["biases"]),
        doc.get("hidden_activation", "relu"),
        doc.get("output_activation", "sigmoid"),
    )


def save_model(model: MlpModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_dict(model), fh)


def load_model(path) -> MlpModel:
    with open(path, encoding="utf-8") as fh:
        return from_dict(json.load(fh))
