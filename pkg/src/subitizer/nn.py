"""Small deterministic dense-network engine.

Layers hold weights as ``[fan_out, fan_in]`` matrices and act on row-major
batches (``x @ W.T + b``).  A :class:`Network` is a DAG of named layers whose
inputs are concatenations of external inputs and/or other layers, so the
same engine serves the single-output baseline and the three-headed
extended model.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from subitizer.errors import ConfigError, DivergenceError

ACTIVATIONS = ("sigmoid", "softmax", "linear")
PROB_FLOOR = 1e-12


def make_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """Seeded generator for an independent named stream.

    String keys are hashed with CRC32 so ``make_rng(7, "pretrain", 2)`` is
    stable across processes and Python versions.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        entropy.append(zlib.crc32(key.encode()) if isinstance(key, str) else int(key))
    return np.random.default_rng(entropy)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return expit(z)


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted by the row max for stability."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def loss_cross_entropy(predicted: np.ndarray, target: np.ndarray) -> float:
    """Mean over rows of ``-sum(target * log(predicted))``."""
    p = np.atleast_2d(predicted)
    y = np.atleast_2d(target)
    return float(-(y * np.log(np.maximum(p, PROB_FLOOR))).sum() / p.shape[0])


def cross_entropy_grad(predicted: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Gradient of :func:`loss_cross_entropy` w.r.t. the probabilities."""
    p = np.atleast_2d(predicted)
    y = np.atleast_2d(target)
    return -y / np.maximum(p, PROB_FLOOR) / p.shape[0]


def loss_mse(predicted: np.ndarray, target: np.ndarray) -> float:
    """Mean of squared errors over every entry."""
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape:
        raise ConfigError(f"mse shape mismatch: {predicted.shape} vs {target.shape}")
    return float(np.mean((predicted - target) ** 2))


def mse_grad(predicted: np.ndarray, target: np.ndarray) -> np.ndarray:
    predicted = np.asarray(predicted, dtype=np.float64)
    if predicted.shape != np.shape(target):
        raise ConfigError(f"mse shape mismatch: {predicted.shape} vs {np.shape(target)}")
    return 2.0 * (predicted - target) / predicted.size


@dataclass
class DenseLayer:
    weights: np.ndarray
    biases: np.ndarray
    activation: str = "sigmoid"

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ConfigError(
                f"layer shapes disagree: weights {self.weights.shape}, biases {self.biases.shape}"
            )

    @property
    def fan_in(self) -> int:
        return self.weights.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def init(cls, fan_in: int, fan_out: int, rng: np.random.Generator,
             activation: str = "sigmoid") -> "DenseLayer":
        """Uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
        if fan_in <= 0 or fan_out <= 0:
            raise ConfigError(f"layer widths must be positive, got {fan_in}->{fan_out}")
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        return cls(w, np.zeros(fan_out), activation)

    def activate(self, x: np.ndarray) -> np.ndarray:
        z = x @ self.weights.T + self.biases
        if self.activation == "sigmoid":
            return expit(z)
        if self.activation == "softmax":
            return softmax(z)
        return z

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.biases.copy(), self.activation)


def _preactivation_grad(layer: DenseLayer, a: np.ndarray, da: np.ndarray) -> np.ndarray:
    if layer.activation == "sigmoid":
        return da * a * (1.0 - a)
    if layer.activation == "softmax":
        return a * (da - (da * a).sum(axis=1, keepdims=True))
    return da


@dataclass
class Cache:
    """Per-layer concatenated inputs and outputs from one forward pass."""

    inputs: dict[str, np.ndarray]
    activations: dict[str, np.ndarray]


class Network:
    """Named dense layers wired as a DAG.

    ``sources[name]`` lists what is concatenated (in order) to form the input
    of layer ``name``; entries are either external input names or earlier
    layer names.  ``layers`` must be given in topological order.
    """

    def __init__(self, input_sizes: dict[str, int], layers: dict[str, DenseLayer],
                 sources: dict[str, tuple[str, ...]]):
        self.input_sizes = dict(input_sizes)
        self.layers = dict(layers)
        self.sources = {k: tuple(v) for k, v in sources.items()}
        self._validate()

    @classmethod
    def chain(cls, layers: list[DenseLayer], input_name: str = "x") -> "Network":
        names = [f"l{i}" for i in range(len(layers))]
        sources = {n: ((input_name,) if i == 0 else (names[i - 1],)) for i, n in enumerate(names)}
        return cls({input_name: layers[0].fan_in}, dict(zip(names, layers)), sources)

    def _width(self, name: str) -> int:
        if name in self.input_sizes:
            return self.input_sizes[name]
        return self.layers[name].fan_out

    def _validate(self) -> None:
        seen = set(self.input_sizes)
        consumed = set()
        for name, layer in self.layers.items():
            srcs = self.sources.get(name)
            if not srcs:
                raise ConfigError(f"layer {name!r} has no sources")
            for s in srcs:
                if s not in seen:
                    raise ConfigError(f"layer {name!r} reads {s!r} before it is defined")
                consumed.add(s)
            width = sum(self._width(s) for s in srcs)
            if width != layer.fan_in:
                raise ConfigError(
                    f"layer {name!r} expects fan_in {layer.fan_in} but sources {srcs} give {width}"
                )
            seen.add(name)
        for name, layer in self.layers.items():
            if layer.activation == "softmax" and name in consumed:
                raise ConfigError(f"softmax layer {name!r} feeds another layer")

    @property
    def outputs(self) -> tuple[str, ...]:
        consumed = {s for srcs in self.sources.values() for s in srcs}
        return tuple(n for n in self.layers if n not in consumed)

    def forward(self, inputs: dict[str, np.ndarray], upto: str | None = None) -> Cache:
        """Evaluate every layer (or stop after ``upto``) on a batch."""
        acts: dict[str, np.ndarray] = {}
        for name, size in self.input_sizes.items():
            if name not in inputs:
                continue
            x = np.atleast_2d(np.asarray(inputs[name], dtype=np.float64))
            if x.shape[1] != size:
                raise ConfigError(f"input {name!r} has width {x.shape[1]}, expected {size}")
            acts[name] = x
        layer_in: dict[str, np.ndarray] = {}
        for name, layer in self.layers.items():
            srcs = self.sources[name]
            missing = [s for s in srcs if s not in acts]
            if missing:
                raise ConfigError(f"layer {name!r} is missing input(s) {missing}")
            x = acts[srcs[0]] if len(srcs) == 1 else np.concatenate([acts[s] for s in srcs], axis=1)
            layer_in[name] = x
            acts[name] = layer.activate(x)
            if name == upto:
                break
        return Cache(layer_in, acts)

    def backward(self, cache: Cache, head_grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Gradients for every parameter reached from the given heads.

        ``head_grads`` maps a layer name to dLoss/dActivation for that layer.
        Gradients arriving at a layer from several consumers are summed.
        Returns ``{"<layer>.weights": dW, "<layer>.biases": db}``.
        """
        pending: dict[str, np.ndarray] = {}
        for name, g in head_grads.items():
            if name not in cache.activations or name not in self.layers:
                raise ConfigError(f"no cached activation for head {name!r}")
            pending[name] = np.atleast_2d(g).astype(np.float64, copy=True)
        grads: dict[str, np.ndarray] = {}
        for name in reversed(list(self.layers)):
            da = pending.pop(name, None)
            if da is None:
                continue
            if name not in cache.inputs:
                raise ConfigError(f"layer {name!r} missing from forward cache")
            layer = self.layers[name]
            dz = _preactivation_grad(layer, cache.activations[name], da)
            grads[f"{name}.weights"] = dz.T @ cache.inputs[name]
            grads[f"{name}.biases"] = dz.sum(axis=0)
            srcs = self.sources[name]
            if all(s in self.input_sizes for s in srcs):
                continue
            dx = dz @ layer.weights
            offset = 0
            for s in srcs:
                w = self._width(s)
                if s in self.layers:
                    part = dx[:, offset:offset + w]
                    pending[s] = pending[s] + part if s in pending else part
                offset += w
        return grads

    def params(self) -> dict[str, np.ndarray]:
        """Live parameter arrays keyed like :meth:`backward` output."""
        out = {}
        for name, layer in self.layers.items():
            out[f"{name}.weights"] = layer.weights
            out[f"{name}.biases"] = layer.biases
        return out

    def copy(self) -> "Network":
        return Network(self.input_sizes, {k: v.copy() for k, v in self.layers.items()}, self.sources)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    Only keys present in ``grads`` move; the step counter is shared.
    """
    if lr < 0:
        raise ConfigError(f"learning rate must be non-negative, got {lr}")
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {key} at Adam step {state.step_count + 1}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for key, g in grads.items():
        p = params[key]
        if p.shape != g.shape:
            raise ConfigError(f"gradient shape {g.shape} does not match {key} {p.shape}")
        m = state.first_moment.get(key)
        if m is None:
            m = state.first_moment[key] = np.zeros_like(p)
            state.second_moment[key] = np.zeros_like(p)
        v = state.second_moment[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
