"""Greedy layer-wise unsupervised pre-training (RBM or autoencoder)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from subitizer.errors import ConfigError
from subitizer.nn import AdamState, DenseLayer, Network, adam_step, loss_mse, mse_grad

PRETRAIN_MODES = ("rbm", "autoencoder", "none")
DEFAULT_PRETRAIN_ITERATIONS = 1500


@dataclass
class PretrainSchedule:
    mode: str = "autoencoder"
    learning_rate: float = 0.02
    iterations: int = DEFAULT_PRETRAIN_ITERATIONS

    def __post_init__(self) -> None:
        if self.mode not in PRETRAIN_MODES:
            raise ConfigError(f"unknown pretrain mode {self.mode!r}; expected one of {PRETRAIN_MODES}")
        if self.mode != "none" and self.iterations < 0:
            raise ConfigError("pretrain iterations must be >= 0")


@dataclass
class RbmLayer:
    weights: np.ndarray  # [hidden, visible]
    visible_bias: np.ndarray
    hidden_bias: np.ndarray
    updates: int = 0

    @classmethod
    def from_dense(cls, layer: DenseLayer) -> "RbmLayer":
        return cls(layer.weights.copy(), np.zeros(layer.fan_in), layer.biases.copy())

    def hidden_probs(self, v: np.ndarray) -> np.ndarray:
        return expit(v @ self.weights.T + self.hidden_bias)

    def visible_probs(self, h: np.ndarray) -> np.ndarray:
        return expit(h @ self.weights + self.visible_bias)

    def encoder(self) -> DenseLayer:
        return DenseLayer(self.weights.copy(), self.hidden_bias.copy())

    def decoder(self) -> DenseLayer:
        return DenseLayer(self.weights.T.copy(), self.visible_bias.copy())

    def reconstruction_error(self, v: np.ndarray) -> float:
        return loss_mse(self.visible_probs(self.hidden_probs(v)), v)


def rbm_cd1_update(layer: RbmLayer, visible: np.ndarray, lr: float,
                   rng: np.random.Generator) -> RbmLayer:
    """One CD-1 step on a batch; returns a new layer.

    Hidden states driving the reconstruction are binary samples; the
    reconstruction and both correlation terms use probabilities.
    """
    if lr <= 0:
        raise ConfigError(f"RBM learning rate must be positive, got {lr}")
    v0 = np.atleast_2d(visible)
    h0 = layer.hidden_probs(v0)
    h_sample = (rng.random(h0.shape) < h0).astype(np.float64)
    v1 = layer.visible_probs(h_sample)
    h1 = layer.hidden_probs(v1)
    n = v0.shape[0]
    dw = (h0.T @ v0 - h1.T @ v1) / n
    dvb = (v0 - v1).sum(axis=0) / n
    dhb = (h0 - h1).sum(axis=0) / n
    return RbmLayer(layer.weights + lr * dw, layer.visible_bias + lr * dvb,
                    layer.hidden_bias + lr * dhb, layer.updates + 1)


@dataclass
class AutoencoderLayer:
    """Untied sigmoid autoencoder trained with its own Adam state."""

    encoder: DenseLayer
    decoder: DenseLayer
    adam: AdamState = field(default_factory=AdamState)
    updates: int = 0

    def __post_init__(self) -> None:
        if self.decoder.fan_out != self.encoder.fan_in or self.decoder.fan_in != self.encoder.fan_out:
            raise ConfigError(
                f"decoder {self.decoder.weights.shape} does not mirror encoder {self.encoder.weights.shape}"
            )
        self.net = Network({"x": self.encoder.fan_in},
                           {"encoder": self.encoder, "decoder": self.decoder},
                           {"encoder": ("x",), "decoder": ("encoder",)})

    @classmethod
    def init(cls, encoder: DenseLayer, rng: np.random.Generator) -> "AutoencoderLayer":
        return cls(encoder, DenseLayer.init(encoder.fan_out, encoder.fan_in, rng))

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        return self.decoder.activate(self.encoder.activate(x))

    def reconstruction_error(self, x: np.ndarray) -> float:
        return loss_mse(self.reconstruct(x), np.atleast_2d(x))

    def gradients(self, x: np.ndarray) -> dict[str, np.ndarray]:
        x = np.atleast_2d(x)
        cache = self.net.forward({"x": x})
        recon = cache.activations["decoder"]
        return self.net.backward(cache, {"decoder": mse_grad(recon, x)})


def autoencoder_layer_update(layer: AutoencoderLayer, batch: np.ndarray, lr: float) -> AutoencoderLayer:
    """One Adam step on reconstruction MSE (in place; returns ``layer``)."""
    adam_step(layer.net.params(), layer.gradients(batch), layer.adam, lr)
    layer.updates += 1
    return layer


@dataclass
class PretrainedStack:
    """Encoders ready for the supervised net plus the generative parts that trained them."""

    encoders: list[DenseLayer]
    trainers: list[AutoencoderLayer | RbmLayer | None]

    def encode(self, x: np.ndarray) -> np.ndarray:
        for layer in self.encoders:
            x = layer.activate(x)
        return x

    def decoders(self) -> list[DenseLayer | None]:
        out = []
        for t in self.trainers:
            if isinstance(t, AutoencoderLayer):
                out.append(t.decoder)
            elif isinstance(t, RbmLayer):
                out.append(t.decoder())
            else:
                out.append(None)
        return out


def train_layer(encoder: DenseLayer, next_input: Callable[[], np.ndarray],
                schedule: PretrainSchedule, rng: np.random.Generator):
    """Pre-train one layer for ``schedule.iterations`` minibatches.

    ``encoder`` is overwritten with the trained encoder weights; the
    trainer object (autoencoder or RBM) is returned.
    """
    if schedule.mode == "none":
        return None
    if schedule.mode == "autoencoder":
        ae = AutoencoderLayer.init(encoder, rng)
        for _ in range(schedule.iterations):
            autoencoder_layer_update(ae, next_input(), schedule.learning_rate)
        return ae
    rbm = RbmLayer.from_dense(encoder)
    for _ in range(schedule.iterations):
        rbm = rbm_cd1_update(rbm, next_input(), schedule.learning_rate, rng)
    encoder.weights[...] = rbm.weights
    encoder.biases[...] = rbm.hidden_bias
    return rbm


def greedy_pretrain(widths: list[int], next_batch: Callable[[], np.ndarray],
                    schedule: PretrainSchedule, rng: np.random.Generator) -> PretrainedStack:
    """Initialise a sigmoid stack ``widths[0] -> widths[1] -> ...`` and pre-train it greedily.

    Layer ``k`` sees fresh batches passed deterministically through the
    already-trained layers below it.
    """
    if len(widths) < 2:
        raise ConfigError("a stack needs an input width and at least one layer")
    encoders = [DenseLayer.init(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]
    trainers: list = []
    for k, enc in enumerate(encoders):
        below = encoders[:k]

        def next_input(below=below):
            x = next_batch()
            for layer in below:
                x = layer.activate(x)
            return x

        trainers.append(train_layer(enc, next_input, schedule, rng))
    return PretrainedStack(encoders, trainers)


def pretrain_association_joint(next_batch: Callable[[], tuple[np.ndarray, np.ndarray]],
                               right_targets: np.ndarray | None, left_targets: np.ndarray | None,
                               encoder: DenseLayer, schedule: PretrainSchedule,
                               rng: np.random.Generator) -> AutoencoderLayer | None:
    """Pre-train the association layer on ``[visual code | right target | left target]``.

    ``next_batch`` yields ``(visual_encoded, numerosities)``; the hand
    targets are ``[9, 20]`` tables indexed by numerosity - 1.
    """
    if right_targets is None or left_targets is None:
        raise ConfigError("joint association pre-training needs right and left hand targets")
    hand_width = right_targets.shape[1] + left_targets.shape[1]

    def next_input():
        visual, numbers = next_batch()
        if visual.shape[1] + hand_width != encoder.fan_in:
            raise ConfigError(
                f"association fan_in {encoder.fan_in} != visual {visual.shape[1]} + hands {hand_width}"
            )
        return np.concatenate([visual, right_targets[numbers - 1], left_targets[numbers - 1]], axis=1)

    sched = PretrainSchedule("autoencoder", schedule.learning_rate, schedule.iterations)
    return train_layer(encoder, next_input, sched, rng)
