"""The baseline (visual/motor inputs) and extended (motor-replicating) networks."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from subitizer import embodiment as emb
from subitizer.errors import ConfigError, DataError
from subitizer.nn import AdamState, DenseLayer, Network, make_rng
from subitizer.pretrain import (
    AutoencoderLayer,
    PretrainSchedule,
    pretrain_association_joint,
    train_layer,
)

HAND_WIDTH = 20
N_CLASSES = emb.MAX_N
MODULES = ("visual", "motor", "both")
ASSOCIATION_INITS = ("visual_part_only", "full_pretrain", "weight_copy", "none")
CHECKPOINT_HEADER = "subitizer-ckpt v1"

# Pre-training and supervised learning rates per module configuration and
# pre-training mode.
LEARNING_RATES = {
    ("visual", "rbm"): (0.3, 0.004),
    ("visual", "autoencoder"): (0.02, 0.004),
    ("visual", "none"): (None, 0.01),
    ("motor", "rbm"): (0.4, 0.2),
    ("motor", "autoencoder"): (0.08, 0.13),
    ("motor", "none"): (None, 0.03),
    ("both", "rbm"): (0.4, 0.1),
    ("both", "autoencoder"): (0.04, 0.11),
    ("both", "none"): (None, 0.02),
}


@dataclass(frozen=True)
class Widths:
    visual: int = 60
    association: int = 80
    visuomotor: int = 80

    def __post_init__(self) -> None:
        for name, w in asdict(self).items():
            if int(w) <= 0:
                raise ConfigError(f"width {name} must be positive, got {w}")


@dataclass
class HandTargets:
    """Per-numerosity internal hand codes, rows indexed by n - 1."""

    right: np.ndarray  # [9, 20]
    left: np.ndarray

    def for_numbers(self, numbers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.right[numbers - 1], self.left[numbers - 1]


@dataclass
class TrainedModel:
    network: Network
    variant: str
    modules: str
    widths: Widths
    provenance: dict = field(default_factory=dict)
    optimizers: dict[str, AdamState] = field(default_factory=dict)
    decoders: dict[str, DenseLayer] = field(default_factory=dict)
    hand_targets: HandTargets | None = None

    def optimizer(self, head: str) -> AdamState:
        return self.optimizers.setdefault(head, AdamState())

    def predict(self, batch: emb.Batch) -> np.ndarray:
        """Competitive-layer probabilities for every row of ``batch``."""
        if self.variant == "extended":
            return forward_extended(self, batch.scenes)[0]
        return forward_baseline(self, batch)


def pretrain_rates(modules: str, mode: str) -> tuple[float | None, float]:
    try:
        return LEARNING_RATES[(modules, mode)]
    except KeyError:
        raise ConfigError(f"no learning rates for modules={modules!r} mode={mode!r}") from None


def _uses_visual(modules: str) -> bool:
    return modules in ("visual", "both")


def _uses_motor(modules: str) -> bool:
    return modules in ("motor", "both")


def baseline_network(modules: str, widths: Widths, rng: np.random.Generator) -> Network:
    if modules not in MODULES:
        raise ConfigError(f"modules must be one of {MODULES}, got {modules!r}")
    inputs: dict[str, int] = {}
    layers: dict[str, DenseLayer] = {}
    sources: dict[str, tuple[str, ...]] = {}
    assoc_src: list[str] = []
    if _uses_visual(modules):
        inputs["visual"] = emb.N_LOCATIONS
        layers["visual_hidden"] = DenseLayer.init(emb.N_LOCATIONS, widths.visual, rng)
        sources["visual_hidden"] = ("visual",)
        assoc_src.append("visual_hidden")
    if _uses_motor(modules):
        for side in ("right", "left"):
            inputs[f"{side}_motor"] = emb.N_MOTOR
            layers[f"{side}_hand"] = DenseLayer.init(emb.N_MOTOR, HAND_WIDTH, rng)
            sources[f"{side}_hand"] = (f"{side}_motor",)
            assoc_src.append(f"{side}_hand")
    assoc_in = sum(layers[s].fan_out for s in assoc_src)
    layers["association"] = DenseLayer.init(assoc_in, widths.association, rng)
    sources["association"] = tuple(assoc_src)
    layers["competitive"] = DenseLayer.init(widths.association, N_CLASSES, rng, "softmax")
    sources["competitive"] = ("association",)
    return Network(inputs, layers, sources)


def extended_network(widths: Widths, rng: np.random.Generator) -> Network:
    layers = {
        "visual_hidden": DenseLayer.init(emb.N_LOCATIONS, widths.visual, rng),
        "visuomotor": DenseLayer.init(widths.visual, widths.visuomotor, rng),
        "right_hand": DenseLayer.init(widths.visuomotor, HAND_WIDTH, rng),
        "left_hand": DenseLayer.init(widths.visuomotor, HAND_WIDTH, rng),
        "association": DenseLayer.init(widths.visual + 2 * HAND_WIDTH, widths.association, rng),
        "competitive": DenseLayer.init(widths.association, N_CLASSES, rng, "softmax"),
    }
    sources = {
        "visual_hidden": ("visual",),
        "visuomotor": ("visual_hidden",),
        "right_hand": ("visuomotor",),
        "left_hand": ("visuomotor",),
        "association": ("visual_hidden", "right_hand", "left_hand"),
        "competitive": ("association",),
    }
    return Network({"visual": emb.N_LOCATIONS}, layers, sources)


def sample_stream(dist: emb.NumberDistribution, rng: np.random.Generator, table: emb.MotorTable):
    """Endless minibatches of 9, generated an epoch at a time."""
    while True:
        yield from emb.gen_epoch(dist, rng, table).minibatches()


def build_baseline(modules: str, widths: Widths, pretrain_mode: str, seed: int,
                   table: emb.MotorTable | None = None, distribution: str = "uniform",
                   pretrain_lr: float | None = None,
                   pretrain_iterations: int = 1500) -> TrainedModel:
    """Baseline net with its requested branches greedily pre-trained.

    Branch order is visual, right hand, left hand, then the association
    layer on the concatenated branch encodings.  The competitive layer is
    never pre-trained.
    """
    table = emb.default_motor_table() if table is None else table
    default_pre, final_lr = pretrain_rates(modules, pretrain_mode)
    lr = default_pre if pretrain_lr is None else pretrain_lr
    net = baseline_network(modules, widths, make_rng(seed, "baseline-init"))
    provenance = {
        "variant": "baseline", "modules": modules, "pretrain_mode": pretrain_mode,
        "pretrain_lr": lr, "final_lr": final_lr, "seed": seed,
        "distribution": distribution, "pretrain_iterations": pretrain_iterations,
        "widths": asdict(widths),
    }
    model = TrainedModel(net, "baseline", modules, widths, provenance)
    if pretrain_mode == "none":
        return model
    schedule = PretrainSchedule(pretrain_mode, lr, pretrain_iterations)
    sampler = make_rng(seed, "pretrain-sampling")
    stream = sample_stream(emb.NumberDistribution.named(distribution),
                           make_rng(seed, "pretrain-data"), table)
    layers = net.layers
    branch_inputs = [("visual_hidden", "scenes"), ("right_hand", "right"), ("left_hand", "left")]
    for name, attr in branch_inputs:
        if name in layers:
            train_layer(layers[name], lambda attr=attr: getattr(next(stream), attr), schedule, sampler)

    assoc_src = net.sources["association"]

    def assoc_input():
        b = next(stream)
        return np.concatenate([layers[s].activate(getattr(b, dict(branch_inputs)[s]))
                               for s in assoc_src], axis=1)

    trainer = train_layer(layers["association"], assoc_input, schedule, sampler)
    if isinstance(trainer, AutoencoderLayer):
        model.decoders["association"] = trainer.decoder
    elif trainer is not None:
        model.decoders["association"] = trainer.decoder()
    return model


def forward_baseline(model: TrainedModel, batch: emb.Batch) -> np.ndarray:
    cache = model.network.forward(batch.inputs())
    return cache.activations["competitive"]


def extract_hand_targets(baseline: TrainedModel, table: emb.MotorTable | None = None) -> HandTargets:
    """Hand-layer encodings of every motor code from an autoencoder-pre-trained baseline."""
    table = emb.default_motor_table() if table is None else table
    prov = baseline.provenance
    if prov.get("pretrain_mode") != "autoencoder" or not _uses_motor(baseline.modules):
        raise ConfigError("hand targets need a baseline whose motor module was autoencoder-pre-trained")
    layers = baseline.network.layers
    return HandTargets(layers["right_hand"].activate(table.right),
                       layers["left_hand"].activate(table.left))


def _copy_into(dst: DenseLayer, src: DenseLayer) -> None:
    if dst.weights.shape != src.weights.shape or dst.biases.shape != src.biases.shape:
        raise ConfigError(
            f"cannot copy weights {src.weights.shape} into layer of shape {dst.weights.shape}"
        )
    dst.weights[...] = src.weights
    dst.biases[...] = src.biases


def build_extended(widths: Widths, association_init: str, seed: int,
                   table: emb.MotorTable | None = None, distribution: str = "uniform",
                   pretrain_lr: float = 0.04, pretrain_iterations: int = 1500) -> TrainedModel:
    """Extended net, initialised according to ``association_init``.

    * ``none``: every layer random.
    * ``visual_part_only``: visual layer and the visual columns of the
      association layer come from a pre-trained visual-only baseline.
    * ``full_pretrain``: as above for the visual layer; the association
      layer is pre-trained on [visual code | right target | left target].
    * ``weight_copy``: visual and association layers from a pre-trained
      two-module baseline; the visuo-motor layer takes that association
      encoder's visual columns and the hand layers take its decoder rows.

    Hand targets always come from the two-module baseline with the same seed.
    """
    if association_init not in ASSOCIATION_INITS:
        raise ConfigError(f"association_init must be one of {ASSOCIATION_INITS}, got {association_init!r}")
    table = emb.default_motor_table() if table is None else table
    net = extended_network(widths, make_rng(seed, "extended-init"))
    both = build_baseline("both", widths, "autoencoder", seed, table, distribution,
                          pretrain_lr, pretrain_iterations)
    targets = extract_hand_targets(both, table)
    provenance = {
        "variant": "extended", "association_init": association_init, "seed": seed,
        "distribution": distribution, "pretrain_lr": pretrain_lr,
        "pretrain_iterations": pretrain_iterations, "widths": asdict(widths),
        "pretrain_mode": "none" if association_init == "none" else "autoencoder",
    }
    model = TrainedModel(net, "extended", "visual", widths, provenance, hand_targets=targets)
    layers = net.layers
    w_v = widths.visual

    if association_init in ("visual_part_only", "full_pretrain"):
        vis = build_baseline("visual", widths, "autoencoder", seed, table, distribution,
                             pretrain_lr, pretrain_iterations)
        _copy_into(layers["visual_hidden"], vis.network.layers["visual_hidden"])
        if association_init == "visual_part_only":
            src = vis.network.layers["association"]
            layers["association"].weights[:, :w_v] = src.weights
            layers["association"].biases[...] = src.biases
        else:
            stream = sample_stream(emb.NumberDistribution.named(distribution),
                                   make_rng(seed, "joint-pretrain-data"), table)
            vh = layers["visual_hidden"]

            def next_batch():
                b = next(stream)
                return vh.activate(b.scenes), b.targets

            ae = pretrain_association_joint(
                next_batch, targets.right, targets.left, layers["association"],
                PretrainSchedule("autoencoder", pretrain_lr, pretrain_iterations),
                make_rng(seed, "joint-pretrain-init"))
            model.decoders["association"] = ae.decoder
    elif association_init == "weight_copy":
        src_layers = both.network.layers
        decoder = both.decoders["association"]
        _copy_into(layers["visual_hidden"], src_layers["visual_hidden"])
        _copy_into(layers["association"], src_layers["association"])
        enc = src_layers["association"]
        _copy_into(layers["visuomotor"], DenseLayer(enc.weights[:, :w_v], enc.biases))
        _copy_into(layers["right_hand"], DenseLayer(decoder.weights[w_v:w_v + HAND_WIDTH],
                                                    decoder.biases[w_v:w_v + HAND_WIDTH]))
        _copy_into(layers["left_hand"], DenseLayer(decoder.weights[w_v + HAND_WIDTH:],
                                                   decoder.biases[w_v + HAND_WIDTH:]))
        model.decoders["association"] = decoder.copy()
    return model


def forward_extended(model: TrainedModel, scenes: np.ndarray):
    """``(number_probs, right_hand, left_hand)`` from one pass over ``scenes``."""
    acts = model.network.forward({"visual": scenes}).activations
    return acts["competitive"], acts["right_hand"], acts["left_hand"]


# -- checkpoints ------------------------------------------------------------

def _adam_to_dict(state: AdamState) -> dict:
    return {
        "beta1": state.beta1, "beta2": state.beta2, "epsilon": state.epsilon,
        "step_count": state.step_count,
        "first_moment": {k: v.tolist() for k, v in state.first_moment.items()},
        "second_moment": {k: v.tolist() for k, v in state.second_moment.items()},
    }


def _adam_from_dict(d: dict) -> AdamState:
    return AdamState(d["beta1"], d["beta2"], d["epsilon"], d["step_count"],
                     {k: np.array(v, dtype=np.float64) for k, v in d["first_moment"].items()},
                     {k: np.array(v, dtype=np.float64) for k, v in d["second_moment"].items()})


def _layer_to_dict(layer: DenseLayer) -> dict:
    return {"activation": layer.activation, "weights": layer.weights.tolist(),
            "biases": layer.biases.tolist()}


def _layer_from_dict(d: dict) -> DenseLayer:
    return DenseLayer(np.array(d["weights"], dtype=np.float64).reshape(len(d["biases"]), -1),
                      np.array(d["biases"], dtype=np.float64), d["activation"])


def checkpoint_text(model: TrainedModel) -> str:
    """Serialise to the versioned text format (JSON body, floats in repr form)."""
    net = model.network
    body = {
        "variant": model.variant,
        "modules": model.modules,
        "widths": asdict(model.widths),
        "inputs": net.input_sizes,
        "layers": [
            {"name": name, "sources": list(net.sources[name]), **_layer_to_dict(layer)}
            for name, layer in net.layers.items()
        ],
        "optimizers": {k: _adam_to_dict(v) for k, v in model.optimizers.items()},
        "decoders": {k: _layer_to_dict(v) for k, v in model.decoders.items()},
        "hand_targets": None if model.hand_targets is None else {
            "right": model.hand_targets.right.tolist(), "left": model.hand_targets.left.tolist()},
        "provenance": model.provenance,
    }
    return CHECKPOINT_HEADER + "\n" + json.dumps(body, indent=1) + "\n"


def parse_checkpoint(text: str) -> TrainedModel:
    header, _, rest = text.partition("\n")
    if header.strip() != CHECKPOINT_HEADER:
        raise DataError(f"not a checkpoint: expected header {CHECKPOINT_HEADER!r}, got {header[:40]!r}")
    try:
        body = json.loads(rest)
        layers = {d["name"]: _layer_from_dict(d) for d in body["layers"]}
        sources = {d["name"]: tuple(d["sources"]) for d in body["layers"]}
        net = Network(body["inputs"], layers, sources)
        ht = body["hand_targets"]
        return TrainedModel(
            net, body["variant"], body["modules"], Widths(**body["widths"]), body["provenance"],
            {k: _adam_from_dict(v) for k, v in body["optimizers"].items()},
            {k: _layer_from_dict(v) for k, v in body["decoders"].items()},
            None if ht is None else HandTargets(np.array(ht["right"]), np.array(ht["left"])),
        )
    except (ValueError, KeyError, TypeError, ConfigError) as exc:
        raise DataError(f"corrupt checkpoint: {exc}") from None


def save_checkpoint(model: TrainedModel, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(checkpoint_text(model), encoding="utf-8")
    return path


def load_checkpoint(path: str | Path) -> TrainedModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    return parse_checkpoint(text)
