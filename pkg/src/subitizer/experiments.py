"""Training loops, evaluation metrics, sweeps and multi-seed replication."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from subitizer import embodiment as emb
from subitizer.errors import ConfigError, DivergenceError
from subitizer.models import (
    TrainedModel,
    Widths,
    build_baseline,
    build_extended,
    pretrain_rates,
)
from subitizer.nn import adam_step, cross_entropy_grad, make_rng, mse_grad

ITERATIONS_PER_EPOCH = emb.BATCHES_PER_EPOCH
REGIMES = ("enumeration", "reconstruction_first", "parallel")


@dataclass(frozen=True)
class LrSchedule:
    """Learning rate as a function of iteration ``x``.

    ``tanh_decay`` is ``base * (1 - tanh(6x/span - 3)) / 2``: ``base/2`` at
    ``x = span/2`` and close to zero by ``x = span``.
    """

    kind: str = "constant"
    base: float = 0.01
    span: float = 600.0

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "tanh_decay"):
            raise ConfigError(f"unknown lr schedule {self.kind!r}")

    def at(self, x: float) -> float:
        if self.kind == "constant":
            return self.base
        return self.base * (1.0 - math.tanh(6.0 * x / self.span - 3.0)) / 2.0


@dataclass
class MetricsRow:
    iteration: int
    epoch: float
    overall_accuracy: float
    per_numerosity_accuracy: np.ndarray
    response_mean: np.ndarray
    response_std: np.ndarray
    counts: np.ndarray

    @property
    def variation_coefficient(self) -> np.ndarray:
        return self.response_std / self.response_mean


def responses(probs: np.ndarray) -> np.ndarray:
    """Network answer per row: argmax + 1, lowest index wins ties."""
    return np.argmax(probs, axis=1) + 1


def accuracy(model: TrainedModel, test_set: emb.Batch) -> float:
    if len(test_set) == 0:
        raise ConfigError("accuracy needs a non-empty test set")
    return float(np.mean(responses(model.predict(test_set)) == test_set.targets))


def variation_coefficient(groups) -> np.ndarray:
    """Population std / mean of the responses in each group."""
    out = []
    for g in groups:
        g = np.asarray(g, dtype=np.float64)
        if g.size == 0:
            raise ConfigError("variation coefficient needs a non-empty response group")
        out.append(g.std() / g.mean())
    return np.array(out)


def metrics_from_responses(resp: np.ndarray, targets: np.ndarray, iteration: int) -> MetricsRow:
    per_acc, means, stds, counts = [], [], [], []
    for n in range(1, emb.MAX_N + 1):
        r = resp[targets == n]
        counts.append(r.size)
        if r.size:
            per_acc.append(np.mean(r == n))
            means.append(r.mean())
            stds.append(r.std())
        else:
            per_acc.append(np.nan)
            means.append(np.nan)
            stds.append(np.nan)
    return MetricsRow(iteration, iteration / ITERATIONS_PER_EPOCH, float(np.mean(resp == targets)),
                      np.array(per_acc), np.array(means), np.array(stds), np.array(counts))


def evaluate(model: TrainedModel, test_set: emb.Batch, iteration: int = 0) -> MetricsRow:
    return metrics_from_responses(responses(model.predict(test_set)), test_set.targets, iteration)


def evaluation_set(seed: int, index: int, table: emb.MotorTable) -> emb.Batch:
    """The ``index``-th evaluation set of run ``seed``; fresh object positions each time."""
    return emb.gen_test_set(make_rng(seed, "test", index), table)


def epochs_to_threshold(series: list[MetricsRow], threshold: float = 0.99) -> float | None:
    """Epoch of the first evaluation at or above ``threshold``; ``None`` if never reached."""
    for row in series:
        if row.overall_accuracy >= threshold:
            return row.epoch
    return None


@dataclass
class ExperimentPreset:
    name: str
    variant: str = "baseline"           # baseline | extended
    modules: str = "both"               # baseline only
    pretrain_mode: str = "autoencoder"  # baseline only
    association_init: str = "full_pretrain"  # extended only
    regime: str = "parallel"            # extended only
    distribution: str = "uniform"
    epochs: float = 25.0
    eval_every: int = ITERATIONS_PER_EPOCH
    learning_rate: float | None = None  # None: the table value for modules/mode
    pretrain_lr: float | None = None
    pretrain_iterations: int = 1500
    motor_lr: LrSchedule = LrSchedule("tanh_decay", 0.01, 600.0)
    motor_first_epochs: float = 6.0
    motor_first_lr: float = 0.03
    widths: Widths = Widths()
    seeds: int = 20
    snapshot_epoch: float | None = None
    stop_at: float | None = None        # stop once accuracy reaches this
    figure: str = ""

    def __post_init__(self) -> None:
        if self.variant not in ("baseline", "extended"):
            raise ConfigError(f"variant must be baseline or extended, got {self.variant!r}")
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.epochs <= 0 or self.eval_every <= 0:
            raise ConfigError("epochs and eval_every must be positive")
        emb.NumberDistribution.named(self.distribution)
        if self.variant == "baseline":
            pretrain_rates(self.modules, self.pretrain_mode)

    @property
    def iterations(self) -> int:
        return int(round(self.epochs * ITERATIONS_PER_EPOCH))

    def final_lr(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        if self.variant == "extended":
            return 0.003
        return pretrain_rates(self.modules, self.pretrain_mode)[1]


@dataclass
class RunResult:
    preset: str
    seed: int
    series: list[MetricsRow]
    model: TrainedModel | None = None
    aborted: str | None = None

    @property
    def final(self) -> MetricsRow:
        return self.series[-1]

    def at_epoch(self, epoch: float) -> MetricsRow:
        """Last evaluation at or before ``epoch``."""
        rows = [r for r in self.series if r.epoch <= epoch + 1e-9]
        return rows[-1]


def build_model(preset: ExperimentPreset, seed: int, table: emb.MotorTable) -> TrainedModel:
    if preset.variant == "baseline":
        model = build_baseline(preset.modules, preset.widths, preset.pretrain_mode, seed, table,
                               preset.distribution, preset.pretrain_lr, preset.pretrain_iterations)
    else:
        model = build_extended(preset.widths, preset.association_init, seed, table,
                               preset.distribution,
                               0.04 if preset.pretrain_lr is None else preset.pretrain_lr,
                               preset.pretrain_iterations)
    model.provenance.update(preset=preset.name, final_lr=preset.final_lr())
    return model


class _Evaluator:
    def __init__(self, model, preset, seed, table):
        self.model, self.preset, self.seed, self.table = model, preset, seed, table
        self.series: list[MetricsRow] = []

    def __call__(self, iteration: int) -> MetricsRow:
        index = len(self.series)
        row = evaluate(self.model, evaluation_set(self.seed, index, self.table), iteration)
        self.series.append(row)
        self.model.provenance["final_eval_index"] = index
        self.model.provenance["iterations_trained"] = iteration
        return row

    def done(self) -> bool:
        stop = self.preset.stop_at
        return stop is not None and bool(self.series) and self.series[-1].overall_accuracy >= stop


def _train_loop(model, preset, seed, table, step) -> RunResult:
    """Shared driver: fresh training epochs, evaluation every ``eval_every`` iterations."""
    dist = emb.NumberDistribution.named(preset.distribution)
    data_rng = make_rng(seed, "train-data")
    ev = _Evaluator(model, preset, seed, table)
    ev(0)
    it = 0
    try:
        while it < preset.iterations and not ev.done():
            for batch in emb.gen_epoch(dist, data_rng, table).minibatches():
                step(batch, it)
                it += 1
                if it % preset.eval_every == 0 or it == preset.iterations:
                    ev(it)
                    if ev.done():
                        break
                if it >= preset.iterations:
                    break
    except DivergenceError as exc:
        return RunResult(preset.name, seed, ev.series, model, aborted=str(exc))
    return RunResult(preset.name, seed, ev.series, model)


def train_baseline(preset: ExperimentPreset, seed: int, table: emb.MotorTable | None = None,
                   model: TrainedModel | None = None) -> RunResult:
    """Supervised training of the competitive output with one Adam optimizer."""
    table = emb.default_motor_table() if table is None else table
    model = build_model(preset, seed, table) if model is None else model
    net = model.network
    params = net.params()
    opt = model.optimizer("number")
    lr = preset.final_lr()

    def step(batch, it):
        cache = net.forward(batch.inputs())
        g = cross_entropy_grad(cache.activations["competitive"], batch.onehot)
        adam_step(params, net.backward(cache, {"competitive": g}), opt, lr)

    return _train_loop(model, preset, seed, table, step)


def motor_grads(model: TrainedModel, cache, targets: np.ndarray) -> dict:
    right_t, left_t = model.hand_targets.for_numbers(targets)
    acts = cache.activations
    return model.network.backward(cache, {
        "right_hand": mse_grad(acts["right_hand"], right_t),
        "left_hand": mse_grad(acts["left_hand"], left_t),
    })


def train_extended(preset: ExperimentPreset, seed: int, table: emb.MotorTable | None = None,
                   model: TrainedModel | None = None) -> RunResult:
    """Supervised training of the extended net under one of three regimes.

    * ``enumeration``: number output only.
    * ``reconstruction_first``: ``motor_first_epochs`` of hand-target
      regression at ``motor_first_lr``, then number output only.  Epochs in
      the returned series count from the start of the number phase.
    * ``parallel``: both losses every minibatch, each with its own Adam
      state; the hand loss uses the ``motor_lr`` schedule.
    """
    table = emb.default_motor_table() if table is None else table
    model = build_model(preset, seed, table) if model is None else model
    net = model.network
    params = net.params()
    num_opt = model.optimizer("number")
    lr = preset.final_lr()

    if preset.regime == "reconstruction_first":
        motor_opt = model.optimizer("motor")
        dist = emb.NumberDistribution.named(preset.distribution)
        motor_rng = make_rng(seed, "motor-phase-data")
        n_motor = int(round(preset.motor_first_epochs * ITERATIONS_PER_EPOCH))
        done = 0
        try:
            while done < n_motor:
                for batch in emb.gen_epoch(dist, motor_rng, table).minibatches():
                    cache = net.forward({"visual": batch.scenes}, upto="left_hand")
                    adam_step(params, motor_grads(model, cache, batch.targets), motor_opt,
                              preset.motor_first_lr)
                    done += 1
                    if done >= n_motor:
                        break
        except DivergenceError as exc:
            return RunResult(preset.name, seed, [], model, aborted=str(exc))
        model.provenance["motor_phase_updates"] = done

    parallel = preset.regime == "parallel"
    motor_opt = model.optimizer("motor") if parallel else None

    def step(batch, it):
        cache = net.forward({"visual": batch.scenes})
        g = cross_entropy_grad(cache.activations["competitive"], batch.onehot)
        num_grads = net.backward(cache, {"competitive": g})
        if parallel:
            m_grads = motor_grads(model, cache, batch.targets)
            adam_step(params, num_grads, num_opt, lr)
            adam_step(params, m_grads, motor_opt, preset.motor_lr.at(it))
        else:
            adam_step(params, num_grads, num_opt, lr)

    return _train_loop(model, preset, seed, table, step)


def run_preset(preset: ExperimentPreset, seed: int, table: emb.MotorTable | None = None) -> RunResult:
    if preset.variant == "baseline":
        return train_baseline(preset, seed, table)
    return train_extended(preset, seed, table)


def _run_job(args):
    preset, seed, table, keep_model = args
    result = run_preset(preset, seed, table)
    if not keep_model:
        result.model = None
    return result


def run_many(jobs: list[tuple[ExperimentPreset, int]], table: emb.MotorTable | None = None,
             workers: int = 1, keep_models: bool = False) -> list[RunResult]:
    """Run independent (preset, seed) jobs; results come back in job order."""
    table = emb.default_motor_table() if table is None else table
    payload = [(p, s, table, keep_models) for p, s in jobs]
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(a) for a in payload]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, payload))


@dataclass
class ReplicateSummary:
    preset: ExperimentPreset
    runs: list[RunResult]
    mean_epoch: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mean_accuracy: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mean_per_numerosity: np.ndarray = field(default_factory=lambda: np.zeros((0, 9)))
    mean_vc: np.ndarray | None = None
    aborted: list[RunResult] = field(default_factory=list)

    @property
    def completed(self) -> list[RunResult]:
        return [r for r in self.runs if r.aborted is None]


def aggregate(preset: ExperimentPreset, runs: list[RunResult]) -> ReplicateSummary:
    """Pointwise means over completed replicates, truncated to the shortest series."""
    ok = [r for r in runs if r.aborted is None]
    summary = ReplicateSummary(preset, runs, aborted=[r for r in runs if r.aborted is not None])
    if not ok:
        return summary
    length = min(len(r.series) for r in ok)
    summary.mean_epoch = np.array([ok[0].series[i].epoch for i in range(length)])
    summary.mean_accuracy = np.mean([[r.series[i].overall_accuracy for i in range(length)]
                                     for r in ok], axis=0)
    summary.mean_per_numerosity = np.mean(
        [[r.series[i].per_numerosity_accuracy for i in range(length)] for r in ok], axis=0)
    snap = preset.snapshot_epoch if preset.snapshot_epoch is not None else preset.epochs
    summary.mean_vc = np.mean([r.at_epoch(snap).variation_coefficient for r in ok], axis=0)
    return summary


def replicate_seeds(base_seed: int, n_seeds: int) -> list[int]:
    return [base_seed + i for i in range(n_seeds)]


def run_replicates(preset: ExperimentPreset, n_seeds: int, base_seed: int = 0,
                   table: emb.MotorTable | None = None, workers: int = 1) -> ReplicateSummary:
    if n_seeds < 1:
        raise ConfigError("need at least one replicate")
    runs = run_many([(preset, s) for s in replicate_seeds(base_seed, n_seeds)], table, workers)
    return aggregate(preset, runs)


@dataclass
class SweepPoint:
    mode: str
    lr: float
    mean_epochs: float | None
    censored: int
    epochs: list[float | None]


def lr_sweep(preset: ExperimentPreset, lrs: list[float], n_seeds: int = 10, base_seed: int = 0,
             modes: tuple[str, ...] = ("rbm", "autoencoder", "none"), threshold: float = 0.99,
             table: emb.MotorTable | None = None, workers: int = 1) -> list[SweepPoint]:
    """Mean epochs-to-threshold per (pre-training mode, learning rate).

    Runs that never reach the threshold are censored: counted, not averaged.
    """
    if not lrs:
        raise ConfigError("lr_sweep needs at least one learning rate")
    jobs, keys = [], []
    for mode in modes:
        for lr in lrs:
            p = replace(preset, pretrain_mode=mode, learning_rate=lr, stop_at=threshold)
            for s in replicate_seeds(base_seed, n_seeds):
                jobs.append((p, s))
                keys.append((mode, lr))
    results = run_many(jobs, table, workers)
    points = []
    for mode in modes:
        for lr in lrs:
            eps = [epochs_to_threshold(r.series, threshold) if r.aborted is None else None
                   for r, k in zip(results, keys) if k == (mode, lr)]
            reached = [e for e in eps if e is not None]
            points.append(SweepPoint(mode, lr, float(np.mean(reached)) if reached else None,
                                     len(eps) - len(reached), eps))
    return points
