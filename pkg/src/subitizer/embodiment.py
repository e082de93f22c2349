"""Inputs and targets: saliency scenes, finger-counting motor codes, number
distributions, minibatches and test sets."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from subitizer.errors import ConfigError, DataError

N_LOCATIONS = 20
N_MOTOR = 8
MAX_N = 9
BATCH_SIZE = 9
BATCHES_PER_EPOCH = 500
TEST_BATCHES = 500

# Unit layout of one hand's 8-vector.  Units 5 and 6 carry the glued
# ring/pinky joint twice.
FINGER_UNITS = {
    "thumb": (0, 1),
    "index": (2, 3),
    "middle": (4, 7),
    "ring_pinky": (5, 6),
}


@dataclass(frozen=True)
class MotorTable:
    right: np.ndarray  # [9, 8], row n-1 is numerosity n
    left: np.ndarray

    def __post_init__(self) -> None:
        for side in (self.right, self.left):
            if side.shape != (MAX_N, N_MOTOR):
                raise DataError(f"motor table must be {MAX_N}x{N_MOTOR} per hand, got {side.shape}")


@dataclass(frozen=True)
class MotorCode:
    right: np.ndarray
    left: np.ndarray


@dataclass(frozen=True)
class SaliencyScene:
    activations: np.ndarray
    numerosity: int


@dataclass(frozen=True)
class NumerositySample:
    scene: SaliencyScene
    motor: MotorCode
    target: int

    @property
    def target_onehot(self) -> np.ndarray:
        return onehot(np.array([self.target]))[0]


def hand_posture(open_fingers: int) -> np.ndarray:
    """8-unit code for a hand with ``open_fingers`` extended (0-5).

    Fingers open cumulatively thumb, index, middle, then the glued
    ring/pinky pair: half open at 4, fully open at 5.
    """
    if not 0 <= open_fingers <= 5:
        raise ConfigError(f"a hand shows 0-5 fingers, got {open_fingers}")
    code = np.zeros(N_MOTOR)
    for finger in ("thumb", "index", "middle")[:open_fingers]:
        code[list(FINGER_UNITS[finger])] = 1.0
    if open_fingers >= 4:
        code[list(FINGER_UNITS["ring_pinky"])] = 0.5 if open_fingers == 4 else 1.0
    return code


def synthesize_motor_table() -> MotorTable:
    right = np.array([hand_posture(min(n, 5)) for n in range(1, MAX_N + 1)])
    left = np.array([hand_posture(max(n - 5, 0)) for n in range(1, MAX_N + 1)])
    return MotorTable(right, left)


def format_motor_table(table: MotorTable) -> str:
    lines = ["# n  right[0..7]  left[0..7]"]
    for n in range(1, MAX_N + 1):
        vals = " ".join(f"{v:g}" for v in np.concatenate([table.right[n - 1], table.left[n - 1]]))
        lines.append(f"{n} {vals}")
    return "\n".join(lines) + "\n"


def parse_motor_table(text: str, source: str = "<motor table>") -> MotorTable:
    rows: dict[int, np.ndarray] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        where = f"{source}:{lineno}"
        if len(fields) != 1 + 2 * N_MOTOR:
            raise DataError(f"{where}: expected {1 + 2 * N_MOTOR} fields, got {len(fields)}")
        try:
            n = int(fields[0])
            values = np.array([float(f) for f in fields[1:]])
        except ValueError as exc:
            raise DataError(f"{where}: {exc}") from None
        if not 1 <= n <= MAX_N:
            raise DataError(f"{where}: numerosity {n} outside 1-{MAX_N}")
        if n in rows:
            raise DataError(f"{where}: duplicate entry for numerosity {n}")
        if not np.all((values >= 0.0) & (values <= 1.0)):
            raise DataError(f"{where}: values must lie in [0, 1]")
        rows[n] = values
    missing = [n for n in range(1, MAX_N + 1) if n not in rows]
    if missing:
        raise DataError(f"{source}: no entry for numerosities {missing}")
    stacked = np.array([rows[n] for n in range(1, MAX_N + 1)])
    return MotorTable(stacked[:, :N_MOTOR].copy(), stacked[:, N_MOTOR:].copy())


def load_motor_table(path: str | Path) -> MotorTable:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read motor table {path}: {exc}") from None
    return parse_motor_table(text, str(path))


def default_motor_table() -> MotorTable:
    text = resources.files("subitizer.resources").joinpath("motor_table.txt").read_text(encoding="utf-8")
    return parse_motor_table(text, "motor_table.txt")


def motor_code(n: int, table: MotorTable) -> MotorCode:
    _check_n(n)
    return MotorCode(table.right[n - 1].copy(), table.left[n - 1].copy())


@dataclass(frozen=True)
class NumberDistribution:
    kind: str
    probabilities: np.ndarray

    @classmethod
    def uniform(cls) -> "NumberDistribution":
        return cls("uniform", np.full(MAX_N, 1.0 / MAX_N))

    @classmethod
    def zipfian(cls, exponent: float = 2.0) -> "NumberDistribution":
        w = 1.0 / np.arange(1, MAX_N + 1) ** exponent
        return cls("zipfian", w / w.sum())

    @classmethod
    def named(cls, kind: str) -> "NumberDistribution":
        if kind == "uniform":
            return cls.uniform()
        if kind == "zipfian":
            return cls.zipfian()
        raise ConfigError(f"unknown distribution {kind!r} (expected uniform or zipfian)")


def sample_number(dist: NumberDistribution, rng: np.random.Generator) -> int:
    return int(rng.choice(MAX_N, p=dist.probabilities)) + 1


def _check_n(n) -> None:
    if np.any(np.asarray(n) < 1) or np.any(np.asarray(n) > MAX_N):
        raise ConfigError(f"numerosity must be in 1..{MAX_N}, got {n}")


def scenes_for(numbers: np.ndarray, rng: np.random.Generator, norm: str = "l1") -> np.ndarray:
    """One saliency map per entry of ``numbers``, locations drawn without replacement."""
    numbers = np.asarray(numbers)
    _check_n(numbers)
    ranks = rng.random((len(numbers), N_LOCATIONS)).argsort(axis=1).argsort(axis=1)
    active = ranks < numbers[:, None]
    if norm == "l1":
        scale = 1.0 / numbers
    elif norm == "l2":
        scale = 1.0 / np.sqrt(numbers)
    else:
        raise ConfigError(f"unknown scene normalization {norm!r}")
    return active * scale[:, None]


def gen_scene(n: int, rng: np.random.Generator, norm: str = "l1") -> SaliencyScene:
    return SaliencyScene(scenes_for(np.array([n]), rng, norm)[0], n)


def onehot(targets: np.ndarray) -> np.ndarray:
    out = np.zeros((len(targets), MAX_N))
    out[np.arange(len(targets)), np.asarray(targets) - 1] = 1.0
    return out


@dataclass
class Batch:
    """Row-aligned arrays for a set of samples (a minibatch, epoch or test set)."""

    scenes: np.ndarray
    right: np.ndarray
    left: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return len(self.targets)

    @property
    def onehot(self) -> np.ndarray:
        return onehot(self.targets)

    def inputs(self) -> dict[str, np.ndarray]:
        return {"visual": self.scenes, "right_motor": self.right, "left_motor": self.left}

    def minibatches(self, size: int = BATCH_SIZE) -> list["Batch"]:
        return [
            Batch(self.scenes[i:i + size], self.right[i:i + size],
                  self.left[i:i + size], self.targets[i:i + size])
            for i in range(0, len(self), size)
        ]

    def sample(self, i: int) -> NumerositySample:
        t = int(self.targets[i])
        return NumerositySample(SaliencyScene(self.scenes[i], t),
                                MotorCode(self.right[i], self.left[i]), t)


def draw_numbers(dist: NumberDistribution, n_batches: int, rng: np.random.Generator) -> np.ndarray:
    """Targets for ``n_batches`` minibatches of 9, flattened batch by batch.

    Uniform batches hold each of 1..9 once in shuffled order; Zipfian
    batches are i.i.d. draws.
    """
    if dist.kind == "uniform":
        base = np.tile(np.arange(1, MAX_N + 1), (n_batches, 1))
        return rng.permuted(base, axis=1).ravel()
    return rng.choice(MAX_N, size=n_batches * BATCH_SIZE, p=dist.probabilities) + 1


def make_batch(numbers: np.ndarray, rng: np.random.Generator, table: MotorTable,
               norm: str = "l1") -> Batch:
    numbers = np.asarray(numbers, dtype=np.int64)
    scenes = scenes_for(numbers, rng, norm)
    return Batch(scenes, table.right[numbers - 1], table.left[numbers - 1], numbers)


def gen_epoch(dist: NumberDistribution, rng: np.random.Generator, table: MotorTable,
              n_batches: int = BATCHES_PER_EPOCH, norm: str = "l1") -> Batch:
    """``n_batches`` fresh minibatches, concatenated; split with :meth:`Batch.minibatches`."""
    return make_batch(draw_numbers(dist, n_batches, rng), rng, table, norm)


def gen_minibatch(dist: NumberDistribution, rng: np.random.Generator, table: MotorTable,
                  norm: str = "l1") -> Batch:
    return gen_epoch(dist, rng, table, 1, norm)


def gen_test_set(rng: np.random.Generator, table: MotorTable, n_batches: int = TEST_BATCHES,
                 norm: str = "l1") -> Batch:
    """Uniform test set: every numerosity exactly ``n_batches`` times, fresh positions."""
    return gen_epoch(NumberDistribution.uniform(), rng, table, n_batches, norm)
