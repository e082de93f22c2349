"""CSV outputs and the run manifest.

Floats are written with ``repr`` so files round-trip exactly and are
byte-identical across reruns.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np

from subitizer import __version__
from subitizer.experiments import RunResult, SweepPoint

CURVES_HEADER = ["preset", "seed", "epoch", "overall_acc"] + [f"acc_{n}" for n in range(1, 10)]
VC_HEADER = ["preset", "seed", "numerosity", "mean_response", "std_response", "vc"]
SWEEP_HEADER = ["preset", "mode", "lr", "mean_epochs", "censored_count"]


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def _write(path: Path, header: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def curve_rows(results: list[RunResult]):
    for r in results:
        for m in r.series:
            yield [r.preset, r.seed, m.epoch, m.overall_accuracy, *m.per_numerosity_accuracy]


def vc_rows(results: list[RunResult], snapshots: dict[str, float]):
    for r in results:
        if r.aborted is not None or not r.series:
            continue
        m = r.at_epoch(snapshots[r.preset])
        vc = m.variation_coefficient
        for n in range(9):
            yield [r.preset, r.seed, n + 1, m.response_mean[n], m.response_std[n], vc[n]]


def sweep_rows(preset: str, points: list[SweepPoint]):
    for p in points:
        yield [preset, p.mode, p.lr, p.mean_epochs, p.censored]


def write_curves(path: Path, results: list[RunResult]) -> Path:
    return _write(Path(path), CURVES_HEADER, curve_rows(results))


def write_vc(path: Path, results: list[RunResult], snapshots: dict[str, float]) -> Path:
    return _write(Path(path), VC_HEADER, vc_rows(results, snapshots))


def write_sweep(path: Path, preset: str, points: list[SweepPoint]) -> Path:
    return _write(Path(path), SWEEP_HEADER, sweep_rows(preset, points))


def read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _jsonable(obj):
    if is_dataclass(obj):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    return obj


def write_manifest(out_dir: Path, command: str, config, presets: list, extra: dict | None = None) -> Path:
    """``run-manifest.json``: everything needed to rerun this command exactly."""
    body = {
        "version": __version__,
        "command": command,
        "config": _jsonable(config),
        "presets": [_jsonable(p) for p in presets],
        **(_jsonable(extra) if extra else {}),
    }
    path = Path(out_dir) / "run-manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
