"""Named experiment presets and the figure tags that group them."""

from __future__ import annotations

from dataclasses import dataclass, replace

from subitizer.errors import ConfigError
from subitizer.experiments import ExperimentPreset, LrSchedule

MODE_SHORT = {"ae": "autoencoder", "rbm": "rbm", "none": "none"}


def _baseline_presets() -> dict[str, ExperimentPreset]:
    out = {}
    for modules in ("visual", "motor", "both"):
        for short, mode in MODE_SHORT.items():
            name = f"baseline-{modules}-{short}"
            if modules == "visual":
                timing = dict(epochs=25.0, eval_every=500)
            elif modules == "motor":
                timing = dict(epochs=0.4, eval_every=10)
            else:
                timing = dict(epochs=1.0, eval_every=10)
            fig = {"visual": "fig3", "motor": "fig4", "both": "fig5"}[modules]
            out[name] = ExperimentPreset(name, "baseline", modules, mode, seeds=20, figure=fig, **timing)
    return out


def _extended(name: str, init: str, regime: str, distribution: str = "uniform",
              snapshot: float | None = None, figure: str = "", **kw) -> ExperimentPreset:
    if snapshot is None:
        snapshot = 15.0 if distribution == "uniform" else 40.0
    return ExperimentPreset(name, "extended", "visual", "autoencoder", init, regime, distribution,
                            epochs=40.0, eval_every=500, seeds=20, snapshot_epoch=snapshot,
                            figure=figure, **kw)


def _extended_presets() -> dict[str, ExperimentPreset]:
    ps = [
        _extended("extended-visual-part", "visual_part_only", "enumeration", figure="fig7"),
        _extended("extended-weight-copy", "weight_copy", "enumeration", figure="fig7"),
        _extended("extended-recon-first", "full_pretrain", "reconstruction_first", figure="fig8"),
        _extended("extended-parallel", "full_pretrain", "parallel", figure="fig9"),
        _extended("extended-parallel-zipf", "full_pretrain", "parallel", "zipfian", figure="fig10"),
        _extended("extended-nopre", "none", "parallel", snapshot=40.0, figure="fig12"),
        _extended("extended-nopre-zipf", "none", "parallel", "zipfian", snapshot=40.0, figure="fig12"),
        _extended("extended-nomotor", "visual_part_only", "enumeration", figure="fig13"),
        _extended("extended-nomotor-zipf", "visual_part_only", "enumeration", "zipfian", figure="fig13"),
        _extended("extended-parallel-zero-motor", "full_pretrain", "parallel",
                  motor_lr=LrSchedule("constant", 0.0)),
    ]
    return {p.name: p for p in ps}


PRESETS: dict[str, ExperimentPreset] = {**_baseline_presets(), **_extended_presets()}
# Long visual-only baseline used as the reference curve next to the extended model.
PRESETS["baseline-visual-ae-long"] = replace(PRESETS["baseline-visual-ae"],
                                             name="baseline-visual-ae-long", epochs=40.0, figure="fig7")


@dataclass(frozen=True)
class Figure:
    tag: str
    description: str
    presets: tuple[str, ...] = ()
    sweep: str | None = None         # preset swept over learning rates
    sweep_lrs: tuple[float, ...] = ()
    vc: bool = False                 # write vc.csv
    default_seeds: int = 20


FIGURES: dict[str, Figure] = {f.tag: f for f in [
    Figure("fig3", "visual-only baseline, three pre-training modes",
           ("baseline-visual-ae", "baseline-visual-rbm", "baseline-visual-none")),
    Figure("fig4", "motor-only baseline, three pre-training modes",
           ("baseline-motor-ae", "baseline-motor-rbm", "baseline-motor-none")),
    Figure("fig5", "iterations to 99% accuracy against learning rate, both modules",
           sweep="baseline-both-ae", sweep_lrs=(0.003, 0.01, 0.03, 0.1, 0.3), default_seeds=10),
    Figure("fig7", "extended model, enumeration only: visual part vs weight copy vs visual baseline",
           ("extended-visual-part", "extended-weight-copy", "baseline-visual-ae-long")),
    Figure("fig8", "reconstruction-first training vs enumeration only",
           ("extended-recon-first", "extended-visual-part")),
    Figure("fig9", "parallel motor/number training (tanh motor schedule) vs enumeration only",
           ("extended-parallel", "extended-visual-part")),
    Figure("fig10", "per-numerosity accuracy, uniform and Zipfian training",
           ("extended-parallel", "extended-parallel-zipf"), vc=True),
    Figure("fig11", "variation coefficient per numerosity",
           ("extended-parallel", "extended-parallel-zipf"), vc=True, default_seeds=40),
    Figure("fig12", "no pre-training: per-numerosity accuracy and variation coefficient",
           ("extended-nopre", "extended-nopre-zipf"), vc=True, default_seeds=40),
    Figure("fig13", "no motor training, Zipfian: per-numerosity accuracy",
           ("extended-nomotor-zipf",), vc=True),
]}


def get_preset(name: str) -> ExperimentPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(sorted(PRESETS))}") from None


def get_figure(tag: str) -> Figure:
    try:
        return FIGURES[tag]
    except KeyError:
        raise ConfigError(f"unknown figure tag {tag!r}; valid tags: {', '.join(FIGURES)}") from None
