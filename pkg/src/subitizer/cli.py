"""``subitizer`` command-line entry point.

Exit codes: 0 success, 2 usage/config error, 3 data/checkpoint error,
4 numerical divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from subitizer import embodiment as emb
from subitizer import report
from subitizer.config import RunConfig, load_config
from subitizer.errors import ConfigError, DivergenceError, SubitizerError
from subitizer.experiments import (
    RunResult,
    aggregate,
    build_model,
    evaluate,
    evaluation_set,
    lr_sweep,
    replicate_seeds,
    run_many,
)
from subitizer.models import load_checkpoint, save_checkpoint
from subitizer.presets import FIGURES, get_figure, get_preset

log = logging.getLogger("subitizer")
COMMANDS = ("pretrain", "train", "evaluate", "sweep", "reproduce")
DEFAULT_SWEEP_LRS = (0.003, 0.01, 0.03, 0.1, 0.3)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="subitizer", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("target", nargs="?", help="figure tag (reproduce) or checkpoint file (evaluate)")
    p.add_argument("--preset")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--motor-table")
    p.add_argument("--lrs", help="comma-separated learning rates for sweep")
    p.add_argument("--plot", action="store_true", help="also render SVG charts")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    for key in ("preset", "seed", "seeds", "threads", "out", "motor_table"):
        value = getattr(args, key)
        if value is not None:
            setattr(cfg, key, value)
    if args.plot:
        cfg.plot = True
    if cfg.threads is not None and cfg.threads < 1:
        raise ConfigError("--threads must be >= 1")
    if args.seeds is not None and args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    return cfg


def _table(cfg: RunConfig) -> emb.MotorTable:
    return emb.load_motor_table(cfg.motor_table) if cfg.motor_table else emb.default_motor_table()


def _require_preset(cfg: RunConfig):
    if not cfg.preset:
        raise ConfigError("--preset is required for this command")
    return cfg.apply(get_preset(cfg.preset))


def _report_aborts(results) -> int:
    aborted = [r for r in results if r.aborted is not None]
    for r in aborted:
        print(f"diverged: preset={r.preset} seed={r.seed}: {r.aborted}", file=sys.stderr)
    return DivergenceError.exit_code if aborted else 0


def cmd_pretrain(cfg: RunConfig, argv) -> int:
    preset = _require_preset(cfg)
    out = Path(cfg.out)
    model = build_model(preset, cfg.seed, _table(cfg))
    path = save_checkpoint(model, out / "checkpoints" / f"{preset.name}-seed{cfg.seed}.ckpt")
    report.write_manifest(out, " ".join(argv), cfg, [preset], {"checkpoint": str(path)})
    print(f"wrote {path}")
    return 0


def cmd_train(cfg: RunConfig, argv) -> int:
    preset = _require_preset(cfg)
    out = Path(cfg.out)
    seeds = replicate_seeds(cfg.seed, cfg.seeds)
    results = run_many([(preset, s) for s in seeds], _table(cfg), cfg.threads, keep_models=True)
    report.write_curves(out / "curves.csv", results)
    report.write_vc(out / "vc.csv", results, {preset.name: preset.snapshot_epoch or preset.epochs})
    ckpts = []
    for r in results:
        ckpts.append(str(save_checkpoint(r.model, out / "checkpoints" / f"{preset.name}-seed{r.seed}.ckpt")))
        if r.series:
            print(f"{preset.name} seed={r.seed} final accuracy {r.final.overall_accuracy:.4f}")
    if cfg.plot:
        from subitizer import plots

        summary = aggregate(preset, results)
        plots.plot_accuracy([summary], out / f"{preset.name}-accuracy.svg", preset.name)
        plots.plot_per_numerosity(summary, out / f"{preset.name}-per-numerosity.svg")
    report.write_manifest(out, " ".join(argv), cfg, [preset], {"seeds": seeds, "checkpoints": ckpts})
    return _report_aborts(results)


def cmd_evaluate(cfg: RunConfig, argv, checkpoint: str | None, test_seed: int | None) -> int:
    """Score a checkpoint on the test set its final training evaluation would use."""
    if not checkpoint:
        raise ConfigError("evaluate needs a checkpoint path")
    model = load_checkpoint(checkpoint)
    seed = test_seed if test_seed is not None else model.provenance.get("seed", 0)
    index = model.provenance.get("final_eval_index", 0)
    test_set = evaluation_set(seed, index, _table(cfg))
    row = evaluate(model, test_set, model.provenance.get("iterations_trained", 0))
    print(f"overall accuracy {row.overall_accuracy:.4f}")
    for n, acc in enumerate(row.per_numerosity_accuracy, 1):
        print(f"  n={n}: accuracy {acc:.4f}  mean response {row.response_mean[n - 1]:.4f}")
    name = model.provenance.get("preset", Path(checkpoint).stem)
    report.write_curves(Path(cfg.out) / "evaluate.csv", [RunResult(name, seed, [row])])
    return 0


def cmd_sweep(cfg: RunConfig, argv, lrs_arg: str | None, plot_title: str = "") -> int:
    preset = _require_preset(cfg)
    if lrs_arg:
        try:
            lrs = [float(v) for v in lrs_arg.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"--lrs: {exc}") from None
    else:
        lrs = list(cfg.sweep.get("lrs", DEFAULT_SWEEP_LRS))
    modes = tuple(cfg.sweep.get("modes", ("rbm", "autoencoder", "none")))
    threshold = cfg.sweep.get("threshold", 0.99)
    out = Path(cfg.out)
    points = lr_sweep(preset, lrs, cfg.seeds, cfg.seed, modes, threshold, _table(cfg), cfg.threads)
    report.write_sweep(out / "sweep.csv", preset.name, points)
    if cfg.plot:
        from subitizer import plots

        plots.plot_sweep(points, out / f"{preset.name}-sweep.svg", plot_title or preset.name)
    report.write_manifest(out, " ".join(argv), cfg, [preset],
                          {"lrs": lrs, "modes": modes, "threshold": threshold})
    return 0


def cmd_reproduce(cfg: RunConfig, argv, tag: str | None) -> int:
    if not tag:
        raise ConfigError(f"reproduce needs a figure tag; valid tags: {', '.join(FIGURES)}")
    fig = get_figure(tag)
    cfg.seeds = cfg.seeds or fig.default_seeds
    out = Path(cfg.out)
    if fig.sweep:
        sweep_cfg = replace(cfg, preset=fig.sweep)
        lrs = ",".join(str(v) for v in cfg.sweep.get("lrs", fig.sweep_lrs))
        return cmd_sweep(sweep_cfg, argv, lrs, fig.description)
    presets = [cfg.apply(get_preset(name)) for name in fig.presets]
    seeds = replicate_seeds(cfg.seed, cfg.seeds)
    results = run_many([(p, s) for p in presets for s in seeds], _table(cfg), cfg.threads)
    report.write_curves(out / "curves.csv", results)
    if fig.vc:
        report.write_vc(out / "vc.csv", results,
                        {p.name: p.snapshot_epoch or p.epochs for p in presets})
    if cfg.plot:
        from subitizer import plots

        summaries = [aggregate(p, [r for r in results if r.preset == p.name]) for p in presets]
        plots.plot_accuracy(summaries, out / f"{tag}-accuracy.svg", fig.description)
        if fig.vc:
            for s in summaries:
                plots.plot_per_numerosity(s, out / f"{tag}-{s.preset.name}-per-numerosity.svg")
            plots.plot_vc(summaries, out / f"{tag}-vc.svg")
    report.write_manifest(out, " ".join(argv), cfg, presets, {"figure": tag, "seeds": seeds})
    return _report_aborts(results)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, argv, args.target, args.seed)
        if args.command == "pretrain":
            return cmd_pretrain(cfg, argv)
        if args.command == "train":
            cfg.seeds = cfg.seeds or 1
            return cmd_train(cfg, argv)
        if args.command == "sweep":
            cfg.seeds = cfg.seeds or 10
            return cmd_sweep(cfg, argv, args.lrs)
        return cmd_reproduce(cfg, argv, args.target)
    except SubitizerError as exc:
        print(f"subitizer: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
