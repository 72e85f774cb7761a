#!/usr/bin/env python3
"""
Command-line entry point.

    python cli.py gen-data --config config.yml
    python cli.py train --role source --config config.yml
    python cli.py sweep --config config.yml --set sweep.budgets=[1,10,100]
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from dotenv import load_dotenv

from attacks import get_runner
from config import DEFAULT_CONFIG, ExperimentConfig, load_config, write_resolved
from errors import ConfigError, ReportError, VideoAttackError
from experiments import (evaluation_clips, load_role, load_split, prepare_data,
                         run_budget_sweep, run_overlap_experiment, train_role)
from models import TargetOracle
from report import RESULTS_FILE, dump_triptychs, emit_overlap_report, emit_report, print_summary, read_results
from video_data import OverlapSpec

__version__ = "0.1.0"

logger = logging.getLogger(__name__)

def log_cli(message):
    logger.info(f"[CLI] {message}")

SUBCOMMANDS = ("gen-data", "train", "attack", "sweep", "overlap-exp", "report", "viz")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', '-c', type=str, default=None,
                        help=f'Experiment config (YAML or JSON). Default: {DEFAULT_CONFIG.name}')
    common.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help='Override a config value by dotted key, e.g. attack.q_max=10. Repeatable')
    common.add_argument('--seed', type=int, default=None,
                        help='Seed applied to data, training and attacks')
    common.add_argument('--workers', '-w', type=int, default=None,
                        help='Worker threads for per-clip attacks. Default: $VIDEO_ATTACK_WORKERS or 1')
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('--verbose', '-v', action='store_true', help='Debug logging')
    verbosity.add_argument('--quiet', '-q', action='store_true', help='Warnings and errors only')

    parser = argparse.ArgumentParser(description="Hard-label black-box video attack benchmark.")
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', metavar='{' + ','.join(SUBCOMMANDS) + '}')
    sub.required = True

    sub.add_parser('gen-data', parents=[common], help='Render synthetic source/target datasets')
    train = sub.add_parser('train', parents=[common], help='Train the source or target model')
    train.add_argument('--role', choices=('source', 'target'), required=True)
    sub.add_parser('attack', parents=[common], help='Run attack.name at attack.q_max on the eval clips')
    sub.add_parser('sweep', parents=[common], help='Evaluate every sweep attack at every budget')
    sub.add_parser('overlap-exp', parents=[common], help='Deception rate versus class overlap')
    report = sub.add_parser('report', parents=[common], help='Re-render summary and plot from a results table')
    report.add_argument('--results', type=str, default=None,
                        help=f'Results table. Default: <output_dir>/sweep/{RESULTS_FILE}')
    sub.add_parser('viz', parents=[common], help='Dump clean/perturbed/difference triptychs')
    return parser


def _configure_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s - %(levelname)s - %(message)s', force=True)


def _resolve_config(args) -> ExperimentConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides += [f"data.seed={args.seed}", f"train.seed={args.seed}", f"attack.seed={args.seed}"]
    if args.workers is not None:
        overrides.append(f"eval.workers={args.workers}")
    path = args.config
    if path is None and DEFAULT_CONFIG.exists():
        path = DEFAULT_CONFIG
    if path is not None and not Path(path).exists():
        raise ConfigError("config file not found", key=str(path))
    return load_config(path, overrides)


def _attack_inputs(cfg: ExperimentConfig):
    source = load_role(cfg, "source")
    target = load_role(cfg, "target")
    clips = evaluation_clips(cfg, load_split(cfg, "target", "val"))
    return source, TargetOracle(target, name="target"), clips


def cmd_gen_data(cfg: ExperimentConfig, args):
    prepare_data(cfg)


def cmd_train(cfg: ExperimentConfig, args):
    model = train_role(cfg, args.role)
    log_cli(f"{args.role} model validation top-1: {model.val_accuracy:.3f}")


def cmd_attack(cfg: ExperimentConfig, args):
    source, oracle, clips = _attack_inputs(cfg)
    reports = run_budget_sweep(cfg, source, oracle, clips, attacks=[cfg.attack.name], budgets=[cfg.attack.q_max])
    emit_report(reports, cfg.output_dir / "attack")
    print_summary(reports)


def cmd_sweep(cfg: ExperimentConfig, args):
    source, oracle, clips = _attack_inputs(cfg)
    reports = run_budget_sweep(cfg, source, oracle, clips)
    out = cfg.output_dir / "sweep"
    emit_report(reports, out)
    largest = max(r.budget for r in reports)
    try:
        with open(out / "records.json", "w") as f:
            json.dump([r.to_dict() for r in reports if r.budget == largest], f, indent=2)
    except OSError as e:
        raise ReportError(f"Cannot write per-clip records to {out}: {e}") from None
    print_summary(reports)


def cmd_overlap(cfg: ExperimentConfig, args):
    levels = [OverlapSpec(cfg.data.n_source_classes, n, cfg.data.seed) for n in cfg.overlap.levels]
    result = run_overlap_experiment(levels, cfg)
    paths = emit_overlap_report(result, cfg.output_dir / "overlap")
    print(paths[1].read_text())


def cmd_report(cfg: ExperimentConfig, args):
    results = Path(args.results) if args.results else cfg.output_dir / "sweep" / RESULTS_FILE
    reports = read_results(results)
    if not reports:
        raise ConfigError("results table is empty", key=str(results))
    emit_report(reports, results.parent, write_table=False)
    print_summary(reports)


def cmd_viz(cfg: ExperimentConfig, args):
    source, oracle, clips = _attack_inputs(cfg)
    runner = get_runner(cfg.attack.name)
    attack_cfg = cfg.attack_config()
    for clip in clips.head(cfg.eval.viz_clips):
        result = runner(source, oracle.fork(), clip, clip.label_id, attack_cfg)
        pixels = clip.pixels.to(source.dtype)
        paths = dump_triptychs(pixels, result.perturbation, cfg.output_dir / "viz" / clip.clip_id,
                               cfg.eval.amplification)
        log_cli(f"{clip.clip_id}: success={result.success} after {result.queries_used} queries, "
                f"{len(paths)} frames written")


COMMANDS = {
    'gen-data': cmd_gen_data,
    'train': cmd_train,
    'attack': cmd_attack,
    'sweep': cmd_sweep,
    'overlap-exp': cmd_overlap,
    'report': cmd_report,
    'viz': cmd_viz,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2
    _configure_logging(args)
    load_dotenv()

    try:
        cfg = _resolve_config(args)
        write_resolved(cfg, __version__)
        log_cli(f"{args.command}: config hash {cfg.hash()[:12]}, output dir {cfg.output_dir}")
        COMMANDS[args.command](cfg, args)
    except VideoAttackError as e:
        logger.error(f"[CLI] {args.command} failed: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
