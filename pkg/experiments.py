#!/usr/bin/env python3
"""
Experiment orchestration: data/model preparation, the per-clip attack
executor, budget sweeps via prefix replay and the class-overlap protocol.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from scipy.stats import spearmanr
from tqdm import tqdm

from attacks import SINGLE_QUERY_ATTACKS, AttackConfig, get_runner
from config import ExperimentConfig
from errors import (BudgetExceededError, DegenerateInputError, OverlapExperimentError, ParameterError,
                    TrainingError)
from metrics import AttackMetrics, AttackRecord, MetricsReport
from models import SourceModel, TargetOracle, VideoCNN, load_model, save_model, train_model
from video_data import Dataset, OverlapSpec, class_overlap, generate_synthetic, load_dataset, save_dataset

logger = logging.getLogger(__name__)

def log_experiment(message):
    logger.info(f"[Experiment] {message}")

def log_sweep(message):
    logger.info(f"[Sweep] {message}")

def log_overlap(message):
    logger.info(f"[Overlap] {message}")

ROLES = ("source", "target")
MIN_OVERLAP_LEVELS = 3


def _data_dir(cfg: ExperimentConfig, role: str, split: str) -> Path:
    return cfg.data_root / f"{role}_{split}"


def _model_path(cfg: ExperimentConfig, role: str) -> Path:
    return cfg.models_dir / f"{role}.pt"


def prepare_data(cfg: ExperimentConfig) -> Dict[str, Dataset]:
    """Render train and val splits for both roles and write them under the data root."""
    spec = cfg.data.overlap_spec()
    datasets = {}
    for split, per_class in (("train", cfg.data.clips_per_class), ("val", cfg.data.val_clips_per_class)):
        source, target = generate_synthetic(spec, cfg.data.n_target_classes, per_class, cfg.data.shape, split)
        for role, dataset in zip(ROLES, (source, target)):
            save_dataset(dataset, _data_dir(cfg, role, split))
            datasets[f"{role}_{split}"] = dataset
    overlap, fraction = class_overlap(datasets["source_train"].ontology, datasets["target_train"].ontology)
    log_experiment(f"Class overlap between source and target: {overlap} ({fraction:.0%} of source)")
    return datasets


def load_split(cfg: ExperimentConfig, role: str, split: str) -> Dataset:
    return load_dataset(_data_dir(cfg, role, split))


def train_role(cfg: ExperimentConfig, role: str, train: Optional[Dataset] = None,
               val: Optional[Dataset] = None, save: bool = True) -> VideoCNN:
    if role not in ROLES:
        raise ParameterError(f"role must be one of {ROLES}, got '{role}'")
    train = train if train is not None else load_split(cfg, role, "train")
    val = val if val is not None else load_split(cfg, role, "val")
    train_cfg = cfg.train_config()
    log_experiment(f"Training {role} model on {len(train)} clips, {len(train.ontology)} classes")
    model = train_model(train, cfg.arch(role, len(train.ontology)), train_cfg, val_dataset=val)
    if save:
        save_model(model, _model_path(cfg, role), train_cfg)
    return model


def load_role(cfg: ExperimentConfig, role: str) -> VideoCNN:
    return load_model(_model_path(cfg, role))


def _n_source_classes(source: SourceModel, clips: Dataset, cfg: AttackConfig) -> int:
    if source.ontology is not None:
        return len(source.ontology)
    if len(clips) == 0:
        return cfg.q_max
    with torch.no_grad():
        return int(source(clips[0].pixels.to(source.dtype).unsqueeze(0)).shape[1])


def attack_budget(name: str, cfg: AttackConfig, n_source_classes: int) -> int:
    """Largest budget an attack can actually spend."""
    if name in SINGLE_QUERY_ATTACKS:
        return 1
    if name == "targeted_ll":
        return min(cfg.q_max, n_source_classes)
    return cfg.q_max


class AttackExecutor:
    """
    Runs one attack over many clips on a thread pool. Every clip gets its own
    oracle view with an independent counter; records come back in clip order.
    """

    def __init__(self, num_workers: int = 1, progress: bool = False):
        self.num_workers = max(1, num_workers)
        self.progress = progress
        log_experiment(f"Initialized AttackExecutor with {self.num_workers} worker(s)")

    def _attack_clip(self, name: str, source: SourceModel, oracle: TargetOracle, clip,
                     cfg: AttackConfig) -> AttackRecord:
        runner = get_runner(name)
        clean_label = None
        if not cfg.skip_clean_errors:
            clean_label = oracle.fork().query(clip)
        view = oracle.fork(query_limit=cfg.q_max + 1)
        try:
            result = runner(source, view, clip, clip.label_id, cfg)
        except (DegenerateInputError, BudgetExceededError) as e:
            logger.warning(f"[{name}] {clip.clip_id}: {e}")
            # raised after the clean check passed; counts as a failed attack
            clean = clip.label_id if clean_label is None else clean_label
            verification = min(1, view.query_count) if cfg.skip_clean_errors else 0
            return AttackRecord(clip.clip_id, clip.label_id, clean, False, view.query_count - verification,
                                verification_queries=verification, error=str(e))
        if result.skipped_clean_error:
            logger.debug(f"[{name}] {clip.clip_id}: clean clip already misclassified, skipped")
        return AttackRecord.from_result(clip.clip_id, clip.label_id, result, clean_label)

    def run(self, name: str, source: SourceModel, oracle: TargetOracle, clips: Dataset,
            cfg: AttackConfig) -> AttackMetrics:
        budget = attack_budget(name, cfg, _n_source_classes(source, clips, cfg))
        cfg = cfg.with_overrides(q_max=budget)
        metrics = AttackMetrics(name, cfg.epsilon, cfg.seed, budget)

        with ThreadPoolExecutor(max_workers=self.num_workers) as pool:
            futures = [pool.submit(self._attack_clip, name, source, oracle, clip, cfg) for clip in clips]
            for future in tqdm(futures, desc=name, disable=not self.progress):
                metrics.add_record(future.result())
        log_experiment(f"{name}: attacked {len(metrics.records)} clips at budget {budget}, "
                       f"{len(metrics.errors)} error(s)")
        return metrics


def evaluation_clips(cfg: ExperimentConfig, dataset: Dataset) -> Dataset:
    return dataset.head(cfg.eval.max_clips) if cfg.eval.max_clips else dataset


def run_budget_sweep(cfg: ExperimentConfig, source: SourceModel, oracle: TargetOracle, clips: Dataset,
                     attacks: Optional[Sequence[str]] = None, budgets: Optional[Sequence[int]] = None,
                     executor: Optional[AttackExecutor] = None) -> List[MetricsReport]:
    """
    One report per (attack, budget). Each attack is run once at the largest
    budget; smaller budgets replay the recorded success indices.
    """
    attacks = list(cfg.sweep.attacks if attacks is None else attacks)
    budgets = list(cfg.sweep.budgets if budgets is None else budgets)
    if not attacks:
        raise ParameterError("Budget sweep needs at least one attack")
    if not budgets or budgets[0] < 1 or any(b <= a for a, b in zip(budgets, budgets[1:])):
        raise ParameterError(f"Budgets must be positive and strictly increasing, got {budgets}")
    executor = executor or AttackExecutor(cfg.workers(), progress=cfg.train.progress)

    attack_cfg = cfg.attack_config(q_max=budgets[-1])
    config_hash = cfg.hash()
    reports = []
    for name in attacks:
        log_sweep(f"Running {name} on {len(clips)} clips up to {budgets[-1]} queries")
        metrics = executor.run(name, source, oracle, clips, attack_cfg)
        for budget in budgets:
            report = metrics.report(budget, config_hash)
            reports.append(report)
            log_sweep(f"{name} @ {budget}: ASR {report.asr:.3f}, DR {report.dr:.3f}")
    return reports


@dataclass
class OverlapResult:
    rows: List[Dict] = field(default_factory=list)
    spearman_rho: float = float("nan")
    spearman_p: float = float("nan")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)


def run_overlap_experiment(levels: Sequence[OverlapSpec], cfg: ExperimentConfig,
                           q_max: Optional[int] = None,
                           executor: Optional[AttackExecutor] = None) -> OverlapResult:
    """
    Train a fresh source per overlap level against a fixed target domain and
    measure VRA deception rate plus the random-noise floor at `q_max` queries.
    """
    levels = list(levels)
    if len(levels) < MIN_OVERLAP_LEVELS:
        raise ParameterError(f"Need at least {MIN_OVERLAP_LEVELS} overlap levels, got {len(levels)}")
    if not any(level.n_common_classes == 0 for level in levels):
        raise ParameterError("Overlap levels must include a zero-overlap level")
    q_max = q_max or cfg.overlap.q_max
    executor = executor or AttackExecutor(cfg.workers(), progress=cfg.train.progress)
    attack_cfg = cfg.attack_config(q_max=q_max)
    n_target = cfg.data.n_target_classes
    targets: Dict[Tuple[int, int], Tuple[TargetOracle, Dataset]] = {}

    result = OverlapResult()
    for index, level in enumerate(levels):
        log_overlap(f"Level {index}: {level.n_common_classes} common of {level.n_source_classes} source classes")
        try:
            src_train, tgt_train = generate_synthetic(level, n_target, cfg.data.clips_per_class, cfg.data.shape)
            src_val, tgt_val = generate_synthetic(level, n_target, cfg.data.val_clips_per_class,
                                                  cfg.data.shape, split="val")
            key = (level.seed, n_target)
            if key not in targets:
                target = train_role(cfg, "target", tgt_train, tgt_val, save=False)
                targets[key] = (TargetOracle(target, name="target"), tgt_val)
            oracle, clips = targets[key]
            source = train_role(cfg, "source", src_train, src_val, save=False)
        except (TrainingError, ParameterError) as e:
            raise OverlapExperimentError(str(e), index) from e

        clips = evaluation_clips(cfg, clips)
        vra = executor.run("vra", source, oracle, clips, attack_cfg).report(q_max)
        floor = executor.run("random_noise", source, oracle, clips, attack_cfg).report(q_max)
        count, fraction = class_overlap(src_train.ontology, tgt_train.ontology)
        result.rows.append({
            "level": index,
            "n_source_classes": level.n_source_classes,
            "overlap_count": count,
            "overlap_fraction": fraction,
            "seed": level.seed,
            "source_val_top1": source.val_accuracy,
            "clean_top1": vra.clean_top1,
            "dr": vra.dr,
            "dr_ci_low": vra.dr_ci_low,
            "dr_ci_high": vra.dr_ci_high,
            "random_dr": floor.dr,
            "q_max": q_max,
        })
        log_overlap(f"Level {index}: overlap {count}, DR {vra.dr:.3f} (random floor {floor.dr:.3f})")

    counts = [row["overlap_count"] for row in result.rows]
    drs = [row["dr"] for row in result.rows]
    if len(set(counts)) > 1 and len(set(drs)) > 1 and not np.isnan(drs).any():
        rho, p = spearmanr(counts, drs)
        result.spearman_rho, result.spearman_p = float(rho), float(p)
    log_overlap(f"Spearman rank correlation between overlap and DR: {result.spearman_rho:.3f}")
    return result
