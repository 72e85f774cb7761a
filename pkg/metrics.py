#!/usr/bin/env python3
"""
Attack success rate / deception rate bookkeeping.

ASR = 1 - top-1 accuracy after the attack.
DR  = fraction of clips the target classified correctly that the attack flipped.
"""
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.stats import norm

from attacks.utils import AttackResult
from errors import ParameterError


def compute_metrics(clean_top1: float, adv_top1: float) -> Tuple[float, float]:
    if not 0 <= adv_top1 <= clean_top1 <= 1:
        raise ParameterError(
            f"Expected 0 <= adv_top1 <= clean_top1 <= 1, got clean={clean_top1}, adv={adv_top1}"
        )
    if clean_top1 == 0:
        raise ParameterError("Deception rate is undefined when clean_top1 is 0")
    asr = 1 - adv_top1
    dr = (clean_top1 - adv_top1) / clean_top1
    return asr, dr


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion; (nan, nan) when n is 0."""
    if n == 0:
        return math.nan, math.nan
    z = norm.ppf(0.5 + confidence / 2)
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class AttackRecord:
    """Outcome of one attack on one clip, at the largest budget it was run with."""
    clip_id: str
    true_label: int
    clean_label: Optional[int]
    success: bool
    queries_used: int
    skipped_clean_error: bool = False
    verification_queries: int = 0
    basis_resets: int = 0
    perturbation_l1: float = 0.0
    perturbation_linf: float = 0.0
    error: Optional[str] = None

    @property
    def clean_correct(self) -> bool:
        return self.clean_label == self.true_label

    def success_within(self, budget: int) -> bool:
        return self.success and self.clean_correct and self.queries_used <= budget

    def queries_within(self, budget: int) -> int:
        return self.queries_used if self.success_within(budget) else min(self.queries_used, budget)

    @classmethod
    def from_result(cls, clip_id: str, true_label: int, result: AttackResult,
                    clean_label: Optional[int] = None) -> "AttackRecord":
        if clean_label is None:
            clean_label = result.final_label if result.skipped_clean_error else true_label
        delta = result.perturbation
        l1 = float(delta.abs().sum()) if delta is not None else 0.0
        linf = float(delta.abs().max()) if delta is not None and delta.numel() else 0.0
        return cls(clip_id, int(true_label), clean_label, bool(result.success), int(result.queries_used),
                   result.skipped_clean_error, result.verification_queries, result.basis_resets,
                   l1, linf, result.error)


@dataclass
class MetricsReport:
    """
    One results row: an attack evaluated at one query budget. Column order of
    the results table follows `csv_columns()`.
    """
    attack: str
    budget: int
    effective_budget: int
    seed: int
    epsilon: float
    n_eval: int
    n_clean_errors: int
    n_success: int
    clean_top1: float
    adv_top1: float
    asr: float
    asr_ci_low: float
    asr_ci_high: float
    dr: float
    dr_ci_low: float
    dr_ci_high: float
    mean_queries_success: float
    total_queries: int
    verification_queries: int
    basis_resets: int
    n_errors: int
    mean_l1: float
    config_hash: str = ""
    records: List[AttackRecord] = field(default_factory=list, repr=False)

    @classmethod
    def csv_columns(cls) -> List[str]:
        return [f.name for f in fields(cls) if f.name != "records"]

    @property
    def n_eval_dr(self) -> int:
        return self.n_eval - self.n_clean_errors

    def to_row(self) -> Dict:
        return {name: getattr(self, name) for name in self.csv_columns()}

    def to_dict(self) -> Dict:
        data = self.to_row()
        data["records"] = [asdict(r) for r in self.records]
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "MetricsReport":
        values = {name: data[name] for name in cls.csv_columns()}
        values["records"] = [AttackRecord(**r) for r in data.get("records", [])]
        return cls(**values)


class AttackMetrics:
    """Collects per-clip records for one attack and reduces them per budget."""

    def __init__(self, attack: str, epsilon: float, seed: int, max_budget: int):
        self.attack = attack
        self.epsilon = epsilon
        self.seed = seed
        self.max_budget = max_budget
        self.records: List[AttackRecord] = []
        self.errors: List[str] = []

    def add_record(self, record: AttackRecord):
        self.records.append(record)
        if record.error:
            self.errors.append(f"{record.clip_id}: {record.error}")

    def add_error(self, error: str):
        self.errors.append(error)

    def report(self, budget: int, config_hash: str = "") -> MetricsReport:
        """
        Replays the stored outcomes at a smaller budget: a clip counts as
        fooled at `budget` iff it was fooled within the first `budget` queries.
        """
        effective = min(budget, self.max_budget)
        records = self.records
        n_eval = len(records)
        n_clean_correct = sum(r.clean_correct for r in records)
        flipped = [r for r in records if r.success_within(effective)]
        n_success = len(flipped)
        n_adv_correct = n_clean_correct - n_success

        if n_eval:
            clean_top1 = n_clean_correct / n_eval
            adv_top1 = n_adv_correct / n_eval
        else:
            clean_top1 = adv_top1 = 0.0
        if clean_top1 > 0:
            asr, dr = compute_metrics(clean_top1, adv_top1)
        else:
            asr, dr = 1 - adv_top1, math.nan
        asr_ci = wilson_interval(n_eval - n_adv_correct, n_eval)
        dr_ci = wilson_interval(n_success, n_clean_correct)

        queries = [r.queries_used for r in flipped]
        l1 = [r.perturbation_l1 for r in records if not r.skipped_clean_error]
        return MetricsReport(
            attack=self.attack,
            budget=int(budget),
            effective_budget=int(effective),
            seed=self.seed,
            epsilon=self.epsilon,
            n_eval=n_eval,
            n_clean_errors=n_eval - n_clean_correct,
            n_success=n_success,
            clean_top1=clean_top1,
            adv_top1=adv_top1,
            asr=asr,
            asr_ci_low=asr_ci[0],
            asr_ci_high=asr_ci[1],
            dr=dr,
            dr_ci_low=dr_ci[0],
            dr_ci_high=dr_ci[1],
            mean_queries_success=float(np.mean(queries)) if queries else math.nan,
            total_queries=sum(r.queries_within(effective) for r in records),
            verification_queries=sum(r.verification_queries for r in records),
            basis_resets=sum(r.basis_resets for r in records),
            n_errors=sum(1 for r in records if r.error),
            mean_l1=float(np.mean(l1)) if l1 else 0.0,
            config_hash=config_hash,
            records=list(records),
        )

    def get_statistics(self) -> Dict[str, float]:
        used = [r.queries_used for r in self.records if not r.skipped_clean_error]
        if not used:
            return {}
        return {
            'mean': float(np.mean(used)),
            'std': float(np.std(used)),
            'min': float(np.min(used)),
            'max': float(np.max(used)),
        }

    def to_dict(self) -> Dict:
        return {
            "attack": self.attack,
            "epsilon": self.epsilon,
            "seed": self.seed,
            "max_budget": self.max_budget,
            "records": [asdict(r) for r in self.records],
            "errors": self.errors,
            "statistics": self.get_statistics(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "AttackMetrics":
        metrics = cls(data["attack"], data["epsilon"], data["seed"], data["max_budget"])
        metrics.records = [AttackRecord(**r) for r in data.get("records", [])]
        metrics.errors = data.get("errors", [])
        return metrics
