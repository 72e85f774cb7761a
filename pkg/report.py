#!/usr/bin/env python3
"""
Report emission: results table, human-readable summary, deception-rate curve
and perturbation triptychs.
"""
import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Union

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import torch
from PIL import Image
from tabulate import tabulate
from termcolor import colored

from errors import ParameterError, ReportError
from experiments import OverlapResult
from metrics import MetricsReport
from video_data import pixels_to_uint8

logger = logging.getLogger(__name__)

def log_report(message):
    logger.info(f"[Report] {message}")

RESULTS_FILE = "results.csv"
SUMMARY_FILE = "summary.txt"
PLOT_FILE = "dr_vs_queries.png"
OVERLAP_FILE = "overlap.csv"
OVERLAP_SUMMARY_FILE = "overlap_summary.txt"


def _pct(value: float) -> str:
    return "n/a" if value is None or math.isnan(value) else f"{100 * value:.2f}"


def results_frame(reports: Sequence[MetricsReport]) -> pd.DataFrame:
    return pd.DataFrame([r.to_row() for r in reports], columns=MetricsReport.csv_columns())


def read_results(path: Union[str, Path]) -> List[MetricsReport]:
    """Parse a results table written by `emit_report` (per-clip records are not stored there)."""
    try:
        frame = pd.read_csv(path, float_precision="round_trip", keep_default_na=False,
                            na_values=["nan", "NaN"], dtype={"config_hash": str})
    except OSError as e:
        raise ReportError(f"Cannot read results table {path}: {e}") from None
    reports = []
    for row in frame.to_dict(orient="records"):
        row = {k: (v.item() if hasattr(v, "item") else v) for k, v in row.items()}
        reports.append(MetricsReport.from_dict(row))
    return reports


def summary_table(reports: Sequence[MetricsReport]) -> str:
    rows = []
    for r in reports:
        ci = f"[{_pct(r.dr_ci_low)}, {_pct(r.dr_ci_high)}]"
        mean_q = "n/a" if math.isnan(r.mean_queries_success) else f"{r.mean_queries_success:.1f}"
        rows.append([r.attack, r.budget, r.effective_budget, _pct(r.clean_top1), _pct(r.adv_top1),
                     _pct(r.asr), _pct(r.dr), ci, mean_q, r.n_eval, r.n_clean_errors])
    headers = ["Attack", "Budget", "Effective", "Clean top-1 %", "Adv top-1 %", "ASR %", "DR %",
               "DR 95% CI", "Mean queries", "Clips", "Clean errors"]
    return tabulate(rows, headers=headers, tablefmt="grid")


def print_summary(reports: Sequence[MetricsReport]):
    print(f"\n{colored('Attack Comparison', 'yellow', attrs=['bold'])}")
    print(summary_table(reports))
    failing = [r for r in reports if r.n_errors]
    if failing:
        print("\n" + colored("Clips with attack errors", 'red', attrs=['bold']))
        print(tabulate([[r.attack, r.budget, r.n_errors] for r in failing],
                       headers=["Attack", "Budget", "Errors"], tablefmt="grid"))


def plot_dr_curves(reports: Sequence[MetricsReport], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for attack in dict.fromkeys(r.attack for r in reports):
        rows = sorted((r for r in reports if r.attack == attack), key=lambda r: r.budget)
        ax.plot([r.budget for r in rows], [100 * r.dr for r in rows], marker="o", label=attack)
    ax.set_xscale("log")
    ax.set_xlabel("Query budget")
    ax.set_ylabel("Deception rate (%)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    try:
        fig.savefig(path, dpi=120)
    finally:
        plt.close(fig)
    return path


def write_summary(reports: Sequence[MetricsReport], path: Path) -> Path:
    with open(path, "w") as f:
        f.write(f"Results for config {reports[0].config_hash}\n")
        f.write(f"epsilon={reports[0].epsilon:.6f} seed={reports[0].seed}\n\n")
        f.write(summary_table(reports) + "\n")
    return path


def emit_report(reports: Sequence[MetricsReport], output_dir: Union[str, Path],
                write_table: bool = True) -> List[Path]:
    """
    Write results table, summary text and DR-vs-queries plot into `output_dir`.
    With `write_table=False` an existing results table is left untouched.
    """
    if not reports:
        raise ParameterError("No reports to emit")
    out = Path(output_dir)
    paths = [out / RESULTS_FILE, out / SUMMARY_FILE, out / PLOT_FILE]
    try:
        out.mkdir(parents=True, exist_ok=True)
        if write_table:
            results_frame(reports).to_csv(paths[0], index=False, na_rep="nan")
        write_summary(reports, paths[1])
        plot_dr_curves(reports, paths[2])
    except OSError as e:
        raise ReportError(f"Cannot write report to {out}: {e}") from None
    log_report(f"Wrote {len(reports)} rows to {paths[0] if write_table else paths[1]}")
    return paths


def emit_overlap_report(result: OverlapResult, output_dir: Union[str, Path]) -> List[Path]:
    out = Path(output_dir)
    paths = [out / OVERLAP_FILE, out / OVERLAP_SUMMARY_FILE]
    frame = result.to_frame()
    try:
        out.mkdir(parents=True, exist_ok=True)
        frame.to_csv(paths[0], index=False, na_rep="nan")
        rows = [[r["level"], r["overlap_count"], _pct(r["clean_top1"]), _pct(r["dr"]), _pct(r["random_dr"])]
                for r in result.rows]
        with open(paths[1], "w") as f:
            f.write(tabulate(rows, headers=["Level", "Overlap", "Clean top-1 %", "DR %", "Random DR %"],
                             tablefmt="grid"))
            f.write(f"\nSpearman rho: {result.spearman_rho:.4f} (p={result.spearman_p:.4f})\n")
    except OSError as e:
        raise ReportError(f"Cannot write overlap report to {out}: {e}") from None
    log_report(f"Wrote overlap table to {paths[0]}")
    return paths


def triptych_frames(pixels: torch.Tensor, delta: torch.Tensor, amplification: float = 32.0) -> List[np.ndarray]:
    """Per frame: clean | perturbed | amplified difference centred on grey."""
    clean = pixels_to_uint8(pixels)
    perturbed = pixels_to_uint8((pixels + delta).clamp(0, 1))
    diff = pixels_to_uint8((0.5 + amplification * delta).clamp(0, 1))
    return [np.concatenate([c, p, d], axis=1) for c, p, d in zip(clean, perturbed, diff)]


def dump_triptychs(pixels: torch.Tensor, delta: Optional[torch.Tensor], output_dir: Union[str, Path],
                   amplification: float = 32.0) -> List[Path]:
    out = Path(output_dir)
    if delta is None:
        delta = torch.zeros_like(pixels)
    paths = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for t, frame in enumerate(triptych_frames(pixels, delta.to(pixels.dtype), amplification)):
            path = out / f"frame_{t:05d}.png"
            Image.fromarray(frame).save(path)
            paths.append(path)
    except OSError as e:
        raise ReportError(f"Cannot write triptychs to {out}: {e}") from None
    return paths
