import math

import pytest
import torch

from attacks.utils import AttackResult
from errors import ParameterError
from metrics import AttackMetrics, AttackRecord, MetricsReport, compute_metrics, wilson_interval


@pytest.mark.parametrize("asr, expected_dr", [
    (0.501, 0.1707),
    (0.574, 0.2914),
    (0.596, 0.3281),
    (0.608, 0.3473),
])
def test_deception_rate_matches_reported_rows(asr, expected_dr):
    clean = 0.60115
    got_asr, dr = compute_metrics(clean, 1 - asr)
    assert got_asr == pytest.approx(asr)
    assert dr == pytest.approx(expected_dr, abs=0.002)


def test_trivial_metric_cases():
    assert compute_metrics(1.0, 1.0) == (0.0, 0.0)
    assert compute_metrics(1.0, 0.0) == (1.0, 1.0)
    asr, dr = compute_metrics(0.5, 0.0)
    assert (asr, dr) == (1.0, 1.0)


@pytest.mark.parametrize("clean, adv", [(0.5, 0.6), (0.0, 0.0), (1.2, 0.5), (0.5, -0.1)])
def test_invalid_accuracies_are_rejected(clean, adv):
    with pytest.raises(ParameterError):
        compute_metrics(clean, adv)


def test_wilson_interval():
    low, high = wilson_interval(50, 100)
    assert low == pytest.approx(0.4038, abs=1e-3)
    assert high == pytest.approx(0.5962, abs=1e-3)
    assert wilson_interval(0, 10)[0] == 0.0
    assert wilson_interval(10, 10)[1] == 1.0
    assert all(math.isnan(v) for v in wilson_interval(0, 0))


def _record(i, success, queries, clean_correct=True):
    return AttackRecord(f"c{i}", 0, 0 if clean_correct else 1, success, queries,
                        skipped_clean_error=not clean_correct, perturbation_l1=1.0)


@pytest.fixture
def metrics():
    m = AttackMetrics("vra", 4 / 255, 0, max_budget=100)
    outcomes = [(True, 1), (True, 7), (True, 40), (False, 100), (False, 100)]
    for i, (success, queries) in enumerate(outcomes):
        m.add_record(_record(i, success, queries))
    m.add_record(_record(9, False, 0, clean_correct=False))
    return m


def test_report_counts_and_rates(metrics):
    report = metrics.report(100)
    assert report.n_eval == 6
    assert report.n_clean_errors == 1
    assert report.n_eval_dr == 5
    assert report.n_success == 3
    assert report.clean_top1 == pytest.approx(5 / 6)
    assert report.adv_top1 == pytest.approx(2 / 6)
    assert report.dr == pytest.approx(3 / 5)
    assert report.asr == pytest.approx(4 / 6)
    assert report.mean_queries_success == pytest.approx(16.0)
    assert report.dr_ci_low <= report.dr <= report.dr_ci_high


def test_budget_replay_is_monotone(metrics):
    reports = [metrics.report(b) for b in (1, 10, 100)]
    assert [r.n_success for r in reports] == [1, 2, 3]
    drs = [r.dr for r in reports]
    assert drs == sorted(drs)
    assert reports[0].total_queries == 1 + 1 + 1 + 1 + 1
    assert reports[1].total_queries == 1 + 7 + 10 + 10 + 10


def test_budget_above_run_maximum_is_capped(metrics):
    report = metrics.report(1000)
    assert report.budget == 1000
    assert report.effective_budget == 100


def test_no_successes_gives_nan_mean_queries():
    m = AttackMetrics("random_noise", 0.0, 0, max_budget=5)
    m.add_record(_record(0, False, 5))
    report = m.report(5)
    assert report.dr == 0.0
    assert math.isnan(report.mean_queries_success)


def test_all_clean_errors_gives_undefined_dr():
    m = AttackMetrics("vra", 0.01, 0, max_budget=5)
    m.add_record(_record(0, False, 0, clean_correct=False))
    report = m.report(5)
    assert report.clean_top1 == 0.0
    assert math.isnan(report.dr)


def test_record_from_result():
    delta = torch.tensor([[0.1, -0.2], [0.0, 0.05]])
    result = AttackResult(True, 3, delta, 2, verification_queries=1, basis_resets=0)
    record = AttackRecord.from_result("x", 0, result)
    assert record.clean_correct
    assert record.perturbation_l1 == pytest.approx(0.35)
    assert record.perturbation_linf == pytest.approx(0.2)

    skipped = AttackResult(False, 0, None, 4, skipped_clean_error=True, verification_queries=1)
    record = AttackRecord.from_result("y", 0, skipped)
    assert record.clean_label == 4
    assert not record.clean_correct
    assert record.perturbation_l1 == 0.0


def test_errors_are_collected(metrics):
    metrics.add_record(AttackRecord("e", 0, 0, False, 2, error="budget"))
    metrics.add_error("worker crashed")
    assert metrics.errors == ["e: budget", "worker crashed"]
    assert metrics.report(100).n_errors == 1


def test_statistics_skip_clean_errors(metrics):
    stats = metrics.get_statistics()
    assert stats["min"] == 1.0
    assert stats["max"] == 100.0
    assert AttackMetrics("vra", 0.0, 0, 1).get_statistics() == {}


def test_serialization(metrics):
    report = metrics.report(10, config_hash="abc")
    restored = MetricsReport.from_dict(report.to_dict())
    assert restored.to_row() == report.to_row()
    assert restored.records == report.records
    assert list(report.to_row()) == MetricsReport.csv_columns()

    again = AttackMetrics.from_dict(metrics.to_dict())
    assert again.records == metrics.records
    assert again.report(10).to_row() == metrics.report(10).to_row()
