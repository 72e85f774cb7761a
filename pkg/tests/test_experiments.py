import pytest
import torch

from attacks import AttackConfig
from attacks.sparse import sparse_vra_perturb
from config import load_config, validate_config
from direction_search import init_basis, next_direction
from errors import ParameterError
from experiments import (AttackExecutor, attack_budget, evaluation_clips, load_role, prepare_data, run_budget_sweep,
                         run_overlap_experiment, train_role)
from models import TargetOracle, extract_features
from tests.test_utils import LinearClassifier, LinearVideoModel, desk_transfer_pair, make_clip, ontology
from video_data import Dataset, OverlapSpec

SHAPE = (2, 3, 3)


@pytest.fixture(scope="module")
def transfer_setup():
    """Linear source/target pair and clips labelled with the target's clean prediction."""
    source = LinearVideoModel(SHAPE, feature_dim=8, n_classes=4, seed=0)
    target = LinearClassifier(SHAPE, 4, seed=5)
    oracle = TargetOracle(target)
    clips = []
    for seed in range(12):
        clip = make_clip(SHAPE, seed=seed)
        label = oracle.fork().query(clip)
        # every third clip is a clean error
        if seed % 3 == 2:
            label = (label + 1) % 4
        clips.append(make_clip(SHAPE, seed=seed, label=label))
    return source, oracle, Dataset(tuple(clips), ontology(4), "val")


@pytest.fixture
def cfg(tmp_path):
    return validate_config({"eval": {"output_dir": str(tmp_path / "run")},
                            "attack": {"epsilon": 0.05}})


def test_attack_budget_per_family():
    cfg = AttackConfig(q_max=50)
    assert attack_budget("vra", cfg, 4) == 50
    assert attack_budget("mi_fgsm", cfg, 4) == 1
    assert attack_budget("targeted_ll", cfg, 4) == 4
    assert attack_budget("targeted_ll", AttackConfig(q_max=2), 4) == 2


def test_executor_keeps_clip_order(transfer_setup):
    source, oracle, clips = transfer_setup
    metrics = AttackExecutor(num_workers=3).run("vra", source, oracle, clips, AttackConfig(q_max=5))
    assert [r.clip_id for r in metrics.records] == [c.clip_id for c in clips]
    assert sum(not r.clean_correct for r in metrics.records) == 4
    assert oracle.query_count == 0


def test_results_do_not_depend_on_worker_count(transfer_setup):
    source, oracle, clips = transfer_setup
    cfg = AttackConfig(q_max=6, epsilon=0.05)
    serial = AttackExecutor(num_workers=1).run("vra", source, oracle, clips, cfg)
    parallel = AttackExecutor(num_workers=4).run("vra", source, oracle, clips, cfg)
    assert serial.records == parallel.records


def test_every_clip_gets_its_own_budget(transfer_setup):
    source, oracle, clips = transfer_setup
    metrics = AttackExecutor(num_workers=2).run("random_noise", source, oracle, clips,
                                                AttackConfig(q_max=3, epsilon=0.0))
    for record in metrics.records:
        if record.clean_correct:
            assert record.queries_used == 3
            assert record.verification_queries == 1
            assert not record.error


def test_degenerate_clips_become_error_records(transfer_setup):
    _, oracle, clips = transfer_setup
    dead = LinearVideoModel(SHAPE, feature_dim=4, n_classes=4)
    with torch.no_grad():
        dead.proj.weight.zero_()
        dead.proj.bias.zero_()
    metrics = AttackExecutor().run("vra", dead, oracle, clips, AttackConfig(q_max=2))
    correct = [r for r in metrics.records if r.clean_correct]
    assert correct and all(r.error for r in correct)
    assert len(metrics.errors) == len(correct)
    # the clean check is the only query spent before the basis fails
    assert all(r.queries_used == 0 and r.verification_queries == 1 for r in correct)


def test_targeted_ll_is_capped_at_class_count(transfer_setup):
    source, oracle, clips = transfer_setup
    metrics = AttackExecutor().run("targeted_ll", source, oracle, clips, AttackConfig(q_max=100))
    assert metrics.max_budget == 4
    assert all(r.queries_used <= 4 for r in metrics.records)


def test_budget_sweep_is_monotone(cfg, transfer_setup):
    source, oracle, clips = transfer_setup
    reports = run_budget_sweep(cfg, source, oracle, clips, attacks=["vra", "random_noise", "ll_fgsm"],
                               budgets=[1, 3, 10], executor=AttackExecutor(2))
    assert len(reports) == 9
    by_attack = {}
    for report in reports:
        by_attack.setdefault(report.attack, []).append(report)
        assert report.config_hash == cfg.hash()
        assert report.n_clean_errors == 4
    for name, rows in by_attack.items():
        drs = [r.dr for r in rows]
        assert drs == sorted(drs), name
        assert [r.budget for r in rows] == [1, 3, 10]
    assert [r.effective_budget for r in by_attack["ll_fgsm"]] == [1, 1, 1]
    assert len({r.dr for r in by_attack["ll_fgsm"]}) == 1


def test_sweep_rejects_bad_arguments(cfg, transfer_setup):
    source, oracle, clips = transfer_setup
    with pytest.raises(ParameterError):
        run_budget_sweep(cfg, source, oracle, clips, attacks=[])
    with pytest.raises(ParameterError):
        run_budget_sweep(cfg, source, oracle, clips, attacks=["vra"], budgets=[10, 1])


def test_overlap_experiment_needs_three_levels_with_zero(cfg):
    with pytest.raises(ParameterError):
        run_overlap_experiment([OverlapSpec(4, 0), OverlapSpec(4, 4)], cfg)
    with pytest.raises(ParameterError):
        run_overlap_experiment([OverlapSpec(4, 1), OverlapSpec(4, 2), OverlapSpec(4, 4)], cfg)


def test_evaluation_clips_respects_limit(transfer_setup):
    _, _, clips = transfer_setup
    assert len(evaluation_clips(validate_config({"eval": {"max_clips": 5}}), clips)) == 5
    assert len(evaluation_clips(validate_config({}), clips)) == len(clips)


def _tiny_config(tmp_path, *extra):
    return load_config(None, [
        f"eval.output_dir={tmp_path / 'run'}",
        "data.n_source_classes=4", "data.n_target_classes=4", "data.n_common_classes=2",
        "data.clips_per_class=6", "data.val_clips_per_class=3",
        "data.frames=4", "data.height=16", "data.width=16",
        "train.epochs=2", "train.batch_size=8", "train.channels=[4, 8]",
        *extra,
    ])


def test_prepare_train_and_reload(tmp_path):
    cfg = _tiny_config(tmp_path)
    datasets = prepare_data(cfg)
    assert set(datasets) == {"source_train", "source_val", "target_train", "target_val"}
    assert (cfg.data_root / "target_val" / "manifest.json").exists()

    model = train_role(cfg, "target")
    assert model.arch.block_type == "r2plus1d"
    reloaded = load_role(cfg, "target")
    for a, b in zip(model.state_dict().values(), reloaded.state_dict().values()):
        assert torch.equal(a, b)
    with pytest.raises(ParameterError):
        train_role(cfg, "victim")

@pytest.mark.slow
def test_overlap_experiment_end_to_end(tmp_path):
    cfg = load_config(None, [f"eval.output_dir={tmp_path / 'run'}"])
    levels = [OverlapSpec(cfg.data.n_source_classes, n, seed=0) for n in (0, 2, 4)]
    result = run_overlap_experiment(levels, cfg, executor=AttackExecutor(4))
    rows = result.rows
    assert [row["overlap_count"] for row in rows] == [0, 2, 4]
    assert all(row["q_max"] == 100 for row in rows)

    drs = [row["dr"] for row in rows]
    assert all(a <= b for a, b in zip(drs, drs[1:]))
    assert result.spearman_rho > 0
    # transfer works even without shared classes
    assert rows[0]["dr"] > rows[0]["random_dr"]


@pytest.fixture(scope="module")
def trained_pair():
    source, target, tgt_val = desk_transfer_pair()
    return source, TargetOracle(target), tgt_val


@pytest.mark.slow
def test_desk_pair_learns_the_task():
    source, target, clips = desk_transfer_pair()
    assert len(clips) >= 200
    assert source.val_accuracy >= 0.5
    assert target.val_accuracy >= 0.5


@pytest.mark.slow
def test_success_sets_are_nested_across_budgets(trained_pair):
    source, oracle, clips = trained_pair
    cfg = validate_config({})
    reports = run_budget_sweep(cfg, source, oracle, clips, attacks=["vra"], budgets=[1, 10, 100],
                               executor=AttackExecutor(4))
    fooled = [{r.clip_id for r in report.records if r.success_within(report.effective_budget)}
              for report in reports]
    assert fooled[2]
    assert fooled[0] <= fooled[1] <= fooled[2]
    assert [report.dr for report in reports] == sorted(report.dr for report in reports)


@pytest.mark.slow
def test_vra_beats_random_noise_floor(trained_pair):
    source, oracle, clips = trained_pair
    cfg = validate_config({})
    reports = run_budget_sweep(cfg, source, oracle, clips, attacks=["vra", "vra_random", "random_noise"],
                               budgets=[100], executor=AttackExecutor(4))
    dr = {r.attack: r.dr for r in reports}
    assert all(r.n_eval >= 200 for r in reports)
    assert dr["vra"] >= dr["vra_random"] >= dr["random_noise"]
    assert dr["vra"] - dr["random_noise"] >= 0.10


@pytest.mark.slow
def test_sparsity_penalty_trend(trained_pair):
    source, _, clips = trained_pair
    means = []
    for lam in (0.0, 1e-4, 1e-3):
        cfg = AttackConfig(sparsity_lambda=lam, n_iters=5)
        norms = []
        for clip in clips.head(16):
            basis = init_basis(extract_features(source, clip), cfg.seed)
            norms.append(float(sparse_vra_perturb(source, clip, next_direction(basis), cfg).abs().sum()))
        means.append(sum(norms) / len(norms))
    assert means[0] >= means[1] >= means[2]
