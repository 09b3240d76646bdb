"""Harness: pipeline identity, averaging, seed isolation, results files."""

import numpy as np
import pytest

from advpower.attacks import AttackTarget, UncertaintyModel
from advpower.harness import (
    AttackSpec,
    ExperimentPlan,
    ModelHandle,
    evaluate_cell,
    evaluate_instance,
    load_results,
    run_sweep,
    save_results,
    uncertainty_sweep,
)
from advpower.network import NetworkSpec, init_params
from advpower.solver import Dataset, generate_dataset
from advpower.system import SystemConfig

N, K = 3, 2
CONFIG = SystemConfig(N, K, total_power=10.0)


@pytest.fixture(scope="module")
def models():
    spec = NetworkSpec(N, K, hidden_sizes=(16, 16), total_power=10.0)
    bs = ModelHandle(init_params(spec, 0), spec, provenance="bs")
    surrogate = ModelHandle(init_params(spec, 1), spec)
    return bs, surrogate


@pytest.fixture(scope="module")
def test_set():
    return generate_dataset(CONFIG, count=30, rng_seed=77)


def test_no_attack_normalized_below_one(models, test_set):
    bs, surrogate = models
    outcome = evaluate_instance(CONFIG, bs, surrogate, test_set[0], None)
    assert 0.0 <= outcome.normalized <= 1.0 + 1e-9
    assert not outcome.outage.any()


def test_zero_rho_matches_baseline_bitwise(models, test_set):
    bs, surrogate = models
    for kind in ("scaling", "analytical", "fgm"):
        for target in (AttackTarget.single(0), AttackTarget.all_ues()):
            attack = AttackSpec(kind, target, 0.0)
            for i in range(5):
                base = evaluate_instance(CONFIG, bs, surrogate, test_set[i], None)
                att = evaluate_instance(CONFIG, bs, surrogate, test_set[i], attack)
                assert att.normalized == base.normalized
                assert att.achieved_min == base.achieved_min


def test_zero_errors_do_not_consume_seed(models, test_set):
    bs, surrogate = models
    attack = AttackSpec("analytical", AttackTarget.single(0), 0.1)
    a = evaluate_instance(CONFIG, bs, surrogate, test_set[0], attack,
                          UncertaintyModel(rng_seed=1))
    b = evaluate_instance(CONFIG, bs, surrogate, test_set[0], attack,
                          UncertaintyModel(rng_seed=999))
    assert a.normalized == b.normalized


def test_degenerate_instance_skipped(models):
    bs, surrogate = models
    gains = np.zeros((1, N, K))
    powers = np.full((1, N, K), 10.0 / (N * K))
    ds = Dataset(CONFIG, gains, powers, np.zeros(1))
    norm, outage, skipped = evaluate_cell(CONFIG, bs, surrogate, ds, None,
                                          UncertaintyModel())
    assert skipped == 1
    assert norm.size == 0


def test_run_sweep_baseline_only(models, test_set):
    bs, surrogate = models
    plan = ExperimentPlan(attack_kinds=(), targets=(), rhos=(), test_size=10)
    rows, skipped = run_sweep(plan, CONFIG, bs, surrogate, test_set)
    assert len(rows) == 1
    assert rows[0].attack == "none"
    assert rows[0].count == 10


def test_run_sweep_deterministic_and_average_correct(models, test_set):
    bs, surrogate = models
    plan = ExperimentPlan(attack_kinds=("scaling", "analytical"),
                          targets=(AttackTarget.all_ues(),),
                          rhos=(0.0, 0.1), test_size=12, master_seed=5)
    rows1, _ = run_sweep(plan, CONFIG, bs, surrogate, test_set)
    rows2, _ = run_sweep(plan, CONFIG, bs, surrogate, test_set)
    assert rows1 == rows2

    # recompute one cell mean by hand
    attack = AttackSpec("analytical", AttackTarget.all_ues(), 0.1)
    subset = test_set.subset(np.arange(12))
    values = [evaluate_instance(CONFIG, bs, surrogate, subset[i], attack,
                                UncertaintyModel(rng_seed=(0, i))).normalized
              for i in range(12)]
    cell = [r for r in rows1 if r.attack == "analytical" and r.rho == 0.1][0]
    assert cell.mean_normalized_min_rate == pytest.approx(np.mean(values), abs=1e-12)
    assert cell.count == 12


def test_zero_rho_rows_equal_baseline(models, test_set):
    bs, surrogate = models
    plan = ExperimentPlan(attack_kinds=("scaling", "analytical", "fgm"),
                          targets=(AttackTarget.single(0), AttackTarget.all_ues()),
                          rhos=(0.0,), test_size=8)
    rows, _ = run_sweep(plan, CONFIG, bs, surrogate, test_set)
    base = rows[0].mean_normalized_min_rate
    for row in rows[1:]:
        assert row.mean_normalized_min_rate == base


def test_best_target_at_least_as_damaging_as_fixed(models, test_set):
    bs, surrogate = models
    fixed = AttackSpec("analytical", AttackTarget.single(0), 0.2)
    best = AttackSpec("analytical", AttackTarget.best(), 0.2)
    subset = test_set.subset(np.arange(10))
    for i in range(len(subset)):
        a = evaluate_instance(CONFIG, bs, surrogate, subset[i], fixed)
        b = evaluate_instance(CONFIG, bs, surrogate, subset[i], best)
        assert b.achieved_min <= a.achieved_min + 1e-12


def test_loss_comparison_smoke(test_set):
    from advpower.harness import loss_comparison
    from advpower.network import TrainConfig

    tc = TrainConfig(epochs=5, batch_size=8, rng_seed=4, train_fraction=0.5)
    models, scores = loss_comparison(CONFIG, test_set, hidden_sizes=(8, 8),
                                     train_config=tc, test_size=10)
    assert set(scores) == {"mae", "mape", "msle", "custom"}
    for kind, value in scores.items():
        assert np.isfinite(value)
        assert models[kind].spec.hidden_sizes == (8, 8)


def test_uncertainty_sweep_shape(models, test_set):
    bs, surrogate = models
    rows = uncertainty_sweep(CONFIG, bs, surrogate, test_set.subset(np.arange(6)),
                             rho=0.1, ue=0, error_ratios=(0.05, 0.10),
                             noise_seeds=2)
    assert len(rows) == 1 + 2 * 2
    assert rows[0].e_obs == 0.0 and rows[0].e_exec == 0.0
    by_kind = {(r.e_obs, r.e_exec) for r in rows[1:]}
    assert (0.05, 0.0) in by_kind and (0.0, 0.10) in by_kind


def test_results_file_round_trip(models, test_set, tmp_path):
    bs, surrogate = models
    plan = ExperimentPlan(attack_kinds=("scaling",), targets=(AttackTarget.all_ues(),),
                          rhos=(0.1,), test_size=5)
    rows, skipped = run_sweep(plan, CONFIG, bs, surrogate, test_set)
    path = str(tmp_path / "results.tsv")
    save_results(rows, path, meta={"skipped": skipped})
    loaded = load_results(path)
    assert loaded == rows
    with pytest.raises(FileNotFoundError):
        load_results(str(tmp_path / "nope.tsv"))
