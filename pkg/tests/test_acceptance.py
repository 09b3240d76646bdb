"""Acceptance suite: every release criterion at its stated tolerance.

Builds the desk-scale artifacts once per session (8000-instance dataset,
four BS models, one surrogate), then checks each criterion and prints one
pass/fail line. Set ADVPOWER_ACCEPT_CACHE=<dir> to reuse artifacts across
runs while iterating.

Desk profile: N=4, K=3, hidden sizes (128, 128, 128, 64), 4000 training
instances, ADAM at 3e-3 for 800 epochs, 500 held-out test instances.
"""

import os
import time

import numpy as np
import pytest

from advpower.attacks import (
    AttackTarget,
    UncertaintyModel,
    analytical_attack_all,
    analytical_attack_single,
    apply_perturbation,
    fgm_attack,
    surrogate_reference_min_rate,
)
from advpower.harness import (
    AttackSpec,
    ExperimentPlan,
    ModelHandle,
    evaluate_instance,
    run_sweep,
    uncertainty_sweep,
)
from advpower.network import (
    LossSpec,
    NetworkSpec,
    TrainConfig,
    backprop,
    forward_batch,
    init_params,
    load_model,
    loss_value,
    save_model,
    train,
)
from advpower.solver import (
    SolverConfig,
    brute_force_oracle,
    generate_dataset,
    load_dataset,
    save_dataset,
    solve_maxmin,
)
from advpower.system import (
    POWER_SUM_TOL,
    SystemConfig,
    achieved_rates,
    rate_gain_gradient,
    rate_per_ue,
    rate_power_gradient,
)

N, K = 4, 3
DESK_HIDDEN = (128, 128, 128, 64)
DESK_TRAIN = dict(learning_rate=3e-3, epochs=800, batch_size=128, train_fraction=0.5)
DATASET_COUNT = 8000          # half trains (4000), the rest is held out
DATASET_SEED = 101
BS_SEED = 7
SURROGATE_SEED = 8
TEST_SLICE = slice(4000, 4500)


def _report(name, elapsed, budget, detail=""):
    extra = f" ({detail})" if detail else ""
    print(f"[PASS] {name}: {elapsed:.1f}s of {budget:.0f}s allowed{extra}")


def rel_err(a, b, floor=1e-8):
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.max(np.abs(a - b) / scale)


@pytest.fixture(scope="session")
def artifacts(tmp_path_factory):
    """Dataset plus trained models for the desk-scale criteria."""
    cache = os.environ.get("ADVPOWER_ACCEPT_CACHE")
    root = cache if cache else str(tmp_path_factory.mktemp("accept"))
    os.makedirs(root, exist_ok=True)
    config = SystemConfig(N, K, total_power=10.0)
    ds_path = os.path.join(root, "dataset.csv")
    if not os.path.exists(ds_path):
        ds = generate_dataset(config, count=DATASET_COUNT, rng_seed=DATASET_SEED)
        save_dataset(ds, ds_path)
    dataset = load_dataset(ds_path)
    spec = NetworkSpec(N, K, DESK_HIDDEN, 10.0)

    models = {}
    for kind in ("mae", "mape", "msle", "custom"):
        path = os.path.join(root, f"bs_{kind}.model")
        if not os.path.exists(path):
            params, _ = train(spec, LossSpec(kind),
                              TrainConfig(rng_seed=BS_SEED, **DESK_TRAIN), dataset)
            save_model(params, spec, path)
        params, _ = load_model(path)
        models[kind] = ModelHandle(params, spec, provenance="bs")

    surrogate_path = os.path.join(root, "surrogate.model")
    if not os.path.exists(surrogate_path):
        params, _ = train(spec, LossSpec("custom"),
                          TrainConfig(rng_seed=SURROGATE_SEED, **DESK_TRAIN), dataset)
        save_model(params, spec, surrogate_path)
    s_params, _ = load_model(surrogate_path)
    surrogate = ModelHandle(s_params, spec, provenance="independently-trained")
    return {
        "config": config,
        "dataset": dataset,
        "spec": spec,
        "models": models,
        "surrogate": surrogate,
        "test": dataset.subset(np.arange(TEST_SLICE.start, TEST_SLICE.stop)),
    }


def test_criterion_1_rate_gradient_fidelity():
    t0 = time.monotonic()
    rng = np.random.default_rng(1001)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 11))
        config = SystemConfig(n, 3, total_power=10.0)
        gains = rng.uniform(0.05, 1.0, size=(n, 3))
        powers = rng.uniform(0.05, 1.0, size=(n, 3))
        powers *= 10.0 / powers.sum()
        ue = int(rng.integers(0, 3))
        h = 1e-6

        fd_gain = np.zeros(n)
        for i in range(n):
            up, dn = gains.copy(), gains.copy()
            up[i, ue] += h
            dn[i, ue] -= h
            fd_gain[i] = (rate_per_ue(config, up, powers)[ue]
                          - rate_per_ue(config, dn, powers)[ue]) / (2 * h)
        worst = max(worst, rel_err(rate_gain_gradient(config, gains, powers, ue), fd_gain))

        fd_power = np.zeros((n, 3))
        for i in range(n):
            for k in range(3):
                up, dn = powers.copy(), powers.copy()
                up[i, k] += h
                dn[i, k] -= h
                fd_power[i, k] = (rate_per_ue(config, gains, up)[ue]
                                  - rate_per_ue(config, gains, dn)[ue]) / (2 * h)
        worst = max(worst, rel_err(rate_power_gradient(config, gains, powers, ue), fd_power))
    elapsed = time.monotonic() - t0
    assert worst < 1e-5, f"worst relative error {worst:.2e}"
    assert elapsed < 10.0
    _report("criterion 1 rate gradient fidelity", elapsed, 10, f"max rel err {worst:.1e}")


def test_criterion_2_network_gradient_fidelity():
    t0 = time.monotonic()
    config = SystemConfig(N, K, total_power=10.0)
    spec = NetworkSpec(N, K, hidden_sizes=(8, 8), total_power=10.0)
    rng = np.random.default_rng(2002)
    gains = rng.uniform(0.05, 0.95, size=(3, N, K))
    logits = rng.normal(size=(3, N * K))
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    labels = (10.0 * e / e.sum(axis=1, keepdims=True)).reshape(3, N, K)
    params = init_params(spec, 2002)
    for b in params.biases:
        b += rng.normal(scale=0.05, size=b.shape)
    h = 1e-6
    worst = 0.0

    def loss_at(loss):
        preds = forward_batch(params, spec, gains)
        return loss_value(loss, labels, preds, config, gains=gains)

    for kind in ("mae", "mape", "msle", "custom"):
        loss = LossSpec(kind)
        _, (w_an, b_an), x_an = backprop(params, spec, loss, gains, labels, config,
                                         rate_gains=gains)
        for arrs, ans in ((params.weights, w_an), (params.biases, b_an)):
            for a, an in zip(arrs, ans):
                flat = a.reshape(-1)
                fd = np.zeros_like(flat)
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + h
                    up = loss_at(loss)
                    flat[i] = orig - h
                    dn = loss_at(loss)
                    flat[i] = orig
                    fd[i] = (up - dn) / (2 * h)
                worst = max(worst, rel_err(an.reshape(-1), fd))
        fd_x = np.zeros_like(gains)
        frozen = gains.copy()
        for idx in np.ndindex(gains.shape):
            up, dn = frozen.copy(), frozen.copy()
            up[idx] += h
            dn[idx] -= h
            f_up = loss_value(loss, labels, forward_batch(params, spec, up), config,
                              gains=frozen)
            f_dn = loss_value(loss, labels, forward_batch(params, spec, dn), config,
                              gains=frozen)
            fd_x[idx] = (f_up - f_dn) / (2 * h)
        worst = max(worst, rel_err(x_an, fd_x))
    elapsed = time.monotonic() - t0
    assert worst < 1e-4, f"worst relative error {worst:.2e}"
    assert elapsed < 30.0
    _report("criterion 2 network gradient fidelity", elapsed, 30, f"max rel err {worst:.1e}")


def test_criterion_3_solver_soundness():
    t0 = time.monotonic()
    config = SystemConfig(2, 2, total_power=10.0)
    rng = np.random.default_rng(3003)
    worst_gap = -np.inf
    for _ in range(50):
        gains = rng.uniform(0, 1, (2, 2))
        powers, v_solver = solve_maxmin(config, gains, SolverConfig())
        assert powers.min() >= 0
        assert powers.sum() <= 10.0 + POWER_SUM_TOL
        _, v_grid = brute_force_oracle(config, gains, 21)
        worst_gap = max(worst_gap, v_grid - v_solver)
        assert v_solver >= v_grid - 0.05, f"solver {v_solver} vs grid {v_grid}"
    elapsed = time.monotonic() - t0
    assert elapsed < 120.0
    _report("criterion 3 solver soundness", elapsed, 120, f"worst deficit {worst_gap:+.4f} bits")


def test_criterion_4_loss_function_ordering(artifacts):
    t0 = time.monotonic()
    config = artifacts["config"]
    test = artifacts["test"]
    scores = {}
    for kind, handle in artifacts["models"].items():
        values = []
        for i in range(len(test)):
            out = evaluate_instance(config, handle, handle, test[i], None)
            if not out.degenerate:
                values.append(out.normalized)
        scores[kind] = float(np.mean(values))
    elapsed = time.monotonic() - t0
    custom = scores["custom"]
    assert custom >= 0.85, f"custom reached only {custom:.4f}"
    for kind in ("mae", "mape", "msle"):
        gap = custom - scores[kind]
        assert gap >= 0.02, f"custom vs {kind} gap only {gap:.4f}"
    assert elapsed < 3600.0
    detail = ", ".join(f"{k} {v:.4f}" for k, v in sorted(scores.items()))
    _report("criterion 4 loss ordering", elapsed, 3600, detail)


def test_criterion_5_attack_ordering(artifacts):
    t0 = time.monotonic()
    config = artifacts["config"]
    bs = artifacts["models"]["custom"]
    surrogate = artifacts["surrogate"]
    plan = ExperimentPlan(attack_kinds=("scaling", "analytical", "fgm"),
                          targets=(AttackTarget.single(0), AttackTarget.all_ues()),
                          rhos=(0.05, 0.10), test_size=500, master_seed=0)
    rows, _ = run_sweep(plan, config, bs, surrogate, artifacts["test"])
    cell = {(r.attack, r.target, r.rho): r.mean_normalized_min_rate for r in rows}
    for rho in (0.05, 0.10):
        fgm_all = cell[("fgm", "all", rho)]
        ana_all = cell[("analytical", "all", rho)]
        sca_all = cell[("scaling", "all", rho)]
        assert fgm_all <= ana_all + 1e-12, f"rho={rho}: fgm {fgm_all} > analytical {ana_all}"
        assert ana_all <= sca_all + 1e-12, f"rho={rho}: analytical {ana_all} > scaling {sca_all}"
        assert sca_all - fgm_all >= 0.05, f"rho={rho}: fgm vs scaling gap {sca_all - fgm_all:.4f}"
        for kind in ("analytical", "fgm"):
            all_ue = cell[(kind, "all", rho)]
            ue1 = cell[(kind, "single:1", rho)]
            assert all_ue <= ue1 + 1e-12, f"rho={rho}: {kind} all {all_ue} > single {ue1}"
    elapsed = time.monotonic() - t0
    assert elapsed < 600.0
    detail = (f"rho=0.10: fgm {cell[('fgm', 'all', 0.10)]:.4f} <= "
              f"analytical {cell[('analytical', 'all', 0.10)]:.4f} <= "
              f"scaling {cell[('scaling', 'all', 0.10)]:.4f}")
    _report("criterion 5 attack ordering", elapsed, 600, detail)


def test_criterion_6_zero_budget_identity(artifacts):
    t0 = time.monotonic()
    config = artifacts["config"]
    bs = artifacts["models"]["custom"]
    surrogate = artifacts["surrogate"]
    test = artifacts["test"]
    checked = 0
    for i in range(50):
        base = evaluate_instance(config, bs, surrogate, test[i], None)
        for kind in ("scaling", "analytical", "fgm"):
            for target in (AttackTarget.single(0), AttackTarget.all_ues(),
                           AttackTarget.best()):
                attack = AttackSpec(kind, target, 0.0)
                out = evaluate_instance(config, bs, surrogate, test[i], attack)
                assert out.normalized == base.normalized    # bitwise
                assert out.achieved_min == base.achieved_min
                checked += 1
    elapsed = time.monotonic() - t0
    assert elapsed < 60.0
    _report("criterion 6 zero-budget identity", elapsed, 60, f"{checked} attack cells bitwise")


def test_criterion_7_uncertainty_robustness(artifacts):
    t0 = time.monotonic()
    config = artifacts["config"]
    bs = artifacts["models"]["custom"]
    surrogate = artifacts["surrogate"]
    rows = uncertainty_sweep(config, bs, surrogate, artifacts["test"], rho=0.10, ue=0,
                             error_ratios=(0.05, 0.10, 0.15, 0.20), noise_seeds=10,
                             base_seed=3)
    base = rows[0].mean_normalized_min_rate
    worst_delta = -np.inf
    for row in rows[1:]:
        delta = row.mean_normalized_min_rate - base
        worst_delta = max(worst_delta, delta)
        e = row.e_obs or row.e_exec
        kind = "gain" if row.e_obs > 0 else "change"
        assert delta <= 0.02, f"{kind} error {e:.0%} shifted the mean by {delta:+.4f}"
    elapsed = time.monotonic() - t0
    assert elapsed < 900.0
    _report("criterion 7 uncertainty robustness", elapsed, 900,
            f"base {base:.4f}, worst delta {worst_delta:+.4f}")


def test_criterion_8_invariant_suites():
    t0 = time.monotonic()
    rng = np.random.default_rng(8008)
    config = SystemConfig(N, K, total_power=10.0)
    spec = NetworkSpec(N, K, hidden_sizes=(8, 8), total_power=10.0)
    params = init_params(spec, 88)
    eps = 1e-3

    # budget soundness, column locality, floor, direction: 1000 cases each family
    for _ in range(1000):
        gains = rng.uniform(0, 1, (N, K))
        powers = rng.uniform(0.01, 1, (N, K))
        powers *= 10.0 / powers.sum()
        ue = int(rng.integers(0, K))
        budget = float(rng.uniform(0, 2.0))

        delta_s = analytical_attack_single(config, gains, powers, ue, budget, eps)
        assert np.abs(delta_s).sum() <= budget + 1e-9
        assert np.all(np.delete(delta_s, ue, axis=1) == 0)
        assert np.all(delta_s <= 0)
        touched = delta_s[:, ue] != 0
        assert np.all(gains[touched, ue] + delta_s[touched, ue] >= eps - 1e-12)

        delta_a = analytical_attack_all(config, gains, powers, budget, eps)
        assert np.abs(delta_a).sum() <= budget + 1e-9
        assert np.all(delta_a <= 0)

        ref = surrogate_reference_min_rate(params, spec, config, gains) + 0.25
        delta_f, flag = fgm_attack(params, spec, config, gains,
                                   AttackTarget.all_ues(), budget, ref)
        if not flag and budget > 0:
            assert abs(np.abs(delta_f).sum() - budget) <= 1e-9 * max(budget, 1.0)
        assert np.all(delta_f >= 0)

        # clamp range under execution error
        unc = UncertaintyModel(execution_error=0.2, rng_seed=int(rng.integers(1 << 31)))
        reported = apply_perturbation(gains, delta_f, unc)
        assert reported.min() >= 0.0 and reported.max() <= 1.0

        # outage soundness: gain-decreasing attacks never zero a UE
        reported_dec = apply_perturbation(gains, delta_a, UncertaintyModel())
        achieved, outage = achieved_rates(config, gains, reported_dec, powers,
                                          return_outage=True)
        assert not outage.any()

    # output simplex: predictions sum to the budget for 1000 random inputs
    gains_batch = rng.uniform(0, 1, (1000, N, K))
    out = forward_batch(params, spec, gains_batch)
    assert np.all(out >= 0)
    assert np.allclose(out.sum(axis=(1, 2)), 10.0, rtol=1e-6)

    elapsed = time.monotonic() - t0
    assert elapsed < 120.0
    _report("criterion 8 invariant suites", elapsed, 120, "1000 cases per family")


def test_monotone_damage_trend(artifacts):
    # supporting harness property: mean normalized min rate non-increasing
    # in rho (0.5-point slack), 200 instances
    config = artifacts["config"]
    bs = artifacts["models"]["custom"]
    surrogate = artifacts["surrogate"]
    test = artifacts["test"].subset(np.arange(200))
    plan = ExperimentPlan(attack_kinds=("scaling", "analytical", "fgm"),
                          targets=(AttackTarget.all_ues(),),
                          rhos=(0.0, 0.02, 0.05, 0.10), test_size=200, master_seed=1)
    rows, _ = run_sweep(plan, config, bs, surrogate, test)
    for kind in ("scaling", "analytical", "fgm"):
        series = [r.mean_normalized_min_rate for r in rows
                  if r.attack == kind and r.target == "all"]
        for a, b in zip(series, series[1:]):
            assert b <= a + 0.005, f"{kind}: {series}"
