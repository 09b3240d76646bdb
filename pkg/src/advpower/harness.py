"""End-to-end attack evaluation: pipeline, sweeps, loss and uncertainty studies.

The evaluation order for one instance is fixed: the adversary observes
the true gains (observation error), crafts its perturbation from what it
observed, the intended changes execute onto the true gains (execution
error, then clamping), the BS allocates power from the reported gains,
and per-UE achieved rates follow the outage rule against the true gains.
The headline metric is the achieved minimum rate normalized by the
offline solver's minimum rate for the same instance, averaged over a
test set; instances whose oracle rate is not positive are skipped and
counted.
"""

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from advpower.attacks import (
    AttackTarget,
    UncertaintyModel,
    analytical_attack_all,
    analytical_attack_single,
    apply_perturbation,
    attack_budget,
    best_ue_selection,
    fgm_attack,
    format_target,
    observe_gains,
    scaling_attack,
    surrogate_reference_min_rate,
)
from advpower.network import (
    LossSpec,
    NetworkParams,
    NetworkSpec,
    TrainConfig,
    forward,
    train,
)
from advpower.solver import Dataset, LabeledInstance
from advpower.system import SystemConfig, achieved_rates

RESULTS_FORMAT_VERSION = 1

ATTACK_KINDS = ("none", "scaling", "analytical", "fgm")

RESULT_COLUMNS = ("attack", "target", "rho", "e_obs", "e_exec",
                  "mean_normalized_min_rate", "count", "outage_fraction", "seed")


@dataclass(frozen=True)
class ModelHandle:
    """A network plus its provenance (the BS model or an adversary surrogate)."""

    params: NetworkParams
    spec: NetworkSpec
    provenance: str = "independently-trained"


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    target: AttackTarget = AttackTarget.all_ues()
    rho: float = 0.0
    epsilon: float = 1e-3
    fgm_sign: int = 1
    fgm_reference: str = "surrogate"     # or "label": use the solver min rate

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must be in [0, 1]")
        if self.fgm_reference not in ("surrogate", "label"):
            raise ValueError("fgm_reference must be 'surrogate' or 'label'")


@dataclass(frozen=True)
class ExperimentPlan:
    attack_kinds: tuple = ("scaling", "analytical", "fgm")
    targets: tuple = (AttackTarget.single(0), AttackTarget.all_ues())
    rhos: tuple = (0.0, 0.02, 0.05, 0.10)
    uncertainty: UncertaintyModel = UncertaintyModel()
    test_size: int = 500
    master_seed: int = 0
    epsilon: float = 1e-3
    fgm_sign: int = 1
    fgm_reference: str = "surrogate"

    def __post_init__(self):
        for kind in self.attack_kinds:
            if kind not in ATTACK_KINDS:
                raise ValueError(f"unknown attack kind {kind!r}")
        if any(not 0.0 <= r <= 1.0 for r in self.rhos):
            raise ValueError("rho values must be in [0, 1]")


@dataclass(frozen=True)
class ResultRow:
    attack: str
    target: str
    rho: float
    e_obs: float
    e_exec: float
    mean_normalized_min_rate: float
    count: int
    outage_fraction: float
    seed: int


@dataclass(frozen=True)
class InstanceOutcome:
    achieved_min: float
    normalized: float      # nan when the instance is degenerate
    degenerate: bool
    outage: np.ndarray
    delta: np.ndarray
    reported: np.ndarray
    allocation: np.ndarray


def _craft_delta(config, surrogate: ModelHandle, observed, attack: AttackSpec,
                 evaluate_candidate, oracle_min_rate=None):
    """Build the intended perturbation from the adversary's observed gains."""
    if attack.kind == "none" or attack.rho == 0.0:
        return np.zeros_like(observed)
    if attack.kind == "scaling":
        if attack.target.kind == "best":
            def scale_fn(ue, budget):
                return scaling_attack(observed, AttackTarget.single(ue), attack.rho)
            _, delta = best_ue_selection(scale_fn, observed, attack.rho, evaluate_candidate)
            return delta
        return scaling_attack(observed, attack.target, attack.rho)

    surrogate_powers = forward(surrogate.params, surrogate.spec, observed)
    if attack.kind == "analytical":
        if attack.target.kind == "all":
            budget = attack_budget(observed, attack.target, attack.rho)
            return analytical_attack_all(config, observed, surrogate_powers,
                                         budget, attack.epsilon)
        if attack.target.kind == "single":
            budget = attack_budget(observed, attack.target, attack.rho)
            return analytical_attack_single(config, observed, surrogate_powers,
                                            attack.target.ue, budget, attack.epsilon)

        def single_fn(ue, budget):
            return analytical_attack_single(config, observed, surrogate_powers,
                                            ue, budget, attack.epsilon)
        _, delta = best_ue_selection(single_fn, observed, attack.rho, evaluate_candidate)
        return delta

    # fgm
    if attack.fgm_reference == "label" and oracle_min_rate is not None:
        reference = float(oracle_min_rate)
    else:
        reference = surrogate_reference_min_rate(surrogate.params, surrogate.spec,
                                                 config, observed)
    if attack.target.kind == "best":
        def fgm_fn(ue, budget):
            delta, _ = fgm_attack(surrogate.params, surrogate.spec, config, observed,
                                  AttackTarget.single(ue), budget, reference,
                                  attack.fgm_sign)
            return delta
        _, delta = best_ue_selection(fgm_fn, observed, attack.rho, evaluate_candidate)
        return delta
    budget = attack_budget(observed, attack.target, attack.rho)
    delta, _ = fgm_attack(surrogate.params, surrogate.spec, config, observed,
                          attack.target, budget, reference, attack.fgm_sign)
    return delta


def evaluate_instance(config: SystemConfig, bs: ModelHandle, surrogate: ModelHandle,
                      instance: LabeledInstance, attack: AttackSpec | None,
                      uncertainty: UncertaintyModel | None = None) -> InstanceOutcome:
    """Run the full pipeline on one labeled instance.

    Order: observe -> craft (budget from observed gains) -> execute with
    error and clamping -> BS allocates from reported gains -> per-UE
    outage-aware achieved rates -> normalize by the oracle minimum rate.
    """
    uncertainty = uncertainty or UncertaintyModel()
    true_gains = instance.gains
    if attack is None or attack.kind == "none":
        delta = np.zeros_like(true_gains)
        reported = true_gains
    else:
        observed = observe_gains(true_gains, uncertainty)

        def evaluate_candidate(candidate_delta):
            rep = apply_perturbation(true_gains, candidate_delta, uncertainty)
            alloc = forward(bs.params, bs.spec, rep)
            ach = achieved_rates(config, true_gains, rep, alloc)
            return float(ach.min())

        delta = _craft_delta(config, surrogate, observed, attack, evaluate_candidate,
                             oracle_min_rate=instance.oracle_min_rate)
        reported = apply_perturbation(true_gains, delta, uncertainty)
    allocation = forward(bs.params, bs.spec, reported)
    achieved, outage = achieved_rates(config, true_gains, reported, allocation,
                                      return_outage=True)
    achieved_min = float(achieved.min())
    degenerate = instance.oracle_min_rate <= 0.0
    normalized = float("nan") if degenerate else achieved_min / instance.oracle_min_rate
    return InstanceOutcome(achieved_min, normalized, degenerate, outage,
                           delta, reported, allocation)


def _per_instance_uncertainty(base: UncertaintyModel, index: int) -> UncertaintyModel:
    seed = base.rng_seed if isinstance(base.rng_seed, tuple) else (base.rng_seed,)
    return replace(base, rng_seed=seed + (index,))


def evaluate_cell(config, bs, surrogate, test_set: Dataset, attack,
                  uncertainty: UncertaintyModel):
    """Evaluate one grid cell over the test set; returns per-instance arrays."""
    normalized = []
    outage_any = []
    skipped = 0
    for i in range(len(test_set)):
        outcome = evaluate_instance(config, bs, surrogate, test_set[i], attack,
                                    _per_instance_uncertainty(uncertainty, i))
        if outcome.degenerate:
            skipped += 1
            continue
        normalized.append(outcome.normalized)
        outage_any.append(bool(outcome.outage.any()))
    return np.array(normalized), np.array(outage_any, dtype=bool), skipped


def run_sweep(plan: ExperimentPlan, config: SystemConfig, bs: ModelHandle,
              surrogate: ModelHandle, test_set: Dataset):
    """One ResultRow per grid cell plus a leading no-attack baseline row."""
    if len(test_set) > plan.test_size:
        test_set = test_set.subset(np.arange(plan.test_size))
    rows = []
    skipped_total = 0
    unc = plan.uncertainty

    norm, outage, skipped = evaluate_cell(config, bs, surrogate, test_set, None, unc)
    rows.append(ResultRow("none", "-", 0.0, unc.observation_error, unc.execution_error,
                          float(norm.mean()) if norm.size else float("nan"),
                          int(norm.size), float(outage.mean()) if outage.size else 0.0,
                          plan.master_seed))
    skipped_total += skipped

    for kind in plan.attack_kinds:
        for target in plan.targets:
            for rho in plan.rhos:
                attack = AttackSpec(kind, target, rho, epsilon=plan.epsilon,
                                    fgm_sign=plan.fgm_sign,
                                    fgm_reference=plan.fgm_reference)
                norm, outage, skipped = evaluate_cell(config, bs, surrogate,
                                                      test_set, attack, unc)
                skipped_total += skipped
                rows.append(ResultRow(
                    kind, format_target(target), rho,
                    unc.observation_error, unc.execution_error,
                    float(norm.mean()) if norm.size else float("nan"),
                    int(norm.size),
                    float(outage.mean()) if outage.size else 0.0,
                    plan.master_seed))
    return rows, skipped_total


def loss_comparison(config: SystemConfig, dataset: Dataset, hidden_sizes,
                    train_config: TrainConfig, test_size: int = 500,
                    loss_kinds=("mae", "mape", "msle", "custom"), mape_c: float = 10.0):
    """Train one model per loss kind from identical seeds; score without attack.

    Returns (models, scores): dicts keyed by loss kind. The score is the
    mean normalized minimum rate on held-out instances, evaluated through
    the same pipeline as the sweeps (no adversary present).
    """
    spec = NetworkSpec(config.num_subcarriers, config.num_ues,
                       tuple(hidden_sizes), config.total_power)
    n_train = max(1, int(round(len(dataset) * train_config.train_fraction)))
    test = dataset.subset(np.arange(n_train, min(len(dataset), n_train + test_size)))
    models = {}
    scores = {}
    for kind in loss_kinds:
        params, _ = train(spec, LossSpec(kind, mape_c), train_config, dataset)
        handle = ModelHandle(params, spec, provenance="bs")
        norm, _, _ = evaluate_cell(config, handle, handle, test, None, UncertaintyModel())
        models[kind] = handle
        scores[kind] = float(norm.mean())
    return models, scores


def uncertainty_sweep(config: SystemConfig, bs: ModelHandle, surrogate: ModelHandle,
                      test_set: Dataset, rho: float = 0.10, ue: int = 0,
                      error_ratios=(0.05, 0.10, 0.15, 0.20), noise_seeds: int = 10,
                      base_seed: int = 0, epsilon: float = 1e-3):
    """Analytical single-UE attack under both error models, one row per cell.

    Each cell is averaged over noise_seeds independent uncertainty seeds
    on top of the test-set average. A leading error-free row is included
    as the comparison point.
    """
    attack = AttackSpec("analytical", AttackTarget.single(ue), rho, epsilon=epsilon)
    rows = []
    norm, outage, _ = evaluate_cell(config, bs, surrogate, test_set, attack,
                                    UncertaintyModel())
    rows.append(ResultRow("analytical", format_target(attack.target), rho, 0.0, 0.0,
                          float(norm.mean()), int(norm.size), float(outage.mean()),
                          base_seed))
    for error_kind in ("observation", "execution"):
        for e in error_ratios:
            means = []
            outs = []
            for rep in range(noise_seeds):
                unc = UncertaintyModel(
                    observation_error=e if error_kind == "observation" else 0.0,
                    execution_error=e if error_kind == "execution" else 0.0,
                    rng_seed=(base_seed, rep))
                norm, outage, _ = evaluate_cell(config, bs, surrogate, test_set,
                                                attack, unc)
                means.append(float(norm.mean()))
                outs.append(float(outage.mean()))
            rows.append(ResultRow(
                "analytical", format_target(attack.target), rho,
                e if error_kind == "observation" else 0.0,
                e if error_kind == "execution" else 0.0,
                float(np.mean(means)), int(norm.size), float(np.mean(outs)),
                base_seed))
    return rows


def save_results(rows, path: str, meta=None):
    """Fixed-column TSV plus a JSON sidecar with run metadata."""
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write("\t".join(RESULT_COLUMNS) + "\n")
        for r in rows:
            fh.write("\t".join([
                r.attack, r.target, repr(r.rho), repr(r.e_obs), repr(r.e_exec),
                repr(r.mean_normalized_min_rate), str(r.count),
                repr(r.outage_fraction), str(r.seed),
            ]) + "\n")
    os.replace(tmp, path)
    sidecar = {"format_version": RESULTS_FORMAT_VERSION, "rows": len(rows)}
    sidecar.update(meta or {})
    with open(path + ".meta.json.tmp", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    os.replace(path + ".meta.json.tmp", path + ".meta.json")


def load_results(path: str):
    if not os.path.exists(path):
        raise FileNotFoundError(f"results file not found: {path}")
    rows = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != list(RESULT_COLUMNS):
            raise ValueError("unexpected results columns")
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            rows.append(ResultRow(parts[0], parts[1], float(parts[2]), float(parts[3]),
                                  float(parts[4]), float(parts[5]), int(parts[6]),
                                  float(parts[7]), int(parts[8])))
    return rows
