"""Adversarial perturbation study for DNN-based max-min downlink power allocation.

The package is organised as a plain numpy library:

- system: domain types and the analytic rate mathematics
- solver: offline max-min allocation oracle and dataset generation
- network: from-scratch feedforward regressor, losses, ADAM training
- attacks: scaling benchmark, analytical gradient attack, FGM attack
- harness: end-to-end evaluation pipeline and experiment sweeps
- cli: command-line entry points (gen-data, train, attack, sweep, report)
"""

from advpower.attacks import (
    AttackTarget,
    UncertaintyModel,
    analytical_attack_all,
    analytical_attack_single,
    apply_perturbation,
    attack_budget,
    fgm_attack,
    observe_gains,
    scaling_attack,
)
from advpower.harness import (
    AttackSpec,
    ExperimentPlan,
    ModelHandle,
    ResultRow,
    evaluate_instance,
    loss_comparison,
    run_sweep,
    uncertainty_sweep,
)
from advpower.network import (
    LossSpec,
    NetworkParams,
    NetworkSpec,
    TrainConfig,
    forward,
    load_model,
    save_model,
    train,
)
from advpower.solver import (
    Dataset,
    LabeledInstance,
    SolverConfig,
    brute_force_oracle,
    generate_dataset,
    load_dataset,
    save_dataset,
    solve_maxmin,
)
from advpower.system import (
    SystemConfig,
    achieved_rates,
    min_rate,
    normalized_min_rate,
    rate_gain_gradient,
    rate_per_ue,
    rate_power_gradient,
)

__version__ = "0.1.0"

__all__ = [
    "AttackSpec",
    "AttackTarget",
    "Dataset",
    "ExperimentPlan",
    "LabeledInstance",
    "LossSpec",
    "ModelHandle",
    "NetworkParams",
    "NetworkSpec",
    "ResultRow",
    "SolverConfig",
    "SystemConfig",
    "TrainConfig",
    "UncertaintyModel",
    "achieved_rates",
    "analytical_attack_all",
    "analytical_attack_single",
    "apply_perturbation",
    "attack_budget",
    "brute_force_oracle",
    "evaluate_instance",
    "fgm_attack",
    "forward",
    "generate_dataset",
    "load_dataset",
    "load_model",
    "loss_comparison",
    "min_rate",
    "normalized_min_rate",
    "observe_gains",
    "rate_gain_gradient",
    "rate_per_ue",
    "rate_power_gradient",
    "run_sweep",
    "save_dataset",
    "save_model",
    "scaling_attack",
    "solve_maxmin",
    "train",
    "uncertainty_sweep",
    "__version__",
]
