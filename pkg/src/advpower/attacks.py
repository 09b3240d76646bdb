"""Budget-constrained perturbations of the channel gains reported to the BS.

Three attack families share one budget convention: the total absolute
change is capped by a fraction rho of the targeted gains' sum, measured
on the gains the adversary observed.

- scaling: multiply targeted gains by (1 - rho); the benchmark.
- analytical: rank (subcarrier, UE) pairs by the analytic rate gradient
  computed from the adversary's surrogate allocation, then spend the
  budget decreasing the most damaging gains, never below a small floor.
  Only ever decreases gains, so it never causes outage; the damage is
  pure misallocation at the BS.
- fgm: one step of the fast gradient method on the surrogate's min-rate
  error loss; the raw input gradient is shifted to be nonnegative on the
  targeted coordinates and rescaled to spend the budget exactly.

Two uncertainty models bracket an imperfect adversary: a multiplicative
error on each observed gain, and a multiplicative error on each executed
change. Both draw independent uniform factors per entry, seeded.
"""

from dataclasses import dataclass

import numpy as np

from advpower.network import NetworkParams, NetworkSpec, attack_input_gradient, forward
from advpower.system import SystemConfig, min_rate, rate_gain_gradient, rate_per_ue

DEFAULT_EPSILON = 1e-3


@dataclass(frozen=True)
class AttackTarget:
    """Which UEs the adversary may touch: one fixed UE, the best UE, or all."""

    kind: str
    ue: int | None = None

    def __post_init__(self):
        if self.kind not in ("single", "best", "all"):
            raise ValueError(f"unknown target kind {self.kind!r}")
        if self.kind == "single":
            if self.ue is None or self.ue < 0:
                raise ValueError("single-UE target needs a UE index")
        elif self.ue is not None:
            raise ValueError(f"{self.kind} target takes no UE index")

    @classmethod
    def single(cls, ue: int) -> "AttackTarget":
        return cls("single", ue)

    @classmethod
    def best(cls) -> "AttackTarget":
        return cls("best")

    @classmethod
    def all_ues(cls) -> "AttackTarget":
        return cls("all")


def parse_target(text: str) -> AttackTarget:
    """Parse 'single:J' (J is 1-based), 'best' or 'all'."""
    if text == "best":
        return AttackTarget.best()
    if text == "all":
        return AttackTarget.all_ues()
    if text.startswith("single:"):
        ue = int(text.split(":", 1)[1])
        if ue < 1:
            raise ValueError("UE labels are 1-based")
        return AttackTarget.single(ue - 1)
    raise ValueError(f"cannot parse target {text!r}")


def format_target(target: AttackTarget) -> str:
    if target.kind == "single":
        return f"single:{target.ue + 1}"
    return target.kind


@dataclass(frozen=True)
class UncertaintyModel:
    """Adversary-side errors: observed gain in [(1-e)g, (1+e)g], executed
    change in [(1-e)c, (1+e)c], uniform and independent per entry."""

    observation_error: float = 0.0
    execution_error: float = 0.0
    rng_seed: tuple | int = 0

    def __post_init__(self):
        if self.observation_error < 0 or self.execution_error < 0:
            raise ValueError("error ratios must be >= 0")


def attack_budget(gains: np.ndarray, target: AttackTarget, rho: float) -> float:
    """Absolute L1 budget: rho times the targeted gains' sum."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must be in [0, 1]")
    if target.kind == "single":
        return rho * float(gains[:, target.ue].sum())
    return rho * float(gains.sum())


def scaling_attack(gains: np.ndarray, target: AttackTarget, rho: float) -> np.ndarray:
    """Benchmark: scale targeted gains down by (1 - rho)."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must be in [0, 1]")
    delta = np.zeros_like(gains)
    if target.kind == "single":
        delta[:, target.ue] = -rho * gains[:, target.ue]
    else:
        delta[:] = -rho * gains
    return delta


def analytical_attack_single(config: SystemConfig, gains: np.ndarray,
                             surrogate_powers: np.ndarray, ue: int, budget: float,
                             epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Spend the budget decreasing the target UE's gains in gradient order.

    Subcarriers are visited by non-increasing rate gradient (computed with
    the surrogate's power allocation). A gain large enough to absorb the
    remaining budget takes all of it; otherwise it is pushed down to the
    floor epsilon and the walk continues. Gains already at or below the
    floor are skipped so the budget is never refunded.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    delta = np.zeros_like(gains)
    remaining = float(budget)
    if remaining <= 0.0:
        return delta
    eta = rate_gain_gradient(config, gains, surrogate_powers, ue)
    for i in np.argsort(-eta, kind="stable"):
        g = gains[i, ue]
        if g <= epsilon:
            continue
        if g >= remaining + epsilon:
            delta[i, ue] = -remaining
            break
        delta[i, ue] = epsilon - g
        remaining -= g - epsilon
    return delta


def analytical_attack_all(config: SystemConfig, gains: np.ndarray,
                          surrogate_powers: np.ndarray, budget: float,
                          epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Attack every UE, most damaging first.

    UEs are ranked by the column sum of the rate gradient. While the
    remaining budget covers a UE's whole gain column, that column is
    driven to zero exactly; the first UE it cannot cover gets the
    single-UE walk with whatever budget is left, and the attack stops.
    """
    delta = np.zeros_like(gains)
    remaining = float(budget)
    if remaining <= 0.0:
        return delta
    totals = np.array([
        rate_gain_gradient(config, gains, surrogate_powers, j).sum()
        for j in range(config.num_ues)
    ])
    for j in np.argsort(-totals, kind="stable"):
        column = float(gains[:, j].sum())
        if remaining >= column:
            delta[:, j] = -gains[:, j]
            remaining -= column
        else:
            delta += analytical_attack_single(config, gains, surrogate_powers,
                                              j, remaining, epsilon)
            break
    return delta


def fgm_attack(params: NetworkParams, spec: NetworkSpec, config: SystemConfig,
               observed_gains: np.ndarray, target: AttackTarget, budget: float,
               reference_min_rate: float, sign: int = 1):
    """One fast-gradient step on the surrogate's min-rate error loss.

    The input gradient is restricted to the targeted coordinates; if its
    minimum there is negative it is shifted up by that minimum so every
    component is nonnegative, then scaled to an exact L1 size of budget.
    Returns (delta, zero_gradient_flag); the flag marks the degenerate
    all-zero-gradient case where no perturbation can be formed.

    sign=+1 steps up the squared error of the minimum rate against the
    reference; sign=-1 flips the raw gradient before the shift.
    """
    if target.kind == "best":
        raise ValueError("best-UE selection wraps the single-UE attack")
    delta = np.zeros_like(observed_gains)
    if budget <= 0.0:
        return delta, False
    grad, _, _ = attack_input_gradient(params, spec, observed_gains, config,
                                       reference_min_rate)
    grad = sign * grad
    if target.kind == "single":
        mask = np.zeros_like(observed_gains, dtype=bool)
        mask[:, target.ue] = True
    else:
        mask = np.ones_like(observed_gains, dtype=bool)
    grad = np.where(mask, grad, 0.0)
    low = grad[mask].min()
    if low < 0.0:
        grad = np.where(mask, grad - low, 0.0)
    norm = np.abs(grad).sum()
    if norm == 0.0:
        return delta, True
    return budget * grad / norm, False


def observe_gains(true_gains: np.ndarray, uncertainty: UncertaintyModel) -> np.ndarray:
    """The adversary's noisy view of the gains, clamped back into [0, 1]."""
    if uncertainty.observation_error == 0.0:
        return true_gains.copy()
    rng = np.random.default_rng((uncertainty.rng_seed, 0))
    e = uncertainty.observation_error
    factors = rng.uniform(1.0 - e, 1.0 + e, size=true_gains.shape)
    return np.clip(true_gains * factors, 0.0, 1.0)


def apply_perturbation(true_gains: np.ndarray, delta: np.ndarray,
                       uncertainty: UncertaintyModel) -> np.ndarray:
    """Execute intended changes (with execution error) onto the true gains.

    Each intended change is scaled by an independent uniform factor in
    [1-e, 1+e]; the resulting reported gains are clamped to [0, 1].
    """
    if true_gains.shape != delta.shape:
        raise ValueError("delta shape does not match the gain matrix")
    if uncertainty.execution_error == 0.0:
        executed = delta
    else:
        rng = np.random.default_rng((uncertainty.rng_seed, 1))
        e = uncertainty.execution_error
        executed = delta * rng.uniform(1.0 - e, 1.0 + e, size=delta.shape)
    return np.clip(true_gains + executed, 0.0, 1.0)


def best_ue_selection(attack_fn, observed_gains: np.ndarray, rho: float, evaluate_fn):
    """Hypothetical genie: try every UE, keep the most damaging one.

    attack_fn(ue, budget) builds the candidate perturbation; evaluate_fn
    (delta) returns the end-to-end achieved minimum rate. Ties break to
    the lowest UE index.
    """
    num_ues = observed_gains.shape[1]
    best_ue, best_delta, best_value = 0, None, np.inf
    for ue in range(num_ues):
        budget = rho * float(observed_gains[:, ue].sum())
        delta = attack_fn(ue, budget)
        value = evaluate_fn(delta)
        if value < best_value:
            best_ue, best_delta, best_value = ue, delta, value
    return best_ue, best_delta


def surrogate_reference_min_rate(params: NetworkParams, spec: NetworkSpec,
                                 config: SystemConfig, observed_gains: np.ndarray) -> float:
    """Default attack reference: the surrogate's own clean-input minimum rate."""
    powers = forward(params, spec, observed_gains)
    value, _ = min_rate(rate_per_ue(config, observed_gains, powers))
    return value
