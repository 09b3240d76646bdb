"""Downlink multi-subcarrier system model and rate mathematics.

A base station serves K user equipments (UEs) over N orthogonal
subcarriers. Channel gains g_ij in [0, 1] connect subcarrier i to UE j;
the BS splits a total power budget p across the N*K (subcarrier, UE)
pairs. UE j's rate is a sum of per-subcarrier Shannon terms in which the
gain g_ij scales both the useful signal and the intra-subcarrier
interference caused by power sent to the other UEs:

    r_j = sum_i log2(1 + g_ij * p_ij / (sigma_i^2 + g_ij * sum_{k != j} p_ik))

Everything here is a pure function of its inputs, computed in float64.
Analytic gradients of r_j with respect to gains and powers are provided;
both are cross-checked against central finite differences in the tests.

Index convention: all matrices are (N, K) with subcarrier as the row
axis, and UE indices are 0-based throughout the library.
"""

from dataclasses import dataclass

import numpy as np

LN2 = float(np.log(2.0))

# Absolute slack used when deciding whether a transmitted rate exceeds the
# link rate; avoids fp-flip outages when reported gains equal true gains.
OUTAGE_SLACK = 1e-9

# Feasibility tolerance on the total-power constraint.
POWER_SUM_TOL = 1e-9


@dataclass(frozen=True)
class SystemConfig:
    """Problem constants: dimensions, power budget and noise floor.

    noise_power is a length-N vector of per-subcarrier noise powers.
    When omitted it defaults to 1/N on every subcarrier.
    """

    num_subcarriers: int
    num_ues: int
    total_power: float = 10.0
    noise_power: np.ndarray | None = None

    def __post_init__(self):
        if self.num_subcarriers < 1:
            raise ValueError("num_subcarriers must be >= 1")
        if self.num_ues < 1:
            raise ValueError("num_ues must be >= 1")
        if not self.total_power > 0:
            raise ValueError("total_power must be > 0")
        if self.noise_power is None:
            noise = np.full(self.num_subcarriers, 1.0 / self.num_subcarriers)
        else:
            noise = np.asarray(self.noise_power, dtype=float).reshape(-1)
            if noise.shape != (self.num_subcarriers,):
                raise ValueError("noise_power must have one entry per subcarrier")
            if not np.all(noise > 0):
                raise ValueError("noise_power entries must be > 0")
        object.__setattr__(self, "noise_power", noise)

    @property
    def size(self) -> int:
        return self.num_subcarriers * self.num_ues


def check_gains(config: SystemConfig, gains: np.ndarray) -> np.ndarray:
    """Validate a gain matrix: shape (N, K), finite, entries in [0, 1]."""
    gains = np.asarray(gains, dtype=float)
    shape = (config.num_subcarriers, config.num_ues)
    if gains.shape != shape:
        raise ValueError(f"gain matrix must have shape {shape}, got {gains.shape}")
    if not np.all(np.isfinite(gains)):
        raise ValueError("gain matrix contains non-finite entries")
    if gains.min() < 0.0 or gains.max() > 1.0:
        raise ValueError("channel gains must lie in [0, 1]")
    return gains


def check_powers(config: SystemConfig, powers: np.ndarray) -> np.ndarray:
    """Validate a power allocation: nonnegative, total within budget."""
    powers = np.asarray(powers, dtype=float)
    shape = (config.num_subcarriers, config.num_ues)
    if powers.shape != shape:
        raise ValueError(f"power matrix must have shape {shape}, got {powers.shape}")
    if not np.all(np.isfinite(powers)):
        raise ValueError("power matrix contains non-finite entries")
    if powers.min() < 0.0:
        raise ValueError("powers must be nonnegative")
    if powers.sum() > config.total_power + POWER_SUM_TOL:
        raise ValueError("total power exceeds the budget")
    return powers


def _check_shapes(config: SystemConfig, *mats: np.ndarray) -> list[np.ndarray]:
    shape = (config.num_subcarriers, config.num_ues)
    out = []
    for m in mats:
        m = np.asarray(m, dtype=float)
        if m.shape != shape:
            raise ValueError(f"expected shape {shape}, got {m.shape}")
        out.append(m)
    return out


def rates_batch(gains: np.ndarray, powers: np.ndarray, noise_power: np.ndarray) -> np.ndarray:
    """Per-UE rates for a batch of instances.

    gains, powers: (..., N, K); noise_power: (N,). Returns (..., K).
    """
    p_row = powers.sum(axis=-1, keepdims=True)                  # total power per subcarrier
    noise = noise_power[..., :, None]
    s = noise + gains * p_row                                   # signal + interference + noise
    d = noise + gains * (p_row - powers)                        # interference + noise
    return np.log2(s / d).sum(axis=-2)


def rate_per_ue(config: SystemConfig, gains: np.ndarray, powers: np.ndarray) -> np.ndarray:
    """Rate of every UE in bits per channel use, shape (K,)."""
    gains, powers = _check_shapes(config, gains, powers)
    return rates_batch(gains, powers, config.noise_power)


def min_rate(rates: np.ndarray) -> tuple[float, int]:
    """Minimum rate and the 0-based index of the worst UE (lowest index on ties)."""
    rates = np.asarray(rates, dtype=float).reshape(-1)
    if rates.size == 0:
        raise ValueError("rate vector is empty")
    idx = int(np.argmin(rates))
    return float(rates[idx]), idx


def rate_gain_gradient(config: SystemConfig, gains: np.ndarray, powers: np.ndarray, ue: int) -> np.ndarray:
    """d r_ue / d g_i,ue for every subcarrier i, shape (N,).

    Treats the power allocation as fixed (the coupling of powers to gains
    through the allocator is deliberately ignored here). Derived from the
    per-subcarrier rate term by the quotient rule; the inner power sum
    runs over all K UEs.
    """
    gains, powers = _check_shapes(config, gains, powers)
    if not 0 <= ue < config.num_ues:
        raise IndexError(f"ue index {ue} out of range")
    noise = config.noise_power
    g = gains[:, ue]
    p_own = powers[:, ue]
    p_row = powers.sum(axis=1)
    d = noise + g * (p_row - p_own)
    s = noise + g * p_row
    return p_own * noise / (d * s * LN2)


def rate_power_gradient(config: SystemConfig, gains: np.ndarray, powers: np.ndarray, ue: int) -> np.ndarray:
    """d r_ue / d p_ik for all (i, k), shape (N, K).

    The own-UE column (k = ue) is nonnegative; cross columns are
    nonpositive because power lent to other UEs only adds interference.
    """
    gains, powers = _check_shapes(config, gains, powers)
    if not 0 <= ue < config.num_ues:
        raise IndexError(f"ue index {ue} out of range")
    noise = config.noise_power
    g = gains[:, ue]
    p_own = powers[:, ue]
    p_row = powers.sum(axis=1)
    d = noise + g * (p_row - p_own)
    s = noise + g * p_row
    cross = -(g ** 2) * p_own / (d * s * LN2)       # interference raises, rate falls
    grad = np.repeat(cross[:, None], config.num_ues, axis=1)
    grad[:, ue] = g / (s * LN2)
    return grad


def min_rate_power_gradient(config: SystemConfig, gains: np.ndarray, powers: np.ndarray) -> tuple[float, int, np.ndarray]:
    """Value, argmin UE and d(min_j r_j)/dp at the argmin (subgradient at ties)."""
    rates = rate_per_ue(config, gains, powers)
    value, ue = min_rate(rates)
    return value, ue, rate_power_gradient(config, gains, powers, ue)


def achieved_rates(
    config: SystemConfig,
    true_gains: np.ndarray,
    reported_gains: np.ndarray,
    powers: np.ndarray,
    return_outage: bool = False,
):
    """Per-UE achieved rates when the BS allocated from possibly wrong gains.

    The BS transmits at the rate implied by the reported gains; the real
    channel supports the rate implied by the true gains. A UE whose
    transmitted rate exceeds its supportable link rate (beyond a small
    slack) cannot decode and achieves rate zero. Outage is per UE.
    """
    true_gains, reported_gains, powers = _check_shapes(config, true_gains, reported_gains, powers)
    transmitted = rates_batch(reported_gains, powers, config.noise_power)
    link = rates_batch(true_gains, powers, config.noise_power)
    outage = transmitted > link + OUTAGE_SLACK
    achieved = np.where(outage, 0.0, transmitted)
    if return_outage:
        return achieved, outage
    return achieved


def normalized_min_rate(achieved_min: float, oracle_min: float) -> float:
    """Ratio of the achieved minimum rate to the offline optimum for the instance."""
    if oracle_min <= 0.0:
        raise ValueError("degenerate instance: oracle minimum rate is not positive")
    return float(achieved_min) / float(oracle_min)
