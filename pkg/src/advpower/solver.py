"""Offline max-min power allocation solver and labeled dataset generation.

The allocation problem (maximize the worst UE's rate subject to a total
power budget and nonnegativity) is nonconvex because gains couple the
useful signal and the interference. It is solved by ascent on a smoothed
objective

    F_tau(p) = -tau * log sum_j exp(-r_j(p) / tau)

with the temperature tau annealed over a decreasing schedule and
multi-start restarts. Ascent iterations alternate projected gradient
steps (feasibility repaired by clipping negatives and rescaling onto
{p >= 0, sum p <= total}) with pairwise power transfers between
coordinates; the transfers are what allow a run to vacate an entry
entirely instead of equalizing around it. The best start is kept by
exact minimum rate.

All heavy paths are batched: a solve processes (instances x starts) rows
as one stacked array, with per-row adaptive step sizes. Per-instance RNG
streams are derived from (seed, instance index) so results are identical
no matter how instances are chunked.
"""

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from advpower.system import LN2, POWER_SUM_TOL, SystemConfig, check_gains, rates_batch

DATASET_FORMAT_VERSION = 1

DEFAULT_SMOOTHING = (1.0, 0.31622776601683794, 0.1, 0.03162277660168379, 0.01)


class SolverFailure(RuntimeError):
    """Raised when the solver produced non-finite values for an instance."""

    def __init__(self, message, gains=None):
        super().__init__(message)
        self.gains = gains


@dataclass(frozen=True)
class SolverConfig:
    num_starts: int = 8
    max_iters: int = 150
    smoothing_schedule: tuple = DEFAULT_SMOOTHING
    step_size: float = 1.0
    convergence_tol: float = 1e-10
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_starts < 1:
            raise ValueError("num_starts must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        sched = tuple(float(t) for t in self.smoothing_schedule)
        if not sched or any(t <= 0 for t in sched):
            raise ValueError("smoothing_schedule must contain positive temperatures")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ValueError("smoothing_schedule must be strictly decreasing")
        object.__setattr__(self, "smoothing_schedule", sched)
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")


@dataclass(frozen=True)
class LabeledInstance:
    gains: np.ndarray
    powers: np.ndarray
    oracle_min_rate: float


class Dataset:
    """Array-backed sequence of labeled instances plus generation metadata."""

    def __init__(self, config: SystemConfig, gains, powers, min_rates, meta=None):
        self.config = config
        self.gains = np.asarray(gains, dtype=float)
        self.powers = np.asarray(powers, dtype=float)
        self.min_rates = np.asarray(min_rates, dtype=float)
        if not (len(self.gains) == len(self.powers) == len(self.min_rates)):
            raise ValueError("inconsistent dataset array lengths")
        self.meta = dict(meta or {})

    def __len__(self):
        return len(self.min_rates)

    def __getitem__(self, i) -> LabeledInstance:
        return LabeledInstance(self.gains[i], self.powers[i], float(self.min_rates[i]))

    def subset(self, index) -> "Dataset":
        return Dataset(self.config, self.gains[index], self.powers[index],
                       self.min_rates[index], self.meta)


def _project(powers: np.ndarray, total: float) -> np.ndarray:
    """Clip negatives to zero, then rescale uniformly if the sum exceeds total."""
    p = np.maximum(powers, 0.0)
    s = p.sum(axis=(-2, -1), keepdims=True)
    scale = np.where(s > total, total / np.maximum(s, 1e-300), 1.0)
    return p * scale


def _softmin_value_grad(gains, powers, noise, tau):
    """Smoothed minimum rate and its gradient w.r.t. powers, batched over rows."""
    p_row = powers.sum(axis=-1, keepdims=True)
    noise_col = noise[:, None]
    s = noise_col + gains * p_row
    d = noise_col + gains * (p_row - powers)
    rates = np.log2(s / d).sum(axis=-2)                        # (B, K)
    m = rates.min(axis=-1, keepdims=True)
    w = np.exp(-(rates - m) / tau)
    z = w.sum(axis=-1, keepdims=True)
    value = (m - tau * np.log(z))[..., 0]                      # stable logsumexp form
    w = w / z                                                  # weights concentrate on the min
    own = gains / (s * LN2)                                    # d r_j / d p_ij at (i, j)
    cross = gains * gains * powers / (s * d * LN2)             # |d r_j / d p_ik|, k != j
    wj = w[..., None, :]
    tot = (wj * cross).sum(axis=-1, keepdims=True)
    grad = wj * (own + cross) - tot
    return value, grad


def _direction(powers, grad, total):
    """Ascent direction: tangential to the budget face when pushing outward.

    With raw gradients, the clip-and-rescale projection admits spurious
    fixed points (gradient proportional to powers); removing the mean
    component on the face restores the balanced-gradient optimality
    condition while the projection still repairs feasibility.
    """
    nk = powers.shape[-2] * powers.shape[-1]
    grad_sum = grad.sum(axis=(-2, -1), keepdims=True)
    p_sum = powers.sum(axis=(-2, -1), keepdims=True)
    on_face = (p_sum >= total - 1e-9) & (grad_sum > 0)
    return np.where(on_face, grad - grad_sum / nk, grad)


def _ascend(gains_rows, powers, noise, total, solver: SolverConfig, start_stage=None):
    """Run annealed ascent on stacked (rows, N, K) instances.

    Iterations alternate between two move types, each accepted only if it
    improves the smoothed objective, with per-row adaptive step sizes:

    - a projected gradient step along the budget-face tangential direction
      (fast rate equalization);
    - a pairwise mass transfer from the active coordinate with the worst
      gradient to the coordinate with the best one. This is what lets a
      run vacate an interference-polluting power entry entirely: near the
      smoothed minimum the gradient is blind to rate losses of UEs above
      the minimum, and pure gradient steps keep feeding such entries.

    start_stage optionally delays a row's entry into the annealing
    schedule; late entries refine their start locally at low temperature
    instead of being funneled into the high-temperature basin first.
    """
    rows = powers.shape[0]
    n, k = powers.shape[-2:]
    nk = n * k
    if start_stage is None:
        start_stage = np.zeros(rows, dtype=int)
    step = np.full(rows, solver.step_size)
    tstep = np.full(rows, 0.25)                # transfer size, fraction of the budget
    row_idx = np.arange(rows)
    for stage, tau in enumerate(solver.smoothing_schedule):
        value, grad = _softmin_value_grad(gains_rows, powers, noise, tau)
        frozen = start_stage > stage
        for it in range(solver.max_iters):
            if frozen.all():
                break
            pair_move = it % 2 == 1
            if pair_move:
                gf = grad.reshape(rows, nk)
                pf = powers.reshape(rows, nk)
                dst = np.argmax(gf, axis=1)
                src = np.argmin(np.where(pf > 1e-14, gf, np.inf), axis=1)
                amount = np.minimum(tstep * total, pf[row_idx, src])
                cand = pf.copy()
                cand[row_idx, src] -= amount
                cand[row_idx, dst] += amount
                cand = cand.reshape(rows, n, k)
            else:
                d = _direction(powers, grad, total)
                cand = _project(powers + step[:, None, None] * d, total)
            cand_value, cand_grad = _softmin_value_grad(gains_rows, cand, noise, tau)
            ok = (cand_value > value) & ~frozen
            improve = np.where(ok, cand_value - value, 0.0)
            upd = ok[:, None, None]
            powers = np.where(upd, cand, powers)
            grad = np.where(upd, cand_grad, grad)
            value = np.where(ok, cand_value, value)
            shrink = ~ok & ~frozen
            if pair_move:
                tstep = np.where(ok, np.minimum(tstep * 1.5, 1.0),
                                 np.where(shrink, tstep * 0.5, tstep))
                small = tstep < 1e-4
            else:
                step = np.where(ok, step * 1.2, np.where(shrink, step * 0.5, step))
                small = step < solver.step_size * 1e-3
            # a row is done once it accepted only a negligible improvement
            # while already taking small steps of the current move type
            frozen |= ok & (improve < solver.convergence_tol) & small
        step = np.minimum(np.maximum(step, solver.step_size * 1e-3), solver.step_size)
        tstep = np.minimum(np.maximum(tstep, 1e-3), 0.25)
    return powers


def _solve_batch(config: SystemConfig, gains: np.ndarray, solver: SolverConfig, instance_ids):
    """Solve a batch of instances; returns (powers (B,N,K), min_rates (B,))."""
    n, k = config.num_subcarriers, config.num_ues
    total = config.total_power
    batch = gains.shape[0]
    s = solver.num_starts
    starts = np.empty((batch, s, n, k))
    starts[:, 0] = total / (n * k)                             # uniform start first
    stage_of_start = np.zeros(s, dtype=int)
    n_stages = len(solver.smoothing_schedule)
    for b in range(batch):
        rng = np.random.default_rng([solver.rng_seed, int(instance_ids[b])])
        for j in range(1, s):
            if j % 2 == 1:
                w = rng.uniform(size=(n, k))
            else:
                # spiky simplex draws reach near-orthogonal corner optima
                w = rng.gamma(0.3, size=(n, k)) + 1e-12
            starts[b, j] = total * w / w.sum()
            stage_of_start[j] = j % n_stages
    gains_rows = np.repeat(gains[:, None], s, axis=1).reshape(batch * s, n, k)
    start_stage = np.tile(stage_of_start, batch)
    powers = _ascend(gains_rows, starts.reshape(batch * s, n, k), config.noise_power,
                     total, solver, start_stage=start_stage)
    mins = rates_batch(gains_rows, powers, config.noise_power).min(axis=-1)
    mins = mins.reshape(batch, s)
    best = np.argmax(mins, axis=1)                             # ties: lowest start index
    powers = powers.reshape(batch, s, n, k)[np.arange(batch), best]
    best_min = rates_batch(powers=powers, gains=gains, noise_power=config.noise_power).min(axis=-1)
    return powers, best_min


def solve_maxmin(config: SystemConfig, gains: np.ndarray, solver: SolverConfig | None = None):
    """Best feasible allocation found for one instance and its exact minimum rate."""
    solver = solver or SolverConfig()
    gains = check_gains(config, gains)
    powers, mins = _solve_batch(config, gains[None], solver, instance_ids=[0])
    powers, value = powers[0], float(mins[0])
    if not (np.all(np.isfinite(powers)) and np.isfinite(value)):
        raise SolverFailure("solver produced non-finite values", gains=gains)
    return powers, value


def brute_force_oracle(config: SystemConfig, gains: np.ndarray, grid_points: int):
    """Exhaustive max-min search on a power grid; verification oracle for tiny cases.

    Enumerates every allocation whose entries lie on a uniform grid of
    grid_points levels in [0, total] and whose sum respects the budget.
    """
    if config.size > 6:
        raise ValueError("brute force limited to N*K <= 6")
    if grid_points < 5:
        raise ValueError("grid_points must be >= 5")
    gains = check_gains(config, gains)
    n, k = config.num_subcarriers, config.num_ues
    total = config.total_power
    levels = np.linspace(0.0, total, grid_points)
    nk = config.size
    tail = min(nk, 4)
    grids = np.meshgrid(*([levels] * tail), indexing="ij")
    tail_pts = np.stack([g.ravel() for g in grids], axis=1)
    tail_sums = tail_pts.sum(axis=1)

    best_value = -np.inf
    best_powers = None
    head_levels = [()] if nk == tail else [
        tuple(levels[list(idx)])
        for idx in np.ndindex(*([grid_points] * (nk - tail)))
    ]
    for head in head_levels:
        head_sum = float(sum(head))
        mask = tail_sums <= total - head_sum + POWER_SUM_TOL
        if not mask.any():
            continue
        pts = tail_pts[mask]
        full = np.empty((len(pts), nk))
        full[:, : nk - tail] = head
        full[:, nk - tail:] = pts
        powers = full.reshape(-1, n, k)
        mins = rates_batch(np.broadcast_to(gains, powers.shape), powers,
                           config.noise_power).min(axis=-1)
        i = int(np.argmax(mins))
        if mins[i] > best_value:
            best_value = float(mins[i])
            best_powers = powers[i].copy()
    return best_powers, best_value


def generate_dataset(
    config: SystemConfig,
    count: int,
    solver: SolverConfig | None = None,
    rng_seed: int = 0,
    distribution: str = "uniform",
    path: str | None = None,
    chunk_instances: int = 1024,
) -> Dataset:
    """Sample gain matrices, label them with the offline solver, optionally save.

    Gains are drawn i.i.d. from the configured distribution over [0, 1]
    (one RNG stream per instance, derived from (rng_seed, index)).
    Instances on which the solver fails are resampled from the same
    stream; the meta dict reports resample and degenerate counts.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if distribution != "uniform":
        raise ValueError(f"unknown gain distribution: {distribution!r}")
    solver = solver or SolverConfig()
    n, k = config.num_subcarriers, config.num_ues

    all_gains = np.empty((count, n, k))
    all_powers = np.empty((count, n, k))
    all_mins = np.empty(count)
    resampled = 0

    gain_rngs = [np.random.default_rng([rng_seed, i]) for i in range(count)]
    pending = list(range(count))
    for i in pending:
        all_gains[i] = gain_rngs[i].uniform(0.0, 1.0, size=(n, k))
    while pending:
        for lo in range(0, len(pending), chunk_instances):
            ids = pending[lo: lo + chunk_instances]
            powers, mins = _solve_batch(config, all_gains[ids], solver, instance_ids=ids)
            all_powers[ids] = powers
            all_mins[ids] = mins
        bad = [i for i in pending
               if not (np.all(np.isfinite(all_powers[i])) and np.isfinite(all_mins[i]))]
        pending = bad
        for i in pending:
            all_gains[i] = gain_rngs[i].uniform(0.0, 1.0, size=(n, k))
            resampled += 1
        if resampled > 100 * count:
            raise SolverFailure("dataset generation kept failing", gains=None)

    degenerate = int(np.sum(all_mins <= 0.0))
    meta = {
        "format_version": DATASET_FORMAT_VERSION,
        "num_subcarriers": n,
        "num_ues": k,
        "total_power": config.total_power,
        "noise_power": [float(x) for x in config.noise_power],
        "distribution": distribution,
        "seed": int(rng_seed),
        "count": int(count),
        "resampled": int(resampled),
        "degenerate_count": degenerate,
        "solver": {
            "num_starts": solver.num_starts,
            "max_iters": solver.max_iters,
            "smoothing_schedule": list(solver.smoothing_schedule),
            "step_size": solver.step_size,
            "convergence_tol": solver.convergence_tol,
            "rng_seed": solver.rng_seed,
        },
    }
    ds = Dataset(config, all_gains, all_powers, all_mins, meta)
    if path is not None:
        save_dataset(ds, path)
    return ds


def _columns(n, k):
    gain_cols = [f"g_{i + 1}_{j + 1}" for i in range(n) for j in range(k)]
    power_cols = [f"p_{i + 1}_{j + 1}" for i in range(n) for j in range(k)]
    return gain_cols + power_cols + ["min_rate"]


def save_dataset(dataset: Dataset, path: str):
    """Write the text table (gains, powers, min rate per row) plus a JSON sidecar."""
    n, k = dataset.config.num_subcarriers, dataset.config.num_ues
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_columns(n, k))
        for i in range(len(dataset)):
            row = [repr(float(x)) for x in dataset.gains[i].ravel()]
            row += [repr(float(x)) for x in dataset.powers[i].ravel()]
            row.append(repr(float(dataset.min_rates[i])))
            writer.writerow(row)
    os.replace(tmp, path)
    with open(path + ".meta.json.tmp", "w") as fh:
        json.dump(dataset.meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(path + ".meta.json.tmp", path + ".meta.json")


def load_dataset(path: str) -> Dataset:
    """Read a dataset table and its sidecar back into arrays."""
    meta_path = path + ".meta.json"
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset file not found: {path}")
    if not os.path.exists(meta_path):
        raise FileNotFoundError(f"dataset sidecar not found: {meta_path}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    if meta.get("format_version") != DATASET_FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format version: {meta.get('format_version')}")
    n, k = int(meta["num_subcarriers"]), int(meta["num_ues"])
    config = SystemConfig(n, k, total_power=float(meta["total_power"]),
                          noise_power=np.asarray(meta["noise_power"]))
    expected = _columns(n, k)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected:
            raise ValueError("dataset columns do not match the declared dimensions")
        rows = [[float(x) for x in row] for row in reader]
    data = np.asarray(rows, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2 * n * k + 1:
        raise ValueError("malformed dataset rows")
    gains = data[:, : n * k].reshape(-1, n, k)
    powers = data[:, n * k: 2 * n * k].reshape(-1, n, k)
    mins = data[:, -1]
    return Dataset(config, gains, powers, mins, meta)
