"""Feedforward multi-output regressor for the power allocation task.

A dense ReLU stack maps the flattened gain matrix to one logit per
(subcarrier, UE) pair; a softmax scaled by the power budget turns the
logits into an allocation that is feasible by construction (entries
nonnegative and summing to the budget). Forward pass, backpropagation,
input gradients and ADAM are implemented directly on numpy arrays in
float64; nothing here depends on an autodiff framework.

Four training losses are supported: elementwise mean absolute error,
mean absolute percentage error with an additive constant, mean squared
logarithmic error, and a task loss comparing the minimum UE rate of the
predicted allocation against that of the label allocation. The task loss
backpropagates through the analytic rate gradient from the system module.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from advpower.system import SystemConfig, rates_batch

MODEL_FORMAT_VERSION = 1

LOSS_KINDS = ("mae", "mape", "msle", "custom")


class ModelFormatError(ValueError):
    """Model file is unreadable, truncated or inconsistent."""


class TrainingDivergence(RuntimeError):
    def __init__(self, epoch, message="training loss became non-finite"):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


@dataclass(frozen=True)
class NetworkSpec:
    num_subcarriers: int
    num_ues: int
    hidden_sizes: tuple = (1024, 1024, 1024, 512)
    total_power: float = 10.0

    def __post_init__(self):
        sizes = tuple(int(h) for h in self.hidden_sizes)
        if not sizes or any(h < 1 for h in sizes):
            raise ValueError("hidden_sizes must be positive")
        object.__setattr__(self, "hidden_sizes", sizes)
        if self.num_subcarriers < 1 or self.num_ues < 1:
            raise ValueError("dimensions must be positive")
        if not self.total_power > 0:
            raise ValueError("total_power must be > 0")

    @property
    def size(self) -> int:
        return self.num_subcarriers * self.num_ues

    @property
    def layer_sizes(self) -> tuple:
        return (self.size, *self.hidden_sizes, self.size)


@dataclass(frozen=True)
class LossSpec:
    kind: str
    mape_c: float = 10.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.kind == "mape" and not self.mape_c > 0:
            raise ValueError("mape_c must be > 0")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 128
    epochs: int = 100
    rng_seed: int = 0
    train_fraction: float = 0.5

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.train_fraction <= 1:
            raise ValueError("train_fraction must be in (0, 1]")


class NetworkParams:
    """Weight matrices and bias vectors, ordered input to output."""

    def __init__(self, weights, biases):
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")

    def copy(self) -> "NetworkParams":
        return NetworkParams([w.copy() for w in self.weights],
                             [b.copy() for b in self.biases])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) for w in self.weights) and \
            all(np.all(np.isfinite(b)) for b in self.biases)


def init_params(spec: NetworkSpec, rng_seed: int = 0) -> NetworkParams:
    """Uniform init scaled by 1/sqrt(fan_in), zero biases, seed-deterministic."""
    rng = np.random.default_rng(rng_seed)
    sizes = spec.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(weights, biases)


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _forward_cache(params: NetworkParams, spec: NetworkSpec, x):
    """Forward pass keeping activations for backprop. x is (B, NK)."""
    acts = [x]
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        acts.append(np.maximum(acts[-1] @ w + b, 0.0))
    z = acts[-1] @ params.weights[-1] + params.biases[-1]
    soft = _softmax(z)
    return spec.total_power * soft, soft, acts


def forward_batch(params: NetworkParams, spec: NetworkSpec, gains) -> np.ndarray:
    """Allocations for a batch of gain matrices, (B, N, K) -> (B, N, K)."""
    gains = np.asarray(gains, dtype=float)
    batch = gains.reshape(gains.shape[0], -1)
    if batch.shape[1] != spec.size:
        raise ValueError(f"expected {spec.size} inputs, got {batch.shape[1]}")
    if not np.all(np.isfinite(batch)):
        raise ValueError("non-finite network input")
    out, _, _ = _forward_cache(params, spec, batch)
    return out.reshape(gains.shape[0], spec.num_subcarriers, spec.num_ues)


def forward(params: NetworkParams, spec: NetworkSpec, gains) -> np.ndarray:
    """Allocation for a single instance; accepts (NK,) or (N, K)."""
    gains = np.asarray(gains, dtype=float)
    return forward_batch(params, spec, gains.reshape(1, -1, spec.num_ues)
                         if gains.ndim == 1 else gains[None])[0]


def _check_pair(labels, preds):
    labels = np.asarray(labels, dtype=float)
    preds = np.asarray(preds, dtype=float)
    if labels.shape != preds.shape:
        raise ValueError(f"shape mismatch: {labels.shape} vs {preds.shape}")
    return labels, preds


def loss_value(loss: LossSpec, labels, preds, config: SystemConfig, gains=None) -> float:
    """Mean training loss over a batch. labels/preds/gains are (B, N, K)."""
    labels, preds = _check_pair(labels, preds)
    if loss.kind == "mae":
        return float(np.mean(np.abs(labels - preds)))
    if loss.kind == "mape":
        return float(np.mean(np.abs(labels - preds) / (labels + loss.mape_c)))
    if loss.kind == "msle":
        return float(np.mean((np.log1p(labels) - np.log1p(preds)) ** 2))
    if gains is None:
        raise ValueError("the custom loss needs the instance gain matrices")
    gains = np.asarray(gains, dtype=float)
    m_label = rates_batch(gains, labels, config.noise_power).min(axis=-1)
    m_pred = rates_batch(gains, preds, config.noise_power).min(axis=-1)
    return float(np.mean((m_label - m_pred) ** 2))


def _min_rate_pred_grad(config: SystemConfig, gains, preds):
    """Vectorized min rate of predictions and its gradient w.r.t. predictions.

    Returns (m (B,), grad (B, N, K)) where grad rows are the power
    gradient of the argmin UE's rate (subgradient under ties).
    """
    noise = config.noise_power
    rates = rates_batch(gains, preds, noise)
    ues = np.argmin(rates, axis=-1)
    m = np.take_along_axis(rates, ues[:, None], axis=-1)[:, 0]
    g_col = np.take_along_axis(gains, ues[:, None, None], axis=2)[:, :, 0]
    p_own = np.take_along_axis(preds, ues[:, None, None], axis=2)[:, :, 0]
    p_row = preds.sum(axis=-1)
    noise_row = noise[None, :]
    d = noise_row + g_col * (p_row - p_own)
    s = noise_row + g_col * p_row
    ln2 = np.log(2.0)
    cross = -(g_col ** 2) * p_own / (d * s * ln2)
    grad = np.repeat(cross[:, :, None], config.num_ues, axis=2)
    own = g_col / (s * ln2)
    np.put_along_axis(grad, ues[:, None, None] * np.ones_like(grad[:, :, :1], dtype=int),
                      own[:, :, None], axis=2)
    return m, grad


def _loss_grad_wrt_pred(loss: LossSpec, labels, preds, config: SystemConfig, gains):
    """Mean batch loss and its gradient with respect to the predictions."""
    b = labels.shape[0]
    nk = labels.shape[1] * labels.shape[2]
    if loss.kind == "mae":
        value = float(np.mean(np.abs(labels - preds)))
        grad = -np.sign(labels - preds) / (b * nk)
        return value, grad
    if loss.kind == "mape":
        scale = labels + loss.mape_c
        value = float(np.mean(np.abs(labels - preds) / scale))
        grad = -np.sign(labels - preds) / (scale * b * nk)
        return value, grad
    if loss.kind == "msle":
        diff = np.log1p(labels) - np.log1p(preds)
        value = float(np.mean(diff ** 2))
        grad = -2.0 * diff / ((1.0 + preds) * b * nk)
        return value, grad
    m_label = rates_batch(gains, labels, config.noise_power).min(axis=-1)
    m_pred, m_grad = _min_rate_pred_grad(config, gains, preds)
    value = float(np.mean((m_label - m_pred) ** 2))
    grad = (2.0 * (m_pred - m_label) / b)[:, None, None] * m_grad
    return value, grad


def _backward(params: NetworkParams, spec: NetworkSpec, acts, soft, grad_pred):
    """Backpropagate dLoss/dPrediction to parameter and input gradients."""
    # through the scaled softmax: dL/dz_j = p * s_j * (g_j - sum_i g_i s_i)
    g = spec.total_power * grad_pred
    delta = soft * (g - (g * soft).sum(axis=-1, keepdims=True))
    w_grads = [None] * len(params.weights)
    b_grads = [None] * len(params.biases)
    for layer in range(len(params.weights) - 1, -1, -1):
        w_grads[layer] = acts[layer].T @ delta
        b_grads[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ params.weights[layer].T) * (acts[layer] > 0)
        else:
            delta = delta @ params.weights[layer].T
    return w_grads, b_grads, delta


def backprop(params: NetworkParams, spec: NetworkSpec, loss: LossSpec,
             gains, labels, config: SystemConfig, rate_gains=None):
    """Loss, parameter gradients and input gradient for a batch.

    gains feeds the network input; rate_gains (defaulting to gains) feeds
    the rate formula inside the custom loss. They are separate so the
    input gradient can treat the rate-side gains as constants.
    """
    gains = np.asarray(gains, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if rate_gains is None:
        rate_gains = gains
    x = gains.reshape(gains.shape[0], -1)
    preds_flat, soft, acts = _forward_cache(params, spec, x)
    preds = preds_flat.reshape(labels.shape)
    value, grad_pred = _loss_grad_wrt_pred(loss, labels, preds, config, rate_gains)
    w_grads, b_grads, input_grad = _backward(
        params, spec, acts, soft, grad_pred.reshape(x.shape[0], -1))
    return value, (w_grads, b_grads), input_grad.reshape(gains.shape)


def attack_input_gradient(params: NetworkParams, spec: NetworkSpec,
                          gains, config: SystemConfig, reference_min_rate: float,
                          rate_gains=None):
    """Gradient of the squared min-rate error with respect to the input gains.

    The attacked quantity is L = (reference - m(x))^2 where m(x) is the
    minimum UE rate of the network's allocation for input x, evaluated
    with the rate_gains matrix (defaulting to the input itself) held fixed
    inside the rate formula; only the network path is differentiated. When
    the reference equals m(x) exactly, L has a vanishing first-order term;
    the limiting descent-on-m direction (upstream seed -1) is used instead
    so a one-step attacker still gets the direction that lowers m.

    Returns (grad (N, K), m, degenerate_flag).
    """
    gains = np.asarray(gains, dtype=float)
    if rate_gains is None:
        rate_gains = gains
    rate_gains = np.asarray(rate_gains, dtype=float)
    x = gains.reshape(1, -1)
    preds_flat, soft, acts = _forward_cache(params, spec, x)
    preds = preds_flat.reshape(1, spec.num_subcarriers, spec.num_ues)
    m, m_grad = _min_rate_pred_grad(config, rate_gains[None], preds)
    factor = 2.0 * (float(m[0]) - float(reference_min_rate))
    degenerate = factor == 0.0
    seed = (-1.0 if degenerate else factor) * m_grad
    _, _, input_grad = _backward(params, spec, acts, soft, seed.reshape(1, -1))
    return input_grad.reshape(spec.num_subcarriers, spec.num_ues), float(m[0]), degenerate


def normalized_score(params: NetworkParams, spec: NetworkSpec, config: SystemConfig,
                     gains, oracle_min_rates) -> float:
    """Mean ratio of predicted min rate to oracle min rate, skipping degenerates."""
    preds = forward_batch(params, spec, gains)
    mins = rates_batch(np.asarray(gains, dtype=float), preds, config.noise_power).min(axis=-1)
    oracle = np.asarray(oracle_min_rates, dtype=float)
    ok = oracle > 0
    if not ok.any():
        return float("nan")
    return float(np.mean(mins[ok] / oracle[ok]))


def train(spec: NetworkSpec, loss: LossSpec, train_config: TrainConfig, dataset,
          log_every: int = 1, val_cap: int = 200):
    """ADAM training on the leading train_fraction of the dataset.

    Returns (params, log) where log is a list of (epoch, mean train loss,
    normalized min rate on a held-out slice) tuples. Deterministic for a
    fixed seed under single-threaded execution.
    """
    config = dataset.config
    n_total = len(dataset)
    if n_total == 0:
        raise ValueError("dataset is empty")
    n_train = max(1, int(round(n_total * train_config.train_fraction)))
    gains = dataset.gains[:n_train]
    labels = dataset.powers[:n_train]
    val = dataset.subset(np.arange(n_train, min(n_total, n_train + val_cap)))

    params = init_params(spec, train_config.rng_seed)
    rng = np.random.default_rng([train_config.rng_seed, 1])
    m_w = [np.zeros_like(w) for w in params.weights]
    v_w = [np.zeros_like(w) for w in params.weights]
    m_b = [np.zeros_like(b) for b in params.biases]
    v_b = [np.zeros_like(b) for b in params.biases]
    tc = train_config
    step = 0
    log = []
    for epoch in range(tc.epochs):
        order = rng.permutation(n_train)
        epoch_loss = 0.0
        batches = 0
        for lo in range(0, n_train, tc.batch_size):
            idx = order[lo: lo + tc.batch_size]
            value, (w_grads, b_grads), _ = backprop(
                params, spec, loss, gains[idx], labels[idx], config)
            if not np.isfinite(value):
                raise TrainingDivergence(epoch)
            step += 1
            bc1 = 1.0 - tc.beta1 ** step
            bc2 = 1.0 - tc.beta2 ** step
            for i in range(len(params.weights)):
                m_w[i] = tc.beta1 * m_w[i] + (1 - tc.beta1) * w_grads[i]
                v_w[i] = tc.beta2 * v_w[i] + (1 - tc.beta2) * w_grads[i] ** 2
                params.weights[i] -= tc.learning_rate * (m_w[i] / bc1) / (np.sqrt(v_w[i] / bc2) + tc.eps)
                m_b[i] = tc.beta1 * m_b[i] + (1 - tc.beta1) * b_grads[i]
                v_b[i] = tc.beta2 * v_b[i] + (1 - tc.beta2) * b_grads[i] ** 2
                params.biases[i] -= tc.learning_rate * (m_b[i] / bc1) / (np.sqrt(v_b[i] / bc2) + tc.eps)
            epoch_loss += value
            batches += 1
        if not params.all_finite():
            raise TrainingDivergence(epoch)
        if epoch % log_every == 0 or epoch == tc.epochs - 1:
            score = normalized_score(params, spec, config, val.gains, val.min_rates) \
                if len(val) else float("nan")
            log.append((epoch, epoch_loss / max(batches, 1), score))
    return params, log


def write_train_log(log, path: str):
    with open(path, "w") as fh:
        fh.write("epoch\tloss\tval_normalized_min_rate\n")
        for epoch, value, score in log:
            fh.write(f"{epoch}\t{value!r}\t{score!r}\n")


def save_model(params: NetworkParams, spec: NetworkSpec, path: str):
    """Write a self-describing binary model file (JSON header + raw float64)."""
    arrays = []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays.append((f"W{i}", w))
        arrays.append((f"b{i}", b))
    header = {
        "format": "advpower-model",
        "version": MODEL_FORMAT_VERSION,
        "num_subcarriers": spec.num_subcarriers,
        "num_ues": spec.num_ues,
        "hidden_sizes": list(spec.hidden_sizes),
        "total_power": spec.total_power,
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in arrays],
    }
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_model(path: str):
    """Read a model file back; returns (params, spec). Errors are explicit."""
    with open(path, "rb") as fh:
        first = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(first.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"unreadable model header: {exc}") from exc
    if header.get("format") != "advpower-model":
        raise ModelFormatError("not a model file")
    if header.get("version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model version {header.get('version')}")
    spec = NetworkSpec(int(header["num_subcarriers"]), int(header["num_ues"]),
                       tuple(header["hidden_sizes"]), float(header["total_power"]))
    expected_shapes = {}
    sizes = spec.layer_sizes
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        expected_shapes[f"W{i}"] = (fan_in, fan_out)
        expected_shapes[f"b{i}"] = (fan_out,)
    total = 0
    entries = []
    for item in header["arrays"]:
        shape = tuple(int(s) for s in item["shape"])
        name = item["name"]
        if expected_shapes.get(name) != shape:
            raise ModelFormatError(
                f"array {name} has shape {shape}, expected {expected_shapes.get(name)}")
        count = int(np.prod(shape)) if shape else 1
        entries.append((name, shape, count))
        total += count
    if len(entries) != len(expected_shapes):
        raise ModelFormatError("model arrays do not cover every layer")
    if len(payload) != total * 8:
        raise ModelFormatError(
            f"payload has {len(payload)} bytes, expected {total * 8} (truncated file?)")
    flat = np.frombuffer(payload, dtype="<f8")
    weights, biases = [], []
    offset = 0
    for name, shape, count in entries:
        a = flat[offset: offset + count].reshape(shape).copy()
        offset += count
        (weights if name.startswith("W") else biases).append(a)
    return NetworkParams(weights, biases), spec
