"""Cornering-stiffness regression: simulator data, a numpy MLP and Adam training.

Features are ``[vx, vy, delta, ax, omega]`` and targets ``[cf, cr]`` in N/rad.
Targets are the secant stiffness ``Fy(alpha) / alpha`` of the plant's Pacejka
curve, i.e. the linear-tire stiffness that reproduces the current force.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import DegenerateTargets, DivergenceDetected
from .lpv import STIFFNESS_MAX, STIFFNESS_MIN, StiffnessPair
from .vehicle import (PacejkaCoeffs, VehicleParams, VehicleState, drag_force, pacejka_force,
                      simulate_period, slip_angles)

FEATURES = ("vx", "vy", "delta", "ax", "omega")
TARGETS = ("cf", "cr")
HIDDEN_LAYERS = (16, 28, 16, 9)
SMALL_SLIP = 1e-4


# --------------------------------------------------------------------------- data

def secant_stiffness(alpha: float, coeffs: PacejkaCoeffs, axle: str) -> float:
    if abs(alpha) < SMALL_SLIP:
        value = coeffs.slope(axle)
    else:
        value = pacejka_force(alpha, coeffs, axle) / alpha
    return min(max(value, STIFFNESS_MIN), STIFFNESS_MAX)


@dataclass
class StiffnessDataset:
    X: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.X)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(FEATURES + TARGETS)
            for row in np.hstack([self.X, self.y]):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "StiffnessDataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != FEATURES + TARGETS:
                raise ValueError(f"unexpected dataset header {header}")
            rows = np.array([[float(v) for v in r] for r in reader if r])
        rows = rows.reshape(-1, len(header))
        return cls(rows[:, :5], rows[:, 5:], {"source": str(path)})


def generate_dataset(params: VehicleParams, coeffs: PacejkaCoeffs, n_points: int = 10752,
                     seed: int = 0, ts: float = 0.033, episode_steps: int = 60) -> StiffnessDataset:
    """Label randomized open-loop maneuvers with the plant's secant stiffness.

    Each episode starts at a random speed in [5, 25] m/s and applies a steering
    step or sine sweep (amplitude up to pi/6, scaled down with speed so most
    episodes stay drivable) plus a longitudinal command equal to the drag
    balance +-3 m/s^2. Samples leaving the 5-25 m/s window end the episode.
    """
    if n_points < 1000:
        raise ValueError("n_points must be at least 1000")
    rng = np.random.default_rng(seed)
    X, y = [], []
    n_episodes = 0
    while len(X) < n_points:
        n_episodes += 1
        vx0 = rng.uniform(5.0, 25.0)
        # lateral acceleration budget of roughly 0.3-1.1 g at the start speed
        wheelbase = params.lf + params.lr
        amp_cap = min(math.pi / 6, rng.uniform(0.3, 1.1) * params.g * wheelbase / vx0 ** 2)
        amp = rng.uniform(0.0, amp_cap) * rng.choice([-1.0, 1.0])
        kind = rng.integers(3)
        freq = rng.uniform(0.2, 1.5)
        t_step = rng.uniform(0.0, 0.6)
        dax = rng.uniform(-3.0, 3.0)
        state = VehicleState(vx0, 0.0, 0.0, 0.0, 0.0)
        for i in range(episode_steps):
            t = i * ts
            if kind == 0:
                delta = amp if t >= t_step else 0.0
            elif kind == 1:
                delta = amp * math.sin(2 * math.pi * freq * t)
            else:
                delta = amp * math.sin(2 * math.pi * freq * t) * min(1.0, t / 1.0)
            ax = drag_force(state.vx, 0.0, params) / params.m + dax
            af, ar = slip_angles(state, delta, params)
            X.append((state.vx, state.vy, delta, ax, state.omega))
            y.append((secant_stiffness(af, coeffs, "front"), secant_stiffness(ar, coeffs, "rear")))
            if len(X) >= n_points:
                break
            state = simulate_period(state, (delta, ax), 0.0, 0.0, params, coeffs, ts)
            if not (5.0 <= state.vx <= 25.0) or not all(math.isfinite(v) for v in state):
                break
    meta = {"seed": seed, "episodes": n_episodes, "rows": len(X), "ts": ts}
    return StiffnessDataset(np.array(X), np.array(y), meta)


# --------------------------------------------------------------------------- model

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class MlpModel:
    """Fully connected net, logistic hidden layers and a linear output.

    Inputs and targets are standardized with the stored constants; ``forward``
    returns physical units clamped to ``clamp``.
    """

    sizes: tuple
    weights: list
    biases: list
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    clamp: tuple = (STIFFNESS_MIN, STIFFNESS_MAX)

    @classmethod
    def init(cls, sizes: Sequence[int], rng, x_mean=None, x_std=None, y_mean=None, y_std=None):
        weights, biases = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / (n_in + n_out))
            weights.append(rng.uniform(-limit, limit, size=(n_in, n_out)))
            biases.append(np.zeros(n_out))
        n_in, n_out = sizes[0], sizes[-1]
        return cls(tuple(sizes), weights, biases,
                   np.zeros(n_in) if x_mean is None else np.asarray(x_mean, float),
                   np.ones(n_in) if x_std is None else np.asarray(x_std, float),
                   np.zeros(n_out) if y_mean is None else np.asarray(y_mean, float),
                   np.ones(n_out) if y_std is None else np.asarray(y_std, float))

    def standardize(self, X):
        return (np.asarray(X, float) - self.x_mean) / self.x_std

    def destandardize_targets(self, Z):
        return Z * self.y_std + self.y_mean

    def standardize_targets(self, Y):
        return (np.asarray(Y, float) - self.y_mean) / self.y_std

    def to_json(self) -> dict:
        return {
            "layer_sizes": list(self.sizes),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "x_mean": self.x_mean.tolist(), "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean.tolist(), "y_std": self.y_std.tolist(),
            "clamp": list(self.clamp),
            "features": list(FEATURES), "targets": list(TARGETS),
        }

    @classmethod
    def from_json(cls, data: dict) -> "MlpModel":
        return cls(tuple(data["layer_sizes"]),
                   [np.array(w, float) for w in data["weights"]],
                   [np.array(b, float) for b in data["biases"]],
                   np.array(data["x_mean"], float), np.array(data["x_std"], float),
                   np.array(data["y_mean"], float), np.array(data["y_std"], float),
                   tuple(data.get("clamp", (STIFFNESS_MIN, STIFFNESS_MAX))))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "MlpModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def forward_standardized(model: MlpModel, Z):
    """Pass on standardized inputs; returns the list of layer activations."""
    acts = [Z]
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        pre = acts[-1] @ W + b
        acts.append(pre if i == last else _sigmoid(pre))
    return acts


def forward_raw(model: MlpModel, X) -> np.ndarray:
    """Physical-unit predictions without clamping."""
    X = np.atleast_2d(np.asarray(X, float))
    return model.destandardize_targets(forward_standardized(model, model.standardize(X))[-1])


def forward(model: MlpModel, X) -> np.ndarray:
    return np.clip(forward_raw(model, X), *model.clamp)


def predict_stiffness(model: MlpModel, vx, vy, delta, ax, omega) -> StiffnessPair:
    """Single-sample prediction clamped to the LPV stiffness range.

    Written out with plain loops over small arrays; this runs every control period.
    """
    z = (np.array([vx, vy, delta, ax, omega]) - model.x_mean) / model.x_std
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = z @ W + b
        if i != last:
            z = _sigmoid(z)
    cf, cr = z * model.y_std + model.y_mean
    return StiffnessPair(float(cf), float(cr)).clamped()


def mse_and_gradients(model: MlpModel, Z, T):
    """Mean squared error over all outputs and its gradients (standardized space)."""
    acts = forward_standardized(model, Z)
    n = Z.shape[0]
    diff = acts[-1] - T
    loss = float(np.mean(diff ** 2))
    delta = 2.0 * diff / diff.size
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i:
            a = acts[i]
            delta = (delta @ model.weights[i].T) * a * (1.0 - a)
    return loss, grads_w, grads_b


@dataclass
class TrainConfig:
    epochs: int = 2500
    batch_size: int = 64
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    validation_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate < 0:
            raise ValueError("invalid training hyperparameters")


def train(model: MlpModel, Z_train, T_train, Z_val, T_val, cfg: TrainConfig):
    """Mini-batch Adam on standardized data. Updates ``model`` in place.

    Returns per-epoch (train_loss, val_loss) lists, losses measured after each epoch.
    """
    if cfg.batch_size > len(Z_train):
        raise ValueError("batch_size exceeds the training set")
    rng = np.random.default_rng(cfg.seed)
    params = model.weights + model.biases
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    step = 0
    train_hist, val_hist = [], []
    n = len(Z_train)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, gw, gb = mse_and_gradients(model, Z_train[idx], T_train[idx])
            step += 1
            corr1 = 1.0 - cfg.beta1 ** step
            corr2 = 1.0 - cfg.beta2 ** step
            lr = cfg.learning_rate * math.sqrt(corr2) / corr1
            for p, g, a, b in zip(params, gw + gb, m1, m2):
                a *= cfg.beta1
                a += (1.0 - cfg.beta1) * g
                b *= cfg.beta2
                b += (1.0 - cfg.beta2) * g * g
                p -= lr * a / (np.sqrt(b) + cfg.eps * math.sqrt(corr2))
        train_loss = float(np.mean((forward_standardized(model, Z_train)[-1] - T_train) ** 2))
        val_loss = (float(np.mean((forward_standardized(model, Z_val)[-1] - T_val) ** 2))
                    if len(Z_val) else float("nan"))
        train_hist.append(train_loss)
        val_hist.append(val_loss)
        if not math.isfinite(train_loss):
            raise DivergenceDetected(f"non-finite training loss at epoch {epoch}",
                                     (train_hist, val_hist))
    return train_hist, val_hist


def r2_score(predictions, targets) -> float:
    """Coefficient of determination, averaged uniformly over output columns."""
    p = np.asarray(predictions, float)
    t = np.asarray(targets, float)
    if p.ndim == 1:
        p, t = p[:, None], t[:, None]
    if len(t) < 2:
        raise DegenerateTargets("need at least two rows")
    ss_tot = ((t - t.mean(axis=0)) ** 2).sum(axis=0)
    if np.any(ss_tot == 0):
        raise DegenerateTargets("target variance is zero")
    ss_res = ((t - p) ** 2).sum(axis=0)
    return float(np.mean(1.0 - ss_res / ss_tot))


class StiffnessRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper: standardize, split, train, predict clamped stiffness.

    ``validation_fraction`` of the rows (shuffled with ``random_state``) is held
    out for the validation loss curve and ``validation_r2_``.
    """

    def __init__(self, hidden_layer_sizes=HIDDEN_LAYERS, epochs=2500, batch_size=64,
                 learning_rate=5e-4, validation_fraction=0.25, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        y = y.reshape(len(y), -1)
        cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                          learning_rate=self.learning_rate,
                          validation_fraction=self.validation_fraction, seed=self.random_state)
        rng = np.random.default_rng(self.random_state)
        order = rng.permutation(len(X))
        n_train = int(round(len(X) * (1.0 - cfg.validation_fraction)))
        tr, va = order[:n_train], order[n_train:]
        x_std = X[tr].std(axis=0)
        y_std = y[tr].std(axis=0)
        x_std[x_std == 0] = 1.0
        y_std[y_std == 0] = 1.0
        sizes = (X.shape[1],) + tuple(self.hidden_layer_sizes) + (y.shape[1],)
        model = MlpModel.init(sizes, rng, X[tr].mean(axis=0), x_std, y[tr].mean(axis=0), y_std)
        self.train_indices_, self.validation_indices_ = tr, va
        self.loss_curve_, self.validation_loss_curve_ = train(
            model, model.standardize(X[tr]), model.standardize_targets(y[tr]),
            model.standardize(X[va]), model.standardize_targets(y[va]), cfg)
        self.model_ = model
        self.n_features_in_ = X.shape[1]
        if len(va) >= 2:
            self.validation_r2_ = r2_score(forward(model, X[va]), y[va])
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        return forward(self.model_, X)

    @classmethod
    def from_model(cls, model: MlpModel) -> "StiffnessRegressor":
        est = cls(hidden_layer_sizes=tuple(model.sizes[1:-1]))
        est.model_ = model
        est.n_features_in_ = model.sizes[0]
        return est
