"""Synthetic least-squares task, stochastic gradients and local SGD.

Loss convention: mean squared error without the 1/2 factor,
``F(w, batch) = mean((x . w - y)^2)`` with gradient
``(2 / b) * sum(x * (x . w - y))``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import NumericalDivergence


@dataclass(frozen=True)
class SyntheticTask:
    w_true: np.ndarray  # (d,)
    features: np.ndarray  # (n_clients, n_per_client, d)
    labels: np.ndarray  # (n_clients, n_per_client)
    test_features: np.ndarray  # (n_test, d)
    test_labels: np.ndarray  # (n_test,)
    noise_std: float

    @property
    def n_clients(self) -> int:
        return self.features.shape[0]

    @property
    def n_per_client(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.features.shape[2]

    def client_data(self, client: int):
        """Features and labels of 1-indexed ``client``."""
        return self.features[client - 1], self.labels[client - 1]

    def save(self, path) -> None:
        np.savez(
            Path(path),
            w_true=self.w_true,
            features=self.features,
            labels=self.labels,
            test_features=self.test_features,
            test_labels=self.test_labels,
            noise_std=np.float64(self.noise_std),
        )

    @classmethod
    def load(cls, path) -> "SyntheticTask":
        with np.load(Path(path)) as z:
            return cls(
                w_true=z["w_true"],
                features=z["features"],
                labels=z["labels"],
                test_features=z["test_features"],
                test_labels=z["test_labels"],
                noise_std=float(z["noise_std"]),
            )


@dataclass(frozen=True)
class GradientSample:
    vector: np.ndarray
    step_index: int
    client: int
    batch_seed: int


def gen_synthetic(
    n_clients: int,
    d: int,
    n_per_client: int,
    noise_std: float,
    seed: int,
    n_test: int = 500,
) -> SyntheticTask:
    """Standard-normal weights and features; labels ``x . w_true + N(0, noise_std^2)``."""
    if min(n_clients, d, n_per_client, n_test) < 1:
        raise ValueError("all counts must be >= 1")
    rng = np.random.default_rng(seed)
    w_true = rng.standard_normal(d)
    features = rng.standard_normal((n_clients, n_per_client, d))
    labels = features @ w_true + noise_std * rng.standard_normal((n_clients, n_per_client))
    test_features = rng.standard_normal((n_test, d))
    test_labels = test_features @ w_true + noise_std * rng.standard_normal(n_test)
    return SyntheticTask(w_true, features, labels, test_features, test_labels, float(noise_std))


def batch_loss(model: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    r = x @ model - y
    return float(np.mean(r * r))


def batch_grad(model: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    r = x @ model - y
    return (2.0 / len(y)) * (x.T @ r)


def minibatch_grad(
    model: np.ndarray,
    task: SyntheticTask,
    client: int,
    batch_size: int,
    batch_seed: int,
    step_index: int = 0,
) -> GradientSample:
    """Gradient on a batch drawn without replacement from ``client``'s data.

    The batch is a deterministic function of ``batch_seed``.
    """
    if not 1 <= batch_size <= task.n_per_client:
        raise ValueError(f"batch_size must lie in [1, {task.n_per_client}]")
    rng = np.random.default_rng(batch_seed)
    idx = rng.choice(task.n_per_client, size=batch_size, replace=False)
    x, y = task.client_data(client)
    return GradientSample(batch_grad(model, x[idx], y[idx]), step_index, client, batch_seed)


def batch_index_table(
    n_slots: int, n_clients: int, n_per_client: int, batch_size: int, seed: int
) -> np.ndarray:
    """Pre-drawn minibatch indices, shape ``(n_slots, n_clients, batch_size)``.

    Entry ``[s, i - 1]`` is client ``i``'s batch at slot ``s``. Each row is a
    uniform draw without replacement; the table depends only on its arguments,
    never on the order in which a simulation consumes it.
    """
    if not 1 <= batch_size <= n_per_client:
        raise ValueError(f"batch_size must lie in [1, {n_per_client}]")
    rng = np.random.default_rng(seed)
    keys = rng.random((n_slots, n_clients, n_per_client))
    return np.argsort(keys, axis=-1, kind="stable")[..., :batch_size]


def stacked_batch_grads(models: np.ndarray, task: SyntheticTask, idx: np.ndarray) -> np.ndarray:
    """Per-client gradients for all clients at once.

    ``models`` is ``(N, d)``, ``idx`` is ``(N, b)``; returns ``(N, d)``.
    """
    rows = np.arange(task.n_clients)[:, None]
    x = task.features[rows, idx]  # (N, b, d)
    y = task.labels[rows, idx]  # (N, b)
    r = (x @ models[:, :, None])[..., 0] - y
    return (2.0 / idx.shape[1]) * (r[:, None, :] @ x)[:, 0, :]


def stacked_full_grads(models: np.ndarray, task: SyntheticTask) -> np.ndarray:
    x = task.features
    r = (x @ models[:, :, None])[..., 0] - task.labels
    return (2.0 / task.n_per_client) * (r[:, None, :] @ x)[:, 0, :]


def sgd_step(
    model: np.ndarray, grad: GradientSample, eta: float, slot: Optional[int] = None
) -> np.ndarray:
    """One local SGD step; the input model is left untouched."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    out = model - eta * grad.vector
    if not np.all(np.isfinite(out)):
        raise NumericalDivergence(grad.step_index if slot is None else slot)
    return out


def global_loss(model: np.ndarray, task: SyntheticTask) -> float:
    """Mean squared error on the held-out test set."""
    return batch_loss(model, task.test_features, task.test_labels)


def objective(model: np.ndarray, task: SyntheticTask) -> float:
    """``f(x)``: average over clients of their full-batch local losses."""
    return float(np.mean([batch_loss(model, *task.client_data(i)) for i in range(1, task.n_clients + 1)]))


def train_loss(model: np.ndarray, task: SyntheticTask) -> float:
    x = task.features.reshape(-1, task.dim)
    return batch_loss(model, x, task.labels.reshape(-1))


def central_difference_grad(model: np.ndarray, x: np.ndarray, y: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Coordinate-wise central differences of :func:`batch_loss`."""
    out = np.empty_like(model, dtype=float)
    e = np.zeros_like(model, dtype=float)
    for k in range(len(model)):
        e[k] = eps
        out[k] = (batch_loss(model + e, x, y) - batch_loss(model - e, x, y)) / (2 * eps)
        e[k] = 0.0
    return out


def gradient_probes(task: SyntheticTask, n_probes: int, batch_size: int, seed: int, eps: float = 1e-5) -> np.ndarray:
    """Relative errors ``|g - g_fd| / |g_fd|`` at random (model, client, batch) probes."""
    rng = np.random.default_rng(seed)
    errs = np.empty(n_probes)
    for p in range(n_probes):
        client = int(rng.integers(1, task.n_clients + 1))
        model = rng.standard_normal(task.dim)
        batch_seed = int(rng.integers(2**32))
        g = minibatch_grad(model, task, client, batch_size, batch_seed).vector
        idx = np.random.default_rng(batch_seed).choice(task.n_per_client, size=batch_size, replace=False)
        x, y = task.client_data(client)
        fd = central_difference_grad(model, x[idx], y[idx], eps)
        errs[p] = np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-300)
    return errs
