"""Per-round measurements."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError

CSV_FIELDS = (
    "k",
    "algorithm",
    "top1_accuracy",
    "master_error",
    "worker_error",
    "consensus_gap",
    "lyapunov",
    "ergodic_gap",
)


@dataclass(frozen=True)
class MetricsRecord:
    k: int
    algorithm: str
    top1_accuracy: float | None = None
    master_error: float | None = None
    worker_error: float | None = None
    consensus_gap: float | None = None
    lyapunov: float | None = None
    ergodic_gap: float | None = None

    def __post_init__(self):
        for name in CSV_FIELDS[2:]:
            v = getattr(self, name)
            if v is not None and not np.isfinite(v):
                raise ConfigError(f"metric {name} is not finite at k={self.k}: {v}")
        if self.top1_accuracy is not None and not 0.0 <= self.top1_accuracy <= 1.0:
            raise ConfigError(f"top1_accuracy out of range: {self.top1_accuracy}")

    def as_dict(self) -> dict:
        return asdict(self)


def top1_accuracy(x, features, labels, classes: int) -> float:
    """Fraction of rows whose highest class score equals the label; ties go to the lowest class."""
    features = np.asarray(features)
    W = np.asarray(x).reshape(classes, features.shape[1])
    pred = np.argmax(features @ W.T, axis=1)  # argmax returns the first maximum
    return float(np.mean(pred == np.asarray(labels)))


def master_error(x0, x_star) -> float:
    diff = x0 - x_star
    return float(diff @ diff)


def worker_error(X, x_star) -> float:
    return float(np.sum((X - x_star) ** 2))


def consensus_gap(X, x0) -> float:
    return float(np.max(np.abs(X - x0)))


def optimal_duals(problem, x_star) -> np.ndarray:
    """``eta_i* = -grad F_i(x*)`` for every regular worker, stacked in ``problem.regular`` order."""
    return -np.stack([problem.losses[i].gradient(x_star) for i in problem.regular])


def lyapunov(x0, X, eta_prev, x_star, eta_star, alpha_prev: float, beta: float) -> float:
    """``||x0 - x*||^2 + sum_i ||x_i - x*||^2 + (2*alpha_prev/beta) * ||eta_i_prev - eta_i*||^2``.

    ``X``, ``eta_prev`` and ``eta_star`` hold the regular workers only; the
    caller supplies the worker stepsize of the previous round (the first
    round's stepsize at ``k = 0``).
    """
    return (
        master_error(x0, x_star)
        + worker_error(X, x_star)
        + (2.0 * alpha_prev / beta) * float(np.sum((eta_prev - eta_star) ** 2))
    )


def ergodic_average(alphas, points) -> np.ndarray:
    alphas = np.asarray(alphas, dtype=float)
    points = np.asarray(points, dtype=float)
    if alphas.size == 0 or np.any(alphas <= 0):
        raise ConfigError("ergodic average needs a nonempty history of positive weights")
    return np.tensordot(alphas, points, axes=1) / alphas.sum()


class ErgodicAccumulator:
    """Running stepsize-weighted average of the master and worker iterates."""

    def __init__(self):
        self.weight = 0.0
        self.x0 = None
        self.X = None

    def add(self, alpha, x0, X=None):
        if self.x0 is None:
            self.x0 = np.zeros_like(x0)
            self.X = None if X is None else np.zeros_like(X)
        self.weight += alpha
        self.x0 += alpha * x0
        if X is not None:
            self.X += alpha * X

    def averages(self):
        if self.weight == 0:
            return None, None
        X = None if self.X is None else self.X / self.weight
        return self.x0 / self.weight, X


def objective_gap(problem, x0_bar, X_bar, f_star: float) -> float:
    """``sum_i F_i(xbar_i) + f0(xbar_0) - F*``; without worker averages every term uses ``x0_bar``."""
    total = problem.regularizer.loss(x0_bar)
    for t, i in enumerate(problem.regular):
        total += problem.losses[i].loss(x0_bar if X_bar is None else X_bar[t])
    return total - f_star
