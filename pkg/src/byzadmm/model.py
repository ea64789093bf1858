"""Loss models and their first-order oracles.

Two families are supported: the scaled quadratic ``(s/2)||x - a||^2`` used in
toy problems, and multi-class softmax regression over a data shard.  A
:class:`Problem` bundles the master regularizer with one loss per worker
slot and answers the stacked-gradient queries the round loop needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, SolverError


@dataclass(frozen=True)
class Quadratic:
    """``(scale/2) * ||x - center||^2``; deterministic, so every batch gives the exact gradient."""

    center: np.ndarray
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        if not self.scale > 0:
            raise ConfigError(f"quadratic scale must be positive, got {self.scale}")

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def loss(self, x):
        diff = _check_dim(self, x) - self.center
        return 0.5 * self.scale * float(diff @ diff)

    def gradient(self, x):
        return self.scale * (_check_dim(self, x) - self.center)

    def stochastic_gradient(self, x, batch):
        if len(batch) == 0:
            raise ConfigError("empty batch")
        return self.gradient(x)

    def sample_count(self) -> int:
        return 1

    def profile(self) -> tuple[float, float]:
        return self.scale, self.scale


class Softmax:
    """Mean cross-entropy of a linear softmax classifier over a data shard.

    The model vector is the row-major flattening of a ``(classes, features)``
    weight matrix: class ``c`` owns entries ``c*features .. (c+1)*features``.
    """

    def __init__(self, features: np.ndarray, labels: np.ndarray, classes: int):
        features = np.asarray(features, dtype=float)
        labels = np.asarray(labels, dtype=np.int64)
        if features.ndim != 2 or features.shape[0] != labels.shape[0]:
            raise ConfigError("features must be (n, d) with one label per row")
        if features.shape[0] == 0:
            raise ConfigError("softmax shard is empty")
        if labels.min() < 0 or labels.max() >= classes:
            raise ConfigError(f"labels must lie in [0, {classes})")
        self.features = features
        self.labels = labels
        self.classes = int(classes)
        self.n_features = features.shape[1]

    @property
    def dim(self) -> int:
        return self.classes * self.n_features

    def sample_count(self) -> int:
        return self.features.shape[0]

    def _probs(self, W, A):
        logits = A @ W.T
        logits -= logits.max(axis=1, keepdims=True)
        np.exp(logits, out=logits)
        logits /= logits.sum(axis=1, keepdims=True)
        return logits

    def _grad_rows(self, x, rows):
        W = _check_dim(self, x).reshape(self.classes, self.n_features)
        A = self.features[rows]
        P = self._probs(W, A)
        P[np.arange(len(A)), self.labels[rows]] -= 1.0
        return (P.T @ A).ravel() / len(A)

    def loss(self, x):
        W = _check_dim(self, x).reshape(self.classes, self.n_features)
        logits = self.features @ W.T
        top = logits.max(axis=1, keepdims=True)
        lse = top[:, 0] + np.log(np.exp(logits - top).sum(axis=1))
        return float(np.mean(lse - logits[np.arange(len(logits)), self.labels]))

    def gradient(self, x):
        return self._grad_rows(x, slice(None))

    def stochastic_gradient(self, x, batch):
        batch = np.asarray(batch, dtype=np.int64)
        if batch.size == 0:
            raise ConfigError("empty batch")
        return self._grad_rows(x, batch)


LossModel = Quadratic | Softmax


def _check_dim(model, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (model.dim,):
        raise ConfigError(f"dimension mismatch: model expects {model.dim}, got shape {x.shape}")
    return x


def exact_gradient(model: LossModel, x) -> np.ndarray:
    return model.gradient(x)


def stochastic_gradient(model: LossModel, x, batch) -> np.ndarray:
    return model.stochastic_gradient(x, batch)


@dataclass(frozen=True)
class ConvergenceProfile:
    """Strong-convexity / smoothness constants of the regularizer and each worker loss.

    ``delta`` (the per-worker stochastic-gradient deviation bound) is carried
    for completeness; nothing in the library consumes it.
    """

    mu_0: float
    L_0: float
    mu: tuple[float, ...]
    L: tuple[float, ...]
    delta: tuple[float, ...] = ()

    def __post_init__(self):
        for m, l in [(self.mu_0, self.L_0), *zip(self.mu, self.L)]:
            if not 0 < m <= l:
                raise ConfigError(f"need 0 < mu <= L, got mu={m}, L={l}")

    def max_rate_constant(self) -> float:
        """Upper limit on ``c`` in the 1/k stepsize: min of mu*L/(mu+L) over all pairs."""
        pairs = [(self.mu_0, self.L_0), *zip(self.mu, self.L)]
        return min(m * l / (m + l) for m, l in pairs)

    def default_cap(self) -> float:
        pairs = [(self.mu_0, self.L_0), *zip(self.mu, self.L)]
        return min(1.0 / (m + l) for m, l in pairs)


@dataclass
class Problem:
    """Regularizer ``f0`` on the master plus one loss per worker slot.

    ``losses[i]`` is None for a slot that holds no data (e.g. a Byzantine
    worker in a toy problem).  ``regular`` lists the honest slots; the
    objective whose minimizer the metrics refer to is
    ``sum(losses[i] for i in regular) + f0``.
    """

    regularizer: Quadratic
    losses: list
    regular: list[int]
    classes: int | None = None
    _stack: tuple | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        d = self.regularizer.dim
        for i in self.regular:
            if self.losses[i] is None:
                raise ConfigError(f"regular worker {i} has no loss")
        for loss in self.losses:
            if loss is not None and loss.dim != d:
                raise ConfigError(f"loss dimension {loss.dim} does not match regularizer {d}")
        if all(isinstance(l, Quadratic) for l in self.losses if l is not None):
            centers = np.zeros((len(self.losses), d))
            scales = np.zeros(len(self.losses))
            for i, l in enumerate(self.losses):
                if l is not None:
                    centers[i], scales[i] = l.center, l.scale
            self._stack = (centers, scales)

    @property
    def dim(self) -> int:
        return self.regularizer.dim

    @property
    def deterministic(self) -> bool:
        return self._stack is not None

    def has_loss(self, i: int) -> bool:
        return self.losses[i] is not None

    def worker_gradients(self, ids: Sequence[int], X: np.ndarray, batches=None) -> np.ndarray:
        """Stacked gradients, row ``t`` for worker ``ids[t]`` at ``X[t]``.

        ``batches`` is None for exact gradients, else one index array per id.
        """
        return self.bind_gradients(ids)(X, batches)

    def bind_gradients(self, ids: Sequence[int]):
        """``worker_gradients`` with the worker selection resolved once, for use inside a loop."""
        ids = [int(i) for i in ids]
        if self._stack is not None:
            centers, scales = self._stack
            c = centers[ids]
            s = scales[ids, None]
            return lambda X, batches=None: s * (X - c)
        losses = [self.losses[i] for i in ids]

        def grads(X, batches=None):
            out = np.empty_like(X)
            for t, loss in enumerate(losses):
                out[t] = loss.gradient(X[t]) if batches is None else loss.stochastic_gradient(X[t], batches[t])
            return out

        return grads

    def objective(self, x) -> float:
        return self.regularizer.loss(x) + sum(self.losses[i].loss(x) for i in self.regular)

    def objective_gradient(self, x) -> np.ndarray:
        g = self.regularizer.gradient(x)
        for i in self.regular:
            g = g + self.losses[i].gradient(x)
        return g

    def profile(self) -> ConvergenceProfile:
        if self._stack is None:
            raise ConfigError("convergence profile is only available for quadratic problems")
        mu0, L0 = self.regularizer.profile()
        pairs = [self.losses[i].profile() for i in self.regular]
        return ConvergenceProfile(mu0, L0, tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))


def exact_minimizer(problem: Problem, tol: float = 1e-10, max_iter: int = 200_000) -> np.ndarray:
    """Minimizer of the regular-worker objective plus regularizer.

    Closed form for all-quadratic problems; otherwise full-gradient descent
    with Armijo backtracking until the gradient norm drops below ``tol``.
    """
    if problem.deterministic:
        num = problem.regularizer.scale * problem.regularizer.center
        den = problem.regularizer.scale
        for i in problem.regular:
            q = problem.losses[i]
            num = num + q.scale * q.center
            den += q.scale
        return num / den

    x = np.zeros(problem.dim)
    f = problem.objective(x)
    g = problem.objective_gradient(x)
    step = 1.0
    for _ in range(max_iter):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            return x
        step *= 2.0
        while True:
            x_new = x - step * g
            f_new = problem.objective(x_new)
            decrease = 0.5 * step * gnorm**2
            if f_new <= f - decrease:
                g_new = None
                break
            if decrease <= 1e-13 * max(1.0, abs(f)):
                # the objective can no longer resolve the decrease; fall back to the gradient norm
                g_new = problem.objective_gradient(x_new)
                if np.linalg.norm(g_new) < gnorm:
                    break
            step *= 0.5
            if step < 1e-20:
                raise SolverError("line search failed", gradient_norm=gnorm)
        x, f = x_new, f_new
        g = problem.objective_gradient(x) if g_new is None else g_new
    raise SolverError("exact_minimizer did not converge", gradient_norm=float(np.linalg.norm(g)))


def lambda_zero(problem: Problem, x_star=None) -> float:
    """Smallest TV penalty weight that keeps the optimum consensual."""
    if x_star is None:
        x_star = exact_minimizer(problem)
    worst = 0.0
    for i in problem.regular:
        worst = max(worst, float(np.max(np.abs(problem.losses[i].gradient(x_star)))))
    return worst
