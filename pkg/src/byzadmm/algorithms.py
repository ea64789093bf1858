"""Per-round update rules.

Every step function is pure: it takes the current iterates and returns the
next one.  All of them broadcast, so the engine can pass a stacked
``(workers, d)`` array where a single ``(d,)`` vector is documented.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DivergenceError, ProtocolError


@dataclass(frozen=True)
class HyperParams:
    lam: float
    beta: float
    m: int
    q: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if not self.beta > 0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        if self.q < 0 or self.q > self.m:
            raise ConfigError(f"need 0 <= q <= m, got q={self.q}, m={self.m}")

    @property
    def r(self) -> int:
        return self.m - self.q


@dataclass(frozen=True)
class InverseK:
    """``min(1 / (c*k + offset), cap)``."""

    c: float
    offset: float
    cap: float = math.inf

    def __post_init__(self):
        if self.c < 0 or not self.offset > 0 or not self.cap > 0:
            raise ConfigError(f"invalid inverse-k schedule {self}")

    def __call__(self, k: int) -> float:
        return min(1.0 / (self.c * k + self.offset), self.cap)


@dataclass(frozen=True)
class InverseSqrtK:
    """``1 / (a + b*sqrt(k))``."""

    a: float
    b: float

    def __post_init__(self):
        if not self.a > 0 or self.b < 0:
            raise ConfigError(f"invalid inverse-sqrt-k schedule {self}")

    def __call__(self, k: int) -> float:
        return 1.0 / (self.a + self.b * math.sqrt(k))


StepsizeSchedule = InverseK | InverseSqrtK


def stepsize(schedule: StepsizeSchedule, k: int) -> float:
    if k < 0:
        raise ConfigError("round index must be >= 0")
    return schedule(k)


def rate_schedules(profile, beta: float, m: int, c_fraction: float = 0.9, cap=None):
    """Master and worker 1/k schedules satisfying the O(1/k) convergence conditions.

    ``c`` is ``c_fraction`` of its admissible upper limit; the cap defaults to
    the largest admissible value.  The master offset uses ``m * beta``.
    """
    if not 0 < c_fraction < 1:
        raise ConfigError("c_fraction must lie in (0, 1)")
    c = c_fraction * profile.max_rate_constant()
    cap = profile.default_cap() if cap is None else cap
    return InverseK(c, m * beta, cap), InverseK(c, beta, cap)


def proj_box(v, lam: float):
    # two ufuncs are much cheaper than np.clip's dispatch on tiny arrays
    return np.minimum(np.maximum(v, -lam), lam)


def elementwise_sign(v):
    # np.sign already maps 0 -> 0, which is the tie rule we want
    return np.sign(v)


def _finite(v, k=None, worker=None, what="gradient"):
    if not np.isfinite(v).all():
        raise DivergenceError(k, worker, what)


@dataclass
class AdmmWorkerState:
    """Primal iterate and the two most recent duals; arrays may be stacked ``(workers, d)``."""

    x: np.ndarray
    eta: np.ndarray
    eta_prev: np.ndarray

    @classmethod
    def start(cls, x):
        x = np.array(x, dtype=float)
        return cls(x, np.zeros_like(x), np.zeros_like(x))

    def advance(self, x_new, eta_new):
        self.x, self.eta_prev, self.eta = x_new, self.eta, eta_new


@dataclass
class AdmmMasterState:
    """Master primal plus the current and previous dual received from each of the m workers."""

    x0: np.ndarray
    received: np.ndarray
    received_prev: np.ndarray

    @classmethod
    def start(cls, x0, m: int):
        x0 = np.array(x0, dtype=float)
        return cls(x0, np.zeros((m, x0.size)), np.zeros((m, x0.size)))

    def receive(self, messages, lam: float):
        """Store one message per worker, clamped into the dual box."""
        messages = np.asarray(messages, dtype=float)
        if messages.shape != self.received.shape:
            raise ProtocolError(f"expected {self.received.shape[0]} messages, got shape {messages.shape}")
        self.received_prev = self.received
        self.received = proj_box(messages, lam)


def admm_worker_step(state: AdmmWorkerState, grad, alpha):
    """Primal step of a regular worker: ``x - alpha * (grad + 2*eta - eta_prev)``."""
    _finite(grad)
    return state.x - alpha * (grad + 2.0 * state.eta - state.eta_prev)


def admm_dual_step(state: AdmmWorkerState, x_new, x0_new, hp: HyperParams):
    """Projected dual ascent on the worker-master disagreement."""
    return dual_update(state.eta, x_new, x0_new, hp.beta, hp.lam)


def dual_update(eta, x_new, x0_new, beta: float, lam: float):
    return proj_box(eta + 0.5 * beta * (x_new - x0_new), lam)


def admm_master_step(state: AdmmMasterState, grad_f0, alpha):
    """Master primal step driven by the duals of every worker, honest or not."""
    received, received_prev = state.received, state.received_prev
    if received.shape != received_prev.shape or received.ndim != 2:
        raise ProtocolError("need one current and one previous dual per worker")
    if not np.isfinite(received).all():
        raise ProtocolError("missing or non-finite worker message")
    pull = (2.0 * received - received_prev).sum(axis=0)
    return state.x0 - alpha * (grad_f0 - pull)


def rsa_worker_step(x, x0, grad, alpha, lam: float):
    _finite(grad)
    return x - alpha * (grad + lam * np.sign(x - x0))


def rsa_master_step(x0, received, grad_f0, alpha, lam: float):
    received = np.asarray(received)
    if received.ndim != 2 or not np.isfinite(received).all():
        raise ProtocolError("need one finite primal vector per worker")
    return x0 - alpha * (grad_f0 - lam * np.sign(received - x0).sum(axis=0))


def coordinate_median(vectors):
    # np.median averages the two central order statistics for even counts
    return np.median(np.asarray(vectors), axis=0)


def geometric_median(vectors, tol: float = 1e-9, max_iter: int = 200, eps: float = 1e-12):
    """Weiszfeld iteration started from the mean.

    A distance below ``eps`` is replaced by ``eps`` so an iterate landing on
    an input point does not divide by zero.
    """
    pts = np.asarray(vectors, dtype=float)
    med = pts.mean(axis=0)
    for _ in range(max_iter):
        dist = np.linalg.norm(pts - med, axis=1)
        w = 1.0 / np.maximum(dist, eps)
        new = (w @ pts) / w.sum()
        done = np.linalg.norm(new - med) <= tol
        med = new
        if done:
            break
    return med


AGGREGATORS = {
    "mean": lambda g: np.mean(np.asarray(g), axis=0),
    "median": coordinate_median,
    "geomed": geometric_median,
}


def aggregate(rule: str, gradients):
    try:
        fn = AGGREGATORS[rule]
    except KeyError:
        raise ConfigError(f"unknown aggregation rule {rule!r}; expected one of {sorted(AGGREGATORS)}") from None
    if len(gradients) == 0:
        raise ConfigError("nothing to aggregate")
    return fn(gradients)


def sgd_master_step(x0, aggregated, grad_f0, alpha):
    return x0 - alpha * (aggregated + grad_f0)
