"""Independent reference computations used to cross-check the fast engine.

The unsimplified ADMM keeps the auxiliary consensus copies ``z`` and both
dual blocks explicitly and solves the ``z`` subproblem through a pairwise
proximal map.  Collapsing it algebraically gives the engine's two-dual
recursion, so running both side by side checks that reduction numerically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..algorithms import HyperParams
from ..errors import ConfigError


def prox_pair_closed_form(a1, a2, lam):
    """Minimizer of ``lam*|z1 - z2| + (z1 - a1)^2/2 + (z2 - a2)^2/2``, elementwise.

    The pair keeps its sum and each side moves toward the other by at most ``lam``.
    """
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    if np.any(np.asarray(lam) < 0):
        raise ConfigError("prox penalty must be nonnegative")
    shift = np.clip((a2 - a1) / 2.0, -lam, lam)
    z1 = a1 + shift
    return z1, a1 + a2 - z1


def prox_pair_objective(z1, z2, a1, a2, lam):
    return lam * np.abs(z1 - z2) + 0.5 * (z1 - a1) ** 2 + 0.5 * (z2 - a2) ** 2


def prox_pair_brute_force(a1: float, a2: float, lam: float, points: int = 101, rounds: int = 45, shrink: float = 0.5):
    """Grid search over a box containing the minimizer, then repeated local zoom.

    The minimizer lies in ``[min(a1, a2), max(a1, a2)]`` in both coordinates,
    so the first grid covers that square with a margin.
    """
    lo, hi = min(a1, a2), max(a1, a2)
    pad = 0.1 * (hi - lo) + 1e-3
    c1 = c2 = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) + pad
    best = None
    for t in range(rounds):
        n = points if t == 0 else 21
        g1 = np.linspace(c1 - half, c1 + half, n)
        g2 = np.linspace(c2 - half, c2 + half, n)
        Z1, Z2 = np.meshgrid(g1, g2, indexing="ij")
        vals = prox_pair_objective(Z1, Z2, a1, a2, lam)
        i, j = np.unravel_index(np.argmin(vals), vals.shape)
        c1, c2 = Z1[i, j], Z2[i, j]
        best = (c1, c2, vals[i, j])
        # the next window spans a few spacings of this grid around the best cell
        half = 4.0 * half / (n - 1) if t == 0 else half * shrink
    return best


@dataclass
class UnsimplifiedAdmmState:
    """Full three-block ADMM state for the regular workers (rows) and the master.

    ``z_master[i]`` is worker ``i``'s copy of the master variable and
    ``z_worker[i]`` the master's copy of worker ``i``; ``eta_master`` and
    ``eta_worker`` are the multipliers of the two consensus constraints.
    """

    x0: np.ndarray
    x: np.ndarray
    z_master: np.ndarray
    z_worker: np.ndarray
    eta_master: np.ndarray
    eta_worker: np.ndarray

    @classmethod
    def start(cls, x0, X):
        # copies start at the primal they shadow and multipliers at zero, which
        # makes the first round agree with the two-dual form started at eta = 0
        x0 = np.array(x0, dtype=float)
        X = np.array(X, dtype=float)
        return cls(
            x0=x0,
            x=X,
            z_master=np.tile(x0, (X.shape[0], 1)),
            z_worker=X.copy(),
            eta_master=np.zeros_like(X),
            eta_worker=np.zeros_like(X),
        )

    def multiplier_imbalance(self) -> float:
        return float(np.max(np.abs(self.eta_master + self.eta_worker), initial=0.0))


def unsimplified_admm_round(
    state: UnsimplifiedAdmmState, grads, grad_f0, alpha0: float, alpha: float, hp: HyperParams
) -> UnsimplifiedAdmmState:
    """Linearized x-steps, pairwise prox on the copies, then multiplier ascent."""
    b = hp.beta
    x_new = state.x - alpha * (grads + b * state.x - b * state.z_worker - state.eta_worker)
    pull = b * state.x0 - b * state.z_master - state.eta_master
    x0_new = state.x0 - alpha0 * (grad_f0 + pull.sum(axis=0))

    a1 = x0_new - state.eta_master / b
    a2 = x_new - state.eta_worker / b
    z_master, z_worker = prox_pair_closed_form(a1, a2, hp.lam / b)

    return UnsimplifiedAdmmState(
        x0=x0_new,
        x=x_new,
        z_master=z_master,
        z_worker=z_worker,
        eta_master=state.eta_master + b * (z_master - x0_new),
        eta_worker=state.eta_worker + b * (z_worker - x_new),
    )


def loglog_slope(ks, values, lo: float, hi: float) -> float:
    """Least-squares slope of ``log(values)`` against ``log(ks)`` over ``lo <= k <= hi``."""
    ks = np.asarray(ks, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = (ks >= lo) & (ks <= hi) & (ks > 0)
    if mask.sum() < 2:
        raise ConfigError(f"need at least two samples in [{lo}, {hi}] to fit a slope")
    if np.any(values[mask] <= 0):
        raise ConfigError("slope fit needs strictly positive values")
    return float(np.polyfit(np.log(ks[mask]), np.log(values[mask]), 1)[0])


def log_marks(stop: int, count: int = 300) -> np.ndarray:
    """Roughly log-spaced round indices in ``[1, stop]``, deduplicated."""
    return np.unique(np.round(np.logspace(0, np.log10(stop), count)).astype(np.int64))
