"""The oracle suite: each check runs an independent computation against the engine."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..algorithms import (
    AdmmMasterState,
    AdmmWorkerState,
    HyperParams,
    InverseK,
    admm_master_step,
    admm_worker_step,
    dual_update,
    rate_schedules,
)
from ..attacks import AttackSpec
from ..model import Problem, Quadratic, exact_minimizer, lambda_zero
from .config import ExperimentConfig, QuadraticSpec, build_setup
from .oracles import (
    UnsimplifiedAdmmState,
    log_marks,
    loglog_slope,
    prox_pair_brute_force,
    prox_pair_closed_form,
    prox_pair_objective,
    unsimplified_admm_round,
)
from .runner import Simulation, run_experiment


@dataclass
class CheckResult:
    name: str
    value: float
    bound: str
    passed: bool
    seconds: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{status}  {self.name:<24} value={self.value:.6g}  bound {self.bound}  ({self.seconds:.2f}s)"
        return f"{text}  {self.detail}" if self.detail else text


def heterogeneous_quadratic(workers: int = 5, dim: int = 3, seed: int = 0):
    """Centers, curvatures and regularizer scale for a small multi-worker quadratic."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(workers, dim))
    scales = np.linspace(0.8, 2.0, workers)
    return centers, scales, 1.0


def _quadratic_problem(centers, scales, f0_scale):
    losses = [Quadratic(c, s) for c, s in zip(centers, scales)]
    reg = Quadratic(np.zeros(centers.shape[1]), f0_scale)
    return Problem(reg, losses, list(range(len(losses))))


def check_prox(trials: int = 1000, seed: int = 0) -> tuple[CheckResult, CheckResult]:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    gap = 0.0
    sum_err = 0.0
    for _ in range(trials):
        a1, a2 = rng.normal(0.0, 3.0, size=2)
        lam = rng.uniform(0.0, 3.0)
        z1, z2 = prox_pair_closed_form(a1, a2, lam)
        _, _, best = prox_pair_brute_force(a1, a2, lam)
        gap = max(gap, float(prox_pair_objective(z1, z2, a1, a2, lam) - best))
        sum_err = max(sum_err, abs(float(z1 + z2) - (a1 + a2)))
    dt = time.perf_counter() - t0
    return (
        CheckResult("prox objective gap", gap, "<= 1e-8", gap <= 1e-8, dt),
        CheckResult("prox sum identity", sum_err, "<= 1e-12", sum_err <= 1e-12, 0.0),
    )


def check_equivalence(rounds: int = 100, seed: int = 0) -> CheckResult:
    """Two-dual recursion against the full three-block ADMM on a deterministic quadratic."""
    t0 = time.perf_counter()
    centers, scales, f0_scale = heterogeneous_quadratic(seed=seed)
    problem = _quadratic_problem(centers, scales, f0_scale)
    r, d = centers.shape
    lam = 0.5 * lambda_zero(problem)  # below lambda_0 so the clipping is active
    hp = HyperParams(lam=lam, beta=1.0, m=r, q=0)
    master, worker = InverseK(0.1, r), InverseK(0.1, 1.0)
    ids = list(range(r))

    x0 = np.zeros(d)
    W = AdmmWorkerState.start(centers)
    M = AdmmMasterState.start(x0, r)
    U = UnsimplifiedAdmmState.start(x0, centers)
    dev = 0.0
    imbalance = 0.0
    for k in range(rounds):
        a0, ai = master(k), worker(k)
        x_new = admm_worker_step(W, problem.worker_gradients(ids, W.x), ai)
        x0_new = admm_master_step(M, problem.regularizer.gradient(M.x0), a0)
        eta_new = dual_update(W.eta, x_new, x0_new, hp.beta, hp.lam)
        M.receive(eta_new, hp.lam)
        M.x0 = x0_new
        W.advance(x_new, eta_new)
        U = unsimplified_admm_round(U, problem.worker_gradients(ids, U.x), problem.regularizer.gradient(U.x0), a0, ai, hp)
        dev = max(dev, float(np.abs(U.x - W.x).max()), float(np.abs(U.x0 - M.x0).max()))
        imbalance = max(imbalance, U.multiplier_imbalance())
    dt = time.perf_counter() - t0
    return CheckResult(
        "two-dual equivalence",
        dev,
        "< 1e-9",
        dev < 1e-9 and imbalance < 1e-12,
        dt,
        f"multiplier imbalance {imbalance:.2g}",
    )


def check_fixed_point(seed: int = 0) -> CheckResult:
    """One exact-gradient ADMM round started at the optimum with optimal duals."""
    t0 = time.perf_counter()
    centers, scales, f0_scale = heterogeneous_quadratic(seed=seed)
    problem = _quadratic_problem(centers, scales, f0_scale)
    r, d = centers.shape
    x_star = exact_minimizer(problem)
    lam = 1.5 * lambda_zero(problem, x_star)
    eta_star = -np.stack([problem.losses[i].gradient(x_star) for i in range(r)])
    hp = HyperParams(lam=lam, beta=1.0, m=r, q=0)
    ids = list(range(r))

    W = AdmmWorkerState(np.tile(x_star, (r, 1)), eta_star.copy(), eta_star.copy())
    M = AdmmMasterState(x_star.copy(), eta_star.copy(), eta_star.copy())
    x_new = admm_worker_step(W, problem.worker_gradients(ids, W.x), 0.3)
    x0_new = admm_master_step(M, problem.regularizer.gradient(M.x0), 0.2)
    eta_new = dual_update(W.eta, x_new, x0_new, hp.beta, hp.lam)
    move = max(
        float(np.abs(x_new - x_star).max()),
        float(np.abs(x0_new - x_star).max()),
        float(np.abs(eta_new - eta_star).max()),
    )
    return CheckResult("optimum is a fixed point", move, "< 1e-12", move < 1e-12, time.perf_counter() - t0)


def rate_config(q: int, rounds: int, seed: int = 0) -> ExperimentConfig:
    """Heterogeneous quadratic with ``q`` dataless Byzantine slots in front, 1/k schedules from the curvature bounds."""
    centers, scales, f0_scale = heterogeneous_quadratic(seed=seed)
    r = len(centers)
    m = r + q
    spec = QuadraticSpec(
        centers=(None,) * q + tuple(tuple(c) for c in centers),
        scales=(None,) * q + tuple(scales),
        f0_scale=f0_scale,
        worker_init="local-optima",
    )
    problem = _quadratic_problem(centers, scales, f0_scale)
    lam = 1.2 * lambda_zero(problem)
    beta = 1.0
    master, worker = rate_schedules(problem.profile(), beta, m)
    attack = AttackSpec("gaussian", tuple(range(q)), std=100.0) if q else AttackSpec()
    return ExperimentConfig(
        algorithm="admm",
        problem=spec,
        hyper=HyperParams(lam=lam, beta=beta, m=m, q=q),
        master_schedule=master,
        worker_schedule=worker,
        rounds=rounds,
        seed=seed,
        attack=attack,
        exact_gradients=True,
        lyapunov=True,
        check_invariants=False,
    )


def lyapunov_trace(config: ExperimentConfig):
    marks = log_marks(config.rounds)
    records = run_experiment(config, record_at=marks)
    ks = np.array([rec.k for rec in records])
    V = np.array([rec.lyapunov for rec in records])
    return ks, V


def check_rate(rounds: int = 100_000, seed: int = 0) -> tuple[CheckResult, CheckResult]:
    t0 = time.perf_counter()
    ks, V = lyapunov_trace(rate_config(0, rounds, seed))
    clean = loglog_slope(ks, V, 1e3, rounds)
    t1 = time.perf_counter()
    ks_b, V_b = lyapunov_trace(rate_config(2, rounds, seed))
    floor_slope = loglog_slope(ks_b, V_b, rounds / 10, rounds)
    t2 = time.perf_counter()
    return (
        CheckResult("Lyapunov slope, q=0", clean, "in [-1.3, -0.8]", -1.3 <= clean <= -0.8, t1 - t0),
        CheckResult(
            "Lyapunov plateau, q=2",
            floor_slope,
            "in [-0.2, 0.2]",
            -0.2 <= floor_slope <= 0.2 and V_b[-1] > 0,
            t2 - t1,
            f"final V={V_b[-1]:.3g}",
        ),
    )


def run_suite(rate_rounds: int = 100_000) -> list[CheckResult]:
    results = [*check_prox(), check_equivalence(), check_fixed_point(), *check_rate(rate_rounds)]
    return results


__all__ = [
    "CheckResult",
    "Simulation",
    "check_equivalence",
    "check_fixed_point",
    "check_prox",
    "check_rate",
    "heterogeneous_quadratic",
    "lyapunov_trace",
    "rate_config",
    "run_suite",
]
