"""Synchronous master-worker round loop for ADMM, RSA and aggregation SGD.

Worker iterates are kept stacked, one row per computing worker, so a round
costs a fixed number of array operations regardless of the worker count.
The computing workers are the regular ones plus, for the sign-flip attack,
Byzantine workers that run an honest shadow copy before corrupting it.
"""

from __future__ import annotations

import numpy as np

from ..algorithms import (
    AdmmMasterState,
    AdmmWorkerState,
    admm_master_step,
    admm_worker_step,
    aggregate,
    dual_update,
    rsa_master_step,
    rsa_worker_step,
    sgd_master_step,
)
from ..attacks import AttackContext, AttackSpec, byzantine_payload
from ..data import sample_batch
from ..errors import ConfigError, DivergenceError, InvariantError
from ..model import lambda_zero
from . import metrics
from .config import ExperimentConfig, Setup, build_setup


def _rows(positions):
    """A slice when the positions are one contiguous run (cheaper to index with), else an index array."""
    positions = np.asarray(positions, dtype=np.int64)
    if positions.size == 0:
        return slice(0, 0)
    if np.array_equal(positions, np.arange(positions[0], positions[0] + positions.size)):
        return slice(int(positions[0]), int(positions[0]) + positions.size)
    return positions


class Simulation:
    def __init__(self, config: ExperimentConfig, setup: Setup | None = None):
        self.config = config
        self.setup = setup if setup is not None else build_setup(config)
        problem = self.setup.problem
        hp = config.hyper
        self.protocol = config.protocol
        self.lam, self.beta = hp.lam, hp.beta
        self.k = 0

        self.attack = config.attack if config.byzantine_participate else AttackSpec()
        regular = list(problem.regular)
        byz = list(self.attack.byzantine_ids)
        self.participants = sorted(regular + byz)
        shadow = byz if self.attack.kind == "sign-flip" else []
        for j in shadow:
            if not problem.has_loss(j):
                raise ConfigError(f"sign-flip needs local data on Byzantine worker {j}")
        self.active = sorted(regular + shadow)
        row = {i: t for t, i in enumerate(self.active)}
        slot = {i: t for t, i in enumerate(self.participants)}
        self.reg_rows = _rows([row[i] for i in regular])
        self.reg_slots = _rows([slot[i] for i in regular])
        self.byz_slots = _rows([slot[j] for j in byz])
        self.byz_ids = byz
        self.shadow_rows = _rows([row[j] for j in shadow]) if shadow else None
        self.target_row = row.get(self.attack.target) if self.attack.kind == "copy" else None
        if self.attack.kind == "copy" and self.target_row is None:
            raise ConfigError(f"copy target {self.attack.target} is not a regular worker")

        seq = np.random.SeedSequence(config.seed)
        data_seq, attack_seq = seq.spawn(2)
        self.data_rngs = [np.random.default_rng(s) for s in data_seq.spawn(hp.m)]
        self.attack_rng = np.random.default_rng(attack_seq)
        self.stochastic = not (problem.deterministic or config.exact_gradients)
        self.local_index = [np.arange(n) for n in self.setup.local_sizes]
        self.grad_fn = problem.bind_gradients(self.active)
        self.reg_grad = problem.regularizer.gradient
        # stepsizes for every round this run can reach, looked up instead of recomputed
        horizon = config.rounds + 2
        self.master_steps = [float(config.master_schedule(k)) for k in range(horizon)]
        self.worker_steps = [float(config.worker_schedule(k)) for k in range(horizon)]
        self.box_slack = 4 * np.finfo(float).eps * max(self.lam, 1.0)

        d = problem.dim
        self.x0 = np.array(self.setup.x0, dtype=float)
        X = np.array(self.setup.worker_x[self.active], dtype=float)
        if self.protocol == "admm":
            self.workers = AdmmWorkerState.start(X)
            self.master = AdmmMasterState.start(self.x0, len(self.participants))
            self.byz_eta = np.zeros((len(byz), d))
        elif self.protocol == "rsa":
            self.X = X

        self.x_star = self.setup.x_star
        self.eta_star = None
        self.f_star = None
        if config.lyapunov:
            if self.protocol != "admm":
                raise ConfigError("the Lyapunov monitor is defined for ADMM runs only")
            if self.x_star is None:
                raise ConfigError("Lyapunov monitoring needs a reference solution x*")
            lam0 = lambda_zero(problem, self.x_star)
            if self.lam < lam0:
                raise ConfigError(f"Lyapunov monitoring needs lambda >= lambda_0 = {lam0:.6g}")
            self.eta_star = metrics.optimal_duals(problem, self.x_star)
        if config.ergodic:
            if self.x_star is None:
                raise ConfigError("ergodic gap needs a reference solution x*")
            self.f_star = problem.objective(self.x_star)
            self.ergodic = metrics.ErgodicAccumulator()

    # -- helpers -----------------------------------------------------------

    @property
    def worker_x(self):
        """Primal iterates of the regular workers (None for SGD)."""
        if self.protocol == "admm":
            return self.workers.x[self.reg_rows]
        if self.protocol == "rsa":
            return self.X[self.reg_rows]
        return None

    def _gradients(self, X):
        batches = None
        if self.stochastic:
            B = self.config.batch_size
            batches = [sample_batch(self.local_index[i], B, self.data_rngs[i]) for i in self.active]
        return self.grad_fn(X, batches)

    def _forge(self, k, x0, honest=None, eta=None, target_primal=None, target_message=None):
        ctx = AttackContext(
            k=k,
            x0=x0,
            lam=self.lam,
            beta=self.beta,
            eta=eta,
            honest=honest,
            target_primal=target_primal,
            target_message=target_message,
            count=len(self.byz_ids),
        )
        return byzantine_payload(self.attack, self.protocol, ctx, self.attack_rng)

    def _check_finite(self, X, x0):
        if not np.isfinite(x0).all():
            raise DivergenceError(self.k, None)
        if X is not None and not np.isfinite(X).all():
            bad = int(np.flatnonzero(~np.isfinite(X).all(axis=1))[0])
            raise DivergenceError(self.k, self.active[bad])

    # -- rounds ------------------------------------------------------------

    def step(self) -> np.ndarray:
        k = self.k
        if k >= self.config.rounds:
            raise ConfigError(f"round {k} is past the configured horizon of {self.config.rounds}")
        a0 = self.master_steps[k]
        ai = self.worker_steps[k]
        reg_grad = self.reg_grad(self.x0)
        msgs = np.empty((len(self.participants), self.x0.size))
        has_byz = len(self.byz_ids) > 0

        if self.protocol == "admm":
            W = self.workers
            g = self._gradients(W.x)
            x_new = admm_worker_step(W, g, ai)
            x0_new = admm_master_step(self.master, reg_grad, a0)
            self._check_finite(x_new, x0_new)
            eta_new = dual_update(W.eta, x_new, x0_new, self.beta, self.lam)
            msgs[self.reg_slots] = eta_new[self.reg_rows]
            if has_byz:
                forged = self._forge(
                    k + 1,
                    x0_new,
                    honest=None if self.shadow_rows is None else eta_new[self.shadow_rows],
                    eta=self.byz_eta,
                    target_primal=None if self.target_row is None else x_new[self.target_row],
                )
                msgs[self.byz_slots] = forged
                self.byz_eta = forged
            self.master.receive(msgs, self.lam)
            self.master.x0 = x0_new
            W.advance(x_new, eta_new)
            self.x0 = x0_new
            if self.config.check_invariants:
                self._check_dual_box()
        elif self.protocol == "rsa":
            msgs[self.reg_slots] = self.X[self.reg_rows]
            if has_byz:
                msgs[self.byz_slots] = self._forge(
                    k,
                    self.x0,
                    honest=None if self.shadow_rows is None else self.X[self.shadow_rows],
                    target_primal=None if self.target_row is None else self.X[self.target_row],
                )
            g = self._gradients(self.X)
            X_new = rsa_worker_step(self.X, self.x0, g, ai, self.lam)
            x0_new = rsa_master_step(self.x0, msgs, reg_grad, a0, self.lam)
            self._check_finite(X_new, x0_new)
            self.X, self.x0 = X_new, x0_new
        else:
            g = self._gradients(np.broadcast_to(self.x0, (len(self.active), self.x0.size)))
            msgs[self.reg_slots] = g[self.reg_rows]
            if has_byz:
                msgs[self.byz_slots] = self._forge(
                    k,
                    self.x0,
                    honest=None if self.shadow_rows is None else g[self.shadow_rows],
                    target_message=None if self.target_row is None else g[self.target_row],
                )
            agg = aggregate(self.config.aggregation, msgs)
            x0_new = sgd_master_step(self.x0, agg, reg_grad, a0)
            self._check_finite(None, x0_new)
            self.x0 = x0_new

        self.k = k + 1
        if self.config.ergodic:
            self.ergodic.add(self.master_steps[self.k], self.x0, self.worker_x)
        return msgs

    def _check_dual_box(self):
        lam = self.lam
        slack = self.box_slack
        if np.abs(self.workers.eta).max(initial=0.0) > lam:
            raise InvariantError(f"dual left the box [-{lam}, {lam}] at round {self.k}")
        pull = 2.0 * self.master.received - self.master.received_prev
        if np.abs(pull).max(initial=0.0) > 3.0 * lam + slack:
            raise InvariantError(f"per-worker influence exceeded 3*lambda at round {self.k}")

    # -- measurement -------------------------------------------------------

    def record(self) -> metrics.MetricsRecord:
        fields = {}
        setup = self.setup
        if setup.test is not None:
            fields["top1_accuracy"] = metrics.top1_accuracy(self.x0, setup.test.features, setup.test.labels, setup.test.class_count)
        X = self.worker_x
        if X is not None:
            fields["consensus_gap"] = metrics.consensus_gap(X, self.x0)
        if self.x_star is not None:
            fields["master_error"] = metrics.master_error(self.x0, self.x_star)
            if X is not None:
                fields["worker_error"] = metrics.worker_error(X, self.x_star)
        if self.eta_star is not None:
            alpha_prev = self.worker_steps[max(self.k - 1, 0)]
            fields["lyapunov"] = metrics.lyapunov(
                self.x0, X, self.workers.eta_prev[self.reg_rows], self.x_star, self.eta_star, alpha_prev, self.beta
            )
        if self.config.ergodic and self.k > 0:
            x0_bar, X_bar = self.ergodic.averages()
            fields["ergodic_gap"] = metrics.objective_gap(setup.problem, x0_bar, X_bar, self.f_star)
        return metrics.MetricsRecord(k=self.k, algorithm=self.config.algorithm, **fields)


def run_round(sim: Simulation) -> np.ndarray:
    """Advance one synchronous round; returns the messages the master consumed, one row per participant."""
    return sim.step()


def run_experiment(config: ExperimentConfig, setup: Setup | None = None, record_at=None) -> list[metrics.MetricsRecord]:
    """Run ``config.rounds`` rounds, recording at ``k = 0``, every ``eval_every`` rounds and at the end.

    ``record_at`` overrides the cadence with an explicit set of round indices
    (the final round is always recorded).
    """
    sim = Simulation(config, setup)
    if record_at is None:
        wanted = lambda k: k % config.eval_every == 0
    else:
        marks = set(int(k) for k in record_at)
        wanted = marks.__contains__
    records = [sim.record()] if wanted(0) else []
    for k in range(1, config.rounds + 1):
        sim.step()
        if k == config.rounds or wanted(k):
            records.append(sim.record())
    return records
