from dataclasses import replace

import numpy as np
import pytest

from byzadmm.algorithms import HyperParams, InverseK, InverseSqrtK
from byzadmm.attacks import AttackSpec
from byzadmm.engine import ExperimentConfig, QuadraticSpec, Simulation, SoftmaxSpec, scalar_toy_problem, run_experiment, run_round
from byzadmm.engine import metrics
from byzadmm.engine.oracles import (
    UnsimplifiedAdmmState,
    log_marks,
    loglog_slope,
    prox_pair_brute_force,
    prox_pair_closed_form,
    unsimplified_admm_round,
)
from byzadmm.engine.verify import check_equivalence, check_fixed_point, rate_config
from byzadmm.errors import ConfigError, DivergenceError, InvariantError


def scalar_toy(kind="small-value", algorithm="admm", rounds=50, **kw):
    attack = AttackSpec(kind, (2,), epsilon=0.5) if kind == "small-value" else AttackSpec(kind, (2,))
    return ExperimentConfig(
        algorithm=algorithm,
        problem=scalar_toy_problem(),
        hyper=HyperParams(lam=0.5, beta=1.0, m=3, q=1),
        master_schedule=InverseK(1 / 8, 3),
        worker_schedule=InverseK(1 / 8, 1),
        rounds=rounds,
        seed=0,
        attack=attack,
        **kw,
    )


def blobs(algorithm="admm", attack=AttackSpec("gaussian", (0, 1), std=100.0), q=2, rounds=30, **kw):
    return ExperimentConfig(
        algorithm=algorithm,
        problem=SoftmaxSpec(dataset="synthetic", train_size=240, test_size=60, f0_scale=0.01, synthetic={"n": 300}),
        hyper=HyperParams(lam=0.3, beta=0.5, m=6, q=q),
        master_schedule=InverseSqrtK(3.0, 1.0),
        worker_schedule=InverseSqrtK(0.5, 1.0),
        rounds=rounds,
        seed=7,
        attack=attack,
        batch_size=8,
        eval_every=5,
        **kw,
    )


# -- single rounds -------------------------------------------------------------


def test_scalar_toy_first_admm_round_by_hand():
    sim = Simulation(scalar_toy())
    msgs = run_round(sim)
    # workers sit at their optimum with zero duals, master gradient is zero at 0
    np.testing.assert_allclose(sim.worker_x, [[1.0], [1.0]])
    np.testing.assert_allclose(sim.x0, [0.0])
    # eta = proj(0 + (1 - 0)/2) = 1/2 ; Byzantine u = 0 - (1/2)/2 -> eta = -1/8
    np.testing.assert_allclose(msgs, [[0.5], [0.5], [-0.125]])


def test_scalar_toy_first_rsa_round_by_hand():
    sim = Simulation(scalar_toy(algorithm="rsa"))
    msgs = run_round(sim)
    # Byzantine u^0 = x0^0 - eps/1 = -1/2 ; master sees signs (+1, +1, -1)
    np.testing.assert_allclose(msgs, [[1.0], [1.0], [-0.5]])
    np.testing.assert_allclose(sim.x0, [0.0 - (1 / 3) * (0.0 - 0.5 * 1)])
    np.testing.assert_allclose(sim.worker_x, [[1.0 - 0.5], [1.0 - 0.5]])


def test_one_message_per_participant():
    sim = Simulation(blobs())
    assert run_round(sim).shape == (6, sim.x0.size)
    ideal = Simulation(blobs(algorithm="ideal-sgd"))
    assert run_round(ideal).shape == (4, ideal.x0.size)


# -- invariants ----------------------------------------------------------------


@pytest.mark.parametrize("kind", ["gaussian", "sign-flip", "copy"])
def test_dual_box_and_influence_bound_hold_every_round(kind):
    attack = {
        "gaussian": AttackSpec("gaussian", (0, 1), std=100.0),
        "sign-flip": AttackSpec("sign-flip", (0, 1), epsilon=-3.0),
        "copy": AttackSpec("copy", (0, 1), target=2),
    }[kind]
    sim = Simulation(blobs(attack=attack, rounds=40))
    lam = sim.lam
    for _ in range(40):
        run_round(sim)
        assert np.abs(sim.workers.eta).max() <= lam
        assert np.abs(sim.master.received).max() <= lam
        pull = 2 * sim.master.received - sim.master.received_prev
        assert np.abs(pull).max() <= 3 * lam * (1 + 1e-15)


def test_invariant_violation_is_detected():
    sim = Simulation(blobs())
    run_round(sim)
    sim.workers.eta[0, 0] = 10.0
    with pytest.raises(InvariantError, match="dual left the box"):
        sim._check_dual_box()


def test_copy_attack_dual_is_bit_identical_to_target():
    sim = Simulation(blobs(attack=AttackSpec("copy", (0, 1), target=2)))
    for _ in range(15):
        msgs = run_round(sim)
        np.testing.assert_array_equal(msgs[0], msgs[2])
        np.testing.assert_array_equal(msgs[1], msgs[2])


@pytest.mark.parametrize("algorithm", ["admm", "rsa", "sgd-median", "sgd-geomed"])
def test_rerun_is_bit_identical(algorithm):
    a = run_experiment(blobs(algorithm=algorithm))
    b = run_experiment(blobs(algorithm=algorithm))
    assert a == b


def test_seed_changes_the_stochastic_run():
    a = run_experiment(blobs())
    b = run_experiment(replace(blobs(), seed=8))
    assert a[-1] != b[-1]


def test_ideal_sgd_matches_attack_free_mean_sgd():
    free = blobs(algorithm="sgd-mean", attack=AttackSpec(), q=0)
    assert [r.top1_accuracy for r in run_experiment(free)] == [
        r.top1_accuracy for r in run_experiment(free.with_algorithm("ideal-sgd"))
    ]


def test_stepping_past_horizon_is_refused():
    sim = Simulation(scalar_toy(rounds=1))
    run_round(sim)
    with pytest.raises(ConfigError, match="horizon"):
        run_round(sim)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_names_round():
    cfg = replace(scalar_toy(algorithm="rsa"), master_schedule=InverseK(0.0, 1e-300), rounds=5)
    with pytest.raises(DivergenceError, match="round"):
        run_experiment(cfg)


# -- configuration errors --------------------------------------------------------


def test_lyapunov_requires_admm_and_large_penalty():
    with pytest.raises(ConfigError, match="ADMM"):
        Simulation(scalar_toy(algorithm="rsa", lyapunov=True))
    low = replace(scalar_toy(lyapunov=True), hyper=HyperParams(lam=0.1, beta=1.0, m=3, q=1))
    with pytest.raises(ConfigError, match="lambda_0"):
        Simulation(low)
    with pytest.raises(ConfigError, match="reference solution"):
        Simulation(blobs(lyapunov=True))


def test_config_rejects_mismatched_q():
    with pytest.raises(ConfigError, match="q="):
        replace(blobs(), hyper=HyperParams(0.3, 0.5, 6, 1))


def test_sign_flip_needs_data_on_byzantine_slot():
    cfg = scalar_toy(kind="large-value")
    with pytest.raises(ConfigError, match="local data"):
        Simulation(replace(cfg, attack=AttackSpec("sign-flip", (2,), epsilon=-1.0)))


# -- recording -------------------------------------------------------------------


def test_records_at_zero_cadence_and_final():
    recs = run_experiment(replace(blobs(), rounds=23, eval_every=5))
    assert [r.k for r in recs] == [0, 5, 10, 15, 20, 23]


def test_explicit_record_marks():
    recs = run_experiment(scalar_toy(rounds=20), record_at=[1, 7])
    assert [r.k for r in recs] == [1, 7, 20]


def test_scalar_toy_initial_lyapunov_by_hand():
    rec = run_experiment(scalar_toy(rounds=1, lyapunov=True), record_at=[0])[0]
    # (0 - 1/2)^2 + 2 * [(1 - 1/2)^2 + (2 * 1 / 1) * (0 - 1/4)^2], alpha_i^0 = 1
    assert rec.lyapunov == pytest.approx(0.25 + 2 * (0.25 + 2 * 0.0625))


def test_lyapunov_zero_at_optimum():
    x = np.array([0.5])
    assert metrics.lyapunov(x, np.tile(x, (2, 1)), np.full((2, 1), 0.25), x, np.full((2, 1), 0.25), 0.3, 1.0) == 0.0


def test_k_times_lyapunov_stays_bounded_without_attack():
    cfg = rate_config(0, 3000)
    recs = run_experiment(cfg, record_at=log_marks(3000, 60))
    scaled = [r.k * r.lyapunov for r in recs if r.k >= 10]
    assert max(scaled) <= 10 * scaled[0]


def test_consensus_with_large_penalty():
    cfg = replace(rate_config(0, 2000), lyapunov=False, check_invariants=True, eval_every=2000)
    final = run_experiment(cfg)[-1]
    assert final.consensus_gap < 1e-6
    assert final.master_error < 1e-10


def test_small_penalty_keeps_workers_apart():
    cfg = rate_config(0, 2000)
    lam0 = cfg.hyper.lam / 1.2
    cfg = replace(cfg, hyper=replace(cfg.hyper, lam=lam0 / 10), lyapunov=False, eval_every=2000)
    assert run_experiment(cfg)[-1].consensus_gap > 1e-3


def test_ergodic_gap_reported():
    recs = run_experiment(scalar_toy(rounds=200, ergodic=True, eval_every=100))
    assert recs[0].ergodic_gap is None
    assert all(r.ergodic_gap is not None for r in recs[1:])


# -- metrics -------------------------------------------------------------------


def test_top1_zero_weights_balanced_set():
    feats = np.random.default_rng(0).normal(size=(50, 3))
    labels = np.arange(50) % 10
    assert metrics.top1_accuracy(np.zeros(30), feats, labels, 10) == pytest.approx(0.1)


def test_top1_separable_fixture():
    feats = np.eye(3)
    assert metrics.top1_accuracy(np.eye(3).ravel(), feats, np.arange(3), 3) == 1.0


def test_top1_matches_rowwise_argmax(rng):
    feats = rng.normal(size=(40, 5))
    labels = rng.integers(0, 4, size=40)
    x = rng.normal(size=20)
    W = x.reshape(4, 5)
    hits = 0
    for a, y in zip(feats, labels):
        scores = [float(W[c] @ a) for c in range(4)]
        hits += scores.index(max(scores)) == y
    assert metrics.top1_accuracy(x, feats, labels, 4) == hits / 40


@pytest.mark.parametrize(
    "alphas, points, expected",
    [([0.5, 0.5, 0.5], [[2.0]] * 3, 2.0), ([1.0, 1.0], [[0.0], [2.0]], 1.0), ([1.0, 3.0], [[0.0], [4.0]], 3.0)],
)
def test_ergodic_average(alphas, points, expected):
    assert metrics.ergodic_average(alphas, points)[0] == pytest.approx(expected)


def test_ergodic_average_rejects_bad_weights():
    with pytest.raises(ConfigError):
        metrics.ergodic_average([], [])
    with pytest.raises(ConfigError):
        metrics.ergodic_average([0.0], [[1.0]])


def test_metrics_record_validation():
    with pytest.raises(ConfigError):
        metrics.MetricsRecord(k=0, algorithm="admm", master_error=float("nan"))
    with pytest.raises(ConfigError):
        metrics.MetricsRecord(k=0, algorithm="admm", top1_accuracy=1.5)


# -- oracles ---------------------------------------------------------------------


@pytest.mark.parametrize("a1, a2, lam, z", [(0, 2, 0.5, (0.5, 1.5)), (1.5, 1.5, 3.0, (1.5, 1.5)), (-1, 4, 0.0, (-1, 4))])
def test_prox_pair_examples(a1, a2, lam, z):
    np.testing.assert_allclose(prox_pair_closed_form(a1, a2, lam), z)


def test_prox_pair_brute_force_agrees():
    z1, z2, _ = prox_pair_brute_force(0.0, 2.0, 0.5)
    assert abs(z1 - 0.5) < 1e-6 and abs(z2 - 1.5) < 1e-6


def test_unsimplified_first_round_matches_scalar_toy():
    hp = HyperParams(0.5, 1.0, 2, 0)
    state = UnsimplifiedAdmmState.start(np.zeros(1), np.ones((2, 1)))
    grads = 0.5 * (state.x - 1.0)
    nxt = unsimplified_admm_round(state, grads, state.x0, 1 / 3, 1.0, hp)
    np.testing.assert_allclose(nxt.x, [[1.0], [1.0]])
    np.testing.assert_allclose(nxt.x0, [0.0])
    assert nxt.multiplier_imbalance() == 0.0


def test_equivalence_and_fixed_point_oracles():
    assert check_equivalence().passed
    assert check_fixed_point().passed


def test_loglog_slope_of_power_law():
    k = np.arange(1, 1000)
    assert loglog_slope(k, 3.0 / k**2, 10, 1000) == pytest.approx(-2.0)
    with pytest.raises(ConfigError):
        loglog_slope(k, -np.ones(999), 10, 1000)
