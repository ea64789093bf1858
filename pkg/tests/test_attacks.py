import numpy as np
import pytest

from byzadmm.algorithms import dual_update
from byzadmm.attacks import AttackContext, AttackSpec, byzantine_payload, large_value, small_value
from byzadmm.errors import ConfigError


def ctx(**kw):
    base = dict(k=1, x0=np.zeros(2), lam=0.5, beta=1.0)
    base.update(kw)
    return AttackContext(**base)


@pytest.mark.parametrize(
    "kwargs, message",
    [
        (dict(kind="sign-flip", byzantine_ids=(0,), epsilon=3.0), "epsilon < 0"),
        (dict(kind="small-value", byzantine_ids=(0,), epsilon=-1.0), "epsilon > 0"),
        (dict(kind="copy", byzantine_ids=(0,)), "target"),
        (dict(kind="copy", byzantine_ids=(0,), target=0), "itself Byzantine"),
        (dict(kind="none", byzantine_ids=(1,)), "cannot have"),
        (dict(kind="gaussian"), "at least one"),
        (dict(kind="flood", byzantine_ids=(0,)), "unknown attack"),
        (dict(kind="gaussian", byzantine_ids=(0, 0)), "duplicates"),
    ],
)
def test_spec_validation(kwargs, message):
    with pytest.raises(ConfigError, match=message):
        AttackSpec(**kwargs)


def test_value_attacks_rejected_for_gradient_protocol():
    spec = AttackSpec("large-value", (0,))
    with pytest.raises(ConfigError, match="undefined"):
        spec.validate("sgd", 3)
    spec.validate("admm", 3)


def test_ids_must_fit_worker_count():
    with pytest.raises(ConfigError):
        AttackSpec("gaussian", (5,)).validate("admm", 3)


def test_small_value_formula():
    # x0 - eps / max(k(k+1), 1)
    assert small_value(1.0, 0, 0.5) == pytest.approx(0.5)
    assert small_value(1.0, 2, 0.5) == pytest.approx(1.0 - 0.5 / 6)


def test_large_value_alternates():
    assert large_value(0.0, 0, 0.5, 1.0) == pytest.approx(-2.0)
    assert large_value(0.0, 1, 0.5, 1.0) == pytest.approx(2.0)


def test_admm_gaussian_is_clamped(rng):
    out = byzantine_payload(AttackSpec("gaussian", (0,), std=100), "admm", ctx(count=3), rng)
    assert out.shape == (3, 2)
    assert np.all(np.abs(out) <= 0.5)


def test_sgd_gaussian_is_raw(rng):
    out = byzantine_payload(AttackSpec("gaussian", (0,), std=100), "sgd", ctx(), rng)
    assert np.abs(out).max() > 0.5


def test_sign_flip_scales_honest_message():
    spec = AttackSpec("sign-flip", (0,), epsilon=-3.0)
    honest = np.array([0.1, -0.4])
    np.testing.assert_allclose(byzantine_payload(spec, "rsa", ctx(honest=honest)), [-0.3, 1.2])
    np.testing.assert_allclose(byzantine_payload(spec, "admm", ctx(honest=honest)), [-0.3, 0.5])


def test_admm_value_attack_goes_through_dual_rule():
    spec = AttackSpec("small-value", (2,), epsilon=0.5)
    eta = np.zeros(2)
    out = byzantine_payload(spec, "admm", ctx(k=1, eta=eta))
    u = small_value(np.zeros(2), 1, 0.5)
    np.testing.assert_allclose(out, dual_update(eta, u, np.zeros(2), 1.0, 0.5))
    np.testing.assert_allclose(out, [-0.125, -0.125])


def test_rsa_value_attack_sends_primal():
    out = byzantine_payload(AttackSpec("large-value", (2,)), "rsa", ctx(k=0, x0=np.array([1.0])))
    np.testing.assert_allclose(out, [-1.0])


def test_copy_attack_payloads():
    spec = AttackSpec("copy", (0,), target=1)
    target = np.array([0.3, -0.2])
    np.testing.assert_allclose(byzantine_payload(spec, "rsa", ctx(target_primal=target)), target)
    np.testing.assert_allclose(byzantine_payload(spec, "sgd", ctx(target_message=target)), target)
    with pytest.raises(ConfigError):
        byzantine_payload(spec, "admm", ctx())


def test_missing_inputs_are_reported(rng):
    with pytest.raises(ConfigError, match="random stream"):
        byzantine_payload(AttackSpec("gaussian", (0,)), "admm", ctx())
    with pytest.raises(ConfigError, match="honest"):
        byzantine_payload(AttackSpec("sign-flip", (0,), epsilon=-1.0), "sgd", ctx())
    with pytest.raises(ConfigError, match="dual state"):
        byzantine_payload(AttackSpec("large-value", (0,)), "admm", ctx())
