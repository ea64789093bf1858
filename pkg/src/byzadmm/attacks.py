"""Byzantine message generation.

What a Byzantine worker uploads depends on the protocol: a gradient for
aggregation SGD, a primal vector for RSA, a dual vector for ADMM.  The
value attacks (small value, large value, copy) are phrased as a malicious
primal ``u``; under ADMM that primal is pushed through the same projected
dual rule an honest worker would use, with the Byzantine worker's own dual
state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algorithms import dual_update, proj_box
from .errors import ConfigError

KINDS = ("none", "gaussian", "sign-flip", "small-value", "large-value", "copy")
PROTOCOLS = ("admm", "rsa", "sgd")


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "none"
    byzantine_ids: tuple[int, ...] = ()
    std: float = 100.0
    epsilon: float | None = None
    target: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown attack {self.kind!r}; expected one of {KINDS}")
        ids = tuple(sorted(set(self.byzantine_ids)))
        if len(ids) != len(self.byzantine_ids):
            raise ConfigError("byzantine_ids contains duplicates")
        object.__setattr__(self, "byzantine_ids", ids)
        if self.kind == "none" and ids:
            raise ConfigError("attack 'none' cannot have Byzantine workers")
        if self.kind != "none" and not ids:
            raise ConfigError(f"attack {self.kind!r} needs at least one Byzantine worker")
        if self.kind == "sign-flip" and not (self.epsilon is not None and self.epsilon < 0):
            raise ConfigError(f"sign-flip requires epsilon < 0, got {self.epsilon}")
        if self.kind == "small-value" and not (self.epsilon is not None and self.epsilon > 0):
            raise ConfigError(f"small-value requires epsilon > 0, got {self.epsilon}")
        if self.kind == "gaussian" and not self.std > 0:
            raise ConfigError(f"gaussian requires std > 0, got {self.std}")
        if self.kind == "copy":
            if self.target is None:
                raise ConfigError("copy attack requires a target worker")
            if self.target in ids:
                raise ConfigError(f"copy target {self.target} is itself Byzantine")

    @property
    def q(self) -> int:
        return len(self.byzantine_ids)

    def validate(self, protocol: str, m: int):
        if protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {protocol!r}")
        if any(i < 0 or i >= m for i in self.byzantine_ids):
            raise ConfigError(f"byzantine_ids must lie in [0, {m})")
        if self.kind == "copy" and not 0 <= self.target < m:
            raise ConfigError(f"copy target {self.target} is not a worker id in [0, {m})")
        if protocol == "sgd" and self.kind in ("small-value", "large-value"):
            raise ConfigError(f"{self.kind} attack perturbs a primal variable and is undefined for aggregation SGD")


@dataclass
class AttackContext:
    """Everything a Byzantine worker may look at when forging one message.

    ``k`` indexes the malicious value being produced: the ADMM engine passes
    ``k+1`` together with ``x0 = x0^{k+1}``, RSA passes ``k`` with ``x0^k``.
    ``count`` asks for that many independent random messages at once.
    """

    k: int
    x0: np.ndarray
    lam: float = 0.0
    beta: float = 1.0
    eta: np.ndarray | None = None
    honest: np.ndarray | None = None
    target_primal: np.ndarray | None = None
    target_message: np.ndarray | None = None
    count: int | None = None


def small_value(x0, k: int, epsilon: float):
    return x0 - epsilon / max(k * (k + 1), 1)


def large_value(x0, k: int, lam: float, beta: float):
    return x0 - (4.0 * lam / beta) * (-1.0) ** k


def malicious_primal(spec: AttackSpec, ctx: AttackContext):
    if spec.kind == "small-value":
        return small_value(ctx.x0, ctx.k, spec.epsilon)
    if spec.kind == "large-value":
        return large_value(ctx.x0, ctx.k, ctx.lam, ctx.beta)
    if spec.kind == "copy":
        return ctx.target_primal
    raise ConfigError(f"{spec.kind} is not a value attack")


def byzantine_payload(spec: AttackSpec, protocol: str, ctx: AttackContext, rng: np.random.Generator | None = None):
    """The vector one Byzantine worker uploads this round.

    For ADMM the result is already inside ``[-lam, lam]``; the caller keeps
    it as that worker's new dual state.
    """
    if spec.kind == "none":
        return ctx.honest

    if spec.kind == "gaussian":
        if rng is None:
            raise ConfigError("gaussian attack needs a random stream")
        shape = np.shape(ctx.x0) if ctx.count is None else (ctx.count, np.size(ctx.x0))
        noise = rng.normal(0.0, spec.std, size=shape)
        return proj_box(noise, ctx.lam) if protocol == "admm" else noise

    if spec.kind == "sign-flip":
        if ctx.honest is None:
            raise ConfigError("sign-flip needs the honest message")
        flipped = spec.epsilon * ctx.honest
        return proj_box(flipped, ctx.lam) if protocol == "admm" else flipped

    if protocol == "sgd":
        if spec.kind == "copy":
            if ctx.target_message is None:
                raise ConfigError("copy attack needs the target's message")
            return ctx.target_message
        raise ConfigError(f"{spec.kind} attack is undefined for aggregation SGD")

    if spec.kind == "copy" and ctx.target_primal is None:
        raise ConfigError("copy attack needs the target's primal")
    u = malicious_primal(spec, ctx)
    if protocol == "rsa":
        return u
    if ctx.eta is None:
        raise ConfigError("ADMM value attacks need the Byzantine worker's dual state")
    return dual_update(ctx.eta, u, ctx.x0, ctx.beta, ctx.lam)
