"""Declarative experiment description and the runtime setup built from it."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..algorithms import HyperParams, StepsizeSchedule
from ..attacks import AttackSpec
from ..data import (
    Dataset,
    load_idx_pair,
    load_libsvm,
    partition_digit_pairs,
    partition_iid,
    resolve_data_path,
    standardize,
    stratified_sample,
    synthetic_blobs,
)
from ..errors import ConfigError
from ..model import Problem, Quadratic, Softmax, exact_minimizer

ROSTER = {
    # name: (protocol, aggregation, byzantine workers take part)
    "admm": ("admm", None, True),
    "rsa": ("rsa", None, True),
    "sgd-mean": ("sgd", "mean", True),
    "sgd-median": ("sgd", "median", True),
    "sgd-geomed": ("sgd", "geomed", True),
    "ideal-sgd": ("sgd", "mean", False),
}


@dataclass(frozen=True)
class QuadraticSpec:
    """Quadratic worker losses; ``centers[i] is None`` marks a slot without data."""

    centers: tuple
    scales: tuple
    f0_scale: float = 1.0
    f0_center: tuple | None = None
    x0_init: tuple | None = None
    worker_init: str = "local-optima"

    @property
    def m(self) -> int:
        return len(self.centers)


@dataclass(frozen=True)
class SoftmaxSpec:
    """Softmax regression over a real or synthetic dataset split across workers.

    When no test files are given, the test rows are drawn (stratified) from
    the training file, disjoint from the training subset.
    """

    dataset: str = "mnist"
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    libsvm_train: str | None = None
    libsvm_test: str | None = None
    d_features: int | None = None
    partition: str = "iid"
    train_size: int | None = 2000
    test_size: int | None = 500
    f0_scale: float = 0.01
    standardize: bool = False
    reference_solution: bool = False
    synthetic: dict = field(default_factory=dict)


def scalar_toy_problem() -> QuadraticSpec:
    """Two regular scalar workers ``(x-1)^2/4``, one dataless Byzantine slot, ``f0 = x^2/2``."""
    return QuadraticSpec(
        centers=((1.0,), (1.0,), None),
        scales=(0.5, 0.5, None),
        f0_scale=1.0,
        x0_init=(0.0,),
        worker_init="local-optima",
    )


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: str
    problem: QuadraticSpec | SoftmaxSpec
    hyper: HyperParams
    master_schedule: StepsizeSchedule
    worker_schedule: StepsizeSchedule
    rounds: int
    seed: int
    attack: AttackSpec = AttackSpec()
    batch_size: int = 32
    exact_gradients: bool = False
    eval_every: int = 10
    lyapunov: bool = False
    ergodic: bool = False
    check_invariants: bool = True

    def __post_init__(self):
        if self.algorithm not in ROSTER:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {sorted(ROSTER)}")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.hyper.q != self.attack.q:
            raise ConfigError(f"hyper.q={self.hyper.q} but the attack names {self.attack.q} Byzantine workers")
        self.attack.validate(self.protocol, self.hyper.m)

    @property
    def protocol(self) -> str:
        return ROSTER[self.algorithm][0]

    @property
    def aggregation(self) -> str | None:
        return ROSTER[self.algorithm][1]

    @property
    def byzantine_participate(self) -> bool:
        return ROSTER[self.algorithm][2]

    def with_algorithm(self, name: str, **changes) -> "ExperimentConfig":
        return replace(self, algorithm=name, **changes)


@dataclass
class Setup:
    """Everything derived from a config before round 0."""

    problem: Problem
    test: Dataset | None
    x0: np.ndarray
    worker_x: np.ndarray  # (m, d), rows of dataless slots are ignored
    x_star: np.ndarray | None
    local_sizes: list[int]


def _quadratic_parts(spec: QuadraticSpec, m: int):
    if spec.m != m:
        raise ConfigError(f"quadratic problem defines {spec.m} worker slots but m={m}")
    dims = {len(c) for c in spec.centers if c is not None}
    if len(dims) != 1:
        raise ConfigError("quadratic centers must all have the same dimension")
    d = dims.pop()
    losses = [None if c is None else Quadratic(np.asarray(c, float), s) for c, s in zip(spec.centers, spec.scales)]
    f0_center = np.zeros(d) if spec.f0_center is None else np.asarray(spec.f0_center, float)
    reg = Quadratic(f0_center, spec.f0_scale)
    x0 = np.zeros(d) if spec.x0_init is None else np.asarray(spec.x0_init, float)
    if x0.shape != (d,):
        raise ConfigError(f"x0_init must have dimension {d}")
    X = np.tile(x0, (m, 1))
    if spec.worker_init == "local-optima":
        for i, l in enumerate(losses):
            if l is not None:
                X[i] = l.center
    elif spec.worker_init != "master":
        raise ConfigError(f"worker_init must be 'local-optima' or 'master', got {spec.worker_init!r}")
    return losses, reg, x0, X


def _load_softmax_data(spec: SoftmaxSpec, seed: int) -> tuple[Dataset, Dataset]:
    rng = np.random.default_rng([seed, 0x5EED])
    if spec.dataset == "mnist":
        if not (spec.train_images and spec.train_labels):
            raise ConfigError("mnist problem needs train_images and train_labels")
        full = load_idx_pair(resolve_data_path(spec.train_images), resolve_data_path(spec.train_labels))
        test_full = None
        if spec.test_images or spec.test_labels:
            test_full = load_idx_pair(resolve_data_path(spec.test_images), resolve_data_path(spec.test_labels))
    elif spec.dataset == "libsvm":
        if not (spec.libsvm_train and spec.d_features):
            raise ConfigError("libsvm problem needs libsvm_train and d_features")
        full = load_libsvm(resolve_data_path(spec.libsvm_train), spec.d_features)
        test_full = load_libsvm(resolve_data_path(spec.libsvm_test), spec.d_features) if spec.libsvm_test else None
    elif spec.dataset == "synthetic":
        full = synthetic_blobs(seed=seed, **spec.synthetic)
        test_full = None
    else:
        raise ConfigError(f"unknown dataset {spec.dataset!r}")

    n_train = len(full) if spec.train_size is None else spec.train_size
    if test_full is None:
        n_test = spec.test_size if spec.test_size is not None else max(1, len(full) // 5)
        test_rows = stratified_sample(full, n_test, rng)
        train_rows = stratified_sample(full, min(n_train, len(full) - n_test), rng, exclude=test_rows)
        train, test = full.subset(train_rows), full.subset(test_rows)
    else:
        train = full.subset(stratified_sample(full, min(n_train, len(full)), rng))
        n_test = len(test_full) if spec.test_size is None else min(spec.test_size, len(test_full))
        test = test_full.subset(stratified_sample(test_full, n_test, rng))
    if spec.standardize:
        train, test = standardize(train, test)
    return train, test


def build_setup(config: ExperimentConfig) -> Setup:
    spec = config.problem
    m = config.hyper.m
    if isinstance(spec, QuadraticSpec):
        losses, reg, x0, X = _quadratic_parts(spec, m)
        classes, test, sizes = None, None, [1] * m
    elif isinstance(spec, SoftmaxSpec):
        train, test = _load_softmax_data(spec, config.seed)
        if spec.partition == "iid":
            part = partition_iid(train, m, config.seed)
        elif spec.partition == "digit-pairs":
            part = partition_digit_pairs(train, m)
        else:
            raise ConfigError(f"unknown partition {spec.partition!r}")
        classes = train.class_count
        losses = [Softmax(train.features[s], train.labels[s], classes) for s in part.shards]
        d = classes * train.n_features
        reg = Quadratic(np.zeros(d), spec.f0_scale)
        x0, X, sizes = np.zeros(d), np.zeros((m, d)), [len(s) for s in part.shards]
    else:
        raise ConfigError(f"unsupported problem spec {type(spec).__name__}")

    byz = set(config.attack.byzantine_ids)
    regular = [i for i in range(m) if i not in byz]
    problem = Problem(reg, losses, regular, classes=classes)
    x_star = None
    if isinstance(spec, QuadraticSpec) or spec.reference_solution:
        x_star = exact_minimizer(problem, tol=1e-8)
    return Setup(problem, test, x0, X, x_star, sizes)
