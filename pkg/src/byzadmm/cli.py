"""Command-line front end: config files in, metric CSVs and plot data out."""

from __future__ import annotations

import argparse
import csv
import math
import os
import shutil
import sys
import tempfile
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .algorithms import HyperParams, InverseK, InverseSqrtK
from .attacks import AttackSpec
from .data import load_idx_pair, load_libsvm, resolve_data_path
from .engine.config import ROSTER, ExperimentConfig, QuadraticSpec, SoftmaxSpec, scalar_toy_problem
from .engine.metrics import CSV_FIELDS, MetricsRecord
from .engine.runner import run_experiment
from .errors import ByzAdmmError, ConfigError

# -- config loading ------------------------------------------------------------

SECTIONS = ("problem", "algorithm", "attack", "schedule", "run")

QUADRATIC_KEYS = {"kind", "preset", "centers", "scales", "dataless", "f0_scale", "f0_center", "x0_init", "worker_init"}
SOFTMAX_KEYS = {
    "kind",
    "dataset",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "libsvm_train",
    "libsvm_test",
    "d_features",
    "partition",
    "train_size",
    "test_size",
    "f0_scale",
    "standardize",
    "reference_solution",
    "synthetic",
}
ALGORITHM_KEYS = {"name", "lambda", "beta", "workers", "batch_size", "exact_gradients"}
ALGORITHM_OVERRIDE_KEYS = {"lambda", "beta", "batch_size", "exact_gradients"}
ATTACK_KEYS = {"kind", "byzantine", "byzantine_ids", "std", "epsilon", "target"}
SCHEDULE_KEYS = {"master", "worker"}
RUN_KEYS = {"rounds", "seed", "eval_every", "algorithms", "lyapunov", "ergodic", "check_invariants"}


def _strict(table: dict, allowed: set, where: str, nested: set = frozenset()):
    if not isinstance(table, dict):
        raise ConfigError(f"[{where}] must be a table")
    for key in table:
        if key not in allowed and key not in nested:
            raise ConfigError(f"unknown key {key!r} in [{where}]; allowed: {sorted(allowed)}")


def _typed(table: dict, key: str, kind, where: str, default=None, required=False):
    if key not in table:
        if required:
            raise ConfigError(f"{key} required in [{where}]")
        return default
    value = table[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"[{where}] {key} must be an integer, got {value!r}")
    if not isinstance(value, kind):
        raise ConfigError(f"[{where}] {key} must be {getattr(kind, '__name__', kind)}, got {value!r}")
    return value


def _schedule(table, where: str):
    if not isinstance(table, dict):
        raise ConfigError(f"{where} must be an inline table such as {{kind = \"inverse-k\", c = 0.125, offset = 3}}")
    kind = table.get("kind")
    if kind == "inverse-k":
        _strict(table, {"kind", "c", "offset", "cap"}, where)
        return InverseK(
            _typed(table, "c", float, where, required=True),
            _typed(table, "offset", float, where, required=True),
            _typed(table, "cap", float, where, default=math.inf),
        )
    if kind == "inverse-sqrt-k":
        _strict(table, {"kind", "a", "b"}, where)
        return InverseSqrtK(_typed(table, "a", float, where, required=True), _typed(table, "b", float, where, required=True))
    raise ConfigError(f"{where}.kind must be 'inverse-k' or 'inverse-sqrt-k', got {kind!r}")


def _vector(value, where):
    if value is None:
        return None
    if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise ConfigError(f"{where} must be a list of numbers")
    return tuple(float(v) for v in value)


def _problem(table: dict, m: int):
    kind = table.get("kind", "softmax" if "dataset" in table else "quadratic")
    if kind == "quadratic":
        _strict(table, QUADRATIC_KEYS, "problem")
        if table.get("preset") == "scalar-toy":
            if set(table) - {"kind", "preset"}:
                raise ConfigError("the scalar-toy preset takes no further [problem] keys")
            return scalar_toy_problem()
        if "preset" in table:
            raise ConfigError(f"unknown quadratic preset {table['preset']!r}")
        centers = _typed(table, "centers", list, "problem", required=True)
        scales = _typed(table, "scales", list, "problem", required=True)
        dataless = set(_typed(table, "dataless", list, "problem", default=[]))
        if len(centers) != m or len(scales) != m:
            raise ConfigError(f"[problem] centers and scales need one entry per worker (workers = {m})")
        return QuadraticSpec(
            centers=tuple(None if i in dataless else _vector(c, f"problem.centers[{i}]") for i, c in enumerate(centers)),
            scales=tuple(None if i in dataless else float(s) for i, s in enumerate(scales)),
            f0_scale=_typed(table, "f0_scale", float, "problem", default=1.0),
            f0_center=_vector(table.get("f0_center"), "problem.f0_center"),
            x0_init=_vector(table.get("x0_init"), "problem.x0_init"),
            worker_init=_typed(table, "worker_init", str, "problem", default="local-optima"),
        )
    if kind == "softmax":
        _strict(table, SOFTMAX_KEYS, "problem")
        fields = {k: v for k, v in table.items() if k != "kind"}
        types = {
            "dataset": str,
            "partition": str,
            "train_size": int,
            "test_size": int,
            "d_features": int,
            "f0_scale": float,
            "standardize": bool,
            "reference_solution": bool,
            "synthetic": dict,
        }
        for key in fields:
            fields[key] = _typed(fields, key, types.get(key, str), "problem")
        return SoftmaxSpec(**fields)
    raise ConfigError(f"[problem] kind must be 'quadratic' or 'softmax', got {kind!r}")


def _attack(table: dict, m: int) -> AttackSpec:
    _strict(table, ATTACK_KEYS, "attack")
    kind = _typed(table, "kind", str, "attack", default="none")
    if "byzantine" in table and "byzantine_ids" in table:
        raise ConfigError("[attack] give either byzantine (a count) or byzantine_ids, not both")
    if "byzantine_ids" in table:
        ids = tuple(int(i) for i in _typed(table, "byzantine_ids", list, "attack"))
    else:
        q = _typed(table, "byzantine", int, "attack", default=0)
        if not 0 <= q <= m:
            raise ConfigError(f"[attack] byzantine must lie in [0, {m}]")
        ids = tuple(range(q))
    target = _typed(table, "target", int, "attack")
    if kind == "copy" and target is None:
        # first regular worker
        target = next(i for i in range(m) if i not in ids)
    return AttackSpec(
        kind=kind,
        byzantine_ids=ids,
        std=_typed(table, "std", float, "attack", default=100.0),
        epsilon=_typed(table, "epsilon", float, "attack"),
        target=target,
    )


def parse_config(raw: dict, algorithm: str | None = None) -> ExperimentConfig:
    """Validated config for one algorithm of the file's roster (default: ``[algorithm] name``)."""
    for key in raw:
        if key not in SECTIONS:
            raise ConfigError(f"unknown section [{key}]; expected {list(SECTIONS)}")
    run = raw.get("run", {})
    _strict(run, RUN_KEYS, "run")
    if "seed" not in run:
        raise ConfigError("seed required")
    alg = raw.get("algorithm", {})
    _strict(alg, ALGORITHM_KEYS, "algorithm", nested=set(ROSTER))
    name = algorithm or _typed(alg, "name", str, "algorithm", default="admm")
    if name not in ROSTER:
        raise ConfigError(f"unknown algorithm {name!r}; expected one of {sorted(ROSTER)}")
    override = alg.get(name, {})
    _strict(override, ALGORITHM_OVERRIDE_KEYS, f"algorithm.{name}")
    merged = {**{k: v for k, v in alg.items() if k not in ROSTER}, **override}

    m = _typed(merged, "workers", int, "algorithm", required=True)
    attack = _attack(raw.get("attack", {}), m)
    hyper = HyperParams(
        lam=_typed(merged, "lambda", float, "algorithm", default=0.0),
        beta=_typed(merged, "beta", float, "algorithm", default=1.0),
        m=m,
        q=attack.q,
    )
    sched = raw.get("schedule", {})
    _strict(sched, SCHEDULE_KEYS, "schedule", nested=set(ROSTER))
    sched_override = sched.get(name, {})
    _strict(sched_override, SCHEDULE_KEYS, f"schedule.{name}")
    sched_merged = {**{k: v for k, v in sched.items() if k not in ROSTER}, **sched_override}
    for key in SCHEDULE_KEYS:
        if key not in sched_merged:
            raise ConfigError(f"{key} required in [schedule]")

    return ExperimentConfig(
        algorithm=name,
        problem=_problem(raw.get("problem", {}), m),
        hyper=hyper,
        master_schedule=_schedule(sched_merged["master"], "schedule.master"),
        worker_schedule=_schedule(sched_merged["worker"], "schedule.worker"),
        rounds=_typed(run, "rounds", int, "run", required=True),
        seed=_typed(run, "seed", int, "run"),
        attack=attack,
        batch_size=_typed(merged, "batch_size", int, "algorithm", default=32),
        exact_gradients=_typed(merged, "exact_gradients", bool, "algorithm", default=False),
        eval_every=_typed(run, "eval_every", int, "run", default=10),
        lyapunov=_typed(run, "lyapunov", bool, "run", default=False),
        ergodic=_typed(run, "ergodic", bool, "run", default=False),
        check_invariants=_typed(run, "check_invariants", bool, "run", default=True),
    )


def read_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_config(path, algorithm: str | None = None) -> ExperimentConfig:
    return parse_config(read_toml(path), algorithm)


def roster(raw: dict) -> list[str]:
    names = raw.get("run", {}).get("algorithms")
    if names is None:
        return [raw.get("algorithm", {}).get("name", "admm")]
    return list(names)


# -- output --------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def _atomic_write(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def metrics_csv(records) -> str:
    lines = [",".join(CSV_FIELDS)]
    for rec in records:
        d = rec.as_dict()
        lines.append(",".join(_fmt(d[f]) for f in CSV_FIELDS))
    return "\n".join(lines) + "\n"


def emit_metrics(records, path):
    """Write one run's records as CSV; missing metrics are empty cells, floats keep 17 significant digits."""
    records = list(records)
    if not records:
        raise ConfigError("no records to write")
    _atomic_write(Path(path), metrics_csv(records))


def read_metrics(path) -> list[MetricsRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ConfigError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            vals = {f: (float(row[f]) if row[f] != "" else None) for f in CSV_FIELDS[2:]}
            out.append(MetricsRecord(k=int(row["k"]), algorithm=row["algorithm"], **vals))
    return out


def headline_metric(records) -> str:
    """Accuracy for classification runs, squared master distance otherwise."""
    for field in ("top1_accuracy", "master_error", "consensus_gap"):
        if any(getattr(r, field) is not None for r in records):
            return field
    return "master_error"


def plot_table(runs: dict) -> str:
    """``k`` followed by one column per run, space-separated; ``nan`` where a run has no record at that ``k``."""
    names = list(runs)
    metric = headline_metric([r for recs in runs.values() for r in recs])
    ks = sorted({r.k for recs in runs.values() for r in recs})
    by_k = {name: {r.k: getattr(r, metric) for r in recs} for name, recs in runs.items()}
    lines = [f"# metric: {metric}", "k " + " ".join(names)]
    for k in ks:
        cells = [_fmt(by_k[n].get(k)) or "nan" for n in names]
        lines.append(f"{k} " + " ".join(cells))
    return "\n".join(lines) + "\n"


def summary_csv(rows: list[dict], extra: list[str]) -> str:
    header = [*extra, *CSV_FIELDS]
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(row.get(h)) for h in header))
    return "\n".join(lines) + "\n"


def prepare_out(out: Path, overwrite: bool):
    if out.exists() and any(out.iterdir()):
        if not overwrite:
            raise ConfigError(f"output directory {out} is not empty; pass --overwrite to replace its contents")
        for child in out.iterdir():
            if child.is_dir():
                shutil.rmtree(child)
            else:
                child.unlink()
    out.mkdir(parents=True, exist_ok=True)


# -- commands ------------------------------------------------------------------


def _desk_scale(spec: str):
    train, _, test = spec.partition(":")
    try:
        return int(train), (int(test) if test else None)
    except ValueError:
        raise ConfigError(f"--desk-scale expects TRAIN[:TEST] row caps, got {spec!r}") from None


def _configs(args, raw) -> list[ExperimentConfig]:
    names = args.algs.split(",") if args.algs else roster(raw)
    if getattr(args, "attack", None):
        raw = {**raw, "attack": {**raw.get("attack", {}), "kind": args.attack}}
    configs = []
    for name in names:
        cfg = parse_config(raw, name.strip())
        if args.seed_override is not None:
            cfg = replace(cfg, seed=args.seed_override)
        if args.desk_scale and isinstance(cfg.problem, SoftmaxSpec):
            train, test = _desk_scale(args.desk_scale)
            cfg = replace(cfg, problem=replace(cfg.problem, train_size=train, test_size=test or cfg.problem.test_size))
        configs.append(cfg)
    return configs


def _execute(out: Path, grid, config_path: Path, extra_cols: list[str]) -> int:
    """Run every (labels, config) pair, writing per-run CSVs, plot data and a summary."""
    shutil.copyfile(config_path, out / config_path.name)
    summary = []
    groups: dict[str, dict] = {}
    try:
        for labels, cfg in grid:
            records = run_experiment(cfg)
            sub = out / labels["_dir"] if labels.get("_dir") else out
            sub.mkdir(exist_ok=True)
            emit_metrics(records, sub / f"{cfg.algorithm}.csv")
            groups.setdefault(labels.get("_dir", ""), {})[cfg.algorithm] = records
            final = records[-1].as_dict()
            summary.append({**{k: v for k, v in labels.items() if not k.startswith("_")}, **final})
            print(_final_line(labels, records[-1]))
        for sub, runs in groups.items():
            _atomic_write((out / sub if sub else out) / "plot.dat", plot_table(runs))
        _atomic_write(out / "summary.csv", summary_csv(summary, extra_cols))
    except Exception as exc:
        if summary:
            _atomic_write(out / "summary.csv", summary_csv(summary, extra_cols))
        _atomic_write(out / "FAILED", "".join(traceback.format_exception(type(exc), exc, exc.__traceback__)))
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _final_line(labels, rec: MetricsRecord) -> str:
    tags = " ".join(f"{k}={v}" for k, v in labels.items() if not k.startswith("_"))
    vals = " ".join(f"{f}={getattr(rec, f):.6g}" for f in CSV_FIELDS[2:] if getattr(rec, f) is not None)
    return f"{tags} k={rec.k} {vals}".strip()


def cmd_run(args) -> int:
    raw = read_toml(args.config)
    configs = _configs(args, raw)
    out = Path(args.out)
    prepare_out(out, args.overwrite)
    return _execute(out, [({"algorithm": c.algorithm}, c) for c in configs], Path(args.config), [])


def _with_q(cfg: ExperimentConfig, q: int) -> ExperimentConfig:
    if isinstance(cfg.problem, QuadraticSpec):
        raise ConfigError("q sweeps need a data-driven problem; quadratic slots are fixed in the config")
    attack = cfg.attack
    if q == 0:
        attack = AttackSpec()
    else:
        kind = attack.kind if attack.kind != "none" else "gaussian"
        target = attack.target
        if kind == "copy" and (target is None or target < q):
            target = q  # first regular worker
        attack = replace(attack, kind=kind, byzantine_ids=tuple(range(q)), target=target)
    return replace(cfg, attack=attack, hyper=replace(cfg.hyper, q=q))


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def cmd_sweep(args) -> int:
    raw = read_toml(args.config)
    base = _configs(args, raw)
    lambdas = _floats(args.lambdas) if args.lambdas else [None]
    qs = [int(v) for v in _floats(args.qs)] if args.qs else [None]
    grid = []
    for lam in lambdas:
        for q in qs:
            for cfg in base:
                labels = {}
                if lam is not None:
                    cfg = replace(cfg, hyper=replace(cfg.hyper, lam=lam))
                    labels["lambda"] = lam
                if q is not None:
                    cfg = _with_q(cfg, q)
                    labels["q"] = q
                labels["_dir"] = "_".join(f"{k}={v}" for k, v in labels.items())
                labels["algorithm"] = cfg.algorithm
                grid.append((labels, cfg))
    out = Path(args.out)
    prepare_out(out, args.overwrite)
    cols = [c for c, vals in (("lambda", lambdas), ("q", qs)) if vals != [None]]
    status = _execute(out, grid, Path(args.config), cols)
    if status == 0:
        _print_sweep_table(out / "summary.csv", cols)
    return status


def _print_sweep_table(path: Path, cols):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    metric = "top1_accuracy" if any(r["top1_accuracy"] for r in rows) else "master_error"
    print(f"\nfinal {metric}")
    for r in rows:
        print("  " + "  ".join(f"{c}={r[c]}" for c in cols) + f"  {r['algorithm']:<11} {float(r[metric]):.4f}")


def cmd_verify(args) -> int:
    from .engine.verify import run_suite

    results = run_suite(rate_rounds=args.rate_rounds)
    for res in results:
        print(res.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 1


def cmd_parse_check(args) -> int:
    if args.libsvm:
        if not args.features:
            raise ConfigError("--libsvm needs --features")
        ds = load_libsvm(resolve_data_path(args.libsvm), args.features)
    elif args.images and args.labels:
        ds = load_idx_pair(resolve_data_path(args.images), resolve_data_path(args.labels))
    else:
        raise ConfigError("give --images and --labels, or --libsvm with --features")
    counts = np.bincount(ds.labels, minlength=ds.class_count)
    print(f"rows={len(ds)} features={ds.n_features} classes={ds.class_count}")
    print("per-class: " + " ".join(f"{c}:{n}" for c, n in enumerate(counts)))
    print(f"feature range [{ds.features.min():.6g}, {ds.features.max():.6g}]")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="byzadmm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML experiment file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--overwrite", action="store_true", help="replace the contents of a non-empty output directory")
        p.add_argument("--algs", help="comma-separated roster, e.g. admm,rsa,sgd-geomed")
        p.add_argument("--seed-override", type=int, default=None)
        p.add_argument("--desk-scale", metavar="TRAIN[:TEST]", help="row caps for the stratified subsample")
        p.add_argument("--attack", help="replace the attack kind from the config")

    p_run = sub.add_parser("run", help="run each algorithm of the roster once")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run the roster over a grid of penalty weights and/or Byzantine counts")
    common(p_sweep)
    p_sweep.add_argument("--lambda", dest="lambdas", help="comma-separated penalty weights")
    p_sweep.add_argument("--q", dest="qs", help="comma-separated Byzantine worker counts")
    p_sweep.set_defaults(func=cmd_sweep)

    p_verify = sub.add_parser("verify", help="run the oracle suite and print a pass/fail table")
    p_verify.add_argument("--rate-rounds", type=int, default=100_000)
    p_verify.set_defaults(func=cmd_verify)

    p_parse = sub.add_parser("parse-check", help="load a dataset file and print its shape and class counts")
    p_parse.add_argument("--images")
    p_parse.add_argument("--labels")
    p_parse.add_argument("--libsvm")
    p_parse.add_argument("--features", type=int)
    p_parse.set_defaults(func=cmd_parse_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ByzAdmmError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
