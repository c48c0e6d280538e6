"""Experiment harness: runs, sweeps, evaluation counting and result files.

Results land under ``$FLOWVI_OUTPUT`` (default ``./results``):

* ``reference/`` cached exact reference samples (binary + JSON sidecar with a
  SHA-256 of the payload, checked on reuse);
* ``runs/<config-hash>/`` one directory per run with ``config.ini``,
  ``results.csv`` and ``record.json``.

Evaluation counting follows the VI convention: parallel evaluations are the
gradient batch size, sequential evaluations the number of iterations.
"""
from __future__ import annotations

import csv
import dataclasses
import enum
import hashlib
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, config_hash, config_to_text
from .metrics import baseline_value
from .objectives import Estimator, Objective
from .optim import train
from .rng import RngState, split
from .targets import get_target

log = logging.getLogger(__name__)

OUTPUT_ENV = "FLOWVI_OUTPUT"
RESULT_COLUMNS = (
    "target", "dim", "layers", "hidden", "objective", "estimator", "batch", "lr", "schedule",
    "iteration", "parallel_evals", "sequential_evals", "metric", "baseline", "diverged", "wall_time_s",
)
# child streams of RngState(reference_seed)
REFERENCE_STREAM = 0x5245
BASELINE_STREAM = 0x4241


def output_root(root=None) -> Path:
    return Path(root if root is not None else os.environ.get(OUTPUT_ENV, "results"))


def fmt(x) -> str:
    """Lossless decimal form of a float (17 significant digits)."""
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# atomic files and sample matrices

def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_samples(path, X: np.ndarray, seed: int, **meta) -> None:
    """``<path>``: row-major little-endian float64; ``<path>.json``: rows, cols, seed, ..."""
    path = Path(path)
    X = np.ascontiguousarray(X, dtype="<f8")
    if X.ndim != 2:
        raise ValueError("sample files hold S x d matrices")
    payload = X.tobytes()
    side = {"rows": int(X.shape[0]), "cols": int(X.shape[1]), "seed": int(seed),
            "sha256": hashlib.sha256(payload).hexdigest(), **meta}
    _atomic_write(path, payload)
    _atomic_write(Path(str(path) + ".json"), (json.dumps(side, indent=2) + "\n").encode())


def read_samples(path, verify: bool = True):
    """Inverse of :func:`write_samples`; returns ``(X, sidecar)``."""
    path = Path(path)
    side = json.loads(Path(str(path) + ".json").read_text())
    payload = path.read_bytes()
    rows, cols = int(side["rows"]), int(side["cols"])
    if len(payload) != 8 * rows * cols:
        raise ValueError(f"{path}: expected {rows}x{cols} float64 values, found {len(payload)} bytes")
    if verify and "sha256" in side and hashlib.sha256(payload).hexdigest() != side["sha256"]:
        raise ValueError(f"{path}: checksum mismatch")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(float), side


# ---------------------------------------------------------------------------
# records

@dataclass(frozen=True)
class CheckpointRow:
    iteration: int
    parallel_evals: int
    sequential_evals: int
    metric: float
    baseline: float


@dataclass
class RunRecord:
    config: ExperimentConfig
    config_hash: str
    checkpoints: list = field(default_factory=list)
    diverged_at: int | None = None
    wall_time: float = 0.0
    error: str | None = None
    eval_samples: np.ndarray | None = field(default=None, repr=False)

    @property
    def final_metric(self) -> float:
        return self.checkpoints[-1].metric if self.checkpoints else float("nan")

    @property
    def baseline(self) -> float:
        return self.checkpoints[-1].baseline if self.checkpoints else float("nan")

    def to_json(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "target": self.config.target_name,
            "diverged_at": self.diverged_at,
            "wall_time_s": self.wall_time,
            "error": self.error,
            "checkpoints": [dataclasses.asdict(c) for c in self.checkpoints],
        }


def count_evaluations(config: ExperimentConfig, iteration: int) -> tuple[int, int]:
    """``(parallel, sequential)`` = ``(batch size, iteration)``, whatever the estimator."""
    if not 0 <= iteration <= config.iterations:
        raise ValueError(f"iteration {iteration} outside [0, {config.iterations}]")
    return config.batch_size, iteration


# ---------------------------------------------------------------------------
# reference samples and baseline

def reference_samples(target_name: str, n: int, seed: int, root=None, construction_seed: int = 0) -> np.ndarray:
    """Exact reference samples, drawn once per (target, size, seed) and cached on disk."""
    target = get_target(target_name, construction_seed)
    path = output_root(root) / "reference" / f"{target_name}-c{construction_seed}-n{n}-s{seed}.bin"
    if path.exists() and Path(str(path) + ".json").exists():
        try:
            X, side = read_samples(path)
            if side.get("target") == target_name and X.shape == (n, target.dim):
                return X
            log.warning("reference cache %s does not match the request; regenerating", path)
        except ValueError as exc:
            log.warning("reference cache %s unusable (%s); regenerating", path, exc)
    X = target.exact_sample(split(RngState(seed), REFERENCE_STREAM), n)
    write_samples(path, X, seed, target=target_name, construction_seed=construction_seed)
    return X


def run_baseline(target_name: str, S: int, seed: int, construction_seed: int = 0) -> float:
    target = get_target(target_name, construction_seed)
    return baseline_value(target, split(RngState(seed), BASELINE_STREAM), S)


# ---------------------------------------------------------------------------
# runs

def run_experiment(config: ExperimentConfig, root=None, persist: bool = True,
                   keep_samples: bool = False, backend=None, log_every: int = 0) -> RunRecord:
    """Train one configuration and evaluate it at its checkpoints."""
    h = config_hash(config)
    started = time.perf_counter()
    target = get_target(config.target_name, config.construction_seed)
    reference = reference_samples(config.target_name, config.reference_sample_size,
                                  config.reference_seed, root, config.construction_seed)
    result = train(config, target, RngState(config.seed), reference=reference, backend=backend,
                   keep_samples=keep_samples, log_every=log_every)
    baseline = run_baseline(config.target_name, config.eval_sample_size, config.reference_seed,
                            config.construction_seed)
    rows = []
    for it, value in result.metric_checkpoints:
        par, seq = count_evaluations(config, it)
        rows.append(CheckpointRow(it, par, seq, float(value), baseline))
    record = RunRecord(config, h, rows, result.diverged_at, time.perf_counter() - started,
                       eval_samples=result.eval_samples)
    if persist:
        persist_record(record, root)
    return record


def persist_record(record: RunRecord, root=None) -> Path:
    run_dir = output_root(root) / "runs" / record.config_hash
    _atomic_write(run_dir / "config.ini", config_to_text(record.config).encode())
    emit_results([record], run_dir / "results.csv")
    _atomic_write(run_dir / "record.json", (json.dumps(record.to_json(), indent=2) + "\n").encode())
    if record.eval_samples is not None:
        write_samples(run_dir / "eval_samples.bin", record.eval_samples, record.config.seed,
                      target=record.config.target_name)
    return run_dir


class Axis(enum.Enum):
    CAPACITY = "capacity"
    OBJECTIVE = "objective"
    ESTIMATOR_BATCH = "estimator_batch"
    STEP_SIZE = "step_size"


def parse_grid(axis: Axis, text: str) -> list:
    """Grid values from a comma-separated string (``stl:512`` for estimator_batch)."""
    items = [s.strip() for s in text.split(",") if s.strip()]
    if axis is Axis.CAPACITY:
        return [int(s) for s in items]
    if axis is Axis.STEP_SIZE:
        return [float(s) for s in items]
    if axis is Axis.OBJECTIVE:
        return [Estimator(s).value for s in items]
    out = []
    for s in items:
        est, _, batch = s.partition(":")
        out.append((Estimator(est).value, int(batch)))
    return out


def sweep_point(axis: Axis, base: ExperimentConfig, value) -> ExperimentConfig:
    if axis is Axis.CAPACITY:
        return base.replace(flow=dataclasses.replace(base.flow, num_coupling_layers=int(value)))
    if axis is Axis.STEP_SIZE:
        return base.replace(schedule=dataclasses.replace(base.schedule, base_lr=float(value)))
    if axis is Axis.OBJECTIVE:
        est = Estimator(value)
    else:
        est, batch = Estimator(value[0]), int(value[1])
        base = base.replace(batch_size=batch)
    obj = Objective.FORWARD_KL if est is Estimator.FORWARD_KL else Objective.REVERSE_KL
    return base.replace(estimator=est, objective=obj)


def derived_seed(base_seed: int, point: int, replicate: int) -> int:
    """Distinct, reproducible seed per (grid point, replicate)."""
    return split(split(RngState(base_seed), point), replicate).stream


def run_sweep(axis: Axis, base: ExperimentConfig, grid, replicates: int = 1, root=None,
              persist: bool = True, backend=None) -> list:
    """One run per grid point and replicate; all share the base reference samples."""
    axis = Axis(axis)
    records = []
    for i, value in enumerate(grid):
        for r in range(replicates):
            cfg = None
            try:
                cfg = sweep_point(axis, base, value).replace(seed=derived_seed(base.seed, i, r))
                records.append(run_experiment(cfg, root, persist, backend=backend))
            except Exception as exc:  # a failed point must not end the sweep
                log.error("sweep point %r (replicate %d) failed: %s", value, r, exc)
                records.append(RunRecord(cfg or base, config_hash(cfg or base), error=repr(exc)))
    return records


# ---------------------------------------------------------------------------
# results table

def record_rows(record: RunRecord) -> list:
    c = record.config
    diverged = "1" if record.diverged_at is not None else "0"
    rows = []
    for cp in record.checkpoints:
        if record.diverged_at is not None and cp.iteration > record.diverged_at:
            break
        rows.append([
            c.target_name, str(c.flow.dim), str(c.flow.num_coupling_layers), str(c.flow.hidden_units),
            c.objective.value, c.estimator.value, str(c.batch_size), fmt(c.schedule.base_lr),
            c.schedule.kind.value, str(cp.iteration), str(cp.parallel_evals), str(cp.sequential_evals),
            fmt(cp.metric), fmt(cp.baseline), diverged, fmt(record.wall_time),
        ])
    return rows


def results_text(records) -> str:
    lines = [",".join(RESULT_COLUMNS)]
    for rec in records:
        lines.extend(",".join(row) for row in record_rows(rec))
    return "\n".join(lines) + "\n"


def emit_results(records, out_path, samples_dir=None) -> None:
    """Write the results table; optionally each run's evaluation samples too."""
    records = list(records)
    if not records:
        raise ValueError("no records to emit")
    _atomic_write(Path(out_path), results_text(records).encode())
    if samples_dir is not None:
        for rec in records:
            if rec.eval_samples is not None:
                write_samples(Path(samples_dir) / f"{rec.config_hash}.bin", rec.eval_samples,
                              rec.config.seed, target=rec.config.target_name)


def read_results(path) -> list:
    """Parse a results table into dicts with numeric fields converted."""
    ints = {"dim", "layers", "hidden", "batch", "iteration", "parallel_evals", "sequential_evals", "diverged"}
    floats = {"lr", "metric", "baseline", "wall_time_s"}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append({k: int(v) if k in ints and v != "" else float(v) if k in floats and v != "" else v
                        for k, v in row.items()})
    return out
