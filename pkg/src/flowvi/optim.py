"""Adam, step-size schedules and the training loop."""
from __future__ import annotations

import enum
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .flow import FlowParams, init_params, sample_flow
from .metrics import compare
from .objectives import Estimator, GradientEstimate, estimate
from .rng import RngState, split, standard_normal_matrix
from .targets import Target

log = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8

# child-stream labels of a run's RngState
STREAM_INIT = 0
STREAM_BATCH = 1
STREAM_EVAL = 2
STREAM_SUBSAMPLE = 3
STREAM_REFERENCE = 4


class ScheduleKind(enum.Enum):
    CONSTANT = "constant"
    DECAYED = "decayed"


@dataclass(frozen=True)
class Schedule:
    kind: ScheduleKind
    base_lr: float
    total_iters: int

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if self.total_iters < 0:
            raise ValueError(f"total_iters must be >= 0, got {self.total_iters}")

    @property
    def boundaries(self) -> tuple[int, int]:
        """Decay points ``ceil(total/2)`` and ``ceil(3 total/4)``."""
        n = self.total_iters
        return (n + 1) // 2, (3 * n + 3) // 4


def schedule_lr(schedule: Schedule, t: int) -> float:
    """Step size at iteration ``t`` (0-based); ``0 <= t < total_iters``."""
    if not 0 <= t < schedule.total_iters:
        raise ValueError(f"iteration {t} outside [0, {schedule.total_iters})")
    if schedule.kind is ScheduleKind.CONSTANT:
        return schedule.base_lr
    first, second = schedule.boundaries
    if t < first:
        return schedule.base_lr
    if t < second:
        return schedule.base_lr / 10.0
    return schedule.base_lr / 100.0


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)

    def save(self, path) -> None:
        """``<path>``: ``m`` then ``v`` as little-endian float64; ``<path>.json`` sidecar."""
        path = Path(path)
        np.concatenate([self.m, self.v]).astype("<f8").tofile(path)
        meta = {"t": self.t, "num_params": int(self.m.size), "beta1": BETA1, "beta2": BETA2, "eps": EPS}
        Path(str(path) + ".json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, path) -> "AdamState":
        path = Path(path)
        meta = json.loads(Path(str(path) + ".json").read_text())
        flat = np.fromfile(path, dtype="<f8")
        P = meta["num_params"]
        if flat.size != 2 * P:
            raise ValueError(f"{path}: expected {2 * P} values, found {flat.size}")
        return cls(flat[:P].copy(), flat[P:].copy(), int(meta["t"]))


def adam_step(state: AdamState, params: FlowParams, grad: np.ndarray, lr: float):
    """One bias-corrected Adam step *descending* ``grad``; returns ``(params, state)``."""
    grad = np.asarray(grad, dtype=float)
    t = state.t + 1
    m = BETA1 * state.m + (1.0 - BETA1) * grad
    v = BETA2 * state.v + (1.0 - BETA2) * (grad * grad)
    m_hat = m / (1.0 - BETA1 ** t)
    v_hat = v / (1.0 - BETA2 ** t)
    theta = params.theta - lr * m_hat / (np.sqrt(v_hat) + EPS)
    return params.with_theta(theta), AdamState(m, v, t)


@dataclass
class TrainResult:
    final_params: FlowParams
    objective_trace: np.ndarray
    diverged_at: int | None = None
    metric_checkpoints: list = field(default_factory=list)  # (iteration, value)
    eval_samples: np.ndarray | None = None  # flow samples of the last checkpoint
    adam_state: AdamState | None = None


def draw_batch(run, target: Target, params: FlowParams, rng: RngState, t: int) -> np.ndarray:
    """Fresh batch of iteration ``t``: base noise, or exact samples for forward KL."""
    it = split(split(rng, STREAM_BATCH), t)
    if run.estimator is Estimator.FORWARD_KL:
        return target.exact_sample(it, run.batch_size)
    return standard_normal_matrix(it, run.batch_size, params.config.dim)


def evaluate_checkpoint(run, params: FlowParams, reference: np.ndarray, rng: RngState, t: int):
    """``(metric, flow samples)`` at iteration ``t``."""
    Z, _, _ = sample_flow(params, split(split(rng, STREAM_EVAL), t), run.eval_sample_size)
    with np.errstate(all="ignore"):
        report = compare(Z, reference, split(split(rng, STREAM_SUBSAMPLE), t))
    return report.value, Z


def train(run, target: Target, rng: RngState, reference: np.ndarray | None = None,
          backend=None, keep_samples: bool = False, log_every: int = 0) -> TrainResult:
    """Optimize a flow for ``run.iterations`` Adam steps.

    ``run`` is an :class:`~flowvi.config.ExperimentConfig`. A non-finite
    estimate stops the loop with ``diverged_at`` set and the last finite
    parameters kept. Checkpoint ``c`` is evaluated with the parameters after
    ``c`` updates, against ``reference`` (exact samples drawn from the run's
    stream when not given).
    """
    if run.estimator is Estimator.FORWARD_KL and target.dim != run.flow.dim:
        raise ValueError("flow and target dimensions differ")
    params = init_params(run.flow, split(rng, STREAM_INIT))
    state = AdamState.zeros(params.size)
    schedule = run.schedule
    checkpoints = sorted(set(run.checkpoint_iters))
    if checkpoints and reference is None:
        reference = target.exact_sample(split(rng, STREAM_REFERENCE), run.reference_sample_size)
    trace = []
    metrics = []
    samples = None
    diverged_at = None
    started = time.perf_counter()
    ci = 0
    for t in range(run.iterations + 1):
        while ci < len(checkpoints) and checkpoints[ci] == t:
            value, Z = evaluate_checkpoint(run, params, reference, rng, t)
            metrics.append((t, value))
            if keep_samples:
                samples = Z
            ci += 1
        if t == run.iterations:
            break
        batch = draw_batch(run, target, params, rng, t)
        est: GradientEstimate = estimate(run.estimator, params, target, batch, backend)
        if est.diverged:
            diverged_at = t
            log.warning("non-finite estimate at iteration %d; stopping", t)
            break
        trace.append(est.objective_value)
        params, state = adam_step(state, params, est.loss_grad, schedule_lr(schedule, t))
        if log_every and (t + 1) % log_every == 0:
            log.info("iter %d  objective %.6g  (%.1fs)", t + 1, est.objective_value,
                     time.perf_counter() - started)
    return TrainResult(params, np.asarray(trace, dtype=float), diverged_at, metrics, samples, state)
