"""Experiment configuration: dataclass, INI-style files and overrides.

A config file has ``[run]``, ``[flow]``, ``[schedule]`` and ``[eval]``
sections of ``key = value`` lines::

    [run]
    target = funnel-10
    objective = reverse_kl
    estimator = stl
    batch_size = 8192
    iterations = 10000
    seed = 0

    [flow]
    layers = 10
    hidden = 32

    [schedule]
    kind = constant
    lr = 3e-4

    [eval]
    eval_sample_size = 100000
    reference_sample_size = 100000
    reference_seed = 0
    checkpoints = 0, 5000, 10000

Any key can be overridden as ``section.key=value``.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .flow import FlowConfig
from .objectives import Estimator, Objective
from .optim import Schedule, ScheduleKind
from .targets import parse_target_name

U64 = (1 << 64) - 1


@dataclass(frozen=True)
class ExperimentConfig:
    target_name: str
    flow: FlowConfig
    objective: Objective
    estimator: Estimator
    batch_size: int
    schedule: Schedule
    iterations: int
    seed: int = 0
    eval_sample_size: int = 100_000
    reference_sample_size: int = 100_000
    reference_seed: int = 0
    checkpoint_iters: tuple = ()
    construction_seed: int = 0

    def __post_init__(self):
        if (self.estimator is Estimator.FORWARD_KL) != (self.objective is Objective.FORWARD_KL):
            raise ValueError("the forward_kl estimator goes with (and only with) the forward_kl objective")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size must be >= 1 and iterations >= 0")
        if self.schedule.total_iters != self.iterations:
            raise ValueError("schedule.total_iters must equal iterations")
        if not (0 <= self.seed <= U64 and 0 <= self.reference_seed <= U64):
            raise ValueError("seeds must be unsigned 64-bit integers")
        if self.eval_sample_size < 2 or self.reference_sample_size < 2:
            raise ValueError("evaluation sample sizes must be >= 2")
        cps = tuple(sorted(set(int(c) for c in self.checkpoint_iters))) or (self.iterations,)
        if cps[0] < 0 or cps[-1] > self.iterations:
            raise ValueError(f"checkpoints must lie in [0, {self.iterations}], got {cps}")
        object.__setattr__(self, "checkpoint_iters", cps)
        spec = parse_target_name(self.target_name)
        if spec.dim != self.flow.dim:
            raise ValueError(f"target {self.target_name} has dim {spec.dim}, flow has {self.flow.dim}")

    def replace(self, **changes) -> "ExperimentConfig":
        """Copy with fields changed; the schedule follows ``iterations``."""
        if "iterations" in changes and "schedule" not in changes:
            changes["schedule"] = dataclasses.replace(self.schedule, total_iters=changes["iterations"])
        if "checkpoint_iters" not in changes and "iterations" in changes:
            changes["checkpoint_iters"] = ()
        return dataclasses.replace(self, **changes)


def make_config(target: str, *, layers: int = 10, hidden: int = 32, estimator: str = "stl",
                batch_size: int = 4096, lr: float = 3e-4, schedule: str = "constant",
                iterations: int = 10_000, seed: int = 0, **extra) -> ExperimentConfig:
    """Keyword-friendly constructor; the objective follows the estimator."""
    est = Estimator(estimator)
    obj = Objective.FORWARD_KL if est is Estimator.FORWARD_KL else Objective.REVERSE_KL
    dim = parse_target_name(target).dim
    return ExperimentConfig(
        target_name=target,
        flow=FlowConfig(dim, layers, hidden),
        objective=obj,
        estimator=est,
        batch_size=batch_size,
        schedule=Schedule(ScheduleKind(schedule), lr, iterations),
        iterations=iterations,
        seed=seed,
        **extra,
    )


# ---------------------------------------------------------------------------
# file format

_KEYS = {
    "run": {"target", "objective", "estimator", "batch_size", "iterations", "seed", "construction_seed"},
    "flow": {"layers", "hidden", "leaky_slope", "init_std"},
    "schedule": {"kind", "lr"},
    "eval": {"eval_sample_size", "reference_sample_size", "reference_seed", "checkpoints"},
}


def _parser() -> configparser.ConfigParser:
    return configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))


def apply_overrides(cp: configparser.ConfigParser, overrides) -> None:
    for item in overrides or ():
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ValueError(f"override {item!r} is not of the form section.key=value")
        if section not in _KEYS or name not in _KEYS[section]:
            raise ValueError(f"unknown config key {key.strip()!r}")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, name, value.strip())


def _int(text: str) -> int:
    # accepts 1e5-style counts as long as they are integral
    value = float(text) if any(c in text for c in ".eE") else int(text, 0)
    if value != int(value):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def config_from_parser(cp: configparser.ConfigParser) -> ExperimentConfig:
    for section in cp.sections():
        if section not in _KEYS:
            raise ValueError(f"unknown config section [{section}]")
        extra = set(cp[section]) - _KEYS[section]
        if extra:
            raise ValueError(f"unknown keys in [{section}]: {sorted(extra)}")
    run = cp["run"] if cp.has_section("run") else {}
    if "target" not in run:
        raise ValueError("config needs run.target")
    flow = cp["flow"] if cp.has_section("flow") else {}
    sched = cp["schedule"] if cp.has_section("schedule") else {}
    ev = cp["eval"] if cp.has_section("eval") else {}
    target = run["target"].strip()
    dim = parse_target_name(target).dim
    estimator = Estimator(run.get("estimator", "stl").strip())
    default_obj = "forward_kl" if estimator is Estimator.FORWARD_KL else "reverse_kl"
    iterations = _int(run.get("iterations", "10000"))
    checkpoints = tuple(_int(c) for c in ev.get("checkpoints", "").replace(",", " ").split())
    return ExperimentConfig(
        target_name=target,
        flow=FlowConfig(
            dim,
            _int(flow.get("layers", "10")),
            _int(flow.get("hidden", "32")),
            float(flow.get("leaky_slope", "0.01")),
            float(flow.get("init_std", "0.001")),
        ),
        objective=Objective(run.get("objective", default_obj).strip()),
        estimator=estimator,
        batch_size=_int(run.get("batch_size", "4096")),
        schedule=Schedule(ScheduleKind(sched.get("kind", "constant").strip()),
                          float(sched.get("lr", "3e-4")), iterations),
        iterations=iterations,
        seed=_int(run.get("seed", "0")),
        eval_sample_size=_int(ev.get("eval_sample_size", "100000")),
        reference_sample_size=_int(ev.get("reference_sample_size", "100000")),
        reference_seed=_int(ev.get("reference_seed", "0")),
        checkpoint_iters=checkpoints,
        construction_seed=_int(run.get("construction_seed", "0")),
    )


def load_config(path, overrides=()) -> ExperimentConfig:
    cp = _parser()
    with open(path) as fh:
        cp.read_file(fh)
    apply_overrides(cp, overrides)
    return config_from_parser(cp)


def parse_config(text: str, overrides=()) -> ExperimentConfig:
    cp = _parser()
    cp.read_string(text)
    apply_overrides(cp, overrides)
    return config_from_parser(cp)


def config_to_dict(config: ExperimentConfig) -> dict:
    """Canonical nested dict (file sections) of a config."""
    return {
        "run": {
            "target": config.target_name,
            "objective": config.objective.value,
            "estimator": config.estimator.value,
            "batch_size": config.batch_size,
            "iterations": config.iterations,
            "seed": config.seed,
            "construction_seed": config.construction_seed,
        },
        "flow": {
            "layers": config.flow.num_coupling_layers,
            "hidden": config.flow.hidden_units,
            "leaky_slope": repr(config.flow.leaky_slope),
            "init_std": repr(config.flow.init_std),
        },
        "schedule": {"kind": config.schedule.kind.value, "lr": repr(config.schedule.base_lr)},
        "eval": {
            "eval_sample_size": config.eval_sample_size,
            "reference_sample_size": config.reference_sample_size,
            "reference_seed": config.reference_seed,
            "checkpoints": ", ".join(str(c) for c in config.checkpoint_iters),
        },
    }


def config_to_text(config: ExperimentConfig) -> str:
    lines = []
    for section, values in config_to_dict(config).items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {v}" for k, v in values.items())
        lines.append("")
    return "\n".join(lines)


def config_hash(config: ExperimentConfig) -> str:
    """Short stable hash of the canonical config."""
    blob = json.dumps(config_to_dict(config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(config_to_text(config))
