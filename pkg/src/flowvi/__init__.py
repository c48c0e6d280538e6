"""Normalizing-flow variational inference on synthetic targets.

Modules
-------
rng         splittable counter-based random streams
targets     synthetic target densities and exact samplers
scorekit    analytic target scores
flow        Real-NVP flow (parameters, forward/inverse, densities)
objectives  reverse-KL (total, STL) and forward-KL gradient estimators
optim       Adam, step-size schedules, training loop
metrics     marginal Wasserstein distance
bench       experiment runs, sweeps and result files
"""
from .kernels import backend as _backend

__version__ = "0.1.0"

BACKEND = _backend.NAME
