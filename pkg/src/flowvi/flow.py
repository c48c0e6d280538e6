"""Real-NVP flow with tanh-bounded affine couplings.

One coupling layer is two transitions. With ``d = D // 2``, the first
transition keeps ``z[:d]`` and maps ``z[d:] -> z[d:] * exp(s) + t`` where
``(s, t)`` come from an MLP ``[d, H, H, 2 (D - d)]`` applied to ``z[:d]``; the
second transition swaps the roles of the two halves. MLP hidden layers use a
leaky ReLU, the ``s`` channels of the output go through ``tanh`` and the ``t``
channels stay linear. The base density is a standard normal.
"""
from __future__ import annotations

import functools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .rng import RngState, standard_normal_matrix

LOG_2PI = float(np.log(2.0 * np.pi))
INDEX_MAP_VERSION = 1


@dataclass(frozen=True)
class FlowConfig:
    dim: int
    num_coupling_layers: int = 10
    hidden_units: int = 32
    leaky_slope: float = 0.01
    init_std: float = 0.001

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"coupling flows need dim >= 2, got {self.dim}")
        if self.num_coupling_layers < 1 or self.hidden_units < 1:
            raise ValueError("need at least one coupling layer and one hidden unit")

    @property
    def num_transitions(self) -> int:
        return 2 * self.num_coupling_layers

    @property
    def num_params(self) -> int:
        return int(layout_for(self)[-1, 9] + 2 * layout_for(self)[-1, 3])


@functools.lru_cache(maxsize=None)
def _layout(dim: int, layers: int, hidden: int) -> np.ndarray:
    d = dim // 2
    H = hidden
    rows = []
    off = 0
    for j in range(2 * layers):
        if j % 2 == 0:
            c0, cn, t0, tn = 0, d, d, dim - d
        else:
            c0, cn, t0, tn = d, dim - d, 0, d
        oW1 = off
        ob1 = oW1 + cn * H
        oW2 = ob1 + H
        ob2 = oW2 + H * H
        oW3 = ob2 + H
        ob3 = oW3 + H * 2 * tn
        off = ob3 + 2 * tn
        rows.append((c0, cn, t0, tn, oW1, ob1, oW2, ob2, oW3, ob3))
    out = np.array(rows, dtype=np.int64)
    out.setflags(write=False)
    return out


def layout_for(config: FlowConfig) -> np.ndarray:
    """``(2K, 10)`` transition table shared by the kernels (read-only)."""
    return _layout(config.dim, config.num_coupling_layers, config.hidden_units)


@dataclass
class FlowParams:
    """Flat parameter vector plus the architecture it belongs to.

    Per transition, in order: ``W1 (d_in x H)``, ``b1``, ``W2 (H x H)``,
    ``b2``, ``W3 (H x 2 d_out)``, ``b3``; weights are row-major with the input
    index first, and the first ``d_out`` output channels produce ``s``.
    """

    config: FlowConfig
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.config.num_params,):
            raise ValueError(
                f"expected {self.config.num_params} parameters, got shape {self.theta.shape}"
            )

    @property
    def layout(self) -> np.ndarray:
        return layout_for(self.config)

    @property
    def size(self) -> int:
        return self.theta.size

    def with_theta(self, theta: np.ndarray) -> "FlowParams":
        return FlowParams(self.config, theta)

    def transition(self, j: int) -> dict:
        """Views of the weights of transition ``j``."""
        c0, cn, t0, tn, oW1, ob1, oW2, ob2, oW3, ob3 = (int(v) for v in self.layout[j])
        H = self.config.hidden_units
        th = self.theta
        return {
            "cond": (c0, cn),
            "trans": (t0, tn),
            "W1": th[oW1:ob1].reshape(cn, H),
            "b1": th[ob1:oW2],
            "W2": th[oW2:ob2].reshape(H, H),
            "b2": th[ob2:oW3],
            "W3": th[oW3:ob3].reshape(H, 2 * tn),
            "b3": th[ob3:ob3 + 2 * tn],
        }

    def save(self, path) -> None:
        """Write ``<path>`` (little-endian float64) and ``<path>.json``."""
        path = Path(path)
        self.theta.astype("<f8").tofile(path)
        meta = {
            "dim": self.config.dim,
            "layers": self.config.num_coupling_layers,
            "hidden": self.config.hidden_units,
            "leaky_slope": self.config.leaky_slope,
            "index_map_version": INDEX_MAP_VERSION,
            "num_params": self.size,
        }
        Path(str(path) + ".json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, path) -> "FlowParams":
        path = Path(path)
        meta = json.loads(Path(str(path) + ".json").read_text())
        if meta.get("index_map_version") != INDEX_MAP_VERSION:
            raise ValueError(f"unsupported index map version {meta.get('index_map_version')}")
        config = FlowConfig(
            dim=meta["dim"],
            num_coupling_layers=meta["layers"],
            hidden_units=meta["hidden"],
            leaky_slope=meta.get("leaky_slope", 0.01),
        )
        return cls(config, np.fromfile(path, dtype="<f8"))


@dataclass
class TransformResult:
    output: np.ndarray
    log_det: np.ndarray


def _backend(backend):
    return kernels.backend if backend is None else backend


def _args(params: FlowParams):
    c = params.config
    return params.theta, params.layout, c.hidden_units, c.leaky_slope


def _check_input(params: FlowParams, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.config.dim:
        raise ValueError(f"expected an S x {params.config.dim} matrix, got shape {X.shape}")
    return X


def zero_params(config: FlowConfig) -> FlowParams:
    """All-zero parameters: the identity map."""
    return FlowParams(config, np.zeros(config.num_params))


def init_params(config: FlowConfig, rng: RngState) -> FlowParams:
    """Every weight and bias i.i.d. ``N(0, init_std^2)``; a near-identity flow."""
    theta = config.init_std * standard_normal_matrix(rng, config.num_params, 1)[:, 0]
    return FlowParams(config, theta)


def random_params(config: FlowConfig, rng: RngState, std: float) -> FlowParams:
    """Parameters with a chosen scale, for tests far from the identity."""
    theta = std * standard_normal_matrix(rng, config.num_params, 1)[:, 0]
    return FlowParams(config, theta)


def conditioner(params: FlowParams, j: int, inputs: np.ndarray):
    """``(s, t)`` of transition ``j`` for an ``S x d_in`` matrix of inputs."""
    inputs = np.ascontiguousarray(inputs, dtype=np.float64)
    theta, layout, H, slope = _args(params)
    cn = int(layout[j, 1])
    if inputs.ndim != 2 or inputs.shape[1] != cn:
        raise ValueError(f"transition {j} conditions on {cn} coordinates, got shape {inputs.shape}")
    _, _, s, t = kernels.python_backend.mlp(theta, layout[j], H, slope, inputs)
    return s, t


def forward(params: FlowParams, E: np.ndarray, backend=None) -> TransformResult:
    """``z = T(eps)`` and ``log|det dT(eps)|`` for each row."""
    E = _check_input(params, E)
    Z, ld = _backend(backend).forward(*_args(params), E)
    return TransformResult(Z, ld)


def inverse(params: FlowParams, Z: np.ndarray, backend=None) -> TransformResult:
    """``eps = T^{-1}(z)`` and ``log|det dT^{-1}(z)|`` for each row."""
    Z = _check_input(params, Z)
    E, ld = _backend(backend).inverse(*_args(params), Z)
    return TransformResult(E, ld)


def base_log_density(E: np.ndarray) -> np.ndarray:
    E = np.asarray(E)
    return -0.5 * (E.shape[1] * LOG_2PI + np.einsum("ij,ij->i", E, E))


def flow_log_density(params: FlowParams, Z: np.ndarray, backend=None) -> np.ndarray:
    """``log q(z) = log N(T^{-1} z) + log|det dT^{-1}(z)|``."""
    res = inverse(params, Z, backend)
    return base_log_density(res.output) + res.log_det


def flow_score(params: FlowParams, Z: np.ndarray, backend=None) -> np.ndarray:
    """``grad_z log q(z)`` with the parameters held fixed (inverse pass)."""
    Z = _check_input(params, Z)
    _, _, _, dZ = _backend(backend).inverse_vjp(
        *_args(params), Z, None, 1.0, 1.0, param_grad=False, per_sample=False
    )
    return dZ


def sample_flow(params: FlowParams, rng: RngState, S: int, backend=None):
    """Draw ``S`` samples; returns ``(Z, log_q, E)`` from a single forward pass."""
    E = standard_normal_matrix(rng, S, params.config.dim)
    res = forward(params, E, backend)
    return res.output, base_log_density(E) - res.log_det, E

