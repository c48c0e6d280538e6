"""Synthetic targets with exact samplers.

All five densities are normalized and unbounded in support. Wherever a
normal law is written as ``N(mean, v)`` below, ``v`` is a variance.

* ill-conditioned Gaussian: ``N(0, Q diag(lam) Q^T)`` with gamma eigenvalues
  and a Haar rotation drawn from a construction seed;
* banana: ``z1 ~ N(0, 100)``, ``z2 ~ N(0.03 (z1^2 - 100), 1)``, rest ``N(0, 1)``;
* funnel: ``z1 ~ N(0, 9)``, ``zi ~ N(0, exp(z1))``;
* funana: ``z1 ~ N(0, 9)``, ``z2 ~ N(0, 100)``,
  ``zi ~ N(0.03 (z1^2 - 100), exp(z1))`` for ``i >= 3``;
* Student-t: location 0, identity scale, ``nu`` degrees of freedom.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from . import rng as rngmod
from .rng import RngState

LOG_2PI = float(np.log(2.0 * np.pi))
BANANA_CURVATURE = 0.03
EIGENVALUE_FLOOR = 1e-6


class InvalidTargetSpec(ValueError):
    """Raised for target specifications that violate their invariants."""


class TargetKind(enum.Enum):
    ILL_CONDITIONED_GAUSSIAN = "icg"
    BANANA = "banana"
    FUNNEL = "funnel"
    FUNANA = "funana"
    STUDENT_T = "student_t"


@dataclass(frozen=True)
class TargetSpec:
    kind: TargetKind
    dim: int
    nu: float | None = None
    construction_seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidTargetSpec(f"dim must be >= 1, got {self.dim}")
        if self.kind is TargetKind.FUNANA and self.dim < 3:
            raise InvalidTargetSpec(f"funana needs at least 3 dimensions, got {self.dim}")
        if self.kind is TargetKind.STUDENT_T:
            if self.nu is None or not self.nu > 0:
                raise InvalidTargetSpec(f"student-t needs nu > 0, got {self.nu}")


@dataclass
class Target:
    """A built target: density, exact sampler and cached constants."""

    spec: TargetSpec
    name: str
    precomputed: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def kind(self) -> TargetKind:
        return self.spec.kind

    def log_density(self, Z: np.ndarray) -> np.ndarray:
        return log_density(self, Z)

    def exact_sample(self, rng: RngState, S: int) -> np.ndarray:
        return exact_sample(self, rng, S)

    def score(self, Z: np.ndarray) -> np.ndarray:
        from .scorekit import score

        return score(self, Z)


def _normal_logpdf(x, var):
    return -0.5 * (LOG_2PI + np.log(var)) - 0.5 * x * x / var


def _log_normal_expvar(x, log_var):
    # log N(x | 0, exp(log_var)) without forming exp(log_var)
    with np.errstate(over="ignore", invalid="ignore"):
        quad = (x * x) * np.exp(-log_var)
    # x == 0 contributes nothing even when exp(-log_var) overflows
    quad = np.where(x == 0.0, 0.0, quad)
    return -0.5 * (LOG_2PI + log_var) - 0.5 * quad


def gaussian_target(cov: np.ndarray, name: str = "gaussian") -> Target:
    """Zero-mean Gaussian target with an explicit covariance."""
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[0]
    chol = np.linalg.cholesky(cov)
    pre = {
        "cov": cov,
        "chol": chol,
        "logdet": 2.0 * float(np.sum(np.log(np.diag(chol)))),
        "precision": np.linalg.inv(cov),
    }
    spec = TargetSpec(TargetKind.ILL_CONDITIONED_GAUSSIAN, d)
    return Target(spec, name, pre)


def build_target(spec: TargetSpec, name: str | None = None) -> Target:
    """Build a target, drawing construction randomness where needed."""
    if name is None:
        name = target_name(spec)
    if spec.kind is TargetKind.ILL_CONDITIONED_GAUSSIAN:
        base = RngState(spec.construction_seed, 0)
        lam = rngmod.gamma_draws(rngmod.split(base, 0), 0.5, 1.0, spec.dim)
        lam = np.maximum(lam, EIGENVALUE_FLOOR)
        q = rngmod.random_orthogonal(rngmod.split(base, 1), spec.dim)
        cov = (q * lam) @ q.T
        cov = 0.5 * (cov + cov.T)
        target = gaussian_target(cov, name)
        target.spec = spec
        target.precomputed["eigenvalues"] = lam
        target.precomputed["rotation"] = q
        # precision from the factorization is better conditioned than inv(cov)
        target.precomputed["precision"] = (q / lam) @ q.T
        return target
    pre = {}
    if spec.kind is TargetKind.STUDENT_T:
        nu, d = spec.nu, spec.dim
        pre["log_norm"] = float(
            gammaln(0.5 * (nu + d)) - gammaln(0.5 * nu) - 0.5 * d * np.log(nu * np.pi)
        )
    return Target(spec, name, pre)


def _check_shape(target: Target, Z: np.ndarray) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[1] != target.dim:
        raise ValueError(f"expected an S x {target.dim} matrix, got shape {Z.shape}")
    return Z


def log_density(target: Target, Z: np.ndarray) -> np.ndarray:
    """Row-wise log-density of an ``S x d`` matrix."""
    Z = _check_shape(target, Z)
    kind = target.kind
    if kind is TargetKind.FUNNEL:
        z1 = Z[:, 0]
        out = _normal_logpdf(z1, 9.0)
        if target.dim > 1:
            out = out + _log_normal_expvar(Z[:, 1:], z1[:, None]).sum(axis=1)
        return out
    if kind is TargetKind.BANANA:
        z1 = Z[:, 0]
        out = _normal_logpdf(z1, 100.0)
        if target.dim > 1:
            mean2 = BANANA_CURVATURE * (z1 * z1 - 100.0)
            out = out + _normal_logpdf(Z[:, 1] - mean2, 1.0)
        if target.dim > 2:
            out = out + _normal_logpdf(Z[:, 2:], 1.0).sum(axis=1)
        return out
    if kind is TargetKind.FUNANA:
        z1 = Z[:, 0]
        mean = BANANA_CURVATURE * (z1 * z1 - 100.0)
        rest = _log_normal_expvar(Z[:, 2:] - mean[:, None], z1[:, None]).sum(axis=1)
        return _normal_logpdf(z1, 9.0) + _normal_logpdf(Z[:, 1], 100.0) + rest
    if kind is TargetKind.STUDENT_T:
        nu, d = target.spec.nu, target.dim
        r2 = np.einsum("ij,ij->i", Z, Z)
        return target.precomputed["log_norm"] - 0.5 * (nu + d) * np.log1p(r2 / nu)
    # Gaussian
    pre = target.precomputed
    w = solve_triangular(pre["chol"], Z.T, lower=True)
    quad = np.einsum("ij,ij->j", w, w)
    return -0.5 * (target.dim * LOG_2PI + pre["logdet"] + quad)


def exact_sample(target: Target, rng: RngState, S: int) -> np.ndarray:
    """``S`` exact i.i.d. draws by ancestral sampling."""
    if S < 1:
        raise ValueError(f"S must be >= 1, got {S}")
    d = target.dim
    kind = target.kind
    if kind is TargetKind.STUDENT_T:
        nu = target.spec.nu
        x = rngmod.standard_normal_matrix(rngmod.split(rng, 0), S, d)
        g = rngmod.chi_square_draws(rngmod.split(rng, 1), nu, S)
        return x * np.sqrt(nu / g)[:, None]
    n = rngmod.standard_normal_matrix(rng, S, d)
    if kind is TargetKind.FUNNEL:
        z = np.empty_like(n)
        z[:, 0] = 3.0 * n[:, 0]
        z[:, 1:] = np.exp(0.5 * z[:, :1]) * n[:, 1:]
        return z
    if kind is TargetKind.BANANA:
        z = n.copy()
        z[:, 0] = 10.0 * n[:, 0]
        if d > 1:
            z[:, 1] = BANANA_CURVATURE * (z[:, 0] ** 2 - 100.0) + n[:, 1]
        return z
    if kind is TargetKind.FUNANA:
        z = np.empty_like(n)
        z1 = 3.0 * n[:, 0]
        z[:, 0] = z1
        z[:, 1] = 10.0 * n[:, 1]
        mean = BANANA_CURVATURE * (z1 * z1 - 100.0)
        z[:, 2:] = mean[:, None] + np.exp(0.5 * z1)[:, None] * n[:, 2:]
        return z
    return n @ target.precomputed["chol"].T


# ---------------------------------------------------------------------------
# registry

_KIND_NAMES = {
    "icg": (TargetKind.ILL_CONDITIONED_GAUSSIAN, None),
    "banana": (TargetKind.BANANA, None),
    "funnel": (TargetKind.FUNNEL, None),
    "funana": (TargetKind.FUNANA, None),
    "student_t_1_5": (TargetKind.STUDENT_T, 1.5),
    "student_t_2_5": (TargetKind.STUDENT_T, 2.5),
}
_NAME_RE = re.compile(r"^(?P<kind>[a-z_0-9]+?)-(?P<dim>\d+)$")

REGISTERED_TARGETS = tuple(_KIND_NAMES)


def parse_target_name(name: str, construction_seed: int = 0) -> TargetSpec:
    """Parse registry names such as ``"funnel-10"`` or ``"student_t_1_5-2"``."""
    m = _NAME_RE.match(name.strip())
    if m is None or m.group("kind") not in _KIND_NAMES:
        known = ", ".join(REGISTERED_TARGETS)
        raise KeyError(f"unknown target {name!r}; expected <kind>-<dim> with kind in {known}")
    kind, nu = _KIND_NAMES[m.group("kind")]
    return TargetSpec(kind, int(m.group("dim")), nu=nu, construction_seed=construction_seed)


def target_name(spec: TargetSpec) -> str:
    if spec.kind is TargetKind.STUDENT_T:
        base = "student_t_" + f"{spec.nu:g}".replace(".", "_")
    else:
        base = spec.kind.value
    return f"{base}-{spec.dim}"


def get_target(name: str, construction_seed: int = 0) -> Target:
    return build_target(parse_target_name(name, construction_seed), name=name)
