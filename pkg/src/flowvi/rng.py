"""Splittable, counter-based random streams.

Every random quantity in the package is drawn from an :class:`RngState`, an
immutable ``(seed, stream)`` pair that keys a Philox4x64 counter-based bit
generator. States are never advanced in place: a consumer that needs several
independent draws splits the state with a distinct label per use, e.g.
``split(run_rng, iteration)``. Replaying the same split path reproduces the
same numbers bit for bit, independently of evaluation order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def _mix64(x: int) -> int:
    # splitmix64 finalizer
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _check_u64(name: str, value: int) -> int:
    value = int(value)
    if not 0 <= value <= _MASK64:
        raise ValueError(f"{name} must be a 64-bit unsigned integer, got {value}")
    return value


@dataclass(frozen=True)
class RngState:
    """Immutable key of one random stream.

    Parameters
    ----------
    seed : int
        64-bit unsigned experiment seed.
    stream : int
        64-bit unsigned stream identifier; children produced by :func:`split`
        share the parent's seed and get a freshly mixed stream.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", _check_u64("seed", self.seed))
        object.__setattr__(self, "stream", _check_u64("stream", self.stream))

    def generator(self) -> np.random.Generator:
        """Fresh numpy generator positioned at the start of this stream."""
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def bits(self, n: int) -> np.ndarray:
        """First ``n`` raw 64-bit outputs of the stream."""
        return self.generator().integers(0, _MASK64, size=n, dtype=np.uint64, endpoint=True)


def split(parent: RngState, label: int) -> RngState:
    """Derive the child stream of ``parent`` named by ``label``.

    The mapping is a pure function of ``(parent, label)``; nested splits are
    order sensitive, so ``split(split(s, 0), 1) != split(split(s, 1), 0)``.
    """
    label = _check_u64("label", label)
    stream = _mix64((_mix64(parent.stream ^ 0x5DEECE66D) + label) & _MASK64)
    return RngState(parent.seed, stream)


def standard_normal_matrix(rng: RngState, S: int, d: int) -> np.ndarray:
    """``S x d`` matrix of i.i.d. standard normal draws (ziggurat)."""
    if S < 1 or d < 1:
        raise ValueError(f"need S >= 1 and d >= 1, got S={S}, d={d}")
    return rng.generator().standard_normal((S, d))


def uniform_draws(rng: RngState, n: int) -> np.ndarray:
    """``n`` i.i.d. draws from U[0, 1)."""
    return rng.generator().random(n)


def _gamma_shape_ge1(gen: np.random.Generator, shape: float, n: int) -> np.ndarray:
    # Marsaglia-Tsang squeeze/rejection, refilled in vector batches
    d = shape - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty(n)
    filled = 0
    while filled < n:
        m = int(1.05 * (n - filled)) + 16
        x = gen.standard_normal(m)
        u = gen.random(m)
        v = 1.0 + c * x
        v = v * v * v
        positive = v > 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            squeeze = u < 1.0 - 0.0331 * (x * x) * (x * x)
            full = np.log(u) < 0.5 * x * x + d * (1.0 - v + np.log(v))
        accepted = (d * v)[positive & (squeeze | full)]
        take = min(accepted.size, n - filled)
        out[filled:filled + take] = accepted[:take]
        filled += take
    return out


def gamma_draws(rng: RngState, shape: float, scale: float, n: int) -> np.ndarray:
    """``n`` i.i.d. Gamma(shape, scale) draws.

    Shapes below one are boosted: ``Gamma(a) = Gamma(a + 1) * U**(1/a)``.
    """
    if not shape > 0 or not scale > 0:
        raise ValueError(f"shape and scale must be positive, got {shape}, {scale}")
    gen = rng.generator()
    if shape >= 1.0:
        return scale * _gamma_shape_ge1(gen, shape, n)
    g = _gamma_shape_ge1(gen, shape + 1.0, n)
    u = 1.0 - gen.random(n)  # (0, 1]
    return scale * g * u ** (1.0 / shape)


def chi_square_draws(rng: RngState, dof: float, n: int) -> np.ndarray:
    """Chi-square with ``dof`` degrees of freedom, as Gamma(dof/2, 2)."""
    return gamma_draws(rng, 0.5 * dof, 2.0, n)


def random_orthogonal(rng: RngState, d: int) -> np.ndarray:
    """Haar-distributed ``d x d`` orthogonal matrix.

    QR of a Gaussian matrix, with columns flipped so that ``R`` has a positive
    diagonal (without the correction the result is not Haar).
    """
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    a = standard_normal_matrix(rng, d, d)
    q, r = np.linalg.qr(a)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs
