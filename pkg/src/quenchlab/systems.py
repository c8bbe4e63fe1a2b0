"""Fibered expanding systems: random circle maps and random subshifts of finite type.

Each environment state selects a fiber map.  Circle fibers are full-branch maps
``x -> k x + eps * g(x) mod 1`` with ``g`` a first-order trigonometric shape;
SFT fibers are 0-1 transition matrices on a common alphabet.  The metric on the
circle is the arc distance on ``R/Z`` and on sequence space it is
``exp(-first disagreement index)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .environment import EnvPath
from .errors import ArgumentError, ModelError, PrimitivityError, WindowError

__all__ = [
    "CircleFiber",
    "SFTFiber",
    "FiberedSystem",
    "FiberGeometry",
    "CoveringTimes",
    "RandomFunction",
    "make_circle_family",
    "make_sft_family",
    "path_geometry",
    "covering_times",
    "tail_comparison",
    "backward_series",
    "circle_distance",
    "circle_function",
    "sft_function",
    "jacobian_potential",
    "constant_function",
    "XI_CONSTANT",
]

# half the minimum of 1 and the injectivity radius pi used for the unit circle
XI_CONSTANT = 0.5 * min(1.0, math.pi)

_SHAPES = ("none", "sin", "cos")
TWO_PI = 2.0 * math.pi


def circle_distance(x, y):
    """Arc distance on ``R/Z``."""
    d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)) % 1.0
    return np.minimum(d, 1.0 - d)


@dataclass(frozen=True)
class CircleFiber:
    """Full-branch circle map ``x -> k x + eps * shape(x) mod 1``."""

    k: int
    eps: float = 0.0
    shape: str = "none"

    def __post_init__(self):
        if self.k < 1:
            raise ArgumentError("degree must be a positive integer")
        if self.shape not in _SHAPES:
            raise ArgumentError(f"unknown perturbation shape {self.shape!r}")

    def lift(self, x):
        """Lifted map ``F`` on ``R`` with ``F(x + 1) = F(x) + k``."""
        x = np.asarray(x, dtype=float)
        if self.shape == "sin":
            return self.k * x + self.eps * np.sin(TWO_PI * x)
        if self.shape == "cos":
            return self.k * x + self.eps * np.cos(TWO_PI * x)
        return self.k * x

    def __call__(self, x):
        return self.lift(x) % 1.0

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        if self.shape == "sin":
            return self.k + self.eps * TWO_PI * np.cos(TWO_PI * x)
        if self.shape == "cos":
            return self.k - self.eps * TWO_PI * np.sin(TWO_PI * x)
        return np.full(x.shape, float(self.k))

    @property
    def second_derivative_bound(self) -> float:
        return 0.0 if self.shape == "none" else abs(self.eps) * TWO_PI**2

    def preimages(self, x, iterations: int = 60) -> np.ndarray:
        """Preimages of points ``x`` as an ``(len(x), k)`` array, one column per branch.

        Branch ``b`` solves ``F(y) = x + b + F(0)`` rounded into ``[F(0), F(0) + k)``;
        solved by vectorized bisection on the monotone lift.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float)) % 1.0
        f0 = float(self.lift(0.0))
        targets = x[:, None] + np.arange(self.k)[None, :] + math.floor(f0)
        targets = np.where(targets < f0, targets + self.k, targets)
        targets = np.where(targets >= f0 + self.k, targets - self.k, targets)
        lo = np.zeros_like(targets)
        hi = np.ones_like(targets)
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            below = self.lift(mid) < targets
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)


@dataclass(frozen=True)
class SFTFiber:
    """One-step transition matrix of a subshift of finite type."""

    matrix: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.matrix)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ArgumentError("transition matrix must be square")
        if not np.all((A == 0) | (A == 1)):
            raise ArgumentError("transition matrix must be 0-1 valued")
        if np.any(A.sum(axis=0) == 0) or np.any(A.sum(axis=1) == 0):
            raise ModelError("transition matrix has a zero row or column")
        object.__setattr__(self, "matrix", A.astype(np.int64))

    @property
    def alphabet_size(self) -> int:
        return int(self.matrix.shape[0])


@dataclass(frozen=True)
class FiberGeometry:
    """Expansion metadata of one fiber (frozen-environment values for path-free fields).

    Attributes
    ----------
    gamma : float
        Minimal expansion ``min |T'|`` (circle) or ``e`` (sft).
    gamma_lower : float
        Certified lower bound on ``gamma`` after the sampling slack.
    xi : float
        Scale on which inverse branches are paired.
    degree : int
        Upper bound on the number of preimages.
    holder_bound : float
        Upper bound ``N`` on the Holder constant of the fiber map.
    z_value : float
        Backward series ``sum_j prod gamma^{-1}`` for the constant environment.
    cover_count : int
        Number of ``xi``-balls needed to cover the fiber.
    """

    gamma: float
    gamma_lower: float
    xi: float
    degree: int
    holder_bound: float
    z_value: float
    cover_count: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class FiberedSystem:
    """Family of fiber maps indexed by environment state."""

    family: str
    fibers: Mapping[int, object]
    holder_exponent: float = 1.0
    geometry: Mapping[int, FiberGeometry] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in ("circle", "sft"):
            raise ArgumentError(f"unknown family {self.family!r}")
        if not 0 < self.holder_exponent <= 1:
            raise ArgumentError("holder exponent must lie in (0, 1]")

    def fiber(self, state: int):
        try:
            return self.fibers[int(state)]
        except KeyError:
            raise ArgumentError(f"no fiber for state {state}") from None

    @property
    def states(self) -> list[int]:
        return sorted(self.fibers)

    def metadata_json(self) -> str:
        return json.dumps({str(s): self.geometry[s].to_dict() for s in self.states}, indent=2)


def _certify_min_derivative(fiber: CircleFiber, start: int = 64) -> tuple[float, float, float]:
    """Grid minimum, certified lower bound, and grid maximum of ``|T'|``.

    The grid is refined by a factor of 8 until the Lipschitz slack
    ``sup|T''| h / 2`` drops below 1% of the minimum.
    """
    grid = start * max(fiber.k, 1)
    while True:
        x = np.arange(grid) / grid
        d = np.abs(fiber.derivative(x))
        lo, hi = float(d.min()), float(d.max())
        slack = 0.5 * fiber.second_derivative_bound / grid
        if slack < 0.01 * lo or slack == 0.0:
            return lo, lo - slack, hi + slack
        grid *= 8


def make_circle_family(k_base: int, perturbations: Mapping[int, Sequence], holder_exponent: float = 1.0
                       ) -> FiberedSystem:
    """Build random circle maps ``x -> k x + eps * shape(x)``.

    Parameters
    ----------
    k_base : int
        Default degree ``k >= 2``.
    perturbations : mapping
        ``state -> (eps, shape)`` or ``state -> (eps, shape, k)`` where the
        optional third entry overrides the degree (``k = 1`` with ``eps = 0``
        gives the identity fiber).
    holder_exponent : float
        Holder exponent attached to the system.

    Raises
    ------
    ModelError
        If some fiber has ``min |T'| < 1`` or no fiber expands strictly.
    """
    if k_base < 2:
        raise ArgumentError("k_base must be at least 2")
    fibers: dict[int, CircleFiber] = {}
    geometry: dict[int, FiberGeometry] = {}
    for state, spec in perturbations.items():
        spec = tuple(spec)
        eps, shape = float(spec[0]), str(spec[1])
        k = int(spec[2]) if len(spec) > 2 else int(k_base)
        fiber = CircleFiber(k, eps, shape)
        gamma, gamma_lower, n_max = _certify_min_derivative(fiber)
        if gamma < 1.0 - 1e-12:
            raise ModelError(f"fiber {state} is not expanding: min |T'| = {gamma:.6g}")
        gamma = max(gamma, 1.0)
        z = 1.0 / (gamma - 1.0) if gamma > 1.0 else math.inf
        xi = XI_CONSTANT * min(1.0, 1.0 / z) if z > 0 else XI_CONSTANT
        geometry[int(state)] = FiberGeometry(
            gamma=gamma,
            gamma_lower=gamma_lower,
            xi=xi,
            degree=k,
            holder_bound=n_max,
            z_value=z,
            cover_count=max(1, math.ceil(1.0 / (2.0 * xi))) if xi > 0 else 0,
        )
        fibers[int(state)] = fiber
    if not any(g.gamma > 1.0 for g in geometry.values()):
        raise ModelError("no fiber expands strictly")
    return FiberedSystem("circle", fibers, holder_exponent, geometry)


def make_sft_family(alphabet_sizes: Mapping[int, int], matrices: Mapping[int, np.ndarray],
                    holder_exponent: float = 1.0) -> FiberedSystem:
    """Build a random subshift of finite type with depth-one metadata.

    All fibers share one alphabet so that consecutive matrices compose for
    every environment path.
    """
    fibers: dict[int, SFTFiber] = {}
    geometry: dict[int, FiberGeometry] = {}
    sizes = {int(alphabet_sizes[s]) for s in matrices}
    if len(sizes) != 1:
        raise ArgumentError("all fibers must share one alphabet size")
    e = math.e
    for state, A in matrices.items():
        fiber = SFTFiber(np.asarray(A))
        if fiber.alphabet_size != int(alphabet_sizes[state]):
            raise ArgumentError(f"matrix for state {state} does not match its alphabet size")
        fibers[int(state)] = fiber
        geometry[int(state)] = FiberGeometry(
            gamma=e, gamma_lower=e, xi=1.0 / e, degree=fiber.alphabet_size,
            holder_bound=e, z_value=1.0 / (e - 1.0), cover_count=fiber.alphabet_size,
        )
    return FiberedSystem("sft", fibers, holder_exponent, geometry)


def backward_series(weights: np.ndarray, factors: np.ndarray, tail_ratio: float, weight_bound: float,
                    rel_tol: float = 1e-12) -> tuple[float, float]:
    """Truncated ``sum_{j>=1} w_j prod_{i<=j} f_i`` with a geometric tail bound.

    ``weights[j-1]`` and ``factors[j-1]`` hold the terms looking ``j`` steps back.
    Summation stops once ``weight_bound * P_j * r / (1 - r)`` falls below
    ``rel_tol`` times the running sum, where ``P_j`` is the running product
    and ``r = tail_ratio < 1`` is the envelope ratio of later factors.

    Returns
    -------
    value, tail : float
        Truncated sum and the bound on the neglected tail.
    """
    if not 0 <= tail_ratio < 1:
        return math.inf, math.inf
    total = 0.0
    prod = 1.0
    tail = math.inf
    for w, f in zip(weights, factors):
        prod *= f
        total += w * prod
        tail = weight_bound * prod * tail_ratio / (1.0 - tail_ratio)
        if tail < rel_tol * total:
            break
    if not np.isfinite(tail):
        tail = weight_bound * tail_ratio / (1.0 - tail_ratio)
    return total, tail


@dataclass(frozen=True)
class PathGeometry:
    """Geometry along a path window (arrays indexed by local window position)."""

    gamma: np.ndarray
    xi: np.ndarray
    degree: np.ndarray
    holder_bound: np.ndarray
    z_value: np.ndarray


def _envelope_ratio(system: FiberedSystem, states: np.ndarray) -> float:
    inv = np.array([1.0 / system.geometry[int(s)].gamma for s in states])
    r = float(np.max(inv))
    if r < 1.0:
        return r
    # geometric-mean envelope when some fibers are neutral
    return float(np.exp(np.mean(np.log(inv))))


def path_geometry(system: FiberedSystem, path: EnvPath) -> PathGeometry:
    """Per-index ``gamma, xi, D, N, Z`` along a path window.

    ``Z`` follows the recursion ``Z_{theta w} = gamma_w^{-1} (1 + Z_w)``; the
    unseen past before the window start is replaced by the envelope value
    ``r / (1 - r)``, whose influence decays like the backward expansion product.
    """
    g = np.array([system.geometry[int(s)].gamma for s in path.states])
    D = np.array([system.geometry[int(s)].degree for s in path.states], dtype=np.int64)
    N = np.array([system.geometry[int(s)].holder_bound for s in path.states])
    if system.family == "sft":
        z = np.full(g.shape, 1.0 / (math.e - 1.0))
        xi = np.full(g.shape, 1.0 / math.e)
        return PathGeometry(g, xi, D, N, z)
    r = _envelope_ratio(system, path.states)
    z = np.empty(g.shape)
    z[0] = r / (1.0 - r)
    for i in range(1, g.size):
        z[i] = (1.0 + z[i - 1]) / g[i - 1]
    xi = XI_CONSTANT * np.minimum(1.0, 1.0 / z)
    return PathGeometry(g, xi, D, N, z)


@dataclass(frozen=True)
class CoveringTimes:
    """Covering times ``m`` and reversed covering times ``j`` at local indices."""

    indices: np.ndarray
    m: np.ndarray
    j: np.ndarray


def _forward_m(system: FiberedSystem, path: EnvPath, geo: PathGeometry, R_const: float,
               cutoff: int) -> np.ndarray:
    """Covering time at every local index, ``-1`` where the window runs out."""
    L = len(path)
    m = np.full(L, -1, dtype=np.int64)
    if system.family == "circle":
        log_g = np.log(geo.gamma)
        csum = np.concatenate([[0.0], np.cumsum(log_g)])
        for i in range(L):
            need = -math.log(R_const) - math.log(geo.xi[i])
            # smallest n >= 1 with sum_{j<n} log gamma_{i+j} >= need
            target = csum[i] + need - 1e-12
            n = int(np.searchsorted(csum[i + 1:], target, side="left")) + 1
            if i + n <= L:
                m[i] = n
        return m
    mats = [system.fiber(s).matrix for s in path.states]
    for i in range(L):
        prod = mats[i].copy()
        n = 1
        while not np.all(prod > 0):
            if n >= cutoff:
                raise PrimitivityError(f"matrix product not positive within {cutoff} steps at index {i}")
            if i + n >= L:
                break
            prod = np.minimum(prod @ mats[i + n], 1)
            n += 1
        if np.all(prod > 0):
            m[i] = n
    return m


def covering_times(system: FiberedSystem, path: EnvPath, R_const: float = 1.0, indices=None,
                   cutoff: int = 64) -> CoveringTimes:
    """Covering times ``m`` and ``j = min{n >= 1: m(theta^{-n} omega) <= n}``.

    Circle fibers use ``m = min{n >= 1: xi^{-1} prod_{j<n} gamma^{-1} <= R}``;
    SFT fibers use the first positive matrix product along the path.

    Parameters
    ----------
    indices : sequence of int or None
        Local indices to report.  ``None`` reports every index at which both
        quantities are resolved inside the window.

    Raises
    ------
    WindowError
        If a requested index cannot be resolved inside the window.
    """
    if R_const <= 0:
        raise ArgumentError("R_const must be positive")
    geo = path_geometry(system, path)
    m = _forward_m(system, path, geo, R_const, cutoff)
    L = len(path)
    j = np.full(L, -1, dtype=np.int64)
    for i in range(L):
        for n in range(1, i + 1):
            if m[i - n] < 0:
                continue
            if m[i - n] <= n:
                j[i] = n
                break
    if indices is None:
        idx = np.flatnonzero((m >= 0) & (j >= 0))
        if idx.size == 0:
            raise WindowError("window too short to resolve any covering time")
    else:
        idx = np.asarray(indices, dtype=np.int64)
        bad = idx[(idx < 0) | (idx >= L)]
        if bad.size:
            raise WindowError(f"indices {bad.tolist()} outside the window")
        bad = idx[(m[idx] < 0) | (j[idx] < 0)]
        if bad.size:
            raise WindowError(f"window exhausted before resolving indices {bad.tolist()}")
    return CoveringTimes(idx, m[idx], j[idx])


def tail_comparison(times: CoveringTimes, k_max: int | None = None) -> list[tuple[int, float, float]]:
    """Empirical ``(k, P(j > k), P(m > k))`` along the path."""
    k_max = int(max(times.m.max(), times.j.max())) if k_max is None else k_max
    return [(k, float(np.mean(times.j > k)), float(np.mean(times.m > k))) for k in range(k_max + 1)]


def circle_cover_check(system: FiberedSystem, path: EnvPath, index: int, n: int, xi: float,
                       centers: int = 64) -> bool:
    """Check that ``T^n`` maps every ``xi``-ball onto the circle.

    Lifted monotone maps send intervals to intervals, so the image covers the
    circle exactly when the lifted image has length at least one.
    """
    x = np.arange(centers) / centers
    a, b = x - xi, x + xi
    for s in path.window(path.offset + index, n):
        f = system.fiber(s)
        a, b = f.lift(a), f.lift(b)
    return bool(np.all(b - a >= 1.0 - 1e-12))


# ----------------------------------------------------------------------------
# random functions

@dataclass(frozen=True)
class RandomFunction:
    """Per-state function on the fiber space with Holder data.

    Circle values are callables ``x -> f(x)`` with an optional Lipschitz
    constant; SFT values are arrays indexed by the first symbol (shape ``(d,)``)
    or by the first two symbols (shape ``(d, d)``).
    """

    family: str
    values: Mapping[int, object]
    alpha: float = 1.0
    lipschitz: Mapping[int, float] | None = None

    def evaluate(self, state: int, points) -> np.ndarray:
        v = self.values[int(state)]
        if self.family == "circle":
            return np.asarray(v(np.asarray(points, dtype=float)), dtype=float)
        return np.asarray(v, dtype=float)

    def sup_norm(self, state: int) -> float:
        if self.family == "circle":
            x = np.arange(8192) / 8192
            return float(np.max(np.abs(self.evaluate(state, x))))
        return float(np.max(np.abs(self.evaluate(state, None))))

    def holder_seminorm(self, state: int, r: float = 1.0) -> float:
        """Upper bound on ``v_{alpha, r}``, the Holder constant over pairs at distance ``<= r``."""
        a = self.alpha
        if self.family == "circle":
            osc = 2.0 * self.sup_norm(state)
            lip = None if self.lipschitz is None else self.lipschitz.get(int(state))
            if lip is None:
                x = np.arange(8192) / 8192
                fx = self.evaluate(state, x)
                lip = float(np.max(np.abs(np.diff(np.append(fx, fx[0])))) * 8192)
            if lip == 0.0:
                return 0.0
            d_star = osc / lip
            r = min(r, 0.5)
            if d_star <= r:
                return lip**a * osc ** (1.0 - a)
            return lip * r ** (1.0 - a)
        v = self.evaluate(state, None)
        if v.ndim == 1:
            # distinct first symbols sit at distance 1
            return float(v.max() - v.min()) if r >= 1.0 else 0.0
        first = float(v.max() - v.min()) if r >= 1.0 else 0.0
        second = float(np.max(v.max(axis=1) - v.min(axis=1))) * math.e**a if r >= 1.0 / math.e else 0.0
        return max(first, second)

    def holder_norm(self, state: int) -> float:
        return self.sup_norm(state) + self.holder_seminorm(state)

    def H_bound(self, state: int) -> float:
        return max(1.0, self.holder_norm(state))


def circle_function(funcs: Mapping[int, Callable], lipschitz: Mapping[int, float] | None = None,
                    alpha: float = 1.0) -> RandomFunction:
    return RandomFunction("circle", dict(funcs), alpha, None if lipschitz is None else dict(lipschitz))


def sft_function(tables: Mapping[int, np.ndarray], alpha: float = 1.0) -> RandomFunction:
    return RandomFunction("sft", {int(s): np.asarray(v, dtype=float) for s, v in tables.items()}, alpha)


def constant_function(system: FiberedSystem, value: float = 0.0) -> RandomFunction:
    if system.family == "circle":
        return circle_function({s: (lambda x, v=value: np.full(np.shape(x), v)) for s in system.states},
                               {s: 0.0 for s in system.states}, system.holder_exponent)
    d = system.fiber(system.states[0]).alphabet_size
    return sft_function({s: np.full(d, value) for s in system.states}, system.holder_exponent)


def jacobian_potential(system: FiberedSystem) -> RandomFunction:
    """Geometric potential ``-log |T'|`` of a circle family."""
    if system.family != "circle":
        raise ArgumentError("geometric potential is defined for circle fibers")
    funcs, lips = {}, {}
    for s in system.states:
        f = system.fiber(s)
        funcs[s] = (lambda x, f=f: -np.log(np.abs(f.derivative(x))))
        lips[s] = f.second_derivative_bound / system.geometry[s].gamma
    return circle_function(funcs, lips, system.holder_exponent)
