"""Finite-dimensional transfer operators, cocycle windows and twisted perturbations.

Operators act on functions that are constant on cells.  Circle fibers use a
generalized Ulam scheme on ``K`` equal arcs: the weight from source cell ``j``
to target cell ``i`` is

    K * exp(phi(c_j) + z f(c_j)) * |F(C_j) ∩ (C_i + Z)|

with ``c_j`` the midpoint of ``C_j`` and ``F`` the monotone lift of the map.
For the geometric potential this is the usual Ulam matrix.  SFT fibers use
depth-one cylinders: the weight from letter ``a`` to letter ``w`` is
``A[a, w] exp(phi(a, w) + z f(a))``.

Matrices are stored in compressed sparse row form (``entries``); ``dense()``
returns the dense view.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .environment import EnvPath
from .errors import ArgumentError, DimensionError, WindowError
from .systems import FiberedSystem, RandomFunction, circle_distance

__all__ = [
    "Discretization",
    "OperatorMatrix",
    "CocycleWindow",
    "TwistData",
    "PerturbationCheck",
    "build_operator",
    "build_window",
    "compose",
    "propagate",
    "normalize",
    "duality_residual",
    "perturbation_bound",
    "q_series",
    "test_family",
    "leading_eigenvalue",
    "refinement_study",
]


@dataclass(frozen=True)
class Discretization:
    """Cell partition of a fiber.

    Parameters
    ----------
    scheme : {"ulam", "cylinder"}
        Equal arcs of the circle or depth-one cylinders.
    resolution : int
        Number of cells (the alphabet size for cylinders).
    """

    scheme: str
    resolution: int

    def __post_init__(self):
        if self.scheme not in ("ulam", "cylinder"):
            raise ArgumentError(f"unknown scheme {self.scheme!r}")
        if self.resolution < 2:
            raise ArgumentError("resolution must be at least 2")

    @property
    def centers(self) -> np.ndarray:
        if self.scheme != "ulam":
            raise ArgumentError("cylinders have no midpoints")
        return (np.arange(self.resolution) + 0.5) / self.resolution

    def sample(self, func: Callable) -> np.ndarray:
        """Cell representative values of a circle function."""
        return np.asarray(func(self.centers))

    def holder_seminorm(self, values, alpha: float, r: float, full_pairs_upto: int = 64) -> float:
        """Discrete ``v_{alpha, r}`` over cell representatives.

        Circle cells use every pair when ``K <= full_pairs_upto``; above that
        the offsets ``1..16`` and a geometric ladder of larger offsets up to
        ``r K`` are scanned for every cell (the stride of the subsample).
        Cylinders sit at mutual distance one.
        """
        v = np.asarray(values)
        if self.scheme == "cylinder":
            return float(np.max(np.abs(v[:, None] - v[None, :]))) if r >= 1.0 else 0.0
        K = self.resolution
        max_off = int(math.floor(min(r, 0.5) * K + 1e-9))
        if max_off < 1:
            return 0.0
        if K <= full_pairs_upto:
            offsets = np.arange(1, max_off + 1)
        else:
            ladder = np.unique(np.round(np.geomspace(17, max(max_off, 17), 24)).astype(int))
            offsets = np.unique(np.concatenate([np.arange(1, min(16, max_off) + 1), ladder]))
            offsets = offsets[offsets <= max_off]
        best = 0.0
        for s in offsets:
            d = min(s, K - s) / K
            if d <= 0 or d > r + 1e-12:
                continue
            diff = np.abs(v - np.roll(v, -int(s)))
            best = max(best, float(diff.max()) / d**alpha)
        return best

    def holder_norm(self, values, alpha: float, r: float) -> float:
        return float(np.max(np.abs(values))) + self.holder_seminorm(values, alpha, r)


@dataclass
class OperatorMatrix:
    """One fiber operator with rows indexing target cells and columns source cells.

    Attributes
    ----------
    fiber_index : int
        Absolute environment index of the source fiber.
    entries : scipy.sparse.csr_matrix
        Operator weights.
    twist : complex
        Twist parameter ``z`` baked into ``entries``.
    normalized : bool
        Whether ``entries @ 1 = 1`` is intended.
    koopman : scipy.sparse.csr_matrix or None
        Fraction of each source cell carried into each target cell; used to
        evaluate ``f o T`` on source cells.
    unit_residual : float or None
        ``max |L 1 - 1|`` recorded by ``normalize``.
    """

    fiber_index: int
    entries: sp.csr_matrix
    twist: complex = 0.0
    normalized: bool = False
    koopman: sp.csr_matrix | None = None
    unit_residual: float | None = None

    @classmethod
    def from_array(cls, array, fiber_index: int = 0, normalized: bool = False) -> "OperatorMatrix":
        return cls(fiber_index, sp.csr_matrix(np.asarray(array)), 0.0, normalized)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def dense(self) -> np.ndarray:
        return self.entries.toarray()

    def apply(self, v):
        return self.entries @ v

    def apply_adjoint(self, mu):
        return self.entries.T @ mu

    def to_csv(self, path) -> None:
        coo = self.entries.tocoo()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "col", "re", "im"])
            for r, c, v in zip(coo.row, coo.col, coo.data):
                writer.writerow([int(r), int(c), repr(float(np.real(v))), repr(float(np.imag(v)))])


def _ulam_geometry(fiber, K: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rows, cols and overlap lengths ``|F(C_j) ∩ (C_i + Z)|`` for a monotone lift."""
    edges = np.arange(K + 1) / K
    F = fiber.lift(edges)
    a, b = F[:-1], F[1:]
    first = np.floor(a * K).astype(np.int64)
    last = np.ceil(b * K).astype(np.int64)
    width = int(np.max(last - first))
    t = np.arange(width)
    cell = first[:, None] + t[None, :]
    lo = np.maximum(a[:, None], cell / K)
    hi = np.minimum(b[:, None], (cell + 1) / K)
    overlap = np.clip(hi - lo, 0.0, None)
    cols = np.broadcast_to(np.arange(K)[:, None], cell.shape)
    keep = overlap > 0
    return np.mod(cell[keep], K), cols[keep], overlap[keep]


def build_operator(system: FiberedSystem, state: int, potential: RandomFunction, disc: Discretization,
                   twist_z: complex = 0.0, observable: RandomFunction | None = None,
                   fiber_index: int = 0) -> OperatorMatrix:
    """Discretized transfer operator of one fiber.

    Parameters
    ----------
    system : FiberedSystem
    state : int
        Environment state selecting the fiber map.
    potential : RandomFunction
        Potential ``phi``.
    disc : Discretization
        Cell partition matching the family.
    twist_z : complex
        Twist parameter; requires ``observable`` when nonzero.
    observable : RandomFunction or None
        Observable ``f`` used by the twist.
    fiber_index : int
        Label of the source fiber.
    """
    if twist_z != 0 and observable is None:
        raise ArgumentError("a nonzero twist needs an observable")
    fiber = system.fiber(state)
    if system.family == "circle":
        if disc.scheme != "ulam":
            raise DimensionError("circle fibers need an ulam discretization")
        K = disc.resolution
        rows, cols, overlap = _ulam_geometry(fiber, K)
        weight = np.exp(potential.evaluate(state, disc.centers))
        data = K * overlap * weight[cols]
        entries = sp.csr_matrix((data, (rows, cols)), shape=(K, K))
        image_len = fiber.lift(np.arange(1, K + 1) / K) - fiber.lift(np.arange(K) / K)
        koop = sp.csr_matrix((overlap / image_len[cols], (rows, cols)), shape=(K, K))
        f_vals = None if observable is None else observable.evaluate(state, disc.centers)
    else:
        if disc.scheme != "cylinder":
            raise DimensionError("sft fibers need a cylinder discretization")
        A = fiber.matrix
        d = A.shape[0]
        if disc.resolution != d:
            raise DimensionError("cylinder count does not match the alphabet")
        phi = potential.evaluate(state, None)
        if phi.ndim == 1:
            phi = np.repeat(phi[:, None], d, axis=1)
        if phi.shape != (d, d):
            raise DimensionError("potential table has the wrong shape")
        dense = (A * np.exp(phi)).T
        entries = sp.csr_matrix(dense)
        koop = sp.csr_matrix((A / A.sum(axis=1, keepdims=True)).T)
        f_vals = None
        if observable is not None:
            f_vals = observable.evaluate(state, None)
            if f_vals.shape != (d,):
                raise DimensionError("twisted observables depend on the first symbol only")
    if twist_z != 0:
        entries = (entries @ sp.diags(np.exp(twist_z * f_vals))).tocsr()
    return OperatorMatrix(int(fiber_index), entries, complex(twist_z) if twist_z != 0 else 0.0, False, koop)


@dataclass
class CocycleWindow:
    """Operators ``L_{start}, ..., L_{start+W-1}`` along a path.

    Fiber ``start + i`` is the source of operator ``i``; a window of ``W``
    operators therefore spans fibers ``start .. start + W``.

    Attributes
    ----------
    measures : list of ndarray or None
        Invariant cell measures ``mu`` per fiber (``W + 1`` entries) for
        normalized windows.
    observables : list of ndarray or None
        Source-cell values of an observable per operator.
    """

    operators: list[OperatorMatrix]
    start_offset: int = 0
    measures: list[np.ndarray] | None = None
    observables: list[np.ndarray] | None = None

    def __post_init__(self):
        for a, b in zip(self.operators, self.operators[1:]):
            if a.shape[0] != b.shape[1]:
                raise DimensionError("adjacent operators have incompatible shapes")

    def __len__(self) -> int:
        return len(self.operators)

    @property
    def stop(self) -> int:
        return self.start_offset + len(self.operators)

    def local(self, index: int) -> int:
        return index - self.start_offset

    def op(self, index: int) -> OperatorMatrix:
        k = index - self.start_offset
        if not 0 <= k < len(self.operators):
            raise WindowError(f"operator {index} outside window [{self.start_offset}, {self.stop})")
        return self.operators[k]

    def dim(self, fiber: int) -> int:
        k = fiber - self.start_offset
        if k == len(self.operators):
            return self.operators[-1].shape[0]
        return self.op(fiber).shape[1]

    def measure(self, fiber: int) -> np.ndarray:
        if self.measures is None:
            raise ArgumentError("window carries no invariant measures")
        k = fiber - self.start_offset
        if not 0 <= k < len(self.measures):
            raise WindowError(f"fiber {fiber} outside the measured window")
        return self.measures[k]

    def observable(self, index: int) -> np.ndarray:
        if self.observables is None:
            raise ArgumentError("window carries no observable")
        return self.observables[index - self.start_offset]

    def sub(self, start: int, length: int) -> "CocycleWindow":
        k = start - self.start_offset
        if k < 0 or k + length > len(self.operators):
            raise WindowError("sub-window escapes the window")
        meas = None if self.measures is None else self.measures[k:k + length + 1]
        obs = None if self.observables is None else self.observables[k:k + length]
        return CocycleWindow(self.operators[k:k + length], start, meas, obs)

    def twisted(self, z: complex) -> "CocycleWindow":
        """Window of twisted operators ``L_z = L diag(exp(z f))``."""
        if self.observables is None:
            raise ArgumentError("twisting needs observables")
        ops = []
        for op, f in zip(self.operators, self.observables):
            e = (op.entries @ sp.diags(np.exp(z * f))).tocsr() if z != 0 else op.entries
            ops.append(replace(op, entries=e, twist=z))
        return CocycleWindow(ops, self.start_offset, self.measures, self.observables)


def build_window(system: FiberedSystem, path: EnvPath, potential: RandomFunction, disc: Discretization,
                 start: int | None = None, length: int | None = None,
                 observable: RandomFunction | None = None) -> CocycleWindow:
    """Plain operators along ``path`` from absolute index ``start`` for ``length`` steps.

    Operators for equal states share their sparse storage.
    """
    start = path.offset if start is None else start
    length = len(path) - (start - path.offset) if length is None else length
    states = path.window(start, length)
    cache: dict[int, OperatorMatrix] = {}
    obs_cache: dict[int, np.ndarray] = {}
    ops, obs = [], []
    for i, s in enumerate(states):
        s = int(s)
        if s not in cache:
            cache[s] = build_operator(system, s, potential, disc)
            if observable is not None:
                obs_cache[s] = (observable.evaluate(s, disc.centers) if system.family == "circle"
                                else observable.evaluate(s, None))
        ops.append(replace(cache[s], fiber_index=start + i))
        if observable is not None:
            obs.append(obs_cache[s])
    return CocycleWindow(ops, start, None, obs if observable is not None else None)


def compose(window: CocycleWindow, start: int, n: int) -> OperatorMatrix:
    """Left-ordered product ``L_{start+n-1} ... L_{start}``; ``n = 0`` gives the identity."""
    if n < 0:
        raise ArgumentError("n must be nonnegative")
    if n == 0:
        d = window.dim(start)
        return OperatorMatrix(start, sp.identity(d, format="csr"), 0.0, True)
    ops = [window.op(start + k) for k in range(n)]
    prod = ops[0].entries
    for op in ops[1:]:
        prod = (op.entries @ prod).tocsr()
    twist = ops[0].twist
    return OperatorMatrix(start, prod, twist, all(o.normalized for o in ops))


def propagate(window: CocycleWindow, start: int, n: int, v, twist: complex = 0.0, record=None):
    """Apply ``n`` operators (optionally twisted by ``exp(twist f)``) to ``v``.

    Parameters
    ----------
    record : iterable of int or None
        Step counts at which to store the running vector.

    Returns
    -------
    ndarray or dict
        The final vector, or ``{step: vector}`` when ``record`` is given.
    """
    out = {}
    rec = set() if record is None else set(int(r) for r in record)
    v = np.asarray(v)
    if 0 in rec:
        out[0] = v.copy()
    for k in range(n):
        op = window.op(start + k)
        if twist != 0:
            v = v * np.exp(twist * window.observable(start + k)).reshape((-1,) + (1,) * (v.ndim - 1))
        v = op.entries @ v
        if k + 1 in rec:
            out[k + 1] = v.copy()
    return out if record is not None else v


def normalize(op: OperatorMatrix, lam: float, h_source, h_target) -> OperatorMatrix:
    """Normalized operator ``g -> L(g h_src) / (lam h_tgt)``.

    The residual ``max |L 1 - 1|`` is stored on the result, never corrected.
    """
    h_source = np.asarray(h_source, dtype=float)
    h_target = np.asarray(h_target, dtype=float)
    if lam <= 0 or np.any(h_source <= 0) or np.any(h_target <= 0):
        raise ArgumentError("normalization needs positive lambda and eigenfunctions")
    if h_source.size != op.shape[1] or h_target.size != op.shape[0]:
        raise DimensionError("eigenfunction sizes do not match the operator")
    src = op.entries.tocsr()
    rows = np.repeat(np.arange(src.shape[0]), np.diff(src.indptr))
    data = src.data / (lam * h_target[rows]) * h_source[src.indices]
    entries = sp.csr_matrix((data, src.indices.copy(), src.indptr.copy()), shape=src.shape)
    resid = float(np.max(np.abs(entries @ np.ones(op.shape[1]) - 1.0)))
    return OperatorMatrix(op.fiber_index, entries, op.twist, True, op.koopman, resid)


def _check_measure(mu: np.ndarray, name: str) -> None:
    if np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-10:
        raise ArgumentError(f"{name} must be a probability vector")


def duality_residual(op: OperatorMatrix, mu_source, mu_target, g, f) -> float:
    """``|int g (f o T) dmu_src - int (L g) f dmu_tgt|`` on the discretization.

    ``f o T`` on source cells is evaluated through the operator's geometric
    cell-transition fractions.
    """
    mu_source = np.asarray(mu_source, dtype=float)
    mu_target = np.asarray(mu_target, dtype=float)
    _check_measure(mu_source, "mu_source")
    _check_measure(mu_target, "mu_target")
    if op.koopman is None:
        raise ArgumentError("operator carries no cell-transition data")
    g = np.asarray(g)
    f = np.asarray(f)
    f_after = op.koopman.T @ f
    lhs = np.sum(mu_source * g * f_after)
    rhs = np.sum(mu_target * (op.entries @ g) * f)
    return float(abs(lhs - rhs))


def q_series(seminorms: Sequence[float], gammas: Sequence[float], alpha: float) -> float:
    """``Q_{j,n}(h) = sum_k v(h_{j+k}) (gamma_{j+k} ... gamma_{j+n-1})^{-alpha}``."""
    v = np.asarray(seminorms, dtype=float)
    g = np.asarray(gammas, dtype=float)
    n = v.size
    if g.size != n:
        raise DimensionError("need one expansion factor per step")
    # tail products gamma_k ... gamma_{n-1}
    tail = np.cumprod(g[::-1])[::-1]
    return float(np.sum(v * tail ** (-alpha)))


@dataclass(frozen=True)
class TwistData:
    """Geometry and Holder data along a window for the perturbation estimate.

    Arrays are indexed by local fiber position; ``gamma`` and ``phi_seminorm``
    and ``f_seminorm`` hold one entry per operator, ``xi`` one per fiber.
    """

    disc: Discretization
    alpha: float
    gamma: np.ndarray
    xi: np.ndarray
    phi_seminorm: np.ndarray
    f_seminorm: np.ndarray
    f_sup: np.ndarray


@dataclass(frozen=True)
class PerturbationCheck:
    lhs_norm: float
    rhs_bound: float
    sum_bound: float
    gamma_product: float
    q_phi: float
    q_f: float
    holds: bool


def test_family(disc: Discretization, count: int = 16, seed: int = 0) -> list[np.ndarray]:
    """Seeded test functions on cells: constants, low Fourier modes and random mixtures."""
    rng = np.random.default_rng(seed)
    if disc.scheme == "cylinder":
        d = disc.resolution
        fam = [np.ones(d)] + [rng.normal(size=d) for _ in range(count - 1)]
        return fam
    x = disc.centers
    fam = [np.ones_like(x), np.cos(2 * np.pi * x), np.sin(2 * np.pi * x), circle_distance(x, 0.0)]
    while len(fam) < count:
        modes = rng.integers(1, 5, size=3)
        coef = rng.normal(size=3)
        phase = rng.uniform(0, 1, size=3)
        g = sum(c * np.cos(2 * np.pi * (m * x + p)) for c, m, p in zip(coef, modes, phase))
        fam.append(g + rng.normal())
    return fam


def perturbation_bound(window: CocycleWindow, data: TwistData, start: int, n: int, z: complex,
                       tests: Sequence[np.ndarray] | None = None, slack: float = 0.05) -> PerturbationCheck:
    """Compare ``||(L_z^n - L^n) g||`` with the analytic perturbation bound.

    ``lhs_norm`` is the largest ratio ``||(L_z^n - L^n) g||_{alpha,xi} / ||g||_{alpha,xi}``
    over the test family, a lower estimate of the operator norm on the
    discretization.  ``rhs_bound`` is

        |z| e^{|Re z| S} ||L^n 1|| ((1 + Gamma^alpha + 2 Q(phi)) S + Q(f))

    with ``S = sum_k ||f_{j+k}||_inf`` bounding ``||S_{j,n} f||_inf``.
    """
    if n < 1:
        raise ArgumentError("n must be positive")
    k0 = window.local(start)
    if k0 < 0 or k0 + n > len(window):
        raise WindowError("perturbation range escapes the window")
    sl = slice(k0, k0 + n)
    a = data.alpha
    gam = data.gamma[sl]
    S = float(np.sum(data.f_sup[sl]))
    Gamma = float(np.prod(1.0 / gam))
    q_phi = q_series(data.phi_seminorm[sl], gam, a)
    q_f = q_series(data.f_seminorm[sl], gam, a)
    ones = np.ones(window.dim(start))
    L1 = float(np.max(np.abs(propagate(window, start, n, ones))))
    rhs = abs(z) * math.exp(abs(z.real) * S) * L1 * ((1.0 + Gamma**a + 2.0 * q_phi) * S + q_f)
    if z == 0:
        return PerturbationCheck(0.0, 0.0, S, Gamma, q_phi, q_f, True)
    tests = test_family(data.disc) if tests is None else tests
    xi_in, xi_out = float(data.xi[k0]), float(data.xi[k0 + n])
    lhs = 0.0
    for g in tests:
        g = np.asarray(g, dtype=complex)
        base = propagate(window, start, n, g)
        tw = propagate(window, start, n, g, twist=z)
        diff = tw - base
        num = data.disc.holder_norm(diff, a, xi_out)
        den = data.disc.holder_norm(g, a, xi_in)
        lhs = max(lhs, num / den)
    return PerturbationCheck(lhs, rhs, S, Gamma, q_phi, q_f, lhs <= rhs * (1.0 + slack))


def leading_eigenvalue(op: OperatorMatrix, iterations: int = 2000, tol: float = 1e-14) -> float:
    """Perron root of a nonnegative square operator by power iteration."""
    v = np.ones(op.shape[1])
    lam = 0.0
    for _ in range(iterations):
        w = op.entries @ v
        new = float(np.max(w) / np.max(v))
        v = w / np.max(w)
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            return new
        lam = new
    return lam


def refinement_study(system: FiberedSystem, state: int, potential: RandomFunction,
                     resolutions: Sequence[int]) -> dict:
    """Perron roots across resolutions and the fitted slope of their differences.

    The finest resolution serves as the reference; the slope is the
    least-squares exponent of ``|lambda_K - lambda_ref|`` against ``K``.
    """
    lams = [leading_eigenvalue(build_operator(system, state, potential, Discretization("ulam", K)))
            for K in resolutions]
    ref = lams[-1]
    errs = np.abs(np.array(lams[:-1]) - ref)
    Ks = np.asarray(resolutions[:-1], dtype=float)
    ok = errs > 0
    slope = float(np.polyfit(np.log(Ks[ok]), np.log(errs[ok]), 1)[0]) if ok.sum() >= 2 else float("nan")
    return {"resolutions": list(resolutions), "lambdas": lams, "slope": slope}
