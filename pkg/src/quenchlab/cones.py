"""Polyhedral cones on cell functions, the Hilbert projective metric and contraction bookkeeping.

Every cone used here is cut out by finitely many linear functionals on the
discretization, ``C = {g : l_k(g) >= 0 for all k}``.  For two interior points

    d_C(f, g) = log( max_k l_k(f)/l_k(g) / min_k l_k(f)/l_k(g) ),

which is the Hilbert metric of the discretized cone.  Supported kinds:

* ``orthant``: ``g_i >= 0``;
* ``log-oscillation``: ``g(x) <= g(x') exp(a d(x,x')^alpha)`` for ``d <= xi``
  with ``a = s Q``;
* ``bounded-ratio``: ``g(x) <= C g(x')`` for all ``x, x'``;
* ``kappa``: ``|g(x) - g(x')| <= kappa inf g d(x,x')^alpha``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (ArgumentError, CalibrationError, DimensionError, EmptyRecordError, MembershipError,
                     PreconditionError)
from .systems import circle_distance
from .transfer import CocycleWindow, Discretization

__all__ = [
    "ConeSpec",
    "Membership",
    "ContractionLedger",
    "KappaReport",
    "hilbert_metric",
    "cone_membership",
    "decompose",
    "decomposition_constant",
    "sample_members",
    "projective_diameter",
    "matrix_orthant_diameter",
    "birkhoff_check",
    "nesting_check",
    "contraction_ledger",
    "kappa_zeta",
    "kappa_invariance_check",
    "sampling_functional_bound",
    "cover_points",
    "contraction_exponent",
    "log_contraction_exponent",
    "DEFAULT_KAPPA",
]

DEFAULT_KAPPA = 1.0 / math.sqrt(2.0)
_KINDS = ("orthant", "log-oscillation", "bounded-ratio", "kappa")
# the kappa cone couples every point with every pair; beyond this size the
# metric would need K^3 constraint evaluations
_KAPPA_METRIC_MAX = 128


def contraction_exponent(D0: float) -> float:
    """``c = -log tanh(D0)`` evaluated stably for large ``D0``."""
    q = math.exp(-2.0 * D0)
    return math.log1p(q) - math.log1p(-q)


def log_contraction_exponent(D0: float) -> float:
    """``log c`` for ``c = -log tanh(D0)``; finite even when ``c`` underflows."""
    c = contraction_exponent(D0)
    if c > 1e-300:
        return math.log(c)
    # c = 2 q (1 + q^2/3 + ...) with q = exp(-2 D0)
    return math.log(2.0) - 2.0 * D0


@dataclass(frozen=True)
class ConeSpec:
    """Cone parameters on a discretization.

    Parameters
    ----------
    kind : str
        One of ``orthant``, ``log-oscillation``, ``bounded-ratio``, ``kappa``.
    disc : Discretization
        Cell geometry (arc distances between circle cells; distinct
        depth-one cylinders sit at distance 1).
    s, Q : float
        Log-oscillation parameter ``a = s Q``.
    C : float
        Ratio bound of the bounded-ratio cone (``C >= 1``).
    kappa : float
        Parameter in ``(0, 1)`` of the kappa cone.
    alpha : float
        Holder exponent.
    xi : float
        Pairing scale of the log-oscillation cone.
    """

    kind: str
    disc: Discretization
    s: float | None = None
    Q: float | None = None
    C: float | None = None
    kappa: float | None = None
    alpha: float = 1.0
    xi: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ArgumentError(f"unknown cone kind {self.kind!r}")
        if not 0 < self.alpha <= 1 or self.xi <= 0:
            raise ArgumentError("alpha must lie in (0, 1] and xi must be positive")
        if self.kind == "log-oscillation":
            if self.s is None or self.Q is None or self.s <= 0 or self.Q <= 0:
                raise ArgumentError("log-oscillation cone needs positive s and Q")
        if self.kind == "bounded-ratio" and (self.C is None or self.C < 1):
            raise ArgumentError("bounded-ratio cone needs C >= 1")
        if self.kind == "kappa" and (self.kappa is None or not 0 < self.kappa < 1):
            raise ArgumentError("kappa must lie in (0, 1)")

    @property
    def size(self) -> int:
        return self.disc.resolution

    @property
    def oscillation(self) -> float:
        return float(self.s * self.Q)


def _cell_distance(disc: Discretization, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    if disc.scheme == "cylinder":
        return np.where(i == j, 0.0, 1.0)
    c = disc.centers
    return circle_distance(c[i], c[j])


def _pairs(disc: Discretization, radius: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ordered pairs ``(i, j)``, ``i != j``, with cell distance ``<= radius``."""
    K = disc.resolution
    if disc.scheme == "cylinder":
        if radius < 1.0:
            return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
        i, j = np.nonzero(~np.eye(K, dtype=bool))
        return i, j, np.ones(i.size)
    max_off = min(K // 2, int(math.floor(min(radius, 1.0) * K + 1e-9)))
    if max_off < 1:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
    base = np.arange(K)
    ii, jj = [], []
    for o in range(1, max_off + 1):
        ii.append(base)
        jj.append((base + o) % K)
        # the antipodal offset already lists both orientations
        if 2 * o != K:
            ii.append((base + o) % K)
            jj.append(base)
    ii = np.concatenate(ii)
    jj = np.concatenate(jj)
    return ii, jj, circle_distance(disc.centers[ii], disc.centers[jj])


def _constraints(cone: ConeSpec, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values ``l_k(g)`` of the defining functionals and the magnitudes of their terms.

    The magnitudes set the round-off scale of each value.
    """
    g = np.asarray(g, dtype=float)
    if g.shape[0] != cone.size:
        raise DimensionError(f"vector of length {g.shape[0]} on a discretization of {cone.size} cells")
    vals, mags = [g], [np.abs(g)]
    if cone.kind == "log-oscillation":
        i, j, d = _pairs(cone.disc, cone.xi)
        w = np.exp(cone.oscillation * d**cone.alpha)
        wg = w.reshape((-1,) + (1,) * (g.ndim - 1)) * g[j]
        vals.append(wg - g[i])
        mags.append(np.abs(wg) + np.abs(g[i]))
    elif cone.kind == "bounded-ratio":
        K = cone.size
        i, j = np.nonzero(~np.eye(K, dtype=bool))
        vals.append(cone.C * g[j] - g[i])
        mags.append(cone.C * np.abs(g[j]) + np.abs(g[i]))
    elif cone.kind == "kappa":
        K = cone.size
        if K > _KAPPA_METRIC_MAX:
            raise DimensionError(f"kappa-cone metric limited to {_KAPPA_METRIC_MAX} cells")
        i, j = np.nonzero(np.triu(np.ones((K, K), bool), 1))
        d = _cell_distance(cone.disc, i, j) ** cone.alpha
        dd = d.reshape((-1,) + (1,) * (g.ndim - 1))
        diff = (g[i] - g[j]) / dd
        dmag = (np.abs(g[i]) + np.abs(g[j])) / dd
        kg = cone.kappa * g
        for sign in (1.0, -1.0):
            vals.append((kg[:, None] - sign * diff[None, :]).reshape((-1,) + g.shape[1:]))
            mags.append((np.abs(kg)[:, None] + dmag[None, :]).reshape((-1,) + g.shape[1:]))
    return np.concatenate(vals, axis=0), np.concatenate(mags, axis=0)


@dataclass(frozen=True)
class Membership:
    member: bool
    margin: float
    constraint: str


def _osc_seminorm(disc: Discretization, values: np.ndarray, alpha: float, radius: float) -> float:
    i, j, d = _pairs(disc, radius)
    if i.size == 0:
        return 0.0
    return float(np.max(np.abs(values[i] - values[j]) / d**alpha))


def cone_membership(g, cone: ConeSpec) -> Membership:
    """Membership of ``g`` with the relative margin of the defining inequality.

    ``margin = (bound - attained) / bound``; for the orthant it is
    ``min g / max |g|``.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (cone.size,):
        raise DimensionError("vector does not match the cone's discretization")
    if not np.all(np.isfinite(g)):
        return Membership(False, -math.inf, "finite values")
    gmin = float(g.min())
    top = float(np.max(np.abs(g)))
    if cone.kind == "orthant":
        margin = gmin / top if top > 0 else 0.0
        return Membership(gmin >= 0, margin, "nonnegativity")
    if gmin <= 0:
        if top == 0.0:
            return Membership(True, 0.0, "zero vector")
        return Membership(False, gmin / top, "positivity")
    if cone.kind == "log-oscillation":
        attained = _osc_seminorm(cone.disc, np.log(g), cone.alpha, cone.xi)
        bound = cone.oscillation
        name = "log-oscillation bound"
    elif cone.kind == "bounded-ratio":
        attained = float(g.max() / gmin)
        bound = cone.C
        name = "ratio bound"
    else:
        attained = _osc_seminorm(cone.disc, g, cone.alpha, math.inf)
        bound = cone.kappa * gmin
        name = "kappa bound"
    margin = (bound - attained) / bound
    return Membership(margin >= -1e-12, margin, name)


def hilbert_metric(f, g, cone: ConeSpec) -> float:
    """Hilbert projective distance of two cone members.

    Raises
    ------
    MembershipError
        If either vector is outside the cone, naming the violated constraint.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    for name, v in (("f", f), ("g", g)):
        m = cone_membership(v, cone)
        if not m.member:
            raise MembershipError(f"{name} violates the {m.constraint} (margin {m.margin:.3g})")
    lf = _constraints(cone, f)
    lg = _constraints(cone, g)
    return _metric_from_constraints(lf, lg)


def _metric_from_constraints(cf: tuple[np.ndarray, np.ndarray], cg: tuple[np.ndarray, np.ndarray]) -> float:
    lf, mf = cf
    lg, mg = cg
    zf = np.abs(lf) <= 1e-13 * mf
    zg = np.abs(lg) <= 1e-13 * mg
    if np.any(zf ^ zg):
        return math.inf
    live = ~(zf & zg)
    if not np.any(live):
        return 0.0
    r = lf[live] / lg[live]
    if np.any(r <= 0):
        return math.inf
    logs = np.log(r)
    return float(max(logs.max() - logs.min(), 0.0))


def projective_diameter(vectors: Sequence[np.ndarray], cone: ConeSpec) -> float:
    """Largest pairwise Hilbert distance in a sample of members."""
    L = [_constraints(cone, np.asarray(v, dtype=float)) for v in vectors]
    best = 0.0
    for a in range(len(L)):
        for b in range(a + 1, len(L)):
            best = max(best, _metric_from_constraints(L[a], L[b]))
    return best


def matrix_orthant_diameter(A) -> float:
    """Exact orthant diameter of the image of the orthant under a positive matrix.

    The image is spanned by the columns, so the diameter is the largest
    distance between two columns.
    """
    A = np.asarray(A, dtype=float)
    if np.any(A <= 0):
        return math.inf
    logs = np.log(A)
    best = 0.0
    for k in range(A.shape[1]):
        diff = logs - logs[:, [k]]
        best = max(best, float(np.max(diff.max(axis=0) - diff.min(axis=0))))
    return best


def birkhoff_check(A, pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> dict:
    """Measured orthant contraction of ``A`` against ``tanh(Delta/4)`` and ``tanh(Delta)``."""
    A = np.asarray(A, dtype=float)
    delta = matrix_orthant_diameter(A)
    orth = ConeSpec("orthant", Discretization("cylinder", A.shape[1]))
    orth_img = ConeSpec("orthant", Discretization("cylinder", A.shape[0]))
    worst = 0.0
    for f, g in pairs:
        d0 = hilbert_metric(f, g, orth)
        if d0 == 0:
            continue
        worst = max(worst, hilbert_metric(A @ f, A @ g, orth_img) / d0)
    classical = math.tanh(delta / 4.0)
    weak = math.tanh(delta)
    return {
        "diameter": delta,
        "factor": worst,
        "tanh_quarter": classical,
        "tanh_full": weak,
        "holds_classical": worst <= classical + 1e-9,
        "holds_full": worst <= weak + 1e-9,
        "margin_classical": classical - worst,
        "margin_full": weak - worst,
    }


def sample_members(cone: ConeSpec, count: int = 64, seed: int = 0, fill: float = 0.9) -> list[np.ndarray]:
    """Constant function plus ``count`` seeded members built from bounded-oscillation noise.

    Log-oscillation members are ``exp`` of random low Fourier modes scaled to
    use the fraction ``fill`` of the admissible oscillation; every returned
    vector is verified to be a member.
    """
    rng = np.random.default_rng(seed)
    K = cone.size
    out = [np.ones(K)]
    disc = cone.disc
    x = disc.centers if disc.scheme == "ulam" else np.arange(K) / K
    while len(out) < count + 1:
        modes = rng.integers(1, 4, size=3)
        coef = rng.normal(size=3)
        phase = rng.uniform(size=3)
        noise = sum(c * np.cos(2 * np.pi * (m * x + p)) for c, m, p in zip(coef, modes, phase))
        if disc.scheme == "cylinder":
            noise = rng.normal(size=K)
        if cone.kind == "orthant":
            g = np.exp(noise)
        elif cone.kind == "log-oscillation":
            v = _osc_seminorm(disc, noise, cone.alpha, cone.xi)
            g = np.exp(noise * (fill * cone.oscillation / v)) if v > 0 else np.ones(K)
        elif cone.kind == "bounded-ratio":
            span = float(noise.max() - noise.min())
            g = np.exp(noise * (fill * math.log(cone.C) / span)) if span > 0 else np.ones(K)
        else:
            v = _osc_seminorm(disc, noise, cone.alpha, math.inf)
            base = 1.0 + float(np.max(np.abs(noise)))
            # v(g) = t v(noise) and inf g >= base - t max|noise|
            t = fill * cone.kappa * (base - 1.0) / (v + fill * cone.kappa * (base - 1.0)) if v > 0 else 0.0
            g = base + t * noise
        if cone_membership(g, cone).member:
            out.append(g)
    return out


# ----------------------------------------------------------------------------
# regeneration split

def decomposition_constant(xi: float, s: float, Q: float) -> float:
    """``U = 12 xi^{-1} (1 + 4 / (s Q))``."""
    return 12.0 / xi * (1.0 + 4.0 / (s * Q))


def decompose(g, cone: ConeSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Split ``g`` into four pieces in ``C`` or ``-C``.

    Members return ``(g, 0, 0, 0)`` and negatives of members ``(0, g, 0, 0)``.
    Otherwise the split is ``(g + c, -c, 0, 0)`` with the constant
    ``c = ||g||_inf + v_{alpha,xi}(g) / (s Q)``: ``g + c >= v / (s Q)`` so the
    logarithm of ``g + c`` has Holder constant at most ``s Q``.  The pieces sum
    to ``g`` up to the rounding of ``g + c`` (a few ulps of ``c``).
    """
    if cone.kind != "log-oscillation":
        raise ArgumentError("decomposition is defined for the log-oscillation cone")
    g = np.asarray(g, dtype=float)
    zero = np.zeros_like(g)
    if not np.any(g):
        return zero, zero.copy(), zero.copy(), zero.copy()
    if cone_membership(g, cone).member:
        return g.copy(), zero, zero.copy(), zero.copy()
    if cone_membership(-g, cone).member:
        return zero, g.copy(), zero.copy(), zero.copy()
    v = _osc_seminorm(cone.disc, g, cone.alpha, cone.xi)
    c = float(np.max(np.abs(g))) + v / cone.oscillation
    # nudge past the boundary so rounding cannot push g + c outside the cone
    c *= 1.0 + 1e-12
    c = max(c, float(np.max(np.abs(g))) * (1.0 + 1e-12) + 1e-300)
    return g + c, np.full_like(g, -c), zero, zero.copy()


# ----------------------------------------------------------------------------
# nesting and contraction

def nesting_check(window: CocycleWindow, index: int, source: ConeSpec, target: ConeSpec,
                  members: Sequence[np.ndarray]) -> float:
    """Worst membership margin of ``L_index g`` in ``target`` over sampled ``g`` in ``source``."""
    op = window.op(index).entries
    worst = math.inf
    for g in members:
        if not cone_membership(g, source).member:
            raise MembershipError("sample is not a member of the source cone")
        worst = min(worst, cone_membership(op @ g, target).margin)
    return worst


@dataclass
class ContractionLedger:
    """Per-index contraction bookkeeping along a window.

    Arrays are indexed by absolute fiber ``indices``; ``d_bar`` is the
    diameter bound ``d_{J0,M0}`` and ``in_A`` the indicator of the good set.
    ``log_c`` keeps the contraction exponent resolvable when ``D0`` is so
    large that ``c`` underflows.
    """

    M0: int
    J0: int
    D0: float
    c: float
    log_c: float
    indices: np.ndarray
    m: np.ndarray
    j: np.ndarray
    d_bar: np.ndarray
    in_A: np.ndarray
    frequency_A: float
    base: int
    U: float
    counts: list = field(default_factory=list)
    envelope: list = field(default_factory=list)
    measured_factors: list = field(default_factory=list)
    measured_diameters: list = field(default_factory=list)

    def count_at(self, n: int) -> int:
        for k, c in self.counts:
            if k == n:
                return c
        raise ArgumentError(f"no count recorded at n = {n}")

    def to_csv(self, path) -> None:
        cum = np.cumsum(self.in_A.astype(int))
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "in_A", "d_value", "cumulative_count", "envelope"])
            env = dict(self.envelope)
            for k, idx in enumerate(self.indices):
                n = int(idx - self.base)
                writer.writerow([int(idx), int(self.in_A[k]), repr(float(self.d_bar[k])), int(cum[k]),
                                 repr(env.get(n, float("nan")))])


def _first_quantile_level(values: np.ndarray, target: float = 0.75) -> float:
    """Smallest ``t`` among the values with ``mean(values <= t) > target``."""
    v = np.sort(values)
    k = int(math.floor(target * v.size))
    if k >= v.size:
        raise CalibrationError("not enough samples to exceed the target frequency")
    return float(v[k])


def _s_double_prime(s: float, Qt_prev: float, Ht_prev: float) -> float:
    return 2.0 * s / (s - 1.0) * Qt_prev / (2.0 * Ht_prev) + 1.0 + (s + 1.0) / (s - 1.0)


def contraction_ledger(window: CocycleWindow, H: np.ndarray, logD: np.ndarray, Q: np.ndarray,
                       Q_tilde: np.ndarray, H_tilde: np.ndarray, m: np.ndarray, j: np.ndarray,
                       xi: np.ndarray, disc: Discretization, s: float = 3.0, alpha: float = 1.0,
                       thresholds: tuple[int, int, float] | None = None, base: int | None = None,
                       n_max: int | None = None, samples: int = 16, seed: int = 0,
                       offset: int | None = None) -> ContractionLedger:
    """Diameter bounds, the good set ``A`` and the random contraction envelope.

    Per-fiber arrays (``H, logD, Q, Q_tilde, H_tilde, m, j, xi``) are indexed by
    absolute fiber minus ``offset`` (default: the window start) and must cover
    ``J0`` fibers before and ``M0`` after every ledger index.  ``m`` and ``j``
    hold ``-1`` where unresolved.

    ``d_{J,M}(w) = 4 R_{J,M} + 2 ln D_{w,M} + 2 ln s''_{theta^M w} + 2 s Q~_w`` with
    ``R_{J,M} = 3 sum_{k=-J}^{M} (H + ln D) + 2 s max Q``.  Auto thresholds take
    the smallest ``M0, J0, D0`` whose empirical frequencies exceed 3/4.
    """
    if s <= 2:
        raise ArgumentError("s must exceed 2")
    offset = window.start_offset if offset is None else offset
    n_fib = len(H)
    arrays = [np.asarray(a) for a in (logD, Q, Q_tilde, H_tilde, m, j, xi)]
    if any(a.shape[0] != n_fib for a in arrays):
        raise DimensionError("per-fiber arrays must have equal length")
    H = np.asarray(H, dtype=float)
    logD, Q, Q_tilde, H_tilde, m, j, xi = arrays
    cs = np.concatenate([[0.0], np.cumsum(H + logD)])
    csD = np.concatenate([[0.0], np.cumsum(logD)])

    def d_value(k: int, J: int, M: int) -> float:
        lo, hi = k - J, k + M
        R = 3.0 * (cs[hi + 1] - cs[lo]) + 2.0 * s * float(np.max(Q[lo:hi + 1]))
        ldn = csD[k + M] - csD[k]
        spp = _s_double_prime(s, Q_tilde[k + M - 1], H_tilde[k + M - 1])
        return 4.0 * R + 2.0 * ldn + 2.0 * math.log(spp) + 2.0 * s * Q_tilde[k]

    resolved = np.flatnonzero(m >= 0)
    if resolved.size == 0:
        raise CalibrationError("no resolved covering times on the window")
    if thresholds is None:
        M0 = int(_first_quantile_level(m[resolved].astype(float)))
        M0 = max(M0, 1)
        cand = [k for k in range(n_fib - M0) if m[k] >= 0 and j[k] >= 0 and j[k + M0] >= 0]
        if not cand:
            raise CalibrationError("window too short to calibrate J0")
        J0 = int(_first_quantile_level(np.maximum(j[cand], j[[k + M0 for k in cand]]).astype(float)))
        pool = [k for k in cand if k - J0 >= 0 and k + M0 < n_fib]
        if len(pool) < 4:
            raise CalibrationError("window too short to calibrate D0")
        dvals = np.array([d_value(k, J0, M0) for k in pool])
        D0 = max(_first_quantile_level(dvals) + 1.0, 1.0 + 1e-9)
    else:
        M0, J0, D0 = int(thresholds[0]), int(thresholds[1]), float(thresholds[2])
        if M0 < 1 or J0 < 0 or D0 <= 1:
            raise ArgumentError("thresholds need M0 >= 1, J0 >= 0, D0 > 1")
    # empirical checks of the calibration targets
    resolved_m = m[resolved]
    if np.mean(resolved_m <= M0) <= 0.75 and thresholds is None:
        raise CalibrationError("P(m <= M0) does not exceed 3/4")

    idx = np.array([k for k in range(J0, n_fib - M0) if m[k] >= 0 and j[k] >= 0 and j[k + M0] >= 0],
                   dtype=np.int64)
    if idx.size == 0:
        raise CalibrationError("no index of the window admits the ledger thresholds")
    dbar = np.array([d_value(int(k), J0, M0) for k in idx])
    in_A = (m[idx] <= M0) & (np.maximum(j[idx], j[idx + M0]) <= J0) & (dbar <= D0)
    freq = float(np.mean(in_A))
    c = contraction_exponent(D0)

    # envelope from a base fiber
    base_loc = int(idx[0]) if base is None else int(base - offset)
    if m[base_loc] < 0:
        raise CalibrationError("covering time unresolved at the base fiber")
    mb = int(m[base_loc])
    Jn = max(int(j[base_loc]), int(j[base_loc + mb])) if base_loc + mb < n_fib else -1
    if Jn < 0 or base_loc - Jn < 0:
        raise CalibrationError("reversed covering times unresolved around the base fiber")
    R_n = (3.0 * (cs[base_loc + mb + 1] - cs[base_loc - Jn])
           + s * (Q[base_loc - int(j[base_loc])] + Q[base_loc + mb - int(j[base_loc + mb])]))
    U = (4.0 * R_n + 2.0 * (csD[base_loc + mb] - csD[base_loc])
         + 2.0 * math.log(_s_double_prime(s, Q_tilde[base_loc + mb - 1], H_tilde[base_loc + mb - 1]))
         + 2.0 * s * Q_tilde[base_loc])
    inA_abs = np.zeros(n_fib, dtype=bool)
    inA_abs[idx] = in_A
    n_max = (n_fib - base_loc - 1) if n_max is None else n_max
    counts, envelope = [], []
    for n in range(M0 * mb, n_max + 1):
        top = (n - 1) // M0
        hits = sum(1 for q in range(mb, top + 1)
                   if base_loc + M0 * q < n_fib and inA_abs[base_loc + M0 * q])
        counts.append((n, hits))
        envelope.append((n, U * math.exp(-c * hits)))

    ledger = ContractionLedger(M0, J0, float(D0), c, log_contraction_exponent(D0), idx + offset, m[idx], j[idx], dbar, in_A, freq,
                               base_loc + offset, float(U), counts, envelope)

    # measured contraction of L^{M0} on A-indices, with cones from the window data
    rng_seed = seed
    inside = [int(k) for k in idx[in_A] if window.start_offset <= k + offset and k + offset + M0 <= window.stop]
    for k in inside[:8]:
        start = k + offset
        src = ConeSpec("log-oscillation", disc, s=s, Q=max(Q_tilde[k], 1e-12), alpha=alpha,
                       xi=min(float(xi[k]), 0.5))
        tgt = ConeSpec("log-oscillation", disc, s=s, Q=max(Q_tilde[k + M0], 1e-12), alpha=alpha,
                       xi=min(float(xi[k + M0]), 0.5))
        members = sample_members(src, samples, rng_seed)
        rng_seed += 1
        images = []
        for g in members:
            v = g
            for t in range(M0):
                v = window.op(start + t).entries @ v
            images.append(v)
        factor = 0.0
        for a in range(1, len(members)):
            d0 = hilbert_metric(members[0], members[a], src)
            if d0 == 0:
                continue
            try:
                d1 = hilbert_metric(images[0], images[a], tgt)
            except MembershipError:
                d1 = math.inf
            factor = max(factor, d1 / d0)
        try:
            diam = projective_diameter(images, tgt)
        except DimensionError:
            diam = math.nan
        ledger.measured_factors.append((start, factor, math.tanh(D0)))
        ledger.measured_diameters.append((start, diam, D0))
    return ledger


# ----------------------------------------------------------------------------
# kappa cones

def kappa_zeta(eps0: float, kappa: float = DEFAULT_KAPPA) -> float:
    """``zeta = eps0 / (kappa ((2 kappa + 1)^{-1} - eps0))`` after range checks."""
    if not 0 < kappa < 1:
        raise ArgumentError("kappa must lie in (0, 1)")
    limit = kappa / ((2 * kappa + 1) * (kappa + 1))
    if not 0 < eps0 < 0.17 or eps0 >= limit:
        raise PreconditionError(f"eps0 = {eps0} outside (0, min(0.17, {limit:.5f}))")
    return eps0 / (kappa * (1.0 / (2 * kappa + 1) - eps0))


@dataclass(frozen=True)
class KappaReport:
    kappa: float
    eps0: float
    zeta: float
    premise: float
    premise_holds: bool
    worst_margin: float
    holds: bool


def kappa_invariance_check(ops: Sequence, disc: Discretization, mus: Sequence[np.ndarray], eps0: float,
                           kappa: float = DEFAULT_KAPPA, alpha: float = 1.0, samples: int = 64,
                           seed: int = 0) -> KappaReport:
    """Check ``A_j C_kappa`` inside ``C_{kappa zeta}`` on sampled members.

    ``ops[j]`` maps cell functions on block ``j`` to block ``j + 1`` and
    ``mus[j]`` is the invariant cell measure on the source of ``ops[j]``.
    ``premise`` is the largest sampled ratio ``||A g - mu(g)||_alpha / ||g||_alpha``.
    """
    zeta = kappa_zeta(eps0, kappa)
    cone = ConeSpec("kappa", disc, kappa=kappa, alpha=alpha)
    members = sample_members_kappa(disc, kappa, alpha, samples, seed)
    premise = 0.0
    worst = math.inf
    for op, mu in zip(ops, mus):
        A = op.entries if hasattr(op, "entries") else np.asarray(op)
        for g in members:
            gn = disc.holder_norm(g, alpha, 1.0)
            img = A @ g
            premise = max(premise, disc.holder_norm(img - float(mu @ g), alpha, 1.0) / gn)
            v = disc.holder_seminorm(img, alpha, 1.0)
            bound = kappa * zeta * float(img.min())
            worst = min(worst, (bound - v) / bound if bound > 0 else -math.inf)
    del cone
    return KappaReport(kappa, eps0, zeta, premise, premise <= eps0, worst, worst >= -1e-12)


def sample_members_kappa(disc: Discretization, kappa: float, alpha: float, count: int, seed: int
                         ) -> list[np.ndarray]:
    """Seeded members of the kappa cone on any resolution (no metric needed)."""
    rng = np.random.default_rng(seed)
    K = disc.resolution
    x = disc.centers if disc.scheme == "ulam" else np.arange(K) / K
    out = [np.ones(K)]
    while len(out) < count + 1:
        if disc.scheme == "cylinder":
            noise = rng.normal(size=K)
        else:
            modes = rng.integers(1, 4, size=3)
            noise = sum(c * np.cos(2 * np.pi * (mm * x + p))
                        for c, mm, p in zip(rng.normal(size=3), modes, rng.uniform(size=3)))
        v = disc.holder_seminorm(noise, alpha, 1.0)
        if v == 0:
            continue
        fill = rng.uniform(0.1, 0.95)
        # g = 1 + t noise with v(g) = t v <= fill kappa (1 - t max|noise|)
        t = fill * kappa / (v + fill * kappa * float(np.max(np.abs(noise))))
        out.append(1.0 + t * noise)
    return out


# ----------------------------------------------------------------------------
# sampling functional

def cover_points(disc: Discretization, xi: float) -> np.ndarray:
    """Cell indices of a ``xi``-cover: ``ceil(1/(2 xi))`` equally spaced circle points."""
    if disc.scheme == "cylinder":
        return np.arange(disc.resolution)
    M = max(1, int(math.ceil(1.0 / (2.0 * xi) - 1e-12)))
    pts = (np.arange(M) + 0.5) / M
    return np.minimum((pts * disc.resolution).astype(np.int64), disc.resolution - 1)


def sampling_functional_bound(g, cone: ConeSpec, sample_points, Q_tilde: float | None = None) -> dict:
    """Compare ``||g||_alpha`` with ``K l(g)`` for the point-sampling functional.

    ``K = 3 (e^{s xi^alpha Q~} + s Q~ e^{2 s xi^alpha Q~}) / xi`` and
    ``l(g) = sum_j g(x_j)``.
    """
    pts = np.asarray(sample_points, dtype=np.int64)
    if pts.size == 0:
        raise EmptyRecordError("sampling functional needs at least one point")
    if cone.kind != "log-oscillation":
        raise ArgumentError("sampling bound is stated for the log-oscillation cone")
    g = np.asarray(g, dtype=float)
    Qt = cone.Q if Q_tilde is None else Q_tilde
    s, xi, a = cone.s, cone.xi, cone.alpha
    K = 3.0 * (math.exp(s * xi**a * Qt) + s * Qt * math.exp(2 * s * xi**a * Qt)) / xi
    l = float(np.sum(g[pts]))
    norm = cone.disc.holder_norm(g, a, xi)
    return {"alpha_norm": norm, "K": K, "functional": l, "bound": K * l, "holds": norm <= K * l,
            "margin": (K * l - norm) / (K * l) if l > 0 else -math.inf}
