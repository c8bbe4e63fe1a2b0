"""Contracting blocks, inducing on visit times, and joined-block triplets.

Polynomially mixing operators ``Y_j`` with ``||Y_j^n - mu_j|| <= C1 (1 + j^eps) n^-beta``
are grouped into blocks ``B_j = [N_j, N_j + n_{j+1})`` whose compositions are
``eps0``-close to their rank-one limits.  Applied to the induced operators
``D_j = L_{m_j}^{m_{j+1} - m_j}`` between visits to a good level set this gives
the joined operators ``A_j = L_{l_j}^{l_{j+1} - l_j}`` with ``l_j = m_{N_j}``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .environment import EnvPath, VisitRecord, visiting_times
from .errors import ArgumentError, ConvergenceError, DemandError, DomainError, PreconditionError
from .sampling import birkhoff_samples
from .systems import FiberedSystem, RandomFunction
from .transfer import CocycleWindow, Discretization, compose, test_family

__all__ = [
    "BlockSchedule",
    "InducedIndex",
    "FittedConstants",
    "BlockCocycle",
    "BlockTriplet",
    "build_schedule",
    "visits_for_window",
    "fit_constants",
    "induce",
    "block_triplet",
    "twist_radius",
    "moment_bound_check",
    "approximation_check",
]


# ----------------------------------------------------------------------------
# schedule

def _floor_root(target: float, beta: float) -> int:
    """``floor(target ** (1 / beta))`` corrected against round-off in the root."""
    try:
        n = int(math.floor(target ** (1.0 / beta)))
    except OverflowError as exc:
        raise DomainError("block sizes exceed the floating-point range; lower j_max") from exc
    if n > 2**52:
        # beyond the float mantissa the root is only known to relative round-off
        return n
    while (n + 1) ** beta <= target:
        n += 1
    while n > 0 and n**beta > target:
        n -= 1
    return n


@dataclass(frozen=True)
class BlockSchedule:
    """Block sizes ``n_1, n_2, ...`` and their partial sums ``N_0 = 0, N_1, ...``.

    ``n_sizes[j]`` is ``n_{j+1} = |B_j|`` and ``cum[j]`` is ``N_j``; ``cum`` has
    one more entry than ``n_sizes``.
    """

    C1: float
    beta: float
    eps: float
    eps0: float
    u0: float
    n_sizes: np.ndarray
    cum: np.ndarray
    constants: dict
    sandwich: np.ndarray
    size_sandwich: np.ndarray

    @property
    def j_max(self) -> int:
        return int(self.n_sizes.size) - 1

    def block(self, j: int) -> tuple[int, int]:
        """Half-open range ``[N_j, N_{j+1})`` of block ``B_j``."""
        return int(self.cum[j]), int(self.cum[j + 1])

    @property
    def sandwich_holds(self) -> bool:
        return bool(np.all(self.sandwich) and np.all(self.size_sandwich))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["j", "N_j", "block_size", "sandwich", "size_sandwich"])
            for j in range(self.n_sizes.size):
                writer.writerow([j, int(self.cum[j]), int(self.n_sizes[j]),
                                 bool(self.sandwich[j]), bool(self.size_sandwich[j])])


def build_schedule(C1: float, beta: float, eps: float, eps0: float = 0.1, j_max: int = 64) -> BlockSchedule:
    """Contracting-block schedule with both growth sandwiches checked for ``1 <= j <= j_max``.

    Raises
    ------
    DomainError
        If ``eps >= beta``: the block sizes would grow at least linearly in
        ``N_j`` and the schedule diverges.
    """
    if eps >= beta:
        raise DomainError(f"eps = {eps} >= beta = {beta}: the block schedule diverges")
    if C1 < 1 or beta <= 0 or eps < 0:
        raise ArgumentError("need C1 >= 1, beta > 0 and eps >= 0")
    if not 0 < eps0 < 0.17:
        raise ArgumentError("eps0 must lie in (0, 0.17)")
    if j_max < 1:
        raise ArgumentError("j_max must be at least 1")
    u0 = 2.0 / eps0 + 1.0
    base = u0 * C1
    sizes, cum = [], [0]
    for j in range(j_max + 1):
        n = _floor_root(base, beta) if j == 0 else _floor_root(base * float(cum[j]) ** eps, beta)
        if n < 1:
            raise DomainError("empty block: (u0 C1)^(1/beta) < 1")
        sizes.append(n)
        cum.append(cum[j] + n)
    # fast-growing schedules leave int64; Python integers keep the recursion exact
    dtype = np.int64 if cum[-1] < 2**62 else object
    sizes = np.array(sizes, dtype=dtype)
    cum = np.array(cum, dtype=dtype)

    C4 = base ** (1.0 / beta)
    C3 = C4 - 1.0
    p = beta / (beta - eps)
    A1 = 0.5 * ((beta - eps) / beta) ** p * C3
    A2 = C4**p
    A1p = C3 * A1 ** (eps / beta)
    A2p = C4 * A2 ** (eps / beta)
    j = np.arange(j_max + 1, dtype=float)
    # a relative slack of 1e-12 absorbs rounding in the real-valued envelopes
    N = cum[:-1].astype(float)
    sandwich = (A1 * j**p <= N * (1 + 1e-12)) & (N <= A2 * j**p * (1 + 1e-12))
    q = eps / (beta - eps)
    size_sandwich = np.ones(j_max + 1, dtype=bool)
    nf = sizes.astype(float)
    size_sandwich[1:] = ((A1p * j[1:] ** q <= nf[1:] * (1 + 1e-12))
                         & (nf[1:] <= A2p * j[1:] ** q * (1 + 1e-12)))
    constants = {"C3": C3, "C4": C4, "A1": A1, "A2": A2, "A1_prime": A1p, "A2_prime": A2p}
    return BlockSchedule(float(C1), float(beta), float(eps), float(eps0), u0, sizes, cum, constants,
                         sandwich, size_sandwich)


# ----------------------------------------------------------------------------
# fitted environment constants

def _envelope_exponent(k: np.ndarray, values: np.ndarray, floor: float = 0.0) -> float:
    """Least-squares log-log slope of the running maximum, clipped below at ``floor``."""
    pos = values > 0
    if pos.sum() < 3:
        return floor
    run = np.maximum.accumulate(values[pos])
    slope = np.polyfit(np.log(k[pos]), np.log(run), 1)[0]
    return max(float(slope), floor)


@dataclass
class FittedConstants:
    """Pathwise growth constants fitted on one window.

    Attributes
    ----------
    E2, eta0 : float
        ``m_k <= E2 k^{1 + eta0}``.
    E3, delta : float
        ``m_{k+1} - m_k <= E3 k^delta`` with ``E3 >= 1``.
    E4, a : float
        ``||f_l||_alpha <= E4 l^a``.
    E6, kappa, a0 : float
        ``prod_{k=s}^{s+d-1} gamma_k^{-alpha} <= E6 s^kappa d^{-a0}``.
    E8, a1 : float
        ``xi_j^{-1} <= E8 j^{a1}``.
    E0D : float
        ``sup ||D_j^n - mu|| n^beta / (1 + j^eps_bar)`` over sampled starts.
    fit_log : dict
        Raw regression slopes for the record.
    """

    E2: float
    eta0: float
    E3: float
    delta: float
    E4: float
    a: float
    E6: float
    kappa: float
    a0: float
    E8: float
    a1: float
    E0D: float
    fit_log: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def fit_constants(visits: VisitRecord, f_norms: Sequence[float], gammas: Sequence[float],
                  xis: Sequence[float], alpha: float = 1.0, kappa: float = 0.5, a0: float = 2.0,
                  eta0_floor: float = 0.01, E0D: float = 1.0, d_max: int = 256) -> FittedConstants:
    """Fit the growth constants of the visit sequence, observable norms and expansion.

    ``f_norms``, ``gammas`` and ``xis`` are indexed by local position from the
    origin ``m_0 = 0``.  Exponents come from log-log regressions of running
    maxima (clipped at their admissible floors); each constant is then the
    exact supremum of the ratio over the observed range.
    """
    m = visits.visit_indices.astype(float)
    if m.size < 3:
        raise PreconditionError("at least three visits are needed to fit growth constants")
    k = np.arange(1, m.size + 1, dtype=float)
    slope_m = _envelope_exponent(k, m)
    eta0 = max(slope_m - 1.0, eta0_floor)
    E2 = float(np.max(m / k ** (1.0 + eta0)))

    gaps = np.diff(np.concatenate([[0.0], m]))
    delta = _envelope_exponent(k, gaps)
    E3 = max(1.0, float(np.max(gaps / k**delta)))

    fn = np.asarray(f_norms, dtype=float)
    ell = np.arange(1, fn.size, dtype=float)
    a = _envelope_exponent(ell, fn[1:]) if fn.size > 3 else 0.0
    # a finite state space keeps the norms bounded; drift from noise is dropped
    if fn.size > 3 and np.max(fn[1:]) <= np.max(fn[1: 1 + max(1, fn.size // 2)]):
        a = 0.0
    E4 = float(np.max(fn[1:] / ell**a)) if fn.size > 1 else float(fn[0])

    lg = alpha * np.log(np.asarray(gammas, dtype=float))
    cs = np.concatenate([[0.0], np.cumsum(lg)])
    S = lg.size
    best = -math.inf
    for d in range(1, min(d_max, S - 1) + 1):
        s = np.arange(1, S - d + 1)
        vals = -(cs[s + d] - cs[s]) + a0 * math.log(d) - kappa * np.log(s)
        best = max(best, float(np.max(vals)))
    E6 = math.exp(best)

    E8 = float(np.max(1.0 / np.asarray(xis, dtype=float)))
    log = {"visit_slope": slope_m, "gap_slope": delta, "norm_slope": a}
    return FittedConstants(E2, eta0, E3, delta, E4, a, E6, kappa, a0, E8, 0.0, E0D, log)


# ----------------------------------------------------------------------------
# inducing

@dataclass
class InducedIndex:
    """Joined-block indices ``l_j = m_{N_j}`` and the counting function ``L_n``.

    Attributes
    ----------
    visits : VisitRecord
        Visit times relative to the origin fiber.
    origin : int
        Absolute fiber of ``m_0 = 0``.
    ell : ndarray
        ``l_0 = 0 < l_1 < ...`` for every block covered by the visits.
    constants : dict
        Gap constants ``Q1, Q2, Q3, D3, D4`` and the exponent ``eta``.
    gap_ok, tail_ok, L_bounds_ok : bool
        ``L_{k+1} - L_k <= 2``, ``n - l_{L_n} <= D3 n^{(eps + delta beta)/beta}``
        and both growth bounds on ``L_n``, over ``1 <= n < l_last``.
    """

    visits: VisitRecord
    origin: int
    ell: np.ndarray
    constants: dict
    gap_ok: bool
    tail_ok: bool
    L_bounds_ok: bool

    def L_of_n(self, n) -> np.ndarray:
        """``max{k : l_k <= n}``."""
        return np.searchsorted(self.ell, np.asarray(n), side="right") - 1

    @property
    def blocks(self) -> int:
        return int(self.ell.size) - 1

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["j", "ell_j", "absolute_fiber"])
            for j, l in enumerate(self.ell):
                writer.writerow([j, int(l), int(l) + self.origin])


@dataclass
class BlockCocycle:
    """Joined operators over a window together with their contraction check.

    Attributes
    ----------
    window : CocycleWindow
        Normalized base window (measures and observables carried along).
    schedule : BlockSchedule
    induced : InducedIndex
    plain : list of scipy.sparse matrices
        ``A_j`` for every covered block.
    induced_ops : list of scipy.sparse matrices
        ``D_j`` between consecutive visits.
    decay : list of (j, n, value, bound)
        ``sup_g ||A_j^n g - mu(g)||_alpha / ||g||_alpha`` against ``eps0^n``.
    contraction_holds : bool
    """

    window: CocycleWindow
    schedule: BlockSchedule
    induced: InducedIndex
    plain: list
    induced_ops: list
    decay: list
    contraction_holds: bool
    disc: Discretization | None = None
    alpha: float = 1.0

    def fiber(self, j: int) -> int:
        """Absolute fiber of ``l_j``."""
        return self.induced.origin + int(self.induced.ell[j])

    def block_length(self, j: int) -> int:
        return int(self.induced.ell[j + 1] - self.induced.ell[j])

    def joined(self, j: int, z: complex = 0.0, J: int | None = None, window: CocycleWindow | None = None):
        """``A_{J, j, z}``: twisted by ``z`` when ``j <= J``, plain after."""
        base = self.window if window is None else window
        if (z == 0 or (J is not None and j > J)) and window is None:
            return self.plain[j]
        src = base.twisted(z) if (z != 0 and (J is None or j <= J)) else base
        return compose(src, self.fiber(j), self.block_length(j)).entries

    def block_sums(self, j: int) -> float:
        """``sum_k ||f_k||_inf`` over block ``j``, an upper bound for ``||U_j||_inf``."""
        lo = self.fiber(j)
        return float(sum(np.max(np.abs(self.window.observable(lo + k))) for k in range(self.block_length(j))))

    def block_mean(self, j: int) -> float:
        """``sum_k mu_k(f_k)`` over block ``j``; the derivative of ``lambda_j(z)`` at 0."""
        lo = self.fiber(j)
        return float(sum(np.real(self.window.measure(lo + k) @ self.window.observable(lo + k))
                         for k in range(self.block_length(j))))


def visits_for_window(path: EnvPath, window: CocycleWindow, level_set, level_set_id: str = "A") -> VisitRecord:
    """Visit record whose ``m_0 = 0`` is the first fiber of ``window``."""
    states = path.window(window.start_offset, len(window) + 1)
    return visiting_times(EnvPath(window.start_offset, states), level_set, level_set_id)


def _norm(v, disc: Discretization | None, alpha: float) -> float:
    if disc is None:
        return float(np.max(np.abs(v)) + np.max(np.abs(np.diff(v)), initial=0.0))
    return disc.holder_norm(v, alpha, 1.0)


def _lemma_constants(schedule: BlockSchedule, fit: FittedConstants | None) -> dict:
    b, e = schedule.beta, schedule.eps
    A1, A2, A2p = (schedule.constants[k] for k in ("A1", "A2", "A2_prime"))
    out = {}
    if fit is None:
        return out
    eta0, delta = fit.eta0, fit.delta
    Q1 = 0.5 * fit.E2 ** (-1.0 / (1.0 + eta0)) * A2 ** (-(b - e) / b)
    Q2 = A1 ** (-(b - e) / b)
    expo = (e + delta * b) / (b - e)
    Q3 = 2.0**expo * fit.E3 * A2p * A2**delta
    D3 = Q3 * Q2**expo
    out.update(Q1=Q1, Q2=Q2, Q3=Q3, D3=D3, D4=D3 * fit.E4, eta=(fit.a * b + e + delta * b) / b)
    return out


def induce(window: CocycleWindow, visits: VisitRecord, schedule: BlockSchedule,
           fit: FittedConstants | None = None, disc: Discretization | None = None, alpha: float = 1.0,
           check_n: int = 5, tests: Sequence[np.ndarray] | None = None,
           check_blocks: int | None = None) -> BlockCocycle:
    """Join the normalized cocycle over the contracting blocks of the visit sequence.

    Parameters
    ----------
    window : CocycleWindow
        Normalized window whose first fiber is the origin ``m_0 = 0``.
    visits : VisitRecord
        Visits relative to the window start (see :func:`visits_for_window`).
    fit : FittedConstants, optional
        Enables the gap constants ``Q1..D4``.
    check_n : int
        Largest power ``n`` in the ``eps0^n`` contraction check.
    check_blocks : int, optional
        Number of leading blocks checked (all by default).

    Raises
    ------
    DemandError
        If the visits do not reach ``m_{N_1}`` inside the window.
    """
    if window.measures is None:
        raise ArgumentError("induce needs a normalized window with invariant measures")
    origin = window.start_offset
    covered = [j for j in range(schedule.cum.size) if schedule.cum[j] <= visits.count]
    ell = np.array([0 if j == 0 else visits.m(int(schedule.cum[j])) for j in covered], dtype=np.int64)
    ell = ell[ell <= len(window)]
    if ell.size < 2:
        need = schedule.cum[1]
        raise DemandError(f"the schedule needs {need} visits before the first block closes; "
                          f"the window of {len(window)} operators has {visits.count}")

    m_all = np.concatenate([[0], visits.visit_indices[visits.visit_indices <= ell[-1]]])
    D_ops = [compose(window, origin + int(a), int(b - a)).entries for a, b in zip(m_all, m_all[1:])]
    A_ops = []
    for j in range(ell.size - 1):
        lo, hi = int(schedule.cum[j]), int(schedule.cum[j + 1])
        prod = D_ops[lo]
        for op in D_ops[lo + 1:hi]:
            prod = (op @ prod).tocsr()
        A_ops.append(prod)

    consts = _lemma_constants(schedule, fit)
    n_range = np.arange(1, int(ell[-1]))
    L = np.searchsorted(ell, n_range, side="right") - 1
    Lk = np.searchsorted(ell, np.arange(0, int(ell[-1]) + 1), side="right") - 1
    gap_ok = bool(np.all(np.diff(Lk) <= 2))
    tail_ok = L_ok = True
    if consts:
        b, e = schedule.beta, schedule.eps
        tail = n_range - ell[L]
        tail_ok = bool(np.all(tail <= consts["D3"] * n_range ** ((e + fit.delta * b) / b) * (1 + 1e-12)))
        upper = consts["Q2"] * n_range ** ((b - e) / b)
        lower = consts["Q1"] * n_range ** ((b - e) / (b * (1 + fit.eta0))) - 1
        L_ok = bool(np.all((lower <= L) & (L <= upper * (1 + 1e-12))))
    index = InducedIndex(visits, origin, ell, consts, gap_ok, tail_ok, L_ok)

    tests = test_family(disc) if (tests is None and disc is not None) else tests
    decay = []
    holds = True
    if tests is not None:
        last = len(A_ops) if check_blocks is None else min(check_blocks, len(A_ops))
        for j in range(last):
            for n in range(1, check_n + 1):
                if j + n > len(A_ops):
                    break
                src = origin + int(ell[j])
                worst = 0.0
                for g in tests:
                    gn = _norm(g, disc, alpha)
                    v = g
                    for i in range(n):
                        v = A_ops[j + i] @ v
                    v = v - float(window.measure(src) @ g)
                    worst = max(worst, _norm(v, disc, alpha) / gn)
                bound = schedule.eps0**n
                decay.append((j, n, worst, bound))
                holds &= worst <= bound
    return BlockCocycle(window, schedule, index, A_ops, D_ops, decay, bool(holds), disc, alpha)


# ----------------------------------------------------------------------------
# joined-block triplets

@dataclass
class BlockTriplet:
    """Sequential triplets ``(lambda_{J,j}(z), h_j^z, nu_j^z)`` over blocks.

    Attributes
    ----------
    z_grid : list of complex
        Twists in continuation order.
    lambdas : dict
        ``z -> array of lambda_j(z)``.
    h, nu : dict
        ``z -> list of vectors`` on the fibers ``l_0, ..., l_B``.
    residuals : dict
        ``z -> {"nu_one", "nu_h", "eigen", "dual"}`` worst residuals.
    decay : dict
        ``z -> list of (n, value)`` for ``||lambda^{-n} A^n g - nu(g) h||_alpha / ||g||_alpha``.
    ratio, R0 : dict
        Fitted geometric ratio and prefactor of the decay per ``z``.
    radius : float
        ``delta_J``, the radius of the admissible twist disc.
    constants : dict
        Measured ``E5``, ``E7``, ``E9`` and the exponents used for the radius.
    anchor_gap : dict
        ``z -> max |lambda_j(z) - lambda_j^cold(z)|`` over interior blocks,
        the sensitivity to the warm-start anchors.
    """

    J: int
    z_grid: list
    lambdas: dict
    h: dict
    nu: dict
    residuals: dict
    decay: dict
    ratio: dict
    R0: dict
    radius: float
    constants: dict
    anchor_gap: dict

    def to_json(self) -> str:
        def key(z):
            return f"{complex(z).real!r}{complex(z).imag:+.17g}j"
        return json.dumps({
            "J": self.J,
            "radius": self.radius,
            "constants": self.constants,
            "lambdas": {key(z): [[complex(v).real, complex(v).imag] for v in self.lambdas[z]] for z in self.z_grid},
            "residuals": {key(z): self.residuals[z] for z in self.z_grid},
            "ratio": {key(z): self.ratio[z] for z in self.z_grid},
            "R0": {key(z): self.R0[z] for z in self.z_grid},
            "anchor_gap": {key(z): self.anchor_gap[z] for z in self.z_grid},
        }, indent=2)


def twist_radius(cocycle: BlockCocycle, fit: FittedConstants, J: int, scale: float = 1.0,
                 C_prime: float = 1.0, C_double_prime: float = 1.0) -> tuple[float, dict]:
    """Radius ``delta_J`` of the twist disc ``V_J`` from measured constants.

    ``E5`` is the supremum of ``||U_j||_inf (j+1)^{-zeta1}`` over the covered
    blocks; ``E7`` and ``E9`` follow the assembly of the perturbation estimate.
    """
    b, e = cocycle.schedule.beta, cocycle.schedule.eps
    A2 = cocycle.schedule.constants["A2"]
    a, eta0, delta, kap = fit.a, fit.eta0, fit.delta, fit.kappa
    zeta1 = (b * (a * (1 + eta0) + delta) + e) / (b - e)
    zeta2 = (a + kap) * b * (1 + eta0) / (b - e)
    B = cocycle.induced.blocks
    E5 = max(cocycle.block_sums(j) / (j + 1) ** zeta1 for j in range(B))
    E7 = fit.E4 * fit.E6 * fit.E2 ** (kap + a) * A2 ** ((kap + a) * (1 + eta0))
    E9 = 6.0 * 2.0 ** (fit.a1 * b / (b - e)) * fit.E8 * fit.E2 * A2 * (E5 + C_double_prime * E5 * E7 + E7)
    # a vanishing observable leaves the twist unconstrained
    inv = min(1.0 / E5 if E5 > 0 else math.inf, 1.0 / E9 if E9 > 0 else math.inf)
    radius = scale * cocycle.schedule.eps0 / C_prime * inv * (J + 1) ** (-zeta1 - zeta2)
    return radius, {"E5": E5, "E7": E7, "E9": E9, "zeta1": zeta1, "zeta2": zeta2,
                    "E5_formula": _lemma_constants(cocycle.schedule, fit).get("Q3", 0.0) * fit.E4
                    * fit.E2**a * A2 ** (a * (1 + eta0))}


def _sweep(ops: list, h_anchor: np.ndarray, nu_anchor: np.ndarray):
    B = len(ops)
    nus = [None] * (B + 1)
    nus[B] = nu_anchor / nu_anchor.sum()
    lams = np.empty(B, dtype=complex)
    for j in range(B - 1, -1, -1):
        pulled = ops[j].T @ nus[j + 1]
        lams[j] = pulled.sum()
        if lams[j] == 0:
            raise ConvergenceError("joined operator annihilates the eigenmeasure", [])
        nus[j] = pulled / lams[j]
    hs = [None] * (B + 1)
    hs[0] = h_anchor / (nus[0] @ h_anchor)
    for j in range(B):
        hs[j + 1] = (ops[j] @ hs[j]) / lams[j]
    return lams, hs, nus


def block_triplet(cocycle: BlockCocycle, J: int, z_grid: Sequence[complex], fit: FittedConstants | None = None,
                  window: CocycleWindow | None = None, decay_n: int = 8, radius: float | None = None,
                  tests: Sequence[np.ndarray] | None = None, enforce_radius: bool = True) -> BlockTriplet:
    """Continue the joined-block triplet from ``z = 0`` along ``z_grid``.

    For each twist the eigenmeasure is pushed back from the last covered
    block and the eigenfunction pushed forward from block 0, with both
    anchors taken from the previous grid point (warm starts):

        nu_j = A_j^* nu_{j+1} / lambda_j,  lambda_j = nu_{j+1}(A_j 1),
        h_{j+1} = A_j h_j / lambda_j,      nu_0(h_0) = 1.

    Parameters
    ----------
    window : CocycleWindow, optional
        Replace the normalized base operators (e.g. by the raw cocycle for a
        comparison with its triplet).
    radius : float, optional
        ``delta_J``; computed from ``fit`` when omitted.

    Raises
    ------
    DomainError
        If a grid point lies outside the twist disc ``|z| <= delta_J``.
    """
    consts = {}
    if radius is None:
        if fit is None:
            raise ArgumentError("either a radius or fitted constants are needed")
        radius, consts = twist_radius(cocycle, fit, J)
    zs = sorted((complex(z) for z in z_grid), key=lambda z: (abs(z), z.real, z.imag))
    if enforce_radius:
        for z in zs:
            if abs(z) > radius * (1 + 1e-12):
                raise DomainError(f"|z| = {abs(z):.3e} exceeds the twist radius {radius:.3e}")
    B = cocycle.induced.blocks
    base = cocycle.window if window is None else window
    d0 = base.dim(cocycle.fiber(0))
    dB = base.dim(cocycle.fiber(B))
    h_anchor = np.ones(d0, dtype=complex)
    nu_anchor = (np.asarray(base.measure(cocycle.fiber(B)), dtype=complex) if base.measures is not None
                 else np.full(dB, 1.0 / dB, dtype=complex))
    nu_cold = nu_anchor.copy()
    disc, alpha = cocycle.disc, cocycle.alpha
    if tests is None and disc is not None:
        tests = test_family(disc)

    lambdas, hs_out, nus_out, residuals, decays, ratios, R0s, gaps = {}, {}, {}, {}, {}, {}, {}, {}
    for z in zs:
        ops = [cocycle.joined(j, z, J, window) for j in range(B)]
        lams, hs, nus = _sweep(ops, h_anchor, nu_anchor)
        cold, _, _ = _sweep(ops, np.ones(d0, dtype=complex), nu_cold)
        inner = slice(B // 4, max(B // 4 + 1, B - B // 4))
        gaps[z] = float(np.max(np.abs(lams[inner] - cold[inner])))
        res = {
            "nu_one": float(max(abs(nu.sum() - 1.0) for nu in nus)),
            "nu_h": float(max(abs(nu @ h - 1.0) for nu, h in zip(nus, hs))),
            "eigen": float(max(np.max(np.abs(ops[j] @ hs[j] - lams[j] * hs[j + 1])) for j in range(B))),
            "dual": float(max(np.abs(ops[j].T @ nus[j + 1] - lams[j] * nus[j]).sum() for j in range(B))),
        }
        table = []
        if tests is not None:
            n_top = min(decay_n, B)
            for n in range(1, n_top + 1):
                worst = 0.0
                for g in tests:
                    gn = _norm(g, disc, alpha)
                    v = np.asarray(g, dtype=complex)
                    for i in range(n):
                        v = ops[i] @ v / lams[i]
                    v = v - (nus[0] @ g) * hs[n]
                    worst = max(worst, _norm(v, disc, alpha) / gn)
                table.append((n, worst))
        ratio, R0 = _geometric_fit(table)
        lambdas[z], hs_out[z], nus_out[z] = lams, hs, nus
        residuals[z], decays[z], ratios[z], R0s[z] = res, table, ratio, R0
        h_anchor, nu_anchor = hs[0], nus[B]
    return BlockTriplet(J, zs, lambdas, hs_out, nus_out, residuals, decays, ratios, R0s, float(radius),
                        consts, gaps)


def _geometric_fit(table, floor: float = 1e-11) -> tuple[float, float]:
    """Ratio ``r`` and prefactor ``R0 = max value / r^n`` from a log-linear fit.

    Only the leading run of values above ``floor`` enters the fit; later
    entries are round-off.  With a single usable point the ratio is that
    one-block contraction itself.
    """
    pts = []
    for n, v in table:
        if v <= floor:
            break
        pts.append((n, v))
    if len(pts) < 2:
        if pts:
            return float(pts[0][1]), 1.0
        return 0.0, 0.0
    n = np.array([p[0] for p in pts], dtype=float)
    y = np.log([p[1] for p in pts])
    slope = float(np.polyfit(n, y, 1)[0])
    r = math.exp(slope)
    R0 = float(np.max(np.exp(y) / r**n))
    return r, R0


# ----------------------------------------------------------------------------
# moment bounds

def _l15_constants(cocycle: BlockCocycle, fit: FittedConstants, radius_consts: dict) -> dict:
    b, e = cocycle.schedule.beta, cocycle.schedule.eps
    A2 = cocycle.schedule.constants["A2"]
    lem = _lemma_constants(cocycle.schedule, fit)
    a, eta0 = fit.a, fit.eta0
    E5 = radius_consts["E5"]
    zeta1 = radius_consts["zeta1"]
    E10 = fit.E0D * fit.E4 * (fit.E2 * A2) ** ((a + e) * (1 + eta0))
    E11 = lem["Q2"] * (fit.E2 * A2) ** ((b - e) / b)
    expo = b * (e + a) * (1 + eta0) / (b - e)
    zeta = max(expo, zeta1)
    E12 = (fit.E4 * lem["Q3"] * lem["Q2"] ** ((e + fit.delta * b) / (b - e))
           + lem["Q2"] ** zeta * (E5 + E10) + E10 * (E11 * lem["Q2"]) ** expo)
    return {"E10": E10, "E11": E11, "E12": E12, "zeta": zeta}


def moment_bound_check(cocycle: BlockCocycle, fit: FittedConstants, system: FiberedSystem, path: EnvPath,
                       f: RandomFunction, j: int, n: int, p: float, samples: int = 20000, seed: int = 0,
                       C: float | None = None, method: str = "auto") -> dict:
    """Monte Carlo ``||S_{j,n} f - mu_j(S_{j,n} f)||_{L^p(mu_j)}`` against ``C E12 (j+n)^zeta n^{1/2}``.

    ``j`` is a local position from the origin.  ``C`` defaults to the
    Burkholder constant ``p - 1``.  A relative standard error of the
    ``p``-th moment above 20% is reported as ``unstable`` rather than raised.
    """
    if p <= 2:
        raise ArgumentError("p must exceed 2")
    _, rc = twist_radius(cocycle, fit, 0)
    lc = _l15_constants(cocycle, fit, rc)
    C = p - 1.0 if C is None else C
    start = cocycle.induced.origin + j
    S = birkhoff_samples(system, path, cocycle.window, f, start, n, samples, seed, method=method)[n]
    dev = np.abs(S - S.mean()) ** p
    moment = float(dev.mean())
    lhs = moment ** (1.0 / p)
    rel_se = float(dev.std(ddof=1) / math.sqrt(samples) / moment) if moment > 0 else 0.0
    rhs = C * lc["E12"] * (j + n) ** lc["zeta"] * math.sqrt(n)
    return {"lhs": lhs, "rhs": rhs, "holds": lhs <= rhs, "unstable": rel_se > 0.2, "rel_se": rel_se, **lc}


def approximation_check(cocycle: BlockCocycle, fit: FittedConstants, system: FiberedSystem, path: EnvPath,
                        f: RandomFunction, n_grid: Sequence[int], p: float = 4.0, samples: int = 20000,
                        seed: int = 0, method: str = "auto") -> dict:
    """Distance between self-normalized ``S_n f`` and ``S_{l_{L_n}} f`` in ``L^p``.

    The empirical log-log slope is compared with the exponent
    ``eta + zeta - 1/2``; the check passes when the slope does not exceed it
    by more than 25% of its magnitude.
    """
    n_grid = sorted(int(n) for n in n_grid)
    n_top = n_grid[-1]
    if n_top > cocycle.induced.ell[-1]:
        raise DemandError(f"n = {n_top} exceeds the last joined index {int(cocycle.induced.ell[-1])}")
    cut = {n: int(cocycle.induced.ell[cocycle.induced.L_of_n(n)]) for n in n_grid}
    record = sorted(set(n_grid) | set(v for v in cut.values() if v > 0))
    S = birkhoff_samples(system, path, cocycle.window, f, cocycle.induced.origin, n_top, samples, seed,
                         record=record, method=method)
    rows = []
    for n in n_grid:
        a = S[n] - S[n].mean()
        a = a / math.sqrt(float(np.mean(a**2)))
        if cut[n] == 0:
            b = np.zeros_like(a)
        else:
            b = S[cut[n]] - S[cut[n]].mean()
            b = b / math.sqrt(float(np.mean(b**2)))
        rows.append((n, float(np.mean(np.abs(a - b) ** p) ** (1.0 / p))))
    _, rc = twist_radius(cocycle, fit, 0)
    lc = _l15_constants(cocycle, fit, rc)
    eta = _lemma_constants(cocycle.schedule, fit)["eta"]
    predicted = eta + lc["zeta"] - 0.5
    pos = [(n, v) for n, v in rows if v > 0]
    slope = float(np.polyfit(np.log([r[0] for r in pos]), np.log([r[1] for r in pos]), 1)[0]) if len(pos) >= 2 \
        else float("-inf")
    return {"table": rows, "slope": slope, "predicted": predicted,
            "holds": slope <= predicted + 0.25 * abs(predicted)}
