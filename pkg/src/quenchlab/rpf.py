"""Random Gibbs triplets ``(lambda, h, nu)``, normalized potentials and decay rates.

The triplet is computed on a window of operators ``L_{s}, ..., L_{s+W-1}``.
The eigenfunction at the first reported fiber is the sup-normalized pullback
of ``1`` from the window start, the eigenmeasure at the last reported fiber is
the pushed-back uniform law from the window end, and the intermediate fibers
are filled by the exact recursions

    nu_k = L_k^* nu_{k+1} / lambda_k,  lambda_k = nu_{k+1}(L_k 1),
    h_{k+1} = L_k h_k / lambda_k.

Accuracy is governed by how well the two ends have converged, which is
measured by the Hilbert projective distance between successive pullbacks.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .environment import EnvPath
from .errors import ArgumentError, ConvergenceError, WindowError
from .systems import FiberedSystem, RandomFunction, backward_series, path_geometry, _envelope_ratio
from .transfer import CocycleWindow, Discretization, build_window, normalize, propagate

__all__ = [
    "RPFTriplet",
    "NormalizedPotential",
    "DecayReport",
    "hilbert_distance_positive",
    "solve_triplet",
    "normalized_window",
    "normalized_cocycle",
    "lambda_bounds",
    "h_bounds",
    "q_values",
    "normalized_potential",
    "equivariance_residual",
    "decay_rate",
]


def hilbert_distance_positive(u, v) -> float:
    """Hilbert projective distance between two positive vectors."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(u <= 0) or np.any(v <= 0):
        return math.inf
    r = np.log(u) - np.log(v)
    return float(r.max() - r.min())


@dataclass
class RPFTriplet:
    """Triplet on fibers ``start, ..., start + len(lambdas)``.

    Attributes
    ----------
    start : int
        Absolute index of the first reported fiber.
    lambdas : ndarray
        ``lambda_k`` for ``k = start .. start + n - 1``.
    h, nu : list of ndarray
        Eigenfunctions (cell values) and eigenmeasures (cell masses) for the
        ``n + 1`` fibers ``start .. start + n``.
    eigen_residual, dual_residual, normalization_residual : ndarray
        ``||L h_k - lambda_k h_{k+1}||_inf``, ``||L^* nu_{k+1} - lambda_k nu_k||_1``
        and ``|nu_k(h_k) - 1|``.
    trace : list of (int, float)
        ``(depth, Hilbert distance)`` of successive pullbacks; the last value
        bounds the projective error of ``h`` at the first fiber.
    dual_trace : list of (int, float)
        Same for the eigenmeasure pushed back from the window end.
    """

    start: int
    lambdas: np.ndarray
    h: list
    nu: list
    eigen_residual: np.ndarray
    dual_residual: np.ndarray
    normalization_residual: np.ndarray
    trace: list = field(default_factory=list)
    dual_trace: list = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.lambdas.size)

    @property
    def stop(self) -> int:
        return self.start + len(self)

    def _k(self, fiber: int) -> int:
        k = fiber - self.start
        if not 0 <= k <= len(self):
            raise WindowError(f"fiber {fiber} outside the triplet range")
        return k

    def lam(self, index: int) -> float:
        k = index - self.start
        if not 0 <= k < len(self):
            raise WindowError(f"operator {index} outside the triplet range")
        return float(self.lambdas[k])

    def h_at(self, fiber: int) -> np.ndarray:
        return self.h[self._k(fiber)]

    def nu_at(self, fiber: int) -> np.ndarray:
        return self.nu[self._k(fiber)]

    def mu_at(self, fiber: int) -> np.ndarray:
        k = self._k(fiber)
        return self.h[k] * self.nu[k]

    def to_json(self) -> str:
        return json.dumps({
            "start": self.start,
            "lambdas": [float(x) for x in self.lambdas],
            "eigen_residual": float(np.max(self.eigen_residual, initial=0.0)),
            "dual_residual": float(np.max(self.dual_residual, initial=0.0)),
            "normalization_residual": float(np.max(self.normalization_residual, initial=0.0)),
            "trace": [[int(n), float(d)] for n, d in self.trace],
            "dual_trace": [[int(n), float(d)] for n, d in self.dual_trace],
        }, indent=2)


def _checkpoints(depth: int) -> list[int]:
    pts, n = [], 1
    while n < depth:
        pts.append(n)
        n *= 2
    pts.append(depth)
    return pts


def _pullback(window: CocycleWindow, target: int, depth: int) -> np.ndarray:
    """Sup-normalized ``L^depth 1`` arriving at fiber ``target``."""
    v = np.ones(window.dim(target - depth))
    for k in range(target - depth, target):
        v = window.op(k).entries @ v
        v = v / np.max(v)
    return v


def _pushback(window: CocycleWindow, target: int, depth: int) -> np.ndarray:
    """Normalized ``(L^*)^depth`` of the uniform law, arriving at fiber ``target``."""
    d = window.dim(target + depth)
    v = np.full(d, 1.0 / d)
    for k in range(target + depth - 1, target - 1, -1):
        v = window.op(k).entries.T @ v
        v = v / v.sum()
    return v


def solve_triplet(window: CocycleWindow, burn_in: int, tol: float = 1e-10) -> RPFTriplet:
    """Random RPF triplet on the interior ``[start + burn_in, stop - burn_in]`` of a window.

    Parameters
    ----------
    window : CocycleWindow
        Plain (real, nonnegative) operators.
    burn_in : int
        Depth of the backward pullback for ``h`` and of the forward adjoint
        iteration for ``nu``.
    tol : float
        Required Hilbert distance between the last two pullback checkpoints.

    Raises
    ------
    ConvergenceError
        If either convergence trace ends above ``tol``; the error carries the
        trace of the eigenfunction pullback followed by the eigenmeasure one.
    """
    if burn_in < 1:
        raise ArgumentError("burn_in must be positive")
    W = len(window)
    if W < 2 * burn_in + 1:
        raise WindowError(f"window of {W} operators is too short for burn_in {burn_in}")
    for op in window.operators:
        if op.twist != 0:
            raise ArgumentError("triplets are defined for untwisted operators")
    a = window.start_offset + burn_in
    b = window.stop - burn_in

    trace = []
    prev = None
    for n in _checkpoints(burn_in):
        cur = _pullback(window, a, n)
        prev_n = _pullback(window, a, n - 1) if n > 1 else np.ones_like(cur)
        trace.append((n, hilbert_distance_positive(cur, prev_n)))
        prev = cur
    h_start = prev

    dual_trace = []
    nu_end = None
    for n in _checkpoints(burn_in):
        cur = _pushback(window, b, n)
        prev_n = _pushback(window, b, n - 1) if n > 1 else np.full_like(cur, 1.0 / cur.size)
        dual_trace.append((n, hilbert_distance_positive(cur, prev_n)))
        nu_end = cur

    if trace[-1][1] > tol or dual_trace[-1][1] > tol:
        raise ConvergenceError(
            f"pullbacks not converged after burn_in {burn_in}: "
            f"h distance {trace[-1][1]:.3e}, nu distance {dual_trace[-1][1]:.3e}",
            [d for _, d in trace] + [d for _, d in dual_trace])

    n_ops = b - a
    nus = [None] * (n_ops + 1)
    nus[n_ops] = nu_end
    lams = np.empty(n_ops)
    dual_res = np.empty(n_ops)
    for k in range(n_ops - 1, -1, -1):
        op = window.op(a + k).entries
        pulled = op.T @ nus[k + 1]
        lams[k] = pulled.sum()
        nus[k] = pulled / lams[k]
        dual_res[k] = float(np.abs(op.T @ nus[k + 1] - lams[k] * nus[k]).sum())

    hs = [None] * (n_ops + 1)
    hs[0] = h_start / float(nus[0] @ h_start)
    eig_res = np.empty(n_ops)
    for k in range(n_ops):
        op = window.op(a + k).entries
        image = op @ hs[k]
        hs[k + 1] = image / lams[k]
        eig_res[k] = float(np.max(np.abs(image - lams[k] * hs[k + 1])))
    norm_res = np.array([abs(float(nus[k] @ hs[k]) - 1.0) for k in range(n_ops + 1)])
    return RPFTriplet(a, lams, hs, nus, eig_res, dual_res, norm_res, trace, dual_trace)


def normalized_window(window: CocycleWindow, triplet: RPFTriplet) -> CocycleWindow:
    """Normalized operators ``g -> L(g h_k) / (lambda_k h_{k+1})`` on the triplet range.

    The result carries the invariant measures ``mu_k = h_k nu_k``.
    """
    ops = []
    for k in range(len(triplet)):
        idx = triplet.start + k
        ops.append(normalize(window.op(idx), triplet.lambdas[k], triplet.h[k], triplet.h[k + 1]))
    measures = [triplet.h[k] * triplet.nu[k] for k in range(len(triplet) + 1)]
    obs = None
    if window.observables is not None:
        obs = [window.observable(triplet.start + k) for k in range(len(triplet))]
    return CocycleWindow(ops, triplet.start, measures, obs)


def normalized_cocycle(system: FiberedSystem, path: EnvPath, potential: RandomFunction, disc: Discretization,
                       burn_in: int, observable: RandomFunction | None = None,
                       tol: float = 1e-10) -> tuple[RPFTriplet, CocycleWindow]:
    """Triplet and normalized window over the interior of the whole path.

    The normalized window covers fibers ``path.offset + burn_in`` to
    ``path.stop - 1 - burn_in``.
    """
    raw = build_window(system, path, potential, disc, path.offset, len(path) - 1, observable)
    triplet = solve_triplet(raw, burn_in, tol)
    return triplet, normalized_window(raw, triplet)


def lambda_bounds(triplet: RPFTriplet, system: FiberedSystem, path: EnvPath,
                  potential: RandomFunction) -> list[tuple[float, float, float, bool]]:
    """Check ``(D e^{||phi||})^{-1} <= lambda <= D e^{||phi||}`` per operator.

    Returns ``(lower, lambda, upper, holds)`` rows.
    """
    rows = []
    for k in range(len(triplet)):
        s = path.state_at(triplet.start + k)
        D = system.geometry[s].degree
        bound = D * math.exp(potential.sup_norm(s))
        lam = float(triplet.lambdas[k])
        rows.append((1.0 / bound, lam, bound, (1.0 / bound) * (1 - 1e-12) <= lam <= bound * (1 + 1e-12)))
    return rows


def q_values(system: FiberedSystem, path: EnvPath, weights: Sequence[float], alpha: float,
             rel_tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """``Q_k = sum_{j>=1} w_{k-j} prod_{i=1}^{j} gamma_{k-i}^{-alpha}`` at every local index.

    The sum uses the history available inside the window; the returned tail
    bounds the neglected part through the geometric envelope of the window's
    expansion factors.

    Returns
    -------
    values, tails : ndarray
    """
    w = np.asarray(weights, dtype=float)
    geo = path_geometry(system, path)
    fac = geo.gamma ** (-alpha)
    ratio = _envelope_ratio(system, path.states) ** alpha
    wmax = float(np.max(w))
    vals = np.empty(len(path))
    tails = np.empty(len(path))
    for k in range(len(path)):
        if k == 0:
            vals[k] = 0.0
            tails[k] = wmax * ratio / (1.0 - ratio) if ratio < 1 else math.inf
            continue
        v, t = backward_series(w[k - 1::-1], fac[k - 1::-1], ratio, wmax, rel_tol)
        vals[k], tails[k] = v, t
    return vals, tails


@dataclass
class NormalizedPotential:
    """Normalized potential data at one fiber.

    ``values`` holds ``phi~`` on the nonzero (target, source) cell pairs of the
    operator in sparse form; ``branch_residual`` is ``max_x |sum_branches
    w e^{phi~} - 1|`` with ``w`` the geometric cell weights.
    """

    fiber: int
    values: sp.csr_matrix
    branch_residual: float
    H: float
    H_tilde: float
    Q: float
    Q_tail: float
    Q_next: float
    Q_tilde: float
    Q_tilde_tail: float


def normalized_potential(window: CocycleWindow, triplet: RPFTriplet, system: FiberedSystem, path: EnvPath,
                         potential: RandomFunction, s: float = 3.0, alpha: float | None = None
                         ) -> list[NormalizedPotential]:
    """``phi~ = phi + ln h - ln(h' o T) - ln lambda`` and its Holder data on the triplet range.

    ``H`` is ``max(1, ||phi||_alpha)`` per fiber, ``H~ = H + s Q + s Q' N`` and
    ``Q~`` is the backward series built from ``H~``.  ``path`` must cover the
    window of ``window``.
    """
    if s <= 2:
        raise ArgumentError("s must exceed 2")
    for hk in triplet.h:
        if np.any(hk <= 0):
            raise ArgumentError("eigenfunction is not strictly positive")
    alpha = system.holder_exponent if alpha is None else alpha
    states = path.states
    H = np.array([potential.H_bound(int(st)) for st in states])
    N = np.array([system.geometry[int(st)].holder_bound for st in states])
    Q, Q_tail = q_values(system, path, H, alpha)
    H_t = H.copy()
    H_t[:-1] = H[:-1] + s * Q[:-1] + s * Q[1:] * N[:-1]
    H_t[-1] = H[-1] + s * Q[-1] + s * Q[-1] * N[-1]
    Qt, Qt_tail = q_values(system, path, H_t, alpha)

    out = []
    for k in range(len(triplet)):
        idx = triplet.start + k
        loc = idx - path.offset
        op = window.op(idx).entries.tocoo()
        st = int(states[loc])
        if system.family == "circle":
            phi_src = potential.evaluate(st, _cell_centers(op.shape[1]))
        else:
            table = potential.evaluate(st, None)
            phi_src = table if table.ndim == 1 else None
        rows, cols = op.row, op.col
        if phi_src is None:
            phi_pair = potential.evaluate(st, None)[cols, rows]
        else:
            phi_pair = phi_src[cols]
        lam = float(triplet.lambdas[k])
        vals = (phi_pair + np.log(triplet.h[k][cols]) - np.log(triplet.h[k + 1][rows]) - math.log(lam))
        geometric = op.data / np.exp(phi_pair)
        branch = np.bincount(rows, weights=geometric * np.exp(vals), minlength=op.shape[0])
        resid = float(np.max(np.abs(branch - 1.0)))
        out.append(NormalizedPotential(
            idx, sp.csr_matrix((vals, (rows, cols)), shape=op.shape), resid,
            float(H[loc]), float(H_t[loc]), float(Q[loc]), float(Q_tail[loc]),
            float(Q[loc + 1]) if loc + 1 < len(path) else float("nan"),
            float(Qt[loc]), float(Qt_tail[loc])))
    return out


def _cell_centers(K: int) -> np.ndarray:
    return (np.arange(K) + 0.5) / K


def h_bounds(triplet: RPFTriplet, Q: Mapping[int, float], s: float) -> list[tuple[int, float, float, bool]]:
    """Check ``e^{-s Q} <= h <= e^{s Q}`` per fiber (the bound applies on fibers with ``xi = 1``)."""
    rows = []
    for k, hk in enumerate(triplet.h):
        idx = triplet.start + k
        if idx not in Q:
            continue
        lo, hi = math.exp(-s * Q[idx]), math.exp(s * Q[idx])
        rows.append((idx, float(hk.min()), float(hk.max()), bool(hk.min() >= lo and hk.max() <= hi)))
    return rows


def equivariance_residual(window: CocycleWindow, fiber: int) -> float:
    """``||L_k^* mu_{k+1} - mu_k||_1`` on a normalized window.

    ``int (L g) dmu_{k+1} = int g dmu_k`` for all ``g`` is the dual form of
    ``(T_k)_* mu_k = mu_{k+1}``.
    """
    op = window.op(fiber)
    mu = window.measure(fiber)
    nxt = window.measure(fiber + 1)
    return float(np.abs(op.entries.T @ nxt - mu).sum())


@dataclass
class DecayReport:
    """Decay table of ``||L^n g - mu(g)||_inf / ||g||_alpha``.

    Attributes
    ----------
    table : list of (n, decay)
        Supremum over the test functions at each ``n``.
    exp_rate : float
        Slope of ``log decay`` against ``n``.
    poly_exponent : float
        Slope of ``log decay`` against ``log n``.
    regime : {"exponential", "polynomial", "indeterminate", "degenerate"}
        Winner by least-squares residual on the last half of the table.
    envelope_constant : float
        ``max_n decay(n) / envelope(n)`` for the winning regime.
    correlations : list of (n, value, envelope)
        ``|mu(f . g o T^n) - mu(f) mu'(g)|`` against ``||g||_{L1} ||f||_alpha R n^{-beta}``.
    """

    labels: list
    table: list
    exp_rate: float
    poly_exponent: float
    regime: str
    envelope_constant: float
    correlations: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "decay", "envelope"])
            for n, d in self.table:
                writer.writerow([n, repr(d), repr(self.envelope(n))])

    def envelope(self, n: int) -> float:
        if self.regime == "exponential":
            return self.envelope_constant * math.exp(self.exp_rate * n)
        if self.regime == "polynomial":
            return self.envelope_constant * n ** self.poly_exponent
        return float("nan")


def _fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    coef, res, *_ = np.polyfit(x, y, 1, full=True)
    rss = float(res[0]) if res.size else 0.0
    return float(coef[0]), float(coef[1]), rss


def decay_rate(window: CocycleWindow, tests: Sequence[np.ndarray], n_max: int, start: int | None = None,
               alpha: float = 1.0, disc: Discretization | None = None, xi: float = 1.0,
               labels: Sequence[str] | None = None, tie_tol: float = 0.05,
               collapse: float = 1e-13) -> DecayReport:
    """Decay of correlations along a normalized window.

    Each test is propagated as ``g - mu(g)`` with the mean re-projected at every
    step and the running vector rescaled, so decay below the round-off level
    of ``||g||`` is still resolved.  A single step that shrinks the rescaled
    vector below ``collapse`` is an exact cancellation; propagation of that
    test stops there.  The norm ``||g||_alpha`` is the discrete
    Holder norm on scale ``xi`` when ``disc`` is given, else the sup norm plus
    the largest neighbour difference.
    """
    start = window.start_offset if start is None else start
    if window.measures is None:
        raise ArgumentError("decay needs a normalized window with invariant measures")
    if n_max < 1 or start + n_max > window.stop:
        raise WindowError("n_max exceeds the window")
    labels = list(labels) if labels is not None else [f"g{i}" for i in range(len(tests))]
    decay = np.zeros(n_max + 1)
    for g in tests:
        g = np.asarray(g, dtype=float)
        if disc is not None:
            gn = disc.holder_norm(g, alpha, xi)
        else:
            gn = float(np.max(np.abs(g)) + np.max(np.abs(np.diff(g)), initial=0.0))
        if gn == 0:
            continue
        v = g - float(window.measure(start) @ g)
        log_scale = 0.0
        for n in range(n_max + 1):
            if n > 0:
                v = window.op(start + n - 1).entries @ v
                v = v - float(window.measure(start + n) @ v)
            size = float(np.max(np.abs(v)))
            if size == 0.0:
                break
            val = math.exp(math.log(size) + log_scale) / gn
            decay[n] = max(decay[n], val)
            if n > 0 and size < collapse:
                # the step cancelled the unit-size input down to round-off:
                # what remains is noise, not signal
                break
            log_scale += math.log(size)
            v = v / size
    table = [(n, float(decay[n])) for n in range(n_max + 1)]

    ns = np.arange(1, n_max + 1)
    d = decay[1:]
    half = ns >= max(1, (n_max + 1) // 2)
    ok = half & (d > 0)
    if ok.sum() < 3:
        return DecayReport(labels, table, float("-inf"), float("-inf"), "degenerate", 0.0)
    x, y = ns[ok].astype(float), np.log(d[ok])
    rate, _, rss_exp = _fit(x, y)
    expo, _, rss_poly = _fit(np.log(x), y)
    if abs(rss_exp - rss_poly) <= tie_tol * max(rss_exp, rss_poly) or (rss_exp == rss_poly):
        regime = "indeterminate"
    else:
        regime = "exponential" if rss_exp < rss_poly else "polynomial"
    pos = d > 0
    if regime == "polynomial":
        R = float(np.max(d[pos] * ns[pos] ** (-expo)))
    else:
        R = float(np.max(d[pos] * np.exp(-rate * ns[pos])))
    report = DecayReport(labels, table, rate, expo, regime, R)

    if len(tests) >= 2:
        f = np.asarray(tests[0], dtype=float)
        gg = np.asarray(tests[1], dtype=float)
        fn = disc.holder_norm(f, alpha, xi) if disc is not None else float(np.max(np.abs(f)))
        mu0 = window.measure(start)
        Ln_f = propagate(window, start, n_max, f, record=range(1, n_max + 1))
        for n in range(1, n_max + 1):
            mun = window.measure(start + n)
            val = abs(float(mun @ (gg * Ln_f[n])) - float(mu0 @ f) * float(mun @ gg))
            g_l1 = float(mun @ np.abs(gg))
            report.correlations.append((n, val, g_l1 * fn * report.envelope(n)))
    return report
