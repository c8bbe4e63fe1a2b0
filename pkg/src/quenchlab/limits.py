"""Characteristic functions, variance growth, CLT and moderate-deviation diagnostics.

Everything that can be computed through twisted normalized operators is
computed that way, exactly on the discretization:

    E[exp(z S_n)] = mu_{s+n}(L_{s+n-1, z} ... L_{s, z} 1),  L_z g = L(e^{z f} g).

Monte Carlo enters only for distribution-level statistics (empirical CDFs and
interval probabilities), through :mod:`quenchlab.sampling`.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .environment import EnvPath
from .errors import ArgumentError, DegenerateVarianceError, DomainError, TruncationError, WindowError
from .sampling import birkhoff_samples
from .systems import FiberedSystem, RandomFunction
from .transfer import CocycleWindow

__all__ = [
    "ESSEEN_CONSTANT",
    "VarianceReport",
    "CLTReport",
    "MDPReport",
    "GrowthFit",
    "char_fn",
    "char_fn_grid",
    "log_mgf",
    "covariance_table",
    "variance",
    "clt_report",
    "mdp_report",
    "growth_fit",
    "write_long_csv",
]

ESSEEN_CONSTANT = 24.0 / math.pi


def _check_window(window: CocycleWindow, start: int, n: int) -> None:
    if window.measures is None or window.observables is None:
        raise ArgumentError("a normalized window with observables is required")
    if n < 0 or start < window.start_offset or start + n > window.stop:
        raise WindowError(f"steps [{start}, {start + n}) leave the window [{window.start_offset}, {window.stop})")


def _twisted_propagation(window: CocycleWindow, start: int, n: int, z: np.ndarray,
                         record: Sequence[int]) -> dict[int, np.ndarray]:
    """``mu_{s+m}(L_z^m 1)`` for every ``z`` (columns) and every ``m`` in ``record``."""
    z = np.asarray(z, dtype=complex)
    rec = set(int(r) for r in record)
    d = window.dim(start)
    V = np.ones((d, z.size), dtype=complex)
    out = {}
    if 0 in rec:
        out[0] = window.measure(start) @ V
    weights: dict[int, np.ndarray] = {}
    for k in range(n):
        f = window.observable(start + k)
        # observables of equal states share storage, so their weights are reused
        w = weights.get(id(f))
        if w is None:
            w = weights[id(f)] = np.exp(np.outer(f, z))
        V = window.op(start + k).entries @ (V * w)
        if k + 1 in rec:
            out[k + 1] = window.measure(start + k + 1) @ V
    return out


def char_fn(window: CocycleWindow, t: float, n: int, start: int | None = None) -> complex:
    """``E_mu[exp(i t S_n f)]`` from twisted normalized operators.

    At ``t = 0`` the twist is trivial and the value is the total mass of the
    invariant measure, returned as exactly ``1``.
    """
    start = window.start_offset if start is None else start
    _check_window(window, start, n)
    if t == 0:
        return 1.0 + 0.0j
    return complex(_twisted_propagation(window, start, n, np.array([1j * t]), [n])[n][0])


def char_fn_grid(window: CocycleWindow, ts: Sequence[float], n_grid: Sequence[int],
                 start: int | None = None) -> dict[int, np.ndarray]:
    """Characteristic function on a ``t`` grid for several ``n`` in one pass."""
    start = window.start_offset if start is None else start
    n_top = max(int(n) for n in n_grid)
    _check_window(window, start, n_top)
    ts = np.asarray(ts, dtype=float)
    out = _twisted_propagation(window, start, n_top, 1j * ts, n_grid)
    for n in out:
        out[n] = np.where(ts == 0, 1.0 + 0.0j, out[n])
    return out


def log_mgf(window: CocycleWindow, z: Sequence[float], n_grid: Sequence[int],
            start: int | None = None) -> dict[int, np.ndarray]:
    """``ln E_mu[exp(z S_n f)]`` for real ``z``."""
    start = window.start_offset if start is None else start
    n_top = max(int(n) for n in n_grid)
    _check_window(window, start, n_top)
    z = np.asarray(z, dtype=float)
    out = _twisted_propagation(window, start, n_top, z, n_grid)
    return {n: np.where(z == 0, 0.0, np.log(np.real(v))) for n, v in out.items()}


def _means(window: CocycleWindow, start: int, n: int) -> np.ndarray:
    return np.array([float(np.real(window.measure(start + k) @ window.observable(start + k))) for k in range(n)])


# ----------------------------------------------------------------------------
# variance

def covariance_table(window: CocycleWindow, start: int, rows: int, k_max: int) -> np.ndarray:
    """``C[i, k] = mu_{i+k}((L^k fbar_i) fbar_{i+k})`` with ``fbar = f - mu(f)``.

    Entries with ``i + k`` beyond the window are ``nan``.
    """
    _check_window(window, start, rows)
    C = np.full((rows, k_max + 1), np.nan)
    stop = window.stop
    means = {}

    def fbar(idx):
        if idx not in means:
            f = np.real(window.observable(idx))
            means[idx] = f - float(np.real(window.measure(idx) @ f))
        return means[idx]

    for i in range(rows):
        a = start + i
        v = fbar(a)
        C[i, 0] = float(np.real(window.measure(a) @ (v * v)))
        for k in range(1, k_max + 1):
            if a + k >= stop:
                break
            v = window.op(a + k - 1).entries @ v
            C[i, k] = float(np.real(window.measure(a + k) @ (v * fbar(a + k))))
    return C


@dataclass
class VarianceReport:
    """Variance growth along one path.

    Attributes
    ----------
    per_n : list of (n, Sigma_n^2, Sigma_n^2 / n)
        Quenched variances from the decomposition over pairs ``i <= j``.
    sigma2_series : float
        ``b(0) + 2 sum_{k=1}^{k_max} b(k)``.
    b_k : ndarray
        Path-averaged correlation sequence ``b(0..k_max)``.
    convergence_slope : float
        Log-log slope of ``|Sigma_n^2 / n - Sigma^2|``; ``-inf`` when every
        difference is at round-off level.
    tail_bound : float
        ``2 sum_{k > k_max} C k^{-beta}`` from the fitted envelope.
    envelope : (C, beta)
        ``|b(k)| <= C k^{-beta}`` for ``1 <= k <= k_max``.
    theory_exponent : float
        ``-(iota - kappa)`` supplied by the caller for comparison.
    """

    per_n: list
    sigma2_series: float
    b_k: np.ndarray
    convergence_slope: float
    tail_bound: float
    envelope: tuple
    theory_exponent: float
    truncated: bool = True

    def sigma2_at(self, n: int) -> float:
        for m, s2, _ in self.per_n:
            if m == n:
                return s2
        raise ArgumentError(f"n = {n} not in the variance table")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "sigma2_n", "sigma2_n_over_n"])
            for n, s2, r in self.per_n:
                writer.writerow([n, repr(s2), repr(r)])


def _b_envelope(b: np.ndarray, noise: float) -> tuple[float, float, float]:
    """Fit ``|b(k)| <= C k^-beta`` and bound the series tail beyond ``k_max``.

    Correlations at or below ``noise`` are round-off.  If the last half of the
    table is entirely at that level the correlations have cancelled exactly
    and the tail is zero.
    """
    k_max = b.size - 1
    k = np.arange(1, k_max + 1, dtype=float)
    ab = np.abs(b[1:])
    if k_max < 2:
        return 0.0, math.inf, 0.0
    if np.all(ab[k_max // 2:] <= noise):
        big = ab > noise
        C = float(np.max(ab[big] * k[big] ** 4)) if big.any() else 0.0
        return C, math.inf, 0.0
    tail_env = np.maximum.accumulate(ab[::-1])[::-1]
    pos = tail_env > noise
    beta = -float(np.polyfit(np.log(k[pos]), np.log(tail_env[pos]), 1)[0])
    C = float(np.max(ab * k**beta))
    if beta <= 1.0:
        return C, beta, math.inf
    # sum_{k > K} k^-beta <= K^{1 - beta} / (beta - 1)
    return C, beta, 2.0 * C * k_max ** (1.0 - beta) / (beta - 1.0)


def variance(window: CocycleWindow, n_max: int, k_max: int, start: int | None = None,
             n_grid: Sequence[int] | None = None, extra_windows: Sequence[CocycleWindow] = (),
             theory_exponent: float = -0.45, abs_floor: float = 1e-8) -> VarianceReport:
    """Quenched variances ``Sigma_n^2`` and the series ``Sigma^2``.

    ``Sigma_n^2 = sum_i C[i, 0] + 2 sum_{i < j < n} C[i, j - i]`` with lags
    beyond ``k_max`` dropped; the dropped mass is controlled by the same
    envelope that bounds the series tail.  ``b(k)`` averages ``C[i, k]`` over
    the path positions ``i`` (shifts of the environment) of this window and of
    ``extra_windows``.

    Raises
    ------
    TruncationError
        If the series tail bound exceeds 1% of ``Sigma^2`` and the absolute
        floor ``abs_floor`` (the latter keeps degenerate cases decidable).
    """
    start = window.start_offset if start is None else start
    if n_max < 1 or k_max < 1:
        raise ArgumentError("n_max and k_max must be positive")
    rows = n_max
    _check_window(window, start, rows)
    C = covariance_table(window, start, rows, k_max)
    tables = [C]
    for w in extra_windows:
        tables.append(covariance_table(w, w.start_offset, len(w), k_max))
    stacked = np.vstack(tables)
    b = np.array([np.nanmean(stacked[:, k]) for k in range(k_max + 1)])
    sigma2 = float(b[0] + 2.0 * b[1:].sum())
    noise = 1e-12 * max(abs(b[0]), 1e-300)
    Cenv, beta, tail = _b_envelope(b, noise)
    if tail > 0.01 * abs(sigma2) and tail > abs_floor:
        raise TruncationError(f"k_max = {k_max} leaves a tail bound {tail:.3e} above 1% of "
                              f"Sigma^2 = {sigma2:.3e}")

    if n_grid is None:
        n_grid = sorted(set([1] + [2**p for p in range(int(math.log2(n_max)) + 1)] + [n_max]))
    Cz = np.nan_to_num(C, nan=0.0)
    per_n = []
    for n in sorted(int(m) for m in n_grid):
        if n > rows:
            raise WindowError("n_grid exceeds n_max")
        i = np.arange(n)
        kk = np.arange(1, k_max + 1)
        mask = (i[:, None] + kk[None, :]) < n
        s2 = float(Cz[:n, 0].sum() + 2.0 * (Cz[:n, 1:] * mask).sum())
        per_n.append((n, s2, s2 / n))

    diffs = np.array([(n, abs(r - sigma2)) for n, _, r in per_n if n >= 2])
    slope = float("-inf")
    if diffs.size:
        keep = diffs[:, 1] > 1e-12 * max(abs(sigma2), 1e-300)
        if keep.sum() >= 2:
            slope = float(np.polyfit(np.log(diffs[keep, 0]), np.log(diffs[keep, 1]), 1)[0])
    return VarianceReport(per_n, sigma2, b, slope, tail, (Cenv, beta), theory_exponent)


# ----------------------------------------------------------------------------
# CLT and Berry-Esseen

@dataclass
class CLTReport:
    """Kolmogorov distances and Esseen bounds along an ``n`` grid.

    Attributes
    ----------
    ks_table : list of (n, KS)
        ``sup_t |F_n(t) - Phi(t)|`` for ``S_n`` centered and divided by ``Sigma_n``.
    ks_sigma_table : list of (n, KS)
        Same with the normalization ``sigma sqrt(n)`` from the series.
    esseen_table : list of (n, T, integral, bound)
        ``bound = integral + C_E / T``.
    be_slope, be_r2 : float
        Least-squares slope of ``log KS`` against ``log n`` and its R^2.
    char_fn_values : dict
        ``n -> (t grid, E exp(i t S_n))`` on the raw twist grid.
    """

    ks_table: list
    ks_sigma_table: list
    esseen_table: list
    be_slope: float
    be_r2: float
    char_fn_values: dict = field(default_factory=dict)
    samples: int = 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "ks", "ks_sigma", "T", "esseen_integral", "esseen_bound"])
            for (n, ks), (_, kss), (_, T, integ, bound) in zip(self.ks_table, self.ks_sigma_table,
                                                               self.esseen_table):
                writer.writerow([n, repr(ks), repr(kss), repr(T), repr(integ), repr(bound)])


def _loglog(x, y) -> tuple[float, float]:
    x, y = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    if x.size < 2:
        return float("nan"), float("nan")
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = float(np.sum((y - y.mean()) ** 2))
    return float(slope), (1.0 - float(np.sum(resid**2)) / ss) if ss > 0 else 1.0


def clt_report(window: CocycleWindow, system: FiberedSystem, path: EnvPath, f: RandomFunction,
               n_grid: Sequence[int], mc_samples: int, seed: int = 0, start: int | None = None,
               T_scale: float = 1.0, esseen_constant: float = ESSEEN_CONSTANT, k_max: int = 32,
               t_points: int = 200, variance_report: VarianceReport | None = None,
               method: str = "auto", var_floor: float = 1e-10) -> CLTReport:
    """Empirical Kolmogorov distances and Esseen bounds for ``S_n`` along ``n_grid``.

    The Esseen bound at ``n`` is

        int_{-T}^{T} |E exp(i t Sbar_n / Sigma_n) - exp(-t^2/2)| / |t| dt + C_E / T

    with ``T = T_scale * Sigma_n``.  Substituting ``t = Sigma_n u`` turns the
    integral into one over the raw twist ``u in [-T_scale, T_scale]`` with
    measure ``du / |u|``, so a single logarithmic ``u`` grid serves every ``n``.
    The part of the integral below the smallest grid point is dropped; the
    integrand vanishes like ``u^2`` there.

    Raises
    ------
    DegenerateVarianceError
        If the series variance is not positive; use the coboundary tools then.
    """
    start = window.start_offset if start is None else start
    n_grid = sorted(int(n) for n in n_grid)
    n_top = n_grid[-1]
    _check_window(window, start, n_top)
    rep = variance_report or variance(window, n_top, min(k_max, n_top), start, n_grid=n_grid)
    if rep.sigma2_series <= var_floor:
        raise DegenerateVarianceError(f"Sigma^2 = {rep.sigma2_series:.3e}: the observable is degenerate")
    sigma = math.sqrt(rep.sigma2_series)
    means = np.cumsum(np.concatenate([[0.0], _means(window, start, n_top)]))

    sums = birkhoff_samples(system, path, window, f, start, n_top, mc_samples, seed, record=n_grid,
                            method=method)
    u = np.geomspace(1e-4 / math.sqrt(n_top), T_scale, t_points)
    phis = char_fn_grid(window, u, n_grid, start)

    ks_table, ks_sigma, esseen = [], [], []
    for n in n_grid:
        s2n = rep.sigma2_at(n)
        if s2n <= 0:
            raise DegenerateVarianceError(f"Sigma_n^2 = {s2n:.3e} at n = {n}")
        sn = math.sqrt(s2n)
        centered = sums[n] - means[n]
        ks_table.append((n, float(stats.kstest(centered / sn, "norm").statistic)))
        ks_sigma.append((n, float(stats.kstest(centered / (sigma * math.sqrt(n)), "norm").statistic)))
        phi = phis[n] * np.exp(-1j * u * means[n])
        g = np.abs(phi - np.exp(-0.5 * (u * sn) ** 2))
        # integrand in d(log u), doubled for the negative half-line
        integral = 2.0 * float(np.trapezoid(g, np.log(u)))
        T = T_scale * sn
        esseen.append((n, T, integral, integral + esseen_constant / T))
    slope, r2 = _loglog([n for n, _ in ks_table], [k for _, k in ks_table])
    cf = {n: (u, phis[n]) for n in n_grid}
    return CLTReport(ks_table, ks_sigma, esseen, slope, r2, cf, mc_samples)


# ----------------------------------------------------------------------------
# moderate deviations

@dataclass
class MDPReport:
    """Scaled cumulants and interval rates.

    Attributes
    ----------
    a_n : list of (n, a_n)
    scaled_cumulant : dict
        ``n -> list of (t, Lambda_n(t))`` with
        ``Lambda_n(t) = a_n^-2 ln E exp(t a_n Sbar_n / (sigma sqrt(n)))``.
    limit_error : dict
        ``n -> list of (t, |Lambda_n(t) - t^2/2| / (t^2/2))`` for ``t != 0``.
    set_rates : list of (lo, hi, empirical, closure_rate, interior_rate, hits)
        ``a_n^-2 ln mu(W_n in [lo, hi])`` at the largest ``n`` against
        ``-inf x^2/2`` over the closure and the interior.
    convex : dict
        ``n -> bool``, discrete convexity of ``Lambda_n`` on the ``t`` grid.
    clipped : list of (n, t)
        Grid points whose twist left the admissible disc.
    """

    a_n: list
    scaled_cumulant: dict
    limit_error: dict
    set_rates: list
    convex: dict
    clipped: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "t", "scaled_cumulant", "relative_error"])
            for n, rows in self.scaled_cumulant.items():
                errs = dict(self.limit_error[n])
                for t, v in rows:
                    writer.writerow([n, repr(t), repr(v), repr(errs.get(t, 0.0))])


def _interval_inf(lo: float, hi: float) -> float:
    """``inf x^2/2`` over ``[lo, hi]`` (``hi`` may be ``inf``)."""
    if lo <= 0.0 <= hi:
        return 0.0
    x = lo if lo > 0 else hi
    return 0.5 * x * x


def mdp_report(window: CocycleWindow, system: FiberedSystem, path: EnvPath, f: RandomFunction,
               a_rule: Callable[[int], float], n_grid: Sequence[int], t_grid: Sequence[float],
               gamma_sets: Sequence[tuple[float, float]] = (), mc_samples: int = 0, seed: int = 0,
               start: int | None = None, sigma2: float | None = None, z_max: float | None = None,
               hypothesis_delta: float = 0.05, method: str = "auto") -> MDPReport:
    """Moderate-deviation diagnostics through real-twisted operators.

    Parameters
    ----------
    a_rule : callable
        ``n -> a_n`` with ``a_n -> inf`` and ``a_n = o(n^{1/2 - delta})``,
        checked on the grid as increasing and ``a_n <= n^{1/2 - delta}``.
    sigma2 : float, optional
        Asymptotic variance; defaults to ``Sigma_n^2 / n`` at the largest ``n``.
    z_max : float, optional
        Radius of the admissible twist disc.  Twists beyond it are clipped
        with a warning, except at the largest ``n`` where this is an error.
    """
    start = window.start_offset if start is None else start
    n_grid = sorted(int(n) for n in n_grid)
    n_top = n_grid[-1]
    _check_window(window, start, n_top)
    a = [(n, float(a_rule(n))) for n in n_grid]
    vals = [v for _, v in a]
    if any(v <= 0 for v in vals) or any(y < x for x, y in zip(vals, vals[1:])):
        raise ArgumentError("a_n must be positive and nondecreasing on the grid")
    if any(v > n ** (0.5 - hypothesis_delta) for n, v in a if n > 1):
        raise ArgumentError("a_n exceeds n^(1/2 - delta) on the grid")
    if sigma2 is None:
        sigma2 = variance(window, n_top, min(32, n_top), start, n_grid=[n_top]).per_n[-1][2]
    if sigma2 <= 0:
        raise DegenerateVarianceError("moderate deviations need a positive variance")
    sigma = math.sqrt(sigma2)
    means = np.cumsum(np.concatenate([[0.0], _means(window, start, n_top)]))
    t_grid = np.asarray(sorted(float(t) for t in t_grid))

    scaled, errors, convex, clipped = {}, {}, {}, []
    for n, an in a:
        z = t_grid * an / (sigma * math.sqrt(n))
        if z_max is not None and np.any(np.abs(z) > z_max):
            bad = [float(t) for t, zz in zip(t_grid, z) if abs(zz) > z_max]
            if n == n_top:
                raise DomainError(f"twists for t in {bad} leave the disc |z| <= {z_max} at n = {n}")
            warnings.warn(f"clipping twists for t in {bad} at n = {n}")
            clipped.extend((n, t) for t in bad)
            z = np.clip(z, -z_max, z_max)
        lm = log_mgf(window, z, [n], start)[n] - z * means[n]
        lam = lm / an**2
        scaled[n] = [(float(t), float(v)) for t, v in zip(t_grid, lam)]
        errors[n] = [(float(t), abs(v - 0.5 * t * t) / (0.5 * t * t)) for t, v in zip(t_grid, lam) if t != 0]
        if t_grid.size >= 3:
            second = np.diff(lam, 2) if np.allclose(np.diff(t_grid, 2), 0) else _second_diff(t_grid, lam)
            convex[n] = bool(np.all(second >= -1e-10))
        else:
            convex[n] = True

    rates = []
    if gamma_sets and mc_samples > 0:
        an = a[-1][1]
        S = birkhoff_samples(system, path, window, f, start, n_top, mc_samples, seed, method=method)[n_top]
        W = (S - means[n_top]) / (sigma * math.sqrt(n_top) * an)
        for lo, hi in gamma_sets:
            hits = int(np.count_nonzero((W >= lo) & (W <= hi)))
            emp = math.log(hits / mc_samples) / an**2 if hits else float("-inf")
            closure = -_interval_inf(lo, hi)
            interior = closure if hi > lo else float("-inf")
            rates.append((float(lo), float(hi), emp, closure, interior, hits))
    return MDPReport(a, scaled, errors, rates, convex, clipped)


def _second_diff(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Divided second differences on a nonuniform grid."""
    s1 = np.diff(y) / np.diff(t)
    return np.diff(s1) / (0.5 * (t[2:] - t[:-2]))


# ----------------------------------------------------------------------------
# growth envelopes

@dataclass(frozen=True)
class GrowthFit:
    """``A = sup_k k^{-a-eps} W_k`` with the position of the supremum.

    ``diverging`` flags a supremum still growing at the end of the range: the
    running maximum rises over the last half and is attained in the last tenth.
    """

    A: float
    argmax: int
    diverging: bool


def growth_fit(series: Sequence[float], p: float, eps: float, a: float = 0.0) -> GrowthFit:
    """Envelope constant ``A`` with ``W_k <= A k^{a + eps}`` on the observed range (``k >= 1``)."""
    W = np.asarray(series, dtype=float)
    if W.size == 0:
        raise ArgumentError("series must be nonempty")
    if eps <= 1.0 / p:
        raise ArgumentError("eps must exceed 1/p")
    k = np.arange(1, W.size + 1, dtype=float)
    ratio = W / k ** (a + eps)
    arg = int(np.argmax(ratio))
    A = float(ratio[arg])
    if not math.isfinite(A):
        return GrowthFit(A, arg + 1, True)
    run = np.maximum.accumulate(ratio)
    half = W.size // 2
    diverging = bool(W.size >= 10 and run[-1] > run[half] and arg >= int(0.9 * W.size))
    return GrowthFit(A, arg + 1, diverging)


def write_long_csv(path, series: dict) -> None:
    """Plot-ready long format ``series, x, y``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["series", "x", "y"])
        for name, rows in series.items():
            for x, y in rows:
                writer.writerow([name, repr(float(x)), repr(float(y))])
