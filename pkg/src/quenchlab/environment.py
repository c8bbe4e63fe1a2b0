"""Stationary random environments and mixing-product estimates.

An environment is a stationary sequence of states ``omega_k`` taking values in
a finite alphabet ``{0, ..., state_count - 1}``.  Two kinds are supported:
independent identically distributed states and a finite-state Markov chain
started from its stationary law.  The left shift acts on a stored window by
index translation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import ArgumentError, EmptyRecordError, ModelError, PreconditionError, WindowError

__all__ = [
    "EnvironmentModel",
    "EnvPath",
    "MixingProfile",
    "VisitRecord",
    "ProductDecayRow",
    "IndicatorBound",
    "VisitGrowth",
    "sample_path",
    "sample_paths",
    "mixing_bounds",
    "product_decay",
    "alpha_lemma_exponent",
    "psi_condition",
    "visiting_times",
    "visit_growth",
    "indicator_exp_bound",
    "running_sup_moments",
]


@dataclass(frozen=True)
class EnvironmentModel:
    """Law of a stationary finite-state environment.

    Parameters
    ----------
    kind : {"iid", "markov"}
        Independent states or a Markov chain.
    marginal : ndarray
        One-dimensional law of each coordinate.  For Markov chains this must
        be stationary for ``transition``.
    transition : ndarray or None
        Row-stochastic transition matrix (Markov kind only).
    seed : int
        Default 64-bit seed attached to the model.
    """

    kind: str
    marginal: np.ndarray
    transition: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        marginal = np.asarray(self.marginal, dtype=float)
        object.__setattr__(self, "marginal", marginal)
        if self.kind not in ("iid", "markov"):
            raise ArgumentError(f"unknown environment kind {self.kind!r}")
        if marginal.ndim != 1 or marginal.size < 1:
            raise ArgumentError("marginal must be a nonempty vector")
        if np.any(marginal < 0) or abs(marginal.sum() - 1.0) > 1e-12:
            raise ArgumentError("marginal must be a probability vector")
        if not 0 <= int(self.seed) < 2**64:
            raise ArgumentError("seed must be a 64-bit unsigned integer")
        if self.kind == "markov":
            if self.transition is None:
                raise ArgumentError("markov environment needs a transition matrix")
            P = np.asarray(self.transition, dtype=float)
            object.__setattr__(self, "transition", P)
            d = marginal.size
            if P.shape != (d, d):
                raise ArgumentError("transition shape does not match marginal")
            if np.any(P < 0) or np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-12:
                raise ArgumentError("transition rows must be probability vectors")
            if np.abs(marginal @ P - marginal).sum() > 1e-10:
                raise ArgumentError("marginal is not stationary for transition")
        elif self.transition is not None:
            raise ArgumentError("iid environment takes no transition matrix")

    @property
    def state_count(self) -> int:
        return int(self.marginal.size)

    @classmethod
    def iid(cls, probabilities: Sequence[float], seed: int = 0) -> "EnvironmentModel":
        return cls("iid", np.asarray(probabilities, dtype=float), None, seed)

    @classmethod
    def markov(cls, transition, seed: int = 0) -> "EnvironmentModel":
        """Markov environment started from the stationary law of ``transition``."""
        P = np.asarray(transition, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ArgumentError("transition must be square")
        _check_irreducible(P)
        w, v = np.linalg.eig(P.T)
        k = int(np.argmin(np.abs(w - 1.0)))
        pi = np.real(v[:, k])
        pi = np.abs(pi) / np.abs(pi).sum()
        # one step of refinement keeps the stationarity residual at round-off
        pi = pi @ P
        pi = pi / pi.sum()
        return cls("markov", pi, P, seed)

    def mean(self, values) -> float:
        """Expectation of a per-state function."""
        return float(self.marginal @ np.asarray(values, dtype=float))


@dataclass(frozen=True)
class EnvPath:
    """Finite window ``omega_offset, ..., omega_{offset+len-1}`` of a path."""

    offset: int
    states: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.int64)
        if states.ndim != 1 or states.size < 1:
            raise ArgumentError("a path holds at least one state")
        object.__setattr__(self, "states", states)

    def __len__(self) -> int:
        return int(self.states.size)

    @property
    def stop(self) -> int:
        return self.offset + len(self)

    def state_at(self, index: int) -> int:
        """State ``omega_index`` (absolute coordinate)."""
        if not self.offset <= index < self.stop:
            raise WindowError(f"index {index} outside window [{self.offset}, {self.stop})")
        return int(self.states[index - self.offset])

    def window(self, start: int, length: int) -> np.ndarray:
        if length < 0 or start < self.offset or start + length > self.stop:
            raise WindowError(f"range [{start}, {start + length}) outside window [{self.offset}, {self.stop})")
        return self.states[start - self.offset:start - self.offset + length]

    def shift(self, k: int = 1) -> "EnvPath":
        """Window of ``theta^k omega``: the same states with coordinates moved by ``-k``."""
        return EnvPath(self.offset - k, self.states)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "state"])
            for i, s in enumerate(self.states):
                writer.writerow([self.offset + i, int(s)])


def _check_irreducible(P: np.ndarray) -> None:
    n_comp, _ = connected_components(P > 0, directed=True, connection="strong")
    if n_comp != 1:
        raise ModelError("reducible Markov chain has no spectral gap")


def _rng(*seeds: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(s) for s in seeds]))


def _draw(env: EnvironmentModel, rng: np.random.Generator, n_paths: int, length: int) -> np.ndarray:
    """Draw an ``(n_paths, length)`` array of stationary state sequences."""
    if env.kind == "iid":
        return rng.choice(env.state_count, size=(n_paths, length), p=env.marginal)
    cum = np.cumsum(env.transition, axis=1)
    cum[:, -1] = 1.0
    out = np.empty((n_paths, length), dtype=np.int64)
    out[:, 0] = rng.choice(env.state_count, size=n_paths, p=env.marginal)
    u = rng.random((n_paths, length))
    for t in range(1, length):
        prev = out[:, t - 1]
        out[:, t] = (u[:, t, None] > cum[prev]).sum(axis=1)
    return out


def sample_path(env: EnvironmentModel, offset: int, length: int, seed: int | None = None) -> EnvPath:
    """Sample a stationary window of ``length`` coordinates starting at ``offset``.

    The output depends only on ``(env, length, seed)``; ``offset`` only labels
    the coordinates.
    """
    if length < 1:
        raise ArgumentError("path length must be positive")
    seed = env.seed if seed is None else seed
    states = _draw(env, _rng(seed, env.seed), 1, int(length))[0]
    return EnvPath(int(offset), states)


def sample_paths(env: EnvironmentModel, n_paths: int, length: int, seed: int) -> np.ndarray:
    """Independent stationary windows as an ``(n_paths, length)`` state array."""
    if length < 1 or n_paths < 1:
        raise ArgumentError("need at least one path of positive length")
    return _draw(env, _rng(seed, env.seed, 1), int(n_paths), int(length))


@dataclass
class MixingProfile:
    """Analytic upper bounds on the mixing coefficients of an environment.

    Attributes
    ----------
    alpha_bound, psi_u_bound : callable
        ``n -> bound``; both are nonincreasing.
    provenance : str
        ``"analytic"`` for bounds derived from the model.
    rho : float
        Second-largest eigenvalue modulus of the transition matrix (0 for iid).
    alpha_constant : float
        Constant ``C`` in ``alpha_bound(n) = min(1/4, C rho^n)``.
    psi_limsup : float
        Limit of ``psi_u_bound(n)`` as ``n`` grows.
    """

    alpha_bound: Callable[[int], float]
    psi_u_bound: Callable[[int], float]
    provenance: str
    rho: float
    alpha_constant: float
    psi_limsup: float

    def alpha_product_bound(self, gaps: Iterable[int]) -> float:
        """Bound ``4 sum alpha(gap)`` on ``|E prod U_j - prod E U_j|`` for [0,1]-valued blocks."""
        return 4.0 * sum(self.alpha_bound(int(g)) for g in gaps)

    def psi_product_bound(self, gap: int, means: Sequence[float]) -> float:
        """Bound ``(1 + psi_U(gap))^{d-1} prod E Y_i`` on ``E prod Y_i`` for nonnegative blocks."""
        means = np.asarray(means, dtype=float)
        d = means.size
        return float((1.0 + self.psi_u_bound(int(gap))) ** max(d - 1, 0) * np.prod(means))


def _second_modulus(P: np.ndarray) -> float:
    w = np.linalg.eigvals(P)
    w = w[np.argsort(-np.abs(w))]
    # the Perron root is 1; drop one copy of it
    k = int(np.argmin(np.abs(w - 1.0)))
    rest = np.delete(w, k)
    return float(np.max(np.abs(rest))) if rest.size else 0.0


def mixing_bounds(env: EnvironmentModel) -> MixingProfile:
    """Analytic bounds on ``alpha(n)`` and ``psi_U(n)``.

    For a Markov chain started from ``pi``,

    * ``psi_U(n) = max_{i,j} (P^n(i,j) / pi_j - 1)^+`` exactly (the supremum over
      past and future events is attained on single-coordinate events), and
    * ``alpha(n) <= min(1/4, sum_i pi_i TV(P^n(i, .), pi)) <= min(1/4, C rho^n)``
      where ``C = sup_m min(1/4, TV(m)) / rho^m`` is evaluated numerically.
    """
    if env.kind == "iid":
        def alpha_iid(n: int) -> float:
            return 0.25 if n <= 0 else 0.0

        def psi_iid(n: int) -> float:
            return float("inf") if n <= 0 else 0.0

        return MixingProfile(alpha_iid, psi_iid, "analytic", 0.0, 0.25, 0.0)

    P = env.transition
    pi = env.marginal
    _check_irreducible(P)
    rho = _second_modulus(P)
    if rho >= 1.0 - 1e-12:
        raise ModelError("periodic Markov chain has no spectral gap")
    if np.any(pi <= 0):
        raise ModelError("stationary law must charge every state")

    def tv(Pm: np.ndarray) -> float:
        return float(pi @ (0.5 * np.abs(Pm - pi[None, :]).sum(axis=1)))

    if rho == 0.0:
        constant = 0.25
    else:
        # beyond the round-off floor of TV the ratio only measures noise
        floor = 1e-8
        m_max = int(min(5000, np.ceil(np.log(floor) / np.log(rho)) + 1))
        Pm = np.eye(P.shape[0])
        ratios = []
        for m in range(m_max + 1):
            t = tv(Pm)
            if t < floor:
                break
            ratios.append(min(0.25, t) / rho**m)
            Pm = Pm @ P
        constant = float(max(ratios))

    def alpha_markov(n: int) -> float:
        if n <= 0:
            return 0.25
        return float(min(0.25, constant * rho**n))

    cache: dict[int, float] = {}

    def psi_markov(n: int) -> float:
        if n <= 0:
            return float("inf")
        if n not in cache:
            Pn = np.linalg.matrix_power(P, int(n))
            cache[n] = float(max(0.0, np.max(Pn / pi[None, :] - 1.0)))
        return cache[n]

    return MixingProfile(alpha_markov, psi_markov, "analytic", rho, constant, 0.0)


def alpha_lemma_exponent(M: float, x: float) -> float:
    """Exponent ``1 - x (M + 1)`` of the polynomial product bound under ``alpha = O(r^-M)``."""
    if not 0 < x < 1:
        raise ArgumentError("x must lie in (0, 1)")
    return 1.0 - x * (M + 1.0)


def psi_condition(env: EnvironmentModel, mean_g: float) -> bool:
    """Check ``limsup psi_U(k) < 1 / E[g] - 1`` analytically."""
    if mean_g <= 0:
        return True
    return mixing_bounds(env).psi_limsup < 1.0 / mean_g - 1.0


@dataclass(frozen=True)
class ProductDecayRow:
    n: int
    mc_estimate: float
    mc_stderr: float
    lemma_bound: float
    closed_form: float | None


def _product_bound(profile: MixingProfile, mean_g: float, n: int) -> float:
    """Best of the psi and alpha block bounds on ``E prod_{j<n} g(theta^j omega)``.

    ``g`` depends on ``omega_0`` only, so subsampling the factors at spacing
    ``r`` gives ``d = [(n-1)/r] + 1`` factors separated by gaps of ``r``.
    """
    best = 1.0
    for r in range(1, n + 1):
        d = (n - 1) // r + 1
        base = mean_g**d
        best = min(best, base + 4.0 * (d - 1) * profile.alpha_bound(r))
        psi = profile.psi_u_bound(r)
        if np.isfinite(psi):
            best = min(best, (1.0 + psi) ** (d - 1) * base)
    return float(best)


def product_decay(env: EnvironmentModel, g, n_max: int, mc_samples: int, seed: int = 0) -> list[ProductDecayRow]:
    """Monte Carlo and lemma bounds for ``E[g(omega_0) ... g(omega_{n-1})]``.

    Parameters
    ----------
    env : EnvironmentModel
    g : array_like
        Per-state values in ``[0, 1]`` with ``E[g] < 1``.
    n_max : int
        Largest product length.
    mc_samples : int
        Number of independent paths.
    seed : int
        Monte Carlo seed.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (env.state_count,) or np.any(g < 0) or np.any(g > 1):
        raise ArgumentError("g must assign a value in [0, 1] to every state")
    mean_g = env.mean(g)
    if mean_g >= 1.0:
        raise PreconditionError("E[g] >= 1: products do not decay")
    if n_max < 1 or mc_samples < 2:
        raise ArgumentError("need n_max >= 1 and at least two samples")
    states = sample_paths(env, mc_samples, n_max, seed)
    prods = np.cumprod(g[states], axis=1)
    profile = mixing_bounds(env)
    rows = []
    for n in range(1, n_max + 1):
        col = prods[:, n - 1]
        closed = mean_g**n if env.kind == "iid" else None
        rows.append(ProductDecayRow(
            n=n,
            mc_estimate=float(col.mean()),
            mc_stderr=float(col.std(ddof=1) / np.sqrt(mc_samples)),
            lemma_bound=_product_bound(profile, mean_g, n),
            closed_form=closed,
        ))
    return rows


def running_sup_moments(env: EnvironmentModel, g, weights, q: float, n_max: int,
                        sample_sizes: Sequence[int], seed: int = 0) -> list[float]:
    """Empirical ``E[A^q]`` for ``A = sup_n b_n g_{omega,n}`` at increasing sample sizes.

    Bounded output as the sample size grows is the finite-moment signature of
    the running-supremum lemma.
    """
    g = np.asarray(g, dtype=float)
    b = np.asarray(weights, dtype=float)[:n_max]
    states = sample_paths(env, max(sample_sizes), n_max, seed)
    A = np.max(b[None, :] * np.cumprod(g[states], axis=1), axis=1)
    return [float(np.mean(A[:m] ** q)) for m in sample_sizes]


@dataclass(frozen=True)
class VisitRecord:
    """Visits ``m_1 < m_2 < ...`` of a path to a level set (local indices, ``m_0 = 0``)."""

    level_set_id: str
    visit_indices: np.ndarray
    path_length: int

    def __post_init__(self):
        v = np.asarray(self.visit_indices, dtype=np.int64)
        object.__setattr__(self, "visit_indices", v)
        if v.size and (np.any(np.diff(v) <= 0) or v[0] < 0 or v[-1] >= self.path_length):
            raise ArgumentError("visit indices must increase inside the path")

    def m(self, k: int) -> int:
        """``k``-th visit time, with ``m_0 = 0``."""
        if k == 0:
            return 0
        if not 1 <= k <= self.visit_indices.size:
            raise WindowError(f"visit {k} not recorded")
        return int(self.visit_indices[k - 1])

    @property
    def count(self) -> int:
        return int(self.visit_indices.size)


def _predicate(level_set) -> Callable[[np.ndarray], np.ndarray]:
    if callable(level_set):
        return lambda s: np.asarray([bool(level_set(int(x))) for x in s])
    members = np.asarray(list(level_set), dtype=np.int64)
    return lambda s: np.isin(s, members)


def visiting_times(path: EnvPath, level_set, level_set_id: str = "A") -> VisitRecord:
    """Visit times of ``theta^k omega`` to ``{omega_0 in level_set}`` for ``k >= 1``.

    ``level_set`` is either a predicate on states or a collection of states.
    Indices are local to the window, so ``m_k`` counts steps from the window start.
    """
    hits = _predicate(level_set)(path.states)
    idx = np.flatnonzero(hits)
    idx = idx[idx >= 1]
    if idx.size == 0:
        raise EmptyRecordError("the level set is never visited on this path")
    return VisitRecord(level_set_id, idx, len(path))


@dataclass(frozen=True)
class VisitGrowth:
    rate: float
    envelope_sup: float
    exponent: float


def visit_growth(record: VisitRecord, p: float, delta: float) -> VisitGrowth:
    """Fit ``m_k ~ rate * k`` and the envelope ``sup_k m_k / k^{1 + 1/p + delta}``."""
    k = np.arange(1, record.count + 1, dtype=float)
    m = record.visit_indices.astype(float)
    rate = float(k @ m / (k @ k))
    exponent = 1.0 + 1.0 / p + delta
    return VisitGrowth(rate, float(np.max(m / k**exponent)), exponent)


@dataclass(frozen=True)
class IndicatorBound:
    mc_estimate: float
    mc_stderr: float
    explicit: float
    c1: float
    bound: float
    within_bound: bool
    closed_form: float | None = field(default=None)


def _explicit_indicator_chain(profile: MixingProfile, q: float, n: np.ndarray, r_max: int = 64) -> np.ndarray:
    """``min(1, n * min_r E_{r,n})`` with the psi and alpha block forms of ``E_{r,n}``."""
    n = np.asarray(n, dtype=np.int64)
    best = np.ones(n.shape)
    for r in range(1, r_max + 1):
        ok = n > 8 * r
        if not np.any(ok):
            break
        d = n // (8 * r)
        e_alpha = q**d + 4.0 * d * profile.alpha_bound(2 * r)
        e = e_alpha
        psi = profile.psi_u_bound(2 * r)
        if np.isfinite(psi):
            e = np.minimum(e, ((1.0 + psi) * q) ** d)
        best = np.where(ok, np.minimum(best, n * e), best)
    return np.minimum(best, 1.0)


def indicator_exp_bound(env: EnvironmentModel, A_prob: float, c: float, k_stride: int, n: int,
                        mc_samples: int = 20000, seed: int = 0, level_states=None,
                        eps: float = 0.9, a: float = 4.0) -> IndicatorBound:
    """Estimate ``E exp(-c sum_{j=0}^{n} 1_A(theta^{k j} omega))`` and its lemma bound.

    The event ``A`` is either the level set ``{omega_0 in level_states}`` or,
    when ``level_states`` is None, an independent mark of probability
    ``A_prob`` attached to every coordinate (a product extension of the
    environment that keeps its mixing coefficients).

    The bound has the form ``c1 n^{2 - eps a} + P(l >= [n/2])`` with ``l = 1``.
    ``c1`` is fitted as the supremum over ``m`` of the explicit block chain
    divided by ``m^{2 - eps a}``.
    """
    if not 0 < A_prob < 1:
        raise ArgumentError("A_prob must lie in (0, 1)")
    if c < 0 or k_stride < 1 or n < 0:
        raise ArgumentError("need c >= 0, k_stride >= 1, n >= 0")
    if a <= 3 or not 0 < eps < 1:
        raise ArgumentError("need a > 3 and eps in (0, 1)")
    length = k_stride * n + 1
    rng = _rng(seed, env.seed, 2)
    states = sample_paths(env, mc_samples, length, seed)[:, ::k_stride]
    if level_states is None:
        hits = rng.random(states.shape) < A_prob
    else:
        members = np.asarray(list(level_states), dtype=np.int64)
        mass = float(env.marginal[members].sum())
        if abs(mass - A_prob) > 1e-12:
            raise ArgumentError("A_prob does not match the level-set mass")
        hits = np.isin(states, members)
    if c == 0:
        vals = np.ones(mc_samples)
    else:
        vals = np.exp(-c * hits.sum(axis=1))
    q = 1.0 - A_prob * (1.0 - np.exp(-c))
    profile = mixing_bounds(env)
    explicit = float(_explicit_indicator_chain(profile, q, np.array([max(n, 1)]))[0])
    grid = np.arange(1, 20001)
    exponent = 2.0 - eps * a
    chain = _explicit_indicator_chain(profile, q, grid)
    c1 = float(np.max(chain / grid.astype(float) ** exponent))
    tail = 0.0 if n // 2 > 1 else 1.0
    bound = c1 * max(n, 1) ** exponent + tail
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(mc_samples))
    closed = float(q ** (n + 1)) if env.kind == "iid" else None
    return IndicatorBound(est, se, explicit, c1, bound, est <= bound + 3 * se, closed)
