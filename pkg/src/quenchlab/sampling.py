"""Monte Carlo Birkhoff sums along a quenched path.

Three samplers share one interface and return prefix sums
``S_m = sum_{k < m} f_{s+k}(x_k)`` at requested step counts ``m``:

``"exact"``
    Linear circle maps ``x -> d x`` with the geometric potential, where the
    invariant law is Lebesgue.  The orbit is drawn backwards: ``x_n`` is
    uniform and each earlier point is a uniformly chosen inverse branch.
    This is an exact orbit sampler and avoids the bit loss of forward
    iteration in floating point.
``"chain"``
    The reverse cell chain of a normalized window: from cell ``i`` at fiber
    ``k + 1`` the source cell ``j`` is drawn with probability ``L[i, j]``.
    Because ``L^T mu_{k+1} = mu_k`` every cell marginal is ``mu_k``.  Exact for
    subshifts with potentials of memory at most two.
``"forward"``
    Start cells drawn with the masses ``mu = h nu``, points uniform inside the
    cell, then forward iteration of the fiber maps.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .environment import EnvPath
from .errors import ArgumentError, WindowError
from .systems import FiberedSystem, RandomFunction
from .transfer import CocycleWindow

__all__ = ["choose_method", "birkhoff_samples"]


def choose_method(system: FiberedSystem, window: CocycleWindow, start: int, n: int) -> str:
    """Pick the most faithful sampler for the fibers in ``[start, start + n)``."""
    if system.family == "sft":
        return "chain"
    linear = all(f.shape == "none" or f.eps == 0.0 for f in system.fibers.values())
    if linear and window.measures is not None:
        mu = window.measure(start)
        if np.max(np.abs(mu * mu.size - 1.0)) < 1e-8:
            return "exact"
    return "forward"


def _record_steps(n: int, record: Sequence[int] | None) -> list[int]:
    steps = [n] if record is None else sorted(set(int(r) for r in record))
    if not steps or steps[0] < 0 or steps[-1] > n:
        raise ArgumentError("record steps must lie in [0, n]")
    return steps


def _exact(system, path, f, start, n, steps, rng, samples):
    x = rng.random(samples)
    total = np.zeros(samples)
    suffix = {}
    if n in steps:
        suffix[n] = total.copy()
    for k in range(n - 1, -1, -1):
        state = path.state_at(start + k)
        d = system.fiber(state).k
        x = (x + rng.integers(0, d, size=samples)) / d
        total += f.evaluate(state, x)
        if k in steps:
            suffix[k] = total.copy()
    return {m: total - suffix[m] for m in steps}


def _row_sampler(entries, rows, u):
    indptr, indices, data = entries.indptr, entries.indices, np.asarray(entries.data.real, dtype=float)
    cum = np.cumsum(data)
    base = np.where(indptr[rows] > 0, cum[np.maximum(indptr[rows] - 1, 0)], 0.0)
    top = cum[indptr[rows + 1] - 1]
    pos = np.searchsorted(cum, base + u * (top - base), side="right")
    pos = np.clip(pos, indptr[rows], indptr[rows + 1] - 1)
    return indices[pos]


def _chain(window, start, n, steps, rng, samples):
    mu = np.clip(np.real(window.measure(start + n)), 0.0, None)
    cell = rng.choice(mu.size, size=samples, p=mu / mu.sum())
    total = np.zeros(samples)
    suffix = {}
    if n in steps:
        suffix[n] = total.copy()
    for k in range(n - 1, -1, -1):
        op = window.op(start + k)
        cell = _row_sampler(op.entries, cell, rng.random(samples))
        total += np.real(window.observable(start + k))[cell]
        if k in steps:
            suffix[k] = total.copy()
    return {m: total - suffix[m] for m in steps}


def _forward(system, path, window, f, start, n, steps, rng, samples):
    mu = np.clip(np.real(window.measure(start)), 0.0, None)
    K = mu.size
    cell = rng.choice(K, size=samples, p=mu / mu.sum())
    x = (cell + rng.random(samples)) / K
    total = np.zeros(samples)
    out = {0: total.copy()} if 0 in steps else {}
    for k in range(n):
        state = path.state_at(start + k)
        total += f.evaluate(state, x)
        x = system.fiber(state)(x)
        if k + 1 in steps:
            out[k + 1] = total.copy()
    return out


def birkhoff_samples(system: FiberedSystem, path: EnvPath, window: CocycleWindow, f: RandomFunction,
                     start: int, n: int, samples: int, seed: int, record: Sequence[int] | None = None,
                     method: str = "auto") -> dict[int, np.ndarray]:
    """Samples of the Birkhoff sums ``S_{start, m} f`` for ``m`` in ``record``.

    Parameters
    ----------
    window : CocycleWindow
        Normalized window covering fibers ``start .. start + n``; its
        measures give the start law (and, for ``"chain"``, the transition
        kernel and the observable cell values).
    record : sequence of int, optional
        Prefix lengths to report; defaults to ``[n]``.

    Returns
    -------
    dict
        ``{m: array of shape (samples,)}``.
    """
    if n < 0 or samples < 1:
        raise ArgumentError("n must be nonnegative and samples positive")
    if start < window.start_offset or start + n > window.stop:
        raise WindowError("the sampled orbit leaves the window")
    steps = _record_steps(n, record)
    rng = np.random.default_rng([int(seed), int(start), int(n)])
    if method == "auto":
        method = choose_method(system, window, start, n)
    if method == "exact":
        return _exact(system, path, f, start, n, steps, rng, samples)
    if method == "chain":
        if window.observables is None:
            raise ArgumentError("the chain sampler reads observable cell values from the window")
        return _chain(window, start, n, steps, rng, samples)
    if method == "forward":
        if system.family != "circle":
            raise ArgumentError("forward iteration needs circle fibers")
        return _forward(system, path, window, f, start, n, steps, rng, samples)
    raise ArgumentError(f"unknown sampling method {method!r}")
