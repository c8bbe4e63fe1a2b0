"""Small model builders shared by the test modules."""

from __future__ import annotations

import math

import numpy as np

from quenchlab.environment import EnvironmentModel, EnvPath, sample_path
from quenchlab.systems import (circle_function, constant_function, jacobian_potential, make_circle_family,
                               make_sft_family, path_geometry, sft_function)
from quenchlab.transfer import Discretization, TwistData

TWO_PI = 2.0 * math.pi


def doubling():
    return make_circle_family(2, {0: (0.0, "none")})


def cos_observable(system, mode: int = 1):
    return circle_function({s: (lambda x, m=mode: np.cos(TWO_PI * m * x)) for s in system.states},
                           {s: TWO_PI * mode for s in system.states})


def two_mode_observable(system):
    return circle_function({s: (lambda x: np.cos(TWO_PI * x) + np.cos(2 * TWO_PI * x)) for s in system.states},
                           {s: 3 * TWO_PI for s in system.states})


def coboundary_observable(system):
    """``u - u o T`` with ``u = cos(2 pi x)``."""
    funcs, lips = {}, {}
    for s in system.states:
        fib = system.fiber(s)
        funcs[s] = (lambda x, fib=fib: np.cos(TWO_PI * x) - np.cos(TWO_PI * fib(x)))
        lips[s] = TWO_PI * (1.0 + system.geometry[s].holder_bound)
    return circle_function(funcs, lips)


def constant_path(length: int, state: int = 0, offset: int = 0) -> EnvPath:
    return EnvPath(offset, np.full(length, state, dtype=np.int64))


def full_shift(d: int = 2):
    return make_sft_family({0: d}, {0: np.ones((d, d))})


def twist_data(system, path, potential, f, disc: Discretization) -> TwistData:
    geo = path_geometry(system, path)
    states = path.states
    n = len(path)
    return TwistData(
        disc=disc,
        alpha=system.holder_exponent,
        gamma=geo.gamma[: n - 1] if n > 1 else geo.gamma,
        xi=geo.xi,
        phi_seminorm=np.array([potential.holder_seminorm(int(s)) for s in states[: n - 1]]),
        f_seminorm=np.array([f.holder_seminorm(int(s)) for s in states[: n - 1]]),
        f_sup=np.array([f.sup_norm(int(s)) for s in states[: n - 1]]),
    )


def random_circle_case(rng: np.random.Generator, length: int):
    """Random two-state perturbed circle family with a random cos/sin observable."""
    eps = rng.uniform(-0.1, 0.1, size=2)
    system = make_circle_family(2, {0: (float(eps[0]), "sin"), 1: (float(eps[1]), "cos", 3)})
    env = EnvironmentModel.iid([0.5, 0.5])
    path = sample_path(env, 0, length, seed=int(rng.integers(2**32)))
    m = int(rng.integers(1, 3))
    ph = float(rng.uniform(0, 1))
    f = circle_function({s: (lambda x, m=m, ph=ph: np.cos(TWO_PI * (m * x + ph))) for s in system.states},
                        {s: TWO_PI * m for s in system.states})
    return system, path, jacobian_potential(system), f


def random_sft_weights(rng: np.random.Generator, d: int = 3, states: int = 2):
    mats, weights = {}, {}
    for s in range(states):
        A = (rng.random((d, d)) < 0.75).astype(int)
        A[np.arange(d), (np.arange(d) + 1) % d] = 1
        A[np.arange(d), np.arange(d)] = 1
        mats[s] = A
        weights[s] = rng.normal(scale=0.5, size=d)
    system = make_sft_family({s: d for s in mats}, mats)
    return system, sft_function(weights)


__all__ = ["doubling", "cos_observable", "two_mode_observable", "coboundary_observable", "constant_path",
           "full_shift", "twist_data", "random_circle_case", "random_sft_weights", "constant_function",
           "jacobian_potential", "TWO_PI"]
