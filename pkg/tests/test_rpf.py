from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _models import (constant_function, constant_path, doubling, full_shift, jacobian_potential,
                     random_circle_case, random_sft_weights)
from quenchlab.environment import EnvironmentModel, sample_path
from quenchlab.errors import ConvergenceError, WindowError
from quenchlab.rpf import (decay_rate, equivariance_residual, h_bounds, hilbert_distance_positive, lambda_bounds,
                           normalized_cocycle, normalized_potential, normalized_window, q_values, solve_triplet)
from quenchlab.systems import make_sft_family, sft_function
from quenchlab.transfer import Discretization, build_window, compose
from quenchlab.transfer import test_family as cell_tests

CYL2 = Discretization("cylinder", 2)


def test_full_shift_triplet():
    sft = full_shift(2)
    w = build_window(sft, constant_path(30), constant_function(sft), CYL2)
    t = solve_triplet(w, 8)
    assert np.allclose(t.lambdas, 2.0, atol=1e-12)
    for h, nu in zip(t.h, t.nu):
        assert np.allclose(h, 1.0, atol=1e-12)
        assert np.allclose(nu, 0.5, atol=1e-12)


def test_doubling_triplet_is_lebesgue():
    sys = doubling()
    disc = Discretization("ulam", 256)
    w = build_window(sys, constant_path(40), jacobian_potential(sys), disc)
    t = solve_triplet(w, 10)
    assert np.max(np.abs(t.lambdas - 1.0)) < 1e-12
    assert max(np.max(np.abs(h - 1.0)) for h in t.h) < 1e-12
    assert max(np.max(np.abs(nu - 1 / 256)) for nu in t.nu) < 1e-14


def test_constant_weighted_sft_matches_perron_root():
    A = np.array([[1, 1], [1, 0]])
    w8 = np.array([0.3, -0.4])
    sft = make_sft_family({0: 2}, {0: A})
    pot = sft_function({0: w8})
    w = build_window(sft, constant_path(60), pot, CYL2)
    t = solve_triplet(w, 25)
    M = (A * np.exp(w8)[:, None]).T
    perron = float(np.max(np.abs(np.linalg.eigvals(M))))
    assert np.allclose(t.lambdas, perron, rtol=1e-10)


def test_residuals_and_normalization():
    system, path, pot, f = random_circle_case(np.random.default_rng(3), 80)
    disc = Discretization("ulam", 128)
    w = build_window(system, path, pot, disc)
    t = solve_triplet(w, 25)
    assert np.max(t.normalization_residual) < 1e-12
    assert np.max(t.eigen_residual) < 1e-12
    nw = normalized_window(w, t)
    for k in range(len(t)):
        assert nw.op(t.start + k).unit_residual < 1e-10
        assert equivariance_residual(nw, t.start + k) < 1e-10
    ones = np.ones(128)
    assert np.max(np.abs(compose(nw, t.start, 10).dense() @ ones - 1.0)) < 1e-10


def test_short_window_and_convergence_errors():
    sys = doubling()
    disc = Discretization("ulam", 64)
    w = build_window(sys, constant_path(10), jacobian_potential(sys), disc)
    with pytest.raises(WindowError):
        solve_triplet(w, 6)
    # a rank-one operator converges after a single pullback
    mix = full_shift(2)
    w = build_window(mix, constant_path(12), sft_function({0: np.array([0.0, 3.0])}), CYL2)
    t = solve_triplet(w, 5)
    assert t.trace[-1][1] <= 1e-10


def test_convergence_error_carries_trace():
    A = np.array([[1, 1], [1, 0]])
    sft = make_sft_family({0: 2}, {0: A})
    w = build_window(sft, constant_path(12), sft_function({0: np.array([0.3, -0.4])}), CYL2)
    # two pullback steps leave a projective error far above 1e-12
    with pytest.raises(ConvergenceError) as exc:
        solve_triplet(w, 2, tol=1e-12)
    assert len(exc.value.trace) > 0 and max(exc.value.trace) > 1e-12


def test_lambda_bounds_hold():
    system, path, pot, f = random_circle_case(np.random.default_rng(4), 60)
    t, _ = normalized_cocycle(system, path, pot, Discretization("ulam", 128), 20)
    assert all(row[3] for row in lambda_bounds(t, system, path, pot))


def test_normalized_potential_of_doubling():
    sys = doubling()
    path = constant_path(30)
    disc = Discretization("ulam", 64)
    pot = jacobian_potential(sys)
    w = build_window(sys, path, pot, disc)
    t = solve_triplet(w, 8)
    data = normalized_potential(w, t, sys, path, pot, s=3.0)
    for d in data:
        assert np.allclose(d.values.data, -math.log(2), atol=1e-12)
        assert d.branch_residual < 1e-8
    # H = 1 and gamma = 2 give Q = sum_j 2^{-j} = 1; the window holds a finite history
    last = data[-1]
    assert last.Q <= 1.0 <= last.Q + last.Q_tail + 1e-15
    assert last.Q == pytest.approx(1.0, abs=1e-6)


def test_h_bounds_on_perturbed_circle():
    system, path, pot, f = random_circle_case(np.random.default_rng(5), 60)
    disc = Discretization("ulam", 128)
    w = build_window(system, path, pot, disc)
    t = solve_triplet(w, 20)
    H = np.array([pot.H_bound(int(s)) for s in path.states])
    Q, _ = q_values(system, path, H, 1.0)
    rows = h_bounds(t, {i: Q[i] for i in range(len(path))}, 3.0)
    assert rows and all(r[3] for r in rows)


def test_cos_decays_in_one_step():
    sys = doubling()
    disc = Discretization("ulam", 256)
    _, nw = normalized_cocycle(sys, constant_path(60), jacobian_potential(sys), disc, 15)
    g = np.cos(2 * np.pi * disc.centers)
    rep = decay_rate(nw, [g], 5)
    # (1/2)(cos(pi x) + cos(pi x + pi)) = 0
    assert rep.table[1][1] < 1e-13
    const = decay_rate(nw, [np.ones(256)], 5)
    assert all(v == 0.0 for _, v in const.table)


def test_uniform_family_is_exponential():
    env = EnvironmentModel.iid([0.5, 0.5])
    from quenchlab.systems import make_circle_family
    sys = make_circle_family(2, {0: (0.0, "none"), 1: (0.0, "none", 3)})
    disc = Discretization("ulam", 384)
    path = sample_path(env, 0, 100, seed=9)
    _, nw = normalized_cocycle(sys, path, jacobian_potential(sys), disc, 20)
    rep = decay_rate(nw, cell_tests(disc, 12, 1), 10, disc=disc)
    assert rep.regime == "exponential"
    assert rep.exp_rate <= -math.log(2) * 0.85


def test_sft_decay_correlations_below_envelope():
    system, pot = random_sft_weights(np.random.default_rng(7))
    env = EnvironmentModel.iid([0.5, 0.5])
    path = sample_path(env, 0, 140, seed=2)
    disc = Discretization("cylinder", 3)
    _, nw = normalized_cocycle(system, path, pot, disc, 40)
    rep = decay_rate(nw, cell_tests(disc, 8, 3), 20)
    assert rep.regime == "exponential"
    for n, val, env_n in rep.correlations:
        assert val <= env_n * (1 + 1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_random_sft_triplet_is_equivariant(seed):
    rng = np.random.default_rng(seed)
    system, pot = random_sft_weights(rng)
    env = EnvironmentModel.iid([0.5, 0.5])
    path = sample_path(env, 0, 70, seed=int(rng.integers(2**31)))
    t, nw = normalized_cocycle(system, path, pot, Discretization("cylinder", 3), 30)
    assert np.all(t.lambdas > 0)
    for k in range(len(t)):
        assert np.all(t.h[k] > 0) and abs(t.nu[k].sum() - 1.0) < 1e-12
        assert equivariance_residual(nw, t.start + k) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.1, 10), min_size=3, max_size=3), st.floats(0.1, 10))
def test_hilbert_distance_projective(u, c):
    u = np.asarray(u)
    assert hilbert_distance_positive(u, c * u) == pytest.approx(0.0, abs=1e-12)
    v = u[::-1].copy()
    assert hilbert_distance_positive(u, v) == pytest.approx(hilbert_distance_positive(v, u))
