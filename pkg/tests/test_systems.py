from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quenchlab.environment import EnvironmentModel, EnvPath, sample_path
from quenchlab.errors import ArgumentError, ModelError
from quenchlab.systems import (backward_series, circle_distance, circle_function, constant_function,
                               covering_times, jacobian_potential, make_circle_family, make_sft_family,
                               path_geometry, sft_function)


def test_doubling_geometry():
    geo = make_circle_family(2, {0: (0.0, "none")}).geometry[0]
    assert geo.gamma == 2.0
    assert geo.degree == 2
    assert geo.holder_bound == 2.0
    # Z = sum_j 2^{-j} = 1
    assert geo.z_value == pytest.approx(1.0, abs=1e-15)


def test_sin_perturbation_minimal_expansion():
    geo = make_circle_family(2, {0: (0.01, "sin")}).geometry[0]
    assert geo.gamma == pytest.approx(2 - 0.02 * math.pi, abs=1e-12)
    assert geo.gamma_lower <= geo.gamma


def test_neutral_state_needs_an_expanding_partner():
    sys = make_circle_family(2, {0: (0.0, "none", 1), 1: (0.0, "none")})
    assert sys.geometry[0].gamma == 1.0
    with pytest.raises(ModelError):
        make_circle_family(2, {0: (0.0, "none", 1)})


def test_contracting_fiber_rejected():
    with pytest.raises(ModelError):
        make_circle_family(2, {0: (0.3, "sin")})


def test_sft_cover_times():
    pos = make_sft_family({0: 2}, {0: np.ones((2, 2))})
    path = EnvPath(0, np.zeros(20, dtype=int))
    ct = covering_times(pos, path)
    assert np.all(ct.m == 1) and np.all(ct.j == 1)
    golden = make_sft_family({0: 2}, {0: np.array([[0, 1], [1, 1]])})
    ct = covering_times(golden, path)
    # A^2 = [[1,1],[1,2]] is the first positive power
    assert np.all(ct.m == 2) and np.all(ct.j == 2)


def test_sft_zero_row_rejected():
    with pytest.raises(ModelError):
        make_sft_family({0: 2}, {0: np.array([[1, 1], [0, 0]])})
    with pytest.raises(ArgumentError):
        make_sft_family({0: 2}, {0: np.array([[1, 2], [1, 1]])})


def test_doubling_cover_time_is_one():
    sys = make_circle_family(2, {0: (0.0, "none")})
    path = EnvPath(0, np.zeros(30, dtype=int))
    geo = path_geometry(sys, path)
    assert np.allclose(geo.xi, 0.5)
    ct = covering_times(sys, path, R_const=1.0)
    # min{n: xi^{-1} 2^{-n} <= 1} = 1 and j = min{n: m <= n} = 1
    assert np.all(ct.m == 1) and np.all(ct.j == 1)


def test_constant_cover_time_gives_equal_reversed_time():
    sys = make_circle_family(2, {0: (0.0, "none")})
    path = EnvPath(0, np.zeros(40, dtype=int))
    ct = covering_times(sys, path, R_const=1 / 16)
    M = int(ct.m[0])
    assert M == 5
    assert np.all(ct.m == M) and np.all(ct.j == M)


def test_preimages_map_back():
    fiber = make_circle_family(3, {0: (0.05, "sin")}).fiber(0)
    x = np.linspace(0, 1, 17, endpoint=False)
    pre = fiber.preimages(x)
    assert pre.shape == (17, 3)
    assert np.max(circle_distance(fiber(pre), x[:, None])) < 1e-12


def test_jacobian_potential_of_doubling():
    sys = make_circle_family(2, {0: (0.0, "none")})
    pot = jacobian_potential(sys)
    assert np.allclose(pot.evaluate(0, np.linspace(0, 1, 9)), -math.log(2))
    assert pot.holder_seminorm(0) == 0.0


def test_random_function_norms():
    sys = make_circle_family(2, {0: (0.0, "none")})
    f = circle_function({0: lambda x: np.cos(2 * np.pi * x)}, {0: 2 * np.pi})
    assert f.sup_norm(0) == pytest.approx(1.0, abs=1e-12)
    assert f.holder_seminorm(0) == pytest.approx(2 * np.pi)
    c = constant_function(sys, 3.0)
    assert c.holder_seminorm(0) == 0.0
    t = sft_function({0: np.array([0.0, 1.0, -1.0])})
    assert t.holder_seminorm(0) == 2.0
    assert t.holder_seminorm(0, r=0.5) == 0.0


def test_backward_series_geometric():
    val, tail = backward_series(np.ones(200), np.full(200, 0.5), 0.5, 1.0)
    assert val + tail == pytest.approx(1.0, rel=1e-11)
    assert tail <= 1e-11


def test_path_geometry_recursion():
    sys = make_circle_family(2, {0: (0.0, "none"), 1: (0.0, "none", 3)})
    env = EnvironmentModel.iid([0.5, 0.5])
    path = sample_path(env, 0, 50, seed=2)
    geo = path_geometry(sys, path)
    for i in range(1, 50):
        assert geo.z_value[i] == pytest.approx((1 + geo.z_value[i - 1]) / geo.gamma[i - 1])


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.12, 0.12), st.integers(2, 4))
def test_perturbed_fibers_are_degree_k_covers(eps, k):
    fiber = make_circle_family(k, {0: (eps, "sin")}).fiber(0)
    assert fiber.lift(1.0) - fiber.lift(0.0) == pytest.approx(k)
    x = np.linspace(0, 1, 64, endpoint=False)
    assert np.all(fiber.derivative(x) > 0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_circle_distance_is_a_metric_on_the_circle(x, y):
    d = float(circle_distance(x, y))
    assert 0 <= d <= 0.5
    assert d == pytest.approx(float(circle_distance(y, x)))
    assert float(circle_distance(x, x + 1.0)) == pytest.approx(0.0, abs=1e-12)
