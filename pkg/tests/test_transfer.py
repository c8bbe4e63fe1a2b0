from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _models import (TWO_PI, constant_function, constant_path, cos_observable, doubling, full_shift,
                     jacobian_potential, random_circle_case, twist_data)
from quenchlab.errors import ArgumentError, DimensionError
from quenchlab.systems import make_circle_family
from quenchlab.transfer import (CocycleWindow, Discretization, OperatorMatrix, build_operator, build_window,
                                compose, duality_residual, leading_eigenvalue, normalize, perturbation_bound,
                                propagate, q_series, refinement_study)

ULAM = Discretization("ulam", 64)


def test_full_shift_operator_is_all_ones():
    sft = full_shift(2)
    op = build_operator(sft, 0, constant_function(sft), Discretization("cylinder", 2))
    assert np.array_equal(op.dense(), np.ones((2, 2)))
    assert leading_eigenvalue(op) == pytest.approx(2.0, abs=1e-14)


def test_doubling_ulam_columns():
    sys = doubling()
    op = build_operator(sys, 0, jacobian_potential(sys), ULAM).dense()
    K = ULAM.resolution
    # cell c maps onto cells 2c and 2c+1 (mod K), each with weight 1/2
    for c in range(K):
        expected = np.zeros(K)
        expected[(2 * c) % K] += 0.5
        expected[(2 * c + 1) % K] += 0.5
        assert np.allclose(op[:, c], expected, atol=1e-14)
    assert np.allclose(op.sum(axis=1), 1.0, atol=1e-14)


def test_zero_twist_matches_plain_build():
    sys = doubling()
    pot = jacobian_potential(sys)
    f = cos_observable(sys)
    a = build_operator(sys, 0, pot, ULAM)
    b = build_operator(sys, 0, pot, ULAM, twist_z=0.0, observable=f)
    assert (a.entries != b.entries).nnz == 0
    assert np.array_equal(a.entries.data, b.entries.data)


def test_twist_requires_observable():
    sys = doubling()
    with pytest.raises(ArgumentError):
        build_operator(sys, 0, jacobian_potential(sys), ULAM, twist_z=0.1)
    with pytest.raises(DimensionError):
        build_operator(sys, 0, jacobian_potential(sys), Discretization("cylinder", 2))


def test_compose_identity_and_order():
    A = np.array([[1.0, 2.0], [0.0, 1.0]])
    B = np.array([[1.0, 0.0], [3.0, 1.0]])
    w = CocycleWindow([OperatorMatrix.from_array(A, 0), OperatorMatrix.from_array(B, 1)])
    assert np.array_equal(compose(w, 0, 0).dense(), np.eye(2))
    assert np.array_equal(compose(w, 0, 2).dense(), B @ A)
    assert not np.array_equal(B @ A, A @ B)


def test_compose_matches_propagate():
    system, path, pot, f = random_circle_case(np.random.default_rng(1), 12)
    w = build_window(system, path, pot, ULAM, observable=f)
    v = np.random.default_rng(2).normal(size=64)
    assert np.allclose(compose(w, 0, 7).dense() @ v, propagate(w, 0, 7, v), atol=1e-12)


def test_normalize_full_shift():
    sft = full_shift(2)
    op = build_operator(sft, 0, constant_function(sft), Discretization("cylinder", 2))
    n = normalize(op, 2.0, np.ones(2), np.ones(2))
    assert np.allclose(n.dense(), 0.5)
    assert n.unit_residual == 0.0


def test_normalize_doubling_unchanged():
    sys = doubling()
    op = build_operator(sys, 0, jacobian_potential(sys), ULAM)
    n = normalize(op, 1.0, np.ones(64), np.ones(64))
    assert np.allclose(n.dense(), op.dense(), atol=0)


def test_normalize_reports_inexact_lambda():
    sft = full_shift(2)
    op = build_operator(sft, 0, constant_function(sft), Discretization("cylinder", 2))
    n = normalize(op, 2.2, np.ones(2), np.ones(2))
    # L1 = 2 / 2.2 on both cells
    assert n.unit_residual == pytest.approx(1 - 2 / 2.2, abs=1e-15)
    with pytest.raises(ArgumentError):
        normalize(op, -1.0, np.ones(2), np.ones(2))


def test_duality_doubling_lebesgue():
    sys = doubling()
    op = build_operator(sys, 0, jacobian_potential(sys), ULAM)
    leb = np.full(64, 1 / 64)
    assert duality_residual(op, leb, leb, np.ones(64), np.ones(64)) == 0.0
    for c in (0, 5, 63):
        ind = np.zeros(64)
        ind[c] = 1.0
        assert duality_residual(op, leb, leb, np.ones(64), ind) <= 1e-10


def test_duality_flags_wrong_measure():
    sys = doubling()
    op = build_operator(sys, 0, jacobian_potential(sys), ULAM)
    leb = np.full(64, 1 / 64)
    point = np.zeros(64)
    point[3] = 1.0
    f = np.cos(TWO_PI * ULAM.centers)
    assert duality_residual(op, point, leb, np.ones(64), f) > 1e-3


def test_q_series_hand_value():
    assert q_series([1.0, 1.0], [2.0, 2.0], 1.0) == pytest.approx(0.75, abs=1e-15)


def test_perturbation_zero_twist():
    sys = doubling()
    pot = jacobian_potential(sys)
    f = cos_observable(sys)
    path = constant_path(8)
    w = build_window(sys, path, pot, ULAM, observable=f)
    chk = perturbation_bound(w, twist_data(sys, path, pot, f, ULAM), 0, 3, 0j)
    assert chk.lhs_norm == 0.0 and chk.rhs_bound == 0.0


def test_perturbation_doubling_small_twist():
    sys = doubling()
    pot = jacobian_potential(sys)
    f = cos_observable(sys)
    path = constant_path(8)
    w = build_window(sys, path, pot, ULAM, observable=f)
    chk = perturbation_bound(w, twist_data(sys, path, pot, f, ULAM), 0, 3, 0.01j)
    assert 0 < chk.lhs_norm <= chk.rhs_bound


def _continuum_step_difference(fiber, phi, f, g, z, x):
    """``(L_z g - L g)(x)`` for one fiber, summed over exact preimages."""
    Y = fiber.preimages(x)
    w = np.exp(phi(Y))
    return (w * (np.exp(z * f(Y)) - 1.0) * g(Y)).sum(axis=1), w.sum(axis=1).max()


def test_perturbation_bound_in_the_continuum():
    # one step of the lemma on the perturbed circle, with norms measured on
    # exact preimages rather than on cell averages
    rng = np.random.default_rng(6)
    x = np.arange(20000) / 20000
    for _ in range(20):
        system, path, pot, f = random_circle_case(rng, 4)
        z = complex(rng.uniform(0, 0.05) * np.exp(1j * rng.uniform(0, 2 * np.pi)))
        s = int(path.states[0])
        data = twist_data(system, path, pot, f, ULAM)
        fib = system.fiber(s)
        for g, g_norm in ((lambda y: np.ones_like(y), 1.0),
                          (lambda y: np.cos(TWO_PI * y), 1.0 + TWO_PI)):
            d, L1 = _continuum_step_difference(fib, lambda y: pot.evaluate(s, y), lambda y: f.evaluate(s, y),
                                               g, z, x)
            lip = np.abs(np.diff(np.r_[d, d[0]])).max() * x.size
            lhs = (np.abs(d).max() + lip) / g_norm
            S, gam = data.f_sup[0], data.gamma[0]
            rhs = abs(z) * math.exp(abs(z.real) * S) * L1 * (
                (1 + 1 / gam + 2 * data.phi_seminorm[0] / gam) * S + data.f_seminorm[0] / gam)
            assert lhs <= rhs


def test_refinement_converges():
    sys = make_circle_family(2, {0: (0.05, "sin")})
    study = refinement_study(sys, 0, jacobian_potential(sys), [32, 64, 128, 256])
    # the geometric potential has pressure 0, so the Perron roots approach 1
    errs = [abs(lam - 1.0) for lam in study["lambdas"]]
    assert errs[-1] < 1e-3
    assert errs[-1] <= errs[0]


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.1, 0.1), st.integers(16, 96))
def test_geometric_potential_preserves_lebesgue(eps, K):
    # the adjoint of the Ulam matrix with phi = -log|T'| fixes Lebesgue mass
    sys = make_circle_family(2, {0: (eps, "sin")})
    disc = Discretization("ulam", K)
    op = build_operator(sys, 0, jacobian_potential(sys), disc).dense()
    assert np.all(op >= 0)
    leb = np.full(K, 1.0 / K)
    pushed = op.T @ leb
    assert np.allclose(pushed.sum(), 1.0, atol=1e-3)


@settings(max_examples=20, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_twist_is_a_diagonal_rescaling(a, b):
    sys = doubling()
    pot = jacobian_potential(sys)
    f = cos_observable(sys)
    z = complex(a, b)
    plain = build_operator(sys, 0, pot, ULAM).dense()
    tw = build_operator(sys, 0, pot, ULAM, twist_z=z, observable=f).dense()
    fv = f.evaluate(0, ULAM.centers)
    assert np.allclose(tw, plain * np.exp(z * fv)[None, :], atol=1e-13)
    assert math.isfinite(abs(tw).max())
