from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quenchlab.environment import (EnvironmentModel, EnvPath, alpha_lemma_exponent, indicator_exp_bound,
                                   mixing_bounds, product_decay, psi_condition, sample_path, sample_paths,
                                   visit_growth, visiting_times)
from quenchlab.errors import ArgumentError, EmptyRecordError, ModelError, PreconditionError, WindowError

STICKY = [[0.9, 0.1], [0.1, 0.9]]


def test_sample_path_is_deterministic():
    env = EnvironmentModel.iid([0.5, 0.5])
    a = sample_path(env, 0, 8, seed=7)
    b = sample_path(env, 0, 8, seed=7)
    assert np.array_equal(a.states, b.states)
    assert len(a) == 8


def test_different_seeds_differ():
    env = EnvironmentModel.iid([0.5, 0.5])
    a = sample_path(env, 0, 64, seed=7)
    b = sample_path(env, 0, 64, seed=8)
    assert not np.array_equal(a.states, b.states)


def test_markov_stationary_frequency():
    env = EnvironmentModel.markov(STICKY)
    # pi P = pi solved by hand: pi = (1/2, 1/2)
    assert np.allclose(env.marginal, [0.5, 0.5], atol=1e-14)
    path = sample_path(env, 0, 200_000, seed=3)
    freq = np.mean(path.states == 0)
    # relaxation time 1/(1 - 0.8) = 5 inflates the iid standard error by sqrt(9)
    assert abs(freq - 0.5) < 5 * 3 * math.sqrt(0.25 / 200_000)


def test_length_one_path():
    env = EnvironmentModel.iid([0.5, 0.5])
    path = sample_path(env, 0, 1, seed=1)
    assert len(path) == 1
    assert path.state_at(0) in (0, 1)
    with pytest.raises(WindowError):
        path.state_at(1)
    with pytest.raises(WindowError):
        path.window(0, 2)


def test_shift_moves_coordinates():
    path = EnvPath(0, np.array([0, 1, 1, 0]))
    shifted = path.shift(1)
    assert shifted.state_at(0) == path.state_at(1)


def test_iid_alpha_vanishes():
    prof = mixing_bounds(EnvironmentModel.iid([0.3, 0.7]))
    assert all(prof.alpha_bound(n) == 0.0 for n in range(1, 20))
    assert prof.psi_u_bound(1) == 0.0


def test_two_block_product_bound():
    prof = mixing_bounds(EnvironmentModel.markov(STICKY))
    for m in (1, 3, 10):
        assert prof.alpha_product_bound([m]) == pytest.approx(4 * prof.alpha_bound(m), rel=0, abs=0)


def test_sticky_chain_rho():
    prof = mixing_bounds(EnvironmentModel.markov(STICKY))
    assert prof.rho == pytest.approx(0.8, abs=1e-12)
    # TV(m) = 0.5 * 0.8^m exactly; ratios near the 1e-8 TV floor carry round-off
    assert prof.alpha_constant == pytest.approx(0.5, rel=1e-9)


def test_alpha_bound_dominates_exact_tv():
    env = EnvironmentModel.markov([[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.3, 0.3, 0.4]])
    prof = mixing_bounds(env)
    P = env.transition
    pi = env.marginal
    Pn = np.eye(3)
    for n in range(1, 15):
        Pn = Pn @ P
        tv = float(pi @ (0.5 * np.abs(Pn - pi[None, :]).sum(axis=1)))
        assert min(0.25, tv) <= prof.alpha_bound(n) + 1e-15


def test_psi_bound_is_exact_single_coordinate():
    env = EnvironmentModel.markov(STICKY)
    prof = mixing_bounds(env)
    # P^1(i,i)/pi_i - 1 = 0.9/0.5 - 1
    assert prof.psi_u_bound(1) == pytest.approx(0.8, abs=1e-12)
    assert prof.psi_u_bound(2) == pytest.approx(2 * 0.82 - 1, abs=1e-12)


def test_iid_products_closed_form():
    env = EnvironmentModel.iid([0.5, 0.5])
    rows = product_decay(env, [0.5, 1.0], 20, 40_000, seed=5)
    for r in rows:
        assert r.closed_form == pytest.approx(0.75**r.n, rel=1e-14)
        assert abs(r.mc_estimate - r.closed_form) <= 3 * r.mc_stderr + 1e-12


def test_markov_products_within_lemma():
    env = EnvironmentModel.markov(STICKY)
    rows = product_decay(env, [0.5, 1.0], 20, 20_000, seed=2)
    assert psi_condition(env, 0.75)
    for r in rows:
        assert r.closed_form is None
        assert r.mc_estimate <= r.lemma_bound + 3 * r.mc_stderr


def test_products_reject_nondecaying_g():
    env = EnvironmentModel.iid([0.5, 0.5])
    with pytest.raises(PreconditionError):
        product_decay(env, [1.0, 1.0], 5, 100)
    with pytest.raises(ArgumentError):
        product_decay(env, [1.5, 0.0], 5, 100)


def test_alpha_lemma_exponent():
    assert alpha_lemma_exponent(3, 0.9) == pytest.approx(-2.6, abs=1e-12)


def test_full_level_set_visits_every_step():
    path = EnvPath(0, np.zeros(50, dtype=int))
    rec = visiting_times(path, [0])
    assert [rec.m(k) for k in range(1, 10)] == list(range(1, 10))
    assert rec.m(0) == 0


def test_empty_level_set_raises():
    path = EnvPath(0, np.zeros(10, dtype=int))
    with pytest.raises(EmptyRecordError):
        visiting_times(path, [1])


def test_first_visit_mean_is_geometric():
    env = EnvironmentModel.iid([0.5, 0.5])
    firsts = [visiting_times(sample_path(env, 0, 64, seed=s), [0]).m(1) for s in range(4000)]
    # m_1 ~ Geometric(1/2) on {1, 2, ...}: mean 2, variance 2
    assert abs(np.mean(firsts) - 2.0) < 4 * math.sqrt(2.0 / 4000)


def test_visit_rate_kac():
    env = EnvironmentModel.iid([0.25, 0.75])
    rec = visiting_times(sample_path(env, 0, 60_000, seed=11), [0])
    assert rec.count >= 10_000
    assert abs(rec.m(10_000) / 10_000 - 4.0) < 0.05 * 4.0
    growth = visit_growth(rec, p=4, delta=0.1)
    assert abs(growth.rate - 4.0) < 0.2


def test_indicator_bound_zero_c():
    env = EnvironmentModel.iid([0.5, 0.5])
    res = indicator_exp_bound(env, 0.5, 0.0, 1, 10, mc_samples=500)
    assert res.mc_estimate == 1.0


def test_indicator_bound_iid_closed_form():
    env = EnvironmentModel.iid([0.5, 0.5])
    res = indicator_exp_bound(env, 0.5, 1.0, 1, 6, mc_samples=40_000, seed=3)
    expected = ((1 + math.exp(-1)) / 2) ** 7
    assert res.closed_form == pytest.approx(expected, rel=1e-14)
    assert abs(res.mc_estimate - expected) < 4 * res.mc_stderr
    assert res.within_bound


def test_indicator_bound_large_c_counts_no_visits():
    env = EnvironmentModel.iid([0.5, 0.5])
    res = indicator_exp_bound(env, 0.5, 50.0, 1, 4, mc_samples=40_000, seed=4)
    assert abs(res.mc_estimate - 2.0**-5) < 4 * res.mc_stderr


def test_rejects_bad_models():
    with pytest.raises(ArgumentError):
        EnvironmentModel.iid([0.6, 0.6])
    with pytest.raises(ModelError):
        EnvironmentModel.markov([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ModelError):
        mixing_bounds(EnvironmentModel.markov([[0.0, 1.0], [1.0, 0.0]]))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.05, 1.0), min_size=2, max_size=4), st.integers(0, 2**63))
def test_paths_stay_in_state_space(weights, seed):
    p = np.asarray(weights) / np.sum(weights)
    p = p / p.sum()
    env = EnvironmentModel.iid(p)
    states = sample_paths(env, 3, 20, seed)
    assert states.min() >= 0 and states.max() < p.size


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_alpha_bound_nonincreasing(a, b):
    env = EnvironmentModel.markov([[a, 1 - a], [1 - b, b]])
    prof = mixing_bounds(env)
    vals = [prof.alpha_bound(n) for n in range(0, 30)]
    assert all(x >= y - 1e-15 for x, y in zip(vals, vals[1:]))
    assert all(0.0 <= v <= 0.25 for v in vals)
