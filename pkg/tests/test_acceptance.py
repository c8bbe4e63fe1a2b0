"""Acceptance criteria AC1-AC12.

Each test prints one ``ACn PASS|FAIL`` line with its runtime and the measured
quantities, then asserts.  Run with ``pytest -v tests/test_acceptance.py``.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from _models import (coboundary_observable, constant_path, cos_observable, doubling, jacobian_potential,
                     random_circle_case, random_sft_weights, twist_data, two_mode_observable)
from quenchlab.blocks import (block_triplet, build_schedule, fit_constants, induce, twist_radius,
                              visits_for_window)
from quenchlab.cones import birkhoff_check, matrix_orthant_diameter
from quenchlab.environment import EnvironmentModel, product_decay, psi_condition, sample_path
from quenchlab.limits import clt_report, mdp_report, variance
from quenchlab.rpf import decay_rate, normalized_cocycle, solve_triplet
from quenchlab.systems import constant_function, make_circle_family, make_sft_family, path_geometry
from quenchlab.transfer import Discretization, build_window, compose, perturbation_bound
from quenchlab.transfer import test_family as cell_tests


@pytest.fixture
def verdict(capsys):
    """Print one summary line per criterion, visible in the pytest log."""
    t0 = time.perf_counter()

    def emit(name: str, ok: bool, detail: str) -> bool:
        with capsys.disabled():
            print(f"\n{name} {'PASS' if ok else 'FAIL'} ({time.perf_counter() - t0:.2f} s): {detail}")
        return ok

    emit.start = t0
    return emit


def _elapsed(emit) -> float:
    return time.perf_counter() - emit.start


def test_ac01_block_schedule_sandwich(verdict):
    bad = []
    for C1 in (1.0, 4.0, 16.0):
        for beta in (1.5, 2.0, 3.0):
            for eps in (0.25 * beta, 0.5 * beta):
                sch = build_schedule(C1, beta, eps, 0.1, 10_000)
                if not sch.sandwich_holds:
                    bad.append((C1, beta, eps))
    dt = _elapsed(verdict)
    ok = verdict("AC1", not bad and dt < 1.0, f"18 schedules to j = 10^4, violations {bad}, runtime {dt:.3f} s")
    assert ok


def test_ac02_cone_contraction(verdict):
    rng = np.random.default_rng(2024)
    worst = -math.inf
    for _ in range(100):
        A = rng.uniform(0.01, 1.0, (8, 8))
        pairs = [(rng.uniform(0.01, 1, 8), rng.uniform(0.01, 1, 8)) for _ in range(64)]
        res = birkhoff_check(A, pairs)
        assert res["diameter"] == pytest.approx(matrix_orthant_diameter(A))
        worst = max(worst, res["factor"] - res["tanh_quarter"])
    dt = _elapsed(verdict)
    ok = verdict("AC2", worst <= 1e-9 and dt < 5.0,
                 f"max(factor - tanh(D/4)) = {worst:.3e} over 100 matrices x 64 pairs, runtime {dt:.2f} s")
    assert ok


def test_ac03_rpf_exactness(verdict):
    sft = make_sft_family({0: 2}, {0: np.ones((2, 2))})
    t = solve_triplet(build_window(sft, constant_path(40), constant_function(sft), Discretization("cylinder", 2)), 10)
    e_shift = max(np.max(np.abs(t.lambdas - 2.0)), max(np.max(np.abs(h - 1.0)) for h in t.h),
                  max(np.max(np.abs(nu - 0.5)) for nu in t.nu))
    sys = doubling()
    t = solve_triplet(build_window(sys, constant_path(40), jacobian_potential(sys), Discretization("ulam", 256)), 10)
    e_dbl = max(np.max(np.abs(t.lambdas - 1.0)), max(np.max(np.abs(h - 1.0)) for h in t.h),
                max(np.max(np.abs(nu - 1 / 256)) for nu in t.nu))
    ok = verdict("AC3", e_shift <= 1e-10 and e_dbl <= 1e-10,
                 f"full 2-shift error {e_shift:.1e}, doubling error {e_dbl:.1e}")
    assert ok


def test_ac04_cocycle_growth_sandwich(verdict):
    # P h_a = Lambda h_b and nu_b P = Lambda nu_a give
    #   Lambda |h_b| / |h_a| <= s_max(P) <= Lambda sqrt(max h_b / min h_a * max nu_a / min nu_b)
    rng = np.random.default_rng(4)
    checked, fails, worst = 0, 0, math.inf
    for _ in range(50):
        system, pot = random_sft_weights(rng)
        length = int(rng.integers(8, 13))
        path = sample_path(EnvironmentModel.iid([0.5, 0.5]), 0, length, seed=int(rng.integers(2**31)))
        w = build_window(system, path, pot, Discretization("cylinder", 3))
        # the triplet relations hold exactly whatever the burn-in convergence
        t = solve_triplet(w, 3, tol=math.inf)
        n = len(t) - 1
        P = compose(w, t.start, n).dense()
        lam = float(np.prod(t.lambdas[:n]))
        sig = float(np.linalg.svd(P, compute_uv=False)[0])
        ha, hb, na, nb = t.h[0], t.h[n], t.nu[0], t.nu[n]
        lo = lam * np.linalg.norm(hb) / np.linalg.norm(ha)
        hi = lam * math.sqrt(hb.max() / ha.min() * na.max() / nb.min())
        checked += 1
        fails += not (lo <= sig <= hi)
        worst = min(worst, sig - lo, hi - sig)
    ok = verdict("AC4", fails == 0, f"{checked} cocycles of length <= 12, sandwich violations {fails}, "
                                    f"smallest slack {worst:.3e}")
    assert ok


def test_ac05a_uniform_doubling_exponential(verdict):
    sys = doubling()
    disc = Discretization("ulam", 768)
    _, nw = normalized_cocycle(sys, constant_path(120), jacobian_potential(sys), disc, 20)
    rep = decay_rate(nw, cell_tests(disc, 12, 1), 40, disc=disc)
    target = -math.log(2)
    ok = rep.regime == "exponential" and abs(rep.exp_rate - target) <= 0.15 * abs(target)
    ok = verdict("AC5a", ok, f"regime {rep.regime}, rate {rep.exp_rate:.4f} vs -log 2 = {target:.4f}")
    assert ok


def test_ac05b_neutral_mixture_subexponential(verdict):
    sys = make_circle_family(2, {0: (0.0, "none", 1), 1: (0.0, "none")})
    env = EnvironmentModel.iid([0.5, 0.5])
    disc = Discretization("ulam", 768)
    n_max, burn = 512, 60
    path = sample_path(env, 0, n_max + 2 * burn + 2, seed=2)
    _, nw = normalized_cocycle(sys, path, jacobian_potential(sys), disc, burn)
    rep = decay_rate(nw, cell_tests(disc, 12, 1), n_max, disc=disc)
    d = np.array([v for _, v in rep.table[1:]])
    n = np.arange(1, n_max + 1, dtype=float)
    # running max of n^beta_fit * decay, kept in logs
    logR = np.maximum.accumulate(np.where(d > 0, np.log(np.where(d > 0, d, 1.0)) - rep.poly_exponent * np.log(n),
                                          -np.inf))
    R = np.exp(np.minimum(logR, 700.0))
    stable = np.isfinite(logR[-1]) and logR[-1] <= logR[n_max // 2 - 1] + math.log(1.1)
    ok = rep.regime == "polynomial" and stable
    ok = verdict("AC5b", ok, f"regime {rep.regime} (exp rate {rep.exp_rate:.3f}, poly exponent "
                             f"{rep.poly_exponent:.3f}), envelope R {R[n_max // 2 - 1]:.3e} -> {R[-1]:.3e}")
    assert ok


def test_ac06_perturbation_inequality(verdict):
    rng = np.random.default_rng(6)
    # center-value weights put O(|z|/K) jumps into the difference, which the
    # neighbouring-cell Holder quotient reads as an O(|z|) seminorm at any K
    disc = Discretization("ulam", 512)
    worst, fails = 0.0, 0
    for _ in range(50):
        system, path, pot, f = random_circle_case(rng, 8)
        w = build_window(system, path, pot, disc, observable=f)
        data = twist_data(system, path, pot, f, disc)
        r = rng.uniform(0, 0.05)
        z = r * np.exp(1j * rng.uniform(0, 2 * np.pi))
        n = int(rng.integers(1, 7))
        chk = perturbation_bound(w, data, 0, n, complex(z), slack=0.05)
        fails += not chk.holds
        worst = max(worst, chk.lhs_norm / chk.rhs_bound)
    ok = verdict("AC6", fails == 0, f"50 cases, violations {fails}, max lhs/rhs {worst:.3f}")
    assert ok


def test_ac07_variance(verdict):
    sys = doubling()
    pot = jacobian_potential(sys)
    _, nw = normalized_cocycle(sys, constant_path(600), pot, Discretization("ulam", 768), 15,
                               observable=cos_observable(sys))
    s_cos = variance(nw, 512, 32).sigma2_series
    _, nw = normalized_cocycle(sys, constant_path(600), pot, Discretization("ulam", 4096), 15,
                               observable=coboundary_observable(sys))
    s_cob = variance(nw, 512, 32).sigma2_series
    # cos(2 pi x) has b(k) = 0 exactly, so Sigma_n^2 / n never moves; the
    # two-mode observable has b(1) = 1/2 and carries the rate
    _, nw = normalized_cocycle(sys, constant_path(2**12 + 40), pot, Discretization("ulam", 768), 15,
                               observable=two_mode_observable(sys))
    slope = variance(nw, 2**12, 32).convergence_slope
    dt = _elapsed(verdict)
    ok = abs(s_cos - 0.5) <= 0.002 and s_cob <= 1e-6 and slope <= -0.4 and dt < 30
    ok = verdict("AC7", ok, f"Sigma^2(cos) = {s_cos:.6f}, Sigma^2(coboundary) = {s_cob:.2e}, "
                            f"convergence slope {slope:.3f}, runtime {dt:.1f} s")
    assert ok


def test_ac08_berry_esseen(verdict):
    sys = doubling()
    f = cos_observable(sys)
    grid = [2**k for k in range(8, 14)]
    path = constant_path(grid[-1] + 40)
    _, nw = normalized_cocycle(sys, path, jacobian_potential(sys), Discretization("ulam", 768), 15, observable=f)
    rep = clt_report(nw, sys, path, f, grid, 200_000, seed=0)
    ks = [k for _, k in rep.ks_table]
    dominated = all(k <= b for k, (_, _, _, b) in zip(ks, rep.esseen_table))
    dt = _elapsed(verdict)
    ok = rep.be_slope <= -0.4 and dominated and dt < 180
    ok = verdict("AC8", ok, f"KS {['%.4f' % k for k in ks]}, slope {rep.be_slope:.3f} (R^2 {rep.be_r2:.2f}), "
                            f"Esseen dominates {dominated}, runtime {dt:.0f} s")
    assert ok


def test_ac09_nonuniform_clt(verdict):
    # state 0 has a neutral fixed point: T'(0) = 2 - 2 pi eps cos(0) = 1
    sys = make_circle_family(2, {0: (1.0 / (2.0 * math.pi), "sin"), 1: (0.0, "none", 3)})
    env = EnvironmentModel.markov([[0.7, 0.3], [0.4, 0.6]])
    f = cos_observable(sys)
    n, burn = 2**13, 40
    values = []
    for seed in range(1, 6):
        path = sample_path(env, 0, n + 2 * burn + 2, seed=seed)
        _, nw = normalized_cocycle(sys, path, jacobian_potential(sys), Discretization("ulam", 512), burn,
                                   observable=f)
        values.append(clt_report(nw, sys, path, f, [n], 10_000, seed=seed).ks_table[0][1])
    ok = verdict("AC9", max(values) <= 0.05, f"KS at n = 2^13 over 5 seeds {['%.4f' % v for v in values]}")
    assert ok


def test_ac10_moderate_deviations(verdict):
    sys = doubling()
    f = cos_observable(sys)
    n = 2**14
    path = constant_path(n + 40)
    _, nw = normalized_cocycle(sys, path, jacobian_potential(sys), Discretization("ulam", 256), 15, observable=f)
    rep = mdp_report(nw, sys, path, f, lambda m: m**0.1, [2**10, n], [-0.5, -0.25, 0.25, 0.5],
                     gamma_sets=[(0.5, math.inf)], mc_samples=50_000, seed=1, sigma2=0.5)
    err = max(e for _, e in rep.limit_error[n])
    lo, hi, emp, closure, _, hits = rep.set_rates[0]
    rate_err = abs(emp - closure) / abs(closure)
    ok = err <= 0.10 and rate_err <= 0.25
    ok = verdict("AC10", ok, f"max cumulant error {err:.4f} at n = 2^14; interval rate {emp:.4f} vs "
                             f"{closure:.4f} (relative error {rate_err:.2f}, {hits} hits)")
    assert ok


def test_ac11_mixing_products(verdict):
    iid = EnvironmentModel.iid([0.5, 0.5])
    rows = product_decay(iid, [1.0, 0.5], 20, 200_000, seed=11)
    iid_ok = all(abs(r.mc_estimate - 0.75**r.n) <= 3 * r.mc_stderr + 1e-15 for r in rows)
    markov = EnvironmentModel.markov([[0.8, 0.2], [0.2, 0.8]])
    g = [1.0, 0.5]
    psi_ok = psi_condition(markov, markov.mean(g))
    mrows = product_decay(markov, g, 20, 200_000, seed=12)
    env_ok = all(r.mc_estimate <= r.lemma_bound + 3 * r.mc_stderr for r in mrows)
    ok = verdict("AC11", iid_ok and psi_ok and env_ok,
                 f"iid vs (3/4)^n within 3 SE {iid_ok}; psi_U condition {psi_ok}; Markov envelope {env_ok}")
    assert ok


def test_ac12_block_rpf(verdict):
    env = EnvironmentModel.iid([0.5, 0.5])
    sys = make_circle_family(2, {0: (0.05, "sin"), 1: (0.1, "sin", 3)})
    path = sample_path(env, 0, 400, seed=3)
    disc = Discretization("ulam", 256)
    pot = jacobian_potential(sys)
    f = cos_observable(sys)
    raw = build_window(sys, path, pot, disc, observable=f)
    tr = solve_triplet(raw, 60)
    from quenchlab.rpf import normalized_window
    nw = normalized_window(raw, tr)
    vis = visits_for_window(path, nw, [0])
    states = path.window(nw.start_offset, len(nw) + 1)
    geo = path_geometry(sys, path)
    lo = nw.start_offset
    fit = fit_constants(vis, [f.holder_norm(int(s)) for s in states], geo.gamma[lo:lo + len(nw) + 1],
                        geo.xi[lo:lo + len(nw) + 1])
    sch = build_schedule(4.0, 2.0, 0.5, 0.1, 40)
    tests = cell_tests(disc, 16, 0)
    cc = induce(nw, vis, sch, fit, disc=disc, check_blocks=6, tests=tests)
    J = min(2, cc.induced.blocks - 1)
    r, _ = twist_radius(cc, fit, J)
    grid = [0.0, r / 8, -r / 8, 1j * r / 8, -1j * r / 8, r / 2, 1j * r / 2, r]
    bt = block_triplet(cc, J, grid, fit=fit, radius=r, tests=tests)
    z0 = 0j
    base_err = max(np.max(np.abs(bt.lambdas[z0] - 1.0)),
                   max(np.max(np.abs(h - 1.0)) for h in bt.h[z0]),
                   max(np.abs(nu - nw.measure(cc.fiber(j))).sum() for j, nu in enumerate(bt.nu[z0])))
    # raw cocycle: joined eigenvalues are products of base eigenvalues over the block
    raw_bt = block_triplet(cc, J, [0.0], radius=1.0, window=raw, tests=[])
    prods = np.array([np.prod(tr.lambdas[cc.fiber(j) - tr.start: cc.fiber(j + 1) - tr.start])
                      for j in range(cc.induced.blocks)])
    # the last block carries the uniform eigenmeasure anchor of the raw sweep
    raw_err = float(np.max(np.abs(raw_bt.lambdas[z0][:-1] / prods[:-1] - 1.0)))
    norm_err = max(max(v["nu_one"], v["nu_h"]) for v in bt.residuals.values())
    ratio = max(bt.ratio.values())
    ok = base_err <= 1e-8 and raw_err <= 1e-8 and norm_err <= 1e-8 and ratio <= 0.2
    ok = verdict("AC12", ok, f"z = 0 vs base triplet {base_err:.1e} (raw lambda products {raw_err:.1e}), "
                             f"normalization over {len(grid)} twists {norm_err:.1e}, decay ratio {ratio:.2e}, "
                             f"{cc.induced.blocks} blocks, radius {r:.2e}")
    assert ok
