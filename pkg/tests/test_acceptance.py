"""Acceptance suite.

Every criterion below prints one PASS line when it holds (pytest -s shows
them) and fails the run otherwise.  Reference values are closed-form
first-passage probabilities; tolerances are fixed here, not calibrated.

Run:  pytest tests/test_acceptance.py -v -s
"""

import json
import time

import numpy as np
import pytest

from safeprob import (
    NumericsConfig,
    QuerySpec,
    analytic_first_passage,
    check_cbf_constraint,
    convergence_cdf,
    entry_time_cdf,
    exit_time_cdf,
    invariance_ccdf,
    ks_distance,
    make_example,
    simulate_paths,
    validate_barrier,
)
from safeprob.artifacts import empirical_json
from safeprob.distributions import monotonicity_violation
from safeprob.mc_oracle import CdfTable, PathConfig, empirical_cdf_exit
from safeprob.system_model import closed_loop_control_batch, d_phi_batch, lie_g

from conftest import (
    CONVERGENCE_RECOVERY,
    ENTRY_RECOVERY,
    EXIT_DRIFTED,
    INVARIANCE_DRIFTED,
)

SHIPPED_EXAMPLES = ("drifted_bm_1d", "double_integrator", "unicycle_disk")

TIMES_01 = np.linspace(0.0, 1.0, 101)


def _report(criterion, detail):
    print(f"ACCEPTANCE {criterion} PASS: {detail}")


def bm_numerics(lo=0.0, hi=8.0, cells=800, dt=1e-3):
    return NumericsConfig(box_lo=(lo,), box_hi=(hi,), cells=(cells,), dt=dt)


@pytest.fixture(scope="module")
def bm():
    return make_example("drifted_bm_1d")


@pytest.fixture(scope="module")
def di():
    return make_example("double_integrator")


@pytest.fixture(scope="module")
def uni():
    return make_example("unicycle_disk")


@pytest.fixture(scope="module")
def invariance(bm):
    q = QuerySpec(states=[[1.0]], horizon=1.0, times=TIMES_01, numerics=bm_numerics())
    t0 = time.perf_counter()
    res = invariance_ccdf(bm.system, bm.barrier, bm.policy, q)
    return res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def exit_cdf(bm):
    q = QuerySpec(states=[[1.0]], horizon=1.0, times=TIMES_01, numerics=bm_numerics())
    return exit_time_cdf(bm.system, bm.barrier, bm.policy, q)


@pytest.fixture(scope="module")
def recovery(bm):
    q = QuerySpec(states=[[-1.0]], horizon=1.0, times=TIMES_01,
                  numerics=bm_numerics(lo=-8.0, hi=0.0))
    entry = entry_time_cdf(bm.system, bm.barrier, bm.policy, q)
    conv = convergence_cdf(bm.system, bm.barrier, bm.policy, q)
    return entry, conv


@pytest.fixture(scope="module")
def di_solution(di):
    num = NumericsConfig(box_lo=di.box_lo, box_hi=di.box_hi, cells=di.cells, dt=di.dt)
    q = QuerySpec(states=[di.x0], horizon=1.0, times=TIMES_01, numerics=num)
    t0 = time.perf_counter()
    res_exit = exit_time_cdf(di.system, di.barrier, di.policy, q)
    res_inv = invariance_ccdf(di.system, di.barrier, di.policy, q)
    return res_exit, res_inv, time.perf_counter() - t0


@pytest.fixture(scope="module")
def di_mc(di):
    cfg = PathConfig(dt=5e-4, horizon=1.0, n_paths=100_000, seed=20240521)
    t0 = time.perf_counter()
    ens = simulate_paths(di.system, di.barrier, di.policy, di.x0, cfg)
    return ens, time.perf_counter() - t0


@pytest.fixture(scope="module")
def uni_solution(uni):
    num = NumericsConfig(box_lo=uni.box_lo, box_hi=uni.box_hi, cells=uni.cells,
                         dt=uni.dt, boundary_probe=False)
    q = QuerySpec(states=[uni.x0], horizon=0.25,
                  times=np.linspace(0, 0.25, 26), numerics=num)
    res_exit = exit_time_cdf(uni.system, uni.barrier, uni.policy, q)
    res_inv = invariance_ccdf(uni.system, uni.barrier, uni.policy, q)
    return res_exit, res_inv


def test_criterion_1_analytic_invariance(invariance):
    res, elapsed = invariance
    value = res.values[0, -1]
    err = abs(value - INVARIANCE_DRIFTED)
    assert err <= 5e-3
    assert elapsed < 10.0
    _report(1, f"invariance F(x=1,T=1)={value:.5f} vs {INVARIANCE_DRIFTED:.5f} "
               f"(|err|={err:.1e} <= 5e-3), runtime {elapsed:.2f}s < 10s")


def test_criterion_2_analytic_exit(exit_cdf):
    value = exit_cdf.values[0, -1]
    err = abs(value - EXIT_DRIFTED)
    assert err <= 5e-3
    reference = analytic_first_passage(1.0, 1.0, 1.0, 0.0, exit_cdf.times)
    sup = float(np.max(np.abs(exit_cdf.values[0] - reference)))
    assert sup <= 5e-3
    _report(2, f"exit G(t=1)={value:.5f} vs {EXIT_DRIFTED:.5f} (|err|={err:.1e}), "
               f"curve sup-error {sup:.1e} <= 5e-3 on [0,1]")


def test_criterion_3_analytic_recovery(recovery):
    entry, conv = recovery
    n_val = entry.values[0, -1]
    q_val = conv.values[0, -1]
    n_err = abs(n_val - ENTRY_RECOVERY)
    q_err = abs(q_val - CONVERGENCE_RECOVERY)
    assert n_err <= 5e-3
    assert q_err <= 5e-3
    _report(3, f"recovery N(t=1)={n_val:.5f} (|err|={n_err:.1e}), "
               f"Q(T=1)={q_val:.5f} (|err|={q_err:.1e}), both <= 5e-3")


def test_criterion_4_complementarity(invariance, exit_cdf, recovery, di_solution,
                                     uni_solution):
    res_f, _ = invariance
    entry, conv = recovery
    di_exit, di_inv, _ = di_solution
    uni_exit, uni_inv = uni_solution
    worst = 0.0
    for a, b, name in ((res_f, exit_cdf, "drifted_bm F+G"),
                       (conv, entry, "drifted_bm Q+N"),
                       (di_inv, di_exit, "double_integrator F+G"),
                       (uni_inv, uni_exit, "unicycle F+G")):
        gap = float(np.max(np.abs(a.values + b.values - 1.0)))
        assert gap <= 1e-6, f"{name} complementarity gap {gap}"
        worst = max(worst, gap)
    _report(4, f"complementarity F+G=1 and Q+N=1 on all shipped examples, "
               f"worst gap {worst:.1e} <= 1e-6")


def test_criterion_5_mc_cross_validation(di_solution, di_mc):
    res_exit, _, t_pde = di_solution
    ens, t_mc = di_mc
    emp = empirical_cdf_exit(ens, res_exit.times)
    ks = ks_distance(CdfTable(res_exit.times, res_exit.values[0]), emp.table)
    total = t_pde + t_mc
    assert ks <= 0.02
    assert total < 300.0
    assert ens.n_ok == 100_000
    _report(5, f"2D zero-CBF exit CDF: KS(PDE, MC@1e5)={ks:.4f} <= 0.02, "
               f"runtime {total:.0f}s < 300s")


def test_criterion_6_zero_cbf_constraint():
    rng = np.random.default_rng(321)
    checked = []
    for name in SHIPPED_EXAMPLES:
        ex = make_example(name)
        lo = np.asarray(ex.box_lo)
        hi = np.asarray(ex.box_hi)
        states = rng.uniform(lo, hi, size=(10_000, ex.system.n))
        if ex.policy.kind == "zero_cbf":
            u, infeasible = closed_loop_control_batch(ex.policy, ex.system,
                                                      ex.barrier, states)
            feasible = ~infeasible
            slack = ex.policy.rate_at(ex.barrier.phi_at(states[feasible]))
            rates = d_phi_batch(ex.system, ex.barrier, states[feasible], u[feasible])
            violations = int(np.count_nonzero(rates < -slack - 1e-9))
            assert violations == 0
            for x in states[feasible][:50]:
                assert check_cbf_constraint(ex.policy, ex.system, ex.barrier, x)
            checked.append(f"{name}: 0/{feasible.sum()} violations")
        elif ex.policy.kind == "gradient":
            u, _ = closed_loop_control_batch(ex.policy, ex.system, ex.barrier, states)
            nominal = ex.policy.nominal_at(states, ex.system.m)
            lg = lie_g(ex.system, ex.barrier, states)
            gain = ex.policy.c_at(states)
            boost = (d_phi_batch(ex.system, ex.barrier, states, u)
                     - d_phi_batch(ex.system, ex.barrier, states, nominal))
            assert np.all(boost >= -1e-9)
            np.testing.assert_allclose(boost, gain * np.einsum("bm,bm->b", lg, lg),
                                       atol=1e-9)
            checked.append(f"{name}: gradient boost nonnegative")
        else:
            u, _ = closed_loop_control_batch(ex.policy, ex.system, ex.barrier, states)
            np.testing.assert_array_equal(u, ex.policy.nominal_at(states, ex.system.m))
            checked.append(f"{name}: passthrough")
    _report(6, "post-filter rate constraint at 1e4 sampled states per example "
               f"({'; '.join(checked)})")


def test_criterion_7_property_suite(invariance, exit_cdf, recovery, di_solution, bm):
    res_f, _ = invariance
    entry, conv = recovery
    di_exit, di_inv, _ = di_solution

    # Probabilities stay in [0,1] up to 1e-8.
    for res in (res_f, exit_cdf, entry, conv, di_exit, di_inv):
        assert res.values.min() >= -1e-8
        assert res.values.max() <= 1.0 + 1e-8

    # Monotone tabulations: F, Q nonincreasing in T; G, N nondecreasing in t.
    for res in (res_f, exit_cdf, entry, conv, di_exit, di_inv):
        assert monotonicity_violation(res) <= 1e-8

    # F nonincreasing in the level.
    vals = []
    for level in (0.0, 0.3):
        q = QuerySpec(states=[[1.0]], horizon=1.0, level=level, numerics=bm_numerics())
        vals.append(invariance_ccdf(bm.system, bm.barrier, bm.policy, q).values[0, -1])
    assert vals[0] >= vals[1]

    # Gradient-policy generator increment equals c * |L_g phi|^2 within 1e-9.
    uni = make_example("unicycle_disk")
    rng = np.random.default_rng(7)
    states = rng.uniform(np.asarray(uni.box_lo), np.asarray(uni.box_hi), (2000, 3))
    u, _ = closed_loop_control_batch(uni.policy, uni.system, uni.barrier, states)
    nominal = uni.policy.nominal_at(states, uni.system.m)
    lg = lie_g(uni.system, uni.barrier, states)
    boost = (d_phi_batch(uni.system, uni.barrier, states, u)
             - d_phi_batch(uni.system, uni.barrier, states, nominal))
    np.testing.assert_allclose(
        boost, uni.policy.c_at(states) * np.einsum("bm,bm->b", lg, lg), atol=1e-9)

    # Supplied gradients/Hessians agree with finite differences of phi.
    for name in SHIPPED_EXAMPLES:
        ex = make_example(name)
        probes = rng.uniform(np.asarray(ex.box_lo), np.asarray(ex.box_hi),
                             (32, ex.system.n))
        validate_barrier(ex.barrier, probes)

    # Seed determinism of the MC oracle, byte for byte.
    cfg = PathConfig(dt=1e-3, horizon=0.5, n_paths=3000, seed=8675309)
    a = simulate_paths(bm.system, bm.barrier, bm.policy, [1.0], cfg)
    b = simulate_paths(bm.system, bm.barrier, bm.policy, [1.0], cfg)
    assert a.min_phi.tobytes() == b.min_phi.tobytes()
    assert a.max_phi.tobytes() == b.max_phi.tobytes()
    assert a.exit_time.tobytes() == b.exit_time.tobytes()
    assert a.entry_time.tobytes() == b.entry_time.tobytes()
    emp_a = empirical_cdf_exit(a, TIMES_01)
    emp_b = empirical_cdf_exit(b, TIMES_01)
    assert (json.dumps(empirical_json(emp_a), sort_keys=True).encode()
            == json.dumps(empirical_json(emp_b), sort_keys=True).encode())

    _report(7, "range, monotonicity, gradient-increment, derivative-consistency, "
               "and byte-level seed-determinism properties all hold")


def test_criterion_8_discretization_robustness(invariance, exit_cdf, recovery, bm):
    res_f, _ = invariance
    entry, conv = recovery
    base = {
        "F": res_f.values[0, -1],
        "G": exit_cdf.values[0, -1],
        "N": entry.values[0, -1],
        "Q": conv.values[0, -1],
    }

    def solve_all(num_fwd, num_bwd):
        q_fwd = QuerySpec(states=[[1.0]], horizon=1.0, numerics=num_fwd)
        q_bwd = QuerySpec(states=[[-1.0]], horizon=1.0, numerics=num_bwd)
        return {
            "F": invariance_ccdf(bm.system, bm.barrier, bm.policy, q_fwd).values[0, -1],
            "G": exit_time_cdf(bm.system, bm.barrier, bm.policy, q_fwd).values[0, -1],
            "N": entry_time_cdf(bm.system, bm.barrier, bm.policy, q_bwd).values[0, -1],
            "Q": convergence_cdf(bm.system, bm.barrier, bm.policy, q_bwd).values[0, -1],
        }

    refined = solve_all(bm_numerics(cells=1600, dt=5e-4),
                        bm_numerics(lo=-8.0, hi=0.0, cells=1600, dt=5e-4))
    refine_shift = max(abs(refined[k] - base[k]) for k in base)
    assert refine_shift <= 2e-3

    doubled = solve_all(bm_numerics(hi=16.0, cells=1600),
                        bm_numerics(lo=-16.0, hi=0.0, cells=1600))
    box_shift = max(abs(doubled[k] - base[k]) for k in base)
    assert box_shift <= 1e-3

    _report(8, f"halving dx,dt shifts criteria 1-3 values by {refine_shift:.1e} "
               f"<= 2e-3; doubling the box shifts them by {box_shift:.1e} <= 1e-3")
