import json
import math
import warnings

import numpy as np
import pytest

from inverse_soc.cost_model import Constant, CostPair, QuadraticCost, RBFSum, Tabulated, Zero, lq_pair
from inverse_soc.dynamics import (ControlPolicy, ControlSet, DynamicsSpec, Gaussian, PointMass,
                                  flow_from_batch, simulate)
from inverse_soc.errors import BoundaryMassError, CFLError
from inverse_soc.forward_solver import (GridForward, GridSpec, RiccatiForward, cfl_steps,
                                        extract_policy, lq_optimal_value, lq_policy,
                                        optimal_value_from_grid, propagate_law,
                                        riccati_grid_error, riccati_rk4, solve_hjb_grid,
                                        solve_riccati)

import oracles
from conftest import SMALL_GRID, U_BOX

SPEC = DynamicsSpec.affine(0.0, 1.0, 0.0, 0.1)


def test_riccati_terminal_and_closed_form():
    ric = solve_riccati(1.0)
    assert ric.r(1.0) == 0.0
    assert float(ric.r(0.0)) == pytest.approx(oracles.R0_THETA1, abs=1e-12)
    assert float(ric.r(0.0)) == pytest.approx(math.sqrt(10) * math.tanh(math.sqrt(10)), abs=1e-14)
    ts = np.linspace(0, 1, 11)
    np.testing.assert_allclose(ric.r(ts), [oracles.riccati_r(t) for t in ts], atol=1e-14)


def test_riccati_against_rk4():
    assert abs(riccati_rk4(1.0) - oracles.R0_THETA1) <= 1e-6


def test_riccati_residual():
    for theta in (0.25, 1.0, 4.0):
        assert solve_riccati(theta).residual(1001) <= 1e-8


def test_riccati_large_theta_limit():
    assert float(solve_riccati(1e8).r(0.0)) == pytest.approx(10.0, abs=1e-5)


def test_riccati_positive_and_rejects_bad_input():
    assert np.all(solve_riccati(1.0).r(np.linspace(0, 0.999, 100)) > 0)
    for kw in ({"theta": 0.0}, {"theta": 1.0, "q": -1.0}, {"theta": 1.0, "T": 0.0}):
        with pytest.raises(ValueError):
            solve_riccati(**kw)


def test_optimal_value_oracle_and_trivial_cases():
    ric = solve_riccati(1.0)
    assert float(ric.s(0.0)) == pytest.approx(oracles.S0_THETA1, abs=1e-12)
    assert lq_optimal_value(ric, 1.0) == pytest.approx(oracles.JSTAR_THETA1, abs=1e-12)
    assert lq_optimal_value(solve_riccati(2.0), 1.0) == pytest.approx(oracles.JSTAR_THETA2,
                                                                      abs=1e-12)
    assert lq_optimal_value(ric, 0.0) == float(ric.s(0.0))
    no_noise = solve_riccati(1.0, sigma=0.0)
    assert lq_optimal_value(no_noise, 1.0) == float(no_noise.r(0.0))


def test_s_grid_matches_closed_form():
    ric = solve_riccati(1.0, n_grid=1001)
    ts = np.linspace(0, 1, 7)
    np.testing.assert_allclose(ric.s(ts), [0.01 * math.log(math.cosh(math.sqrt(10) * (1 - t)))
                                           for t in ts], atol=1e-12)


def test_zero_cost_grid():
    vg = solve_hjb_grid(SPEC, CostPair(Zero(), Zero()), U_BOX, SMALL_GRID)
    assert np.all(vg.values == 0.0)
    # ties go to the smallest |u|, i.e. u = 0
    assert np.all(vg.feedback == 0.0)


def test_constant_cost_grid():
    vg = solve_hjb_grid(SPEC, CostPair(Constant(2.5), Zero()), U_BOX, SMALL_GRID)
    np.testing.assert_allclose(vg.values[0], 2.5, atol=1e-10)


def test_terminal_row_is_g():
    g = RBFSum([1.5], [0.5], [[0.3]], ("x",))
    vg = solve_hjb_grid(SPEC, CostPair(Zero(), g), U_BOX, SMALL_GRID)
    assert np.array_equal(vg.values[-1], g(1.0, vg.states, 0.0))


def test_u_independent_cost_gives_zero_feedback():
    # f depends on t only, so v is flat in x and u = 0 is the unique tie-broken minimizer
    f = RBFSum([1.0], [0.5], [[0.3]], ("t",))
    vg0 = solve_hjb_grid(SPEC, CostPair(f, Constant(1.0)), U_BOX, SMALL_GRID)
    assert np.all(vg0.feedback == 0.0)
    sigma0 = DynamicsSpec.affine(0.0, 1.0, 0.0, 0.0)
    vz = solve_hjb_grid(sigma0, CostPair(Constant(1.0), Zero()), U_BOX, SMALL_GRID)
    assert np.all(vz.feedback == 0.0)


def test_mirror_symmetry():
    vg = solve_hjb_grid(SPEC, lq_pair(1.0), U_BOX, SMALL_GRID)
    np.testing.assert_allclose(vg.values, vg.values[:, ::-1], atol=1e-10)
    np.testing.assert_allclose(vg.feedback[:-1], -vg.feedback[:-1, ::-1], atol=1e-12)


def test_scheme_monotonicity():
    eps = 0.05
    g = RBFSum([1.0], [0.5], [[0.0]], ("x",))
    base = solve_hjb_grid(SPEC, CostPair(QuadraticCost(1.0, 1.0), g), U_BOX, SMALL_GRID)
    lifted = solve_hjb_grid(SPEC, CostPair(QuadraticCost(1.0, 1.0),
                                           Tabulated(base.states, g(1.0, base.states) + eps)),
                            U_BOX, SMALL_GRID)
    diff = lifted.values[0] - base.values[0]
    assert np.all(diff >= -1e-12) and np.all(diff <= eps + 1e-12)
    # raising the terminal values at a single node never lowers any value
    bump = np.zeros(len(base.states))
    bump[len(bump) // 3] = 1.0
    bumped = solve_hjb_grid(SPEC, CostPair(QuadraticCost(1.0, 1.0),
                                           Tabulated(base.states, g(1.0, base.states) + bump)),
                            U_BOX, SMALL_GRID)
    assert np.all(bumped.values[0] - base.values[0] >= -1e-12)


def test_cfl_enforced():
    need = cfl_steps(SPEC, U_BOX, SMALL_GRID)
    with pytest.raises(CFLError) as info:
        solve_hjb_grid(SPEC, lq_pair(1.0), U_BOX, GridSpec(5.0, 100, need - 1, 41))
    assert info.value.required_steps == need
    with pytest.raises(ValueError):
        solve_hjb_grid(SPEC, lq_pair(1.0), ControlSet(), SMALL_GRID)


def test_value_from_grid_quadrature():
    vg = solve_hjb_grid(SPEC, CostPair(Zero(), Zero()), U_BOX, GridSpec(6.0, 1200, None, 5))
    assert optimal_value_from_grid(vg, Gaussian()) == 0.0
    vg.values[0] = vg.states**2
    assert optimal_value_from_grid(vg, Gaussian()) == pytest.approx(1.0, abs=1e-4)
    with pytest.raises(BoundaryMassError):
        optimal_value_from_grid(vg, PointMass(7.0))


@pytest.mark.slow
def test_lq_grid_value_default_grid(default_lq_grid):
    err, x_max = riccati_grid_error(default_lq_grid, solve_riccati(1.0))
    assert x_max > 3.0 and err <= 1e-2
    j = optimal_value_from_grid(default_lq_grid, Gaussian())
    assert abs(j - oracles.JSTAR_THETA1) <= 0.01 * oracles.JSTAR_THETA1


@pytest.mark.xfail(strict=True, reason="the closed form ignores the bound |u| <= 10, which "
                   "binds for |x| > 3.2; at J=400 even the unconstrained region errs by 0.04")
def test_lq_grid_value_all_nodes_coarse():
    vg = solve_hjb_grid(SPEC, lq_pair(1.0), U_BOX, GridSpec(6.0, 400, 4000, 201))
    ric = solve_riccati(1.0)
    x = vg.states
    err = np.abs(vg.values[0] - (ric.r(0.0) * x**2 + ric.s(0.0))) / (1 + x**2)
    assert err.max() <= 1e-2


@pytest.mark.slow
def test_extracted_policy_matches_riccati_gain(default_lq_grid):
    vg = default_lq_grid
    ric = solve_riccati(1.0)
    du = vg.u_grid[1] - vg.u_grid[0]
    keep = np.abs(vg.states) <= 3.0
    for i in range(0, len(vg.times) - 1, 97):
        exact = -ric.r(vg.times[i]) * vg.states[keep]
        assert np.max(np.abs(vg.feedback[i, keep] - exact)) <= 2 * du
    pol = extract_policy(vg)
    u, _ = pol(0, 0.0, np.array([0.5]))
    assert u[0] == pytest.approx(-ric.r(0.0) * 0.5, abs=2 * du)


def test_propagated_law_reproduces_grid_value():
    pair = CostPair(QuadraticCost(10.0, 1.0), RBFSum([1.0], [1.0], [[0.5]], ("x",)))
    vg = solve_hjb_grid(SPEC, pair, U_BOX, SMALL_GRID)
    flow = propagate_law(vg, SPEC, Gaussian())
    assert flow.time_rule == "left"
    np.testing.assert_allclose(flow.w.sum(axis=1), 1.0, atol=1e-12)
    run = flow.time_weights() @ np.sum(flow.w * pair.running(flow.times[:, None], flow.x,
                                                             flow.u), axis=1)
    term = flow.terminal_w @ pair.terminal(flow.terminal_x)
    w = Gaussian().node_weights(vg.states)
    # the chain starts from the node weights renormalized to mass one
    assert run + term == pytest.approx(w @ vg.values[0] / w.sum(), rel=1e-10)


@pytest.mark.slow
def test_value_dominance(clamped_flow, default_lq_grid, lq_spec):
    pair = lq_pair(1.0)
    j = optimal_value_from_grid(default_lq_grid, Gaussian())
    for flow in (clamped_flow,
                 flow_from_batch(simulate(lq_spec, ControlPolicy.open_loop(0.0, U_BOX),
                                          Gaussian(), 200, 4000, seed=1))):
        per = flow.time_weights() @ pair.running(flow.times[:, None], flow.x, flow.u)
        se = per.std(ddof=1) / math.sqrt(len(per))
        assert per.mean() >= j - (3 * se + 0.02 * j)


def test_riccati_forward_handle():
    fw = RiccatiForward(0.1, 1.0)
    assert fw.j_star(lq_pair(1.0), Gaussian()) == pytest.approx(oracles.JSTAR_THETA1, abs=1e-12)
    shifted = CostPair(QuadraticCost(10.0, 1.0, 0.5), Constant(2.0))
    assert fw.j_star(shifted, Gaussian()) == pytest.approx(oracles.JSTAR_THETA1 + 2.5)
    assert fw.initial_value(lq_pair(1.0))(0.0) == pytest.approx(oracles.S0_THETA1)
    assert not fw.applicable(CostPair(RBFSum([1.0], [1.0], [[0, 0, 0]]), Zero()))
    with pytest.raises(ValueError):
        fw.j_star(CostPair(RBFSum([1.0], [1.0], [[0, 0, 0]]), Zero()), Gaussian())
    assert fw.tolerance(3.0) == pytest.approx(0.03)


def test_grid_forward_handle(small_grid_forward):
    fw = small_grid_forward
    pair = lq_pair(1.0)
    a = fw.j_star(pair, Gaussian())
    b = fw.j_star(CostPair.from_dict(json.loads(pair.key())), Gaussian())
    assert a == b
    assert fw.tolerance(0.1) == pytest.approx(0.02)
    assert fw.tolerance(10.0) == pytest.approx(0.2)
    with pytest.raises(BoundaryMassError):
        fw.j_star(pair, Gaussian(0.0, 4.0))


def test_value_grid_files(tmp_path):
    vg = solve_hjb_grid(SPEC, lq_pair(1.0), U_BOX, GridSpec(3.0, 20, None, 11))
    vg.write(tmp_path / "v.json", tmp_path / "v.csv")
    meta = json.loads((tmp_path / "v.json").read_text())
    assert meta["n_states"] == 21 and meta["scheme_tag"] == vg.scheme_tag
    rows = (tmp_path / "v.csv").read_text().splitlines()
    assert len(rows) == 1 + 21 * len(vg.times)


def test_lq_policy_gain():
    ric = solve_riccati(2.0)
    pol = lq_policy(ric)
    u, _ = pol(0, 0.25, np.array([1.0]))
    assert u[0] == pytest.approx(-ric.r(0.25) / 2.0)
