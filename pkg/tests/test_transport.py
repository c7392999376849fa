import math
import warnings

import numpy as np
import pytest

from inverse_soc.cost_model import (CostClassD, CostPair, GeneratorClass, QuadraticCost, RBFSum,
                                    Tabulated, Zero, lq_pair)
from inverse_soc.dynamics import DynamicsSpec, EmpiricalFlow, Gaussian
from inverse_soc.errors import ConvergenceError
from inverse_soc.gap_functional import gap
from inverse_soc.transport import (GridMeasure, PenalizedValueCurve, PseudometricSpec,
                                   RBFTerminalFamily, constrained_bridge_limit,
                                   dual_objective, duality_check_schrodinger,
                                   gaussian_bridge_value, h_drift, log_heat_kernel,
                                   penalized_bridge_value, penalized_curve, rho_bl,
                                   rho_generator, schrodinger_inner_value, sinkhorn_bridge,
                                   theorem32_equivalence)

import oracles


def _dirac(x):
    return GridMeasure(np.array([float(x)]), np.array([1.0]))


def _random_measure(rng, n=6):
    pts = np.sort(rng.choice(np.linspace(-3, 3, 61), size=n, replace=False))
    w = rng.dirichlet(np.ones(n))
    return GridMeasure(pts, w)


def _terminal_flow(samples):
    s = np.asarray(samples, float)
    n = len(s)
    w = np.full((2, n), 1.0 / n)
    x = np.vstack([np.zeros(n), s])
    return EmpiricalFlow(np.array([0.0, 1.0]), x, np.zeros_like(x), w, s, np.full(n, 1.0 / n))


@pytest.fixture(scope="module")
def gauss_pair():
    return GridMeasure.gaussian(0.0, 1.0), GridMeasure.gaussian(0.0, 0.25)


@pytest.fixture(scope="module")
def gauss_bridge(gauss_pair):
    return sinkhorn_bridge(*gauss_pair)


def test_grid_measure_validation():
    with pytest.raises(ValueError):
        GridMeasure(np.array([0.0, 0.0]), np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        GridMeasure(np.array([0.0, 1.0]), np.array([0.5, 0.6]))
    m = GridMeasure.from_samples([1.0, 0.0, 1.0, 2.0])
    np.testing.assert_allclose(m.weights, [0.25, 0.5, 0.25])
    assert m.mean() == pytest.approx(1.0) and m.variance() == pytest.approx(0.5)


@pytest.mark.parametrize("d", [0.5, 1.0, 2.0, 100.0])
def test_bl_dirac(d):
    val = rho_bl(_dirac(0.0), _dirac(d))
    assert abs(val - oracles.bl_dirac_closed_form(d)) <= 1e-6
    assert abs(val - oracles.BL_DIRAC[d]) <= 1e-4  # brute-force grid resolution


def test_bl_axioms(rng):
    for _ in range(50):
        a, b, c = (_random_measure(rng) for _ in range(3))
        ab, ba = rho_bl(a, b), rho_bl(b, a)
        assert ab >= 0 and abs(ab - ba) <= 1e-9
        assert rho_bl(a, a) <= 1e-12
        assert ab <= rho_bl(a, c) + rho_bl(c, b) + 1e-9


def test_generator_pseudometric():
    x_feature = Tabulated([-10.0, 10.0], [-10.0, 10.0])
    gen = GeneratorClass([Zero()], [x_feature], "sup_ball", 1.0)
    rng = np.random.default_rng(2)
    s = rng.normal(size=500)
    a = _terminal_flow(s - s.mean())
    b = _terminal_flow(s - s.mean() + 0.5)
    assert rho_generator(a, a, gen) == 0.0
    assert rho_generator(a, b, gen) == pytest.approx(0.5, abs=1e-12)
    spec = PseudometricSpec("generator", gen)
    for _ in range(10):
        f1, f2 = _terminal_flow(rng.normal(size=50)), _terminal_flow(rng.normal(size=50))
        assert spec.rho(f1, f2) == pytest.approx(spec.rho(f2, f1), abs=1e-12)
    with pytest.raises(ValueError):
        PseudometricSpec("generator")
    with pytest.raises(ValueError):
        PseudometricSpec("wasserstein")


def test_heat_kernel_rows_normalized():
    x = np.linspace(-8, 8, 401)
    K = np.exp(log_heat_kernel(x, x, 1.0))
    np.testing.assert_allclose(K.sum(axis=1), 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        log_heat_kernel(x, x, 0.0)


def test_closed_form_against_coupling_oracle():
    assert gaussian_bridge_value(1.0, 0.25) == pytest.approx(oracles.GAUSS_BRIDGE_VALUE,
                                                             rel=1e-9)
    assert gaussian_bridge_value(1.0, 2.0) == pytest.approx(0.0, abs=1e-12)


def test_matched_marginals_cost_nothing():
    br = sinkhorn_bridge(GridMeasure.gaussian(0.0, 1.0), GridMeasure.gaussian(0.0, 2.0))
    assert br.entropy >= 0.0 and br.value <= 1e-3


def test_gaussian_bridge(gauss_bridge, gauss_pair):
    br = gauss_bridge
    assert br.entropy >= 0
    assert max(br.marginal_errors()) <= 1e-9
    assert br.factorization_residual() <= 1e-8
    assert br.value == pytest.approx(oracles.GAUSS_BRIDGE_VALUE, rel=1e-6)
    np.testing.assert_allclose(br.prior.sum(axis=1), gauss_pair[0].weights, atol=1e-15)


def test_sinkhorn_failure_is_reported(gauss_pair):
    with pytest.raises(ConvergenceError) as info:
        sinkhorn_bridge(*gauss_pair, max_iter=2)
    assert info.value.residual > 1e-9
    with pytest.raises(ValueError):
        sinkhorn_bridge(gauss_pair[0], GridMeasure(np.array([0.0, 1.0]), np.array([1.0, 0.0])))


def test_coupling_csv(gauss_bridge, tmp_path):
    gauss_bridge.write_coupling_csv(tmp_path / "c.csv", threshold=1e-6)
    rows = (tmp_path / "c.csv").read_text().splitlines()
    assert rows[0] == "i,j,x_i,y_j,pi_ij" and len(rows) > 1
    assert all(float(r.split(",")[-1]) > 1e-6 for r in rows[1:])


def test_matched_drift_vanishes():
    br = sinkhorn_bridge(GridMeasure.gaussian(0.0, 1.0), GridMeasure.gaussian(0.0, 2.0))
    pol = h_drift(br, 50)
    x = np.linspace(-3, 3, 61)
    worst = max(np.max(np.abs(pol(i, t, x)[0])) for i, t in enumerate(np.linspace(0, 1, 51)[:-1]))
    assert worst <= 1e-2


def test_constant_terminal_cost_cancels(gauss_pair, gauss_bridge):
    mu0, muT = gauss_pair
    g = np.full(len(muT.points), 0.7)
    assert schrodinger_inner_value(mu0, gauss_bridge.log_kernel, g) == pytest.approx(0.7,
                                                                                    abs=1e-12)
    assert dual_objective(mu0, muT, gauss_bridge.log_kernel, g)[0] == pytest.approx(0.0,
                                                                                   abs=1e-12)


def test_weak_duality_random_terminal_costs(gauss_pair, gauss_bridge, rng):
    fns = []
    for _ in range(20):
        c, a, s = rng.normal(size=3)
        fns.append(lambda y, c=c, a=a, s=s: 3 * c * np.tanh(a * y + s))
    rep = duality_check_schrodinger(*gauss_pair, fns, bridge=gauss_bridge)
    assert rep.dual_best <= rep.primal + 1e-3 and rep.n_evaluations == 20


def test_duality_gaussian_and_matched(gauss_pair, gauss_bridge):
    rep = duality_check_schrodinger(*gauss_pair, RBFTerminalFamily(), bridge=gauss_bridge)
    assert rep.primal == gauss_bridge.value
    assert 0.8 * rep.primal <= rep.dual_best <= rep.primal + 1e-3
    matched = duality_check_schrodinger(GridMeasure.gaussian(0.0, 1.0),
                                        GridMeasure.gaussian(0.0, 2.0), RBFTerminalFamily())
    assert abs(matched.primal) <= 1e-3 and abs(matched.dual_best) <= 1e-3
    with pytest.raises(ValueError):
        duality_check_schrodinger(*gauss_pair, [])


def test_constant_curve_limit():
    curve = PenalizedValueCurve(np.array([1.0, 2.0]), np.array([0.3, 0.3]), np.zeros(2),
                                np.zeros(2), ((), ()), 0.0)
    assert constrained_bridge_limit(curve) == 0.3
    bad = PenalizedValueCurve(np.array([1.0, 2.0]), np.array([0.3, 0.2]), np.zeros(2),
                              np.zeros(2), ((), ()), 0.0)
    with pytest.warns(RuntimeWarning, match="not monotone"):
        constrained_bridge_limit(bad)


# ---- penalized problems on the LQ grid instance

@pytest.fixture(scope="module")
def equivalence_setup():
    from inverse_soc.dynamics import ControlSet
    from inverse_soc.forward_solver import GridForward, GridSpec
    spec = DynamicsSpec.affine(0.0, 1.0, 0.0, 0.1)
    fw = GridForward(spec, ControlSet(-10.0, 10.0), GridSpec(L=5.0, n_x=100, n_u=41))
    flow = fw.optimal_law(lq_pair(1.0), Gaussian())

    def cls(R=1.0):
        gen = GeneratorClass([RBFSum([-1.0], [0.25], [[0.0]], ("u",)), Zero()],
                             [Zero(), RBFSum([1.0], [1.0], [[0.0]], ("x",))], "sup_ball", R)
        return CostClassD(CostPair(QuadraticCost(10.0, 2.0), Zero()), gen)
    return fw, flow, cls


def test_penalty_off_is_plain_forward_value(equivalence_setup):
    fw, flow, cls = equivalence_setup
    c = cls()
    pm = PseudometricSpec("generator", c.generators)
    pt = penalized_bridge_value(c.base, flow, pm, 0.0, fw)
    assert pt.value == pytest.approx(fw.j_star(c.base, flow.initial_law()), rel=1e-12)
    assert pt.relative == pytest.approx(-gap(flow, c.base, fw).v, rel=1e-9)
    with pytest.raises(ValueError):
        penalized_bridge_value(c.base, flow, pm, -1.0, fw)


def test_trivial_generator_equivalence(equivalence_setup):
    fw, flow, _ = equivalence_setup
    cls = CostClassD(CostPair(QuadraticCost(10.0, 2.0), Zero()), GeneratorClass(), (1.0, 2.0))
    rep = theorem32_equivalence(flow, cls, PseudometricSpec("generator", cls.generators), fw)
    v_base = gap(flow, cls.base, fw).v
    assert rep.lhs_vstar == pytest.approx(v_base, abs=1e-12)
    assert rep.rhs_bridge_form == pytest.approx(v_base, abs=1e-12)


@pytest.mark.slow
def test_curve_monotone_and_radius_scaling(equivalence_setup):
    fw, flow, cls = equivalence_setup
    limits = []
    for R in (1.0, 2.0):
        c = cls(R)
        curve = penalized_curve(c.base, flow, PseudometricSpec("generator", c.generators),
                                (0.0, 1.0, 2.0, 4.0, 8.0, 16.0), fw)
        assert curve.monotone
        limits.append(constrained_bridge_limit(curve))
        assert limits[-1] >= curve.values[0]
    assert limits[1] >= limits[0] - 1e-9


@pytest.mark.slow
def test_bl_penalized_limit_matches_bridge(gauss_pair, gauss_bridge):
    base = CostPair(QuadraticCost(0.0, 1.0), Zero())
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        curve = penalized_curve(base, None, PseudometricSpec("bl"), (1, 2, 4, 8, 16, 32),
                                marginals=gauss_pair)
    assert curve.monotone
    limit = constrained_bridge_limit(curve)
    assert abs(limit - gauss_bridge.value) <= 0.05 * gauss_bridge.value
    with pytest.raises(ValueError):
        penalized_bridge_value(lq_pair(1.0), None, PseudometricSpec("bl"), 1.0,
                               marginals=gauss_pair)
