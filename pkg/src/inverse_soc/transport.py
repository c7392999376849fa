"""Pseudometrics on flows, entropic Schrodinger bridges and penalized bridge values.

The Schrodinger problem here is ``dX = u dt + dB`` on ``[0, T]`` with
``X_0 ~ mu0`` and ``X_T ~ muT``, minimizing ``E int |u|^2 dt``. On grids the
prior coupling is ``R_ij = mu0_i K_ij`` with ``K`` the heat kernel of variance
``T`` normalized over each row, and the optimal energy is ``2 H(pi | R)``.

For a terminal cost ``g`` the inner control problem is solved exactly by the
log transform of the HJB equation:
``inf_u E[int |u|^2 dt + g(X_T)] = -2 E_{x ~ mu0} log sum_j K(x, y_j) exp(-g_j / 2)``.
"""

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog, minimize
from scipy.special import logsumexp, softmax

from .cost_model import CostPair, GeneratorClass, QuadraticCost, Zero, _affine_pair
from .dynamics import ControlPolicy
from .errors import ConvergenceError, InverseSOCError
from .gap_functional import observed_cost
from .inverse_solver import SearchSpace, golden_section, minimize_gap_scan

# ---------------------------------------------------------------------------
# measures and pseudometrics


@dataclass(frozen=True, eq=False)
class GridMeasure:
    """Discrete probability measure on increasing points."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if p.ndim != 1 or p.shape != w.shape or len(p) == 0:
            raise ValueError("points and weights must be matching nonempty 1-d arrays")
        if np.any(np.diff(p) <= 0):
            raise ValueError("points must be strictly increasing")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "weights", w)

    @classmethod
    def gaussian(cls, mean=0.0, var=1.0, n=401, L=8.0):
        """``N(mean, var)`` density sampled on ``n`` points of ``[-L, L]``, normalized."""
        x = np.linspace(-L, L, n)
        w = np.exp(-((x - mean) ** 2) / (2 * var))
        return cls(x, w / w.sum())

    @classmethod
    def from_samples(cls, samples, weights=None):
        """Atoms at the distinct sample values, duplicates merged."""
        s = np.asarray(samples, dtype=float)
        w = np.full(len(s), 1.0 / len(s)) if weights is None else np.asarray(weights, float)
        pts, inv = np.unique(s, return_inverse=True)
        ws = np.bincount(inv, weights=w, minlength=len(pts))
        return cls(pts, ws / ws.sum())

    def mean(self):
        return float(self.weights @ self.points)

    def variance(self):
        m = self.mean()
        return float(self.weights @ (self.points - m) ** 2)


def rho_bl(mu, nu):
    """Bounded-Lipschitz distance ``sup {<g, mu - nu> : sup|g| + Lip(g) <= 1}``.

    Solved as a linear program over the values of ``g`` on the merged support
    together with the split ``m + l <= 1`` of the budget (``|g| <= m``,
    Lipschitz constant ``<= l``). On the line, Lipschitz constraints between
    neighbouring support points imply all the others.
    """
    z = np.union1d(mu.points, nu.points)
    n = len(z)
    d = np.zeros(n)
    d[np.searchsorted(z, mu.points)] += mu.weights
    d[np.searchsorted(z, nu.points)] -= nu.weights
    if n == 1:
        return 0.0
    # variables: g_1..g_n, m, l
    eye = sparse.identity(n, format="csr")
    ones = sparse.csr_matrix(np.ones((n, 1)))
    zeros = sparse.csr_matrix((n, 1))
    diff = sparse.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n))
    gaps = sparse.csr_matrix(np.diff(z)[:, None])
    zeros1 = sparse.csr_matrix((n - 1, 1))
    A = sparse.vstack([
        sparse.hstack([eye, -ones, zeros]),
        sparse.hstack([-eye, -ones, zeros]),
        sparse.hstack([diff, zeros1, -gaps]),
        sparse.hstack([-diff, zeros1, -gaps]),
        sparse.csr_matrix(np.r_[np.zeros(n), 1.0, 1.0][None, :]),
    ]).tocsc()
    rhs = np.r_[np.zeros(2 * n + 2 * (n - 1)), 1.0]
    cost = np.r_[-d, 0.0, 0.0]
    bounds = [(None, None)] * n + [(0, None), (0, None)]
    res = linprog(cost, A_ub=A, b_ub=rhs, bounds=bounds, method="highs")
    if res.status != 0:
        raise InverseSOCError(f"bounded-Lipschitz LP failed: {res.message}")
    return max(0.0, float(-res.fun))


def terminal_measure(flow):
    return GridMeasure.from_samples(flow.terminal_x, flow.terminal_w)


def feature_moments(flow, gen):
    """``int <phi_i^f, mu_t> dt + <phi_i^g, mu_T>`` for each generator feature pair."""
    out = []
    for pf, pg in zip(gen.f_features, gen.g_features):
        run, term, _ = observed_cost(flow, CostPair(pf, pg))
        out.append(run + term)
    return np.array(out)


def rho_generator(flow_a, flow_b, gen):
    """Support function of the coefficient set at the feature-moment difference."""
    if gen.n_features == 0:
        return 0.0
    return gen.support(feature_moments(flow_a, gen) - feature_moments(flow_b, gen))


@dataclass(frozen=True, eq=False)
class PseudometricSpec:
    """``kind="generator"`` (finite features) or ``kind="bl"`` (terminal marginals)."""

    kind: str
    generators: GeneratorClass = None

    def __post_init__(self):
        if self.kind not in ("generator", "bl"):
            raise ValueError("pseudometric kind must be 'generator' or 'bl'")
        if self.kind == "generator" and self.generators is None:
            raise ValueError("generator pseudometric needs a GeneratorClass")

    def rho(self, flow_a, flow_b):
        if self.kind == "bl":
            return rho_bl(terminal_measure(flow_a), terminal_measure(flow_b))
        return rho_generator(flow_a, flow_b, self.generators)


# ---------------------------------------------------------------------------
# Schrodinger bridge


def log_heat_kernel(x, y, T):
    """``log K_ij`` of the Gaussian kernel with variance ``T``, normalized over each row."""
    if not T > 0:
        raise ValueError("T must be positive")
    e = -((np.asarray(x)[:, None] - np.asarray(y)[None, :]) ** 2) / (2.0 * T)
    return e - logsumexp(e, axis=1, keepdims=True)


def gaussian_bridge_value(a, b, T=1.0):
    """Minimal energy ``2 H`` steering ``N(0, a)`` to ``N(0, b)`` under unit noise."""
    c = (-T + math.sqrt(T * T + 4.0 * a * b)) / 2.0
    H = -0.5 - 0.5 * math.log((a * b - c * c) / (a * T)) + (a + b - 2.0 * c) / (2.0 * T)
    return 2.0 * H


@dataclass(frozen=True, eq=False)
class BridgeSolution:
    mu0: GridMeasure
    muT: GridMeasure
    T: float
    log_kernel: np.ndarray
    a: np.ndarray  # row potentials
    b: np.ndarray  # column potentials
    coupling: np.ndarray
    entropy: float
    iterations: int
    marginal_error: float

    @property
    def value(self):
        return 2.0 * self.entropy

    @property
    def prior(self):
        return self.mu0.weights[:, None] * np.exp(self.log_kernel)

    def factorization_residual(self):
        """Max relative deviation of the coupling from ``a_i R_ij b_j``."""
        rebuilt = self.a[:, None] * self.prior * self.b[None, :]
        mask = self.coupling > 1e-300
        return float(np.max(np.abs(rebuilt[mask] - self.coupling[mask]) / self.coupling[mask]))

    def marginal_errors(self):
        return (float(np.abs(self.coupling.sum(axis=1) - self.mu0.weights).max()),
                float(np.abs(self.coupling.sum(axis=0) - self.muT.weights).max()))

    def write_coupling_csv(self, path, threshold=0.0):
        x, y = self.mu0.points, self.muT.points
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["i", "j", "x_i", "y_j", "pi_ij"])
            for i, j in zip(*np.nonzero(self.coupling > threshold)):
                wr.writerow([i, j, repr(float(x[i])), repr(float(y[j])),
                             repr(float(self.coupling[i, j]))])


def sinkhorn_bridge(mu0, muT, T=1.0, tol=1e-9, max_iter=100_000):
    """Entropic bridge by iterative proportional fitting on the heat-kernel prior."""
    if np.any(muT.weights <= 0):
        raise ValueError("target measure needs strictly positive weights")
    logK = log_heat_kernel(mu0.points, muT.points, T)
    K = np.exp(logK)
    m0, mT = mu0.weights, muT.weights
    b = np.ones(len(mT))
    err = math.inf
    for it in range(1, max_iter + 1):
        a = 1.0 / (K @ b)
        b = mT / (K.T @ (m0 * a))
        err = float(np.abs(m0 * a * (K @ b) - m0).max())
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ConvergenceError("Sinkhorn potentials became non-finite", err)
        if err <= tol:
            break
    else:
        raise ConvergenceError(
            f"Sinkhorn stopped after {max_iter} iterations with marginal error {err:.3g}", err)
    # final row rescale so both marginals meet the tolerance
    a = 1.0 / (K @ b)
    P = (m0 * a)[:, None] * K * b[None, :]
    # H(P | R) with P = a R b: sum_i P_i. log a_i + sum_j P_.j log b_j
    rows, cols = P.sum(axis=1), P.sum(axis=0)
    H = float(rows @ np.log(a) + cols @ np.log(b))
    merr = max(float(np.abs(rows - m0).max()), float(np.abs(cols - mT).max()))
    if merr > tol:
        raise ConvergenceError(f"marginal error {merr:.3g} above tolerance", merr)
    if -1e-12 < H < 0.0:
        H = 0.0  # rounding in the matched case
    return BridgeSolution(mu0, muT, float(T), logK, a, b, P, H, it, merr)


def h_drift(bridge, n_steps=200, x_grid=None):
    """Feedback ``u(t, x) = d/dx log h(t, x)`` with ``h(t, x) = sum_j p(t, x, T, y_j) b_j``.

    The derivative is evaluated analytically as a softmax-weighted average of
    ``(y_j - x) / (T - t)``. The table is piecewise constant on the times of
    an ``n_steps`` Euler grid, so simulations with the same grid use the exact
    tabulated drift at every step.
    """
    T = bridge.T
    y = bridge.muT.points
    if x_grid is None:
        x_grid = np.linspace(y[0], y[-1], 1601)
    if np.any(bridge.b <= 0):
        raise InverseSOCError("column potentials must be positive")
    logb = np.log(bridge.b)
    times = np.linspace(0.0, T, n_steps + 1)
    table = np.empty((n_steps + 1, len(x_grid)))
    diff = y[None, :] - x_grid[:, None]
    for i, t in enumerate(times[:-1]):
        tau = T - t
        w = softmax(logb[None, :] - diff**2 / (2.0 * tau), axis=1)
        table[i] = np.sum(w * diff, axis=1) / tau
    table[-1] = table[-2]
    return ControlPolicy.feedback_grid(times, x_grid, table)


# ---------------------------------------------------------------------------
# duality


def schrodinger_inner_value(mu0, log_kernel, g):
    """``-2 sum_i mu0_i log sum_j K_ij exp(-g_j / 2)``."""
    lz = logsumexp(log_kernel - 0.5 * np.asarray(g)[None, :], axis=1)
    return float(-2.0 * mu0.weights @ lz)


def dual_objective(mu0, muT, log_kernel, g):
    """``D(g)`` and its gradient ``sum_i mu0_i P_ij(g) - muT_j``."""
    g = np.asarray(g, dtype=float)
    z = log_kernel - 0.5 * g[None, :]
    lz = logsumexp(z, axis=1)
    P = np.exp(z - lz[:, None])
    val = float(-2.0 * mu0.weights @ lz - muT.weights @ g)
    grad = mu0.weights @ P - muT.weights
    return val, grad


def twisted_terminal_law(mu0, muT, log_kernel, g):
    """Terminal law of the optimal control for terminal cost ``g``."""
    z = log_kernel - 0.5 * np.asarray(g)[None, :]
    P = np.exp(z - logsumexp(z, axis=1)[:, None])
    w = mu0.weights @ P
    return GridMeasure(muT.points, w / w.sum())


@dataclass(frozen=True)
class RBFTerminalFamily:
    """``g(y) = sum_k c_k exp(-alpha (y - y_k)^2)`` with ``|c_k| <= cmax``.

    ``alpha=None`` uses ``1 / (2 h^2)`` with ``h`` the center spacing.
    """

    centers: tuple = tuple(np.linspace(-4.0, 4.0, 10))
    alpha: float = None
    cmax: float = 10.0

    def features(self, y):
        c = np.asarray(self.centers)
        alpha = self.alpha
        if alpha is None:
            alpha = 1.0 / (2.0 * (c[1] - c[0]) ** 2) if len(c) > 1 else 1.0
        return np.exp(-alpha * (np.asarray(y)[:, None] - c[None, :]) ** 2)


@dataclass(frozen=True)
class DualityReport:
    primal: float
    dual_best: float
    best_coeffs: tuple
    n_evaluations: int

    @property
    def gap(self):
        return self.primal - self.dual_best

    def to_dict(self):
        return {"primal": self.primal, "dual_best": self.dual_best, "gap": self.gap,
                "best_coeffs": list(self.best_coeffs), "n_evaluations": self.n_evaluations}


def duality_check_schrodinger(mu0, muT, g_family, T=1.0, bridge=None):
    """Best dual value over a terminal-cost family against the Sinkhorn primal.

    ``g_family`` is an :class:`RBFTerminalFamily` (maximized over its
    coefficient box with L-BFGS-B; the dual is concave) or a nonempty list of
    callables ``g(y)`` evaluated one by one.
    """
    if bridge is None:
        bridge = sinkhorn_bridge(mu0, muT, T)
    logK = bridge.log_kernel
    y = muT.points
    if isinstance(g_family, RBFTerminalFamily):
        Phi = g_family.features(y)
        n_eval = [0]

        def neg(c):
            n_eval[0] += 1
            val, grad = dual_objective(mu0, muT, logK, Phi @ c)
            return -val, -(Phi.T @ grad)

        k = Phi.shape[1]
        res = minimize(neg, np.zeros(k), jac=True, method="L-BFGS-B",
                       bounds=[(-g_family.cmax, g_family.cmax)] * k,
                       options={"maxiter": 2000, "ftol": 1e-13, "gtol": 1e-10})
        best = max(-res.fun, 0.0)  # c = 0 gives D = 0
        coeffs = tuple(float(v) for v in res.x) if -res.fun >= 0 else (0.0,) * k
        return DualityReport(bridge.value, float(best), coeffs, n_eval[0])
    family = list(g_family)
    if not family:
        raise ValueError("terminal-cost family is empty")
    vals = [dual_objective(mu0, muT, logK, np.asarray(g(y), float))[0] for g in family]
    k = int(np.argmax(vals))
    return DualityReport(bridge.value, float(vals[k]), (float(k),), len(family))


# ---------------------------------------------------------------------------
# penalized problems


@dataclass(frozen=True)
class PenalizedPoint:
    lam: float
    value: float  # inf_u J-hat_lambda, in the units of J
    relative: float  # value minus the observed base cost
    rho_at_opt: float
    c_star: tuple


@dataclass(frozen=True, eq=False)
class PenalizedValueCurve:
    lambdas: np.ndarray
    values: np.ndarray
    relative: np.ndarray
    rho_at_opt: np.ndarray
    c_stars: tuple
    observed_base: float
    tol: float = 1e-6

    @property
    def lam_rho(self):
        return self.lambdas * self.rho_at_opt

    @property
    def monotone(self):
        return bool(np.all(np.diff(self.values) >= -self.tol))

    def to_dict(self):
        return {"lambdas": self.lambdas.tolist(), "values": self.values.tolist(),
                "relative": self.relative.tolist(),
                "rho_at_opt": self.rho_at_opt.tolist(), "lam_rho": self.lam_rho.tolist(),
                "c_stars": [list(c) for c in self.c_stars],
                "observed_base": self.observed_base, "monotone": self.monotone}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["lambda", "value", "relative", "rho_at_opt", "lam_rho"])
            for row in zip(self.lambdas, self.values, self.relative, self.rho_at_opt,
                           self.lam_rho):
                wr.writerow([repr(float(v)) for v in row])


def _golden_max(fn, lo, hi, width):
    """Golden-section maximization; the first-found best point wins ties."""
    best = golden_section(lambda c: -fn(c), lo, hi, width)
    return best[0], -best[1]


def _coordinate_ascent(W, gen, sweeps, width, start=None, max_sweeps=200, rtol=1e-11):
    """Golden-section ascent one coordinate at a time.

    Runs at least ``sweeps`` sweeps and continues until a sweep improves the
    value by no more than ``rtol * max(1, |value|)`` (or ``max_sweeps``).
    """
    n, R = gen.n_features, gen.radius
    c = np.zeros(n) if start is None else np.array(start, dtype=float)
    best = W(c)
    for k in range(max_sweeps):
        before = best
        for i in range(n):
            if gen.coeff_set == "l1_ball":
                room = R - (np.abs(c).sum() - abs(c[i]))
            else:
                room = R
            if room <= 0:
                continue

            def along(v, i=i):
                trial = c.copy()
                trial[i] = v
                return W(trial)

            v, val = _golden_max(along, -room, room, width)
            if val > best:
                c[i] = v
                best = val
        if k + 1 >= sweeps and best - before <= rtol * max(1.0, abs(best)):
            break
    return c, best


def penalized_bridge_value(base, flow, spec, lam, forward=None, sweeps=3, width=1e-7,
                           marginals=None, T=1.0, n_knots=65, start=None):
    """``inf_u [J(u; f0, g0) + lam rho(P^u, mu)]`` through the minimax swap.

    Generator kind: ``sup_c [J*(f0 + lam f_c, g0 + lam g_c) - lam obs(f_c, g_c)]``
    over the coefficient set by coordinate golden-section ascent (the
    objective is concave in ``c``), with at least ``sweeps`` sweeps and then
    until a sweep stops improving; ``forward`` supplies ``J*`` and the law
    of the optimal control, from which ``rho`` at the maximizer is computed.

    BL kind (base must be ``(u^2, 0)``): ``sup_g [inf_u E(int |u|^2 + g(X_T)) -
    <g, muT>]`` over ``sup|g| + Lip(g) <= lam``, with ``g`` piecewise linear
    on ``n_knots`` knots, solved by SLSQP; ``marginals=(mu0, muT)``.

    ``start`` is an initial coefficient vector for the ascent (the ascent
    only accepts improvements, so the result is never worse than ``start``).
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if spec.kind == "bl":
        return _penalized_bl(base, flow, lam, marginals, T, n_knots)
    gen = spec.generators
    obs_base = sum(observed_cost(flow, base)[:2])
    init = flow.initial_law()
    obs_phi = feature_moments(flow, gen)

    def W(c):
        pair = _affine_pair(base, gen, lam * np.asarray(c))
        return forward.j_star(pair, init) - lam * float(np.asarray(c) @ obs_phi)

    if lam == 0 or gen.n_features == 0:
        c = np.zeros(gen.n_features)
        value = W(c)
    else:
        c, value = _coordinate_ascent(W, gen, sweeps, width, start)
    rho = 0.0
    if gen.n_features:
        law = forward.optimal_law(_affine_pair(base, gen, lam * c), init)
        rho = gen.support(feature_moments(law, gen) - obs_phi)
    return PenalizedPoint(float(lam), float(value), float(value - obs_base), float(rho),
                          tuple(float(v) for v in c))


def _is_energy_pair(pair):
    f = pair.f
    return (isinstance(f, QuadraticCost) and f.q == 0 and f.theta == 1.0 and f.offset == 0
            and isinstance(pair.g, Zero))


def _penalized_bl(base, flow, lam, marginals, T, n_knots):
    if not _is_energy_pair(base):
        raise ValueError("the bl kind needs the energy pair (u^2, 0) as base")
    if marginals is None:
        raise ValueError("the bl kind needs marginals=(mu0, muT)")
    mu0, muT = marginals
    obs_base = sum(observed_cost(flow, base)[:2]) if flow is not None else 0.0
    logK = log_heat_kernel(mu0.points, muT.points, T)
    y = muT.points
    if lam == 0:
        g = np.zeros(len(y))
        value = dual_objective(mu0, muT, logK, g)[0]
        rho = rho_bl(twisted_terminal_law(mu0, muT, logK, g), muT)
        return PenalizedPoint(0.0, value, value - obs_base, rho, ())
    knots = np.linspace(y[0], y[-1], n_knots)
    h = knots[1] - knots[0]
    nk = n_knots
    # interpolation matrix from knot values to the target grid
    j = np.clip(np.searchsorted(knots, y, side="right") - 1, 0, nk - 2)
    s = (y - knots[j]) / h
    A = np.zeros((len(y), nk))
    A[np.arange(len(y)), j] = 1.0 - s
    A[np.arange(len(y)), j + 1] = s

    def neg(z):
        val, grad = dual_objective(mu0, muT, logK, A @ z[:nk])
        out = np.zeros_like(z)
        out[:nk] = -(A.T @ grad)
        return -val, out

    eye = np.eye(nk)
    dif = np.diff(eye, axis=0)
    col0 = np.zeros((nk, 1))
    C = np.vstack([
        np.hstack([eye, -np.ones((nk, 1)), col0]),
        np.hstack([-eye, -np.ones((nk, 1)), col0]),
        np.hstack([dif, np.zeros((nk - 1, 1)), -h * np.ones((nk - 1, 1))]),
        np.hstack([-dif, np.zeros((nk - 1, 1)), -h * np.ones((nk - 1, 1))]),
        np.r_[np.zeros(nk), 1.0, 1.0][None, :],
    ])
    ub = np.r_[np.zeros(C.shape[0] - 1), lam]
    cons = [{"type": "ineq", "fun": lambda z: ub - C @ z, "jac": lambda z: -C}]
    bounds = [(None, None)] * nk + [(0, None), (0, None)]
    res = minimize(neg, np.zeros(nk + 2), jac=True, method="SLSQP", bounds=bounds,
                   constraints=cons, options={"maxiter": 2000, "ftol": 1e-12})
    g = A @ res.x[:nk]
    value = max(-res.fun, 0.0)
    rho = rho_bl(twisted_terminal_law(mu0, muT, logK, g), muT)
    return PenalizedPoint(float(lam), float(value), float(value - obs_base), float(rho),
                          tuple(float(v) for v in res.x[nk:]))


def penalized_curve(base, flow, spec, lambdas=(1, 2, 4, 8, 16, 32), forward=None, tol=1e-6,
                    **kw):
    """Penalized values on an increasing lambda grid.

    For the generator kind each ascent starts from the previous maximizer
    rescaled by ``lambda_prev / lambda``: that point has the same objective
    value, so the computed curve inherits the monotonicity of the exact one.
    """
    lambdas = [float(l) for l in lambdas]
    if any(b <= a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError("lambda grid must be increasing")
    pts, prev = [], None
    for lam in lambdas:
        start = None
        if spec.kind == "generator" and prev is not None and prev.lam > 0:
            start = np.asarray(prev.c_star) * (prev.lam / lam)
        prev = penalized_bridge_value(base, flow, spec, lam, forward, start=start, **kw)
        pts.append(prev)
    obs_base = pts[0].value - pts[0].relative
    return PenalizedValueCurve(
        lambdas=np.array([p.lam for p in pts]),
        values=np.array([p.value for p in pts]),
        relative=np.array([p.relative for p in pts]),
        rho_at_opt=np.array([p.rho_at_opt for p in pts]),
        c_stars=tuple(p.c_star for p in pts),
        observed_base=float(obs_base),
        tol=tol,
    )


def constrained_bridge_limit(curve):
    """Supremum of the penalized curve, estimating the limit of the constrained values."""
    if not curve.monotone:
        warnings.warn("penalized curve is not monotone in lambda beyond tolerance",
                      RuntimeWarning, stacklevel=2)
    return float(np.max(curve.values))


@dataclass(frozen=True, eq=False)
class EquivalenceReport:
    lhs_vstar: float
    rhs_bridge_form: float
    observed_base: float
    bridge_limit: float
    curve: PenalizedValueCurve
    scan_best: dict

    @property
    def abs_diff(self):
        return abs(self.lhs_vstar - self.rhs_bridge_form)

    @property
    def rel_diff(self):
        return self.abs_diff / max(abs(self.lhs_vstar), 0.05)

    def to_dict(self):
        return {"lhs_Vstar": self.lhs_vstar, "rhs_bridge_form": self.rhs_bridge_form,
                "abs_diff": self.abs_diff, "rel_diff": self.rel_diff,
                "observed_base": self.observed_base, "bridge_limit": self.bridge_limit,
                "scan_best": self.scan_best, "curve": self.curve.to_dict()}


def theorem32_equivalence(flow, cost_class, spec, forward, n_per_axis=11, sweeps=3,
                          width=1e-7, threads=None):
    """Direct ``V*`` from a scan against ``obs(f0, g0) - sup_lambda W(lambda)``."""
    space = SearchSpace.coeff_grid(cost_class, n_per_axis)
    scan = minimize_gap_scan(flow, space, forward, threads=threads)
    curve = penalized_curve(cost_class.base, flow, spec, cost_class.lambdas, forward,
                            sweeps=sweeps, width=width)
    limit = constrained_bridge_limit(curve)
    rhs = curve.observed_base - limit
    return EquivalenceReport(float(scan.best_v), float(rhs), curve.observed_base, limit,
                             curve, {"id": scan.best_id, **scan.best_params})
