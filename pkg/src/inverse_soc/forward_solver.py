"""Optimal values and feedbacks of the forward control problem.

Two solvers are provided:

* a closed-form Riccati solution for ``dX = u dt + sigma dB`` with running
  cost ``q x^2 + theta u^2`` (plus a constant) and zero terminal cost;
* an explicit monotone upwind finite-difference scheme for the HJB equation
  of a general scalar problem on ``[0, T] x [-L, L]`` with a compact control
  set discretized on a uniform grid.

The grid scheme is a Markov chain on the state grid, so the law of the state
under the computed feedback can be propagated exactly (``propagate_law``).
Both solvers are wrapped in small "forward handles" exposing
``j_star(pair, init)`` and ``tolerance(value)`` for the gap functional.
"""

import csv
import hashlib
import json
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .cost_model import Constant, CostPair, FeatureAffine, QuadraticCost, Zero
from .dynamics import ControlPolicy, ControlSet, DynamicsSpec, EmpiricalFlow, Gaussian
from .errors import BoundaryMassError, CFLError, DivergenceError, EvaluationError

# ---------------------------------------------------------------------------
# Riccati closed form


@dataclass(frozen=True)
class RiccatiSolution:
    """``v(t, x) = r(t) x^2 + s(t)`` for the scalar LQ problem.

    ``r(t) = sqrt(q theta) tanh(sqrt(q / theta) (T - t))`` solves
    ``r' = r^2 / theta - q`` with ``r(T) = 0``, and ``s' = -sigma^2 r`` with
    ``s(T) = 0`` gives ``s(t) = lncosh_sign * sigma^2 theta log cosh(...)``.
    ``lncosh_sign`` is +1 for the derived solution; -1 reproduces the
    alternative sign and exists only so the two can be compared.
    """

    theta: float
    q: float = 10.0
    sigma: float = 0.1
    T: float = 1.0
    lncosh_sign: int = 1
    s_grid_t: np.ndarray = field(default=None, repr=False, compare=False)
    s_grid: np.ndarray = field(default=None, repr=False, compare=False)

    def r(self, t):
        k = np.sqrt(self.q / self.theta)
        return np.sqrt(self.q * self.theta) * np.tanh(k * (self.T - np.asarray(t)))

    def s(self, t):
        k = math.sqrt(self.q / self.theta)
        z = k * (self.T - np.asarray(t, dtype=float))
        # log cosh z = |z| + log1p(exp(-2|z|)) - log 2, stable for large z
        lc = np.abs(z) + np.log1p(np.exp(-2 * np.abs(z))) - math.log(2.0)
        return self.lncosh_sign * self.sigma**2 * self.theta * lc

    def gain(self, t):
        """Optimal feedback gain ``-r(t) / theta``."""
        return -self.r(t) / self.theta

    def value(self, t, x):
        return self.r(t) * np.asarray(x) ** 2 + self.s(t)

    def residual(self, n=1001, h=1e-20):
        """Max ``|r' - (r^2/theta - q)|`` on ``n`` points, ``r'`` by complex step."""
        t = np.linspace(0.0, self.T, n)
        k = math.sqrt(self.q / self.theta)
        rc = math.sqrt(self.q * self.theta) * np.tanh(k * (self.T - (t + 1j * h)))
        rdot = rc.imag / h
        r = self.r(t)
        return float(np.max(np.abs(rdot - (r**2 / self.theta - self.q))))


def solve_riccati(theta, q=10.0, sigma=0.1, T=1.0, lncosh_sign=1, n_grid=1001):
    """Closed-form Riccati solution plus ``s`` tabulated by quadrature of ``sigma^2 r``."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    if not q > 0:
        raise ValueError("q must be positive")
    if not T > 0:
        raise ValueError("T must be positive")
    if lncosh_sign not in (1, -1):
        raise ValueError("lncosh_sign must be +1 or -1")
    base = RiccatiSolution(float(theta), float(q), float(sigma), float(T), lncosh_sign)
    t = np.linspace(0.0, T, n_grid)
    r = base.r(t)
    # s(t) = sigma^2 int_t^T r, by the trapezoid rule from the right end
    seg = 0.5 * (r[1:] + r[:-1]) * np.diff(t)
    tail = np.append(np.cumsum(seg[::-1])[::-1], 0.0)
    s = lncosh_sign * sigma**2 * tail
    return RiccatiSolution(base.theta, base.q, base.sigma, base.T, lncosh_sign, t, s)


def riccati_rk4(theta, q=10.0, T=1.0, n_steps=10000):
    """``r(0)`` by classical RK4 integration of ``r' = r^2/theta - q`` backward from ``r(T)=0``."""
    h = T / n_steps
    r = 0.0
    rhs = lambda r: -(r * r / theta - q)  # d r / d(T - t)
    for _ in range(n_steps):
        k1 = rhs(r)
        k2 = rhs(r + 0.5 * h * k1)
        k3 = rhs(r + 0.5 * h * k2)
        k4 = rhs(r + h * k3)
        r += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
    return r


def lq_optimal_value(ric, init_second_moment):
    """``r(0) E[X_0^2] + s(0)``."""
    return float(ric.r(0.0) * init_second_moment + ric.s(0.0))


def lq_policy(ric, control_set=ControlSet()):
    """Feedback ``u = -(r_t / theta) x``."""
    return ControlPolicy.feedback_linear(ric.gain, control_set)


# ---------------------------------------------------------------------------
# HJB grid scheme


@dataclass(frozen=True)
class GridSpec:
    """State grid ``[-L, L]`` with ``n_x + 1`` nodes, ``n_u`` controls, ``n_t`` steps.

    ``n_t=None`` picks the smallest step count meeting the CFL bound.
    """

    L: float = 6.0
    n_x: int = 2000
    n_t: int = None
    n_u: int = 201
    T: float = 1.0

    def states(self):
        return np.linspace(-self.L, self.L, self.n_x + 1)

    def to_dict(self):
        return {"L": self.L, "n_x": self.n_x, "n_t": self.n_t, "n_u": self.n_u, "T": self.T}


@dataclass(frozen=True, eq=False)
class ValueGrid:
    times: np.ndarray  # M+1
    states: np.ndarray  # J+1
    values: np.ndarray  # (M+1) x (J+1)
    feedback: np.ndarray  # (M+1) x (J+1); last row repeats row M-1
    u_grid: np.ndarray
    control_set: ControlSet
    scheme_tag: str = "explicit-upwind-v1"
    meta: dict = field(default_factory=dict)

    @property
    def dx(self):
        return float(self.states[1] - self.states[0])

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    def write(self, json_path, csv_path):
        """Metadata JSON plus a CSV of ``(i, j, t, x, v, kappa)`` rows."""
        meta = {
            "scheme_tag": self.scheme_tag,
            "n_times": len(self.times),
            "n_states": len(self.states),
            "T": float(self.times[-1]),
            "L": float(self.states[-1]),
            "u_grid": self.u_grid.tolist(),
            "control_set": self.control_set.to_dict(),
            "values_csv": str(csv_path),
            **self.meta,
        }
        with open(json_path, "w") as fh:
            json.dump(meta, fh, sort_keys=True, indent=1)
        with open(csv_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["i", "j", "t", "x", "v", "kappa"])
            for i, t in enumerate(self.times):
                for j, x in enumerate(self.states):
                    wr.writerow([i, j, repr(float(t)), repr(float(x)),
                                 repr(float(self.values[i, j])),
                                 repr(float(self.feedback[i, j]))])


def _tie_break_order(u_grid):
    """Column order so that ``argmin`` picks smallest |u|, then smallest u, on ties."""
    return np.lexsort((u_grid, np.abs(u_grid)))


def _coefficients(spec, t, X, Ug):
    b = np.array(spec.b(t, X, Ug), dtype=float)
    s2 = np.array(spec.sigma(t, X, Ug), dtype=float) ** 2
    # no outward drift at the boundary nodes
    b[0] = np.maximum(b[0], 0.0)
    b[-1] = np.minimum(b[-1], 0.0)
    return b, s2


def cfl_steps(spec, control_set, grid):
    """Smallest step count with ``dt <= dx^2 / (sigma_max^2 + dx b_max)``."""
    x = grid.states()
    dx = x[1] - x[0]
    u = control_set.grid(grid.n_u)
    X, Ug = np.meshgrid(x, u, indexing="ij")
    t_probe = np.linspace(0.0, grid.T, 1 if spec.time_homogeneous else 11)
    worst = 0.0
    for t in t_probe:
        b, s2 = _coefficients(spec, t, X, Ug)
        worst = max(worst, float(np.max(s2 + dx * np.abs(b))))
    if worst == 0.0:
        return 1
    return int(math.ceil(grid.T * worst / dx**2 * (1 + 1e-12)))


def solve_hjb_grid(spec, pair, control_set, grid=GridSpec()):
    """Backward explicit upwind scheme for ``v_t + min_u [f + b v_x + sigma^2 v_xx / 2] = 0``.

    ``v(T, .) = g``. Boundary nodes use ghost values extrapolated linearly
    (zero curvature) and drift pointing out of the domain is clipped. The
    minimization runs over ``control_set.grid(n_u)``.
    """
    if not control_set.compact:
        raise ValueError("the grid solver needs a compact control set")
    x = grid.states()
    J1 = len(x)
    dx = x[1] - x[0]
    u = control_set.grid(grid.n_u)
    order = _tie_break_order(u)
    u = u[order]
    X, Ug = np.meshgrid(x, u, indexing="ij")

    needed = cfl_steps(spec, control_set, grid)
    M = needed if grid.n_t is None else int(grid.n_t)
    if M < needed:
        raise CFLError(f"CFL bound needs at least {needed} time steps, got {M}", needed)
    times = np.linspace(0.0, grid.T, M + 1)
    dt = grid.T / M

    def step_arrays(t):
        b, s2 = _coefficients(spec, t, X, Ug)
        return ((dt / dx) * np.maximum(b, 0.0), (dt / dx) * np.minimum(b, 0.0),
                (0.5 * dt / dx**2) * s2)

    frozen_coeff = spec.time_homogeneous
    frozen_cost = not pair.f.time_dependent
    if frozen_coeff:
        BP, BM, S = step_arrays(0.0)
    if frozen_cost:
        F = np.asarray(pair.running(0.0, X, Ug), dtype=float) * dt

    values = np.empty((M + 1, J1))
    feedback = np.empty((M + 1, J1))
    v = np.asarray(pair.terminal(x, grid.T), dtype=float).copy()
    if not np.all(np.isfinite(v)):
        raise EvaluationError("terminal cost is not finite on the state grid")
    values[M] = v
    rows = np.arange(J1)
    vp = np.empty(J1 + 2)
    for n in range(M - 1, -1, -1):
        t = times[n]
        if not frozen_coeff:
            BP, BM, S = step_arrays(t)
        if not frozen_cost:
            F = np.asarray(pair.running(t, X, Ug), dtype=float) * dt
        vp[1:-1] = v
        vp[0] = 2 * v[0] - v[1]
        vp[-1] = 2 * v[-1] - v[-2]
        dp = (vp[2:] - vp[1:-1])[:, None]
        dm = (vp[1:-1] - vp[:-2])[:, None]
        H = BP * dp
        H += BM * dm
        H += S * (dp - dm)
        H += F
        k = np.argmin(H, axis=1)
        v = v + H[rows, k]
        if not np.all(np.isfinite(v)):
            raise DivergenceError(f"non-finite value at time step {n} (t={t!r})")
        values[n] = v
        feedback[n] = u[k]
    feedback[M] = feedback[M - 1]
    meta = {"n_t": M, "n_x": grid.n_x, "n_u": grid.n_u, "cfl_min_steps": needed}
    return ValueGrid(times, x, values, feedback, np.sort(u), control_set, meta=meta)


def optimal_value_from_grid(vg, init, mass_tol=1e-6):
    """``int v(0, x) init(dx)``, by quadrature against the state grid."""
    L = float(vg.states[-1])
    out = init.mass_outside(L)
    if out > mass_tol:
        raise BoundaryMassError(f"initial law puts mass {out:.3g} outside (-{L}, {L})")
    return float(init.node_weights(vg.states) @ vg.values[0])


def extract_policy(vg):
    """Tabulated feedback policy, linear in x between grid nodes."""
    return ControlPolicy.feedback_grid(vg.times, vg.states, vg.feedback, vg.control_set)


def propagate_law(vg, spec, init):
    """Exact law of the grid chain under the grid feedback, as a flow.

    From node ``j`` at step ``n`` the chain moves up with probability
    ``dt (b^+ / dx + sigma^2 / (2 dx^2))`` and down with probability
    ``dt (b^- / dx + sigma^2 / (2 dx^2))``. Costs integrated against the
    returned flow with the left-point time rule reproduce the grid value.
    """
    x = vg.states
    dx, dt = vg.dx, vg.dt
    M = len(vg.times) - 1
    p = np.asarray(init.node_weights(x), dtype=float)
    p = p / p.sum()
    W = np.empty((M + 1, len(x)))
    for n in range(M):
        W[n] = p
        u = vg.feedback[n]
        b, s2 = (np.asarray(a, dtype=float) for a in
                 (spec.b(vg.times[n], x, u), spec.sigma(vg.times[n], x, u) ** 2))
        b = b.copy()
        b[0] = max(b[0], 0.0)
        b[-1] = min(b[-1], 0.0)
        diff = 0.5 * s2 / dx**2
        # zero-curvature ghost nodes switch diffusion off at the two ends
        diff[0] = 0.0
        diff[-1] = 0.0
        up = dt * (np.maximum(b, 0.0) / dx + diff)
        dn = dt * (np.maximum(-b, 0.0) / dx + diff)
        new = p * (1.0 - up - dn)
        new[1:] += (p * up)[:-1]
        new[:-1] += (p * dn)[1:]
        p = new / new.sum()
    W[M] = p
    X = np.broadcast_to(x, W.shape).copy()
    return EmpiricalFlow(
        times=vg.times.copy(),
        x=X,
        u=vg.feedback.copy(),
        w=W,
        terminal_x=x.copy(),
        terminal_w=p.copy(),
        paired=False,
        time_rule="left",
    )


# ---------------------------------------------------------------------------
# forward handles


def _is_lq(pair):
    """``(q, theta, offset, g_const)`` if the pair is in the Riccati family, else None."""
    f, g = pair.f, pair.g
    const = 0.0
    if isinstance(f, FeatureAffine):
        if any(c != 0.0 for c in f.coeffs):
            return None
        f = f.base
    if isinstance(g, FeatureAffine):
        if any(c != 0.0 for c in g.coeffs):
            return None
        g = g.base
    if isinstance(g, Constant):
        const += g.value
    elif not isinstance(g, Zero):
        return None
    if not isinstance(f, QuadraticCost):
        return None
    return f.q, f.theta, f.offset, const


def _law_key(init):
    if hasattr(init, "points"):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(init.points, dtype=float).tobytes())
        h.update(np.ascontiguousarray(init.weights, dtype=float).tobytes())
        return "empirical:" + h.hexdigest()
    return json.dumps(init.to_dict(), sort_keys=True)


class _Cache:
    """Thread-safe dict; concurrent inserts of one key keep the last value."""

    def __init__(self):
        self._d = {}
        self._lock = threading.Lock()

    def get(self, key):
        with self._lock:
            return self._d.get(key)

    def put(self, key, value):
        with self._lock:
            self._d[key] = value

    def __len__(self):
        return len(self._d)


class RiccatiForward:
    """Closed-form ``J*`` for ``dX = u dt + sigma dB``, ``U = R``, LQ pairs.

    Accepts running costs ``q x^2 + theta u^2 + offset`` and constant
    terminal costs, in which case ``J* = r(0) E[X_0^2] + s(0) + offset T + g``.
    """

    tag = "riccati"

    def __init__(self, sigma=0.1, T=1.0, lncosh_sign=1, rel_tol=0.01):
        self.sigma = float(sigma)
        self.T = float(T)
        self.lncosh_sign = lncosh_sign
        self.rel_tol = float(rel_tol)

    def applicable(self, pair):
        lq = _is_lq(pair)
        return lq is not None and lq[0] > 0 and lq[1] > 0

    def _parts(self, pair):
        lq = _is_lq(pair)
        if lq is None:
            raise ValueError("Riccati forward solver needs a quadratic LQ running cost "
                             "and a constant terminal cost")
        q, theta, offset, g_const = lq
        ric = solve_riccati(theta, q, self.sigma, self.T, self.lncosh_sign, n_grid=2)
        return ric, offset * self.T + g_const

    def initial_value(self, pair):
        """``x -> v(0, x)``."""
        ric, const = self._parts(pair)
        r0, s0 = float(ric.r(0.0)), float(ric.s(0.0))
        return lambda x: r0 * np.asarray(x, dtype=float) ** 2 + s0 + const

    def j_star(self, pair, init):
        ric, const = self._parts(pair)
        return lq_optimal_value(ric, init.second_moment()) + const

    def tolerance(self, value):
        return self.rel_tol * abs(value)

    def to_dict(self):
        return {"kind": "riccati", "sigma": self.sigma, "T": self.T,
                "lncosh_sign": self.lncosh_sign, "rel_tol": self.rel_tol}


class GridForward:
    """HJB grid ``J*`` with a cache keyed by the canonical pair and law serializations.

    ``tolerance(value) = rel_tol * max(|value|, abs_floor)``.
    """

    tag = "hjb-grid"

    def __init__(self, spec, control_set, grid=GridSpec(), rel_tol=0.02, abs_floor=1.0):
        self.spec = spec
        self.control_set = control_set
        self.grid = grid
        self.rel_tol = float(rel_tol)
        self.abs_floor = float(abs_floor)
        self._v0 = _Cache()

    def applicable(self, pair):
        return self.control_set.compact

    def solve(self, pair):
        return solve_hjb_grid(self.spec, pair, self.control_set, self.grid)

    def _initial_values(self, pair):
        key = pair.key()
        v0 = self._v0.get(key)
        if v0 is None:
            v0 = self.solve(pair).values[0].copy()
            self._v0.put(key, v0)
        return v0

    def initial_value(self, pair):
        """``x -> v(0, x)`` by linear interpolation on the state grid."""
        x = self.grid.states()
        v0 = self._initial_values(pair)
        return lambda z: np.interp(z, x, v0)

    def j_star(self, pair, init):
        x = self.grid.states()
        v0 = self._initial_values(pair)
        L = float(x[-1])
        out = init.mass_outside(L)
        if out > 1e-6:
            raise BoundaryMassError(f"initial law puts mass {out:.3g} outside (-{L}, {L})")
        return float(init.node_weights(x) @ v0)

    def optimal_law(self, pair, init):
        """Law of the grid chain under the optimal grid feedback."""
        return propagate_law(self.solve(pair), self.spec, init)

    def tolerance(self, value):
        return self.rel_tol * max(abs(value), self.abs_floor)

    def to_dict(self):
        return {"kind": "hjb_grid", "grid": self.grid.to_dict(),
                "control_set": self.control_set.to_dict(),
                "dynamics": self.spec.params, "rel_tol": self.rel_tol,
                "abs_floor": self.abs_floor}


def riccati_grid_error(vg, ric, margin=0.95):
    """``max_j |v(0, x_j) - (r(0) x_j^2 + s(0))| / (1 + x_j^2)`` where the bound is inactive.

    The closed form assumes ``U = R``. On the grid the feedback ``-(r_t / theta) x``
    stays inside ``[lower, upper]`` for every ``t`` only while
    ``|x| <= u_max theta / r(0)``; the comparison is restricted to ``margin``
    times that range. Returns ``(error, x_max)``.
    """
    u_max = min(-vg.control_set.lower, vg.control_set.upper)
    x_max = margin * u_max * ric.theta / float(ric.r(0.0))
    x = vg.states
    keep = np.abs(x) <= x_max
    exact = ric.r(0.0) * x[keep] ** 2 + ric.s(0.0)
    err = np.abs(vg.values[0, keep] - exact) / (1.0 + x[keep] ** 2)
    return float(err.max()), float(x_max)


def adjudicate_lncosh_sign(theta=1.0, q=10.0, sigma=0.1, T=1.0,
                           grid=GridSpec(L=6.0, n_x=400, n_u=201),
                           control_set=ControlSet(-10.0, 10.0)):
    """Decide the sign of the log-cosh term of ``J*`` with the grid solver.

    Starting from ``x = 0`` the quadratic part vanishes, so ``v(0, 0) = s(0)``.
    The grid value at the origin is compared with both candidates
    ``+-sigma^2 theta log cosh(sqrt(q/theta) T)`` and the closer one wins.
    """
    spec = DynamicsSpec.affine(0.0, 1.0, 0.0, sigma)
    pair = CostPair(QuadraticCost(q, theta), Zero())
    vg = solve_hjb_grid(spec, pair, control_set, grid)
    j0 = int(np.argmin(np.abs(vg.states)))
    grid_s0 = float(vg.values[0, j0])
    plus = float(solve_riccati(theta, q, sigma, T, 1, n_grid=2).s(0.0))
    minus = -plus
    sign = 1 if abs(grid_s0 - plus) <= abs(grid_s0 - minus) else -1
    r0 = float(solve_riccati(theta, q, sigma, T).r(0.0))
    return {
        "grid_s0": grid_s0,
        "s0_plus": plus,
        "s0_minus": minus,
        "jstar_plus": r0 + plus,
        "jstar_minus": r0 + minus,
        "grid_jstar_gaussian": optimal_value_from_grid(vg, Gaussian(0.0, 1.0)),
        "verdict_sign": sign,
        "grid": grid.to_dict(),
    }
