"""Controlled scalar diffusions, Euler-Maruyama simulation and empirical flows.

The state equation is ``dX = b(t, X, u) dt + sigma(t, X, u) dB`` with a scalar
state and a scalar control taking values in an interval containing 0.
Observed behaviour is stored as an :class:`EmpiricalFlow`, a time-binned
weighted particle system of state-control pairs plus a terminal state sample.
"""

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import erfc

from .errors import SimulationError

FLOW_SCHEMA = "flow-v1"


@dataclass(frozen=True)
class ControlSet:
    """Interval ``[lower, upper]`` of admissible control values, containing 0."""

    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if not self.lower <= 0.0 <= self.upper:
            raise ValueError(
                f"control set [{self.lower}, {self.upper}] must contain 0"
            )

    @property
    def compact(self):
        return math.isfinite(self.lower) and math.isfinite(self.upper)

    def clip(self, u):
        return np.clip(u, self.lower, self.upper)

    def grid(self, n=201):
        """Uniform grid of ``n`` points over a compact set, with 0 placed exactly."""
        if not self.compact:
            raise ValueError("cannot discretize an unbounded control set")
        if n < 2:
            raise ValueError("a control grid needs at least 2 points")
        g = np.linspace(self.lower, self.upper, n)
        g[np.argmin(np.abs(g))] = 0.0
        return g

    def to_dict(self):
        return {"lower": _json_float(self.lower), "upper": _json_float(self.upper)}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["lower"]), float(d["upper"]))


def _json_float(v):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


@dataclass(frozen=True, eq=False)
class DynamicsSpec:
    """Drift and diffusion coefficients of a controlled scalar diffusion.

    Both callables take ``(t, x, u)`` and must broadcast over array arguments.
    ``lipschitz_x`` is the declared constant bounding the Lipschitz modulus in
    the state and the size of both coefficients at ``(t, 0, 0)``.
    """

    drift: Callable
    diffusion: Callable
    lipschitz_x: float
    form_tag: str = "expression"
    time_homogeneous: bool = False
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.form_tag not in ("affine", "expression"):
            raise ValueError(f"unknown form_tag {self.form_tag!r}")
        if not self.lipschitz_x >= 0:
            raise ValueError("lipschitz_x must be nonnegative")

    @classmethod
    def affine(cls, a=0.0, b=1.0, c=0.0, sigma=0.1):
        """``dX = (a X + b u + c) dt + sigma dB``."""
        a, b, c, sigma = float(a), float(b), float(c), float(sigma)
        if sigma < 0:
            raise ValueError("sigma must be nonnegative")

        def drift(t, x, u):
            return a * x + b * u + c

        def diffusion(t, x, u):
            return np.full(np.broadcast(x, u).shape, sigma)

        return cls(
            drift,
            diffusion,
            lipschitz_x=max(abs(a), abs(c), sigma),
            form_tag="affine",
            time_homogeneous=True,
            params={"a": a, "b": b, "c": c, "sigma": sigma},
        )

    def b(self, t, x, u):
        shape = np.broadcast(x, u).shape
        return np.broadcast_to(np.asarray(self.drift(t, x, u), dtype=float), shape)

    def sigma(self, t, x, u):
        shape = np.broadcast(x, u).shape
        return np.broadcast_to(np.asarray(self.diffusion(t, x, u), dtype=float), shape)

    def check_lipschitz(self, times, xs, us):
        """Largest observed ratio against ``lipschitz_x`` on a probe set.

        A value ``<= 1`` means the declared constant held on every probe.
        """
        xs = np.sort(np.asarray(xs, dtype=float))
        us = np.asarray(us, dtype=float)
        worst = 0.0
        for t in np.atleast_1d(times):
            for phi in (self.b, self.sigma):
                vals = phi(t, xs[:, None], us[None, :])
                slopes = np.abs(np.diff(vals, axis=0)) / np.diff(xs)[:, None]
                at_origin = abs(float(phi(t, 0.0, 0.0)))
                worst = max(worst, float(slopes.max()), at_origin)
        if self.lipschitz_x == 0:
            return 0.0 if worst == 0 else math.inf
        return worst / self.lipschitz_x


# ---------------------------------------------------------------------------
# initial laws


def _linear_node_weights(grid, points, weights):
    """Split each weighted point between its two neighbouring grid nodes."""
    grid = np.asarray(grid, dtype=float)
    p = np.clip(np.asarray(points, dtype=float), grid[0], grid[-1])
    j = np.clip(np.searchsorted(grid, p, side="right") - 1, 0, len(grid) - 2)
    lam = (p - grid[j]) / (grid[j + 1] - grid[j])
    out = np.zeros(len(grid))
    np.add.at(out, j, weights * (1.0 - lam))
    np.add.at(out, j + 1, weights * lam)
    return out


def _trapezoid_weights(grid):
    dx = np.diff(grid)
    w = np.zeros(len(grid))
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w


@dataclass(frozen=True)
class Gaussian:
    mean: float = 0.0
    var: float = 1.0

    def sample(self, rng, size):
        return self.mean + math.sqrt(self.var) * rng.standard_normal(size)

    def second_moment(self):
        return self.var + self.mean**2

    def mass_outside(self, L):
        s = math.sqrt(2 * self.var)
        return 0.5 * (erfc((L - self.mean) / s) + erfc((L + self.mean) / s))

    def node_weights(self, grid):
        grid = np.asarray(grid, dtype=float)
        dens = np.exp(-((grid - self.mean) ** 2) / (2 * self.var))
        dens /= math.sqrt(2 * math.pi * self.var)
        return dens * _trapezoid_weights(grid)

    def to_dict(self):
        return {"kind": "gaussian", "mean": self.mean, "var": self.var}


@dataclass(frozen=True)
class PointMass:
    x0: float = 0.0

    def sample(self, rng, size):
        return np.full(size, float(self.x0))

    def second_moment(self):
        return self.x0**2

    def mass_outside(self, L):
        return 0.0 if -L < self.x0 < L else 1.0

    def node_weights(self, grid):
        return _linear_node_weights(grid, [self.x0], np.ones(1))

    def to_dict(self):
        return {"kind": "point", "x0": self.x0}


@dataclass(frozen=True)
class Uniform:
    low: float = -1.0
    high: float = 1.0

    def __post_init__(self):
        if not self.high > self.low:
            raise ValueError("uniform law needs high > low")

    def sample(self, rng, size):
        return rng.uniform(self.low, self.high, size)

    def second_moment(self):
        return (self.low**2 + self.low * self.high + self.high**2) / 3

    def mass_outside(self, L):
        inside = max(0.0, min(self.high, L) - max(self.low, -L))
        return 1.0 - inside / (self.high - self.low)

    def node_weights(self, grid, n_quad=4000):
        # midpoint rule on the interval, then linear split onto nodes
        edges = np.linspace(self.low, self.high, n_quad + 1)
        mids = 0.5 * (edges[1:] + edges[:-1])
        return _linear_node_weights(grid, mids, np.full(n_quad, 1.0 / n_quad))

    def to_dict(self):
        return {"kind": "uniform", "low": self.low, "high": self.high}


@dataclass(frozen=True, eq=False)
class Empirical:
    """Weighted sample used as an initial law (typically a flow's first bin)."""

    points: np.ndarray
    weights: np.ndarray

    def sample(self, rng, size):
        idx = rng.choice(len(self.points), size=size, p=self.weights)
        return np.asarray(self.points)[idx]

    def second_moment(self):
        return float(self.weights @ np.asarray(self.points) ** 2)

    def mass_outside(self, L):
        p = np.asarray(self.points)
        return float(self.weights[(p <= -L) | (p >= L)].sum())

    def node_weights(self, grid):
        return _linear_node_weights(grid, self.points, self.weights)

    def to_dict(self):
        return {
            "kind": "empirical",
            "points": np.asarray(self.points).tolist(),
            "weights": np.asarray(self.weights).tolist(),
        }


def init_from_dict(d):
    kind = d["kind"]
    if kind == "gaussian":
        return Gaussian(float(d.get("mean", 0.0)), float(d.get("var", 1.0)))
    if kind == "point":
        return PointMass(float(d.get("x0", 0.0)))
    if kind == "uniform":
        return Uniform(float(d["low"]), float(d["high"]))
    if kind == "empirical":
        return Empirical(np.asarray(d["points"], float), np.asarray(d["weights"], float))
    raise ValueError(f"unknown initial law kind {kind!r}")


# ---------------------------------------------------------------------------
# policies


@dataclass(frozen=True, eq=False)
class ControlPolicy:
    """A control rule; build instances with the ``open_loop`` / ``feedback_*`` constructors."""

    kind: str
    control_set: ControlSet = ControlSet()
    controls: np.ndarray = None
    gain: Callable = None
    times: np.ndarray = None
    x_grid: np.ndarray = None
    table: np.ndarray = None

    @classmethod
    def open_loop(cls, controls, control_set=ControlSet()):
        """Scalar (constant), length-M (shared by all paths) or N x M controls."""
        return cls("open_loop", control_set, controls=np.asarray(controls, dtype=float))

    @classmethod
    def feedback_linear(cls, gain, control_set=ControlSet()):
        """``u = gain(t) * x``."""
        return cls("feedback_linear", control_set, gain=gain)

    @classmethod
    def feedback_grid(cls, times, x_grid, table, control_set=ControlSet()):
        """Tabulated feedback ``table[i, j] = kappa(times[i], x_grid[j])``.

        Piecewise constant in time (last tabulated time at or before ``t``),
        linear in ``x`` with constant extension outside the grid.
        """
        table = np.asarray(table, dtype=float)
        times = np.asarray(times, dtype=float)
        x_grid = np.asarray(x_grid, dtype=float)
        if table.shape != (len(times), len(x_grid)):
            raise ValueError("feedback table must have shape (len(times), len(x_grid))")
        return cls("feedback_grid", control_set, times=times, x_grid=x_grid, table=table)

    def raw(self, i, t, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "open_loop":
            c = self.controls
            if c.ndim == 0:
                return np.full(x.shape, float(c))
            if c.ndim == 1:
                return np.full(x.shape, c[i])
            return c[:, i]
        if self.kind == "feedback_linear":
            return self.gain(t) * x
        if self.kind == "feedback_grid":
            k = np.searchsorted(self.times, t + 1e-12 * (1.0 + abs(t)), side="right") - 1
            k = min(max(k, 0), len(self.times) - 1)
            return np.interp(x, self.x_grid, self.table[k])
        raise ValueError(f"unknown policy kind {self.kind!r}")

    def __call__(self, i, t, x):
        """Return ``(controls, number_clamped)`` at step ``i`` / time ``t``."""
        u = self.raw(i, t, x)
        clipped = self.control_set.clip(u)
        return clipped, int(np.count_nonzero(clipped != u))


# ---------------------------------------------------------------------------
# simulation


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    times: np.ndarray
    states: np.ndarray  # N x (M+1)
    controls: np.ndarray  # N x M, left endpoints
    seed: int
    dt: float
    n_clamped: int = 0

    @property
    def n_paths(self):
        return self.states.shape[0]

    @property
    def n_steps(self):
        return self.controls.shape[1]

    def to_dict(self):
        return {
            "schema": FLOW_SCHEMA,
            "type": "trajectory_batch",
            "seed": int(self.seed),
            "dt": float(self.dt),
            "n_clamped": int(self.n_clamped),
            "times": self.times.tolist(),
            "states": self.states.tolist(),
            "controls": self.controls.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        _check_schema(d, "trajectory_batch")
        return cls(
            times=np.asarray(d["times"], float),
            states=np.asarray(d["states"], float),
            controls=np.asarray(d["controls"], float),
            seed=int(d["seed"]),
            dt=float(d["dt"]),
            n_clamped=int(d.get("n_clamped", 0)),
        )


def path_streams(seed, n_paths):
    """One independent generator per path, derived from ``(seed, path index)``."""
    children = np.random.SeedSequence(seed).spawn(n_paths)
    return [np.random.default_rng(c) for c in children]


def simulate(spec, policy, init, M=200, N=1000, seed=0, T=1.0):
    """Euler-Maruyama paths of the controlled SDE under ``policy``.

    Each path draws its initial state and Brownian increments from its own
    stream, so a path does not depend on how many others are simulated.
    Controls outside the policy's control set are clamped and counted.
    """
    if M < 1 or N < 1:
        raise ValueError("need M >= 1 and N >= 1")
    if seed < 0:
        raise ValueError("seed must be a nonnegative integer")
    times = np.linspace(0.0, T, M + 1)
    dt = T / M
    streams = path_streams(seed, N)
    x = np.array([init.sample(g, 1)[0] for g in streams], dtype=float)
    dW = np.stack([g.standard_normal(M) for g in streams]) * math.sqrt(dt)

    states = np.empty((N, M + 1))
    controls = np.empty((N, M))
    states[:, 0] = x
    n_clamped = 0
    for i in range(M):
        t = times[i]
        u, nc = policy(i, t, x)
        n_clamped += nc
        b = spec.b(t, x, u)
        s = spec.sigma(t, x, u)
        bad = ~(np.isfinite(b) & np.isfinite(s))
        if bad.any():
            k = int(np.argmax(bad))
            raise SimulationError(
                f"non-finite coefficient at (t={t!r}, x={x[k]!r}, u={u[k]!r})"
            )
        controls[:, i] = u
        x = x + b * dt + s * dW[:, i]
        states[:, i + 1] = x
    if n_clamped:
        warnings.warn(
            f"{n_clamped} control values were clamped into "
            f"[{policy.control_set.lower}, {policy.control_set.upper}]",
            RuntimeWarning,
            stacklevel=2,
        )
    return TrajectoryBatch(times, states, controls, int(seed), dt, n_clamped)


# ---------------------------------------------------------------------------
# empirical flows


@dataclass(frozen=True, eq=False)
class EmpiricalFlow:
    """Time-binned weighted samples of (state, control) plus a terminal sample.

    Arrays ``x``, ``u`` and ``w`` have shape ``(n_bins, n_atoms)``; unequal bin
    sizes are represented with zero weights. ``paired`` marks flows whose atom
    ``k`` is the same path in every bin (and in the terminal sample), which
    enables path-wise standard errors. ``time_rule`` selects how the bins are
    integrated in time: ``"trapezoid"`` or ``"left"`` (left Riemann sum, used
    for laws propagated by the grid scheme).
    """

    times: np.ndarray
    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    terminal_x: np.ndarray
    terminal_w: np.ndarray
    paired: bool = False
    time_rule: str = "trapezoid"

    def __post_init__(self):
        if self.x.shape != self.u.shape or self.x.shape != self.w.shape:
            raise ValueError("x, u and w must share a shape")
        if self.x.shape[0] != len(self.times) or len(self.times) < 2:
            raise ValueError("need one bin per time point and at least two times")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("flow times must be increasing")
        if self.time_rule not in ("trapezoid", "left"):
            raise ValueError(f"unknown time rule {self.time_rule!r}")
        if (self.w < 0).any() or (self.terminal_w < 0).any():
            raise ValueError("flow weights must be nonnegative")
        sums = np.append(self.w.sum(axis=1), self.terminal_w.sum())
        if np.abs(sums - 1.0).max() > 1e-12:
            raise ValueError("flow weights must sum to 1 in every bin")

    @property
    def T(self):
        return float(self.times[-1] - self.times[0])

    def time_weights(self):
        dt = np.diff(self.times)
        tw = np.zeros(len(self.times))
        if self.time_rule == "trapezoid":
            tw[:-1] += dt / 2
            tw[1:] += dt / 2
        else:
            tw[:-1] = dt
        return tw

    def running_integral(self, f):
        """``sum_i tw_i <f(t_i, ., .), mu_{t_i}>`` for a running function ``f``."""
        tw = self.time_weights()
        vals = f(self.times[:, None], self.x, self.u)
        return float(tw @ np.sum(self.w * vals, axis=1))

    def terminal_integral(self, g):
        return float(self.terminal_w @ g(self.terminal_x))

    def path_costs(self, f, g):
        """Per-path running and terminal costs of a paired flow."""
        if not self.paired:
            raise ValueError("path-wise costs need a paired flow")
        tw = self.time_weights()
        running = tw @ f(self.times[:, None], self.x, self.u)
        return running, g(self.terminal_x)

    def initial_law(self):
        return Empirical(self.x[0].copy(), self.w[0].copy())

    def bin_moments(self):
        """Rows of (t, mean_x, var_x, mean_u, var_u, second_moment) per bin."""
        mx = np.sum(self.w * self.x, axis=1)
        mu = np.sum(self.w * self.u, axis=1)
        vx = np.sum(self.w * (self.x - mx[:, None]) ** 2, axis=1)
        vu = np.sum(self.w * (self.u - mu[:, None]) ** 2, axis=1)
        m2 = np.sum(self.w * (self.x**2 + self.u**2), axis=1)
        return np.column_stack([self.times, mx, vx, mu, vu, m2])

    def write_moments_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "mean_x", "var_x", "mean_u", "var_u", "second_moment"])
            for row in self.bin_moments():
                wr.writerow([repr(float(v)) for v in row])

    def to_dict(self):
        return {
            "schema": FLOW_SCHEMA,
            "type": "empirical_flow",
            "paired": bool(self.paired),
            "time_rule": self.time_rule,
            "times": self.times.tolist(),
            "x": self.x.tolist(),
            "u": self.u.tolist(),
            "w": self.w.tolist(),
            "terminal_x": self.terminal_x.tolist(),
            "terminal_w": self.terminal_w.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        _check_schema(d, "empirical_flow")
        return cls(
            times=np.asarray(d["times"], float),
            x=np.asarray(d["x"], float),
            u=np.asarray(d["u"], float),
            w=np.asarray(d["w"], float),
            terminal_x=np.asarray(d["terminal_x"], float),
            terminal_w=np.asarray(d["terminal_w"], float),
            paired=bool(d["paired"]),
            time_rule=d.get("time_rule", "trapezoid"),
        )


def _check_schema(d, kind):
    if d.get("schema") != FLOW_SCHEMA:
        raise ValueError(f"expected schema {FLOW_SCHEMA!r}, got {d.get('schema')!r}")
    if d.get("type") != kind:
        raise ValueError(f"expected a {kind}, got {d.get('type')!r}")


def flow_from_batch(batch):
    """Equal-weight paired flow; the last bin holds the last recorded control."""
    N, M1 = batch.states.shape
    x = batch.states.T.copy()
    u = np.empty_like(x)
    u[:-1] = batch.controls.T
    u[-1] = batch.controls[:, -1]
    w = np.full((M1, N), 1.0 / N)
    return EmpiricalFlow(
        times=batch.times.copy(),
        x=x,
        u=u,
        w=w,
        terminal_x=batch.states[:, -1].copy(),
        terminal_w=np.full(N, 1.0 / N),
        paired=True,
    )


def second_moment_check(flow):
    """Time-integrated second moment ``int <|x|^2 + |u|^2, mu_t> dt``."""
    return flow.running_integral(lambda t, x, u: x**2 + u**2)


def save_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj.to_dict(), fh, sort_keys=True)
