"""Candidate cost pairs ``(f, g)``, affine cost classes and their validation.

A cost *term* is a vectorized function of ``(t, x, u)``. Running costs use all
three arguments. Terminal costs are terms evaluated with ``u = 0`` at the
horizon and must not depend on ``u``. Every term serializes to a plain dict
so that pairs can be cached and written to JSON.
"""

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluationError

COST_SCHEMA = "cost-v1"
_COORDS = ("t", "x", "u")


def _stack(t, x, u, coords):
    t, x, u = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float),
                                  np.asarray(u, float))
    parts = {"t": t, "x": x, "u": u}
    return [parts[c] for c in coords]


class Term:
    """Base class: subclasses define ``__call__(t, x, u)`` and ``to_dict``."""

    time_dependent = False
    u_dependent = True

    def bound(self):
        """Sup-norm bound over all arguments, ``inf`` if unbounded."""
        return math.inf

    def as_terminal(self, x, T=1.0):
        return self(T, x, 0.0)

    def key(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def __add__(self, other):
        return FeatureAffine(self, [other], [1.0])


@dataclass(frozen=True, eq=False)
class Zero(Term):
    time_dependent = False
    u_dependent = False

    def __call__(self, t, x, u=0.0):
        return np.zeros(np.broadcast(t, x, u).shape)

    def bound(self):
        return 0.0

    def to_dict(self):
        return {"kind": "zero"}


@dataclass(frozen=True, eq=False)
class Constant(Term):
    value: float = 0.0
    u_dependent = False

    def __call__(self, t, x, u=0.0):
        return np.full(np.broadcast(t, x, u).shape, float(self.value))

    def bound(self):
        return abs(self.value)

    def to_dict(self):
        return {"kind": "constant", "value": float(self.value)}


@dataclass(frozen=True, eq=False)
class QuadraticCost(Term):
    """``q x^2 + theta u^2 + offset``; the family of the LQ recovery example."""

    q: float = 10.0
    theta: float = 1.0
    offset: float = 0.0

    @property
    def u_dependent(self):
        return self.theta != 0

    def __call__(self, t, x, u=0.0):
        t, x, u = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float),
                                      np.asarray(u, float))
        return self.q * x**2 + self.theta * u**2 + self.offset

    def to_dict(self):
        return {"kind": "quadratic_lq", "q": float(self.q), "theta": float(self.theta),
                "offset": float(self.offset)}


@dataclass(frozen=True, eq=False)
class RBFSum(Term):
    """``sum_j gamma_j exp(-alpha_j |xi - xi_j|^2)`` with ``xi`` built from ``coords``.

    ``coords`` picks which of ``("t", "x", "u")`` enter ``xi``; a terminal cost
    uses ``("x",)``.
    """

    gammas: np.ndarray
    alphas: np.ndarray
    centers: np.ndarray  # n_terms x len(coords)
    coords: tuple = _COORDS

    def __post_init__(self):
        object.__setattr__(self, "gammas", np.atleast_1d(np.asarray(self.gammas, float)))
        object.__setattr__(self, "alphas", np.atleast_1d(np.asarray(self.alphas, float)))
        c = np.asarray(self.centers, float).reshape(len(self.gammas), len(self.coords))
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "coords", tuple(self.coords))
        if np.any(self.alphas <= 0):
            raise ValueError("RBF widths alpha_j must be positive")
        if not set(self.coords) <= set(_COORDS):
            raise ValueError(f"coords must be drawn from {_COORDS}")

    @property
    def time_dependent(self):
        return "t" in self.coords

    @property
    def u_dependent(self):
        return "u" in self.coords

    def __call__(self, t, x, u=0.0):
        xi = _stack(t, x, u, self.coords)
        out = np.zeros(np.broadcast(t, x, u).shape)
        for gam, alp, cen in zip(self.gammas, self.alphas, self.centers):
            d2 = sum((z - c) ** 2 for z, c in zip(xi, cen))
            out = out + gam * np.exp(-alp * d2)
        return out

    def bound(self):
        return float(np.abs(self.gammas).sum())

    def size(self):
        """``sum_j |gamma_j| + alpha_j (1 + |xi_j|)``, the class-defining budget."""
        norms = np.linalg.norm(self.centers, axis=1)
        return float(np.sum(np.abs(self.gammas) + self.alphas * (1.0 + norms)))

    def lipschitz(self):
        """Bound on the Lipschitz constant: ``sum |gamma| sqrt(2 alpha / e)``."""
        return float(np.sum(np.abs(self.gammas) * np.sqrt(2 * self.alphas / math.e)))

    def to_dict(self):
        return {"kind": "rbf_sum", "coords": list(self.coords),
                "gammas": self.gammas.tolist(), "alphas": self.alphas.tolist(),
                "centers": self.centers.tolist()}


@dataclass(frozen=True, eq=False)
class TanhUnit(Term):
    """Bounded random feature ``tanh(w . xi + b)`` (one hidden unit, no output weight)."""

    weights: tuple
    bias: float = 0.0
    coords: tuple = _COORDS

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "coords", tuple(self.coords))
        if len(self.weights) != len(self.coords):
            raise ValueError("need one weight per coordinate")

    @property
    def time_dependent(self):
        return "t" in self.coords

    @property
    def u_dependent(self):
        return "u" in self.coords

    def __call__(self, t, x, u=0.0):
        xi = _stack(t, x, u, self.coords)
        return np.tanh(sum(w * z for w, z in zip(self.weights, xi)) + self.bias)

    def bound(self):
        return 1.0

    def to_dict(self):
        return {"kind": "tanh_unit", "coords": list(self.coords),
                "weights": list(self.weights), "bias": float(self.bias)}


@dataclass(frozen=True, eq=False)
class Tabulated(Term):
    """Function of ``x`` tabulated on a grid, linear in between, constant outside."""

    grid: np.ndarray
    values: np.ndarray
    u_dependent = False

    def __post_init__(self):
        g = np.asarray(self.grid, float)
        v = np.asarray(self.values, float)
        if g.shape != v.shape or g.ndim != 1 or np.any(np.diff(g) <= 0):
            raise ValueError("tabulated cost needs an increasing grid and matching values")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    def __call__(self, t, x, u=0.0):
        shape = np.broadcast(t, x, u).shape
        return np.broadcast_to(np.interp(x, self.grid, self.values), shape).copy()

    def bound(self):
        return float(np.abs(self.values).max())

    def to_dict(self):
        return {"kind": "tabulated", "grid": self.grid.tolist(),
                "values": self.values.tolist()}


@dataclass(frozen=True, eq=False)
class FeatureAffine(Term):
    """``base + sum_i c_i phi_i``."""

    base: Term
    features: tuple
    coeffs: tuple

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if len(self.features) != len(self.coeffs):
            raise ValueError("need one coefficient per feature")

    @property
    def time_dependent(self):
        return self.base.time_dependent or any(
            p.time_dependent for p, c in zip(self.features, self.coeffs) if c)

    @property
    def u_dependent(self):
        return self.base.u_dependent or any(
            p.u_dependent for p, c in zip(self.features, self.coeffs) if c)

    def __call__(self, t, x, u=0.0):
        out = np.array(self.base(t, x, u), dtype=float)
        for phi, c in zip(self.features, self.coeffs):
            if c != 0.0:
                out = out + c * phi(t, x, u)
        return out

    def bound(self):
        return self.base.bound() + sum(abs(c) * p.bound()
                                       for p, c in zip(self.features, self.coeffs))

    def to_dict(self):
        return {"kind": "feature_affine", "base": self.base.to_dict(),
                "features": [p.to_dict() for p in self.features],
                "coeffs": list(self.coeffs)}


def term_from_dict(d):
    kind = d["kind"]
    if kind == "zero":
        return Zero()
    if kind == "constant":
        return Constant(float(d["value"]))
    if kind == "quadratic_lq":
        return QuadraticCost(float(d.get("q", 10.0)), float(d.get("theta", 1.0)),
                             float(d.get("offset", 0.0)))
    if kind == "rbf_sum":
        return RBFSum(d["gammas"], d["alphas"], d["centers"],
                      tuple(d.get("coords", _COORDS)))
    if kind == "tanh_unit":
        return TanhUnit(tuple(d["weights"]), float(d.get("bias", 0.0)),
                        tuple(d.get("coords", _COORDS)))
    if kind == "tabulated":
        return Tabulated(d["grid"], d["values"])
    if kind == "feature_affine":
        return FeatureAffine(term_from_dict(d["base"]),
                             [term_from_dict(p) for p in d["features"]], d["coeffs"])
    raise ValueError(f"unknown cost term kind {kind!r}")


@dataclass(frozen=True, eq=False)
class CostPair:
    """Running cost ``f(t, x, u)`` and terminal cost ``g(x)``."""

    f: Term
    g: Term = field(default_factory=Zero)

    def __post_init__(self):
        if self.g.u_dependent:
            raise ValueError("terminal cost must not depend on u")

    def running(self, t, x, u):
        return self.f(t, x, u)

    def terminal(self, x, T=1.0):
        return self.g(T, x, 0.0)

    def to_dict(self):
        return {"schema": COST_SCHEMA, "f": self.f.to_dict(), "g": self.g.to_dict()}

    def key(self):
        """Canonical serialization, used as a cache key."""
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        if d.get("schema", COST_SCHEMA) != COST_SCHEMA:
            raise ValueError(f"expected schema {COST_SCHEMA!r}")
        return cls(term_from_dict(d["f"]), term_from_dict(d.get("g", {"kind": "zero"})))


def lq_pair(theta, q=10.0):
    """The pair ``(q x^2 + theta u^2, 0)``."""
    return CostPair(QuadraticCost(q, theta), Zero())


def eval_cost(pair, t, x, u, T=1.0):
    """Pointwise ``(f(t, x, u), g(x))``; raises on non-finite results."""
    fv = np.asarray(pair.running(t, x, u), dtype=float)
    gv = np.asarray(pair.terminal(x, T), dtype=float)
    if not (np.all(np.isfinite(fv)) and np.all(np.isfinite(gv))):
        raise EvaluationError(f"non-finite cost value at t={t!r}, x={x!r}, u={u!r}")
    if fv.ndim == 0 and gv.ndim == 0:
        return float(fv), float(gv)
    return fv, gv


# ---------------------------------------------------------------------------
# probes and validation


@dataclass(frozen=True)
class ProbeBox:
    """Tensor grid over ``[0, T] x [-L, L] x [u_lo, u_hi]``."""

    T: float = 1.0
    L: float = 6.0
    u_lo: float = -10.0
    u_hi: float = 10.0
    n_t: int = 61
    n_x: int = 61
    n_u: int = 21

    @classmethod
    def around(cls, flow, control_set, T=None, n_t=61, n_x=61, n_u=21):
        """Box of half-width six standard deviations of the observed states."""
        std = math.sqrt(float(np.sum(flow.w * flow.x**2) / len(flow.times)
                              - (np.sum(flow.w * flow.x) / len(flow.times)) ** 2))
        T = flow.T if T is None else T
        return cls(T, 6.0 * std, control_set.lower, control_set.upper, n_t, n_x, n_u)

    def mesh(self):
        t = np.linspace(0.0, self.T, self.n_t)
        x = np.linspace(-self.L, self.L, self.n_x)
        u = np.linspace(self.u_lo, self.u_hi, self.n_u)
        return np.meshgrid(t, x, u, indexing="ij")


@dataclass(frozen=True)
class GrowthCertificate:
    K: float
    probe_max_ratio: float

    @property
    def passed(self):
        return self.probe_max_ratio <= 1.0


def validate_growth(pair, K, probes=ProbeBox()):
    """Max of ``(|f| + |g|) / (K (1 + x^2 + u^2))`` over the probe box."""
    if not K > 0:
        raise ValueError("growth constant K must be positive")
    t, x, u = probes.mesh()
    fv, gv = eval_cost(pair, t, x, u, T=probes.T)
    ratio = (np.abs(fv) + np.abs(gv)) / (K * (1.0 + x**2 + u**2))
    return GrowthCertificate(float(K), float(ratio.max()))


def lipschitz_ratio(term, c_lip, probes=ProbeBox(), n_pairs=2000, seed=0):
    """Largest ``|h(a) - h(b)| / (c_lip |a - b|)`` over random probe pairs."""
    rng = np.random.default_rng(seed)
    lo = np.array([0.0, -probes.L, probes.u_lo])
    hi = np.array([probes.T, probes.L, probes.u_hi])
    a = rng.uniform(lo, hi, size=(n_pairs, 3))
    b = a + rng.normal(scale=0.05 * (hi - lo), size=(n_pairs, 3))
    b = np.clip(b, lo, hi)
    da = term(a[:, 0], a[:, 1], a[:, 2]) - term(b[:, 0], b[:, 1], b[:, 2])
    dist = np.linalg.norm(a - b, axis=1)
    keep = dist > 0
    return float(np.max(np.abs(da[keep]) / (c_lip * dist[keep])))


# ---------------------------------------------------------------------------
# generator classes


COEFF_SETS = ("sup_ball", "l1_ball", "bl")


@dataclass(frozen=True, eq=False)
class GeneratorClass:
    """Bounded feature pairs with a convex symmetric compact coefficient set.

    ``coeff_set`` is ``"sup_ball"`` (``|c_i| <= R``), ``"l1_ball"``
    (``sum |c_i| <= R``) or ``"bl"``, the bounded-Lipschitz ball on terminal
    costs, which carries no finite features and is handled in ``transport``.
    """

    f_features: tuple = ()
    g_features: tuple = ()
    coeff_set: str = "sup_ball"
    radius: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "f_features", tuple(self.f_features))
        object.__setattr__(self, "g_features", tuple(self.g_features))
        if self.coeff_set not in COEFF_SETS:
            raise ValueError(f"coeff_set must be one of {COEFF_SETS}")
        if len(self.f_features) != len(self.g_features):
            raise ValueError("features come in (f, g) pairs")
        if not self.radius >= 0:
            raise ValueError("radius must be nonnegative")
        for p in self.g_features:
            if p.u_dependent:
                raise ValueError("terminal features must not depend on u")
        if self.coeff_set != "bl":
            for p in self.f_features + self.g_features:
                if not math.isfinite(p.bound()):
                    raise ValueError(f"generator feature {p.to_dict()['kind']} is unbounded")

    @property
    def n_features(self):
        return len(self.f_features)

    def bounds(self):
        """Declared sup-norm bounds ``B_i`` of each feature pair (f part + g part)."""
        return np.array([pf.bound() + pg.bound()
                         for pf, pg in zip(self.f_features, self.g_features)])

    def contains(self, c, tol=1e-12):
        c = np.asarray(c, float)
        if self.coeff_set == "sup_ball":
            return bool(np.all(np.abs(c) <= self.radius + tol))
        if self.coeff_set == "l1_ball":
            return bool(np.abs(c).sum() <= self.radius + tol)
        raise ValueError("the bl ball has no finite coefficient vector")

    def project(self, c):
        """Euclidean projection onto the coefficient set."""
        c = np.asarray(c, float)
        if self.coeff_set == "sup_ball":
            return np.clip(c, -self.radius, self.radius)
        if self.coeff_set == "l1_ball":
            a = np.abs(c)
            if a.sum() <= self.radius:
                return c.copy()
            s = np.sort(a)[::-1]
            cs = np.cumsum(s)
            k = np.nonzero(s * np.arange(1, len(s) + 1) > cs - self.radius)[0][-1]
            tau = (cs[k] - self.radius) / (k + 1)
            return np.sign(c) * np.maximum(a - tau, 0.0)
        raise ValueError("the bl ball has no finite coefficient vector")

    def vertices(self):
        n, R = self.n_features, self.radius
        if self.coeff_set == "sup_ball":
            grids = np.meshgrid(*[[-R, R]] * n, indexing="ij")
            return np.stack([g.ravel() for g in grids], axis=1)
        if self.coeff_set == "l1_ball":
            eye = np.eye(n) * R
            return np.vstack([eye, -eye])
        raise ValueError("the bl ball has no vertices")

    def support(self, d):
        """``sup_{c in set} c . d``."""
        d = np.asarray(d, float)
        if self.coeff_set == "sup_ball":
            return self.radius * float(np.abs(d).sum())
        if self.coeff_set == "l1_ball":
            return self.radius * float(np.abs(d).max()) if d.size else 0.0
        raise ValueError("use transport.rho_bl for the bl ball")

    def coeff_grid(self, n_per_axis):
        """Tensor (sup ball) or filtered tensor (l1 ball) grid of coefficients."""
        if self.n_features == 0:
            return np.zeros((1, 0))
        axis = np.linspace(-self.radius, self.radius, n_per_axis)
        grids = np.meshgrid(*[axis] * self.n_features, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        if self.coeff_set == "l1_ball":
            pts = pts[np.abs(pts).sum(axis=1) <= self.radius + 1e-12]
        return pts

    def check_bounds(self, probes=ProbeBox()):
        """Observed max of each feature pair on probes divided by its declared bound."""
        t, x, u = probes.mesh()
        out = []
        for pf, pg, B in zip(self.f_features, self.g_features, self.bounds()):
            obs = np.abs(pf(t, x, u)).max() + np.abs(pg(probes.T, x[0, :, 0], 0.0)).max()
            out.append(obs / B if B > 0 else (0.0 if obs == 0 else math.inf))
        return np.array(out)

    def to_dict(self):
        return {"f_features": [p.to_dict() for p in self.f_features],
                "g_features": [p.to_dict() for p in self.g_features],
                "coeff_set": self.coeff_set, "radius": float(self.radius)}

    @classmethod
    def from_dict(cls, d):
        return cls([term_from_dict(p) for p in d.get("f_features", [])],
                   [term_from_dict(p) for p in d.get("g_features", [])],
                   d.get("coeff_set", "sup_ball"), float(d.get("radius", 1.0)))


@dataclass(frozen=True, eq=False)
class CostClassD:
    """``{(f0 + lam sum c_i phi_i^f, g0 + lam sum c_i phi_i^g)}`` over lambdas and coefficients."""

    base: CostPair
    generators: GeneratorClass
    lambdas: tuple = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0)

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        if any(v <= 0 for v in self.lambdas):
            raise ValueError("lambda grid must be positive")

    def check_base(self, probes=ProbeBox()):
        """``(min f0, sup |g0|)`` on probes; the base must be bounded below / bounded."""
        t, x, u = probes.mesh()
        fv, gv = eval_cost(self.base, t, x, u, T=probes.T)
        return float(fv.min()), float(np.abs(gv).max())

    def sample(self, rng):
        lam = float(rng.choice(self.lambdas))
        n = self.generators.n_features
        c = rng.uniform(-self.generators.radius, self.generators.radius, n)
        return element_of_D(self, lam, self.generators.project(c))

    def to_dict(self):
        return {"schema": COST_SCHEMA, "base": self.base.to_dict(),
                "generators": self.generators.to_dict(), "lambdas": list(self.lambdas)}


def element_of_D(cls, lam, c):
    """The pair ``(f0 + lam sum c_i phi_i^f, g0 + lam sum c_i phi_i^g)``.

    Coefficients outside the class's set are projected onto it with a warning.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    gen = cls.generators
    c = np.atleast_1d(np.asarray(c, float))
    if c.shape != (gen.n_features,):
        raise ValueError(f"expected {gen.n_features} coefficients, got {c.shape}")
    if not gen.contains(c):
        c = gen.project(c)
        warnings.warn("coefficients projected onto the generator set", RuntimeWarning,
                      stacklevel=2)
    return _affine_pair(cls.base, gen, lam * c)


def _affine_pair(base, gen, coeffs):
    if gen.n_features == 0:
        return base
    return CostPair(FeatureAffine(base.f, gen.f_features, coeffs),
                    FeatureAffine(base.g, gen.g_features, coeffs))


# ---------------------------------------------------------------------------
# random RBF pairs under the size budget


def sample_rbf_pair(rng, budget, n_terms=3, T=1.0, L=3.0, U=(-2.0, 2.0),
                    alpha_range=(0.05, 0.5)):
    """Random RBF running and terminal costs, each with size ``<= budget``.

    Centers are drawn from ``[0, T] x [-L, L] x U`` (running) and ``[-L, L]``
    (terminal); widths and weights are rescaled so that
    ``sum_j |gamma_j| + alpha_j (1 + |xi_j|) <= budget``.
    """
    def draw(coords):
        lo = {"t": 0.0, "x": -L, "u": U[0]}
        hi = {"t": T, "x": L, "u": U[1]}
        cen = np.column_stack([rng.uniform(lo[c], hi[c], n_terms) for c in coords])
        alp = rng.uniform(*alpha_range, n_terms)
        gam = rng.uniform(-1.0, 1.0, n_terms)
        width_cost = float(np.sum(alp * (1.0 + np.linalg.norm(cen, axis=1))))
        if width_cost > budget / 2:
            alp *= (budget / 2) / width_cost
            width_cost = budget / 2
        gam *= (budget - width_cost) / max(np.abs(gam).sum(), 1e-300)
        return RBFSum(gam, alp, cen, coords)

    return CostPair(draw(_COORDS), draw(("x",)))
