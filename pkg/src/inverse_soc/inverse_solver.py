"""Minimization of the suboptimality gap over candidate cost classes."""

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from .cost_model import element_of_D, lq_pair
from .errors import InverseSOCError
from .gap_functional import gap

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Candidate:
    cid: str
    pair: object
    params: dict


@dataclass(frozen=True, eq=False)
class SearchSpace:
    """Finite list of candidates; build with the class-method constructors."""

    kind: str
    candidates: tuple
    theta_lo: float = None
    theta_hi: float = None
    q: float = 10.0

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("search space is empty")

    @classmethod
    def theta_interval(cls, lo=0.25, hi=4.0, n=76, q=10.0):
        """LQ pairs ``q x^2 + theta u^2`` on a log-spaced theta grid."""
        if not 0 < lo < hi:
            raise ValueError("need 0 < theta_lo < theta_hi")
        thetas = np.geomspace(lo, hi, n)
        cands = tuple(Candidate(f"theta{i:04d}", lq_pair(float(t), q), {"theta": float(t)})
                      for i, t in enumerate(thetas))
        return cls("theta_interval", cands, float(lo), float(hi), float(q))

    @classmethod
    def coeff_grid(cls, cost_class, n_per_axis=11, lambdas=None):
        """Every ``(lambda, c)`` of a lambda grid times a coefficient grid."""
        lambdas = cost_class.lambdas if lambdas is None else tuple(lambdas)
        coeffs = cost_class.generators.coeff_grid(n_per_axis)
        cands = []
        for a, lam in enumerate(lambdas):
            for b, c in enumerate(coeffs):
                pair = element_of_D(cost_class, lam, c)
                cands.append(Candidate(f"lam{a:03d}_c{b:05d}", pair,
                                       {"lambda": float(lam), "c": [float(v) for v in c]}))
        return cls("coeff_grid", tuple(cands))

    @classmethod
    def explicit_list(cls, pairs, ids=None):
        ids = [f"pair{i:04d}" for i in range(len(pairs))] if ids is None else list(ids)
        if len(set(ids)) != len(ids):
            raise ValueError("candidate ids must be unique")
        return cls("explicit_list",
                   tuple(Candidate(i, p, {}) for i, p in zip(ids, pairs)))

    def thetas(self):
        return np.array([c.params["theta"] for c in self.candidates])


@dataclass(frozen=True)
class Row:
    cid: str
    params: dict
    v: float
    stderr: float
    margin: float


@dataclass(frozen=True, eq=False)
class InverseResult:
    best_id: str
    best_pair: object
    best_params: dict
    best_v: float
    best_stderr: float
    table: tuple
    skipped: tuple = ()
    flags: tuple = ()
    scan_best_params: dict = None
    extra: dict = field(default_factory=dict)

    @property
    def v_star_estimate(self):
        return self.best_v

    def write_table(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["candidate", "params", "v", "stderr", "margin"])
            for r in self.table:
                wr.writerow([r.cid, json.dumps(r.params, sort_keys=True), repr(r.v),
                             repr(r.stderr), repr(r.margin)])

    def summary(self):
        return {
            "best_id": self.best_id,
            "best_params": self.best_params,
            "best_v": self.best_v,
            "best_stderr": self.best_stderr,
            "v_star_estimate": self.v_star_estimate,
            "n_rows": len(self.table),
            "skipped": [list(s) for s in self.skipped],
            "flags": list(self.flags),
            "scan_best_params": self.scan_best_params,
            **self.extra,
        }


def _n_threads(threads):
    if threads is not None:
        return max(1, int(threads))
    return max(1, int(os.environ.get("INVERSE_SOC_THREADS", "1")))


def minimize_gap_scan(flow, space, forward, threads=None):
    """Evaluate the gap of every candidate and keep the smallest.

    Ties go to the lexicographically smallest candidate id. Candidates whose
    evaluation fails are recorded in ``skipped`` with the error message.
    """
    def evaluate(cand):
        try:
            return cand, gap(flow, cand.pair, forward), None
        except (InverseSOCError, ValueError, ArithmeticError) as exc:
            return cand, None, f"{type(exc).__name__}: {exc}"

    n = _n_threads(threads)
    if n == 1:
        results = [evaluate(c) for c in space.candidates]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(evaluate, space.candidates))
    rows, skipped, pairs = [], [], {}
    for cand, rep, err in sorted(results, key=lambda r: r[0].cid):
        if rep is None:
            skipped.append((cand.cid, err))
            continue
        rows.append(Row(cand.cid, cand.params, rep.v, rep.mc_stderr, rep.margin))
        pairs[cand.cid] = cand.pair
    if not rows:
        raise InverseSOCError("every candidate failed; nothing to minimize")
    best = min(rows, key=lambda r: (r.v, r.cid))
    return InverseResult(best.cid, pairs[best.cid], best.params, best.v, best.stderr,
                         tuple(rows), tuple(skipped), scan_best_params=best.params)


def golden_section(fn, lo, hi, width=1e-3):
    """Minimize ``fn`` on ``[lo, hi]`` until the bracket is narrower than ``width``."""
    a, b = float(lo), float(hi)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > width:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fn(d)
    return (c, fc) if fc <= fd else (d, fd)


def minimize_gap_refine(flow, space, forward, gap_fn=None, width=1e-3, scan=None):
    """Scan the theta grid, then golden-section refine around the scan minimum.

    ``gap_fn(theta) -> (v, stderr)`` overrides the gap evaluation (used for
    stubs). The refinement bracket spans the two grid neighbours of the
    minimum of the 3-point smoothed scan. The scan result is returned with a
    flag instead when the scan is flat within noise (``"flat"``) or shows at
    least three separate local minima deeper than the noise
    (``"non_unimodal"``).
    """
    if space.kind != "theta_interval":
        raise ValueError("refinement needs a theta_interval search space")
    thetas = space.thetas()
    q = space.q
    if gap_fn is None:
        def gap_fn(theta):
            rep = gap(flow, lq_pair(theta, q), forward)
            return rep.v, rep.mc_stderr

    if scan is None:
        rows = []
        for cand, th in zip(space.candidates, thetas):
            v, se = gap_fn(float(th))
            rows.append(Row(cand.cid, cand.params, float(v), float(se), 3.0 * float(se)))
        best = min(rows, key=lambda r: (r.v, r.cid))
        scan = InverseResult(best.cid, lq_pair(best.params["theta"], q), best.params,
                             best.v, best.stderr, tuple(rows),
                             scan_best_params=best.params)
    v = np.array([r.v for r in scan.table])
    se = np.array([r.stderr for r in scan.table])
    noise = 3.0 * float(np.median(se)) + 1e-12 * max(1.0, float(np.abs(v).max()))

    flags = []
    if v.max() - v.min() <= noise:
        flags.append("flat")
    else:
        # pad with high walls so minima at the ends count too
        wall = v.max() + 2 * noise
        minima, _ = find_peaks(-np.concatenate([[wall], v, [wall]]), prominence=noise)
        if len(minima) >= 3:
            flags.append("non_unimodal")
    if flags:
        return _with(scan, flags=tuple(flags))

    smooth = np.convolve(np.pad(v, 1, mode="edge"), np.ones(3) / 3, mode="valid")
    k = int(np.argmin(smooth))
    lo = thetas[max(k - 1, 0)]
    hi = thetas[min(k + 1, len(thetas) - 1)]
    cache = {}

    def obj(theta):
        if theta not in cache:
            cache[theta] = gap_fn(theta)
        return cache[theta][0]

    th_hat, v_hat = golden_section(obj, lo, hi, width)
    se_hat = cache[th_hat][1]
    params = {"theta": float(th_hat)}
    return InverseResult("refined", lq_pair(th_hat, q), params, float(v_hat),
                         float(se_hat), scan.table, scan.skipped, (),
                         scan_best_params=scan.best_params,
                         extra={"bracket": [float(lo), float(hi)]})


def _with(res, **kw):
    fields = dict(res.__dict__)
    fields.update(kw)
    return InverseResult(**fields)


@dataclass(frozen=True)
class NonnegReport:
    rows: tuple  # (id, v, stderr, tol, margin)
    violations: tuple

    @property
    def n_violations(self):
        return len(self.violations)

    def to_dict(self):
        return {"rows": [list(r) for r in self.rows],
                "violations": list(self.violations),
                "n_violations": self.n_violations}


def certify_nonnegativity(flow, sampler, n_samples, seed, forward):
    """Sample candidate pairs and check ``v >= -(3 SE + tol)`` for each.

    ``sampler`` is a cost class with a ``sample(rng)`` method or a callable
    ``rng -> CostPair``.
    """
    draw = sampler.sample if hasattr(sampler, "sample") else sampler
    rng = np.random.default_rng(seed)
    rows, bad = [], []
    for i in range(n_samples):
        rep = gap(flow, draw(rng), forward)
        cid = f"sample{i:04d}"
        rows.append((cid, rep.v, rep.mc_stderr, rep.solver_tol, rep.margin))
        if rep.v < -rep.margin:
            bad.append(cid)
    return NonnegReport(tuple(rows), tuple(bad))
