"""Correlation estimators and verdicts for global-local, local-local and
global-global mixing, coalescence of densities and the equilibrium functional.

All verdicts are three valued: ``pass``, ``fail`` or ``inconclusive`` (error
bounds too large to decide).
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import MethodMismatch, QuadratureError, ZeroMean
from .maps import PiecewiseMap
from .observables import (GlobalObservable, LatticeMeasure, LocalObservable, cesaro_mean, make_dipole,
                          make_indicator_density, project_to_lattice, restrict)
from .transfer import (EXACT_LATTICE, PREIMAGE_SUM, TransferEngine, lattice_correlation,
                       pieces_coupling)

EXACT = "exact"
QUADRATURE = "quadrature"
MONTECARLO = "montecarlo"
AUTO = "auto"
METHODS = (EXACT, QUADRATURE, MONTECARLO, AUTO)

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"
DEFAULT_SAMPLES = 10**6
ZERO_MEAN_TOL = 1e-12


@dataclass
class CorrelationSeries:
    n_values: list
    estimates: list
    error_bounds: list
    method: str
    seed: int | None = None
    samples: int | None = None

    def __post_init__(self):
        if not (len(self.n_values) == len(self.estimates) == len(self.error_bounds)):
            raise ValueError("correlation series columns differ in length")

    def rows(self):
        return [{"n": n, "estimate": e, "error_bound": b}
                for n, e, b in zip(self.n_values, self.estimates, self.error_bounds)]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "estimate", "error_bound", "method"])
        for n, e, b in zip(self.n_values, self.estimates, self.error_bounds):
            w.writerow([n, repr(float(e)), repr(float(b)), self.method])
        return buf.getvalue()


@dataclass
class Report:
    """Serializable verdict of one experiment."""

    experiment: str
    map: str
    observables: dict
    method: str
    seed: int | None
    series: list
    verdict: str
    tolerances: dict
    details: dict = field(default_factory=dict)

    def to_json(self):
        return {"experiment": self.experiment, "map": self.map, "observables": self.observables,
                "method": self.method, "seed": self.seed, "series": self.series, "verdict": self.verdict,
                "tolerances": self.tolerances, "details": self.details}


def _check_n_list(n_list):
    n_list = [int(n) for n in n_list]
    if not n_list or any(b <= a for a, b in zip(n_list, n_list[1:])) or n_list[0] < 0:
        raise ValueError("n list must be nonempty, nonnegative and increasing")
    return n_list


def _as_local(g):
    if isinstance(g, LatticeMeasure):
        from .observables import lattice_density
        return lattice_density(g)
    return g


# -- correlation estimators ------------------------------------------------------------

def correlate(tmap: PiecewiseMap, F: GlobalObservable, g, n_list, method=AUTO, *, seed=None,
              samples=DEFAULT_SAMPLES, cache=None, cache_key=None, engine=None) -> CorrelationSeries:
    """``mu((F o T^n) g)`` for each ``n`` in ``n_list``."""
    n_list = _check_n_list(n_list)
    g = _as_local(g)
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    lattice_ok = tmap.jump_law is not None and g.lattice is not None
    if method == AUTO:
        if lattice_ok:
            method = EXACT
        else:
            try:
                return correlate(tmap, F, g, n_list, QUADRATURE, engine=engine)
            except QuadratureError:
                method = MONTECARLO
    if method == EXACT:
        if not lattice_ok:
            raise MethodMismatch("exact correlation needs a random-walk map and a lattice density")
        engine = engine or TransferEngine(tmap, EXACT_LATTICE)
        vals = lattice_correlation(engine, F, g.lattice, n_list, cache=cache, key=cache_key)
        return CorrelationSeries(n_list, [v.value for v in vals], [v.error_bound for v in vals], EXACT)
    if method == QUADRATURE:
        return _correlate_quadrature(tmap, F, g, n_list, engine)
    if seed is None:
        raise ValueError("Monte Carlo correlation needs an explicit seed")
    return _correlate_montecarlo(tmap, F, g, n_list, seed, samples)


def _correlate_quadrature(tmap, F, g, n_list, engine=None):
    engine = engine if engine is not None and engine.mode == PREIMAGE_SUM else TransferEngine(tmap, PREIMAGE_SUM)
    wanted = set(n_list)
    out = {}
    for pusher, ps in engine.pieces(g, max(n_list)):
        if ps.n in wanted:
            out[ps.n] = pieces_coupling(F, pusher, ps)
    return CorrelationSeries(n_list, [out[n].value for n in n_list], [out[n].error_bound for n in n_list],
                             QUADRATURE)


class _Sampler:
    """Draws points from ``|g| / ||g||_1`` restricted to one sign of ``g``."""

    def __init__(self, g: LocalObservable, sign, rng):
        self.g, self.sign, self.rng = g, sign, rng
        self.segments = None
        if g.piecewise_constant:
            segs, masses = [], []
            for a, b in g.segments():
                v = float(g.func(np.array([0.5 * (a + b)]))[0])
                if v * sign > 0:
                    segs.append((a, b))
                    masses.append(abs(v) * (b - a))
            self.segments = np.array(segs).reshape(-1, 2)
            self.mass = float(sum(masses))
            self.probs = np.array(masses) / self.mass if masses else np.zeros(0)
        else:
            part = g.positive_part() if sign > 0 else g.negative_part()
            self.mass = part.integral
            self.peak = g.peak

    def draw(self, size):
        if size == 0:
            return np.zeros(0)
        if self.segments is not None:
            idx = self.rng.choice(self.probs.size, size=size, p=self.probs)
            a, b = self.segments[idx, 0], self.segments[idx, 1]
            return a + (b - a) * self.rng.random(size)
        out = []
        need = size
        while need:
            x = self.g.lo + (self.g.hi - self.g.lo) * self.rng.random(2 * need + 16)
            u = self.peak * self.rng.random(x.size)
            v = self.g.func(x) * self.sign
            acc = x[(v > 0) & (u < v)]
            out.append(acc[:need])
            need -= min(need, acc.size)
        return np.concatenate(out)


def _advance(tmap, x, steps):
    for _ in range(steps):
        x = tmap.step_array(x)
    return x


def _correlate_montecarlo(tmap, F, g, n_list, seed, samples):
    rng = np.random.default_rng(seed)
    strata = []
    total = g.l1
    for sign in (1, -1):
        s = _Sampler(g, sign, rng)
        if s.mass > 0:
            strata.append(s)
    size = {id(s): max(2, int(round(samples * s.mass / total))) for s in strata}
    states = [(s, s.draw(size[id(s)])) for s in strata]
    est = {n: 0.0 for n in n_list}
    var = {n: 0.0 for n in n_list}
    t = 0
    for n in n_list:
        new_states = []
        for s, x in states:
            x = _advance(tmap, x, n - t)
            bad = ~np.isfinite(x)
            while bad.any():
                # singular orbits form a null set; redraw them from the same stratum
                fresh = _advance(tmap, s.draw(int(bad.sum())), n)
                x[bad] = fresh
                bad = ~np.isfinite(x)
            vals = F.func(x)
            est[n] += s.sign * s.mass * float(vals.mean())
            var[n] += s.mass ** 2 * float(vals.var(ddof=1)) / vals.size
            new_states.append((s, x))
        states = new_states
        t = n
    return CorrelationSeries(n_list, [est[n] for n in n_list], [3 * math.sqrt(var[n]) for n in n_list],
                             MONTECARLO, seed=seed, samples=samples)


# -- verdict helpers ---------------------------------------------------------------------

def tail_slice(n_list, tail_fraction=1 / 3):
    k = max(1, math.ceil(len(n_list) * tail_fraction))
    return slice(len(n_list) - k, len(n_list))


def _decide(deviations, errors, tol):
    if max(errors) > tol / 2:
        return INCONCLUSIVE
    return PASS if all(d <= tol + e for d, e in zip(deviations, errors)) else FAIL


def glm_verdict(tmap, F, g_set, avg_f, n_list, tol, method=AUTO, *, seed=None, samples=DEFAULT_SAMPLES,
                tail_fraction=1 / 3, cache=None):
    """Tail deviations ``|corr(n) - Avg(F) mu(g)|`` for every ``g``; GLM2 pass iff all within ``tol``.

    The restricted GLM3 index is the largest deviation divided by ``||g||_1``
    over the (finite) set of densities.
    """
    n_list = _check_n_list(n_list)
    sl = tail_slice(n_list, tail_fraction)
    per_g, series = [], []
    verdicts = []
    glm3 = 0.0
    for g in g_set:
        g = _as_local(g)
        cs = correlate(tmap, F, g, n_list, method, seed=seed, samples=samples, cache=cache,
                       cache_key=("g", g.name))
        target = avg_f * g.integral
        dev = [abs(e - target) for e in cs.estimates]
        tail_dev, tail_err = dev[sl], cs.error_bounds[sl]
        v = _decide(tail_dev, tail_err, tol)
        verdicts.append(v)
        glm3 = max(glm3, max(tail_dev) / g.l1)
        entry = {"g": g.name, "mu_g": g.integral, "l1": g.l1, "method": cs.method,
                 "tail_mean_deviation": float(np.mean(tail_dev)), "tail_max_deviation": float(max(tail_dev)),
                 "verdict": v}
        if abs(g.integral) <= ZERO_MEAN_TOL and g.lattice is not None and tmap.jump_law is not None:
            engine = TransferEngine(tmap, EXACT_LATTICE)
            bound = [F.bound * x.value for x in engine.lin_norm(g.lattice, n_list)]
            entry["glm1_bound"] = bound
            entry["glm1_bound_holds"] = all(abs(e) <= b + eb + 1e-15 for e, b, eb in
                                            zip(cs.estimates, bound, cs.error_bounds))
        per_g.append(entry)
        series.extend({"g": g.name, **r} for r in cs.rows())
    verdict = FAIL if FAIL in verdicts else (INCONCLUSIVE if INCONCLUSIVE in verdicts else PASS)
    return Report("glm", tmap.name, {"F": F.name, "g": [e["g"] for e in per_g]}, method, seed, series, verdict,
                  {"tol": tol, "tail_fraction": tail_fraction},
                  {"avg_f": avg_f, "per_g": per_g, "glm3_index": glm3})


def glm3_dictionary():
    """Finite stand-in for the unit ball of integrable functions used by the GLM3 index.

    Cell-aligned indicators of width 1 and 2 at the centers 0, +-1, +-5, +-25,
    plus the dipole on cells 0 and 1.
    """
    out = []
    for c in (0, 1, -1, 5, -5, 25, -25):
        for w in (1, 2):
            out.append(make_indicator_density(c, c + w))
    out.append(make_dipole(0, 1))
    return out


def llm_verdict(tmap, f: LocalObservable, g, n_list, tol, method=AUTO, *, seed=None, samples=DEFAULT_SAMPLES,
                tail_fraction=1 / 3):
    """Local-local correlations ``mu((f o T^n) g)``; pass iff the tail is within ``tol`` of 0."""
    n_list = _check_n_list(n_list)
    g = _as_local(g)
    F = f.as_global()
    cs = correlate(tmap, F, g, n_list, method, seed=seed, samples=samples)
    sl = tail_slice(n_list, tail_fraction)
    v = _decide([abs(e) for e in cs.estimates[sl]], cs.error_bounds[sl], tol)
    return Report("llm", tmap.name, {"f": f.name, "g": g.name}, cs.method, seed, cs.rows(), v,
                  {"tol": tol, "tail_fraction": tail_fraction},
                  {"tail_max": float(max(abs(e) for e in cs.estimates[sl]))})


# -- global-global ------------------------------------------------------------------------

@dataclass
class GgmGrid:
    scales: list
    n_values: list
    entries: list  # entries[i][k] = (value, error) or None for a missing cell
    target: float
    anti_diagonal: list
    corner_deviation: float

    def to_json(self):
        return {"scales": self.scales, "n": self.n_values, "target": self.target,
                "entries": [[None if e is None else {"value": e[0], "error": e[1]} for e in row]
                            for row in self.entries],
                "anti_diagonal": self.anti_diagonal, "corner_deviation": self.corner_deviation}


def _window_series(tmap, F, G, V, n_list):
    """``mu_V((F o T^n) G)`` along ``n_list`` (``None`` where quadrature gives up)."""
    local = restrict(G, V.lo, V.hi)
    engine = TransferEngine(tmap, PREIMAGE_SUM)
    wanted = set(n_list)
    out = {}
    try:
        for pusher, ps in engine.pieces(local, max(n_list)):
            if ps.n in wanted:
                try:
                    v = pieces_coupling(F, pusher, ps)
                    out[ps.n] = (v.value / V.measure, v.error_bound / V.measure)
                except QuadratureError:
                    out[ps.n] = None
    except QuadratureError:
        pass
    return [out.get(n) for n in n_list]


def ggm_grid(tmap, F, G, fam, n_list, avg_f, avg_g, tail_fraction=1 / 3):
    """Grid of window correlations over (scale, n) for the centered window of each scale.

    The corner diagnostic scans the anti-diagonal ``(M_i, n_i)``, taking the
    sup over all family members at scale ``M_i``.
    """
    n_list = _check_n_list(n_list)
    target = avg_f * avg_g
    rows = [_window_series(tmap, F, G, fam.members(M)[0], n_list) for M in fam.ladder]
    diag = []
    for i in range(min(len(fam.ladder), len(n_list))):
        M, n = fam.ladder[i], n_list[i]
        devs = []
        for V in fam.members(M):
            e = _window_series(tmap, F, G, V, [n])[0] if V != fam.members(M)[0] else rows[i][i]
            devs.append(None if e is None else (abs(e[0] - target), e[1]))
        ok = [d for d in devs if d is not None]
        diag.append({"M": M, "n": n, "deviation": max(d[0] for d in ok) if ok else None,
                     "error": max(d[1] for d in ok) if ok else None})
    known = [d["deviation"] for d in diag if d["deviation"] is not None]
    sl = tail_slice(known, tail_fraction) if known else slice(0, 0)
    corner = max(known[sl]) if known else math.inf
    return GgmGrid(list(fam.ladder), n_list, rows, target, diag, corner)


# -- coalescence ------------------------------------------------------------------------

@dataclass
class CoalescenceSeries:
    n_values: list
    deltas: list
    bounds: list | None
    error_bounds: list
    exact: bool

    def dominated(self):
        """``Delta(n) <= bound(n)`` at every ``n`` (``None`` without a bound)."""
        if self.bounds is None:
            return None
        return all(d <= b for d, b in zip(self.deltas, self.bounds))


def _normalized(g: LocalObservable):
    if abs(g.integral) <= ZERO_MEAN_TOL:
        raise ZeroMean(f"{g.name} has (numerically) zero integral")
    return g.normalized()


def coalescence_test(tmap, F, g, h, n_list, method=AUTO, *, seed=None, samples=DEFAULT_SAMPLES, cache=None):
    """``Delta(n) = |<F o T^n, g/mu(g)> - <F o T^n, h/mu(h)>|`` with the ``||P^n(.)||_1`` bound.

    On the lattice path ``Delta`` is evaluated on the ladder of the difference
    ``g/mu(g) - h/mu(h)`` so that the comparison with the bound is exact.
    """
    n_list = _check_n_list(n_list)
    g, h = _normalized(_as_local(g)), _normalized(_as_local(h))
    lattice = (tmap.jump_law is not None and g.lattice is not None and h.lattice is not None
               and method in (AUTO, EXACT))
    if lattice:
        Fp = project_to_lattice(F)
        d = g.lattice - h.lattice
        engine = TransferEngine(tmap, EXACT_LATTICE)
        ladder = engine.ladder(d, max(n_list), cache=cache, key=("coalesce", g.name, h.name))
        deltas, bounds, errs = [], [], []
        bnd = Fraction(F.bound) if isinstance(F.bound, (int, Fraction)) or float(F.bound).is_integer() else F.bound
        for n in n_list:
            m = ladder[n]
            if isinstance(m, LatticeMeasure) and not Fp.cell_error:
                val = m.pair(Fp.cell_value)
                deltas.append(abs(val))
                bounds.append(bnd * m.l1())
                errs.append(0.0)
            else:
                fm = m.to_float() if isinstance(m, LatticeMeasure) else m
                vals = np.array([float(Fp.cell_value(j)) for j in fm.cells])
                deltas.append(abs(math.fsum(vals * fm.masses)))
                bounds.append(math.fsum(float(F.bound) * np.abs(fm.masses)))
                errs.append(F.bound * fm.error_bound + Fp.cell_error * fm.l1())
        return CoalescenceSeries(n_list, deltas, bounds, errs, True)
    cg = correlate(tmap, F, g, n_list, method, seed=seed, samples=samples)
    ch = correlate(tmap, F, h, n_list, method, seed=None if seed is None else seed + 1, samples=samples)
    deltas = [abs(a - b) for a, b in zip(cg.estimates, ch.estimates)]
    errs = [a + b for a, b in zip(cg.error_bounds, ch.error_bounds)]
    return CoalescenceSeries(n_list, deltas, None, errs, False)


# -- equilibrium functional ----------------------------------------------------------------

@dataclass
class EquilibriumEstimate:
    rho_hat: float
    per_density_tails: list  # (density id, tail mean, tail spread)
    coalescence_defect: float
    max_error: float = 0.0

    def to_json(self):
        return {"rho_hat": self.rho_hat, "coalescence_defect": self.coalescence_defect,
                "max_error": self.max_error,
                "per_density": [{"g": a, "tail_mean": b, "tail_spread": c} for a, b, c in self.per_density_tails]}


def estimate_rho(tmap, F, g_set, n_list, tail_fraction=1 / 3, method=AUTO, *, seed=None,
                 samples=DEFAULT_SAMPLES, cache=None, return_series=False):
    """Tail means of ``corr(n)/mu(g)`` per density, their mean and largest pairwise gap."""
    n_list = _check_n_list(n_list)
    sl = tail_slice(n_list, tail_fraction)
    tails, all_series = [], []
    max_err = 0.0
    for i, g in enumerate(g_set):
        g = _as_local(g)
        if abs(g.integral) <= ZERO_MEAN_TOL:
            raise ZeroMean(f"{g.name} has (numerically) zero integral")
        cs = correlate(tmap, F, g, n_list, method, seed=None if seed is None else seed + i, samples=samples,
                       cache=cache, cache_key=("g", g.name))
        ratios = [e / g.integral for e in cs.estimates[sl]]
        max_err = max(max_err, max(cs.error_bounds[sl]) / abs(g.integral))
        tails.append((g.name, float(np.mean(ratios)), float(max(ratios) - min(ratios))))
        all_series.append((g.name, cs))
    means = [t[1] for t in tails]
    defect = max((abs(a - b) for a, b in itertools.combinations(means, 2)), default=0.0)
    est = EquilibriumEstimate(float(np.mean(means)), tails, float(defect), max_err)
    return (est, all_series) if return_series else est


def rho_target(F: GlobalObservable, j_max=1000, q_grid=(0, 10, -10, 100, -100, 1000, -1000)):
    """Cesaro mean of ``F`` (the predicted ``rho(F)`` for lattice-measurable ``F``)."""
    return cesaro_mean(F, list(q_grid), j_max)


def nonincreasing(values, tol=0.0):
    """True if the series is nonincreasing (up to ``tol`` absolute slack)."""
    if not tol:
        # keep Fraction series exact
        return all(b <= a for a, b in zip(values, values[1:]))
    return all(b <= a + tol for a, b in zip(values, values[1:]))
