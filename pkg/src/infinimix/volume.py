"""Windows, exhaustive families and infinite-volume averages.

``estimate_avg`` realises the uniform infinite-volume limit as a supremum
over a finite probe grid at each scale of a ladder; ``avol_check`` measures
``mu(T^-n V symdiff V) / mu(V)`` with exact interval pullbacks.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import IntervalBlowup, QuadratureError
from .maps import PiecewiseMap
from .observables import GlobalObservable, integrate_global, make_indicator_density
from .quadrature import integrate

SYMMETRIC = "symmetric"
TRANSLATED = "translated"
CELL_ALIGNED = "cell_aligned"
KINDS = (SYMMETRIC, TRANSLATED, CELL_ALIGNED)

CONVERGED = "converged"
NOT_UNIFORM = "not_uniform"
INCONCLUSIVE = "inconclusive"

DEFAULT_TOL = 5e-3
MAX_COMPONENTS = 10**6
NOISE_FLOOR = 1e-12


@dataclass(frozen=True)
class Window:
    lo: float
    hi: float

    def __post_init__(self):
        if not (self.lo < self.hi) or not math.isfinite(self.hi - self.lo):
            raise ValueError(f"window needs finite lo < hi, got [{self.lo}, {self.hi})")

    @property
    def measure(self):
        return self.hi - self.lo


@dataclass(frozen=True)
class Probe:
    """Window center ``offset + factor * M`` at scale ``M``."""

    offset: float = 0.0
    factor: float = 0.0

    def at(self, M):
        return self.offset + self.factor * M

    def __str__(self):
        if self.factor == 0:
            return f"{self.offset:g}"
        lead = f"{self.offset:g}+" if self.offset else ""
        return f"{lead}{self.factor:g}M"

    @classmethod
    def parse(cls, text):
        t = str(text).strip().replace(" ", "")
        if t.endswith("M"):
            body = t[:-1]
            if body in ("", "+"):
                return cls(0.0, 1.0)
            if body == "-":
                return cls(0.0, -1.0)
            return cls(0.0, float(body))
        return cls(float(t), 0.0)


@dataclass(frozen=True)
class ExhaustiveFamily:
    """Intervals at each ladder scale ``M``.

    * ``symmetric``: ``[-M, M)``;
    * ``translated``: ``[a - M, a + M)`` for each probe center ``a``;
    * ``cell_aligned``: ``[q - j, q + j)`` with integer ``q`` and ``j = floor(M)``.

    Every kind contains the nested sequence centered at 0 (the probe ``0`` is
    always added), which exhausts the line.
    """

    kind: str
    ladder: tuple
    probes: tuple = (Probe(),)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown family kind {self.kind!r}")
        ladder = tuple(self.ladder)
        if any(b <= a for a, b in zip(ladder, ladder[1:])) or not ladder or ladder[0] <= 0:
            raise ValueError("scale ladder must be positive and increasing")
        probes = tuple(p if isinstance(p, Probe) else Probe.parse(p) for p in self.probes)
        if Probe() not in probes:
            probes = (Probe(),) + probes
        object.__setattr__(self, "ladder", ladder)
        object.__setattr__(self, "probes", probes if self.kind != SYMMETRIC else (Probe(),))

    def members(self, M):
        if self.kind == SYMMETRIC:
            return [Window(-M, M)]
        if self.kind == TRANSLATED:
            return [Window(p.at(M) - M, p.at(M) + M) for p in self.probes]
        j = math.floor(M)
        if j < 1:
            raise ValueError("cell-aligned windows need M >= 1")
        return [Window(q - j, q + j) for q in sorted({round(p.at(M)) for p in self.probes})]

    def to_json(self):
        return {"kind": self.kind, "ladder": list(self.ladder), "probes": [str(p) for p in self.probes]}


@dataclass
class IvLimitReport:
    estimate: float
    tol: float
    scales: list
    defects: list
    tail_defects: list
    verdict: str
    members: list = field(default_factory=list)

    def to_json(self):
        return {"estimate": self.estimate, "tol": self.tol,
                "ladder": [{"M": M, "defect": d, "tail_defect": t}
                           for M, d, t in zip(self.scales, self.defects, self.tail_defects)],
                "verdict": self.verdict}


def window_integral(F: GlobalObservable, V: Window, abs_tol=None):
    """``(int_V F, error)``; composed observables go through the transfer operator."""
    tol = 1e-9 * V.measure if abs_tol is None else abs_tol
    if F.composed:
        base, tmap, n = F.composed
        v = composed_window_integral(base, tmap, n, restrict_one(V), tol)
        return v.value, v.error_bound
    return integrate_global(F, V.lo, V.hi, abs_tol=tol)


def restrict_one(V: Window):
    lo, hi = V.lo, V.hi
    if float(lo).is_integer() and float(hi).is_integer():
        return make_indicator_density(int(lo), int(hi))
    return make_indicator_density(lo, hi)


def composed_window_integral(F: GlobalObservable, tmap: PiecewiseMap, n: int, g, tol=1e-10):
    """``int (F o T^n) g = <F, P^n g>`` via pushforward pieces, orbit quadrature as a fallback."""
    from .transfer import TransferEngine, SignedDensityValue, pieces_coupling

    engine = TransferEngine(tmap, mode="preimage_sum")
    try:
        for pusher, ps in engine.pieces(g, n):
            pass
        return pieces_coupling(F, pusher, ps, abs_tol=tol)
    except QuadratureError:
        from .maps import iterate_array

        fv = F.func

        def f(x):
            y = iterate_array(tmap, x, n)
            out = np.zeros(np.shape(y))
            ok = np.isfinite(y)
            out[ok] = fv(y[ok])
            return out * g.func(x)

        value, err = integrate(f, g.lo, g.hi, breakpoints=g.breaks, abs_tol=tol)
        return SignedDensityValue(value, err)


def window_average(F: GlobalObservable, V: Window) -> float:
    """``mu_V(F)`` to absolute tolerance ``1e-9 mu(V)`` on the integral."""
    value, _ = window_integral(F, V)
    return value / V.measure


def _window_means(F, fam, M):
    out = []
    for V in fam.members(M):
        value, err = window_integral(F, V)
        out.append((V, value / V.measure, err / V.measure))
    return out


def estimate_avg(F: GlobalObservable, fam: ExhaustiveFamily, tol=DEFAULT_TOL) -> IvLimitReport:
    """Infinite-volume average of ``F`` over ``fam`` with a uniformity verdict."""
    if len(fam.ladder) < 4:
        raise ValueError("estimate_avg needs a scale ladder with at least 4 entries")
    per_scale = [_window_means(F, fam, M) for M in fam.ladder]
    top = per_scale[-1]
    estimate = float(np.mean([m for _, m, _ in top]))
    defects, noise = [], []
    for rows in per_scale:
        defects.append(max(abs(m - estimate) for _, m, _ in rows))
        noise.append(NOISE_FLOOR + 2 * max(e for _, _, e in rows) + 2 * max(e for _, _, e in top))
    tail = [max(defects[i:]) for i in range(len(defects))]
    last = defects[-3:]
    trend = all(b <= a + nz for a, b, nz in zip(last, last[1:], noise[-2:]))
    if defects[-1] <= tol and trend:
        verdict = CONVERGED
    elif all(d >= 10 * tol for d in last):
        verdict = NOT_UNIFORM
    else:
        verdict = INCONCLUSIVE
    members = [{"M": M, "lo": V.lo, "hi": V.hi, "mean": m}
               for M, rows in zip(fam.ladder, per_scale) for V, m, _ in rows]
    members.sort(key=lambda r: (r["M"], 0.5 * (r["lo"] + r["hi"])))
    return IvLimitReport(estimate=estimate, tol=tol, scales=list(fam.ladder), defects=defects,
                         tail_defects=tail, verdict=verdict, members=members)


def avg_invariance_check(F: GlobalObservable, fam: ExhaustiveFamily, tmap: PiecewiseMap, n_list, tol=DEFAULT_TOL):
    """``|Avg(F o T^n) - Avg(F)|`` for each ``n``; requires a converged ``Avg(F)``."""
    from .observables import compose

    base = estimate_avg(F, fam, tol)
    if base.verdict != CONVERGED:
        raise ValueError(f"Avg({F.name}) did not converge on this family (verdict {base.verdict})")
    out = []
    for n in n_list:
        if n == 0:
            out.append(0.0)
            continue
        rep = estimate_avg(compose(F, tmap, n), fam, tol)
        out.append(abs(rep.estimate - base.estimate))
    return out


# -- condition (a-vol): exact interval pullbacks -------------------------------------------

def _merge(intervals):
    intervals.sort()
    out = []
    for a, b in intervals:
        if out and a <= out[-1][1]:
            if b > out[-1][1]:
                out[-1] = (out[-1][0], b)
        else:
            out.append((a, b))
    return out


def _exact(v, exact):
    return Fraction(v) if exact else float(v)


def pullback(tmap: PiecewiseMap, intervals, n=1):
    """``T^-n`` of a finite union of half-open intervals, as a merged interval list.

    Affine maps are handled in rational arithmetic; others in floating point
    through the closed-form branch inverses.
    """
    exact = tmap.is_affine
    cur = _merge([(_exact(a, exact), _exact(b, exact)) for a, b in intervals])
    for _ in range(n):
        parts = []
        for a, b in cur:
            for br in tmap.branches:
                ilo, ihi = br.image_lo, br.image_hi
                if tmap.lifted:
                    ilo, ihi = _exact(ilo, exact), _exact(ihi, exact)
                    js = range(math.floor(a - ihi) + 1, math.ceil(b - ilo))
                else:
                    js = (0,)
                for j in js:
                    c = max(a, ilo + j) if math.isfinite(ilo) else a
                    d = min(b, ihi + j) if math.isfinite(ihi) else b
                    if not c < d:
                        continue
                    x1 = br.inverse(c - j) + j
                    x2 = br.inverse(d - j) + j
                    parts.append((x1, x2) if br.increasing else (x2, x1))
                if len(parts) > MAX_COMPONENTS:
                    raise IntervalBlowup(f"pullback under {tmap.name} exceeds {MAX_COMPONENTS} components")
        cur = _merge(parts)
    return cur


def _measure(intervals):
    return sum((b - a for a, b in intervals), start=type(intervals[0][0])(0) if intervals else 0)


def _intersection_measure(A, B):
    i = j = 0
    total = 0
    while i < len(A) and j < len(B):
        lo = max(A[i][0], B[j][0])
        hi = min(A[i][1], B[j][1])
        if lo < hi:
            total += hi - lo
        if A[i][1] < B[j][1]:
            i += 1
        else:
            j += 1
    return total


@dataclass
class AvolSeries:
    n: int
    scales: list
    ratios: list
    pullback_measures: list

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["M", "ratio"])
        for M, r in zip(self.scales, self.ratios):
            w.writerow([M, repr(float(r))])
        return buf.getvalue()


def avol_check(tmap: PiecewiseMap, fam: ExhaustiveFamily, n: int) -> AvolSeries:
    """``mu(T^-n V symdiff V) / mu(V)`` for the centered window of ``fam`` at each scale."""
    ratios, measures = [], []
    for M in fam.ladder:
        V = fam.members(M)[0] if fam.kind == SYMMETRIC else Window(-M, M)
        base = [(_exact(V.lo, tmap.is_affine), _exact(V.hi, tmap.is_affine))]
        if n == 0:
            ratios.append(Fraction(0) if tmap.is_affine else 0.0)
            measures.append(base[0][1] - base[0][0])
            continue
        pre = pullback(tmap, base, n)
        mv = base[0][1] - base[0][0]
        mp = _measure(pre)
        sym = mp + mv - 2 * _intersection_measure(pre, base)
        ratios.append(sym / mv)
        measures.append(mp)
    return AvolSeries(n=n, scales=list(fam.ladder), ratios=ratios, pullback_measures=measures)
