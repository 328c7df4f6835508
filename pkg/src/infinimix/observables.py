"""Global (bounded) and local (integrable) observables on the real line.

Global observables carry structural tags (periodicity, constancy on unit
cells, odd symmetry, uniform Cesaro mean) that the estimators dispatch on.
Local observables have compact support and know their integral, L1 norm and
discontinuities; densities that are constant on unit cells also carry an exact
:class:`LatticeMeasure`.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, replace
from fractions import Fraction
from numbers import Number
from typing import Callable, NamedTuple

import numpy as np

from .quadrature import EPS, integrate


class Periodic(NamedTuple):
    period: int


LATTICE_STEP = "lattice_step"
ODD = "odd_symmetric"
UNIFORM_CESARO = "uniform_cesaro_mean"


def _lcm(a, b):
    return a * b // math.gcd(a, b)


# -- breakpoint generators ---------------------------------------------------------
# ("fixed", (p1, p2, ...)) or ("periodic", period, (offset1, ...))

def _split_points(gens, c, d):
    """Discontinuities strictly inside each ``(c[i], d[i])``; returns ``(owner, point)``."""
    c = np.asarray(c, dtype=float)
    d = np.asarray(d, dtype=float)
    owners, points = [], []
    idx = np.arange(c.size)
    for gen in gens:
        if gen[0] == "fixed":
            for p in gen[1]:
                sel = (c < p) & (p < d)
                owners.append(idx[sel])
                points.append(np.full(int(sel.sum()), float(p)))
        else:
            period, offsets = float(gen[1]), gen[2]
            for beta in offsets:
                kmin = np.floor((c - beta) / period).astype(np.int64) + 1
                kmax = np.ceil((d - beta) / period).astype(np.int64) - 1
                count = np.maximum(kmax - kmin + 1, 0)
                owner = np.repeat(idx, count)
                starts = np.cumsum(count) - count
                k = kmin[owner] + (np.arange(owner.size) - np.repeat(starts, count))
                pts = k * period + beta
                ok = (c[owner] < pts) & (pts < d[owner])
                owners.append(owner[ok])
                points.append(pts[ok])
    if not owners:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    return np.concatenate(owners), np.concatenate(points)


@dataclass(frozen=True, eq=False)
class GlobalObservable:
    """A bounded function ``F`` with a known sup bound and structural tags."""

    func: Callable
    bound: float
    tags: frozenset = frozenset()
    name: str = ""
    breaks: tuple = ()
    cell_value: Callable | None = None
    period_integral: Number | None = None
    cell_error: float = 0.0
    composed: tuple | None = None
    piecewise_constant: bool = False

    def __call__(self, x):
        if np.ndim(x) == 0:
            return float(np.asarray(self.func(np.asarray([float(x)])), dtype=float)[0])
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    @property
    def period(self):
        for t in self.tags:
            if isinstance(t, Periodic):
                return t.period
        return None

    @property
    def is_lattice_step(self):
        return LATTICE_STEP in self.tags and self.cell_value is not None

    def breakpoints(self, lo, hi):
        _, pts = _split_points(self.breaks, [lo], [hi])
        return np.unique(pts)

    def split_points(self, c, d):
        return _split_points(self.breaks, c, d)

    # -- algebra -------------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Number):
            other = make_one() * other
        if not isinstance(other, GlobalObservable):
            return NotImplemented
        tags = set()
        p, q = self.period, other.period
        pint = None
        if p and q:
            period = _lcm(p, q)
            tags.add(Periodic(period))
            if self.period_integral is not None and other.period_integral is not None:
                pint = (period // p) * self.period_integral + (period // q) * other.period_integral
        for t in (ODD, UNIFORM_CESARO):
            if t in self.tags and t in other.tags:
                tags.add(t)
        cell = None
        if self.is_lattice_step and other.is_lattice_step:
            tags.add(LATTICE_STEP)
            f, g = self.cell_value, other.cell_value
            cell = lambda j: f(j) + g(j)
        f1, f2 = self.func, other.func
        return GlobalObservable(
            func=lambda x: f1(x) + f2(x), bound=self.bound + other.bound, tags=frozenset(tags),
            name=f"({self.name}+{other.name})", breaks=self.breaks + other.breaks, cell_value=cell,
            period_integral=pint, cell_error=self.cell_error + other.cell_error,
            piecewise_constant=self.piecewise_constant and other.piecewise_constant)

    __radd__ = __add__

    def __mul__(self, c):
        if not isinstance(c, Number):
            return NotImplemented
        f, cv = self.func, self.cell_value
        return replace(
            self, func=lambda x: c * f(x), bound=abs(c) * self.bound, name=f"{c}*{self.name}",
            cell_value=(lambda j: c * cv(j)) if cv is not None else None,
            period_integral=None if self.period_integral is None else c * self.period_integral,
            cell_error=abs(c) * self.cell_error, composed=None)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1

    def __sub__(self, other):
        return self + (-other)


def make_one() -> GlobalObservable:
    return GlobalObservable(func=lambda x: np.ones_like(x, dtype=float), bound=1.0,
                            tags=frozenset({Periodic(1), LATTICE_STEP, UNIFORM_CESARO}),
                            name="one", cell_value=lambda j: 1, period_integral=1, piecewise_constant=True)


def make_constant(c) -> GlobalObservable:
    return make_one() * c


def make_sign() -> GlobalObservable:
    """``sign(x)`` with ``sign(0) = 0``."""
    return GlobalObservable(func=np.sign, bound=1.0, tags=frozenset({ODD, LATTICE_STEP}), name="sign",
                            breaks=(("fixed", (0.0,)),), cell_value=lambda j: 1 if j >= 0 else -1,
                            piecewise_constant=True)


def make_periodic(j: int, profile: Callable, *, breaks=(), bound=None, name=None,
                  period_integral=None, piecewise_constant=False) -> GlobalObservable:
    """``F(x) = profile(x mod j)``; ``breaks`` lists the discontinuities of the profile in ``[0, j)``."""
    j = int(j)
    if j < 1:
        raise ValueError("period must be a positive integer")

    def func(x):
        return np.asarray(profile(np.mod(x, j)), dtype=float) * np.ones_like(x, dtype=float)

    if bound is None:
        sample = (np.arange(100_000) + 0.5) / 100_000 * j
        bound = float(np.max(np.abs(func(sample))))
        for b in breaks:
            bound = max(bound, abs(float(func(np.array([float(b)]))[0])))
    if period_integral is None:
        period_integral, _ = integrate(func, 0.0, float(j), breakpoints=breaks, abs_tol=1e-12)
    gens = (("periodic", j, tuple(float(b) for b in breaks)),) if breaks else ()
    return GlobalObservable(func=func, bound=float(bound), tags=frozenset({Periodic(j), UNIFORM_CESARO}),
                            name=name or f"periodic:{j}", breaks=gens, period_integral=period_integral,
                            piecewise_constant=piecewise_constant)


def make_cos(j: int = 1) -> GlobalObservable:
    """``cos(2 pi x / j)``."""
    return make_periodic(j, lambda u: np.cos(2 * np.pi * u / j), bound=1.0, name=f"cos:{j}",
                         period_integral=0)


def make_halfcell(j: int = 1) -> GlobalObservable:
    """Indicator of ``[0, j/2) + jZ``."""
    half = j / 2
    return make_periodic(j, lambda u: (u < half).astype(float), breaks=(0.0, half), bound=1.0,
                         name=f"halfcell:{j}", period_integral=Fraction(j, 2), piecewise_constant=True)


def make_cell_pattern(values) -> GlobalObservable:
    """Lattice-step observable repeating ``values`` on consecutive unit cells."""
    vals = tuple(Fraction(v) for v in values)
    if not vals:
        raise ValueError("empty cell pattern")
    p = len(vals)
    arr = np.array([float(v) for v in vals])

    def func(x):
        return arr[np.mod(np.floor(x).astype(np.int64), p)]

    name = "cellpattern:" + ",".join(str(v) for v in vals)
    return GlobalObservable(func=func, bound=float(np.max(np.abs(arr))),
                            tags=frozenset({Periodic(p), LATTICE_STEP, UNIFORM_CESARO}), name=name,
                            breaks=(("periodic", 1, (0.0,)),), cell_value=lambda j: vals[j % p],
                            period_integral=sum(vals), piecewise_constant=True)


def make_alternating() -> GlobalObservable:
    """``(-1)^floor(x)``."""
    return replace(make_cell_pattern((1, -1)), name="altcell")


def make_dyadic_flip() -> GlobalObservable:
    """Cell values ``(-1)^floor(log2(|j|+1))``: blocks of doubling length, no Cesaro mean."""
    def cell(j):
        return -1 if (abs(j) + 1).bit_length() % 2 == 0 else 1

    def func(x):
        j = np.abs(np.floor(x).astype(np.int64)) + 1
        bits = np.floor(np.log2(j)).astype(np.int64) + 1
        return np.where(bits % 2 == 0, -1.0, 1.0)

    return GlobalObservable(func=func, bound=1.0, tags=frozenset({LATTICE_STEP}), name="dyadicflip",
                            breaks=(("periodic", 1, (0.0,)),), cell_value=cell, piecewise_constant=True)


# -- lattice measures -------------------------------------------------------------

@dataclass(frozen=True)
class LatticeMeasure:
    """Signed measure with exact rational mass on each unit cell ``[offset+i, offset+i+1)``.

    Stored as integer numerators over a common positive denominator, reduced
    and with zero cells trimmed from both ends.
    """

    offset: int
    numerators: tuple
    denominator: int = 1

    def __post_init__(self):
        nums = list(self.numerators)
        den = int(self.denominator)
        if den <= 0:
            raise ValueError("denominator must be positive")
        lo = 0
        while lo < len(nums) and nums[lo] == 0:
            lo += 1
        hi = len(nums)
        while hi > lo and nums[hi - 1] == 0:
            hi -= 1
        nums = nums[lo:hi]
        g = den
        for a in nums:
            g = math.gcd(g, a)
            if g == 1:
                break
        if g > 1:
            nums = [a // g for a in nums]
            den //= g
        object.__setattr__(self, "offset", int(self.offset) + lo if nums else 0)
        object.__setattr__(self, "numerators", tuple(int(a) for a in nums))
        object.__setattr__(self, "denominator", den if nums else 1)

    @classmethod
    def from_masses(cls, masses, offset=0):
        """From a ``{cell: mass}`` mapping or a sequence starting at ``offset``."""
        if isinstance(masses, dict):
            if not masses:
                return cls(0, ())
            offset = min(masses)
            seq = [Fraction(masses.get(offset + i, 0)) for i in range(max(masses) - offset + 1)]
        else:
            seq = [Fraction(m) for m in masses]
        den = 1
        for m in seq:
            den = _lcm(den, m.denominator)
        return cls(offset, tuple(int(m * den) for m in seq), den)

    @property
    def masses(self):
        return tuple(Fraction(a, self.denominator) for a in self.numerators)

    @property
    def cells(self):
        return range(self.offset, self.offset + len(self.numerators))

    def mass(self, j):
        i = j - self.offset
        if 0 <= i < len(self.numerators):
            return Fraction(self.numerators[i], self.denominator)
        return Fraction(0)

    def as_dict(self):
        return {j: m for j, m in zip(self.cells, self.masses)}

    def total(self):
        return Fraction(sum(self.numerators), self.denominator)

    def l1(self):
        return Fraction(sum(abs(a) for a in self.numerators), self.denominator)

    def _aligned(self, other):
        den = _lcm(self.denominator, other.denominator)
        lo = min(self.offset, other.offset) if self.numerators and other.numerators else (
            self.offset if self.numerators else other.offset)
        hi = max(self.offset + len(self.numerators), other.offset + len(other.numerators))
        a = [0] * (hi - lo)
        b = [0] * (hi - lo)
        fa, fb = den // self.denominator, den // other.denominator
        for i, v in enumerate(self.numerators):
            a[self.offset - lo + i] = v * fa
        for i, v in enumerate(other.numerators):
            b[other.offset - lo + i] = v * fb
        return lo, a, b, den

    def __add__(self, other):
        lo, a, b, den = self._aligned(other)
        return LatticeMeasure(lo, tuple(x + y for x, y in zip(a, b)), den)

    def __sub__(self, other):
        lo, a, b, den = self._aligned(other)
        return LatticeMeasure(lo, tuple(x - y for x, y in zip(a, b)), den)

    def __neg__(self):
        return LatticeMeasure(self.offset, tuple(-a for a in self.numerators), self.denominator)

    def scale(self, c):
        c = Fraction(c)
        return LatticeMeasure(self.offset, tuple(a * c.numerator for a in self.numerators),
                              self.denominator * c.denominator) if c >= 0 else -self.scale(-c)

    def pair(self, cell_value):
        """``sum_j cell_value(j) * mass(j)`` (exact when the values are rational)."""
        total = sum(cell_value(j) * a for j, a in zip(self.cells, self.numerators))
        if isinstance(total, (int, Fraction)):
            return Fraction(total, self.denominator)
        return total / self.denominator

    def to_float(self):
        masses = np.array([a / self.denominator for a in self.numerators], dtype=float)
        return FloatLatticeMeasure(self.offset, masses, float(EPS * np.abs(masses).sum()))

    def to_json(self):
        return {"offset": self.offset, "numerators": [str(a) for a in self.numerators],
                "denominator": str(self.denominator)}

    @classmethod
    def from_json(cls, doc):
        return cls(int(doc["offset"]), tuple(int(a) for a in doc["numerators"]), int(doc["denominator"]))


@dataclass(frozen=True, eq=False)
class FloatLatticeMeasure:
    """Float cell masses with a tracked bound on the accumulated L1 rounding error."""

    offset: int
    masses: np.ndarray
    error_bound: float = 0.0

    @property
    def cells(self):
        return range(self.offset, self.offset + self.masses.size)

    def mass(self, j):
        i = j - self.offset
        return float(self.masses[i]) if 0 <= i < self.masses.size else 0.0

    def as_dict(self):
        return {j: float(m) for j, m in zip(self.cells, self.masses)}

    def total(self):
        return float(self.masses.sum())

    def l1(self):
        return float(np.abs(self.masses).sum())

    def pair(self, cell_value):
        values = np.array([float(cell_value(j)) for j in self.cells])
        return float(values @ self.masses)

    def __sub__(self, other):
        lo = min(self.offset, other.offset)
        hi = max(self.offset + self.masses.size, other.offset + other.masses.size)
        out = np.zeros(hi - lo)
        out[self.offset - lo:self.offset - lo + self.masses.size] += self.masses
        out[other.offset - lo:other.offset - lo + other.masses.size] -= other.masses
        return FloatLatticeMeasure(lo, out, self.error_bound + other.error_bound + EPS * np.abs(out).sum())


# -- local observables ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LocalObservable:
    """An integrable function supported on ``[lo, hi)``."""

    func: Callable
    lo: float
    hi: float
    integral: float
    l1: float
    peak: float
    name: str = ""
    lattice: LatticeMeasure | None = None
    breaks: tuple = ()
    piecewise_constant: bool = False
    integral_error: float = 0.0
    piecewise_linear: bool = False
    closed: bool = False

    @classmethod
    def build(cls, func, lo, hi, *, breaks=(), peak=None, lattice=None, piecewise_constant=False,
              name="", integral=None, piecewise_linear=False, closed=False):
        lo, hi = float(lo), float(hi)
        if not lo < hi:
            raise ValueError("local observable needs lo < hi")
        inner = sorted({float(b) for b in breaks if lo < b < hi})
        edges = tuple([lo] + inner + [hi])

        def vfunc(x):
            x = np.asarray(x, dtype=float)
            inside = (x >= lo) & ((x <= hi) if closed else (x < hi))
            out = np.zeros(x.shape)
            if inside.any():
                out[inside] = np.asarray(func(x[inside]), dtype=float) * np.ones(int(inside.sum()))
            return out

        err = 0.0
        if integral is None:
            integral, err = integrate(vfunc, lo, hi, breakpoints=edges, abs_tol=1e-12)
        l1, _ = integrate(lambda x: np.abs(vfunc(x)), lo, hi, breakpoints=edges, abs_tol=1e-12)
        if peak is None:
            sample = np.concatenate([np.linspace(lo, hi, 10_001)[:-1], np.array(edges[:-1])])
            peak = float(np.max(np.abs(vfunc(sample))))
        return cls(func=vfunc, lo=lo, hi=hi, integral=float(integral), l1=float(l1), peak=float(peak),
                   name=name, lattice=lattice, breaks=edges, piecewise_constant=piecewise_constant,
                   integral_error=float(err), piecewise_linear=piecewise_linear or piecewise_constant,
                   closed=closed)

    @property
    def support(self):
        return (self.lo, self.hi)

    def __call__(self, x):
        if np.ndim(x) == 0:
            return float(self.func(np.asarray([float(x)]))[0])
        return self.func(x)

    def segments(self):
        return list(zip(self.breaks[:-1], self.breaks[1:]))

    def _combine(self, other, a, b):
        f1, f2 = self.func, other.func
        lattice = None
        if self.lattice is not None and other.lattice is not None:
            lattice = self.lattice.scale(a) + other.lattice.scale(b)
        return LocalObservable.build(
            lambda x: a * f1(x) + b * f2(x), min(self.lo, other.lo), max(self.hi, other.hi),
            breaks=self.breaks + other.breaks, lattice=lattice,
            piecewise_constant=self.piecewise_constant and other.piecewise_constant,
            piecewise_linear=self.piecewise_linear and other.piecewise_linear,
            name=f"({self.name}{'+' if b > 0 else '-'}{other.name})")

    def __add__(self, other):
        return self._combine(other, 1, 1)

    def __sub__(self, other):
        return self._combine(other, 1, -1)

    def __mul__(self, c):
        if not isinstance(c, Number):
            return NotImplemented
        f = self.func
        return replace(self, func=lambda x: c * f(x), integral=c * self.integral, l1=abs(c) * self.l1,
                       peak=abs(c) * self.peak, name=f"{c}*{self.name}",
                       lattice=self.lattice.scale(c) if self.lattice is not None and isinstance(
                           c, (int, Fraction)) else None,
                       integral_error=abs(c) * self.integral_error)

    __rmul__ = __mul__

    def normalized(self):
        if abs(self.integral) <= 1e-300:
            raise ValueError(f"{self.name} has zero integral")
        if self.lattice is not None:
            return self.scale_exact(1 / self.lattice.total())
        return self * (1.0 / self.integral)

    def scale_exact(self, c):
        out = self * Fraction(c)
        f = self.func
        cf = float(c)
        return replace(out, func=lambda x: cf * f(x), integral=float(Fraction(c) * Fraction(self.integral)),
                       peak=abs(cf) * self.peak, l1=abs(cf) * self.l1)

    def positive_part(self):
        f = self.func
        return LocalObservable.build(lambda x: np.maximum(f(x), 0.0), self.lo, self.hi, breaks=self.breaks,
                                     piecewise_constant=self.piecewise_constant, name=f"{self.name}+")

    def negative_part(self):
        f = self.func
        return LocalObservable.build(lambda x: np.maximum(-f(x), 0.0), self.lo, self.hi, breaks=self.breaks,
                                     piecewise_constant=self.piecewise_constant, name=f"{self.name}-")

    def as_global(self) -> GlobalObservable:
        """View a bounded local observable as a global one (``f`` in the intersection)."""
        cell = None
        tags = set()
        if self.lattice is not None:
            lat = self.lattice
            cell = lat.mass
            tags.add(LATTICE_STEP)
        return GlobalObservable(func=self.func, bound=self.peak, tags=frozenset(tags), name=self.name,
                                breaks=(("fixed", self.breaks),), cell_value=cell,
                                piecewise_constant=self.piecewise_constant)


def lattice_density(measure: LatticeMeasure, name="") -> LocalObservable:
    """Step function whose value on each cell equals that cell's mass."""
    if not measure.numerators:
        raise ValueError("empty lattice measure")
    offset = measure.offset
    vals = np.array([float(m) for m in measure.masses])

    def func(x):
        i = np.floor(x).astype(np.int64) - offset
        return vals[np.clip(i, 0, vals.size - 1)]

    lo, hi = offset, offset + vals.size
    return LocalObservable.build(func, lo, hi, breaks=range(lo, hi + 1), peak=float(np.max(np.abs(vals))),
                                 lattice=measure, piecewise_constant=True, name=name or "lattice",
                                 integral=float(measure.total()))


def make_indicator_density(a, b, normalize=False, name=None, closed=False) -> LocalObservable:
    """``1_[a, b)`` (``1_[a, b]`` when ``closed``), scaled to unit integral when ``normalize``."""
    if not a < b:
        raise ValueError("need a < b")
    fa, fb = Fraction(a), Fraction(b)
    height = 1 / (fb - fa) if normalize else Fraction(1)
    label = name or f"{'density' if normalize else 'indicator'}:{a}:{b}"
    lat = None
    if fa.denominator == 1 and fb.denominator == 1:
        lat = LatticeMeasure.from_masses([height] * int(fb - fa), offset=int(fa))
        if not closed:
            return lattice_density(lat, name=label)
    h = float(height)
    return LocalObservable.build(lambda x: np.full(np.shape(x), h), float(a), float(b), peak=h, lattice=lat,
                                 piecewise_constant=True, name=label, integral=float(height * (fb - fa)),
                                 closed=closed)


def make_dipole(a: int, b: int) -> LocalObservable:
    """``1_[a, a+1) - 1_[b, b+1)`` (mean zero)."""
    lat = LatticeMeasure.from_masses({a: 1}) - LatticeMeasure.from_masses({b: 1})
    return lattice_density(lat, name=f"dipole:{a}:{b}")


def make_gauss(center, width) -> LocalObservable:
    """Normalised Gaussian density truncated to ``center +- 8 width``."""
    c, w = float(center), float(width)
    norm = 1.0 / (w * math.sqrt(2 * math.pi))
    return LocalObservable.build(lambda x: norm * np.exp(-0.5 * ((x - c) / w) ** 2), c - 8 * w, c + 8 * w,
                                 breaks=(c,), peak=norm, name=f"gauss:{center}:{width}")


def make_triangle(a, b) -> LocalObservable:
    """Triangular probability density on ``[a, b]`` peaked at the midpoint."""
    a, b = float(a), float(b)
    m = 0.5 * (a + b)
    h = 2.0 / (b - a)
    return LocalObservable.build(lambda x: h * (1.0 - np.abs(x - m) / (m - a)), a, b, breaks=(m,), peak=h,
                                 piecewise_linear=True, name=f"triangle:{a:g}:{b:g}")


def restrict(G: GlobalObservable, a, b) -> LocalObservable:
    """``G * 1_[a, b)`` as a local observable (window-restricted global)."""
    pts = G.breakpoints(a, b)
    lattice = None
    if G.is_lattice_step and not G.cell_error and float(a).is_integer() and float(b).is_integer():
        lattice = LatticeMeasure.from_masses([Fraction(G.cell_value(j)) for j in range(int(a), int(b))],
                                             offset=int(a))
    integral, _ = integrate_global(G, a, b, abs_tol=1e-12)
    return LocalObservable.build(G.func, a, b, breaks=pts, peak=G.bound, piecewise_constant=G.piecewise_constant,
                                 lattice=lattice, integral=integral, name=f"{G.name}|[{a},{b})")


def compose(F: GlobalObservable, tmap, n: int) -> GlobalObservable:
    """``F o T^n`` by orbit composition (singular orbits evaluate to 0, a null set)."""
    from .maps import iterate_array

    if n == 0:
        return F
    base = F.composed[0] if F.composed else F
    depth = n + (F.composed[2] if F.composed else 0)
    fv = base.func

    def func(x):
        y = iterate_array(tmap, np.asarray(x, dtype=float), depth)
        ok = np.isfinite(y)
        out = np.zeros(np.shape(y))
        out[ok] = fv(y[ok])
        return out

    tags = frozenset({ODD}) if (ODD in base.tags and tmap.kind == "boole") else frozenset()
    return GlobalObservable(func=func, bound=base.bound, tags=tags, name=f"{base.name}oT^{depth}",
                            composed=(base, tmap, depth))


# -- projection and averages ---------------------------------------------------------

class _CellCache:
    """Per-cell cache; concurrent fills may duplicate work but never tear values."""

    def __init__(self, compute):
        self._compute = compute
        self._values = {}
        self._lock = threading.Lock()
        self.max_error = 0.0

    def __call__(self, j):
        try:
            return self._values[j]
        except KeyError:
            pass
        value, err = self._compute(j)
        with self._lock:
            self._values.setdefault(j, value)
            self.max_error = max(self.max_error, err)
        return self._values[j]


def project_to_lattice(F: GlobalObservable) -> GlobalObservable:
    """Conditional expectation of ``F`` on the unit-cell partition: cell value = integral over the cell."""
    if F.is_lattice_step:
        return F
    p = F.period
    if p == 1 and F.period_integral is not None:
        v = F.period_integral
        cache = None
        cell = lambda j: v
        err = 0.0
    else:
        def compute(j):
            key = j % p if p else j
            value, e = integrate(F.func, float(key), float(key + 1), breakpoints=F.breakpoints(key, key + 1),
                                 abs_tol=1e-10)
            return value, e

        cache = _CellCache(compute)
        cell = (lambda j: cache(j % p)) if p else cache
        err = None

    def func(x):
        x = np.asarray(x, dtype=float)
        cells = np.floor(x).astype(np.int64)
        uniq, inv = np.unique(cells, return_inverse=True)
        vals = np.array([float(cell(int(j))) for j in uniq])
        return vals[inv].reshape(x.shape)

    tags = {LATTICE_STEP} | {t for t in F.tags if isinstance(t, Periodic) or t in (UNIFORM_CESARO, ODD)}
    if ODD in tags:
        tags.discard(ODD)
    out = GlobalObservable(func=func, bound=F.bound, tags=frozenset(tags), name=f"E[{F.name}|cells]",
                           breaks=(("periodic", 1, (0.0,)),), cell_value=cell,
                           period_integral=F.period_integral, cell_error=0.0 if err is not None else 1e-10,
                           piecewise_constant=True)
    return out


def integrate_global(F: GlobalObservable, a, b, abs_tol=1e-10):
    """``int_a^b F dx``; lattice and periodic observables take exact/whole-period shortcuts."""
    a, b = float(a), float(b)
    if F.is_lattice_step and F.cell_error == 0.0:
        ja, jb = math.floor(a), math.floor(b)
        if ja == jb:
            return float(F.cell_value(ja)) * (b - a), 0.0
        p = F.period
        total = F.cell_value(ja) * Fraction(ja + 1 - Fraction(a)) + F.cell_value(jb) * Fraction(Fraction(b) - jb)
        first, last = ja + 1, jb
        if p and F.period_integral is not None and last - first > 2 * p:
            full = (last - first) // p
            total += full * F.period_integral
            first += full * p
        total += sum(F.cell_value(j) for j in range(first, last))
        return float(total), 0.0
    p = F.period
    if p and F.period_integral is not None and b - a > 2 * p:
        k0 = math.ceil(a / p)
        k1 = math.floor(b / p)
        head, e1 = integrate(F.func, a, k0 * p, breakpoints=F.breakpoints(a, k0 * p), abs_tol=abs_tol / 3)
        tail, e2 = integrate(F.func, k1 * p, b, breakpoints=F.breakpoints(k1 * p, b), abs_tol=abs_tol / 3)
        return float((k1 - k0) * F.period_integral) + head + tail, e1 + e2
    return integrate(F.func, a, b, breakpoints=F.breakpoints(a, b), abs_tol=abs_tol)


def cesaro_mean(F: GlobalObservable, q_grid, j_max: int):
    """Window means ``(1/2j) int_{q-j}^{q+j} F`` at ``j = j_max`` over ``q_grid``.

    Returns ``(value, uniformity_defect)``: the mean over the grid and the
    largest deviation of a single window from it.
    """
    if j_max < 1 or not len(q_grid):
        raise ValueError("need j_max >= 1 and a non-empty q grid")
    means = np.array([integrate_global(F, q - j_max, q + j_max, abs_tol=1e-10)[0] / (2 * j_max)
                      for q in q_grid])
    value = float(means.mean())
    return value, float(np.max(np.abs(means - value)))
