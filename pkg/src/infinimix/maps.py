"""Lebesgue-preserving maps of the real line.

Two families are supported:

* maps given by finitely many branches covering ``R`` (the Boole map
  ``x - 1/x``), and
* *lifted* maps ``T(x) = phi(x - j) + j`` on each unit cell ``[j, j+1)``,
  described by the branches of ``phi`` on ``[0, 1)``.  When ``phi`` is a single
  affine branch ``k1 + (k2 - k1) x`` the integer part of the orbit is a random
  walk with uniform jumps ``k1 .. k2-1``.

Branch functions accept floats, numpy arrays and (for affine branches)
``Fraction`` instances, so the same map object serves the floating-point
estimators and the exact interval oracles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping

import numpy as np

from .errors import BoundaryPoint, MapConstructionError, SingularOrbit

SINGULAR_RADIUS = 1e-300

BOOLE = "boole"
TRANSLATION_INVARIANT = "translation_invariant"
CUSTOM = "custom"


class Affine:
    """``x -> slope * x + intercept``, exact on ``int``/``Fraction`` input."""

    def __init__(self, slope, intercept=0):
        self.slope = Fraction(slope)
        self.intercept = Fraction(intercept)
        self._s = float(self.slope)
        self._t = float(self.intercept)

    def __call__(self, x):
        if isinstance(x, (int, Fraction)):
            return self.slope * x + self.intercept
        return self._s * x + self._t

    def inverted(self):
        return Affine(1 / self.slope, -self.intercept / self.slope)

    def __repr__(self):
        return f"Affine({self.slope}, {self.intercept})"


class Constant:
    def __init__(self, value):
        self.value = Fraction(value) if not isinstance(value, float) else value
        self._v = float(value)

    def __call__(self, x):
        if isinstance(x, (int, Fraction)):
            return self.value
        if np.ndim(x):
            return np.full(np.shape(x), self._v)
        return self._v


def _boole_root(y, c=1.0):
    """Positive root of ``x**2 - y x - c = 0``, cancellation free."""
    y = np.asarray(y, dtype=float)
    s = np.sqrt(y * y + 4.0 * c)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(y >= 0, 0.5 * (y + s), 2.0 * c / (s - y))
    return out if out.ndim else float(out)


class BooleForward:
    def __init__(self, c=1.0):
        self.c = float(c)

    def __call__(self, x):
        return x - self.c / x


class BooleInverse:
    """Root of ``x**2 - y x - c = 0`` on the side given by ``sign``."""

    def __init__(self, sign, c=1.0):
        self.sign = 1.0 if sign > 0 else -1.0
        self.c = float(c)

    def __call__(self, y):
        # the negative root at y is minus the positive root at -y, which keeps
        # the two branches exactly odd-symmetric in floating point
        if self.sign > 0:
            return _boole_root(y, self.c)
        return -_boole_root(-np.asarray(y, dtype=float), self.c) if np.ndim(y) else -_boole_root(-float(y), self.c)


class BooleDerivative:
    def __init__(self, c=1.0):
        self.c = float(c)

    def __call__(self, x):
        return 1.0 + self.c / (x * x)


@dataclass(frozen=True, eq=False)
class Branch:
    """One monotone expanding branch on the half-open domain ``[lo, hi)``."""

    lo: float
    hi: float
    forward: Callable
    inverse: Callable
    derivative: Callable
    image_lo: float
    image_hi: float
    increasing: bool = True
    affine: Affine | None = None

    @classmethod
    def from_affine(cls, lo, hi, slope, intercept):
        fwd = Affine(slope, intercept)
        a, b = fwd(Fraction(lo)), fwd(Fraction(hi))
        inc = fwd.slope > 0
        return cls(lo=lo, hi=hi, forward=fwd, inverse=fwd.inverted(), derivative=Constant(fwd.slope),
                   image_lo=float(min(a, b)), image_hi=float(max(a, b)), increasing=bool(inc), affine=fwd)

    def image_at_lo(self):
        """Image of the left domain end point (limit value for open ends)."""
        return self.image_lo if self.increasing else self.image_hi

    def image_at_hi(self):
        return self.image_hi if self.increasing else self.image_lo


@dataclass(frozen=True)
class MeasureCheck:
    """Outcome of the sampled ``sum 1/|T'| == 1`` check."""

    max_deviation: float
    points: int
    tolerance: float

    @property
    def passed(self):
        return self.max_deviation <= self.tolerance


@dataclass(frozen=True, eq=False)
class PiecewiseMap:
    """A piecewise monotone, Lebesgue-preserving map of ``R``.

    ``lifted`` maps describe ``phi`` on ``[0, 1)`` through ``branches`` and act
    by ``T(x) = phi(x - floor(x)) + floor(x)``.  ``jump_law`` is the exact law
    of ``floor(T x) - floor(x)`` when that law is uniform (random-walk maps).
    """

    name: str
    kind: str
    branches: tuple[Branch, ...]
    lifted: bool = False
    jump_law: Mapping[int, Fraction] | None = None
    singular: tuple[float, ...] = ()
    check: MeasureCheck | None = None
    _los: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_los", np.array([b.lo for b in self.branches], dtype=float))

    @property
    def is_affine(self):
        return all(b.affine is not None for b in self.branches)

    @property
    def translation_invariant(self):
        return self.lifted

    # -- pointwise action -------------------------------------------------
    def _branch_of(self, u):
        i = int(np.searchsorted(self._los, float(u), side="right")) - 1
        if i < 0 or not (self.branches[i].lo <= u < self.branches[i].hi):
            raise SingularOrbit(f"{self.name}: point {u!r} is not in any branch domain")
        return self.branches[i]

    def step(self, x):
        """One application of the map to a scalar (float, int or Fraction)."""
        for s in self.singular:
            if abs(x - s) <= SINGULAR_RADIUS:
                raise SingularOrbit(f"{self.name}: orbit hit the singular point {s}")
        if self.lifted:
            j = math.floor(x)
            u = x - j
            y = self._branch_of(u).forward(u) + j
        else:
            y = self._branch_of(x).forward(x)
        if isinstance(y, float) and not math.isfinite(y):
            raise SingularOrbit(f"{self.name}: orbit diverged at {x!r}")
        return y

    def step_array(self, x):
        """Vectorised single step; singular points map to ``nan``."""
        x = np.asarray(x, dtype=float)
        if self.lifted:
            j = np.floor(x)
            u = x - j
        else:
            u = x
        out = np.full(x.shape, np.nan)
        if len(self.branches) == 1:
            b = self.branches[0]
            ok = (u >= b.lo) & (u < b.hi)
            out[ok] = b.forward(u[ok])
        else:
            idx = np.searchsorted(self._los, u, side="right") - 1
            for i, b in enumerate(self.branches):
                sel = (idx == i) & (u >= b.lo) & (u < b.hi)
                if sel.any():
                    out[sel] = b.forward(u[sel])
        if self.lifted:
            out += j
        for s in self.singular:
            out[np.abs(x - s) <= SINGULAR_RADIUS] = np.nan
        out[~np.isfinite(out)] = np.nan
        return out

    def __call__(self, x):
        if np.ndim(x):
            return self.step_array(x)
        return self.step(x)

    def iterate(self, x, n):
        return iterate(self, x, n)

    # -- preimages ----------------------------------------------------------
    def _copies_hit(self, y):
        """Yield ``(branch, shift)`` pairs whose image contains ``y``."""
        for b in self.branches:
            if self.lifted:
                lo_j = math.floor(y - b.image_hi) + 1
                hi_j = math.floor(y - b.image_lo)
                for j in range(lo_j, hi_j + 1):
                    yield b, j
            elif b.image_lo <= y < b.image_hi or (b.image_lo == -math.inf and b.image_hi == math.inf):
                yield b, 0

    def preimages(self, y):
        """All ``(x, 1/|T'(x)|)`` with ``T(x) = y``."""
        if isinstance(y, float) and not math.isfinite(y):
            raise BoundaryPoint(f"{self.name}: no preimages of {y}")
        for b in self.branches:
            ends = [e for e in (b.image_lo, b.image_hi) if math.isfinite(e)]
            for e in ends:
                if (self.lifted and (y - e) == math.floor(y - e)) or (not self.lifted and y == e):
                    raise BoundaryPoint(f"{self.name}: {y!r} is a branch-image end point")
        out = []
        for b, j in self._copies_hit(y):
            x = b.inverse(y - j) + j
            d = b.derivative(x - j)
            out.append((x, 1 / abs(d)))
        return out

    def preimages_array(self, y):
        """Vectorised preimages: returns ``(x, weight, parent_index)``."""
        y = np.asarray(y, dtype=float)
        xs, ws, ps = [], [], []
        idx = np.arange(y.size)
        for b in self.branches:
            if self.lifted:
                lo_j = np.floor(y - b.image_hi).astype(np.int64) + 1
                hi_j = np.floor(y - b.image_lo).astype(np.int64)
                count = np.maximum(hi_j - lo_j + 1, 0)
                parent = np.repeat(idx, count)
                starts = np.cumsum(count) - count
                j = lo_j[parent] + (np.arange(parent.size) - np.repeat(starts, count))
                yy = y[parent] - j
                x = b.inverse(yy) + j
                w = 1.0 / np.abs(b.derivative(x - j))
            else:
                sel = (y >= b.image_lo) & (y < b.image_hi)
                parent = idx[sel]
                x = np.asarray(b.inverse(y[sel]), dtype=float)
                w = 1.0 / np.abs(b.derivative(x))
            xs.append(np.asarray(x, dtype=float).ravel())
            ws.append(np.broadcast_to(np.asarray(w, dtype=float), np.shape(x)).ravel())
            ps.append(parent)
        return np.concatenate(xs), np.concatenate(ws), np.concatenate(ps)

    def weight_sums(self, y):
        """``sum 1/|T'|`` over the preimages of each ``y`` (equals 1 for these maps)."""
        _, w, p = self.preimages_array(y)
        return np.bincount(p, weights=w, minlength=np.size(y))

    def quotient(self, period=1):
        if not self.lifted:
            raise ValueError(f"{self.name} is not translation invariant; no quotient map")
        return QuotientMap(self, int(period))


def iterate(tmap: PiecewiseMap, x, n: int):
    """``T^n(x)`` for a scalar ``x``; ``n == 0`` returns ``x`` itself."""
    if n < 0:
        raise ValueError("n must be non-negative")
    for _ in range(n):
        x = tmap.step(x)
    return x


def iterate_array(tmap: PiecewiseMap, x, n: int):
    x = np.asarray(x, dtype=float)
    for _ in range(n):
        x = tmap.step_array(x)
    return x


@dataclass(frozen=True)
class QuotientMap:
    """``T mod period`` acting on ``[0, period)``."""

    base: PiecewiseMap
    period: int

    def __call__(self, x):
        y = self.base(x)
        if np.ndim(y):
            return np.mod(y, self.period)
        return y % self.period

    def iterate(self, x, n):
        for _ in range(n):
            x = self(x)
        return x


# -- constructors --------------------------------------------------------------

def make_boole() -> PiecewiseMap:
    """``T(x) = x - 1/x``: two increasing branches, each onto ``R``."""
    neg = Branch(lo=-math.inf, hi=0.0, forward=BooleForward(), inverse=BooleInverse(-1),
                 derivative=BooleDerivative(), image_lo=-math.inf, image_hi=math.inf)
    pos = Branch(lo=0.0, hi=math.inf, forward=BooleForward(), inverse=BooleInverse(+1),
                 derivative=BooleDerivative(), image_lo=-math.inf, image_hi=math.inf)
    return PiecewiseMap(name="boole", kind=BOOLE, branches=(neg, pos), singular=(0.0,))


def make_random_walk_map(k1: int, k2: int) -> PiecewiseMap:
    """Lift of ``phi(x) = k1 + (k2 - k1) x``; cell jumps are uniform on ``k1 .. k2-1``."""
    k1, k2 = int(k1), int(k2)
    if k2 - k1 < 2:
        raise MapConstructionError(f"rw:{k1}:{k2} is not expanding (need k2 - k1 >= 2)")
    k = k2 - k1
    branch = Branch.from_affine(0, 1, k, k1)
    law = {j: Fraction(1, k) for j in range(k1, k2)}
    return PiecewiseMap(name=f"rw:{k1}:{k2}", kind=TRANSLATION_INVARIANT, branches=(branch,),
                        lifted=True, jump_law=law)


def uniform_jump_law(branches):
    """Jump law of a lifted map whose only branch is affine from [0,1) onto an integer range."""
    if len(branches) != 1 or branches[0].affine is None:
        return None
    b = branches[0]
    if (b.lo, b.hi) != (0, 1) or not b.increasing:
        return None
    k1, k2 = b.affine(Fraction(0)), b.affine(Fraction(1))
    if k1.denominator != 1 or k2.denominator != 1:
        return None
    k1, k2 = int(k1), int(k2)
    return {j: Fraction(1, k2 - k1) for j in range(k1, k2)}


def check_measure_preservation(tmap: PiecewiseMap, tol=1e-6) -> MeasureCheck:
    """Sample ``sum 1/|T'|`` on 10^3 points per unit cell of [-10, 10] plus 10^2 tail points."""
    per_cell = 1000
    cells = np.arange(-10, 10)
    offsets = (np.arange(per_cell) + 0.5) / per_cell
    # an irrational shift keeps the grid off branch-image end points
    grid = (cells[:, None] + offsets[None, :] + 1e-7 * math.sqrt(2)).ravel()
    tails = np.geomspace(10.5, 1e6, 50)
    y = np.concatenate([grid, tails, -tails])
    dev = float(np.max(np.abs(tmap.weight_sums(y) - 1.0)))
    return MeasureCheck(max_deviation=dev, points=int(y.size), tolerance=tol)


def _validate_branches(branches, lifted):
    rng = np.random.default_rng(0)
    for i, b in enumerate(branches):
        if not b.lo < b.hi:
            raise MapConstructionError(f"branch {i}: empty domain [{b.lo}, {b.hi})")
        lo = b.lo if math.isfinite(b.lo) else -1e3
        hi = b.hi if math.isfinite(b.hi) else 1e3
        xs = lo + (hi - lo) * rng.uniform(0.001, 0.999, 200)
        xs = xs[np.abs(xs) > 1e-6]
        d = np.abs(np.asarray(b.derivative(xs), dtype=float))
        if np.any(np.broadcast_to(d, xs.shape) <= 1.0):
            raise MapConstructionError(f"branch {i}: |derivative| <= 1 somewhere on its domain")
        ys = np.asarray(b.forward(xs), dtype=float)
        back = np.asarray(b.inverse(ys), dtype=float)
        again = np.asarray(b.forward(back), dtype=float)
        rel = np.abs(again - ys) / np.maximum(1.0, np.abs(ys))
        if np.any(rel > 1e-12):
            raise MapConstructionError(f"branch {i}: forward(inverse(y)) != y")
    if lifted:
        if branches[0].lo != 0 or branches[-1].hi != 1:
            raise MapConstructionError("lifted branches must cover the unit cell [0, 1)")
    for a, b in zip(branches, branches[1:]):
        if a.hi != b.lo:
            raise MapConstructionError(f"branch domains leave a gap or overlap at {a.hi}/{b.lo}")


def make_custom_piecewise(branches, *, lifted=False, name="custom", singular=(), tol=1e-6) -> PiecewiseMap:
    """Build a map from user branches and verify Lebesgue preservation.

    Raises :class:`MapConstructionError` if the sampled inverse-derivative sum
    deviates from 1 by more than ``tol``.
    """
    branches = tuple(sorted(branches, key=lambda b: b.lo))
    _validate_branches(branches, lifted)
    law = uniform_jump_law(branches) if lifted else None
    kind = TRANSLATION_INVARIANT if lifted else CUSTOM
    probe = PiecewiseMap(name=name, kind=kind, branches=branches, lifted=lifted, jump_law=law,
                         singular=tuple(singular))
    report = check_measure_preservation(probe, tol=tol)
    if not report.passed:
        raise MapConstructionError(
            f"{name}: not Lebesgue preserving, sum of 1/|T'| deviates from 1 by {report.max_deviation:.3g}")
    return PiecewiseMap(name=name, kind=CUSTOM, branches=branches, lifted=lifted, jump_law=law,
                        singular=tuple(singular), check=report)


# -- JSON branch specs -----------------------------------------------------------

def _num(v):
    if isinstance(v, str):
        if v.strip() in ("inf", "+inf", "-inf"):
            return float(v)
        return Fraction(v)
    if isinstance(v, float) and not math.isfinite(v):
        return v
    return Fraction(v) if isinstance(v, int) else v


def _template(entry):
    name = entry["template"]
    params = {k: _num(v) for k, v in entry.items() if k != "template"}
    if name == "affine":
        return Affine(params.get("slope", 1), params.get("intercept", 0))
    if name == "const":
        return Constant(params["value"])
    if name == "boole":
        return BooleForward(float(params.get("c", 1)))
    if name == "boole_root":
        return BooleInverse(float(params.get("sign", 1)), float(params.get("c", 1)))
    if name == "boole_deriv":
        return BooleDerivative(float(params.get("c", 1)))
    raise MapConstructionError(f"unknown formula template {name!r}")


TEMPLATES = ("affine", "const", "boole", "boole_root", "boole_deriv")


def branches_from_json(doc) -> tuple[list[Branch], bool, tuple]:
    """Parse a custom-map document into branches.

    Each branch carries ``domain: [lo, hi]`` and ``forward``, ``inverse``,
    ``derivative`` entries of the form ``{"template": name, **params}``.  An
    optional ``image: [lo, hi]`` is required when the domain is unbounded.
    """
    out = []
    for i, entry in enumerate(doc["branches"]):
        lo, hi = (_num(v) for v in entry["domain"])
        fwd = _template(entry["forward"])
        inv = _template(entry["inverse"])
        der = _template(entry["derivative"])
        affine = fwd if isinstance(fwd, Affine) else None
        if "image" in entry:
            ilo, ihi = (float(_num(v)) for v in entry["image"])
            inc = bool(entry.get("increasing", True))
        else:
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise MapConstructionError(f"branch {i}: unbounded domain needs an explicit image")
            a, b = fwd(Fraction(lo) if affine else float(lo)), fwd(Fraction(hi) if affine else float(hi))
            inc = b > a
            ilo, ihi = float(min(a, b)), float(max(a, b))
        out.append(Branch(lo=float(lo), hi=float(hi), forward=fwd, inverse=inv, derivative=der,
                          image_lo=ilo, image_hi=ihi, increasing=inc, affine=affine))
    lifted = bool(doc.get("translation_invariant", False))
    singular = tuple(float(_num(s)) for s in doc.get("singular", ()))
    return out, lifted, singular


def make_custom_from_json(doc, name="custom") -> PiecewiseMap:
    branches, lifted, singular = branches_from_json(doc)
    return make_custom_piecewise(branches, lifted=lifted, name=doc.get("name", name), singular=singular)
