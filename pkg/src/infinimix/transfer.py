"""The Perron-Frobenius (transfer) operator ``P`` of a piecewise map.

Two regimes:

* exact lattice convolution for random-walk maps, where ``P`` maps densities
  that are constant on unit cells to densities of the same kind and acts on the
  cell masses as convolution with the jump law;
* preimage sums ``P^n g(x) = sum g(y) / |(T^n)'(y)|`` over the ``n``-step
  preimage tree, and the dual *pushforward pieces* representation of ``P^n g``
  as a finite sum of weights living on image intervals.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DepthExceeded, MethodMismatch, NotMeanZero, QuadratureError, SingularPoint
from .maps import PiecewiseMap
from .observables import (EPS, FloatLatticeMeasure, GlobalObservable, LatticeMeasure, LocalObservable,
                          integrate_global, project_to_lattice)
from .quadrature import integrate, integrate_intervals

EXACT_LATTICE = "exact_lattice"
PREIMAGE_SUM = "preimage_sum"
MODES = (EXACT_LATTICE, PREIMAGE_SUM)

MAX_PIECES = 1 << 18
MEAN_ZERO_TOL = 1e-12


@dataclass(frozen=True)
class SignedDensityValue:
    value: float
    error_bound: float = 0.0


# -- pushforward pieces --------------------------------------------------------------

@dataclass(eq=False)
class PieceSet:
    """``P^n g`` as a sum of weights ``w_i`` supported on image intervals ``[lo_i, hi_i)``.

    In ``linear`` form (affine map, piecewise linear ``g``) each weight is
    ``alpha_i + beta_i y`` and pieces with equal images are merged exactly.
    Otherwise each piece keeps the inverse chain back to a segment of ``g``.
    """

    n: int
    lo: np.ndarray
    hi: np.ndarray
    linear: bool
    alpha: np.ndarray | None = None
    beta: np.ndarray | None = None
    seg: np.ndarray | None = None
    gconst: np.ndarray | None = None
    slope: np.ndarray | None = None  # affine chains: psi(y) = slope*y + shift
    shift: np.ndarray | None = None
    chain_branch: list = field(default_factory=list)
    chain_shift: list = field(default_factory=list)
    exact_ends: list | None = None

    def __len__(self):
        return self.lo.size


class _Pusher:
    """Builds the piece sets of ``P^n g`` for ``n = 0, 1, 2, ...``."""

    def __init__(self, tmap: PiecewiseMap, g: LocalObservable, max_pieces=MAX_PIECES):
        self.map = tmap
        self.g = g
        self.max_pieces = max_pieces
        segs = [(a, b) for a, b in g.segments()]
        if tmap.lifted:
            # pieces never straddle a cell boundary
            cut = []
            for a, b in segs:
                pts = [a] + [float(j) for j in range(math.floor(a) + 1, math.ceil(b))] + [b]
                cut.extend(zip(pts[:-1], pts[1:]))
            segs = cut
        self.segments = segs
        self.linear = (tmap.is_affine and g.piecewise_linear
                       and all(math.isfinite(b.lo) and math.isfinite(b.hi) for b in tmap.branches))
        self.affine = tmap.is_affine

    def initial(self) -> PieceSet:
        g = self.g
        lo = np.array([a for a, _ in self.segments])
        hi = np.array([b for _, b in self.segments])
        if self.linear:
            # g(x) = p + q x on each segment, read off at two interior points
            x1 = lo + (hi - lo) / 3
            x2 = lo + 2 * (hi - lo) / 3
            v1, v2 = g.func(x1), g.func(x2)
            q = np.where(np.full(lo.size, g.piecewise_constant), 0.0, (v2 - v1) / (x2 - x1))
            p = np.where(np.full(lo.size, g.piecewise_constant), 0.5 * (v1 + v2), v1 - q * x1)
            items = {}
            for (a, b), pi, qi in zip(self.segments, p, q):
                key = (Fraction(a), Fraction(b))
                acc = items.setdefault(key, [0.0, 0.0])
                acc[0] += pi
                acc[1] += qi
            return self._linear_set(0, items)
        mid = 0.5 * (lo + hi)
        gconst = g.func(mid) if g.piecewise_constant else None
        ps = PieceSet(n=0, lo=lo, hi=hi, linear=False, seg=np.arange(lo.size), gconst=gconst)
        if self.affine:
            ps.slope = np.ones(lo.size)
            ps.shift = np.zeros(lo.size)
        return ps

    @staticmethod
    def _linear_set(n, items):
        keys = sorted(items)
        ps = PieceSet(n=n, lo=np.array([float(k[0]) for k in keys]), hi=np.array([float(k[1]) for k in keys]),
                      linear=True, alpha=np.array([items[k][0] for k in keys]),
                      beta=np.array([items[k][1] for k in keys]))
        ps.exact_ends = keys
        return ps

    def step(self, ps: PieceSet) -> PieceSet:
        if ps.linear:
            return self._step_linear(ps)
        lo_parts, hi_parts, parent_parts, bid_parts, sh_parts = [], [], [], [], []
        for owner, bi, j, c, d in _branch_copies(self.map, ps.lo, ps.hi):
            b = self.map.branches[bi]
            ic, idd = _branch_image(b, j, c, d)
            lo_parts.append(ic)
            hi_parts.append(idd)
            parent_parts.append(owner)
            bid_parts.append(np.full(owner.size, bi))
            sh_parts.append(j)
        parent = np.concatenate(parent_parts)
        if parent.size > self.max_pieces:
            raise QuadratureError(f"pushforward of {self.g.name} under {self.map.name} needs more than "
                                  f"{self.max_pieces} pieces at n={ps.n + 1}")
        lo = np.concatenate(lo_parts)
        hi = np.concatenate(hi_parts)
        bid = np.concatenate(bid_parts)
        sh = np.concatenate(sh_parts)
        keep = lo < hi
        parent, lo, hi, bid, sh = parent[keep], lo[keep], hi[keep], bid[keep], sh[keep]
        out = PieceSet(n=ps.n + 1, lo=lo, hi=hi, linear=False, seg=ps.seg[parent],
                       gconst=None if ps.gconst is None else ps.gconst[parent])
        if self.affine:
            s = np.array([float(b.affine.slope) for b in self.map.branches])[bid]
            t = np.array([float(b.affine.intercept) for b in self.map.branches])[bid]
            # inverse of y = s (x - j) + t + j is x = y/s - (t + j)/s + j
            inv_b = sh - (t + sh) / s
            out.slope = ps.slope[parent] / s
            out.shift = ps.slope[parent] * inv_b + ps.shift[parent]
        else:
            out.chain_branch = [a[parent] for a in ps.chain_branch] + [bid]
            out.chain_shift = [a[parent] for a in ps.chain_shift] + [sh]
        return out

    def _step_linear(self, ps: PieceSet) -> PieceSet:
        items = {}
        lifted = self.map.lifted
        for (c0, d0), al, be in zip(ps.exact_ends, ps.alpha, ps.beta):
            for b in self.map.branches:
                s, t = b.affine.slope, b.affine.intercept
                blo, bhi = Fraction(b.lo), Fraction(b.hi)
                js = range(math.floor(c0 - blo), math.ceil(d0 - blo) + 1) if lifted else (0,)
                for j in js:
                    c = max(c0, blo + j)
                    d = min(d0, bhi + j)
                    if not c < d:
                        continue
                    # T(x) = s x + tt on this copy, tt = t + j (1 - s)
                    tt = t + j * (1 - s)
                    a_img, b_img = s * c + tt, s * d + tt
                    key = (a_img, b_img) if s > 0 else (b_img, a_img)
                    sf, tf = float(s), float(tt)
                    # w(x) = al + be x with x = (y - tt)/s, divided by |s|
                    na = (al - be * tf / sf) / abs(sf)
                    nb = be / (sf * abs(sf))
                    acc = items.setdefault(key, [0.0, 0.0])
                    acc[0] += na
                    acc[1] += nb
        if len(items) > self.max_pieces:
            raise QuadratureError(f"pushforward of {self.g.name} needs more than {self.max_pieces} pieces")
        return self._linear_set(ps.n + 1, items)

    def weights(self, ps: PieceSet, y, owner):
        """Weight of piece ``owner[i]`` at ``y[i]`` (the piece's share of ``P^n g``)."""
        if ps.linear:
            return ps.alpha[owner] + ps.beta[owner] * y
        if self.affine:
            a = ps.slope[owner]
            if ps.gconst is not None:
                return ps.gconst[owner] * np.abs(a)
            return self.g.func(a * y + ps.shift[owner]) * np.abs(a)
        x = np.array(y, dtype=float, copy=True)
        wt = np.ones_like(x)
        for level in range(len(ps.chain_branch) - 1, -1, -1):
            bid = ps.chain_branch[level][owner]
            sh = ps.chain_shift[level][owner]
            for bi, b in enumerate(self.map.branches):
                sel = bid == bi
                if not sel.any():
                    continue
                u = np.asarray(b.inverse(x[sel] - sh[sel]), dtype=float)
                wt[sel] /= np.abs(np.asarray(b.derivative(u), dtype=float))
                x[sel] = u + sh[sel]
        if ps.gconst is not None:
            return ps.gconst[owner] * wt
        return self.g.func(x) * wt


def _branch_copies(tmap, lo, hi):
    """``(piece index, branch index, shift, c, d)`` for every branch copy meeting ``[lo, hi)``."""
    out = []
    idx = np.arange(lo.size)
    for bi, b in enumerate(tmap.branches):
        if tmap.lifted:
            jmin = np.floor(lo - b.lo).astype(np.int64)
            jmax = np.ceil(hi - b.lo).astype(np.int64)
            count = np.maximum(jmax - jmin + 1, 0)
            owner = np.repeat(idx, count)
            starts = np.cumsum(count) - count
            j = jmin[owner] + (np.arange(owner.size) - np.repeat(starts, count))
        else:
            owner = idx
            j = np.zeros(lo.size, dtype=np.int64)
        c = np.maximum(lo[owner], b.lo + j)
        d = np.minimum(hi[owner], b.hi + j)
        ok = c < d
        out.append((owner[ok], bi, j[ok], c[ok], d[ok]))
    return out


def _branch_image(b, j, c, d):
    """Image of ``[c, d)`` under the copy of branch ``b`` shifted by ``j``."""
    u_c, u_d = c - j, d - j
    at_lo, at_hi = u_c == b.lo, u_d == b.hi
    fc = np.full(c.shape, b.image_at_lo())
    fd = np.full(d.shape, b.image_at_hi())
    if (~at_lo).any():
        fc[~at_lo] = b.forward(u_c[~at_lo])
    if (~at_hi).any():
        fd[~at_hi] = b.forward(u_d[~at_hi])
    fc, fd = fc + j, fd + j
    return (fc, fd) if b.increasing else (fd, fc)


# -- engine ---------------------------------------------------------------------------

class TransferEngine:
    """Transfer operator of ``tmap`` in ``exact_lattice`` or ``preimage_sum`` mode."""

    def __init__(self, tmap: PiecewiseMap, mode=None, depth_limit=24, exact_limit=300):
        if mode is None:
            mode = EXACT_LATTICE if tmap.jump_law is not None else PREIMAGE_SUM
        if mode not in MODES:
            raise ValueError(f"unknown transfer mode {mode!r}")
        if mode == EXACT_LATTICE and tmap.jump_law is None:
            raise MethodMismatch(f"{tmap.name} has no lattice jump law; exact lattice mode unavailable")
        self.map = tmap
        self.mode = mode
        self.depth_limit = int(depth_limit)
        self.exact_limit = int(exact_limit)
        self._ladders = {}
        self._lock = threading.Lock()
        if tmap.jump_law is not None:
            law = dict(tmap.jump_law)
            if sum(law.values()) != 1:
                raise ValueError("jump law must sum to 1")
            self._j0 = min(law)
            span = max(law) - self._j0 + 1
            den = 1
            for p in law.values():
                den = den * p.denominator // math.gcd(den, p.denominator)
            self._wnum = [int(law.get(self._j0 + i, 0) * den) for i in range(span)]
            self._wden = den
            self._wfloat = np.array([float(law.get(self._j0 + i, 0)) for i in range(span)])
            self._uniform = len(set(self._wnum)) == 1

    def _need_lattice(self):
        if self.map.jump_law is None:
            raise MethodMismatch(f"{self.map.name} has no lattice jump law")

    # -- lattice -------------------------------------------------------------
    def step_exact(self, m: LatticeMeasure) -> LatticeMeasure:
        """One application of ``P``: mass of cell ``c`` spreads to ``c + j`` with the jump law."""
        nums = m.numerators
        if not nums:
            return m
        k = len(self._wnum)
        size = len(nums) + k - 1
        if self._uniform:
            w = self._wnum[0]
            prefix = [0]
            for a in nums:
                prefix.append(prefix[-1] + a)
            out = []
            for i in range(size):
                hi = min(i, len(nums) - 1) + 1
                lo = max(0, i - k + 1)
                out.append((prefix[hi] - prefix[lo]) * w)
        else:
            out = [0] * size
            for i, a in enumerate(nums):
                if a:
                    for t, w in enumerate(self._wnum):
                        out[i + t] += a * w
        return LatticeMeasure(m.offset + self._j0, tuple(out), m.denominator * self._wden)

    def step_float(self, m: FloatLatticeMeasure) -> FloatLatticeMeasure:
        masses = np.convolve(m.masses, self._wfloat)
        k = self._wfloat.size
        err = m.error_bound + (k + 1) * EPS * float(np.abs(masses).sum())
        return FloatLatticeMeasure(m.offset + self._j0, masses, err)

    def apply_lattice(self, g: LatticeMeasure, n: int) -> LatticeMeasure:
        """Exact ``P^n g`` for a lattice measure (rational arithmetic at every ``n``)."""
        self._need_lattice()
        if n < 0:
            raise ValueError("n must be nonnegative")
        ladder = self._ladders.get(g)
        if ladder is not None and n < len(ladder) and isinstance(ladder[n], LatticeMeasure):
            return ladder[n]
        m = g
        for _ in range(n):
            m = self.step_exact(m)
        return m

    def ladder(self, g: LatticeMeasure, n_max: int, cache=None, key=None):
        """``[P^0 g, ..., P^n_max g]``; exact up to ``exact_limit``, float with error bound beyond.

        ``cache`` (a :class:`~infinimix.cache.LadderCache`) and ``key`` persist
        ladders across runs.
        """
        self._need_lattice()
        if key is not None:
            key = (self.map.name, f"exact<={self.exact_limit}") + tuple(key)
        with self._lock:
            ladder = self._ladders.get(g)
            if ladder is None and cache is not None:
                ladder = cache.load(key)
            if ladder is None:
                ladder = [g]
            start = len(ladder)
            while len(ladder) <= n_max:
                prev = ladder[-1]
                if isinstance(prev, LatticeMeasure):
                    nxt = self.step_exact(prev)
                    if len(ladder) > self.exact_limit:
                        nxt = nxt.to_float()
                else:
                    nxt = self.step_float(prev)
                ladder.append(nxt)
            self._ladders[g] = ladder
            if cache is not None and len(ladder) > start:
                cache.store(key, ladder)
            return ladder[:n_max + 1]

    @staticmethod
    def lattice_pair(F: GlobalObservable, m):
        """``<F, m>`` for lattice-step ``F``; returns ``(value, error_bound)``."""
        if isinstance(m, LatticeMeasure):
            if F.cell_error:
                v = m.pair(F.cell_value)
                return float(v), F.cell_error * float(m.l1())
            v = m.pair(F.cell_value)
            return float(v), 0.0 if isinstance(v, Fraction) else 4 * EPS * F.bound * float(m.l1()) * len(m.numerators)
        values = np.array([float(F.cell_value(j)) for j in m.cells])
        prods = values * m.masses
        v = math.fsum(prods)
        err = F.bound * m.error_bound + EPS * float(np.abs(prods).sum()) + F.cell_error * m.l1()
        return v, err

    # -- preimage trees --------------------------------------------------------
    def image_unions(self, g: LocalObservable, n: int):
        """Merged interval unions covering ``T^m(supp g)`` for ``m = 0..n``."""
        unions = [[(g.lo, g.hi)]]
        for _ in range(n):
            lo = np.array([a for a, _ in unions[-1]])
            hi = np.array([b for _, b in unions[-1]])
            parts = []
            for _, bi, j, c, d in _branch_copies(self.map, lo, hi):
                ic, idd = _branch_image(self.map.branches[bi], j, c, d)
                parts.extend(zip(ic.tolist(), idd.tolist()))
            parts.sort()
            merged = []
            for a, b in parts:
                if merged and a <= merged[-1][1] + 1e-12 * max(1.0, abs(a)):
                    merged[-1] = (merged[-1][0], max(merged[-1][1], b))
                else:
                    merged.append((a, b))
            unions.append(merged)
        return unions

    def eval_pointwise(self, g: LocalObservable, n: int, x) -> SignedDensityValue:
        """``P^n g(x)`` by summing ``g(y) / |(T^n)'(y)|`` over the ``n``-step preimage tree."""
        if n > self.depth_limit:
            raise DepthExceeded(f"n={n} exceeds the preimage depth limit {self.depth_limit}")
        if n == 0:
            return SignedDensityValue(g(x), 0.0)
        unions = self.image_unions(g, n)
        pts = np.array([float(x)])
        wts = np.ones(1)
        for level in range(n):
            self._check_boundary(pts, x)
            xs, ws, parent = self.map.preimages_array(pts)
            pts, wts = xs, ws * wts[parent]
            # keep points that can still reach supp g in the remaining steps
            union = unions[n - level - 1]
            keep = np.zeros(pts.size, dtype=bool)
            for a, b in union:
                keep |= (pts >= a - 1e-12 * max(1.0, abs(a))) & (pts <= b + 1e-12 * max(1.0, abs(b)))
            pts, wts = pts[keep], wts[keep]
            if pts.size > (1 << 25):
                raise DepthExceeded(f"preimage tree too large at level {level + 1}")
        terms = g.func(pts) * wts
        value = math.fsum(terms)
        err = (4 * n + 10) * EPS * float(np.abs(terms).sum())
        return SignedDensityValue(value, err)

    def _check_boundary(self, pts, x):
        for b in self.map.branches:
            for e in (b.image_lo, b.image_hi):
                if not math.isfinite(e):
                    continue
                hit = (pts - e == np.floor(pts - e)) if self.map.lifted else (pts == e)
                if hit.any():
                    raise SingularPoint(f"{self.map.name}: preimage tree of x={x} meets the branch-image "
                                        f"end point {e}")

    # -- pushforward pieces ------------------------------------------------------
    def pieces(self, g: LocalObservable, n_max: int, max_pieces=MAX_PIECES):
        """Yield ``(pusher, PieceSet)`` for ``n = 0..n_max``."""
        pusher = _Pusher(self.map, g, max_pieces)
        ps = pusher.initial()
        yield pusher, ps
        for _ in range(n_max):
            ps = pusher.step(ps)
            yield pusher, ps

    # -- L1 norms -----------------------------------------------------------------
    def lin_norm(self, g, n_list, cache=None, key=None):
        """``||P^n g||_1`` for mean-zero ``g`` at each ``n`` in ``n_list``."""
        n_list = [int(n) for n in n_list]
        if isinstance(g, LocalObservable):
            if g.lattice is not None and self.mode == EXACT_LATTICE:
                g = g.lattice
        if isinstance(g, LatticeMeasure):
            if g.total() != 0:
                raise NotMeanZero(f"lattice density has mass {g.total()}, not 0")
            ladder = self.ladder(g, max(n_list), cache=cache, key=key)
            out = []
            for n in n_list:
                m = ladder[n]
                if isinstance(m, LatticeMeasure):
                    out.append(SignedDensityValue(float(m.l1()), 0.0))
                else:
                    l1 = math.fsum(np.abs(m.masses))
                    out.append(SignedDensityValue(l1, m.error_bound + EPS * l1 * m.masses.size))
            return out
        if abs(g.integral) > MEAN_ZERO_TOL:
            raise NotMeanZero(f"{g.name} has integral {g.integral:.3e}, not 0")
        if max(n_list) > self.depth_limit:
            raise DepthExceeded(f"n={max(n_list)} exceeds the preimage depth limit {self.depth_limit}")
        wanted = set(n_list)
        results = {}
        for pusher, ps in self.pieces(g, max(n_list)):
            if ps.n in wanted:
                results[ps.n] = _l1_of_pieces(pusher, ps)
        return [results[n] for n in n_list]


def _l1_of_pieces(pusher, ps: PieceSet) -> SignedDensityValue:
    """``int |sum_i w_i|`` over the overlay partition of the piece images."""
    ends = np.unique(np.concatenate([ps.lo, ps.hi]))
    if ends.size < 2:
        return SignedDensityValue(0.0, 0.0)
    a, b = ends[:-1], ends[1:]
    start = np.searchsorted(ends, ps.lo)
    stop = np.searchsorted(ends, ps.hi)
    if ps.linear:
        alpha = np.zeros(ends.size)
        beta = np.zeros(ends.size)
        np.add.at(alpha, start, ps.alpha)
        np.add.at(alpha, stop, -ps.alpha)
        np.add.at(beta, start, ps.beta)
        np.add.at(beta, stop, -ps.beta)
        al = np.cumsum(alpha)[:-1]
        be = np.cumsum(beta)[:-1]
        total = 0.0
        for aa, bb, p, q in zip(a, b, al, be):
            total += _abs_linear_integral(p, q, aa, bb)
        err = (8 + 4 * ps.n) * EPS * (abs(total) + float(np.abs(ps.alpha).sum()))
        return SignedDensityValue(total, err)
    covers = [[] for _ in range(a.size)]
    for i, (s, e) in enumerate(zip(start, stop)):
        for k in range(s, e):
            covers[k].append(i)
    cover_idx = [np.array(c, dtype=np.int64) for c in covers]

    def f(y, owner):
        out = np.zeros(y.size)
        for seg in np.unique(owner):
            sel = owner == seg
            pieces = cover_idx[seg]
            if not pieces.size:
                continue
            yy = np.repeat(y[sel], pieces.size)
            own = np.tile(pieces, int(sel.sum()))
            w = pusher.weights(ps, yy, own).reshape(-1, pieces.size)
            out[sel] = np.abs(w.sum(axis=1))
        return out

    vals, errs, _ = integrate_intervals(f, a, b, abs_tol=1e-10 / a.size)
    total = float(vals.sum())
    return SignedDensityValue(total, float(errs.sum()) + (10 + 4 * ps.n) * EPS * total * a.size)


def _abs_linear_integral(p, q, a, b):
    """``int_a^b |p + q y| dy`` in closed form."""
    def prim(y):
        return p * y + 0.5 * q * y * y

    if q != 0:
        r = -p / q
        if a < r < b:
            return abs(prim(r) - prim(a)) + abs(prim(b) - prim(r))
    return abs(prim(b) - prim(a))


# -- couplings ---------------------------------------------------------------------

def coupling(F: GlobalObservable, g: LocalObservable, abs_tol=1e-10):
    """``<F, g> = int F g``; exact cell sum when both are lattice structured."""
    if g.lattice is not None and F.is_lattice_step and not F.cell_error:
        return float(g.lattice.pair(F.cell_value))
    if g.piecewise_constant:
        total = 0.0
        for a, b in g.segments():
            gv = float(g.func(np.array([0.5 * (a + b)]))[0])
            if gv:
                total += gv * integrate_global(F, a, b, abs_tol=abs_tol / len(g.segments()))[0]
        return total
    pts = np.concatenate([np.asarray(g.breaks), F.breakpoints(g.lo, g.hi)])
    value, _ = integrate(lambda x: F.func(x) * g.func(x), g.lo, g.hi, breakpoints=pts, abs_tol=abs_tol)
    return value


def pieces_coupling(F: GlobalObservable, pusher: _Pusher, ps: PieceSet, abs_tol=1e-10) -> SignedDensityValue:
    """``<F, P^n g>`` integrated piece by piece."""
    g = pusher.g
    if ps.linear and not np.any(ps.beta):
        total = 0.0
        err = 0.0
        exact_cells = F.is_lattice_step or F.period_integral is not None
        if exact_cells:
            for c, d, al in zip(ps.lo, ps.hi, ps.alpha):
                v, e = integrate_global(F, c, d, abs_tol=abs_tol / len(ps))
                total += al * v
                err += abs(al) * e
            round_off = (len(ps) + 4 * ps.n + 10) * EPS * F.bound * float(np.sum(np.abs(ps.alpha) * (ps.hi - ps.lo)))
            return SignedDensityValue(total, err + round_off)
    lo, hi = ps.lo, ps.hi
    if (~np.isfinite(lo) | ~np.isfinite(hi)).any() and any(gen[0] == "periodic" for gen in F.breaks):
        raise QuadratureError(f"{F.name} has infinitely many discontinuities on an unbounded piece")
    owner_b, pts = F.split_points(np.where(np.isfinite(lo), lo, -1e300), np.where(np.isfinite(hi), hi, 1e300))
    if pts.size:
        allpts = np.concatenate([lo, hi, pts])
        owners = np.concatenate([np.arange(lo.size), np.arange(lo.size), owner_b])
        order = np.lexsort((allpts, owners))
        allpts, owners = allpts[order], owners[order]
        same = owners[1:] == owners[:-1]
        ilo, ihi, iown = allpts[:-1][same], allpts[1:][same], owners[:-1][same]
        keep = ilo < ihi
        ilo, ihi, iown = ilo[keep], ihi[keep], iown[keep]
    else:
        ilo, ihi, iown = lo, hi, np.arange(lo.size)
    fv = F.func

    def f(y, owner):
        return fv(y) * pusher.weights(ps, y, iown[owner])

    if ilo.size == 0:
        return SignedDensityValue(0.0, 0.0)
    vals, errs, _ = integrate_intervals(f, ilo, ihi, abs_tol=abs_tol / ilo.size)
    total = math.fsum(vals)
    mass = g.l1 if not ps.linear else float(np.sum((np.abs(ps.alpha) + np.abs(ps.beta) * np.maximum(
        np.abs(ps.lo), np.abs(ps.hi))) * (ps.hi - ps.lo)))
    round_off = (ilo.size + 4 * ps.n + 10) * EPS * F.bound * mass
    finite = np.isfinite(lo) & np.isfinite(hi)
    # piece end points carry O(n eps) relative rounding; weights are at most peak(g)
    slack = 2 * (ps.n + 1) * EPS * F.bound * g.peak * float(
        np.sum(np.where(np.isfinite(lo), np.abs(lo), 0) + np.where(np.isfinite(hi), np.abs(hi), 0) + finite))
    return SignedDensityValue(total, float(errs.sum()) + round_off + slack)


def lattice_correlation(engine: TransferEngine, F: GlobalObservable, g: LatticeMeasure, n_list, cache=None, key=None):
    """``<E(F|cells), P^n g>`` along a lattice ladder; returns a list of :class:`SignedDensityValue`."""
    Fp = project_to_lattice(F)
    ladder = engine.ladder(g, max(n_list), cache=cache, key=key)
    out = []
    for n in n_list:
        v, e = engine.lattice_pair(Fp, ladder[n])
        out.append(SignedDensityValue(v, e))
    return out
