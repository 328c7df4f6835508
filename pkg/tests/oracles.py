"""Reference values computed without touching the library.

* ``trinomial_ladder``: n-step distribution of a walk with uniform jumps in
  {-1, 0, 1}, from the closed-form trinomial coefficients.
* ``tripling_halfcell_truth``: ``2 m(S^-n [0, 1/2) ∩ [0, 1/2))`` for the circle
  map ``S(x) = 3x mod 1``, by exact integer interval pullback.
* ``walk_histogram``: plain Monte Carlo of the jump walk.
"""
from fractions import Fraction
from math import comb

import numpy as np


def trinomial(n, j):
    """Coefficient of ``x^j`` in ``(1/x + 1 + x)^n``."""
    j = abs(j)
    return sum(comb(n, k) * comb(n - k, k + j) for k in range((n - j) // 2 + 1))


def trinomial_ladder(n):
    """``{cell: mass}`` after ``n`` steps started from cell 0."""
    return {j: Fraction(trinomial(n, j), 3 ** n) for j in range(-n, n + 1)}


def pullback_tripling(intervals, den):
    """Pull half-open integer intervals ``[a, b)/den`` in [0, 1) back under ``3x mod 1``.

    Returns intervals over the new denominator ``3 den``.
    """
    a, b = intervals
    shifts = np.arange(3, dtype=np.int64) * den
    a2 = (a[None, :] + shifts[:, None]).ravel()
    b2 = (b[None, :] + shifts[:, None]).ravel()
    order = np.argsort(a2, kind="stable")
    return (a2[order], b2[order]), 3 * den


def tripling_halfcell_truth(n):
    """Exact ``2 m(S^-n[0,1/2) ∩ [0,1/2))`` as a Fraction."""
    den = 2
    iv = (np.array([0], dtype=np.int64), np.array([1], dtype=np.int64))
    for _ in range(n):
        iv, den = pullback_tripling(iv, den)
    half = den // 2
    lo = iv[0]
    hi = np.minimum(iv[1], half)
    overlap = int(np.clip(hi - lo, 0, None).sum())
    return 2 * Fraction(overlap, den)


def walk_histogram(n, walks, seed):
    """Empirical cell masses of ``walks`` independent n-step jump walks."""
    rng = np.random.default_rng(seed)
    pos = rng.integers(-1, 2, size=(walks, n)).sum(axis=1)
    cells, counts = np.unique(pos, return_counts=True)
    return {int(c): k / walks for c, k in zip(cells, counts)}
