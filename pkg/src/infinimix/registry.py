"""String ids for maps and observables.

Maps: ``boole``, ``rw:<k1>:<k2>``, ``custom:<file.json>``.
Observables: see :data:`GLOBAL_IDS` and :data:`LOCAL_IDS`.
"""
from __future__ import annotations

import difflib
import json
from fractions import Fraction
from pathlib import Path

from .errors import MapConstructionError, UnresolvedId
from .maps import make_boole, make_custom_from_json, make_random_walk_map
from . import observables as obs

MAP_IDS = {
    "boole": "Boole map x - 1/x",
    "rw:<k1>:<k2>": "random-walk map, slope k2-k1 on each unit cell, jumps k1..k2-1",
    "custom:<file>": "piecewise map from a JSON branch document",
}

GLOBAL_IDS = {
    "one": "constant 1",
    "const:<c>": "constant c",
    "sign": "sign(x), sign(0) = 0",
    "cos:<j>": "cos(2 pi x / j)",
    "halfcell:<j>": "indicator of [0, j/2) + jZ",
    "altcell": "(-1)^floor(x)",
    "cellpattern:<v0>,<v1>,...": "periodic values on consecutive unit cells",
    "dyadicflip": "exploratory: cell values flipping sign on dyadic blocks (no Cesaro mean)",
    "proj:<global id>": "conditional expectation on unit cells",
}

LOCAL_IDS = {
    "indicator:<a>:<b>": "1_[a,b)",
    "density:<a>:<b>": "1_[a,b)/(b-a)",
    "cell:<j>": "1_[j,j+1)",
    "dipole:<a>:<b>": "1_[a,a+1) - 1_[b,b+1)",
    "gauss:<center>:<width>": "normal density truncated to +-8 widths",
    "triangle:<a>:<b>": "triangular density on [a,b]",
}


def _suggest(ident, choices):
    head = ident.split(":")[0]
    names = [c.split(":")[0] for c in choices]
    hits = difflib.get_close_matches(head, names, n=3, cutoff=0.5)
    return [c for c in choices if c.split(":")[0] in hits] or list(choices)[:3]


def _num(text):
    return Fraction(text.strip())


def _int(text):
    v = Fraction(text.strip())
    if v.denominator != 1:
        raise ValueError(f"{text!r} is not an integer")
    return int(v)


def _as_number(v: Fraction):
    return int(v) if v.denominator == 1 else float(v)


def resolve_map(ident: str, base_dir=None):
    """Build the map named by ``ident``; custom files are relative to ``base_dir``."""
    ident = ident.strip()
    if ident == "boole":
        return make_boole()
    head, _, rest = ident.partition(":")
    if head == "rw":
        parts = rest.split(":")
        try:
            k1, k2 = (_int(p) for p in parts)
        except ValueError:
            raise UnresolvedId("map", ident, ["rw:-1:2"]) from None
        return make_random_walk_map(k1, k2)
    if head == "custom" and rest:
        path = Path(rest)
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise MapConstructionError(f"cannot read custom map file {path}: {exc}") from None
        return make_custom_from_json(doc, name=ident)
    raise UnresolvedId("map", ident, _suggest(ident, MAP_IDS))


def resolve_local(ident: str) -> obs.LocalObservable:
    ident = ident.strip()
    head, _, rest = ident.partition(":")
    args = rest.split(":") if rest else []
    try:
        if head in ("indicator", "density") and len(args) == 2:
            a, b = (_num(x) for x in args)
            return obs.make_indicator_density(_as_number(a), _as_number(b), normalize=head == "density",
                                              name=ident)
        if head == "cell" and len(args) == 1:
            j = _int(args[0])
            return obs.make_indicator_density(j, j + 1, name=ident)
        if head == "dipole" and len(args) == 2:
            return obs.make_dipole(_int(args[0]), _int(args[1]))
        if head == "gauss" and len(args) == 2:
            return obs.make_gauss(float(args[0]), float(args[1]))
        if head == "triangle" and len(args) == 2:
            return obs.make_triangle(float(args[0]), float(args[1]))
    except (ValueError, ZeroDivisionError) as exc:
        raise UnresolvedId("local observable", ident, [f"{head}: {exc}"]) from None
    raise UnresolvedId("local observable", ident, _suggest(ident, LOCAL_IDS))


def resolve_global(ident: str) -> obs.GlobalObservable:
    ident = ident.strip()
    head, _, rest = ident.partition(":")
    try:
        if ident == "one":
            return obs.make_one()
        if ident == "sign":
            return obs.make_sign()
        if ident == "altcell":
            return obs.make_alternating()
        if ident == "dyadicflip":
            return obs.make_dyadic_flip()
        if head == "const" and rest:
            return obs.make_constant(_as_number(_num(rest)))
        if head == "cos":
            return obs.make_cos(_int(rest) if rest else 1)
        if head == "halfcell":
            return obs.make_halfcell(_int(rest) if rest else 1)
        if head == "cellpattern" and rest:
            return obs.make_cell_pattern([_num(v) for v in rest.split(",")])
        if head == "proj" and rest:
            return obs.project_to_lattice(resolve_global(rest))
    except (ValueError, ZeroDivisionError) as exc:
        raise UnresolvedId("global observable", ident, [f"{head}: {exc}"]) from None
    if head in ("indicator", "density", "cell", "dipole", "gauss", "triangle"):
        return resolve_local(ident).as_global()
    raise UnresolvedId("global observable", ident, _suggest(ident, {**GLOBAL_IDS, **LOCAL_IDS}))
