"""Scenario files: parsing, normalisation and execution.

A scenario is an INI document with the sections ``[map]``, ``[observables]``,
``[family]`` and ``[run]``.  Unknown sections or keys are rejected with the
line number and the closest valid key.
"""
from __future__ import annotations

import configparser
import difflib
import json
import logging
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from . import mixing_lab as lab
from . import volume as vol
from .cache import LadderCache
from .errors import InfinimixError, ScenarioError, UnresolvedId
from .observables import UNIFORM_CESARO, cesaro_mean
from .registry import resolve_global, resolve_local, resolve_map
from .transfer import EXACT_LATTICE, TransferEngine

log = logging.getLogger(__name__)

EXPERIMENTS = ("corr", "glm", "llm", "ggm", "coalescence", "rho", "avg", "avol", "lin", "pf1", "ladder",
               "duality")
VERDICT_EXIT = {"pass": 0, "converged": 0, "fail": 2, "not_uniform": 2, "inconclusive": 3}

SCHEMA = {
    "map": {"id"},
    "observables": {"F", "G", "f", "g", "h", "gset"},
    "family": {"kind", "ladder", "probes"},
    "run": {"experiment", "n", "method", "tolerance", "tol", "seed", "samples", "output", "name", "expect", "target",
            "avg", "tail_fraction", "constant", "cases", "points", "exact_limit", "jmax"},
}
REQUIRED = {
    "corr": ("F", "g"), "glm": ("F", "gset"), "llm": ("f", "g"), "ggm": ("F", "G"),
    "coalescence": ("F", "g", "h"), "rho": ("F", "gset"), "avg": ("F",), "avol": (), "lin": ("g",),
    "pf1": (), "ladder": ("g",), "duality": (),
}
NEEDS_FAMILY = ("ggm", "avg", "avol")
NEEDS_N = ("corr", "glm", "llm", "ggm", "coalescence", "rho", "avol", "lin", "ladder")

BUNDLED_DIR = Path(__file__).parent / "scenarios"


# -- parsing -------------------------------------------------------------------------------

def parse_n_list(text):
    """``"0..40"`` (inclusive), ``"0..1000:10"`` or ``"1, 2, 5"``."""
    t = text.strip()
    m = re.fullmatch(r"(-?\d+)\s*\.\.\s*(-?\d+)(?:\s*:\s*(\d+))?", t)
    if m:
        a, b = int(m.group(1)), int(m.group(2))
        step = int(m.group(3) or 1)
        if step < 1:
            raise ValueError("step must be positive")
        values = list(range(a, b + 1, step))
        if values and values[-1] != b:
            values.append(b)
    else:
        values = [int(x) for x in t.replace(",", " ").split()]
    if not values or any(y <= x for x, y in zip(values, values[1:])) or values[0] < 0:
        raise ValueError(f"n list {text!r} must be nonempty, nonnegative and increasing")
    return values


def _parse_number_list(text):
    out = []
    for x in text.replace(",", " ").split():
        v = float(x)
        out.append(int(v) if v.is_integer() else v)
    return out


@dataclass
class ScenarioConfig:
    name: str
    experiment: str
    map_ids: list
    observables: dict
    family: dict | None
    n_values: list | None
    method: str = "auto"
    tol: float = 1e-2
    seed: int | None = None
    samples: int = lab.DEFAULT_SAMPLES
    output: str | None = None
    extra: dict = field(default_factory=dict)
    base_dir: str | None = None
    raw: dict = field(default_factory=dict)

    def normal_form(self) -> str:
        """Canonical text of the parsed scenario (sections and keys sorted)."""
        lines = []
        for section in sorted(self.raw):
            lines.append(f"[{section}]")
            for key in sorted(self.raw[section]):
                lines.append(f"{key} = {self.raw[section][key]}")
            lines.append("")
        return "\n".join(lines)


def _locate(text, section, key):
    """1-based (line, column) of ``key`` inside ``section`` of the raw text."""
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
            continue
        if current == section:
            m = re.match(r"(\s*)([^=:\s]+)\s*[=:]", line)
            if m and m.group(2) == key:
                return i, len(m.group(1)) + 1
    return None, None


def _locate_section(text, section):
    for i, line in enumerate(text.splitlines(), 1):
        if line.strip() == f"[{section}]":
            return i
    return None


def parse_scenario(text: str, name="scenario", base_dir=None) -> ScenarioConfig:
    """Parse and validate a scenario document; every id is resolved eagerly."""
    cp = configparser.ConfigParser(interpolation=None, strict=True, empty_lines_in_values=False)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.DuplicateOptionError as exc:
        raise ScenarioError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno, 1) from None
    except configparser.DuplicateSectionError as exc:
        raise ScenarioError(f"duplicate section [{exc.section}]", exc.lineno, 1) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ScenarioError("key outside of any section", exc.lineno, 1) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ScenarioError("malformed line (expected 'key = value')", line, 1) from None
    raw = {}
    for section in cp.sections():
        if section not in SCHEMA:
            hint = difflib.get_close_matches(section, SCHEMA, n=1)
            msg = f"unknown section [{section}]" + (f"; did you mean [{hint[0]}]?" if hint else "")
            raise ScenarioError(msg, _locate_section(text, section), 1)
        raw[section] = {}
        for key, value in cp.items(section):
            if key not in SCHEMA[section]:
                allowed = sorted(SCHEMA[section])
                hint = difflib.get_close_matches(key, allowed, n=1)
                msg = f"unknown key {key!r} in [{section}]" + (f"; did you mean {hint[0]!r}?" if hint else
                                                               f"; allowed: {', '.join(allowed)}")
                raise ScenarioError(msg, *_locate(text, section, key))
            raw[section][key] = value.strip()

    def err(section, key, message):
        line, col = _locate(text, section, key)
        return ScenarioError(message, line, col)

    run = raw.get("run", {})
    experiment = run.get("experiment")
    if experiment is None:
        raise ScenarioError("missing [run] experiment", _locate_section(text, "run"), 1)
    if experiment not in EXPERIMENTS:
        hint = difflib.get_close_matches(experiment, EXPERIMENTS, n=1)
        raise err("run", "experiment", f"unknown experiment {experiment!r}"
                  + (f"; did you mean {hint[0]!r}?" if hint else ""))
    map_text = raw.get("map", {}).get("id", "")
    map_ids = [m.strip() for m in map_text.split(",") if m.strip()]
    if not map_ids and experiment != "duality":
        raise ScenarioError("missing [map] id", _locate_section(text, "map"), 1)
    if len(map_ids) > 1 and experiment != "pf1":
        raise err("map", "id", "only the pf1 experiment accepts several maps")
    if experiment == "duality" and not map_ids:
        map_ids = ["rw:-1:2"]
    for mid in map_ids:
        try:
            resolve_map(mid, base_dir)
        except UnresolvedId as exc:
            raise exc.located(*_locate(text, "map", "id")) from None
        except InfinimixError as exc:
            raise err("map", "id", f"map {mid!r}: {exc}") from None

    observables = dict(raw.get("observables", {}))
    for key in REQUIRED[experiment]:
        if key not in observables:
            raise ScenarioError(f"experiment {experiment!r} needs [observables] {key}",
                                _locate_section(text, "observables"), 1)
    for key, value in observables.items():
        try:
            if key in ("F", "G"):
                resolve_global(value)
            elif key == "gset":
                for item in _split_ids(value):
                    resolve_local(item)
            else:
                resolve_local(value)
        except UnresolvedId as exc:
            raise exc.located(*_locate(text, "observables", key)) from None
        except InfinimixError as exc:
            raise err("observables", key, f"{key} = {value}: {exc}") from None

    family = raw.get("family")
    if experiment in NEEDS_FAMILY and family is None:
        raise ScenarioError(f"experiment {experiment!r} needs a [family] section", None, None)
    if family is not None:
        try:
            family = {"kind": family.get("kind", "symmetric"),
                      "ladder": _parse_number_list(family.get("ladder", "")),
                      "probes": [p.strip() for p in family.get("probes", "0").split(",") if p.strip()]}
            vol.ExhaustiveFamily(family["kind"], tuple(family["ladder"]), tuple(family["probes"]))
        except ValueError as exc:
            raise err("family", "ladder", f"invalid family: {exc}") from None

    n_values = None
    if "n" in run:
        try:
            n_values = parse_n_list(run["n"])
        except ValueError as exc:
            raise err("run", "n", str(exc)) from None
    elif experiment in NEEDS_N:
        raise ScenarioError(f"experiment {experiment!r} needs [run] n", _locate_section(text, "run"), 1)

    def number(key, cast, default, positive=False):
        if key not in run:
            return default
        try:
            v = cast(run[key])
        except ValueError:
            raise err("run", key, f"{key} = {run[key]!r} is not a valid number") from None
        if positive and not v > 0:
            raise err("run", key, f"{key} must be positive")
        return v

    if "tol" in run and "tolerance" in run:
        raise err("run", "tol", "give either tolerance or its short form tol, not both")
    tol = number("tolerance" if "tolerance" in run else "tol", float, 1e-2, positive=True)
    seed = number("seed", int, None)
    samples = number("samples", lambda s: int(float(s)), lab.DEFAULT_SAMPLES, positive=True)
    method = run.get("method", "auto")
    if method not in lab.METHODS:
        raise err("run", "method", f"unknown method {method!r}; choose one of {', '.join(lab.METHODS)}")
    extra = {}
    for key, cast in (("target", float), ("avg", float), ("tail_fraction", float), ("constant", float),
                      ("cases", int), ("points", int), ("exact_limit", int), ("jmax", int)):
        if key in run:
            extra[key] = number(key, cast, None)
    if "expect" in run:
        if run["expect"] not in VERDICT_EXIT:
            raise err("run", "expect", f"unknown verdict {run['expect']!r}")
        extra["expect"] = run["expect"]
    return ScenarioConfig(name=run.get("name", name), experiment=experiment, map_ids=map_ids,
                          observables=observables, family=family, n_values=n_values, method=method, tol=tol,
                          seed=seed, samples=samples, output=run.get("output"), extra=extra,
                          base_dir=None if base_dir is None else str(base_dir), raw=raw)


def _split_ids(text):
    """Split a list of ids on ``;`` if present (ids may contain commas), else on ``,``."""
    items = [t.strip() for t in text.split(";")] if ";" in text else [t.strip() for t in text.split(",")]
    return [t for t in items if t]


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists() and (BUNDLED_DIR / f"{path.name}.ini").exists():
        path = BUNDLED_DIR / f"{path.name}.ini"
    text = path.read_text()
    return parse_scenario(text, name=path.stem, base_dir=path.parent)


def bundled_scenarios():
    return sorted(p.stem for p in BUNDLED_DIR.glob("*.ini"))


# -- execution -----------------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, Fraction):
        return float(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


@dataclass
class RunArtifact:
    config: str
    library_version: str
    started: float
    finished: float
    status: str
    exit_code: int
    cache_hits: int
    results: dict
    csv: str = ""

    def payload_bytes(self) -> bytes:
        return json.dumps(_jsonable(self.results), sort_keys=True, indent=1).encode()

    def to_json(self):
        return {"config": self.config, "library_version": self.library_version, "started": self.started,
                "finished": self.finished, "status": self.status, "exit_code": self.exit_code,
                "cache_hits": self.cache_hits, "results": _jsonable(self.results)}


def _default_avg(F):
    """``Avg(F)`` for periodic observables, else ``None``."""
    if F.period and F.period_integral is not None:
        return float(Fraction(F.period_integral) / F.period) if not isinstance(F.period_integral, float) \
            else F.period_integral / F.period
    return None


def _series_csv(rows, method):
    lines = ["n,estimate,error_bound,method"]
    for r in rows:
        lines.append(f"{r['n']},{float(r['estimate'])!r},{float(r['error_bound'])!r},{method}")
    return "\n".join(lines) + "\n"


class _Runner:
    def __init__(self, cfg: ScenarioConfig, cache: LadderCache, threads=1):
        self.cfg = cfg
        self.cache = cache
        self.threads = max(1, int(threads))
        self.maps = [resolve_map(m, cfg.base_dir) for m in cfg.map_ids]
        self.map = self.maps[0] if self.maps else None
        obs = cfg.observables
        self.F = resolve_global(obs["F"]) if "F" in obs else None
        self.G = resolve_global(obs["G"]) if "G" in obs else None
        self.f = resolve_local(obs["f"]) if "f" in obs else None
        self.g = resolve_local(obs["g"]) if "g" in obs else None
        self.h = resolve_local(obs["h"]) if "h" in obs else None
        self.gset = [resolve_local(x) for x in _split_ids(obs["gset"])] if "gset" in obs else None
        self.family = (vol.ExhaustiveFamily(cfg.family["kind"], tuple(cfg.family["ladder"]),
                                            tuple(cfg.family["probes"])) if cfg.family else None)

    def pmap(self, fn, items):
        if self.threads == 1 or len(items) < 2:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(self.threads) as ex:
            return list(ex.map(fn, items))

    def base(self, method, series, verdict, tolerances, details=None, observables=None):
        cfg = self.cfg
        return {"experiment": cfg.experiment, "map": ",".join(cfg.map_ids), "observables": observables or cfg.observables,
                "method": method, "seed": cfg.seed, "series": series, "verdict": verdict,
                "tolerances": tolerances, "details": details or {}}

    def run(self):
        return getattr(self, "run_" + self.cfg.experiment)()

    def _verdict_vs_target(self, cs, target):
        sl = lab.tail_slice(cs.n_values, self.cfg.extra.get("tail_fraction", 1 / 3))
        devs = [abs(e - target) for e in cs.estimates[sl]]
        return lab._decide(devs, cs.error_bounds[sl], self.cfg.tol)

    def run_corr(self):
        cfg = self.cfg
        cs = lab.correlate(self.map, self.F, self.g, cfg.n_values, cfg.method, seed=cfg.seed, samples=cfg.samples,
                           cache=self.cache, cache_key=("g", cfg.observables["g"]))
        target = cfg.extra.get("target")
        if target is None:
            avg = cfg.extra.get("avg", _default_avg(self.F))
            target = None if avg is None else avg * self.g.integral
        if target is None:
            verdict = "pass" if all(math.isfinite(b) for b in cs.error_bounds) else "inconclusive"
        else:
            verdict = self._verdict_vs_target(cs, target)
        return self.base(cs.method, cs.rows(), verdict, {"tol": cfg.tol},
                         {"target": target, "samples": cs.samples}), cs.rows(), cs.method

    def run_glm(self):
        cfg = self.cfg
        avg = cfg.extra.get("avg", _default_avg(self.F))
        if avg is None:
            raise ScenarioError("glm needs [run] avg for a non-periodic F")
        rep = lab.glm_verdict(self.map, self.F, self.gset, avg, cfg.n_values, cfg.tol, cfg.method, seed=cfg.seed,
                              samples=cfg.samples, tail_fraction=cfg.extra.get("tail_fraction", 1 / 3),
                              cache=self.cache)
        out = rep.to_json()
        return out, rep.series, rep.method

    def run_llm(self):
        cfg = self.cfg
        rep = lab.llm_verdict(self.map, self.f, self.g, cfg.n_values, cfg.tol, cfg.method, seed=cfg.seed,
                              samples=cfg.samples, tail_fraction=cfg.extra.get("tail_fraction", 1 / 3))
        out = rep.to_json()
        if self.map.jump_law is not None:
            law = self.map.jump_law
            mean = sum(j * p for j, p in law.items())
            var = sum((j - mean) ** 2 * p for j, p in law.items())
            last = rep.series[-1]
            out["details"]["local_clt"] = {"n": last["n"], "scaled": float(last["estimate"]) * math.sqrt(last["n"]),
                                           "constant": 1 / math.sqrt(2 * math.pi * float(var))}
        return out, rep.series, rep.method

    def run_ggm(self):
        cfg = self.cfg
        avg_f = cfg.extra.get("avg", _default_avg(self.F))
        avg_g = _default_avg(self.G)
        if avg_f is None or avg_g is None:
            raise ScenarioError("ggm needs periodic F and G (or [run] avg)")
        grid = lab.ggm_grid(self.map, self.F, self.G, self.family, cfg.n_values, avg_f, avg_g)
        devs = [d["deviation"] for d in grid.anti_diagonal if d["deviation"] is not None]
        errs = [d["error"] for d in grid.anti_diagonal if d["error"] is not None]
        if not devs:
            verdict = "inconclusive"
        elif max(errs) > cfg.tol / 2:
            verdict = "inconclusive"
        else:
            verdict = "pass" if grid.corner_deviation <= cfg.tol else "fail"
        series = [{"n": d["n"], "estimate": d["deviation"], "error_bound": d["error"], "M": d["M"]}
                  for d in grid.anti_diagonal if d["deviation"] is not None]
        return self.base("quadrature", series, verdict, {"tol": cfg.tol}, grid.to_json()), series, "quadrature"

    def run_coalescence(self):
        cfg = self.cfg
        co = lab.coalescence_test(self.map, self.F, self.g, self.h, cfg.n_values, cfg.method, seed=cfg.seed,
                                  samples=cfg.samples, cache=self.cache)
        sl = lab.tail_slice(co.n_values, cfg.extra.get("tail_fraction", 1 / 3))
        dominated = co.dominated()
        bounds_ok = co.bounds is None or lab.nonincreasing(co.bounds)
        tail = co.bounds[sl] if co.bounds is not None else co.deltas[sl]
        if dominated is False or not bounds_ok:
            verdict = "fail"
        elif max(co.error_bounds[sl]) > cfg.tol / 2:
            verdict = "inconclusive"
        else:
            verdict = "pass" if max(tail) <= cfg.tol else "fail"
        series = [{"n": n, "estimate": d, "error_bound": e, "bound": None if co.bounds is None else b}
                  for n, d, e, b in zip(co.n_values, co.deltas, co.error_bounds, co.bounds or co.deltas)]
        method = "exact" if co.exact else cfg.method
        return self.base(method, series, verdict, {"tol": cfg.tol},
                         {"dominated": dominated, "bound_nonincreasing": bounds_ok}), series, method

    def _rho_target(self):
        cfg = self.cfg
        if "target" in cfg.extra:
            return cfg.extra["target"], 0.0, "explicit"
        if UNIFORM_CESARO not in self.F.tags:
            return None, None, "none"
        jmax = cfg.extra.get("jmax", 1000)
        value, defect = cesaro_mean(self.F, [0, 10, -10, 100, -100, 1000, -1000], jmax)
        return value, defect, "cesaro"

    def run_rho(self):
        cfg = self.cfg

        def one(args):
            i, g = args
            return lab.estimate_rho(self.map, self.F, [g], cfg.n_values, cfg.extra.get("tail_fraction", 1 / 3),
                                    cfg.method, seed=None if cfg.seed is None else cfg.seed + i,
                                    samples=cfg.samples, cache=self.cache, return_series=True)

        parts = self.pmap(one, list(enumerate(self.gset)))
        tails = [p[0].per_density_tails[0] for p in parts]
        means = [t[1] for t in tails]
        import itertools
        defect = max((abs(a - b) for a, b in itertools.combinations(means, 2)), default=0.0)
        est = lab.EquilibriumEstimate(float(np.mean(means)), tails, float(defect),
                                      max(p[0].max_error for p in parts))
        target, target_defect, source = self._rho_target()
        ok = est.coalescence_defect <= cfg.tol and (target is None or abs(est.rho_hat - target) <= cfg.tol)
        verdict = "pass" if ok else "fail"
        if est.max_error > cfg.tol / 2:
            verdict = "inconclusive"
        series, method = [], None
        for gname, cs in (p[1][0] for p in parts):
            method = cs.method
            series.extend({"g": gname, **r} for r in cs.rows())
        details = {**est.to_json(), "target": target, "target_source": source, "cesaro_defect": target_defect}
        return self.base(method, series, verdict, {"tol": cfg.tol}, details), series, method

    def run_avg(self):
        cfg = self.cfg
        rep = vol.estimate_avg(self.F, self.family, cfg.tol)
        series = [{"n": M, "estimate": d, "error_bound": 0.0, "M": M} for M, d in zip(rep.scales, rep.defects)]
        verdict = {"converged": "converged", "not_uniform": "not_uniform"}.get(rep.verdict, "inconclusive")
        details = {**rep.to_json(), "family": self.family.to_json(), "members": rep.members}
        return self.base("quadrature", series, verdict, {"tol": cfg.tol}, details), series, "quadrature"

    def run_avol(self):
        cfg = self.cfg
        const = cfg.extra.get("constant", 10.0)
        reports = []
        series = []
        ok = True
        for n in cfg.n_values:
            s = vol.avol_check(self.map, self.family, n)
            ratios = [float(r) for r in s.ratios]
            within = all(r <= const / M for r, M in zip(ratios, s.scales))
            down = n == 0 or all(b < a for a, b in zip(ratios, ratios[1:]))
            ok = ok and within and down
            pres = all(abs(float(m) - 2 * M) <= 1e-9 * 2 * M for m, M in zip(s.pullback_measures, s.scales))
            reports.append({"n": n, "scales": s.scales, "ratios": ratios, "within_constant": within,
                            "decreasing": down, "measure_preserved": pres, "csv": s.to_csv()})
            series.extend({"n": n, "estimate": r, "error_bound": 0.0, "M": M} for M, r in zip(s.scales, ratios))
        method = "exact" if self.map.is_affine else "interval"
        return self.base(method, series, "pass" if ok else "fail", {"constant": const},
                         {"per_n": reports}), series, method

    def run_lin(self):
        cfg = self.cfg
        engine = TransferEngine(self.map, exact_limit=cfg.extra.get("exact_limit", 300))
        g = self.g.lattice if (self.g.lattice is not None and engine.mode == EXACT_LATTICE) else self.g
        vals = engine.lin_norm(g, cfg.n_values, cache=self.cache, key=("g", cfg.observables["g"]))
        series = [{"n": n, "estimate": v.value, "error_bound": v.error_bound} for n, v in zip(cfg.n_values, vals)]
        mono = lab.nonincreasing([v.value for v in vals])
        last = vals[-1]
        if not mono:
            verdict = "fail"
        elif last.error_bound > cfg.tol / 2:
            verdict = "inconclusive"
        else:
            verdict = "pass" if last.value <= cfg.tol else "fail"
        method = "exact" if engine.mode == EXACT_LATTICE else "quadrature"
        return self.base(method, series, verdict, {"tol": cfg.tol}, {"nonincreasing": mono}), series, method

    def run_pf1(self):
        cfg = self.cfg
        points = cfg.extra.get("points", 10_000)
        # quasi-random points on [-50, 50] (golden-ratio sequence)
        y = -50 + 100 * np.mod(0.5 + np.arange(points) * (math.sqrt(5) - 1) / 2, 1.0)
        series, worst = [], 0.0
        for i, tmap in enumerate(self.maps):
            dev = float(np.max(np.abs(tmap.weight_sums(y) - 1.0)))
            worst = max(worst, dev)
            series.append({"n": i, "estimate": dev, "error_bound": 0.0, "map": tmap.name})
        tol = cfg.tol
        return self.base("exact", series, "pass" if worst <= tol else "fail", {"tol": tol},
                         {"points": points, "max_deviation": worst}), series, "exact"

    def run_ladder(self):
        cfg = self.cfg
        engine = TransferEngine(self.map, EXACT_LATTICE)
        n = cfg.n_values[-1]
        exact = engine.apply_lattice(self.g.lattice, n)
        series, verdict_ok = [], True
        mc = None
        if cfg.seed is not None:
            mc = {}
            for j in exact.cells:
                cell = resolve_local(f"cell:{j}").as_global()
                cs = lab.correlate(self.map, cell, self.g, [n], lab.MONTECARLO, seed=cfg.seed, samples=cfg.samples)
                mc[j] = (cs.estimates[0], cs.error_bounds[0])
        for j, mass in exact.as_dict().items():
            row = {"n": n, "cell": j, "exact": f"{mass.numerator}/{mass.denominator}", "estimate": float(mass),
                   "error_bound": 0.0}
            if mc is not None:
                row["montecarlo"], row["montecarlo_error"] = mc[j]
                row["agrees"] = abs(mc[j][0] - float(mass)) <= mc[j][1]
                verdict_ok = verdict_ok and row["agrees"]
            series.append(row)
        details = {"lattice": exact.to_json(), "total": str(exact.total())}
        return self.base("exact", series, "pass" if verdict_ok else "fail", {"mc_sigma": 3}, details), series, "exact"

    def run_duality(self):
        cfg = self.cfg
        cases = cfg.extra.get("cases", 20)
        seed = 0 if cfg.seed is None else cfg.seed
        triples = duality_cases(cases, seed, n_max=cfg.n_values[-1] if cfg.n_values else 40)

        def one(args):
            i, (F, g, n) = args
            ex = lab.correlate(self.map, F, g, [n], lab.EXACT)
            mc = lab.correlate(self.map, F, g, [n], lab.MONTECARLO, seed=seed + 1000 + i, samples=cfg.samples)
            diff = abs(ex.estimates[0] - mc.estimates[0])
            return {"n": n, "F": F.name, "g": g.name, "estimate": mc.estimates[0], "exact": ex.estimates[0],
                    "error_bound": mc.error_bounds[0] + ex.error_bounds[0],
                    "agrees": diff <= mc.error_bounds[0] + ex.error_bounds[0]}

        series = self.pmap(one, list(enumerate(triples)))
        agree = sum(r["agrees"] for r in series)
        need = math.ceil(0.95 * cases)
        verdict = "pass" if agree >= need else "fail"
        return self.base("exact+montecarlo", series, verdict, {"sigma": 3, "required": need},
                         {"agreements": agree, "cases": cases}), series, "exact+montecarlo"


def duality_cases(count, seed, n_max=40):
    """Random admissible ``(F, g, n)`` triples for the two-route comparison on a random-walk map.

    ``F`` is lattice-step with finitely many random cells and a constant tail;
    ``g`` is a random nonnegative lattice density.
    """
    from .observables import GlobalObservable, LATTICE_STEP, LatticeMeasure, lattice_density

    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        lo = int(rng.integers(-12, 1))
        vals = [Fraction(int(v), 4) for v in rng.integers(-4, 5, size=int(rng.integers(3, 25)))]
        tail = Fraction(int(rng.integers(-4, 5)), 4)
        table = dict(zip(range(lo, lo + len(vals)), vals))
        arr_lo, arr = lo, np.array([float(v) for v in vals])

        def cell(j, table=table, tail=tail):
            return table.get(j, tail)

        def func(x, arr=arr, arr_lo=arr_lo, tail=float(tail)):
            idx = np.floor(x).astype(np.int64) - arr_lo
            ok = (idx >= 0) & (idx < arr.size)
            out_ = np.full(np.shape(x), tail)
            out_[ok] = arr[idx[ok]]
            return out_

        bound = float(max(max(abs(v) for v in vals), abs(tail)))
        F = GlobalObservable(func=func, bound=bound, tags=frozenset({LATTICE_STEP}), name=f"cells#{i}",
                             breaks=(("periodic", 1, (0.0,)),), cell_value=cell, piecewise_constant=True)
        g_off = int(rng.integers(-6, 7))
        masses = [int(m) for m in rng.integers(0, 4, size=int(rng.integers(1, 5)))]
        if not any(masses):
            masses[0] = 1
        g = lattice_density(LatticeMeasure(g_off, tuple(masses), sum(masses)), name=f"lattice#{i}")
        n = int(rng.integers(0, n_max + 1))
        out.append((F, g, n))
    return out


def run_scenario(cfg: ScenarioConfig, out_dir=None, threads=1, use_cache=True, cache_dir=None) -> RunArtifact:
    """Execute a parsed scenario and write ``<name>.artifact.json`` and ``<name>.series.csv``."""
    cache = LadderCache(cache_dir, enabled=use_cache)
    started = time.time()
    csv_text = ""
    try:
        runner = _Runner(cfg, cache, threads)
        results, rows, method = runner.run()
        verdict = results["verdict"]
        expect = cfg.extra.get("expect")
        if expect is not None:
            code = 0 if verdict == expect else 2
            results["expected_verdict"] = expect
        else:
            code = VERDICT_EXIT[verdict]
        status = verdict
        csv_text = _series_csv([r for r in rows if r.get("estimate") is not None], method)
    except (InfinimixError, ValueError, ArithmeticError) as exc:
        log.error("scenario %s failed: %s", cfg.name, exc)
        results = {"experiment": cfg.experiment, "error": f"{type(exc).__name__}: {exc}", "verdict": "error"}
        status, code = "error", 1
    art = RunArtifact(config=cfg.normal_form(), library_version=__version__, started=started, finished=time.time(),
                      status=status, exit_code=code, cache_hits=cache.hits, results=results, csv=csv_text)
    target = Path(out_dir if out_dir is not None else (cfg.output or "."))
    target.mkdir(parents=True, exist_ok=True)
    (target / f"{cfg.name}.artifact.json").write_text(json.dumps(art.to_json(), sort_keys=True, indent=1) + "\n")
    (target / f"{cfg.name}.series.csv").write_text(csv_text)
    return art
