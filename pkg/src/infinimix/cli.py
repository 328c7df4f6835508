"""Command line entry point: ``infinimix run|list|report``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import InfinimixError
from .registry import GLOBAL_IDS, LOCAL_IDS, MAP_IDS
from .scenario import BUNDLED_DIR, bundled_scenarios, load_scenario, run_scenario

log = logging.getLogger("infinimix")


def _cmd_run(args):
    codes = []
    for item in args.scenarios:
        try:
            cfg = load_scenario(item)
        except (InfinimixError, OSError) as exc:
            print(f"{item}: {exc}", file=sys.stderr)
            codes.append(1)
            continue
        art = run_scenario(cfg, out_dir=args.out, threads=args.threads, use_cache=not args.no_cache)
        out = Path(args.out if args.out is not None else (cfg.output or "."))
        print(f"{cfg.name}: {art.status} (exit {art.exit_code}) -> {out / (cfg.name + '.artifact.json')}")
        if art.status == "error":
            print(f"  {art.results.get('error')}", file=sys.stderr)
        codes.append(art.exit_code)
    for code in (1, 2, 3):
        if code in codes:
            return code
    return 0


def _cmd_list(args):
    if args.what == "maps":
        table = MAP_IDS
    elif args.what == "observables":
        table = {**{f"{k}  (global)": v for k, v in GLOBAL_IDS.items()},
                 **{f"{k}  (local)": v for k, v in LOCAL_IDS.items()}}
    else:
        table = {}
        for name in bundled_scenarios():
            first = (BUNDLED_DIR / f"{name}.ini").read_text().splitlines()[0]
            table[name] = first.lstrip("#; ").strip()
    width = max(len(k) for k in table) if table else 0
    for k, v in table.items():
        print(f"{k:<{width}}  {v}")
    return 0


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def render_report(art: dict, max_rows=25) -> str:
    res = art.get("results", {})
    lines = [f"experiment : {res.get('experiment')}",
             f"map        : {res.get('map')}",
             f"method     : {res.get('method')}",
             f"seed       : {res.get('seed')}",
             f"verdict    : {res.get('verdict')}  (exit {art.get('exit_code')})",
             f"version    : {art.get('library_version')}   cache hits: {art.get('cache_hits')}"]
    if "error" in res:
        lines.append(f"error      : {res['error']}")
    series = res.get("series") or []
    if series:
        cols = [c for c in ("g", "M", "cell", "n", "estimate", "error_bound", "bound", "exact") if c in series[0]]
        rows = [[_fmt(r.get(c)) for c in cols] for r in series]
        if len(rows) > max_rows:
            keep = max_rows // 2
            rows = rows[:keep] + [["..."] * len(cols)] + rows[-keep:]
        widths = [max(len(c), *(len(r[i]) for r in rows)) for i, c in enumerate(cols)]
        lines.append("")
        lines.append("  ".join(c.rjust(w) for c, w in zip(cols, widths)))
        lines.append("  ".join("-" * w for w in widths))
        lines.extend("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in rows)
    return "\n".join(lines)


def _cmd_report(args):
    try:
        art = json.loads(Path(args.artifact).read_text())
    except (OSError, ValueError) as exc:
        print(f"{args.artifact}: {exc}", file=sys.stderr)
        return 1
    print(render_report(art))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="infinimix", description="Mixing experiments for infinite-measure maps.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run scenario files (or bundled scenario names)")
    r.add_argument("scenarios", nargs="+")
    r.add_argument("--out", default=None, help="output directory")
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--no-cache", action="store_true")
    r.set_defaults(func=_cmd_run)
    ls = sub.add_parser("list", help="list registered ids or bundled scenarios")
    ls.add_argument("what", choices=("maps", "observables", "scenarios"))
    ls.set_defaults(func=_cmd_list)
    rep = sub.add_parser("report", help="summarise an artifact file")
    rep.add_argument("artifact")
    rep.set_defaults(func=_cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
