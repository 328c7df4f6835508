"""On-disk cache of lattice ladders ``P^0 g, P^1 g, ...``.

One gzip text file per (map id, density id, arithmetic mode).  Exact entries
store decimal numerators over a common denominator, float entries store
``repr`` of each mass plus the tracked error bound.  The last line holds a
SHA-256 checksum of everything before it; a mismatch triggers a rebuild.
"""
from __future__ import annotations

import gzip
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .observables import FloatLatticeMeasure, LatticeMeasure

log = logging.getLogger(__name__)
FORMAT_VERSION = 1

# cached ladders hold numerators with thousands of digits
if hasattr(sys, "set_int_max_str_digits"):
    sys.set_int_max_str_digits(0)


def default_cache_dir() -> Path:
    env = os.environ.get("INFINIMIX_CACHE_DIR")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "infinimix"


class LadderCache:
    def __init__(self, directory=None, enabled=True):
        self.directory = Path(directory) if directory is not None else default_cache_dir()
        self.enabled = enabled
        self.hits = 0
        self.misses = 0
        self.rebuilds = 0

    def path(self, key) -> Path:
        digest = hashlib.sha256(json.dumps(list(key), default=str).encode()).hexdigest()[:24]
        return self.directory / f"ladder-{digest}.txt.gz"

    def load(self, key):
        if not self.enabled or key is None:
            return None
        path = self.path(key)
        if not path.exists():
            self.misses += 1
            return None
        try:
            with gzip.open(path, "rt", encoding="ascii") as fh:
                text = fh.read()
            body, _, tail = text.rpartition("sha256 ")
            if hashlib.sha256(body.encode()).hexdigest() != tail.strip():
                raise ValueError("checksum mismatch")
            lines = body.splitlines()
            header = json.loads(lines[0])
            if header.get("version") != FORMAT_VERSION or header.get("key") != json.loads(
                    json.dumps(list(key), default=str)):
                raise ValueError("header mismatch")
            ladder = [_parse_entry(line) for line in lines[1:]]
            if [n for n, _ in ladder] != list(range(len(ladder))):
                raise ValueError("ladder entries out of order")
        except (OSError, ValueError, EOFError, IndexError, KeyError) as exc:
            log.warning("rebuilding corrupt ladder cache %s: %s", path, exc)
            self.rebuilds += 1
            path.unlink(missing_ok=True)
            return None
        self.hits += 1
        return [m for _, m in ladder]

    def store(self, key, ladder):
        if not self.enabled or key is None:
            return
        self.directory.mkdir(parents=True, exist_ok=True)
        lines = [json.dumps({"version": FORMAT_VERSION, "key": list(key)}, default=str)]
        lines += [_format_entry(n, m) for n, m in enumerate(ladder)]
        body = "\n".join(lines) + "\n"
        text = body + "sha256 " + hashlib.sha256(body.encode()).hexdigest() + "\n"
        path = self.path(key)
        tmp = path.with_suffix(".tmp")
        with gzip.open(tmp, "wt", encoding="ascii", compresslevel=1) as fh:
            fh.write(text)
        os.replace(tmp, path)


def _format_entry(n, m):
    if isinstance(m, LatticeMeasure):
        return " ".join(["E", str(n), str(m.offset), str(m.denominator)] + [str(a) for a in m.numerators])
    return " ".join(["F", str(n), str(m.offset), repr(float(m.error_bound))] + [repr(float(x)) for x in m.masses])


def _parse_entry(line):
    parts = line.split()
    tag, n, offset = parts[0], int(parts[1]), int(parts[2])
    if tag == "E":
        return n, LatticeMeasure(offset, tuple(int(a) for a in parts[4:]), int(parts[3]))
    if tag == "F":
        return n, FloatLatticeMeasure(offset, np.array([float(x) for x in parts[4:]]), float(parts[3]))
    raise ValueError(f"unknown ladder entry tag {tag!r}")
