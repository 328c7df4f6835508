import gzip

import pytest

from infinimix.cache import LadderCache
from infinimix.maps import make_random_walk_map
from infinimix.observables import FloatLatticeMeasure, LatticeMeasure, make_dipole
from infinimix.transfer import EXACT_LATTICE, TransferEngine

KEY = ("dipole:0:1",)


def _engine():
    return TransferEngine(make_random_walk_map(-1, 2), EXACT_LATTICE)


def test_roundtrip_and_hit(tmp_path):
    cache = LadderCache(tmp_path)
    g = make_dipole(0, 1).lattice
    first = _engine().ladder(g, 400, cache=cache, key=KEY)
    assert cache.misses == 1
    again = LadderCache(tmp_path)
    second = _engine().ladder(g, 350, cache=again, key=KEY)
    assert again.hits == 1
    assert second[300] == first[300]
    assert isinstance(second[300], LatticeMeasure)
    assert isinstance(second[350], FloatLatticeMeasure)
    assert (second[350].masses == first[350].masses).all()
    assert second[350].error_bound == first[350].error_bound


def test_extension_reuses_prefix(tmp_path):
    g = make_dipole(0, 1).lattice
    _engine().ladder(g, 100, cache=LadderCache(tmp_path), key=KEY)
    cache = LadderCache(tmp_path)
    longer = _engine().ladder(g, 120, cache=cache, key=KEY)
    assert cache.hits == 1 and len(longer) == 121
    assert LadderCache(tmp_path).load(("rw:-1:2", "exact<=300") + KEY).__len__() == 121


def test_corrupt_file_is_rebuilt(tmp_path):
    g = make_dipole(0, 1).lattice
    cache = LadderCache(tmp_path)
    ref = _engine().ladder(g, 50, cache=cache, key=KEY)
    path = cache.path(("rw:-1:2", "exact<=300") + KEY)
    text = gzip.open(path, "rt").read().replace("E 7 ", "E 7 9", 1)
    with gzip.open(path, "wt") as fh:
        fh.write(text)
    fresh = LadderCache(tmp_path)
    rebuilt = _engine().ladder(g, 50, cache=fresh, key=KEY)
    assert fresh.rebuilds == 1 and fresh.hits == 0
    assert rebuilt == ref


def test_truncated_file_is_rebuilt(tmp_path):
    cache = LadderCache(tmp_path)
    key = ("x",)
    cache.store(key, [LatticeMeasure.from_masses({0: 1})])
    cache.path(key).write_bytes(b"\x1f\x8b garbage")
    assert cache.load(key) is None and cache.rebuilds == 1


def test_disabled_cache_writes_nothing(tmp_path):
    cache = LadderCache(tmp_path, enabled=False)
    _engine().ladder(make_dipole(0, 1).lattice, 10, cache=cache, key=KEY)
    assert list(tmp_path.iterdir()) == []


def test_env_directory(tmp_path, monkeypatch):
    monkeypatch.setenv("INFINIMIX_CACHE_DIR", str(tmp_path / "c"))
    assert LadderCache().directory == tmp_path / "c"


@pytest.mark.parametrize("key", [("a",), ("a", 1), ("b", "exact<=300")])
def test_keys_map_to_distinct_files(tmp_path, key):
    cache = LadderCache(tmp_path)
    assert cache.path(key) != cache.path(key + ("z",))


def test_thousand_step_ladder_serves_shorter_and_longer_requests(tmp_path):
    g = make_dipole(0, 1).lattice
    full = _engine().ladder(g, 1000, cache=LadderCache(tmp_path), key=KEY)
    short_cache = LadderCache(tmp_path)
    short = _engine().ladder(g, 500, cache=short_cache, key=KEY)
    assert short_cache.hits == 1 and len(short) == 501
    assert (short[500].masses == full[500].masses).all()
    long_cache = LadderCache(tmp_path)
    longer = _engine().ladder(g, 1200, cache=long_cache, key=KEY)
    assert long_cache.hits == 1 and len(longer) == 1201
    assert longer[1200].error_bound >= longer[1000].error_bound
