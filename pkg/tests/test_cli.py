import json

import pytest

from infinimix.cli import main, render_report
from infinimix.errors import ScenarioError, UnresolvedId
from infinimix.scenario import bundled_scenarios, load_scenario, parse_n_list, parse_scenario, run_scenario

GOOD = """\
[map]
id = rw:-1:2

[observables]
F = halfcell:1
gset = cell:0, cell:3

[run]
experiment = glm
n = 0..60:5
avg = 0.5
tolerance = 0.02
"""


@pytest.fixture
def scenario_file(tmp_path):
    p = tmp_path / "good.ini"
    p.write_text(GOOD)
    return p


@pytest.fixture(autouse=True)
def private_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("INFINIMIX_CACHE_DIR", str(tmp_path / "cache"))


@pytest.mark.parametrize("text,expected", [
    ("0..4", [0, 1, 2, 3, 4]),
    ("0..10:4", [0, 4, 8, 10]),
    ("1, 2, 5", [1, 2, 5]),
    ("7", [7]),
])
def test_parse_n_list(text, expected):
    assert parse_n_list(text) == expected


@pytest.mark.parametrize("text", ["", "3, 2", "-1..3", "a..b"])
def test_parse_n_list_rejects(text):
    with pytest.raises(ValueError):
        parse_n_list(text)


def test_parse_good_scenario():
    cfg = parse_scenario(GOOD, "good")
    assert cfg.experiment == "glm"
    assert cfg.n_values[-1] == 60
    assert cfg.tol == 0.02


def test_misspelled_key_suggests_fix():
    text = GOOD.replace("tolerance = 0.02", "tolrance = 0.02")
    with pytest.raises(ScenarioError) as info:
        parse_scenario(text)
    assert "did you mean 'tolerance'" in str(info.value)
    assert info.value.line == text.splitlines().index("tolrance = 0.02") + 1
    assert info.value.column is not None


def test_unknown_section():
    with pytest.raises(ScenarioError, match="did you mean"):
        parse_scenario(GOOD.replace("[run]", "[runn]"))


def test_non_expanding_map_is_reported():
    with pytest.raises(ScenarioError, match="rw:0:1"):
        parse_scenario(GOOD.replace("rw:-1:2", "rw:0:1"))


def test_unknown_observable_suggests_ids():
    with pytest.raises(UnresolvedId) as info:
        parse_scenario(GOOD.replace("halfcell:1", "halfcel:1"))
    assert any(s.startswith("halfcell") for s in info.value.suggestions)


def test_duplicate_key():
    with pytest.raises(ScenarioError, match="duplicate"):
        parse_scenario(GOOD.replace("tolerance = 0.02", "tolerance = 0.02\ntolerance = 0.03"))


def test_tolerance_and_short_form_conflict():
    with pytest.raises(ScenarioError, match="not both"):
        parse_scenario(GOOD.replace("tolerance = 0.02", "tolerance = 0.02\ntol = 0.03"))
    assert parse_scenario(GOOD.replace("tolerance = 0.02", "tol = 0.03")).tol == 0.03


def test_minimal_corr_scenario():
    text = """[map]
id = rw:-1:2
[observables]
F = halfcell:1
g = indicator:0:1
[run]
experiment = corr
n = 0..40
method = exact
"""
    cfg = parse_scenario(text)
    assert len(cfg.n_values) == 41 and cfg.method == "exact"


@pytest.mark.parametrize("bad,match", [("tolerance = 0.02", "tolerance = -1"), ("n = 0..60:5", "n = 5..1")])
def test_invalid_values(bad, match):
    with pytest.raises(ScenarioError):
        parse_scenario(GOOD.replace(bad, match))


def test_bundled_scenarios_all_parse():
    names = bundled_scenarios()
    assert len([n for n in names if n.startswith("ac-")]) >= 11
    for name in names:
        load_scenario(name)


def test_payload_is_deterministic(tmp_path, scenario_file):
    cfg = load_scenario(scenario_file)
    a = run_scenario(cfg, out_dir=tmp_path / "a", threads=1, use_cache=False)
    b = run_scenario(cfg, out_dir=tmp_path / "b", threads=3, use_cache=False)
    assert a.payload_bytes() == b.payload_bytes()
    assert (tmp_path / "a" / "good.series.csv").read_text() == (tmp_path / "b" / "good.series.csv").read_text()


def test_montecarlo_payload_is_deterministic(tmp_path):
    text = GOOD.replace("gset = cell:0, cell:3", "gset = gauss:0.3:0.2").replace(
        "tolerance = 0.02", "tolerance = 0.05\nmethod = montecarlo\nseed = 4\nsamples = 20000").replace("0..60:5", "0..6")
    cfg = parse_scenario(text, "mc")
    a = run_scenario(cfg, out_dir=tmp_path / "a", use_cache=False)
    b = run_scenario(cfg, out_dir=tmp_path / "b", threads=2, use_cache=False)
    assert a.payload_bytes() == b.payload_bytes()


def test_run_exit_code_and_report(tmp_path, scenario_file, capsys):
    out = tmp_path / "out"
    assert main(["run", str(scenario_file), "--out", str(out)]) == 0
    art = json.loads((out / "good.artifact.json").read_text())
    assert art["status"] == "pass" and art["exit_code"] == 0
    assert main(["report", str(out / "good.artifact.json")]) == 0
    printed = capsys.readouterr().out
    assert "verdict    : pass" in printed
    assert "glm" in render_report(art)


def test_failing_verdict_exits_two(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text(GOOD.replace("avg = 0.5", "avg = 0.2"))
    assert main(["run", str(p), "--out", str(tmp_path)]) == 2


def test_inconclusive_exits_three(tmp_path):
    p = tmp_path / "loose.ini"
    p.write_text(GOOD.replace("gset = cell:0, cell:3", "gset = gauss:0.3:0.2").replace(
        "tolerance = 0.02", "tolerance = 0.002\nmethod = montecarlo\nseed = 1\nsamples = 1000").replace("0..60:5", "0..6"))
    assert main(["run", str(p), "--out", str(tmp_path)]) == 3


def test_parse_error_exits_one(tmp_path, capsys):
    p = tmp_path / "broken.ini"
    p.write_text(GOOD.replace("tolerance = 0.02", "tolrance = 0.02"))
    assert main(["run", str(p), "--out", str(tmp_path)]) == 1
    assert "line" in capsys.readouterr().err


def test_expected_not_uniform_exits_zero(tmp_path):
    assert main(["run", "ac-09b-avg-sign", "--out", str(tmp_path)]) == 0


def test_list_commands(capsys):
    for what in ("maps", "observables", "scenarios"):
        assert main(["list", what]) == 0
    out = capsys.readouterr().out
    assert "rw:<k1>:<k2>" in out and "ac-01-pf1" in out


def test_cache_hits_reported_on_second_run(tmp_path):
    text = """[map]
id = rw:-1:2

[observables]
g = dipole:0:1

[run]
experiment = lin
n = 0..400:50
tolerance = 0.2
"""
    cfg = parse_scenario(text, "lin")
    run_scenario(cfg, out_dir=tmp_path)
    second = run_scenario(cfg, out_dir=tmp_path)
    assert second.cache_hits >= 1
    assert second.status == "pass"


def test_bundled_boole_sign(tmp_path):
    art = run_scenario(load_scenario("boole-sign"), out_dir=tmp_path)
    assert art.status == "pass"
    assert abs(art.results["details"]["rho_hat"]) <= art.results["tolerances"]["tol"]


def test_bundled_rw_lin(tmp_path):
    art = run_scenario(load_scenario("rw-lin"), out_dir=tmp_path)
    assert art.status == "pass"
    series = art.results["series"]
    assert series[1]["estimate"] == pytest.approx(2 / 3, abs=1e-15)
    assert all(b["estimate"] <= a["estimate"] for a, b in zip(series, series[1:]))
    header = (tmp_path / "rw-lin.series.csv").read_text().splitlines()[0]
    assert header == "n,estimate,error_bound,method"


def test_unknown_map_id_is_located():
    with pytest.raises(UnresolvedId) as info:
        parse_scenario(GOOD.replace("rw:-1:2", "bool"))
    assert info.value.line == 2 and "boole" in info.value.suggestions
