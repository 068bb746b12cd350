import json
import math

import pytest

from coulomb_gibbs import cli


@pytest.fixture(autouse=True)
def isolated_cache(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.CACHE_ENV, str(tmp_path / "cache"))
    return tmp_path / "cache"


def _config(tmp_path, **sections):
    cfg = {"schema_version": 1, "seed": 3,
           "model": {"n": 2, "d": 1, "M": 4, "beta": 1.0, "couplings": {"uniform": 0.2}}}
    cfg.update(sections)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def _run(tmp_path, command, *extra, out="out", config=True, **sections):
    argv = [*command.split(), "--out", str(tmp_path / out)]
    if config:
        argv += ["--config", str(_config(tmp_path, **sections))]
    return cli.main(argv + list(extra)), tmp_path / out


def test_gibbs_free_oscillator_value(tmp_path):
    code, out = _run(tmp_path, "gibbs", "--set", 'model.couplings={"uniform": 0.0}',
                     "--set", "model.n=1", "--set", "model.d=2")
    assert code == 0
    F = json.loads((out / "gibbs.json").read_text())["F"]
    assert F == pytest.approx(2 * math.log(2 * math.sinh(1.0)), abs=1e-12)
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["model"]["n"] == 1 and len(report["config_hash"]) == 64
    assert all(c["passed"] for c in report["checks"])


@pytest.mark.parametrize("command,files", [
    ("basis", ["basis.csv"]),
    ("matelems", ["matelems.csv", "matelems.json"]),
    ("generator", ["generator.json"]),
    ("gap", ["gap.json", "spectrum.csv"]),
    ("evolve", ["evolve.csv", "evolve.json"]),
    ("thermo", ["thermo.json", "thermo_nodes.csv"]),
])
def test_subcommands_write_artifacts(tmp_path, command, files):
    code, out = _run(tmp_path, command, plan={"L": 8}, evolve={"epsilon": 0.05, "initial": "vacuum"})
    assert code == 0
    for f in files + ["report.json"]:
        assert (out / f).stat().st_size > 0


def test_sweeps_and_estimate(tmp_path):
    code, out = _run(tmp_path, "sweep-truncation", sweep_truncation={"M_list": [2, 3, 4], "M_ref": 6})
    assert code == 0
    header = (out / "sweep_truncation.csv").read_text().splitlines()[0]
    assert header.startswith("M,dim,F_M,free_energy_error")
    code, out = _run(tmp_path, "sweep-gap", out="gap",
                     sweep_gap={"n_list": [1, 2], "M_list": [3], "alpha_list": [0.05], "coupling": "weak"},
                     filter={"sigma_E": 1.0})
    assert code == 0 and json.loads((out / "sweep_gap.json").read_text())["uniform_gap"]
    code, out = _run(tmp_path, "estimate", out="est", estimate={"epsilon": 0.05, "delta": 0.1, "M_ref": 8})
    assert code == 0
    assert json.loads((out / "estimate.json").read_text())["mode"] == "estimate"


def test_same_seed_gives_identical_bytes(tmp_path):
    plan = {"L": 4, "S": 50, "delta": 0.1}
    _run(tmp_path, "thermo", out="a", plan=plan)
    _run(tmp_path, "thermo", out="b", plan=plan)
    _, c = _run(tmp_path, "thermo", "--seed", "99", out="c", plan=plan)
    a, b = (tmp_path / "a" / "thermo_nodes.csv").read_bytes(), (tmp_path / "b" / "thermo_nodes.csv").read_bytes()
    assert a == b
    assert (c / "thermo_nodes.csv").read_bytes() != a


def test_verify_default_suite(tmp_path):
    code, out = _run(tmp_path, "verify", config=False)
    assert code == 0
    rows = (out / "verify.csv").read_text().splitlines()
    assert rows[0] == "check,case,value,threshold,passed,note"
    assert len(rows) - 1 >= 40


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_invalid_value_reports_pointer(tmp_path, capsys):
    code, out = _run(tmp_path, "gibbs", "--set", "model.beta=-1")
    assert code == 2
    err = _error(capsys)
    assert err["pointer"] == "/model/beta" and err["error"] == "config"
    assert json.loads((out / "error.json").read_text())["exit_code"] == 2


def test_unknown_key_is_rejected(tmp_path, capsys):
    code, _ = _run(tmp_path, "gibbs", "--set", "model.spin=1")
    assert code == 2 and "spin" in _error(capsys)["message"]


def test_missing_section_and_config(tmp_path):
    assert _run(tmp_path, "thermo")[0] == 2
    assert _run(tmp_path, "gibbs", config=False)[0] == 2


def test_dimension_guard_exit_code(tmp_path, capsys):
    code, _ = _run(tmp_path, "basis", "--set", "model.n=4", "--set", "model.M=20")
    assert code == 3 and _error(capsys)["error"] == "dimension-guard"
    code, _ = _run(tmp_path, "basis", "--set", "model.n=4", "--set", "model.M=20", "--guard-override", out="ok")
    assert code == 0


def test_cache_lifecycle(tmp_path, isolated_cache, capsys):
    assert _run(tmp_path, "cache build")[0] == 0
    assert json.loads(capsys.readouterr().out)["status"] == "built"
    assert _run(tmp_path, "cache build")[0] == 0
    assert json.loads(capsys.readouterr().out)["status"] == "present"
    _run(tmp_path, "cache list")
    assert len(json.loads(capsys.readouterr().out)["entries"]) == 1
    _run(tmp_path, "cache evict")
    assert json.loads(capsys.readouterr().out)["status"] == "evicted"
    assert _run(tmp_path, "cache inspect")[0] == 2


def test_rebuilt_entry_has_identical_checksum(tmp_path, capsys):
    _run(tmp_path, "cache build")
    first = json.loads(capsys.readouterr().out)["header"]["checksum"]
    _run(tmp_path, "cache evict")
    capsys.readouterr()
    _run(tmp_path, "cache build")
    again = json.loads(capsys.readouterr().out)
    assert again["status"] == "built" and again["header"]["checksum"] == first


def test_quadrature_change_gives_new_entry(tmp_path, isolated_cache, capsys):
    _run(tmp_path, "cache build")
    capsys.readouterr()
    _run(tmp_path, "cache build", "--set", "quadrature.radial_nodes=201")
    assert json.loads(capsys.readouterr().out)["status"] == "built"
    assert len(list(isolated_cache.glob("table_*.bin"))) == 2


def test_thermo_sampler_state_source(tmp_path):
    code, out = _run(tmp_path, "thermo", plan={"L": 4, "S": 20000, "state_source": "sampler"},
                     filter={"sigma_E": 1.0})
    assert code == 0
    rep = json.loads((out / "thermo.json").read_text())
    assert rep["details"]["state_source"] == "sampler"
    assert rep["details"]["sampler_max_trace_distance"] < 1e-3
    assert abs(rep["Delta_F_hat"] - rep["details"]["exact_riemann_sum"]) < rep["details"]["hoeffding_half_width"]


def test_sampler_state_source_needs_shots(tmp_path):
    assert _run(tmp_path, "thermo", plan={"L": 4, "state_source": "sampler"})[0] == 2


def test_corrupt_cache_entry_needs_force(tmp_path, isolated_cache, capsys):
    _run(tmp_path, "cache build")
    entry = next(isolated_cache.glob("table_*.bin"))
    data = bytearray(entry.read_bytes())
    data[-1] ^= 0xFF
    entry.write_bytes(bytes(data))
    assert _run(tmp_path, "cache build")[0] == 4
    assert _run(tmp_path, "cache build", "--force")[0] == 0


def test_override_parsing():
    cfg = cli.apply_overrides({"a": {"b": 1}}, ["a.b=[1, 2]", "a.c=\"x\"", "d=true"])
    assert cfg == {"a": {"b": [1, 2], "c": "x"}, "d": True}
    with pytest.raises(cli.ConfigError):
        cli.apply_overrides({}, ["novalue"])
