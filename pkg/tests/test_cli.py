import hashlib
import json
import subprocess
import sys
from pathlib import Path

import pytest

from poisson_stein import cli
from poisson_stein.functionals import base as fbase
from poisson_stein.functionals.base import Family, constant_functional, register
from poisson_stein.point_process import IntensityModel, Window

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
NAMES = {"first_chaos", "knn", "voronoi2d", "shot_noise"}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _minimal():
    return json.loads((CONFIGS / "rescaled_poisson_minimal.json").read_text())


def _digests(d: Path):
    return {p.name: hashlib.md5(p.read_bytes()).hexdigest() for p in sorted(d.iterdir())}


def test_minimal_config_writes_one_csv(tmp_path, capsys):
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(CONFIGS / "rescaled_poisson_minimal.json"), "--out", str(out)]) == 0
    files = sorted(p.name for p in out.iterdir())
    assert files == ["first_chaos_100_1.csv"]
    text = (out / files[0]).read_text()
    assert "# config_sha256=" in text and "# seed=1" in text
    assert "d_K" in capsys.readouterr().out.splitlines()[0]


def test_rerun_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cfg = str(CONFIGS / "rescaled_poisson_minimal.json")
    cli.main(["run", "--config", cfg, "--out", str(a)])
    cli.main(["run", "--config", cfg, "--out", str(b), "--threads", "3"])
    assert _digests(a) == _digests(b)


def test_seed_override_changes_output(tmp_path):
    cfg = str(CONFIGS / "rescaled_poisson_minimal.json")
    cli.main(["run", "--config", cfg, "--out", str(tmp_path), "--seed", "9"])
    assert (tmp_path / "first_chaos_100_9.csv").exists()


def _small_acceptance():
    cfg = json.loads((CONFIGS / "rescaled_poisson_acceptance.json").read_text())
    cfg["model"]["t"] = [100]
    cfg["mc"].update(n_outer=100, n_eta=10, n_reps=1000, n_boot=30)
    cfg["output"]["formats"] = ["json"]
    return cfg


def test_check_passes(tmp_path, capsys):
    path = _write(tmp_path, _small_acceptance())
    assert cli.main(["run", "--config", path, "--check", "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_check_fails_on_corrupted_coefficient(tmp_path, capsys):
    cfg = _small_acceptance()
    for c in cfg["checks"]:
        if c["metric"] == "gamma3":
            c["value"]["coef"] = 0.5
    path = _write(tmp_path, cfg)
    assert cli.main(["run", "--config", path, "--check", "--out", str(tmp_path / "o")]) == 2
    assert "FAIL gamma3" in capsys.readouterr().out


@pytest.mark.parametrize("mutate,pointer", [
    (lambda c: c["mc"].update(n_reps=5), "/mc/n_reps"),
    (lambda c: c["model"].update(t=[100, 50]), "/model/t"),
    (lambda c: c.update(tasks=["clt", "dance"]), "/tasks"),
    (lambda c: c["functional"].update(name="nope"), "/functional/name"),
])
def test_schema_errors(tmp_path, capsys, mutate, pointer):
    cfg = _minimal()
    mutate(cfg)
    assert cli.main(["run", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert f"config key {pointer}" in err


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{ not json")
    assert cli.main(["check", "--config", str(p)]) == 1


@pytest.fixture
def degenerate_extension():
    fam = Family("degenerate", lambda p, t: (constant_functional(1.0), IntensityModel(Window.cube(1.0, 2), t)), {})
    register(fam, extension=True)
    yield fam
    fbase._EXTENSIONS.pop("degenerate", None)


def test_degenerate_extension_exits_3(tmp_path, capsys, degenerate_extension):
    cfg = {"functional": {"name": "degenerate"}, "model": {"t": [10]}, "tasks": ["variance", "clt"],
           "mc": {"n_reps": 100}, "seed": 0}
    assert cli.main(["run", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 3
    assert "variance" in capsys.readouterr().err


def test_check_subcommand_prints_plan(tmp_path, capsys):
    cfg = _minimal()
    cfg["tasks"] = ["rate", "bounds"]
    cfg["model"]["t"] = [25, 50, 100, 200]
    assert cli.main(["check", "--config", _write(tmp_path, cfg)]) == 0
    plan = json.loads(capsys.readouterr().out)
    assert plan["tasks"] == ["gammas", "bounds", "clt", "rate"]


def test_list_plain(capsys):
    assert cli.main(["list"]) == 0
    out = capsys.readouterr().out
    assert all(n in out for n in NAMES)


def test_list_json_missing_plugin_dir(tmp_path, capsys):
    assert cli.main(["list", "--json", "--plugin-dir", str(tmp_path / "missing")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert NAMES <= {f["name"] for f in doc["functionals"]}
    assert doc["extensions"] == []


def test_list_json_loads_plugins(tmp_path, capsys):
    (tmp_path / "myext.py").write_text(
        "from poisson_stein.functionals.base import Family, register, constant_functional\n"
        "from poisson_stein.point_process import IntensityModel, Window\n"
        "register(Family('myext', lambda p, t: (constant_functional(0.0), IntensityModel(Window.cube(1.0, 1), t)),"
        " {}, 'test plugin'), extension=True)\n")
    try:
        assert cli.main(["list", "--json", "--plugin-dir", str(tmp_path)]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert [e["name"] for e in doc["extensions"]] == ["myext"]
    finally:
        fbase._EXTENSIONS.pop("myext", None)


def test_console_script_module_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "poisson_stein.cli", "list", "--json"], capture_output=True, text=True)
    assert r.returncode == 0 and "knn" in r.stdout
