import json
import subprocess
import sys
from pathlib import Path

import pytest

from jumpflow import cli
from jumpflow.config import DEFAULTS, load_config
from jumpflow.errors import ConfigInvalid

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

# keeps `all` quick: one path everywhere and short horizons
LIGHT = ["sde.paths=1", "sde.halvings=2", "malliavin.paths=1", "malliavin.samples=2",
         "malliavin.r_grid=[0.1, 0.3]", "pbp.paths=2", "pbp.refinements=2", "pbp.dt=0.01"]


def out_args(tmp_path, name="t"):
    return ["--set", f"output.root={tmp_path}", "--set", f"output.dir={name}"]


def test_defaults_round_trip():
    cfg = load_config(CONFIGS / "default.toml", environ={})
    assert cfg == DEFAULTS


def test_precedence(tmp_path):
    f = tmp_path / "c.toml"
    f.write_text("master_seed = 5\n[sde]\npaths = 3\n")
    cfg = load_config(f, ["sde.paths=7"], environ={})
    assert cfg["sde"]["paths"] == 7 and cfg["master_seed"] == 5
    assert load_config(f, environ={"LAB_SEED": "11"})["master_seed"] == 11
    assert load_config(f, seed=13, environ={"LAB_SEED": "11"})["master_seed"] == 13


def test_set_coercion():
    cfg = load_config(sets=["sde.x0=[0.5]", "sde.dt=0.002", "zvonkin.target=0.4"], environ={})
    assert cfg["sde"]["x0"] == [0.5] and cfg["sde"]["dt"] == 0.002


@pytest.mark.parametrize("sets", [
    ["nosuch.key=1"], ["sde.nosuch=1"], ["sde.paths"], ["measure.alpha=2.5"], ["measure.eps=2"],
    ["sde.x0=[0.1, 0.2]"], ["output.dir=../x"], ["drift.kind=wild"], ["sde.x0=nope"],
])
def test_invalid(sets):
    with pytest.raises(ConfigInvalid):
        load_config(sets=sets, environ={})


def test_bad_toml(tmp_path):
    f = tmp_path / "bad.toml"
    f.write_text("[sde\n")
    with pytest.raises(ConfigInvalid):
        load_config(f, environ={})


def test_shipped_configs_load():
    for f in CONFIGS.glob("*.toml"):
        load_config(f, environ={})


def test_certify_measure(tmp_path, capsys):
    assert cli.main(["certify-measure"] + out_args(tmp_path)) == 0
    rep = json.loads((tmp_path / "t" / "report.json").read_text())
    assert rep["pass"] and rep["modules"]["certify-measure"]["pass"]
    assert "certify-measure: pass" in capsys.readouterr().out
    for rel, digest in rep["manifest"].items():
        assert cli.sha256_file(tmp_path / "t" / rel) == digest


def test_resolvent_report(tmp_path):
    assert cli.main(["resolvent"] + out_args(tmp_path)) == 0
    rep = json.loads((tmp_path / "t" / "report.json").read_text())
    rows = {r["case"]: r for r in rep["modules"]["resolvent"]["report"]["closed_form"]}
    assert rows["plane_wave_b0"]["rel_err"] <= 1e-10
    assert rep["build"] == cli.build_id()


def test_exit_code_on_bad_config(tmp_path, capsys):
    assert cli.main(["sde", "--set", "sde.nosuch=1"] + out_args(tmp_path)) == 2
    assert "error" in capsys.readouterr().err
    assert cli.main(["sde", "--config", str(tmp_path / "missing.toml")]) == 2


def test_all_manifest(tmp_path):
    args = ["all"] + out_args(tmp_path, "all") + [a for s in LIGHT for a in ("--set", s)]
    code = cli.main(args)
    rep = json.loads((tmp_path / "all" / "report.json").read_text())
    assert code == (0 if rep["pass"] else 1)
    assert set(rep["modules"]) == set(cli.SUBCOMMANDS) - {"all"}
    assert rep["pass"], {k: v["checks"] for k, v in rep["modules"].items() if not v["pass"]}
    prefixes = {rel.split("/")[0] for rel in rep["manifest"]}
    assert {"certify-measure", "resolvent", "zvonkin", "sde"} <= prefixes
    assert list(rep) == sorted(rep)


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "jumpflow", "sample-path"] + out_args(tmp_path),
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "sample-path: pass" in res.stdout
