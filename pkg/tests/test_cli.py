from __future__ import annotations

import csv
import json

import pytest

from quenchlab.cli import list_presets, main, run
from quenchlab.config import PRESETS, parse_config, preset_text
from quenchlab.errors import ConfigError

SMALL = """[environment]
kind = iid
probabilities = 1.0
seed = 1

[system]
family = circle
degree = 2
fibers = 0: 0.0 none

[discretization]
scheme = ulam
resolution = 128

[analysis]
run = {run}
seed = 7
burn_in = 15
var_n_max = 128
clt_n_grid = {grid}
clt_samples = 2000
"""


def _write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_empty_analysis_list_is_a_noop(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL.format(run="", grid="16"))
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--out-dir", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["passed"] is True and report["analyses"] == {}
    assert "PASS" in capsys.readouterr().out


def test_ks_table_has_one_row_per_grid_point(tmp_path):
    cfg = _write(tmp_path, SMALL.format(run="clt", grid="16, 32, 64"))
    out = tmp_path / "out"
    main(["run", str(cfg), "--out-dir", str(out)])
    with open(out / "clt_ks_table.csv") as fh:
        rows = list(csv.reader(fh))
    assert [int(r[0]) for r in rows[1:]] == [16, 32, 64]


def test_missing_system_exits_2_without_outputs(tmp_path, capsys):
    text = SMALL.format(run="rpf", grid="16").replace("[system]\nfamily = circle\ndegree = 2\nfibers = 0: 0.0 none\n",
                                                      "")
    cfg = _write(tmp_path, text)
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--out-dir", str(out)]) == 2
    assert not out.exists()
    assert "[system]" in capsys.readouterr().err


def test_parse_errors_carry_line_numbers():
    text = SMALL.format(run="rpf", grid="16").replace("seed = 7", "seed = 7\nbogus_key = 3")
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.line == text.splitlines().index("bogus_key = 3") + 1
    bad = SMALL.format(run="rpf", grid="16").replace("resolution = 128", "resolution = many")
    with pytest.raises(ConfigError) as exc:
        parse_config(bad)
    assert exc.value.line == bad.splitlines().index("resolution = many") + 1


def test_unknown_analysis_rejected():
    with pytest.raises(ConfigError):
        parse_config(SMALL.format(run="rpf, spectra", grid="16"))


def test_list_presets(capsys):
    names = [n for n, _ in list_presets()]
    assert "uniform-doubling" in names and len(names) >= 5
    for required in ("perturbed-circle", "random-sft-2", "coboundary-null", "mdp-demo"):
        assert required in names
    assert main(["list-presets"]) == 0
    assert "uniform-doubling" in capsys.readouterr().out


def test_config_echo_round_trips(tmp_path):
    cfg = parse_config(preset_text("perturbed-circle"))
    again = parse_config(cfg.text)
    assert again.digest == cfg.digest and again.values.keys() == cfg.values.keys()
    out = tmp_path / "out"
    main(["run", "preset:random-sft-2", "--out-dir", str(out)])
    echo = (out / "config.ini").read_text()
    assert parse_config(echo).digest == json.loads((out / "report.json").read_text())["config"]["sha256"]


def test_report_hash_is_reproducible(tmp_path):
    cfg = parse_config(SMALL.format(run="rpf, decay, var, clt", grid="16, 32"))
    a = json.loads(run(cfg, tmp_path / "a", threads=1).to_json())
    b = json.loads(run(cfg, tmp_path / "b", threads=4).to_json())
    assert a["report_sha256"] == b["report_sha256"]
    assert (tmp_path / "a" / "clt_ks_table.csv").read_bytes() == (tmp_path / "b" / "clt_ks_table.csv").read_bytes()


def test_seed_override_changes_the_path(tmp_path):
    assert main(["run", "preset:random-sft-2", "--out-dir", str(tmp_path / "a")]) == 0
    assert main(["run", "preset:random-sft-2", "--seed-override", "99", "--out-dir", str(tmp_path / "b")]) == 0
    ra = json.loads((tmp_path / "a" / "report.json").read_text())
    rb = json.loads((tmp_path / "b" / "report.json").read_text())
    assert ra["config"]["sha256"] != rb["config"]["sha256"]


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_each_preset_runs_end_to_end(name, tmp_path):
    out = tmp_path / name
    assert main(["run", f"preset:{name}", "--out-dir", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["passed"] and not report["errors"]
    assert (out / "series_long.csv").exists()
