import csv
import json

import pytest

from mmcoupler import config as cfgmod
from mmcoupler.cli import build_parser, main


def _write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data) if not isinstance(data, str) else data)
    return str(p)


def test_bundled_config_valid():
    cfg = cfgmod.load()
    assert cfg["system"]["n_qubits"] == 2
    assert cfg["schedule"]["params"] is not None
    assert cfg["solver"]["dt"] > 0


@pytest.mark.parametrize(
    "raw, path",
    [
        ({"system": {"levels": 1}}, "system/levels"),
        ({"schedule": {"tau": -1}}, "schedule/tau"),
        ({"experiment": {"cz": {"objective": "worst"}}}, "experiment/cz/objective"),
        ({"system": {"mode_levels": {"q1": 1}}}, "system/mode_levels/q1"),
    ],
)
def test_schema_errors_name_field(raw, path):
    with pytest.raises(cfgmod.ConfigError, match=path):
        cfgmod.resolve(raw)


def test_unknown_field_rejected():
    with pytest.raises(cfgmod.ConfigError, match="<root>"):
        cfgmod.resolve({"sytem": {}})


def test_round_trip_and_hash():
    cfg = cfgmod.load()
    again = cfgmod.resolve(json.loads(cfgmod.dumps(cfg)))
    assert again == cfg
    assert cfgmod.config_hash(again) == cfgmod.config_hash(cfg)
    other = cfgmod.resolve({**cfg, "seed": cfg["seed"] + 1})
    assert cfgmod.config_hash(other) != cfgmod.config_hash(cfg)


def test_overrides_merge_not_replace():
    cfg = cfgmod.resolve({"solver": {"dt": 0.01}})
    assert cfg["solver"]["dt"] == 0.01
    assert cfg["solver"]["krylov_dim"] == cfgmod.DEFAULTS["solver"]["krylov_dim"]


def test_bad_config_exit_code(tmp_path, capsys):
    assert main(["calibrate", "--config", _write(tmp_path, "{not json")]) == 2
    assert main(["calibrate", "--config", _write(tmp_path, {"system": {"levels": 0}})]) == 2
    assert "system/levels" in capsys.readouterr().err
    assert main(["calibrate", "--config", str(tmp_path / "missing.json")]) == 2


def test_bad_truncation_flag():
    with pytest.raises(SystemExit) as err:
        build_parser().parse_args(["cz-run", "--truncation", "x:y"])
    assert err.value.code == 2


def test_cz_run_without_params(tmp_path):
    cfg = _write(tmp_path, {"schedule": {"params": None}, "output": str(tmp_path / "o")})
    assert main(["cz-run", "--config", cfg]) == 2


def test_dump_pulse_deterministic(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert main(["dump-pulse", "--out", str(d)]) == 0
        outs.append((d / "pulse.csv").read_bytes())
        man = json.loads((d / "manifest.json").read_text())
        assert man["files"] == ["pulse.csv", "schedule.json"]
        assert len(man["config_sha256"]) == 64
    assert outs[0] == outs[1]
    rows = list(csv.reader(outs[0].decode().splitlines()))
    assert rows[0][0] == "t_ns" and len(rows) == 1 + cfgmod.load()["experiment"]["pulse"]["n_points"]


def test_empty_grid_writes_header_only(tmp_path):
    cfg = _write(tmp_path, {"experiment": {"sqg": {"omega_q1_ghz": []}}, "output": str(tmp_path / "o")})
    assert main(["sqg-scan", "--config", cfg]) == 0
    lines = (tmp_path / "o" / "sqg_scan.csv").read_text().splitlines()
    assert lines == ["variant,omega_q1_ghz,drive_ghz,amplitude,infidelity"]


def test_calibrate_and_occupations(tmp_path):
    out = tmp_path / "o"
    assert main(["calibrate", "--out", str(out)]) == 0
    idle = json.loads((out / "idle.json").read_text())
    assert idle["max_abs_zz_khz"] < 20
    cfg = _write(tmp_path, {"experiment": {"occupations": {"n_qubits": 2}}, "output": str(out)})
    assert main(["occupations", "--config", cfg]) == 0
    rows = list(csv.DictReader((out / "occupations.csv").open()))
    assert [r["state"] for r in rows][:2] == ["00000", "01000"]
    assert main(["ipr", "--config", cfg]) == 0


def test_analytics_command(tmp_path):
    out = tmp_path / "o"
    assert main(["analytics", "--out", str(out)]) == 0
    data = json.loads((out / "analytics.json").read_text())
    assert data["resonance"]["Omega_over_2g2"] == pytest.approx(1.0, abs=1e-12)
    assert data["resonance"]["passed"]


@pytest.mark.filterwarnings("ignore:.*hybridized")
def test_calibrate_scan_writes_landscape(tmp_path):
    out = tmp_path / "o"
    cfg = _write(tmp_path, {"experiment": {"calibrate": {"landscape_points": 2}}, "output": str(out)})
    assert main(["calibrate", "--scan", "--config", cfg]) == 0
    rows = list(csv.DictReader((out / "zz_landscape.csv").open()))
    # four grid points for each of the three pairs
    assert len(rows) == 12
    assert {(r["mode_a"], r["mode_b"]) for r in rows} == {("c", "q1"), ("c", "q2"), ("q1", "q2")}
    assert "zz_landscape.csv" in json.loads((out / "manifest.json").read_text())["files"]


def test_occupations_lists_every_mode(tmp_path):
    cfg = _write(tmp_path, {"experiment": {"occupations": {"n_qubits": 2}}, "output": str(tmp_path / "o")})
    assert main(["occupations", "--config", cfg]) == 0
    head = (tmp_path / "o" / "occupations.csv").read_text().splitlines()[0].split(",")
    assert head == ["state", "group", "n_q1", "n_q2", "n_c", "n_c1", "n_c2", "n_couplers", "ipr"]
