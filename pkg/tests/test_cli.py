from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest
import yaml
from PIL import Image

from vcspray.cli import (
    PipelineError,
    cmd_calibrate,
    cmd_georef,
    cmd_mission,
    cmd_pipeline,
    cmd_route,
    cmd_simulate,
    main,
    recover_targets,
)
from vcspray.config import DEFAULTS, ConfigError, deep_merge, load_config, parse_override
from vcspray.synthetic import make_band_set, make_farm


@pytest.fixture
def farm(tmp_path):
    return make_farm(tmp_path / "farm")


def snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


def test_config_defaults_and_overrides(farm):
    cfg = load_config(farm.config_path, ["aco.n_ants=3", "sim.out_ports=[1,2]"])
    assert cfg["aco"]["n_ants"] == 3 and cfg["aco"]["alpha"] == 2.01
    assert cfg["sim"]["out_ports"] == [1, 2]
    assert cfg["geodesy"]["forced_zone"] == 14
    assert load_config()["aco"] == DEFAULTS["aco"]
    assert parse_override("a.b=0.5") == ("a.b", 0.5)
    assert deep_merge({"a": {"b": 1, "c": 2}}, {"a": {"b": 3}}) == {"a": {"b": 3, "c": 2}}


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("colony: {}\n")
    with pytest.raises(ConfigError, match="unknown"):
        load_config(bad)
    with pytest.raises(ConfigError):
        parse_override("noequals")


def test_stages_match_pipeline(farm, tmp_path):
    cfg = load_config(farm.config_path)
    cmd_pipeline(cfg)
    piped = snapshot(farm.directory / "out")
    assert set(piped) == {"targets.csv", "route.csv", "history.csv", "spot.csv", "mission.json",
                          "report.json", "trajectory.csv"}
    cfg2 = load_config(farm.config_path, [f"paths.out={tmp_path / 'staged'}"])
    cmd_georef(cfg2)
    cmd_route(cfg2)
    cmd_mission(cfg2)
    cmd_simulate(cfg2)
    assert snapshot(tmp_path / "staged") == piped


def test_pipeline_rerun_byte_identical(farm):
    cfg = load_config(farm.config_path)
    cmd_pipeline(cfg)
    first = snapshot(farm.directory / "out")
    cmd_pipeline(cfg)
    assert snapshot(farm.directory / "out") == first


def test_recovered_targets(farm):
    targets = recover_targets(load_config(farm.config_path))
    assert len(targets) == len(farm.truth)
    assert sum(t.member_count for t in targets) == farm.n_detections


def test_route_outputs(farm):
    cfg = load_config(farm.config_path)
    cmd_georef(cfg)
    route, history = cmd_route(cfg)
    rows = route.read_text().splitlines()
    assert len(rows) == len(farm.truth) + 2
    assert rows[1].split(",")[1:] == rows[-1].split(",")[1:]
    h = [float(line.split(",")[1]) for line in history.read_text().splitlines()[1:]]
    assert len(h) == 100 and all(b <= a for a, b in zip(h, h[1:]))


def test_single_target_route(tmp_path):
    out = tmp_path / "out"
    out.mkdir()
    (out / "targets.csv").write_text("target_id,lat,lon,member_count,mean_confidence\n1,30.5343,-96.4312,1,0.9\n")
    cfg = load_config(None, [f"paths.out={out}"])
    cmd_route(cfg)
    cmd_mission(cfg)
    report, _ = cmd_simulate(cfg)
    assert len(json.loads(report.read_text())["spray_events"]) == 1


def test_failed_stage_writes_nothing(farm):
    det = farm.directory / "detections.csv"
    det.write_text(det.read_text() + "IMG_0001,vc,0.9,30,20,10,60\n")
    cfg = load_config(farm.config_path)
    with pytest.raises(PipelineError, match="georef"):
        cmd_pipeline(cfg)
    assert not (farm.directory / "out").exists() or not any((farm.directory / "out").iterdir())


def test_missing_inputs(farm):
    cfg = load_config(farm.config_path)
    with pytest.raises(PipelineError, match="route"):
        cmd_route(cfg)
    with pytest.raises(PipelineError, match="mission"):
        cmd_mission(cfg)
    with pytest.raises(PipelineError, match="calibrate"):
        cmd_calibrate(cfg)


def test_calibrate(tmp_path):
    frag = make_band_set(tmp_path)
    cfg_path = tmp_path / "config.yaml"
    cfg_path.write_text(yaml.safe_dump(frag))
    outputs = cmd_calibrate(load_config(cfg_path))
    names = sorted(p.name for p in outputs)
    assert "IMG_0001_rgb.png" in names and "IMG_0001_red_reflectance.tif" in names
    with Image.open(tmp_path / "out" / "calibrated" / "IMG_0001_rgb.png") as im:
        assert im.mode == "RGB" and im.size == (63, 63)
    with Image.open(tmp_path / "out" / "calibrated" / "IMG_0001_red_reflectance.tif") as im:
        r = np.array(im)
    assert r.dtype == np.float32 and 0.0 <= r.min() and r.max() <= 1.5


def test_main_exit_codes(farm, tmp_path, capsys):
    assert main(["pipeline", "--config", str(farm.config_path), "--out", str(tmp_path / "o"), "--seed", "4"]) == 0
    printed = capsys.readouterr().out.split()
    assert any(p.endswith("report.json") for p in printed)
    assert (tmp_path / "o" / "route.csv").exists()
    assert main(["route", "--config", str(tmp_path / "nope.yaml")]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["mission", "--config", str(farm.config_path), "--route", str(tmp_path / "none.csv")]) == 2


def test_seed_flag_equals_config_override(farm, tmp_path):
    main(["pipeline", "--config", str(farm.config_path), "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["pipeline", "--config", str(farm.config_path), "--out", str(tmp_path / "b"), "--set", "aco.seed=1"])
    assert snapshot(tmp_path / "a") == snapshot(tmp_path / "b")


def test_module_entry_point(farm, tmp_path):
    r = subprocess.run([sys.executable, "-m", "vcspray", "georef", "--config", str(farm.config_path),
                        "--out", str(tmp_path / "m")], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "m" / "targets.csv").exists()
    r = subprocess.run([sys.executable, "-m", "vcspray", "--help"], capture_output=True, text=True)
    for sub in ("calibrate", "georef", "route", "mission", "simulate", "pipeline"):
        assert sub in r.stdout
