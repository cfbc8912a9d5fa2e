import csv
import json

import numpy as np
import pytest

from fsidelay.cli import main
from fsidelay.config import DEFAULTS, build_config, load_config, parse_overrides
from fsidelay.delay_control import FeedbackLaw
from fsidelay.errors import ConfigError

SMALL = ["--override", "geometry.n_modes=8", "--override", "geometry.n_vertical=10"]


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_defaults_and_margin_sentinel():
    cfg = build_config({})
    assert cfg["control.gamma"] == 2.0
    assert cfg.margin == pytest.approx(0.4)
    assert build_config({"control": {"margin": 0.1}}).margin == 0.1
    assert cfg.digest() == build_config(dict(DEFAULTS)).digest()


def test_unknown_and_invalid_keys():
    with pytest.raises(ConfigError, match="physics.viscosity"):
        build_config({"physics": {"viscosity": 1.0}})
    with pytest.raises(ConfigError):
        build_config({"spectrum": {"mode": "partial"}})
    with pytest.raises(ConfigError):
        build_config({"geometry": {"n_modes": 7}})
    with pytest.raises(ConfigError):
        parse_overrides(["control.gamma"])
    assert parse_overrides(["control.gamma=3", "control.actuators=normal"]) == {
        "control.gamma": 3, "control.actuators": "normal"}


def test_toml_and_json_files(tmp_path):
    toml = tmp_path / "run.toml"
    toml.write_text("seed = 7\n[control]\ngamma = 1.5\n")
    cfg = load_config(toml, ["control.t0=0.2"])
    assert (cfg["seed"], cfg["control.gamma"], cfg["control.t0"]) == (7, 1.5, 0.2)
    js = tmp_path / "run.json"
    js.write_text(json.dumps({"control": {"gamma": 1.5}, "seed": 7, "control.t0": 0.2}))
    assert load_config(js).digest() == cfg.digest()
    assert load_config(toml, seed=3)["seed"] == 3


def test_bad_config_exits_3(tmp_path, capsys):
    assert main(["spectrum", "--out", str(tmp_path), "--override", "physics.viscosity=1"]) == 3
    assert "physics.viscosity" in capsys.readouterr().err
    assert main(["spectrum", "--config", str(tmp_path / "missing.toml")]) == 3


def test_spectrum_outputs(tmp_path):
    assert main(["spectrum", "--out", str(tmp_path)] + SMALL) == 0
    rows = read_csv(tmp_path / "spectrum.csv")
    vals = np.array([complex(float(r[1]), float(r[2])) for r in rows[1:]])
    assert len(vals) >= 20
    for v in vals[np.abs(vals.imag) > 0]:
        assert np.min(np.abs(vals - np.conj(v))) <= 1e-8 * np.max(np.abs(vals))
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"] == "ok" and man["seed"] == 0
    assert set(man["files"]) == {"spectrum.csv", "spectrum.json"}
    assert set(man) == {"command", "status", "config", "config_sha256", "seed", "versions", "files"}


def test_plate_only_spectrum(tmp_path):
    args = ["spectrum", "--out", str(tmp_path), "--override", "spectrum.mode=plate_only"] + SMALL
    assert main(args) == 0
    rows = read_csv(tmp_path / "spectrum.csv")
    vals = np.array([complex(float(r[1]), float(r[2])) for r in rows[1:]])
    k = 2 * np.pi
    assert np.min(np.abs(vals - np.roots([1, 0.5 * k**2, k**4])[0])) <= 1e-10


def test_synthesize_outputs(tmp_path):
    assert main(["synthesize", "--out", str(tmp_path)] + SMALL) == 0
    law = FeedbackLaw.from_json((tmp_path / "feedback_law.json").read_text())
    assert law.count == 2
    assert np.max(law.closed_loop_eigenvalues().real) <= -2.4 + 1e-8
    rows = read_csv(tmp_path / "kernel.csv")
    assert rows[0] == ["lag", "K_0_0", "K_0_1", "K_1_0", "K_1_1"]
    assert float(rows[2][0]) == pytest.approx(0.025)


def test_synthesis_without_actuators_exits_4(tmp_path, capsys):
    args = ["synthesize", "--out", str(tmp_path), "--override", "control.actuators=none"] + SMALL
    assert main(args) == 4
    err = capsys.readouterr().err
    assert "criterion failed" in err and "fsidelay." in err
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"].startswith("error")


def test_hautus_command(tmp_path):
    assert main(["hautus", "--out", str(tmp_path)] + SMALL) == 0
    rep = json.loads((tmp_path / "hautus.json").read_text())
    assert rep["passed"] and rep["min_ratio"] >= 1e-6


def test_deformed_stationary_state_exits_2(tmp_path):
    args = ["spectrum", "--out", str(tmp_path), "--override", "stationary.plate_load=cosine",
            "--override", "stationary.plate_load_amplitude=0.5"] + SMALL
    assert main(args) == 2


def test_simulate_outputs(tmp_path):
    args = ["simulate", "--out", str(tmp_path), "--override", "simulation.T=1.0"] + SMALL
    assert main(args) == 0
    rows = read_csv(tmp_path / "trajectory.csv")
    assert rows[0] == ["t", "norm", "fluid", "plate_disp", "plate_vel", "control", "energy_residual"]
    t = np.array([float(r[0]) for r in rows[1:]])
    v = np.array([float(r[5]) for r in rows[1:]])
    assert np.all(v[t < 0.1 - 1e-12] == 0.0)
    assert np.any(v[t > 0.1] > 0.0)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["info"]["delay_steps"] == 4


def test_outputs_are_reproducible(tmp_path):
    for d in ("a", "b"):
        assert main(["synthesize", "--out", str(tmp_path / d)] + SMALL) == 0
    for name in ("feedback_law.json", "kernel.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
