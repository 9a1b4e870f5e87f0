import csv
import json
import math

import numpy as np
import pytest

from ctrcac import cli
from ctrcac.config import ConfigError, config_from_dict, load_config
from ctrcac.gains import GainsDocument, bundled
from ctrcac.rcac import DEFAULT_HYPERPARAMS
from ctrcac.references import Helix, Table, Waypoint, helix_reference, waypoint_reference


# ---------------------------------------------------------------- references


def test_waypoint_reference():
    r, psi = waypoint_reference(0.0)
    np.testing.assert_array_equal(r, [1.0, 1.0, 1.0])
    assert psi == 0.0
    np.testing.assert_array_equal(waypoint_reference(50.0)[0], [1.0, 1.0, 1.0])
    np.testing.assert_array_equal(waypoint_reference(3.0, (0, 0, 0))[0], 0.0)
    with pytest.raises(ValueError):
        waypoint_reference(-1.0)


def test_helix_reference():
    np.testing.assert_allclose(helix_reference(0.0)[0], [1.0, 0.0, 0.0])
    np.testing.assert_allclose(helix_reference(math.pi / 0.2)[0], [0.0, 1.0, 1.5708], atol=1e-4)
    np.testing.assert_allclose(helix_reference(100.0)[0], [-0.8391, -0.5440, 10.0], atol=1e-4)
    with pytest.raises(ValueError):
        helix_reference(1.0, omega=0.0)


def test_vectorized_references_match_scalar():
    t = np.linspace(0, 30, 7)
    rows = Helix(0.1).sample(t)
    for ti, row in zip(t, rows):
        np.testing.assert_allclose(row[:3], helix_reference(ti)[0], atol=1e-15)
    np.testing.assert_array_equal(Waypoint(z_up=True).sample([2.0])[0], [1.0, 1.0, -1.0, 0.0])


def test_table_reference_interpolates_and_holds():
    ref = Table([(0.0, 0.0, 0.0, 0.0), (2.0, 2.0, 0.0, -1.0)])
    np.testing.assert_allclose(ref.sample([1.0, 5.0])[:, :3], [[1.0, 0.0, -0.5], [2.0, 0.0, -1.0]])


# ---------------------------------------------------------------- config


def test_minimal_config_takes_defaults(tmp_path):
    path = tmp_path / "wp.json"
    path.write_text(json.dumps({"trajectory": {"kind": "waypoint"}}))
    cfg = load_config(path)
    assert cfg.hyperparams == DEFAULT_HYPERPARAMS
    assert cfg.integrator.dt == 1e-3
    assert cfg.mode == "learn"
    assert cfg.duration == 100.0


def test_yaml_config(tmp_path):
    path = tmp_path / "helix.yaml"
    path.write_text("trajectory:\n  kind: helix\n  omega: 0.2\nduration: 5\n")
    cfg = load_config(path)
    assert cfg.trajectory.kind == "helix" and cfg.trajectory.omega == 0.2 and cfg.duration == 5.0


@pytest.mark.parametrize(
    "data,where",
    [
        ({"integrator": {"dt": -1e-3}}, "integrator.dt"),
        ({"mode": "fly"}, "gains_file"),
        ({"autopilot": {"tilt": 40}}, "autopilot.tilt"),
        ({"bogus": 1}, "bogus"),
        ({"hyperparams": {"inner": {"gf": {"num": [1, 1], "den": [1, 1]}}}}, "hyperparams.inner"),
        ({"trajectory": {"kind": "circle"}}, "trajectory.kind"),
    ],
)
def test_config_errors_name_the_field(data, where):
    with pytest.raises(ConfigError, match=where.replace(".", r"\.")):
        config_from_dict(data)


def test_hyperparameter_override():
    cfg = config_from_dict({"hyperparams": {"outer_z": {"p0": 10.0, "gf": {"num": [1.0], "den": [1.0, 1.0]}}}})
    assert cfg.hyperparams["outer_z"].p0 == 10.0
    assert cfg.hyperparams["outer_z"].gf.order == 1
    assert cfg.hyperparams["inner"] == DEFAULT_HYPERPARAMS["inner"]


def test_resolved_config_round_trip():
    cfg = config_from_dict({"trajectory": {"kind": "helix"}, "seed": 9})
    again = config_from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.digest() == cfg.digest()
    assert again.to_dict() == cfg.to_dict()


# ---------------------------------------------------------------- gains documents


def test_gains_document_round_trip(tmp_path):
    g = np.random.default_rng(0).standard_normal((6, 3)) * 10.0 ** np.arange(-9, 9).reshape(6, 3)
    doc = GainsDocument(g, {"scenario": "abc"})
    back = GainsDocument.load(doc.save(tmp_path / "g.json"))
    np.testing.assert_array_equal(back.gains, g)
    assert back.metadata == {"scenario": "abc"}
    data = json.loads((tmp_path / "g.json").read_text())
    assert set(data["outer"]) == {"r1", "r2", "r3"}
    assert set(data["inner"]) == {"roll", "pitch", "yaw"}


def test_bundled_gain_sets():
    wp = bundled("table2_waypoint").gains
    np.testing.assert_array_equal(wp[2], [0.6114, 0.4296, 0.1753])
    np.testing.assert_array_equal(wp[3], [0.0597, 0.0249, 0.0471])
    hx = bundled("table2_helix").gains
    np.testing.assert_array_equal(hx[0], [0.2553, 0.1514, 0.0028])
    assert hx[5, 2] == 1.7e-8
    with pytest.raises(KeyError):
        bundled("nope")


def test_incomplete_gains_document():
    data = bundled("table2_waypoint").to_dict()
    del data["inner"]["yaw"]["k_i"]
    with pytest.raises(ValueError, match="inner.yaw"):
        GainsDocument.from_dict(data)


# ---------------------------------------------------------------- CLI


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_cli_fly_target_with_bundled_gains(tmp_path, capsys):
    out = tmp_path / "fly"
    rc = cli.main(["fly", "--gains", "table2_waypoint.json", "--env", "target", "--duration", "5", "--out", str(out)])
    assert rc == 0
    rows = read_csv(out / "telemetry.csv")
    assert len(rows) == 1 + 500
    assert np.all(np.isfinite(np.array(rows[1:], dtype=float)))
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["environment"] == "target" and resolved["mode"] == "fly"
    np.testing.assert_array_equal(GainsDocument.load(out / "gains.json").gains, bundled("table2_waypoint").gains)
    assert json.loads(capsys.readouterr().out)["status"] == "ok"


def test_cli_learn_reports_divergence(tmp_path):
    out = tmp_path / "learn"
    rc = cli.main(["learn", "--duration", "1", "--out", str(out)])
    assert rc == cli.EXIT_DIVERGED
    assert (out / "telemetry.csv").exists()
    assert (out / "resolved_config.json").exists()


def test_cli_learn_short_window(tmp_path):
    out = tmp_path / "learn"
    assert cli.main(["learn", "--duration", "0.005", "--out", str(out)]) == 0
    assert GainsDocument.load(out / "gains.json").gains.shape == (6, 3)


def test_cli_invalid_config(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"integrator": {"dt": -1}}))
    assert cli.main(["learn", "--config", str(cfg), "--out", str(tmp_path / "x")]) == cli.EXIT_INVALID
    assert "integrator.dt" in capsys.readouterr().err
    assert cli.main(["fly", "--out", str(tmp_path / "y")]) == cli.EXIT_INVALID


def test_cli_oracle_check_reports_per_row(capsys):
    rc = cli.main(["oracle-check", "--seeds", "2"])
    text = capsys.readouterr().out
    errors = {line.split(":")[0]: float(line.split()[-1]) for line in text.splitlines() if "max relative error" in line}
    assert set(errors) == set(DEFAULT_HYPERPARAMS)
    assert rc == (0 if max(errors.values()) < cli.ORACLE_TOL else cli.EXIT_DIVERGED)


def test_cli_sweep(tmp_path):
    out = tmp_path / "sweep"
    rc = cli.main([
        "sweep", "--mode", "fly", "--gains", "table2_waypoint", "--env", "target", "--duration", "2",
        "--set", "seed=1,2", "--set", "target.meas_delay=0.01,0.02", "--workers", "2", "--out", str(out),
    ])
    assert rc == 0
    summary = read_csv(out / "summary.csv")
    assert summary[0][:3] == ["seed", "target.meas_delay", "status"]
    assert len(summary) == 5
    assert all(row[2] == "ok" for row in summary[1:])
