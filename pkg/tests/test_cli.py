import numpy as np
import pytest

from semloc import cli
from semloc.config import apply_section, dump_config, loads_config, section
from semloc.dataset import dumps_dataset, dumps_trajectory, loads_dataset, loads_trajectory
from semloc.errors import FormatError, NonFinite
from semloc.geometry import ImageLine, Pose, pose_difference
from semloc.ipm import AttitudeAngles
from semloc.localizer import DatasetFrame, PoleLineObservation, SolverConfig
from semloc.metrics import parse_report

SMALL_SPEC = """\
# short straight road
sim.preset = default
sim.seed = 3
world.layout = straight
world.length = 40
world.point_spacing = 0.1
world.dashed_lines = 0
noise.pixel_sigma = 1.0
noise.odo_trans_sigma = 0.01
solver.gate = 1.0
"""


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

def test_config_parsing():
    cfg = loads_config("a = 1\n# comment\nsolver.lane_gate = 1.5  # trailing\nflag = yes\nname = x y\n\n")
    assert cfg == {"a": 1, "solver.lane_gate": 1.5, "flag": True, "name": "x y"}
    assert section(cfg, "solver") == {"lane_gate": 1.5}
    assert loads_config(dump_config(cfg)) == cfg


@pytest.mark.parametrize("text,line", [("a = 1\nnot a pair\n", 2), ("a = 1\na = 2\n", 2), ("= 3\n", 1)])
def test_config_errors(text, line):
    with pytest.raises(FormatError) as exc:
        loads_config(text)
    assert exc.value.line == line


def test_apply_section():
    s = apply_section(SolverConfig(), {"gate": 2, "use_poles": False}, cli.SOLVER_ALIASES)
    assert s.lane_gate == 2.0 and isinstance(s.lane_gate, float) and not s.use_poles
    with pytest.raises(FormatError):
        apply_section(SolverConfig(), {"bogus": 1})


# ---------------------------------------------------------------------------
# Text formats
# ---------------------------------------------------------------------------

def test_dataset_round_trip():
    frames = [DatasetFrame(0, 0.0, Pose.from_xyz_yaw(1.0, 2.0, 0.3), AttitudeAngles(0.01, -0.02, 0.003),
                           np.array([[100.5, 400.25], [700.0, 500.125]]),
                           [PoleLineObservation(ImageLine(1.0, 0.01, -500.0), 100.0, 300.0)]),
              DatasetFrame(1, 0.1, Pose.from_xyz_yaw(2.0, 2.0, 0.3), AttitudeAngles(), np.zeros((0, 2)), [])]
    back = loads_dataset(dumps_dataset(frames))
    assert len(back) == 2
    np.testing.assert_allclose(back[0].lane_pixels, frames[0].lane_pixels)
    assert back[1].lane_pixels.shape == (0, 2)
    assert pose_difference(back[0].odometry, frames[0].odometry)[0] < 1e-8
    assert back[0].attitude.pitch == pytest.approx(-0.02)
    np.testing.assert_allclose(back[0].pole_lines[0].line.coeffs(), frames[0].pole_lines[0].line.coeffs(),
                               atol=1e-6)
    assert dumps_dataset(back) == dumps_dataset(frames)


@pytest.mark.parametrize("text", [
    "ODO 0 0 0 0 0 0 1\n",
    "FRAME 0 0.0\nATT 0 0 0\n",
    "FRAME 0 1.0\nODO 0 0 0 0 0 0 1\nFRAME 1 0.5\nODO 0 0 0 0 0 0 1\n",
    "FRAME 0 0.0\nODO 0 0 0 0 0 0 1\nX 1\n",
    "FRAME 0 0.0\nODO 0 0 0 0 0 0 1\nC 1\n",
])
def test_dataset_errors(text):
    with pytest.raises(FormatError):
        loads_dataset(text)


def test_trajectory_round_trip():
    rng = np.random.default_rng(0)
    poses = [Pose.exp(rng.normal(size=6)) for _ in range(5)]
    stamps = [0.1 * k for k in range(5)]
    t2, p2 = loads_trajectory(dumps_trajectory(stamps, poses))
    assert t2 == pytest.approx(stamps)
    assert all(pose_difference(a, b)[0] < 1e-8 and pose_difference(a, b)[1] < 1e-8 for a, b in zip(p2, poses))
    with pytest.raises(FormatError):
        loads_trajectory("0 1 2 3\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def test_usage_errors(capsys):
    assert cli.cli_main([]) == 1
    assert cli.cli_main(["evaluate", "--est", "x"]) == 1
    assert cli.cli_main(["frobnicate"]) == 1


def test_evaluate_identical_gives_zeros(tmp_path, capsys):
    path = tmp_path / "gt.txt"
    path.write_text(dumps_trajectory([0.0, 0.1, 0.2], [Pose.from_xyz_yaw(k, 0.0, 0.1) for k in range(3)]))
    report = tmp_path / "report.tsv"
    assert cli.cli_main(["evaluate", "--est", str(path), "--gt", str(path), "--report", str(report)]) == 0
    vals = parse_report(report.read_text())
    assert vals["ate_trans_m"] == 0.0 and vals["rpe_trans_m"] == 0.0
    assert vals["recall_0.25m_2deg_pct"] == 100.0
    assert "ate_trans_m" in capsys.readouterr().out


def test_missing_map_is_data_error(tmp_path, capsys):
    missing = tmp_path / "nope.semmap"
    cfg = tmp_path / "c.cfg"
    cfg.write_text("camera.fx = 1000\ncamera.fy = 1000\ncamera.cx = 640\ncamera.cy = 360\n")
    rc = cli.cli_main(["localize", "--map", str(missing), "--dataset", str(tmp_path / "d.txt"),
                       "--config", str(cfg), "--out", str(tmp_path / "t.txt")])
    assert rc == 2
    assert str(missing) in capsys.readouterr().err


def test_malformed_input_is_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("0 1 2\n")
    assert cli.cli_main(["evaluate", "--est", str(bad), "--gt", str(bad)]) == 2
    assert "line 1" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path, monkeypatch, capsys):
    out = tmp_path / "sim"
    spec = tmp_path / "spec.cfg"
    spec.write_text(SMALL_SPEC)
    assert cli.cli_main(["simulate", "--spec", str(spec), "--out", str(out)]) == 0

    def boom(*a, **k):
        raise NonFinite("non-finite residuals")

    monkeypatch.setattr(cli, "localize_sequence", boom)
    rc = cli.cli_main(["localize", "--map", str(out / "map.semmap"), "--dataset", str(out / "dataset.txt"),
                       "--config", str(out / "config.cfg"), "--out", str(tmp_path / "t.txt")])
    assert rc == 3


def test_pipeline_end_to_end(tmp_path, capsys):
    spec = tmp_path / "spec.cfg"
    spec.write_text(SMALL_SPEC)
    out = tmp_path / "sim"
    assert cli.cli_main(["simulate", "--spec", str(spec), "--out", str(out)]) == 0
    assert "solver.gate = 1.0" in (out / "config.cfg").read_text()
    built = tmp_path / "built.semmap"
    assert cli.cli_main(["build-map", "--cloud", str(out / "cloud.txt"), "--out", str(built)]) == 0
    traj = tmp_path / "est.txt"
    diag = tmp_path / "diag.tsv"
    assert cli.cli_main(["localize", "--map", str(built), "--dataset", str(out / "dataset.txt"),
                         "--config", str(out / "config.cfg"), "--out", str(traj),
                         "--diagnostics", str(diag)]) == 0
    report = tmp_path / "report.tsv"
    assert cli.cli_main(["evaluate", "--est", str(traj), "--gt", str(out / "gt.txt"),
                         "--report", str(report)]) == 0
    vals = parse_report(report.read_text())
    assert vals["frames"] == 41
    assert vals["ate_trans_m"] < 0.5
    assert len(diag.read_text().splitlines()) == 42


def test_ipm_check(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("camera.fx = 1000\ncamera.fy = 1000\ncamera.cx = 640\ncamera.cy = 360\n"
                   "mount.height = 1.5\nipm.grid_n = 20\n")
    assert cli.cli_main(["ipm-check", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "roll" in out
