import json

import numpy as np
import pytest
import yaml

from gprodom.cli import main
from gprodom.fusion import RobotState, write_trajectory_csv

SCENE = {"preset": "corridor", "trajectory": {"segments": [{"line": 8.0}], "start_speed": 1.0, "end_speed": 1.0}}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    scene = root / "scene.yaml"
    scene.write_text(yaml.safe_dump(SCENE))
    assert main(["simulate", "--config", str(scene), "--seed", "3", "--out", str(root / "data")]) == 0
    return root


def test_simulate_writes_dataset(dataset):
    for name in ("gpr_traces.csv", "imu.csv", "wheel.csv", "ground_truth.csv", "schema.yaml"):
        assert (dataset / "data" / name).exists()


def test_odom(dataset, capsys):
    out = dataset / "odom"
    assert main(["odom", str(dataset / "data"), "--out", str(out), "--modalities", "wheel-only,fusion"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert set(report["per_modality"]) == {"wheel-only", "fusion"}
    assert (out / "trajectory_fusion.csv").exists()
    assert "fusion" in capsys.readouterr().out


def test_odom_from_scene_config(dataset, tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(yaml.safe_dump({"scene": str(dataset / "scene.yaml"), "modalities": ["wheel-only"]}))
    assert main(["odom", "--config", str(cfg), "--seed", "1", "--out", str(tmp_path / "o")]) == 0


def test_extract(dataset, tmp_path):
    assert main(["extract", str(dataset / "data"), "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "distances.csv").read_text().splitlines()
    assert rows[0] == "t_from,t_to,shift_l,cost,valid,u_m,sigma_m"
    assert len(rows) > 10
    assert any((tmp_path / "sfm").iterdir())


def test_eval(dataset, tmp_path):
    gt = np.loadtxt(dataset / "data" / "ground_truth.csv", delimiter=",", skiprows=1)
    traj = [RobotState(row[1:4], np.zeros(3), np.eye(3), timestamp_s=row[0]) for row in gt[::5]]
    path = write_trajectory_csv(traj, tmp_path / "traj.csv")
    assert main(["eval", str(path), str(dataset / "data"), "--out", str(tmp_path / "r.json")]) == 0
    assert json.loads((tmp_path / "r.json").read_text())["rmse_m"] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["fly"],
        ["odom", "--out", "x", "--modalities", "lidar"],
        ["simulate"],
        ["odom", "--out", "x", "--seed", "-1"],
    ],
)
def test_usage_errors(argv):
    assert main(argv) == 1


def test_odom_without_source(tmp_path):
    assert main(["odom", "--out", str(tmp_path)]) == 1


def test_bad_config_is_usage_error(tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("colour: blue\n")
    assert main(["odom", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_missing_dataset_is_data_error(tmp_path):
    assert main(["odom", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 2


def test_eval_missing_file_is_data_error(tmp_path, dataset):
    assert main(["eval", str(tmp_path / "none.csv"), str(dataset / "data"), "--out", str(tmp_path / "r.json")]) == 2


def test_eval_disjoint_is_numerical_failure(tmp_path, dataset):
    traj = [RobotState(np.zeros(3), np.zeros(3), np.eye(3), timestamp_s=1000.0 + k) for k in range(3)]
    path = write_trajectory_csv(traj, tmp_path / "traj.csv")
    assert main(["eval", str(path), str(dataset / "data"), "--out", str(tmp_path / "r.json")]) == 3


def test_all_configurations_failing(tmp_path):
    scene = tmp_path / "empty.yaml"
    scene.write_text(yaml.safe_dump({"trajectory": SCENE["trajectory"]}))
    cfg = tmp_path / "run.yaml"
    cfg.write_text(yaml.safe_dump({"scene": str(scene), "modalities": ["gpr-only"]}))
    assert main(["odom", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_version(capsys):
    assert main(["--version"]) == 0
    assert "gprodom" in capsys.readouterr().out
