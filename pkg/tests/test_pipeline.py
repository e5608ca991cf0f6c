import csv

import numpy as np
import pytest
import yaml

from gprodom.dataio import SensorStreams, corridor_scene, export_streams, simulate
from gprodom.errors import InvalidInputError
from gprodom.evaluation import EvalReport
from gprodom.fusion import read_trajectory_csv
from gprodom.pipeline import MODALITIES, PipelineConfig, run_pipeline

SHORT = {"preset": "corridor", "trajectory": {"segments": [{"line": 10.0}], "start_speed": 1.0, "end_speed": 1.0}}


@pytest.fixture(scope="module")
def short_result(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return run_pipeline(PipelineConfig(scene=SHORT), out_dir=out), out


class TestRunPipeline:
    def test_all_configurations_populated(self, short_result):
        res, _ = short_result
        rep = res.report
        assert set(rep.per_modality) == set(MODALITIES)
        assert all(v is not None for v in rep.per_modality.values())
        assert rep.failures == {} and rep.primary == "fusion"
        assert rep.trajectory_length_m == pytest.approx(10.0, abs=1e-6)

    def test_noiseless_fusion_never_hurts(self, short_result):
        rep = short_result[0].report
        fused = rep.per_modality["fusion"]
        assert fused < 1e-3
        for name in ("gpr-only", "wheel-only", "imu+wheel"):
            assert fused <= rep.per_modality[name] + 1e-9

    def test_outputs_written(self, short_result):
        res, out = short_result
        assert EvalReport.load(out / "report.json") == res.report
        for name in MODALITIES:
            traj = read_trajectory_csv(out / f"trajectory_{name}.csv")
            assert len(traj) == len(res.trajectories[name])
        with (out / "rmse_vs_time.csv").open() as fh:
            header = next(csv.reader(fh))
        assert header == ["t_s"] + sorted(MODALITIES)

    def test_deterministic(self, short_result):
        again = run_pipeline(PipelineConfig(scene=SHORT))
        assert again.report.to_json() == short_result[0].report.to_json()

    def test_empty_subsurface(self):
        scene = corridor_scene(length=8.0, n_reflectors=0)
        rep = run_pipeline(PipelineConfig(scene=scene)).report
        assert rep.per_modality["gpr-only"] is None
        assert rep.failures["gpr-only"].startswith("gpr odometry")
        assert "no valid GPR" in rep.failures["gpr-only"]
        for name in ("wheel-only", "imu+wheel", "fusion"):
            assert rep.per_modality[name] is not None
        assert rep.details["fusion"]["gpr_factors"] == 0

    def test_dataset_without_imu(self, tmp_path):
        st = simulate(corridor_scene(length=8.0), 0)
        export_streams(SensorStreams(st.gpr, st.wheel, None, st.ground_truth, st.gpr_meta), tmp_path)
        rep = run_pipeline(PipelineConfig(dataset=str(tmp_path))).report
        assert rep.per_modality["gpr-only"] < 1e-6
        assert rep.per_modality["wheel-only"] < 1e-6
        assert rep.failures["fusion"].startswith("fusion")
        assert rep.primary == "gpr-only"

    def test_selected_modalities(self):
        rep = run_pipeline(PipelineConfig(scene=SHORT, modalities=("wheel-only",))).report
        assert list(rep.per_modality) == ["wheel-only"] and rep.primary == "wheel-only"

    def test_sliding_solver(self):
        cfg = PipelineConfig.from_dict({"scene": SHORT, "modalities": ["imu+wheel"], "fusion": {"solver": "sliding"}})
        assert run_pipeline(cfg).report.rmse_m < 1e-3


class TestConfig:
    def test_from_dict_nested(self):
        cfg = PipelineConfig.from_dict({
            "seed": 4,
            "fusion": {"keyframe_dt": 1.0, "imu_noise": {"accel_noise_density": 0.1}},
            "sfm": {"rows": 32},
            "peaks": {"refine": False},
            "filter": {"cutoff_fraction": 0.1},
        })
        assert cfg.seed == 4 and cfg.fusion.keyframe_dt == 1.0
        assert cfg.fusion.imu_noise.accel_noise_density == 0.1
        assert cfg.sfm.rows == 32 and not cfg.peaks.refine and cfg.filter.cutoff_fraction == 0.1

    @pytest.mark.parametrize(
        "bad", [{"colour": 1}, {"fusion": {"speed": 1}}, {"modalities": ["lidar"]}, {"fusion": {"solver": "magic"}}]
    )
    def test_rejects_unknown(self, bad):
        with pytest.raises((InvalidInputError, TypeError)):
            PipelineConfig.from_dict(bad)

    def test_load_resolves_relative_paths(self, tmp_path):
        (tmp_path / "scene.yaml").write_text(yaml.safe_dump(SHORT))
        (tmp_path / "run.yaml").write_text(yaml.safe_dump({"scene": "scene.yaml", "modalities": ["wheel-only"]}))
        cfg = PipelineConfig.load(tmp_path / "run.yaml")
        assert cfg.scene == str(tmp_path / "scene.yaml")
        assert np.isfinite(run_pipeline(cfg).report.rmse_m)

    def test_needs_a_source(self):
        with pytest.raises(InvalidInputError):
            run_pipeline(PipelineConfig())
