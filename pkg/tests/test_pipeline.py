import json

import numpy as np
import pytest

import scene
from occlab.core import default_label_set
from occlab.errors import LoadError, PipelineError
from occlab.formats import read_voxel_grid
from occlab.pipeline import PipelineConfig, SequenceManifest, run_pipeline

LS = default_label_set()


def scene_config():
    return PipelineConfig(
        grid_min=scene.GRID_MIN,
        grid_max=scene.GRID_MAX,
        voxel=scene.VOXEL,
        ransac_iterations=128,
        seed=0,
    )


@pytest.fixture(scope="module")
def scene_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("scene")
    manifest_path = scene.write_scene(root / "data")
    manifest = SequenceManifest.load(manifest_path)
    out = root / "out"
    report = run_pipeline(manifest, scene_config(), out, jobs=1)
    return manifest_path, out, report


def car_voxel_centers(grid):
    spec = grid.spec
    sel = np.argwhere(grid.labels == scene.CAR)
    return spec.min_corner[:2] + (sel[:, :2] + 0.5) * spec.voxel


def test_moving_box_present_every_frame(scene_run):
    _, out, report = scene_run
    assert report["frames"] == 3
    for frame, entry in enumerate(report["per_frame"]):
        grid = read_voxel_grid(out / entry["grid"])
        centers = car_voxel_centers(grid)
        assert len(centers) > 0, f"frame {frame} lost the box"


def test_no_trailing_voxels(scene_run):
    _, out, report = scene_run
    for frame, entry in enumerate(report["per_frame"]):
        grid = read_voxel_grid(out / entry["grid"])
        centers = car_voxel_centers(grid)
        dist = scene.footprint_distance(centers, frame)
        assert dist.max() <= scene.VOXEL, f"frame {frame}: trail at {dist.max():.2f} m"


def test_ground_labeled_road(scene_run):
    _, out, report = scene_run
    grid = read_voxel_grid(out / report["per_frame"][0]["grid"])
    road = (grid.labels == scene.ROAD).sum()
    assert road > 100


def test_report_contents(scene_run):
    _, _, report = scene_run
    assert report["points"]["dynamic"] > 0
    assert report["points"]["ground"] > report["points"]["non_ground"]
    assert set(report["stage_seconds"]) >= {"load", "project", "map", "ground", "cluster", "tracks", "voxelize", "write"}
    for entry in report["per_frame"]:
        assert 0 < entry["occupancy_fraction"] < 0.5


def test_determinism_across_runs_and_worker_counts(scene_run, tmp_path):
    manifest_path, out, report = scene_run
    manifest = SequenceManifest.load(manifest_path)
    for jobs in (1, 3):
        again = tmp_path / f"out_{jobs}"
        run_pipeline(manifest, scene_config(), again, jobs=jobs)
        for entry in report["per_frame"]:
            assert (again / entry["grid"]).read_bytes() == (out / entry["grid"]).read_bytes()


def test_empty_sequence(tmp_path):
    manifest_path = scene.write_scene(tmp_path / "data", with_tracks=False, n_frames=0)
    manifest = SequenceManifest.load(manifest_path)
    report = run_pipeline(manifest, scene_config(), tmp_path / "out")
    assert report["frames"] == 0
    assert list((tmp_path / "out").glob("*.voxl")) == []


def test_missing_file_named_in_error(tmp_path):
    manifest_path = scene.write_scene(tmp_path / "data")
    doc = json.loads(manifest_path.read_text())
    doc["frames"][1]["cloud"] = "missing.bin"
    manifest_path.write_text(json.dumps(doc))
    with pytest.raises(LoadError, match="missing.bin"):
        SequenceManifest.load(manifest_path)


def test_dynamic_points_without_annotation_abort(tmp_path):
    manifest_path = scene.write_scene(tmp_path / "data", with_tracks=False)
    manifest = SequenceManifest.load(manifest_path)
    with pytest.raises(PipelineError) as err:
        run_pipeline(manifest, scene_config(), tmp_path / "out")
    assert err.value.stage == "tracks"
    assert list((tmp_path / "out").glob("*.voxl")) == []  # partial outputs removed


def test_partial_outputs_removed_on_failure(tmp_path, monkeypatch):
    manifest_path = scene.write_scene(tmp_path / "data")
    manifest = SequenceManifest.load(manifest_path)

    import occlab.pipeline as pl

    calls = {"n": 0}
    real = pl.write_voxel_grid

    def flaky(path, grid):
        calls["n"] += 1
        if calls["n"] == 3:
            raise OSError("disk full")
        real(path, grid)

    monkeypatch.setattr(pl, "write_voxel_grid", flaky)
    with pytest.raises(PipelineError) as err:
        run_pipeline(manifest, scene_config(), tmp_path / "out")
    assert err.value.stage == "write"
    assert list((tmp_path / "out").glob("*.voxl")) == []


def test_config_validation():
    with pytest.raises(Exception, match="voxel"):
        PipelineConfig(voxel=0.0)
    with pytest.raises(Exception, match="dynamic_mode"):
        PipelineConfig(dynamic_mode="drop")
    with pytest.raises(Exception, match="tie-break"):
        PipelineConfig(tie_break="largest-id")


def test_config_file_roundtrip(tmp_path):
    config = PipelineConfig(voxel=0.2, epsilon=0.1, seed=7)
    config.to_file(tmp_path / "c.json")
    back = PipelineConfig.from_file(tmp_path / "c.json")
    assert back == config
