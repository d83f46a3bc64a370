import json
import shutil

import numpy as np
import pytest

from crossview.errors import (
    CalibrationMismatch,
    MissingImage,
    NonMonotonicTimestamps,
    SchemaError,
    StateLengthMismatch,
)
from crossview.geometry import PointCloud
from crossview.ingest import (
    CurationCriteria,
    curate,
    load_capture,
    load_trajectory,
    read_ply,
    write_ply,
    write_trajectory_manifest,
)
from crossview.scene import SceneCapture
from crossview.synthetic import ScriptedTrajectoryConfig, make_synthetic_trajectory, random_waypoints


@pytest.fixture
def capture_copy(small_corpus, tmp_path):
    src = small_corpus[1]["captures"][0]
    dst = tmp_path / "cap"
    shutil.copytree(src.rsplit("/", 1)[0], dst)
    return dst / "capture.json"


@pytest.fixture(scope="module")
def three_cam_manifest(tmp_path_factory):
    traj = make_synthetic_trajectory(ScriptedTrajectoryConfig(
        traj_id="three", n_cameras=3, duration=4.0, control_hz=5.0,
        waypoints=((0.0, (0, 0, 0)), (4.0, (0.2, 0.1, 0)))))
    return write_trajectory_manifest(traj, tmp_path_factory.mktemp("three")), traj


def edit(path, fn):
    doc = json.loads(path.read_text())
    fn(doc)
    path.write_text(json.dumps(doc))


def test_capture_loads_six_views(small_corpus):
    scene = load_capture(small_corpus[1]["captures"][0])
    assert len(scene.views) == 6
    assert scene.point_count == 20_000
    assert all(v.camera is not None for v in scene.views)


def test_capture_missing_image(capture_copy):
    (capture_copy.parent / "images" / "cam_02.png").unlink()
    with pytest.raises(MissingImage, match="cam_02.png"):
        load_capture(capture_copy)


def test_capture_calibration_mismatch(capture_copy):
    def widen(doc):
        doc["views"][0]["width"] += 10
    edit(capture_copy, widen)
    with pytest.raises(CalibrationMismatch):
        load_capture(capture_copy)


def test_capture_schema_error(capture_copy):
    edit(capture_copy, lambda d: d.pop("cloud"))
    with pytest.raises(SchemaError):
        load_capture(capture_copy)


def test_capture_bad_rotation(capture_copy):
    def skew(doc):
        doc["views"][0]["rotation"] = [1, 0, 0, 0, 1, 0, 0, 0, 2]
    edit(capture_copy, skew)
    with pytest.raises(SchemaError):
        load_capture(capture_copy)


def test_capture_round_trip_matches_generator(small_corpus):
    from crossview.synthetic import FixtureCorpusConfig, RingSceneConfig, fixture_scenes

    cfg = FixtureCorpusConfig(n_scenes=1, scene=RingSceneConfig(n_cameras=6, n_points=20_000, width=320,
                                                                 height=240, focal=250.0))
    mem = fixture_scenes(cfg)[0]
    disk = load_capture(small_corpus[1]["captures"][0])
    assert np.array_equal(mem.cloud.positions, disk.cloud.positions)
    for a, b in zip(mem.views, disk.views):
        assert a.camera.same_as(b.camera)
        assert np.array_equal(a.image(), b.image())


def test_capture_load_deterministic(small_corpus):
    a = load_capture(small_corpus[1]["captures"][0])
    b = load_capture(small_corpus[1]["captures"][0])
    assert np.array_equal(a.cloud.positions, b.cloud.positions)
    assert [v.camera.to_dict() for v in a.views] == [v.camera.to_dict() for v in b.views]


def test_ply_round_trip(tmp_path, rng):
    cloud = PointCloud(rng.normal(size=(100, 3)).astype(np.float32), rng.integers(0, 256, (100, 3)))
    write_ply(tmp_path / "c.ply", cloud)
    back = read_ply(tmp_path / "c.ply")
    assert np.array_equal(back.positions, cloud.positions)
    assert np.array_equal(back.colors, cloud.colors)


def test_trajectory_three_cameras(three_cam_manifest):
    path, mem = three_cam_manifest
    traj = load_trajectory(path)
    assert traj.camera_ids == ["high", "left_wrist", "right_wrist"]
    assert np.allclose(traj.states, mem.states)
    assert np.allclose(traj.actions, mem.actions)
    assert traj.camera_meta["left_wrist"].side == "left"
    assert traj.camera_meta["high"].extrinsics.same_as(mem.camera_meta["high"].extrinsics)
    img = traj.image(traj.frames[3].images["high"])
    assert np.array_equal(img, mem.image(mem.frames[3].images["high"]))


def copy_manifest(src, tmp_path):
    dst = tmp_path / "traj"
    shutil.copytree(src.parent, dst)
    return dst / "trajectory.json"


def test_trajectory_shuffled_timestamps(three_cam_manifest, tmp_path):
    path = copy_manifest(three_cam_manifest[0], tmp_path)

    def swap(doc):
        doc["frames"][2]["t"], doc["frames"][5]["t"] = doc["frames"][5]["t"], doc["frames"][2]["t"]
    edit(path, swap)
    with pytest.raises(NonMonotonicTimestamps):
        load_trajectory(path)


def test_trajectory_state_length(three_cam_manifest, tmp_path):
    path = copy_manifest(three_cam_manifest[0], tmp_path)
    edit(path, lambda d: d["states"].pop())
    with pytest.raises(StateLengthMismatch):
        load_trajectory(path)


def test_trajectory_hundred_frames_ninety_nine_states(tmp_path):
    traj = make_synthetic_trajectory(ScriptedTrajectoryConfig(traj_id="h", n_cameras=1, duration=19.8,
                                                              control_hz=5.0))
    assert len(traj.frames) == 100
    path = write_trajectory_manifest(traj, tmp_path)
    edit(path, lambda d: d["states"].pop())
    with pytest.raises(StateLengthMismatch):
        load_trajectory(path)


def test_trajectory_schema(three_cam_manifest, tmp_path):
    path = copy_manifest(three_cam_manifest[0], tmp_path)
    edit(path, lambda d: d["cameras"][0].update(mount="ceiling"))
    with pytest.raises(SchemaError):
        load_trajectory(path)


# --- curation ---------------------------------------------------------------------

def bare_capture(n, scene_id):
    return SceneCapture(scene_id, "x", (), PointCloud(np.zeros((n, 3))))


def moving_traj(traj_id, n_cameras=4, duration=25.0, scale=1.0, seed=0):
    rng = np.random.default_rng(seed)
    return make_synthetic_trajectory(ScriptedTrajectoryConfig(
        traj_id=traj_id, n_cameras=n_cameras, duration=duration,
        waypoints=random_waypoints(rng, duration, scale)))


def test_curate_point_threshold():
    kept, _, rep = curate([bare_capture(999_999, "a"), bare_capture(1_000_000, "b")], [])
    assert [c.scene_id for c in kept] == ["b"]
    assert rep.rejected == [("a", "min_points")]


def test_curate_two_cameras():
    _, kept, rep = curate([], [moving_traj("two", n_cameras=2)])
    assert kept == [] and rep.rejected == [("two", "min_views")]


def test_curate_keeps_good_trajectory():
    t = moving_traj("good")
    assert t.duration == 25.0
    _, kept, rep = curate([], [t])
    assert kept == [t] and rep.rejected == []


def test_curate_short_and_inconsistent():
    short = moving_traj("short", duration=19.0)
    good = moving_traj("incons")
    frames = list(good.frames)
    frames[3] = type(frames[3])(frames[3].timestamp, {k: v for k, v in list(frames[3].images.items())[:3]})
    incons = type(good)(good.traj_id, good.dataset_tag, frames, good.control_hz, good.camera_meta,
                        good.states, good.actions, good.loader)
    _, kept, rep = curate([], [short, incons])
    assert dict(rep.rejected) == {"short": "min_duration", "incons": "inconsistent_cameras"}


def test_curate_partition_and_idempotence():
    caps = [bare_capture(n, f"c{n}") for n in (10, 2_000_000, 1_000_000)]
    trajs = [moving_traj(f"t{i}", scale=0.2 + 0.3 * i, seed=i) for i in range(10)]
    trajs.append(moving_traj("few", n_cameras=2))
    kc, kt, rep = curate(caps, trajs)
    ids = [c.scene_id for c in kc] + [t.traj_id for t in kt] + [i for i, _ in rep.rejected]
    assert sorted(ids) == sorted([c.scene_id for c in caps] + [t.traj_id for t in trajs])
    assert sum(r == "low_activity" for _, r in rep.rejected) == 2
    again = CurationCriteria(activity_floor=rep.activity_floor)
    kc2, kt2, rep2 = curate(kc, kt, again)
    assert kc2 == kc and kt2 == kt and rep2.rejected == []
