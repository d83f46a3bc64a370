import numpy as np
import pytest

from crossview.errors import (
    AmbiguousDescription,
    InsufficientSharedCameras,
    NoUnambiguousLayout,
    NoValidPair,
    UnknownKey,
)
from crossview.metatasks import (
    CameraLexicon,
    LocalizationCondition,
    MetaTaskConfig,
    describe_camera,
    gen_cross_scenario_localization,
    gen_directional_view_localization,
    gen_language_conditioned_localization,
    gen_temporal_verification,
)
from crossview.scene import CameraMeta, Frame, Trajectory
from crossview.synthetic import RIG, ScriptedTrajectoryConfig, make_synthetic_trajectory, rig_extrinsics
from crossview.tasks import derive_rng
from crossview.temporal import MotionStats, ssim_gray

CFG = MetaTaskConfig()
LEX = CameraLexicon.default()


def static_traj(metas, traj_id="t", n_frames=4):
    frames = [Frame(float(k), {c: f"{c}/{k}" for c in metas}) for k in range(n_frames)]
    img = np.zeros((24, 32, 3), np.uint8)
    return Trajectory(traj_id, "synthetic", frames, 1.0, metas, loader=lambda ref: img)


def posed(cid, x, mount="external", side=None):
    return CameraMeta(cid, mount, side, rig_extrinsics((x, 0.0, 0.5), 160, 120))


def rig_subset(ids):
    return {cid: CameraMeta(cid, m, s, rig_extrinsics(p, 160, 120), k) for cid, m, s, p, k in RIG if cid in ids}


# --- temporal verification -------------------------------------------------------------

STEP = ((0.0, (0, 0, 0)), (10.0, (0, 0, 0)), (12.0, (0.3, 0, 0)), (25.0, (0.3, 0, 0)))


def test_temporal_scripted_move():
    traj = make_synthetic_trajectory(ScriptedTrajectoryConfig(waypoints=STEP))
    stats = MotionStats("synthetic", {}, 0.1, 1)
    for k in range(10):
        task = gen_temporal_verification(traj, stats, CFG, derive_rng(0, "tv", k))
        p = task.provenance
        assert p["delta_s"] > 0.1 and p["ssim"] < 0.9
        i, j = traj.frame_index(p["t_r"]), traj.frame_index(p["t_t"])
        assert p["delta_s"] == pytest.approx(np.linalg.norm(traj.states[j] - traj.states[i]))
        assert min(p["t_r"], p["t_t"]) < 12.0 and max(p["t_r"], p["t_t"]) > 10.0
        views = [v for v, _ in task.candidate_views]
        assert len({v.camera_id for v in views}) == 3
        for idx, v in enumerate(views):
            assert v.timestamp == (p["t_t"] if idx == task.correct_index else p["t_r"])
        odd = views[task.correct_index]
        assert odd.camera_id == p["odd_camera"]
        assert ssim_gray(traj.image(traj.frames[i].images[odd.camera_id]), odd.pixels) == pytest.approx(p["ssim"])


def test_temporal_frozen_robot():
    traj = make_synthetic_trajectory(ScriptedTrajectoryConfig(repaint_amplitude=0.0))
    stats = MotionStats("synthetic", {}, 0.1, 1)
    with pytest.raises(NoValidPair):
        gen_temporal_verification(traj, stats, CFG, np.random.default_rng(0))
    with pytest.raises(NoValidPair):
        gen_temporal_verification(traj, None, CFG, np.random.default_rng(0))


def test_temporal_too_few_cameras():
    traj = make_synthetic_trajectory(ScriptedTrajectoryConfig(n_cameras=2, waypoints=STEP))
    with pytest.raises(InsufficientSharedCameras):
        gen_temporal_verification(traj, None, CFG, np.random.default_rng(0))


# --- directional view localization ------------------------------------------------------

def test_direction_plus_minus_one():
    metas = {"base": posed("base", 0.0), "a": posed("a", 1.0), "b": posed("b", -1.0)}
    traj = static_traj(metas)
    seen = set()
    for k in range(40):
        task = gen_directional_view_localization(traj, CFG, derive_rng(1, "dv", k))
        d = task.condition["direction"]
        answer = task.candidate_views[task.correct_index][0].camera_id
        assert task.reference_views[0][0].camera_id == "base"
        assert (d, answer) in {("right", "a"), ("left", "b")}
        seen.add(d)
    assert seen == {"left", "right"}


def test_direction_sign_flip():
    plus = static_traj({"base": posed("base", 0.0), "a": posed("a", 1.0), "b": posed("b", -1.0)})
    minus = static_traj({"base": posed("base", 0.0), "a": posed("a", -1.0), "b": posed("b", 1.0)})
    for k in range(20):
        tp = gen_directional_view_localization(plus, CFG, derive_rng(2, "dv", k))
        tm = gen_directional_view_localization(minus, CFG, derive_rng(2, "dv", k))
        assert tp.condition == tm.condition
        ap = tp.candidate_views[tp.correct_index][0].camera_id
        am = tm.candidate_views[tm.correct_index][0].camera_id
        assert {ap, am} == {"a", "b"}


def test_direction_no_layout():
    # collinear along the view axis with no lateral offset: only front/back, never a definite distractor
    metas = {c: CameraMeta(c, "external", None, rig_extrinsics((0.0, y, 0.5), 160, 120))
             for c, y in (("p", 0.0), ("q", 0.0001), ("r", -0.0001))}
    with pytest.raises(NoUnambiguousLayout):
        gen_directional_view_localization(static_traj(metas), CFG, np.random.default_rng(0))


def test_direction_side_fallback():
    metas = {"c": CameraMeta("c", "external"), "l": CameraMeta("l", "wrist", "left"),
             "r": CameraMeta("r", "wrist", "right")}
    task = gen_directional_view_localization(static_traj(metas), CFG, np.random.default_rng(0))
    answer = task.candidate_views[task.correct_index][0].camera_id
    base = task.reference_views[0][0].camera_id
    expected = {("c", "left"): "l", ("c", "right"): "r", ("l", "right"): None, ("r", "left"): None}
    assert expected.get((base, task.condition["direction"]), answer) == answer


# --- cross-scenario localization ----------------------------------------------------------

def test_cross_scenario(trajectories):
    a, b = trajectories[0], trajectories[1]
    for k in range(20):
        task = gen_cross_scenario_localization(a, b, CFG, derive_rng(3, "cs", k))
        ref = task.reference_views[0][0]
        cands = [v for v, _ in task.candidate_views]
        assert ref.image_ref.split("/")[2] == a.traj_id
        assert all(v.image_ref.split("/")[2] == b.traj_id for v in cands)
        assert cands[task.correct_index].camera_id == ref.camera_id
        assert sum(v.camera_id == ref.camera_id for v in cands) == 1
        assert task.condition == {"cross_scene": a.traj_id}


def test_cross_scenario_missing_camera(trajectories):
    small = make_synthetic_trajectory(ScriptedTrajectoryConfig(traj_id="small", n_cameras=2))
    with pytest.raises(InsufficientSharedCameras):
        gen_cross_scenario_localization(small, trajectories[0], CFG, np.random.default_rng(0))


def test_cross_scenario_same_trajectory(trajectories):
    with pytest.raises(ValueError):
        gen_cross_scenario_localization(trajectories[0], trajectories[0], CFG, np.random.default_rng(0))


# --- language-conditioned localization -------------------------------------------------------

def test_language_wrist_vs_high():
    traj = static_traj(rig_subset({"high", "left_wrist", "back"}))
    hits = 0
    for k in range(60):
        task = gen_language_conditioned_localization(traj, LEX, CFG, derive_rng(4, "lc", k))
        answer = task.candidate_views[task.correct_index][0].camera_id
        phrase = task.condition["description"]
        assert phrase in LEX.phrases_for(traj.camera_meta[answer])
        if phrase == "wrist-mounted camera":
            hits += 1
            assert answer == "left_wrist"
    assert hits > 0


def test_language_two_wrists_ambiguous():
    traj = static_traj(rig_subset({"high", "left_wrist", "right_wrist"}))
    raised = 0
    for k in range(60):
        try:
            task = gen_language_conditioned_localization(traj, LEX, CFG, derive_rng(5, "lc", k))
        except AmbiguousDescription:
            raised += 1
            continue
        phrase = task.condition["description"]
        matching = [v.camera_id for v, _ in task.candidate_views
                    if phrase in LEX.phrases_for(traj.camera_meta[v.camera_id])]
        assert len(matching) == 1
    assert raised > 0


def test_describe_camera():
    assert describe_camera(CameraMeta("x", "wrist", "left"), LEX) == "wrist-mounted camera on the left arm"
    assert describe_camera(CameraMeta("x", "overhead"), LEX) == "overhead camera"
    with pytest.raises(UnknownKey):
        describe_camera(CameraMeta("x", "wrist", description_keys=("gripper",)), LEX)


def test_lexicon_override(tmp_path):
    path = tmp_path / "lex.json"
    path.write_text('{"wrist": "hand camera"}')
    assert describe_camera(CameraMeta("x", "wrist"), CameraLexicon.load(path)) == "hand camera"


def test_condition_exactly_one():
    with pytest.raises(ValueError):
        LocalizationCondition()
    with pytest.raises(ValueError):
        LocalizationCondition(direction="left", description="x")
    with pytest.raises(ValueError):
        LocalizationCondition(direction="up")
    assert LocalizationCondition(direction="left").to_dict() == {"direction": "left"}
