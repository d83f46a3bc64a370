import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossview.errors import CannotSeparate, DegenerateProjection, NoCovisiblePoint, TargetCenterNotVisible
from crossview.geometry import CameraParams, camera_center, project_point
from crossview.geotasks import (
    GeoTaskConfig,
    circular_distance,
    epipolar_distance,
    gen_directional_correspondence,
    gen_point_correspondence,
    gen_spatial_verification,
    gen_viewpoint_localization,
    make_direction_distractors,
    make_point_distractors,
    projected_angle,
    sample_covisible_point,
)
from crossview.synthetic import (
    RingSceneConfig,
    brute_force_visible,
    make_ring_scene,
    reprojection_px,
    triangulate_dlt,
)
from crossview.tasks import derive_rng

CFG = GeoTaskConfig()


def rngs(n, tag="t"):
    return [derive_rng(7, tag, i) for i in range(n)]


# --- covisible sampling ----------------------------------------------------------

def test_covisible_point_on_object(sphere_scene):
    for r in rngs(20):
        X, ids = sample_covisible_point(sphere_scene, 4, r)
        assert len(ids) >= 4
        assert np.linalg.norm(X) == pytest.approx(0.2, abs=1e-6)
        for i in ids[:4]:
            assert brute_force_visible(X, sphere_scene.views[i].camera, sphere_scene.cloud)


def test_covisible_unsatisfiable(sphere_scene):
    with pytest.raises(NoCovisiblePoint):
        sample_covisible_point(sphere_scene, 13, np.random.default_rng(0))


def test_covisible_precondition(sphere_scene):
    with pytest.raises(ValueError):
        sample_covisible_point(sphere_scene, 2, np.random.default_rng(0))


def test_covisible_deterministic(sphere_scene):
    a = sample_covisible_point(sphere_scene, 4, derive_rng(1, "x"))
    b = sample_covisible_point(sphere_scene, 4, derive_rng(1, "x"))
    assert np.array_equal(a[0], b[0]) and a[1] == b[1]


# --- point distractors -------------------------------------------------------------

def test_point_distractors_example():
    r = np.random.default_rng(0)
    for _ in range(50):
        target = (r.uniform(10, 629), r.uniform(10, 469))
        d = make_point_distractors(target, 640, 480, 4, 0.12, r)
        assert len(d) == 4
        pts = [target, *d]
        for a, b in itertools.combinations(pts, 2):
            assert math.dist(a, b) >= 96.0
        for u, v in d:
            assert 10 <= u <= 629 and 10 <= v <= 469


def test_point_distractors_zero():
    assert make_point_distractors((5, 5), 640, 480, 0, 0.12, np.random.default_rng(0)) == []


def test_point_distractors_impossible():
    with pytest.raises(CannotSeparate):
        make_point_distractors((320, 240), 640, 480, 4, 0.9, np.random.default_rng(0))


@settings(max_examples=60, deadline=None)
@given(u=st.floats(10, 629), v=st.floats(10, 469), k=st.integers(0, 5), seed=st.integers(0, 1000))
def test_point_distractors_property(u, v, k, seed):
    d = make_point_distractors((u, v), 640, 480, k, 0.12, np.random.default_rng(seed))
    pts = [(u, v), *d]
    assert all(math.dist(a, b) >= 96.0 for a, b in itertools.combinations(pts, 2))


# --- direction distractors ---------------------------------------------------------

def test_direction_quarter_turns():
    got = sorted(make_direction_distractors(0.0, 3, math.pi / 2, np.random.default_rng(3)))
    assert np.allclose(got, [math.pi / 2, math.pi, 3 * math.pi / 2], atol=1e-9)


def test_direction_zero():
    assert make_direction_distractors(1.0, 0, 0.5, np.random.default_rng(0)) == []


def test_direction_impossible():
    with pytest.raises(CannotSeparate):
        make_direction_distractors(0.0, 4, math.pi / 2, np.random.default_rng(0))


def test_direction_thousand_draws():
    r = np.random.default_rng(11)
    for _ in range(1000):
        k = int(r.integers(1, 6))
        min_ang = r.uniform(0.05, 2 * math.pi / (k + 1))
        target = r.uniform(0, 2 * math.pi)
        angs = [target, *make_direction_distractors(target, k, min_ang, r)]
        gaps = [circular_distance(a, b) for a, b in itertools.combinations(angs, 2)]
        assert min(gaps) >= min_ang - 1e-9


# --- projected directions -------------------------------------------------------------

def identity_cam():
    return CameraParams(500, 500, 320, 240, np.eye(3), np.zeros(3), 640, 480)


def test_parallel_direction_angle():
    cam = identity_cam()
    for theta in np.linspace(0, 2 * math.pi, 13)[:-1]:
        ang, ratio = projected_angle(np.array([0.0, 0.0, 2.0]), np.array([math.cos(theta), math.sin(theta), 0]), cam)
        assert circular_distance(ang, theta) < 1e-12
        assert ratio == pytest.approx(1.0)


def test_axial_direction_degenerate():
    with pytest.raises(DegenerateProjection):
        projected_angle(np.array([0.0, 0.0, 2.0]), np.array([0.0, 0.0, 1.0]), identity_cam())


def test_angle_matches_finite_difference(sphere_scene):
    r = np.random.default_rng(2)
    for _ in range(200):
        view = sphere_scene.views[int(r.integers(12))]
        X = sphere_scene.cloud.positions[int(r.integers(len(sphere_scene.cloud)))]
        d = r.normal(size=3)
        d /= np.linalg.norm(d)
        try:
            ang, ratio = projected_angle(X, d, view.camera)
        except DegenerateProjection:
            continue
        if ratio < 0.05:
            continue
        eps = 1e-6
        p0 = reprojection_px(X, view.camera)
        p1 = reprojection_px(X + eps * d, view.camera)
        fd = math.atan2(p1[1] - p0[1], p1[0] - p0[0]) % (2 * math.pi)
        assert circular_distance(ang, fd) < 1e-4


# --- generators ------------------------------------------------------------------------

def marker_checks(task):
    for view, marks in (*task.reference_views, *task.candidate_views):
        assert all(m.in_bounds(view.width, view.height) for m in marks)
        colors = [m.color for m in marks]
        assert len(colors) == len(set(colors))


def test_point_correspondence(ring_scenes):
    for scene in ring_scenes:
        for r in rngs(15, scene.scene_id):
            task = gen_point_correspondence(scene, CFG, r)
            marker_checks(task)
            X = np.array(task.provenance["point"])
            (view, marks), = task.candidate_views
            assert len(marks) == 5 and task.n_choices == 5
            true_px = reprojection_px(X, view.camera)
            assert np.hypot(*(np.array(marks[task.correct_index].pixel) - true_px)) < 1.0
            for m in marks:
                if m is not marks[task.correct_index]:
                    assert np.hypot(*(np.array(m.pixel) - true_px)) >= 0.12 * 800
            for rv, (rm,) in task.reference_views:
                assert np.hypot(*(np.array(rm.pixel) - reprojection_px(X, rv.camera))) < 1.0
            assert 3 <= task.n_images <= 6


def test_point_correspondence_deterministic(sphere_scene):
    a = gen_point_correspondence(sphere_scene, CFG, derive_rng(3, "p"))
    b = gen_point_correspondence(sphere_scene, CFG, derive_rng(3, "p"))
    assert a.provenance == b.provenance and a.choice_colors == b.choice_colors
    assert [m.pixel for m in a.candidate_views[0][1]] == [m.pixel for m in b.candidate_views[0][1]]


def test_directional_correspondence(ring_scenes):
    for scene in ring_scenes:
        for r in rngs(15, scene.scene_id):
            task = gen_directional_correspondence(scene, CFG, r)
            marker_checks(task)
            X = np.array(task.provenance["point"])
            d = np.array(task.provenance["direction"])
            (view, marks), = task.candidate_views
            assert len(marks) == 4
            p0 = reprojection_px(X, view.camera)
            p1 = reprojection_px(X + 1e-6 * d, view.camera)
            fd = math.atan2(p1[1] - p0[1], p1[0] - p0[0])
            assert circular_distance(marks[task.correct_index].angle, fd) < 1e-4
            angles = [m.angle for m in marks]
            assert min(circular_distance(a, b) for a, b in itertools.combinations(angles, 2)) >= math.pi / 6 - 1e-9


def test_spatial_verification(ring_scenes):
    for scene in ring_scenes:
        for r in rngs(10, scene.scene_id):
            try:
                task = gen_spatial_verification(scene, CFG, r)
            except CannotSeparate:
                continue
            marker_checks(task)
            X = np.array(task.provenance["point"])
            cams = [v.camera for v, _ in task.candidate_views]
            px = [np.array(m[0].pixel) for _, m in task.candidate_views]
            odd = task.correct_index
            good = [i for i in range(len(cams)) if i != odd]
            Y = triangulate_dlt([px[i] for i in good], [cams[i] for i in good])
            for i in good:
                assert np.hypot(*(reprojection_px(Y, cams[i]) - px[i])) < 1.0
            assert np.hypot(*(reprojection_px(X, cams[odd]) - px[odd])) >= 0.12 * cams[odd].diagonal
            for i in good:
                assert epipolar_distance(px[odd], cams[odd], px[i], cams[i]) >= 0.12 * cams[i].diagonal


@pytest.mark.parametrize("n", [1, 2])
def test_spatial_needs_three(sphere_scene, n):
    with pytest.raises(ValueError):
        gen_spatial_verification(sphere_scene, CFG, np.random.default_rng(0), n_views=n)


def test_spatial_deterministic(sphere_scene):
    a = gen_spatial_verification(sphere_scene, CFG, derive_rng(5, "s"))
    b = gen_spatial_verification(sphere_scene, CFG, derive_rng(5, "s"))
    assert a.correct_index == b.correct_index and a.provenance == b.provenance


def test_viewpoint_localization(sphere_scene):
    for r in rngs(30):
        task = gen_viewpoint_localization(sphere_scene, CFG, r)
        marker_checks(task)
        assert task.n_choices == 3
        target = task.provenance["target_view"]
        assert task.candidate_views[task.correct_index][0].camera_id == target
        c = np.array(task.provenance["camera_center"])
        for view, (m,) in task.reference_views:
            assert np.hypot(*(np.array(m.pixel) - reprojection_px(c, view.camera))) < 1e-6
        ids = [v.camera_id for v, _ in task.candidate_views]
        assert len(set(ids)) == 3


def test_opposite_camera_sees_center_near_middle(sphere_scene):
    cfg = RingSceneConfig()
    cams = sphere_scene.cameras
    half = cfg.n_cameras // 2
    # opposite camera at the same height: elevation angle equals the look-down pitch
    expected = (cfg.width / 2, cfg.height / 2 - cfg.focal * (cfg.camera_height - cfg.look_at_height) / cfg.radius)
    for k in range(cfg.n_cameras):
        px, _ = project_point(camera_center(cams[k]), cams[(k + half) % cfg.n_cameras])
        assert np.allclose(px, expected, atol=1e-6)


def test_viewpoint_center_hidden():
    scene = make_ring_scene(RingSceneConfig(n_cameras=4, object_size=0.6, n_points=20_000))
    with pytest.raises(TargetCenterNotVisible):
        gen_viewpoint_localization(scene, CFG, np.random.default_rng(0))


def test_viewpoint_deterministic(sphere_scene):
    a = gen_viewpoint_localization(sphere_scene, CFG, derive_rng(9, "v"))
    b = gen_viewpoint_localization(sphere_scene, CFG, derive_rng(9, "v"))
    assert a.provenance == b.provenance


def test_config_validation():
    with pytest.raises(Exception):
        GeoTaskConfig.from_dict({"n_choices": {"point_correspondence": 7}})
    with pytest.raises(Exception):
        GeoTaskConfig.from_dict({"min_pixel_separation": 0})
