"""Geometry-based task generators: point/directional correspondence, spatial
verification and viewpoint localization, all driven by a calibrated
:class:`~crossview.scene.SceneCapture`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CannotSeparate,
    ConfigError,
    DegenerateProjection,
    NoCovisiblePoint,
    TargetCenterNotVisible,
)
from .geometry import (
    CameraParams,
    build_depth_index,
    camera_center,
    project_point,
    to_camera_frame,
    visible_mask,
)
from .scene import SceneCapture
from .tasks import (
    COLORS,
    DIRECTIONAL_CORRESPONDENCE,
    POINT_CORRESPONDENCE,
    SPATIAL_VERIFICATION,
    VIEWPOINT_LOCALIZATION,
    MarkerAnnotation,
    RawTask,
)

REFERENCE_COLOR = "red"


@dataclass
class GeoTaskConfig:
    n_reference_views: dict[str, int] = field(default_factory=lambda: {
        POINT_CORRESPONDENCE: 4,
        DIRECTIONAL_CORRESPONDENCE: 4,
        VIEWPOINT_LOCALIZATION: 3,
    })
    n_choices: dict[str, int] = field(default_factory=lambda: {
        POINT_CORRESPONDENCE: 5,
        DIRECTIONAL_CORRESPONDENCE: 4,
        VIEWPOINT_LOCALIZATION: 3,
    })
    # spatial verification draws its view count uniformly from this mix
    spatial_choice_mix: tuple[int, ...] = (4, 5, 6)
    min_pixel_separation: float = 0.12  # fraction of the image diagonal
    min_angular_separation: float = math.pi / 6
    min_views: int = 3
    visibility_tol: float = 0.02
    cell_px: int = 4
    margin: float = 0.02
    max_attempts: int = 500
    min_foreshortening: float = 0.25
    marker_radius: float = 8.0
    arrow_length: float = 40.0

    def validate(self) -> None:
        counts = list(self.n_choices.values()) + list(self.spatial_choice_mix)
        if any(not 2 <= n <= 6 for n in counts):
            raise ConfigError("choice counts must lie in [2, 6]")
        for kind in (POINT_CORRESPONDENCE, DIRECTIONAL_CORRESPONDENCE):
            if self.n_choices.get(kind, 0) > len(COLORS):
                raise ConfigError(f"{kind}: at most {len(COLORS)} coloured markers")
        if self.min_pixel_separation <= 0 or self.min_angular_separation <= 0:
            raise ConfigError("separations must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "GeoTaskConfig":
        cfg = cls()
        for k, v in d.items():
            if not hasattr(cfg, k):
                raise ConfigError(f"unknown geo option {k!r}")
            if isinstance(getattr(cfg, k), dict):
                v = {**getattr(cfg, k), **v}
            elif isinstance(getattr(cfg, k), tuple):
                v = tuple(v)
            setattr(cfg, k, v)
        cfg.validate()
        return cfg


# --- cached per-scene structures --------------------------------------------

def depth_indices(scene: SceneCapture, cfg: GeoTaskConfig) -> list:
    key = ("index", cfg.cell_px)
    if key not in scene._cache:
        scene._cache[key] = [
            build_depth_index(scene.cloud, v.camera, cfg.cell_px, v.camera_id) for v in scene.views
        ]
    return scene._cache[key]


def visibility_matrix(scene: SceneCapture, cfg: GeoTaskConfig, min_margin_px: float = 0.0) -> np.ndarray:
    """Boolean (points x views) visibility of every cloud point."""
    key = ("vis", cfg.cell_px, cfg.visibility_tol, cfg.margin, float(min_margin_px))
    if key not in scene._cache:
        idx = depth_indices(scene, cfg)
        scene._cache[key] = np.stack([
            visible_mask(scene.cloud.positions, v.camera, i, cfg.visibility_tol, cfg.margin, min_margin_px)
            for v, i in zip(scene.views, idx)
        ], axis=1)
    return scene._cache[key]


# --- sampling primitives ----------------------------------------------------

def sample_covisible_point(
    scene: SceneCapture,
    min_views: int,
    rng: np.random.Generator,
    cfg: GeoTaskConfig | None = None,
    min_margin_px: float = 0.0,
) -> tuple[np.ndarray, list[int]]:
    """Rejection-sample a cloud point visible in at least ``min_views`` views.

    Returns the point and the indices of every view that sees it.
    """
    cfg = cfg or GeoTaskConfig()
    if min_views < 3:
        raise ValueError("min_views must be at least 3")
    if min_views > len(scene.views) or len(scene.cloud) == 0:
        raise NoCovisiblePoint(f"{scene.scene_id}: {min_views} views requested, {len(scene.views)} available")
    vis = visibility_matrix(scene, cfg, min_margin_px)
    counts = vis.sum(axis=1)
    for _ in range(cfg.max_attempts):
        i = int(rng.integers(len(scene.cloud)))
        if counts[i] >= min_views:
            return scene.cloud.positions[i].copy(), [int(j) for j in np.flatnonzero(vis[i])]
    raise NoCovisiblePoint(f"{scene.scene_id}: no point seen by {min_views} views in {cfg.max_attempts} draws")


def make_point_distractors(
    target: tuple[float, float],
    width: int,
    height: int,
    k: int,
    min_sep: float,
    rng: np.random.Generator,
    extent: float = 10.0,
    max_attempts: int = 200,
) -> list[tuple[float, float]]:
    """``k`` pixels pairwise (and from ``target``) at least ``min_sep`` x diagonal apart."""
    if k == 0:
        return []
    d = min_sep * math.hypot(width, height)
    lo_u, hi_u, lo_v, hi_v = extent, width - 1 - extent, extent, height - 1 - extent
    if hi_u <= lo_u or hi_v <= lo_v:
        raise CannotSeparate("image too small for the marker extent")
    # discs of radius d/2 around every point must fit in the dilated safe area
    if (k + 1) * math.pi * (d / 2) ** 2 > (hi_u - lo_u + d) * (hi_v - lo_v + d):
        raise CannotSeparate(f"{k + 1} points cannot be {d:.0f} px apart in {width}x{height}")
    t = np.asarray(target, dtype=np.float64)
    for _ in range(max_attempts):
        pts = [t]
        for _ in range(50 * (k + 1)):
            c = np.array([rng.uniform(lo_u, hi_u), rng.uniform(lo_v, hi_v)])
            if all(np.hypot(*(c - p)) >= d for p in pts):
                pts.append(c)
                if len(pts) == k + 1:
                    return [(float(p[0]), float(p[1])) for p in pts[1:]]
    raise CannotSeparate(f"could not place {k} distractors {d:.0f} px apart")


def circular_distance(a: float, b: float) -> float:
    d = abs(a - b) % (2 * math.pi)
    return min(d, 2 * math.pi - d)


def make_direction_distractors(
    target_angle: float, k: int, min_ang: float, rng: np.random.Generator
) -> list[float]:
    """``k`` angles with every pairwise circular gap (target included) at least ``min_ang``.

    Gaps between consecutive angles are ``min_ang`` plus a Dirichlet share of the
    slack, which samples the feasible set without rejection.
    """
    if k == 0:
        return []
    slack = 2 * math.pi - (k + 1) * min_ang
    if slack < -1e-12:
        raise CannotSeparate(f"{k + 1} directions cannot be {min_ang:.3f} rad apart")
    shares = rng.dirichlet(np.ones(k + 1)) * max(slack, 0.0)
    gaps = min_ang + shares
    angles = (target_angle + np.cumsum(gaps[:-1])) % (2 * math.pi)
    return [float(a) for a in rng.permutation(angles)]


def projection_jacobian(X: np.ndarray, cam: CameraParams) -> np.ndarray:
    """d(pixel)/d(world point), 2x3."""
    xc, yc, zc = to_camera_frame(X, cam)
    jc = np.array([
        [cam.fx / zc, 0.0, -cam.fx * xc / zc**2],
        [0.0, cam.fy / zc, -cam.fy * yc / zc**2],
    ])
    return jc @ cam.rotation


def projected_angle(X: np.ndarray, direction: np.ndarray, cam: CameraParams) -> tuple[float, float]:
    """Image-plane angle of ``direction`` at ``X`` and its foreshortening ratio in [0, 1]."""
    J = projection_jacobian(X, cam)
    d = J @ direction
    length = float(np.hypot(*d))
    if length < 1e-6:
        raise DegenerateProjection("direction projects to less than 1e-6 px")
    ratio = length / float(np.linalg.svd(J, compute_uv=False)[0])
    return math.atan2(d[1], d[0]) % (2 * math.pi), ratio


def fundamental_matrix(cam_a: CameraParams, cam_b: CameraParams) -> np.ndarray:
    """F with x_b^T F x_a = 0 for corresponding homogeneous pixels."""
    r = cam_b.rotation @ cam_a.rotation.T
    t = cam_b.translation - r @ cam_a.translation
    tx = np.array([[0, -t[2], t[1]], [t[2], 0, -t[0]], [-t[1], t[0], 0]])
    return np.linalg.inv(cam_b.K).T @ tx @ r @ np.linalg.inv(cam_a.K)


def epipolar_distance(q_a: np.ndarray, cam_a: CameraParams, p_b: np.ndarray, cam_b: CameraParams) -> float:
    """Distance in view b from ``p_b`` to the epipolar line of pixel ``q_a``."""
    line = fundamental_matrix(cam_a, cam_b) @ np.array([q_a[0], q_a[1], 1.0])
    return abs(line @ np.array([p_b[0], p_b[1], 1.0])) / math.hypot(line[0], line[1])


# --- generators ----------------------------------------------------------------

def _pixel(X: np.ndarray, cam: CameraParams) -> tuple[float, float]:
    p, _ = project_point(X, cam)
    return float(p[0]), float(p[1])


def _point_marker(pixel, color: str, cfg: GeoTaskConfig) -> MarkerAnnotation:
    return MarkerAnnotation("point", pixel, color, size=cfg.marker_radius)


def gen_point_correspondence(scene: SceneCapture, cfg: GeoTaskConfig, rng: np.random.Generator) -> RawTask:
    k = cfg.n_choices[POINT_CORRESPONDENCE]
    n_ref = cfg.n_reference_views[POINT_CORRESPONDENCE]
    extent = cfg.marker_radius + 2  # rendered reach; visibility checks pad one more pixel
    X, ids = sample_covisible_point(scene, max(n_ref + 1, cfg.min_views), rng, cfg, extent + 1)
    chosen = [int(i) for i in rng.permutation(ids)[: n_ref + 1]]
    refs, target = chosen[:-1], chosen[-1]
    ref_views = [(scene.views[i], (_point_marker(_pixel(X, scene.views[i].camera), REFERENCE_COLOR, cfg),))
                 for i in refs]
    tv = scene.views[target]
    true_px = _pixel(X, tv.camera)
    distractors = make_point_distractors(true_px, tv.width, tv.height, k - 1,
                                         cfg.min_pixel_separation, rng, extent)
    colors = [str(c) for c in rng.choice(COLORS, size=k, replace=False)]
    markers = [_point_marker(p, c, cfg) for p, c in zip([true_px, *distractors], colors)]
    return RawTask(
        POINT_CORRESPONDENCE,
        reference_views=ref_views,
        candidate_views=[(tv, markers)],
        correct_index=0,
        choice_colors=tuple(colors),
        provenance={
            "source_id": scene.scene_id,
            "point": X.tolist(),
            "reference_views": [scene.views[i].camera_id for i in refs],
            "target_view": tv.camera_id,
            "target_index": target,
        },
    )


def gen_directional_correspondence(scene: SceneCapture, cfg: GeoTaskConfig, rng: np.random.Generator) -> RawTask:
    k = cfg.n_choices[DIRECTIONAL_CORRESPONDENCE]
    n_ref = cfg.n_reference_views[DIRECTIONAL_CORRESPONDENCE]
    extent = cfg.arrow_length + 8
    X, ids = sample_covisible_point(scene, max(n_ref + 1, cfg.min_views), rng, cfg, extent + 1)
    chosen = [int(i) for i in rng.permutation(ids)[: n_ref + 1]]
    cams = [scene.views[i].camera for i in chosen]
    for _ in range(100):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        try:
            proj = [projected_angle(X, d, c) for c in cams]
        except DegenerateProjection:
            continue
        if min(r for _, r in proj) >= cfg.min_foreshortening:
            break
    else:
        raise DegenerateProjection(f"{scene.scene_id}: no legible direction at the sampled anchor")
    angles = [a for a, _ in proj]
    ref_views = []
    for i, a in zip(chosen[:-1], angles[:-1]):
        v = scene.views[i]
        ref_views.append((v, (MarkerAnnotation("arrow", _pixel(X, v.camera), REFERENCE_COLOR, a,
                                               cfg.arrow_length),)))
    tv = scene.views[chosen[-1]]
    anchor = _pixel(X, tv.camera)
    cand_angles = [angles[-1], *make_direction_distractors(angles[-1], k - 1, cfg.min_angular_separation, rng)]
    colors = [str(c) for c in rng.choice(COLORS, size=k, replace=False)]
    markers = [MarkerAnnotation("arrow", anchor, c, a, cfg.arrow_length) for a, c in zip(cand_angles, colors)]
    return RawTask(
        DIRECTIONAL_CORRESPONDENCE,
        reference_views=ref_views,
        candidate_views=[(tv, markers)],
        correct_index=0,
        choice_colors=tuple(colors),
        provenance={
            "source_id": scene.scene_id,
            "point": X.tolist(),
            "direction": d.tolist(),
            "reference_views": [scene.views[i].camera_id for i in chosen[:-1]],
            "target_view": tv.camera_id,
            "target_index": chosen[-1],
        },
    )


def gen_spatial_verification(
    scene: SceneCapture, cfg: GeoTaskConfig, rng: np.random.Generator, n_views: int | None = None
) -> RawTask:
    n = int(rng.choice(cfg.spatial_choice_mix)) if n_views is None else n_views
    if n < 3:
        raise ValueError("spatial verification needs at least 3 views")
    extent = cfg.marker_radius + 2  # rendered reach; visibility checks pad one more pixel
    X, ids = sample_covisible_point(scene, n, rng, cfg, extent + 1)
    chosen = [int(i) for i in rng.permutation(ids)[:n]]
    odd = int(rng.integers(n))
    cams = [scene.views[i].camera for i in chosen]
    pixels = [np.array(_pixel(X, c)) for c in cams]
    thresholds = [cfg.min_pixel_separation * c.diagonal for c in cams]
    cam_o = cams[odd]
    lo, hi_u, hi_v = extent, cam_o.width - 1 - extent, cam_o.height - 1 - extent
    for _ in range(cfg.max_attempts):
        q = np.array([rng.uniform(lo, hi_u), rng.uniform(lo, hi_v)])
        if np.hypot(*(q - pixels[odd])) < thresholds[odd]:
            continue
        # the ray through q must pass the true point's projection by the threshold in every other view
        if all(epipolar_distance(q, cam_o, pixels[j], cams[j]) >= thresholds[j] for j in range(n) if j != odd):
            break
    else:
        raise CannotSeparate(f"{scene.scene_id}: no inconsistent marker placement found")
    marks = [tuple(p) for p in pixels]
    marks[odd] = (float(q[0]), float(q[1]))
    cands = [(scene.views[i], (_point_marker(m, REFERENCE_COLOR, cfg),)) for i, m in zip(chosen, marks)]
    return RawTask(
        SPATIAL_VERIFICATION,
        reference_views=(),
        candidate_views=cands,
        correct_index=odd,
        provenance={
            "source_id": scene.scene_id,
            "point": X.tolist(),
            "views": [scene.views[i].camera_id for i in chosen],
            "view_indices": chosen,
            "markers": [list(m) for m in marks],
        },
    )


def gen_viewpoint_localization(scene: SceneCapture, cfg: GeoTaskConfig, rng: np.random.Generator) -> RawTask:
    k = cfg.n_choices[VIEWPOINT_LOCALIZATION]
    n_ref = cfg.n_reference_views[VIEWPOINT_LOCALIZATION]
    n = len(scene.views)
    if n < k + 1:
        raise ValueError(f"{scene.scene_id}: {n} views cannot host {k} candidates and a reference")
    idx = depth_indices(scene, cfg)
    target = int(rng.integers(n))
    center = camera_center(scene.views[target].camera)
    extent = cfg.marker_radius + 2  # rendered reach; visibility checks pad one more pixel
    seen = [
        j for j in range(n)
        if j != target and visible_mask(center[None], scene.views[j].camera, idx[j], cfg.visibility_tol,
                                        cfg.margin, extent + 1)[0]
    ]
    if not seen:
        raise TargetCenterNotVisible(f"{scene.scene_id}: centre of view {target} not visible elsewhere")
    n_ref_eff = min(n_ref, len(seen), n - k)
    refs = [int(j) for j in rng.permutation(seen)[:n_ref_eff]]
    others = [j for j in range(n) if j != target and j not in refs]
    distractors = [int(j) for j in rng.permutation(others)[: k - 1]]
    ref_views = [(scene.views[j], (_point_marker(_pixel(center, scene.views[j].camera), REFERENCE_COLOR, cfg),))
                 for j in refs]
    cands = [(scene.views[j], ()) for j in [target, *distractors]]
    return RawTask(
        VIEWPOINT_LOCALIZATION,
        reference_views=ref_views,
        candidate_views=cands,
        correct_index=0,
        provenance={
            "source_id": scene.scene_id,
            "target_view": scene.views[target].camera_id,
            "camera_center": center.tolist(),
            "reference_views": [scene.views[j].camera_id for j in refs],
            "candidate_views": [scene.views[j].camera_id for j in [target, *distractors]],
        },
    )


GEO_GENERATORS = {
    POINT_CORRESPONDENCE: gen_point_correspondence,
    DIRECTIONAL_CORRESPONDENCE: gen_directional_correspondence,
    SPATIAL_VERIFICATION: gen_spatial_verification,
    VIEWPOINT_LOCALIZATION: gen_viewpoint_localization,
}
