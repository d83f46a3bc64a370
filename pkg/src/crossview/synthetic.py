"""Procedural scenes and trajectories with closed-form ground truth.

These fixtures double as independent oracles: :func:`brute_force_visible` and
:func:`triangulate_dlt` share no code path with the engine's depth index or
projection helpers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .geometry import CameraParams, PointCloud, look_at
from .scene import CameraMeta, Frame, SceneCapture, Trajectory, View

# --- ring scenes -------------------------------------------------------------


@dataclass(frozen=True)
class RingSceneConfig:
    n_cameras: int = 12
    radius: float = 0.8
    camera_height: float = 0.3
    look_at_height: float = 0.15
    object: str = "sphere"
    object_size: float = 0.2  # sphere radius or box half-extent (m)
    n_points: int = 100_000
    width: int = 640
    height: int = 480
    focal: float = 500.0
    seed: int = 0
    scene_id: str | None = None

    def validate(self) -> None:
        if self.n_cameras < 3:
            raise ConfigError("ring scene needs at least 3 cameras")
        if self.object not in ("sphere", "box"):
            raise ConfigError(f"unknown object {self.object!r}")
        extent = self.object_size * (math.sqrt(2) if self.object == "box" else 1.0)
        if self.radius <= extent:
            raise ConfigError("ring radius must exceed the object extent")
        if self.n_points < 1 or self.focal <= 0 or self.width < 8 or self.height < 8:
            raise ConfigError("invalid point count or image geometry")


def ring_cameras(cfg: RingSceneConfig) -> list[CameraParams]:
    cams = []
    for k in range(cfg.n_cameras):
        a = 2 * math.pi * k / cfg.n_cameras
        center = (cfg.radius * math.cos(a), cfg.radius * math.sin(a), cfg.camera_height)
        cams.append(look_at(center, (0.0, 0.0, cfg.look_at_height), fx=cfg.focal, width=cfg.width, height=cfg.height))
    return cams


def _sphere_surface(n: int, r: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    # Fibonacci lattice under a random rotation: near-uniform spacing, no clumps
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    phi = math.pi * (3 - math.sqrt(5)) * i
    s = np.sqrt(1 - z * z)
    normals = np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    normals = normals @ q.T
    return normals * r, normals


def _box_surface(n: int, h: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    face = rng.integers(0, 6, size=n)
    axis, sign = face // 2, np.where(face % 2 == 0, 1.0, -1.0)
    pts = rng.uniform(-h, h, size=(n, 3))
    pts[np.arange(n), axis] = sign * h
    normals = np.zeros((n, 3))
    normals[np.arange(n), axis] = sign
    return pts, normals


def _surface_colors(points: np.ndarray) -> np.ndarray:
    az = np.arctan2(points[:, 1], points[:, 0])
    el = points[:, 2] / (np.abs(points).max() + 1e-12)
    r = 127 + 100 * np.cos(az)
    g = 127 + 100 * np.cos(az + 2.1)
    b = 127 + 100 * el
    checker = ((np.floor(az * 6 / math.pi) + np.floor(el * 4)) % 2) * 30
    return np.clip(np.stack([r, g, b + checker], axis=1) - checker[:, None] / 2, 0, 255).astype(np.uint8)


def render_cloud(cloud: PointCloud, normals: np.ndarray | None, cam: CameraParams) -> np.ndarray:
    """Flat-shaded point splatting with a per-pixel z-buffer (legibility only)."""
    h, w = cam.height, cam.width
    yy = np.linspace(200, 150, h)[:, None, None]
    img = np.broadcast_to(yy, (h, w, 3)).astype(np.float64).copy()
    img[..., 2] += 15
    pc = cloud.positions @ cam.rotation.T + cam.translation
    front = pc[:, 2] > 1e-6
    pc = pc[front]
    u = np.floor(cam.fx * pc[:, 0] / pc[:, 2] + cam.cx).astype(np.int64)
    v = np.floor(cam.fy * pc[:, 1] / pc[:, 2] + cam.cy).astype(np.int64)
    colors = cloud.colors[front] if cloud.colors is not None else np.full((len(pc), 3), 180, np.uint8)
    shade = np.ones(len(pc))
    if normals is not None:
        view_dir = -(pc / np.linalg.norm(pc, axis=1, keepdims=True))
        n_cam = normals[front] @ cam.rotation.T
        shade = 0.35 + 0.65 * np.clip(np.sum(n_cam * view_dir, axis=1), 0, 1)
    col = colors * shade[:, None]
    # 2x2 splats close the gaps between samples
    us = np.concatenate([u, u + 1, u, u + 1])
    vs = np.concatenate([v, v, v + 1, v + 1])
    zs = np.tile(pc[:, 2], 4)
    cs = np.tile(col, (4, 1))
    ok = (us >= 0) & (us < w) & (vs >= 0) & (vs < h)
    us, vs, zs, cs = us[ok], vs[ok], zs[ok], cs[ok]
    order = np.lexsort((zs, vs * w + us))
    flat = (vs * w + us)[order]
    first = np.ones(len(flat), dtype=bool)
    first[1:] = flat[1:] != flat[:-1]
    sel = order[first]
    img[vs[sel], us[sel]] = cs[sel]
    return np.clip(img, 0, 255).astype(np.uint8)


def make_ring_scene(cfg: RingSceneConfig = RingSceneConfig()) -> SceneCapture:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    if cfg.object == "sphere":
        pts, normals = _sphere_surface(cfg.n_points, cfg.object_size, rng)
    else:
        pts, normals = _box_surface(cfg.n_points, cfg.object_size, rng)
    # float32 storage so the in-memory scene equals its PLY round trip
    pts = pts.astype(np.float32).astype(np.float64)
    cloud = PointCloud(pts, _surface_colors(pts))
    scene_id = cfg.scene_id or f"ring_{cfg.object}_{cfg.seed:03d}"
    views = []
    for k, cam in enumerate(ring_cameras(cfg)):
        views.append(View(
            image_ref=f"synth://{scene_id}/cam_{k:02d}",
            width=cfg.width, height=cfg.height, camera=cam,
            camera_id=f"cam_{k:02d}", pixels=render_cloud(cloud, normals, cam),
        ))
    return SceneCapture(scene_id, cfg.object, tuple(views), cloud)


def brute_force_visible(
    X: Sequence[float],
    cam: CameraParams,
    cloud: PointCloud,
    tol: float = 0.02,
    margin: float = 0.02,
    cell_px: int = 4,
) -> bool:
    """Exhaustive occlusion test against every cloud point.

    ``X`` is visible when it lies in front of the camera, inside the image minus
    ``margin``, and no in-frame cloud point landing in the same ``cell_px`` pixel
    block is nearer than ``depth(X) - tol``.
    """
    P = cam.K @ np.hstack([cam.rotation, cam.translation[:, None]])
    xh = P @ np.append(np.asarray(X, dtype=np.float64), 1.0)
    depth = xh[2]
    if not depth > 1e-9:
        return False
    u, v = xh[0] / depth, xh[1] / depth
    mx, my = margin * cam.width, margin * cam.height
    if not (mx <= u < cam.width - mx and my <= v < cam.height - my):
        return False
    block = (math.floor(v / cell_px), math.floor(u / cell_px))
    for chunk in np.array_split(cloud.positions, max(1, len(cloud) // 50_000)):
        ph = np.hstack([chunk, np.ones((len(chunk), 1))]) @ P.T
        z = ph[:, 2]
        front = z > 1e-9
        pu = ph[front, 0] / z[front]
        pv = ph[front, 1] / z[front]
        zf = z[front]
        inside = (pu >= 0) & (pu < cam.width) & (pv >= 0) & (pv < cam.height)
        same = inside & (np.floor(pv / cell_px) == block[0]) & (np.floor(pu / cell_px) == block[1])
        if np.any(zf[same] < depth - tol):
            return False
    return True


def triangulate_dlt(pixels: Sequence[Sequence[float]], cams: Sequence[CameraParams]) -> np.ndarray:
    """Linear least-squares triangulation from two or more calibrated views."""
    rows = []
    for (u, v), cam in zip(pixels, cams):
        P = cam.K @ np.hstack([cam.rotation, cam.translation[:, None]])
        rows.append(u * P[2] - P[0])
        rows.append(v * P[2] - P[1])
    _, _, vt = np.linalg.svd(np.asarray(rows))
    X = vt[-1]
    return X[:3] / X[3]


def reprojection_px(X: Sequence[float], cam: CameraParams) -> np.ndarray:
    P = cam.K @ np.hstack([cam.rotation, cam.translation[:, None]])
    xh = P @ np.append(np.asarray(X, dtype=np.float64), 1.0)
    return xh[:2] / xh[2]


# --- scripted trajectories ---------------------------------------------------

# camera_id, mount, side, position (world, m), description keys
RIG = (
    ("high", "overhead", None, (0.0, 0.0, 1.0), ("overhead",)),
    ("left_wrist", "wrist", "left", (-0.45, 0.1, 0.6), ("wrist_left", "wrist")),
    ("right_wrist", "wrist", "right", (0.45, 0.1, 0.6), ("wrist_right", "wrist")),
    ("front", "external", None, (0.0, 1.2, 0.6), ("external",)),
    ("back", "base", None, (0.0, -0.8, 0.4), ("base",)),
)


@dataclass(frozen=True)
class ScriptedTrajectoryConfig:
    traj_id: str = "traj_000"
    dataset_tag: str = "synthetic"
    n_cameras: int = 4
    duration: float = 25.0
    control_hz: float = 5.0
    # piecewise-linear end-effector path: ((t, (x, y, z)), ...); constant at the ends
    waypoints: tuple = ((0.0, (0.0, 0.0, 0.0)),)
    repaint_amplitude: float = 40.0
    repaint_period: float = 20.0
    width: int = 160
    height: int = 120
    with_actions: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.duration < 0 or self.control_hz <= 0:
            raise ConfigError("duration must be >= 0 and control_hz > 0")
        if not 1 <= self.n_cameras <= len(RIG):
            raise ConfigError(f"n_cameras must be in [1, {len(RIG)}]")
        ts = [w[0] for w in self.waypoints]
        if not ts or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ConfigError("waypoint times must be strictly increasing")


def path_position(waypoints: Sequence, t: np.ndarray) -> np.ndarray:
    ts = np.array([w[0] for w in waypoints], dtype=np.float64)
    ps = np.array([w[1] for w in waypoints], dtype=np.float64)
    return np.stack([np.interp(t, ts, ps[:, k]) for k in range(3)], axis=1)


def rig_extrinsics(position: Sequence[float], width: int, height: int) -> CameraParams:
    # every rig camera looks along world +y; relative directions follow from positions
    p = np.asarray(position, dtype=np.float64)
    return look_at(p, p + (0.0, 1.0, 0.0), fx=0.8 * width, width=width, height=height)


def rig_meta(n_cameras: int, width: int, height: int) -> dict[str, CameraMeta]:
    return {
        cid: CameraMeta(cid, mount, side, rig_extrinsics(pos, width, height), keys)
        for cid, mount, side, pos, keys in RIG[:n_cameras]
    }


class _FrameRenderer:
    """Deterministic image synthesis for one scripted trajectory."""

    def __init__(self, cfg: ScriptedTrajectoryConfig, states: np.ndarray, timestamps: np.ndarray):
        self.cfg, self.states, self.ts = cfg, states, timestamps
        h, w = cfg.height, cfg.width
        self.yy, self.xx = np.mgrid[0:h, 0:w].astype(np.float64)
        self.render = lru_cache(maxsize=256)(self._render)

    def _base(self, cam: int) -> tuple[np.ndarray, tuple[float, float]]:
        rng = np.random.default_rng([self.cfg.seed, cam, 7])
        img = np.full(self.xx.shape, 110.0)
        for _ in range(4):
            kx, ky = rng.uniform(-3, 3, size=2)
            img += rng.uniform(10, 25) * np.sin(2 * np.pi * (kx * self.xx / self.cfg.width + ky * self.yy / self.cfg.height)
                                                + rng.uniform(0, 2 * np.pi))
        return img, tuple(rng.uniform(0.5, 2.5, size=2))

    def _render(self, cam: int, index: int) -> np.ndarray:
        cfg = self.cfg
        base, (kx, ky) = self._base(cam)
        t = self.ts[index]
        phase = 2 * np.pi * t / cfg.repaint_period
        img = base + cfg.repaint_amplitude * np.sin(
            2 * np.pi * (kx * self.xx / cfg.width + ky * self.yy / cfg.height) + phase
        )
        # end-effector blob, 100 px per metre from each camera's nominal viewpoint
        s = self.states[index]
        sign = -1.0 if cam % 2 else 1.0
        cu = cfg.width / 2 + sign * 100 * s[0] + 40 * s[1]
        cv = cfg.height / 2 - 100 * s[2] + 20 * s[1]
        blob = (self.xx - cu) ** 2 + (self.yy - cv) ** 2 < 12**2
        img[blob] = 25.0 + 10 * cam
        rgb = np.stack([img, img * 0.9 + 12 * cam, img * 0.8 + 20], axis=-1)
        return np.clip(np.round(rgb), 0, 255).astype(np.uint8)


def make_synthetic_trajectory(cfg: ScriptedTrajectoryConfig = ScriptedTrajectoryConfig()) -> Trajectory:
    cfg.validate()
    n = int(math.floor(cfg.duration * cfg.control_hz + 1e-9)) + 1
    ts = np.arange(n) / cfg.control_hz
    states = path_position(cfg.waypoints, ts)
    actions = np.vstack([np.zeros((1, 3)), np.diff(states, axis=0)]) if cfg.with_actions else None
    metas = rig_meta(cfg.n_cameras, cfg.width, cfg.height)
    cam_ids = list(metas)
    frames = tuple(
        Frame(float(t), {cid: f"synth://{cfg.traj_id}/{cid}/{k}" for cid in cam_ids})
        for k, t in enumerate(ts)
    )
    renderer = _FrameRenderer(cfg, states, ts)
    index_of = {cid: i for i, cid in enumerate(cam_ids)}

    def loader(ref: str) -> np.ndarray:
        _, _, traj_id, cid, k = ref.split("/")
        if traj_id != cfg.traj_id:
            raise KeyError(ref)
        return renderer.render(index_of[cid], int(k))

    return Trajectory(
        traj_id=cfg.traj_id,
        dataset_tag=cfg.dataset_tag,
        frames=frames,
        control_hz=cfg.control_hz,
        camera_meta=metas,
        states=states,
        actions=actions,
        loader=loader,
    )


def random_waypoints(rng: np.random.Generator, duration: float, speed_scale: float = 1.0,
                     every: float = 4.0) -> tuple:
    n = int(math.ceil(duration / every)) + 1
    pts = rng.uniform(-0.3, 0.3, size=(n, 3)) * speed_scale
    return tuple((float(k * every), tuple(float(c) for c in p)) for k, p in enumerate(pts))


# --- fixture corpora ---------------------------------------------------------


@dataclass(frozen=True)
class FixtureCorpusConfig:
    n_scenes: int = 3
    n_trajectories: int = 12
    seed: int = 0
    scene: RingSceneConfig = field(default_factory=RingSceneConfig)
    trajectory: ScriptedTrajectoryConfig = field(default_factory=ScriptedTrajectoryConfig)


def fixture_scenes(cfg: FixtureCorpusConfig) -> list[SceneCapture]:
    objects = ("sphere", "box")
    out = []
    for i in range(cfg.n_scenes):
        sc = RingSceneConfig(**{**cfg.scene.__dict__, "object": objects[i % 2],
                                "seed": cfg.seed * 1000 + i, "scene_id": f"ring_{i:03d}"})
        out.append(make_ring_scene(sc))
    return out


def fixture_trajectories(cfg: FixtureCorpusConfig) -> list[Trajectory]:
    rng = np.random.default_rng([cfg.seed, 99])
    out = []
    for i in range(cfg.n_trajectories):
        scale = 0.5 + 1.5 * (i + 1) / cfg.n_trajectories
        tc = ScriptedTrajectoryConfig(**{
            **cfg.trajectory.__dict__,
            "traj_id": f"traj_{i:03d}",
            "waypoints": random_waypoints(rng, cfg.trajectory.duration, scale),
            "seed": cfg.seed * 1000 + i,
        })
        out.append(make_synthetic_trajectory(tc))
    return out


def write_fixture_corpus(cfg: FixtureCorpusConfig, out_dir: str | Path) -> dict[str, list[str]]:
    """Write capture and trajectory manifests that :mod:`crossview.ingest` can load."""
    from .ingest import write_capture_manifest, write_trajectory_manifest

    out_dir = Path(out_dir)
    captures = [str(write_capture_manifest(s, out_dir / "captures" / s.scene_id)) for s in fixture_scenes(cfg)]
    trajs = [str(write_trajectory_manifest(t, out_dir / "trajectories" / t.traj_id))
             for t in fixture_trajectories(cfg)]
    return {"captures": captures, "trajectories": trajs}
