"""Pinhole cameras, projection, occlusion-aware visibility and relative pose.

Camera frame convention: +x right, +y down, +z forward. ``rotation`` and
``translation`` map world coordinates into the camera frame,
``X_cam = R @ X_world + t``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CoincidentCenters, DegenerateDepth, NonPositiveDepth

DEPTH_EPS = 1e-9

LEFT, RIGHT, FRONT, BACK = "left", "right", "front", "back"
DIRECTIONS = (LEFT, RIGHT, FRONT, BACK)
AMBIGUOUS = "ambiguous"
OPPOSITE = {LEFT: RIGHT, RIGHT: LEFT, FRONT: BACK, BACK: FRONT}


@dataclass(frozen=True, eq=False)
class CameraParams:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self) -> None:
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-9) or np.linalg.det(rot) < 0:
            raise ValueError("rotation must be orthonormal with determinant +1")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def to_dict(self) -> dict:
        return {
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "rotation": [float(v) for v in self.rotation.ravel()],
            "translation": [float(v) for v in self.translation],
            "width": int(self.width),
            "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraParams":
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            rotation=np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3),
            translation=np.asarray(d["translation"], dtype=np.float64),
            width=int(d["width"]),
            height=int(d["height"]),
        )

    def same_as(self, other: "CameraParams") -> bool:
        return self.to_dict() == other.to_dict()


@dataclass(frozen=True, eq=False)
class PointCloud:
    positions: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self) -> None:
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pos)):
            raise ValueError("point cloud contains non-finite coordinates")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        if self.colors is not None:
            col = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(col) != len(pos):
                raise ValueError("colors and positions differ in length")
            col.setflags(write=False)
            object.__setattr__(self, "colors", col)

    def __len__(self) -> int:
        return len(self.positions)


@dataclass(frozen=True, eq=False)
class DepthIndex:
    """Nearest depth per ``cell_px`` x ``cell_px`` block of the image; ``inf`` marks empty cells."""

    grid: np.ndarray
    cell_px: int
    camera_id: str | None = None

    def cell_of(self, u: float, v: float) -> tuple[int, int]:
        return int(v // self.cell_px), int(u // self.cell_px)


def look_at(
    center: Sequence[float],
    target: Sequence[float],
    *,
    fx: float,
    fy: float | None = None,
    width: int,
    height: int,
    up: Sequence[float] = (0.0, 0.0, 1.0),
) -> CameraParams:
    """Camera at ``center`` looking at ``target`` with world ``up`` pointing image-up."""
    c = np.asarray(center, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - c
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-12:
        raise ValueError("viewing direction parallel to the up vector")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    return CameraParams(
        fx=fx,
        fy=fx if fy is None else fy,
        cx=width / 2.0,
        cy=height / 2.0,
        rotation=rot,
        translation=-rot @ c,
        width=width,
        height=height,
    )


def to_camera_frame(points: np.ndarray, cam: CameraParams) -> np.ndarray:
    return np.asarray(points, dtype=np.float64) @ cam.rotation.T + cam.translation


def project_points(points: np.ndarray, cam: CameraParams) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised projection; pixels for points at or behind the camera are NaN."""
    pc = to_camera_frame(np.asarray(points, dtype=np.float64).reshape(-1, 3), cam)
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.abs(z) >= DEPTH_EPS
        u = np.where(safe, cam.fx * pc[:, 0] / np.where(safe, z, 1.0) + cam.cx, np.nan)
        v = np.where(safe, cam.fy * pc[:, 1] / np.where(safe, z, 1.0) + cam.cy, np.nan)
    return np.stack([u, v], axis=1), z


def project_point(X: Sequence[float], cam: CameraParams) -> tuple[np.ndarray, float]:
    xc, yc, zc = to_camera_frame(np.asarray(X, dtype=np.float64), cam)
    if abs(zc) < DEPTH_EPS:
        raise DegenerateDepth(f"camera-frame depth {zc:.3g} is too close to zero")
    return np.array([cam.fx * xc / zc + cam.cx, cam.fy * yc / zc + cam.cy]), float(zc)


def back_project(pixel: Sequence[float], depth: float, cam: CameraParams) -> np.ndarray:
    if not depth > 0:
        raise NonPositiveDepth(f"depth must be positive, got {depth}")
    u, v = pixel
    pc = np.array([(u - cam.cx) * depth / cam.fx, (v - cam.cy) * depth / cam.fy, depth])
    return cam.rotation.T @ (pc - cam.translation)


def camera_center(cam: CameraParams) -> np.ndarray:
    return -cam.rotation.T @ cam.translation


def build_depth_index(
    cloud: PointCloud, cam: CameraParams, cell_px: int = 4, camera_id: str | None = None
) -> DepthIndex:
    """Splat every in-frame cloud point into its cell, keeping the minimum depth."""
    if cell_px < 1:
        raise ValueError("cell_px must be >= 1")
    rows = -(-cam.height // cell_px)
    cols = -(-cam.width // cell_px)
    grid = np.full((rows, cols), np.inf)
    if len(cloud):
        uv, z = project_points(cloud.positions, cam)
        with np.errstate(invalid="ignore"):
            ok = (
                (z > DEPTH_EPS)
                & (uv[:, 0] >= 0)
                & (uv[:, 0] < cam.width)
                & (uv[:, 1] >= 0)
                & (uv[:, 1] < cam.height)
            )
        r = (uv[ok, 1] // cell_px).astype(np.int64)
        c = (uv[ok, 0] // cell_px).astype(np.int64)
        np.minimum.at(grid, (r, c), z[ok])
    grid.setflags(write=False)
    return DepthIndex(grid=grid, cell_px=cell_px, camera_id=camera_id)


def _margins(cam: CameraParams, margin: float, min_margin_px: float) -> tuple[float, float]:
    return max(margin * cam.width, min_margin_px), max(margin * cam.height, min_margin_px)


def visibility_reasons(
    points: np.ndarray,
    cam: CameraParams,
    idx: DepthIndex,
    tol: float = 0.02,
    margin: float = 0.02,
    min_margin_px: float = 0.0,
) -> np.ndarray:
    """Per-point failure reason: ``""`` when visible, else behind/out_of_bounds/occluded."""
    uv, z = project_points(points, cam)
    mx, my = _margins(cam, margin, min_margin_px)
    reasons = np.full(len(z), "", dtype=object)
    front = z > DEPTH_EPS
    with np.errstate(invalid="ignore"):
        inside = (
            front
            & (uv[:, 0] >= mx)
            & (uv[:, 0] < cam.width - mx)
            & (uv[:, 1] >= my)
            & (uv[:, 1] < cam.height - my)
        )
    reasons[~front] = "behind"
    reasons[front & ~inside] = "out_of_bounds"
    if inside.any():
        r = (uv[inside, 1] // idx.cell_px).astype(np.int64)
        c = (uv[inside, 0] // idx.cell_px).astype(np.int64)
        nearest = idx.grid[r, c]
        occluded = ~(z[inside] <= nearest + tol)
        sub = reasons[inside]
        sub[occluded] = "occluded"
        reasons[inside] = sub
    return reasons


def visible_mask(
    points: np.ndarray,
    cam: CameraParams,
    idx: DepthIndex,
    tol: float = 0.02,
    margin: float = 0.02,
    min_margin_px: float = 0.0,
) -> np.ndarray:
    return visibility_reasons(points, cam, idx, tol, margin, min_margin_px) == ""


def visibility_reason(
    X: Sequence[float], cam: CameraParams, idx: DepthIndex, tol: float = 0.02, margin: float = 0.02
) -> str | None:
    """Verbose form of :func:`is_visible`: ``None`` when visible, else the failure reason."""
    reason = visibility_reasons(np.asarray(X, dtype=np.float64).reshape(1, 3), cam, idx, tol, margin)[0]
    return reason or None


def is_visible(
    X: Sequence[float], cam: CameraParams, idx: DepthIndex, tol: float = 0.02, margin: float = 0.02
) -> bool:
    return visibility_reason(X, cam, idx, tol, margin) is None


def relative_direction(
    ref: CameraParams, other: CameraParams, dead_zone: float = 0.5, floor: float = 0.05
) -> str:
    """Where ``other`` sits as seen from ``ref``: left/right/front/back or ``AMBIGUOUS``.

    Only the lateral (x) and axial (z) components count. The label is ambiguous when
    the weaker component exceeds ``dead_zone`` times the dominant one (near-diagonal
    placement) or the dominant component is shorter than ``floor`` metres.
    """
    c_ref, c_other = camera_center(ref), camera_center(other)
    if np.linalg.norm(c_other - c_ref) < 1e-6:
        raise CoincidentCenters("camera centres coincide")
    x, _, z = to_camera_frame(c_other, ref)
    dom, weak = (abs(x), abs(z)) if abs(x) >= abs(z) else (abs(z), abs(x))
    if dom < floor or weak > dead_zone * dom:
        return AMBIGUOUS
    if abs(x) >= abs(z):
        return RIGHT if x > 0 else LEFT
    return FRONT if z > 0 else BACK
