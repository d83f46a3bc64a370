"""Observation containers: calibrated views, scene captures and robot trajectories."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from PIL import Image

from .errors import MissingImage, TimestampOutOfRange
from .geometry import CameraParams, PointCloud

MOUNTS = ("wrist", "external", "overhead", "base")
SIDES = ("left", "right")

ImageLoader = Callable[[str], np.ndarray]


def read_image(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except FileNotFoundError as exc:
        raise MissingImage(f"image not found: {path}") from exc


def write_png(path: str | Path, pixels: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(path, format="PNG", compress_level=1)


@dataclass(frozen=True, eq=False)
class View:
    image_ref: str
    width: int
    height: int
    camera: CameraParams | None = None
    camera_id: str | None = None
    timestamp: float | None = None
    pixels: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.camera is not None and (self.camera.width, self.camera.height) != (self.width, self.height):
            raise ValueError(f"camera size does not match view size for {self.image_ref}")

    def image(self) -> np.ndarray:
        if self.pixels is not None:
            return self.pixels
        return read_image(self.image_ref)


@dataclass(frozen=True, eq=False)
class SceneCapture:
    scene_id: str
    category: str
    views: tuple[View, ...]
    cloud: PointCloud
    # (camera index, cell_px, ...) -> derived read-only structures
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "views", tuple(self.views))
        for v in self.views:
            if v.camera is None:
                raise ValueError(f"scene {self.scene_id}: view {v.image_ref} is not calibrated")

    @property
    def point_count(self) -> int:
        return len(self.cloud)

    @property
    def cameras(self) -> list[CameraParams]:
        return [v.camera for v in self.views]


@dataclass(frozen=True)
class CameraMeta:
    camera_id: str
    mount: str
    side: str | None = None
    extrinsics: CameraParams | None = field(default=None, compare=False)
    description_keys: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.mount not in MOUNTS:
            raise ValueError(f"unknown mount {self.mount!r}")
        if self.side is not None and self.side not in SIDES:
            raise ValueError(f"unknown side {self.side!r}")
        object.__setattr__(self, "description_keys", tuple(self.description_keys))


@dataclass(frozen=True)
class Frame:
    timestamp: float
    images: Mapping[str, str]


@dataclass(frozen=True, eq=False)
class Trajectory:
    traj_id: str
    dataset_tag: str
    frames: tuple[Frame, ...]
    control_hz: float
    camera_meta: Mapping[str, CameraMeta]
    states: np.ndarray | None = None
    actions: np.ndarray | None = None
    loader: ImageLoader | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", tuple(self.frames))
        for name in ("states", "actions"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=np.float64)
                if arr.ndim == 1:
                    arr = arr[:, None]
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([f.timestamp for f in self.frames])

    @property
    def duration(self) -> float:
        return self.frames[-1].timestamp - self.frames[0].timestamp if self.frames else 0.0

    @property
    def camera_ids(self) -> list[str]:
        """Cameras present on every frame, sorted."""
        if not self.frames:
            return []
        common = set(self.frames[0].images)
        for f in self.frames[1:]:
            common &= set(f.images)
        return sorted(common)

    def frame_index(self, t: float) -> int:
        """Index of the frame nearest to ``t``; half a control period of slack at both ends."""
        ts = self.timestamps
        slack = 0.5 / self.control_hz
        if not len(ts) or t < ts[0] - slack or t > ts[-1] + slack:
            raise TimestampOutOfRange(f"{self.traj_id}: t={t} outside recorded range")
        return int(np.argmin(np.abs(ts - t)))

    def image(self, ref: str) -> np.ndarray:
        if self.loader is not None:
            return self.loader(ref)
        return read_image(ref)

    def view(self, index: int, camera_id: str) -> View:
        """Materialise one camera image of one frame as a :class:`View`."""
        frame = self.frames[index]
        ref = frame.images[camera_id]
        pixels = self.image(ref)
        meta = self.camera_meta.get(camera_id)
        cam = meta.extrinsics if meta is not None else None
        if cam is not None and (cam.width, cam.height) != (pixels.shape[1], pixels.shape[0]):
            cam = None
        return View(
            image_ref=ref,
            width=pixels.shape[1],
            height=pixels.shape[0],
            camera=cam,
            camera_id=camera_id,
            timestamp=frame.timestamp,
            pixels=pixels,
        )
