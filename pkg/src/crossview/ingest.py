"""Manifest loading, writing and dataset curation.

Capture manifest (JSON)::

    {"scene_id", "category", "cloud": "<ply path>",
     "views": [{"image", "fx", "fy", "cx", "cy", "rotation": [9 floats, row-major],
                "translation": [3 floats], "width", "height"}]}

Trajectory manifest (JSON)::

    {"traj_id", "dataset_tag", "control_hz",
     "cameras": [{"camera_id", "mount", "side"?, "description_keys": [...], "extrinsics"?}],
     "frames": [{"t", "images": {camera_id: path}}],
     "states": [[...]], "actions"?: [[...]]}

Relative paths are resolved against the manifest's directory.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import jsonschema
import numpy as np

from .errors import (
    CalibrationMismatch,
    MissingImage,
    NonMonotonicTimestamps,
    SchemaError,
    StateLengthMismatch,
)
from .geometry import CameraParams, PointCloud
from .scene import MOUNTS, SIDES, CameraMeta, Frame, SceneCapture, Trajectory, View, read_image, write_png
from .temporal import prefilter_bottom_quantile, trajectory_activity

log = logging.getLogger(__name__)

_NUM = {"type": "number"}
_CAMERA_PROPS = {
    "fx": _NUM, "fy": _NUM, "cx": _NUM, "cy": _NUM,
    "rotation": {"type": "array", "items": _NUM, "minItems": 9, "maxItems": 9},
    "translation": {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3},
    "width": {"type": "integer", "minimum": 1},
    "height": {"type": "integer", "minimum": 1},
}
_CAMERA_REQUIRED = ["fx", "fy", "cx", "cy", "rotation", "translation", "width", "height"]

CAPTURE_SCHEMA = {
    "type": "object",
    "required": ["scene_id", "category", "cloud", "views"],
    "properties": {
        "scene_id": {"type": "string"},
        "category": {"type": "string"},
        "cloud": {"type": "string"},
        "views": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["image", *_CAMERA_REQUIRED],
                "properties": {"image": {"type": "string"}, "camera_id": {"type": "string"}, **_CAMERA_PROPS},
            },
        },
    },
}

TRAJECTORY_SCHEMA = {
    "type": "object",
    "required": ["traj_id", "dataset_tag", "control_hz", "cameras", "frames", "states"],
    "properties": {
        "traj_id": {"type": "string"},
        "dataset_tag": {"type": "string"},
        "control_hz": {"type": "number", "exclusiveMinimum": 0},
        "cameras": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["camera_id", "mount"],
                "properties": {
                    "camera_id": {"type": "string"},
                    "mount": {"enum": list(MOUNTS)},
                    "side": {"enum": [*SIDES, None]},
                    "description_keys": {"type": "array", "items": {"type": "string"}},
                    "extrinsics": {"type": "object", "required": _CAMERA_REQUIRED, "properties": _CAMERA_PROPS},
                },
            },
        },
        "frames": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["t", "images"],
                "properties": {
                    "t": _NUM,
                    "images": {"type": "object", "additionalProperties": {"type": "string"}, "minProperties": 1},
                },
            },
        },
        "states": {"type": "array", "items": {"type": "array", "items": _NUM}},
        "actions": {"type": "array", "items": {"type": "array", "items": _NUM}},
    },
}


# --- PLY -------------------------------------------------------------------

_PLY_TYPES = {
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
    "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
}


def read_ply(path: str | Path) -> PointCloud:
    """Read vertices from a binary little-endian PLY file."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"point cloud not found: {path}")
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise SchemaError(f"{path} is not a PLY file")
        fmt, n_vertex, props, element = None, 0, [], None
        while True:
            line = fh.readline()
            if not line:
                raise SchemaError(f"{path}: truncated PLY header")
            parts = line.decode("ascii").split()
            if not parts or parts[0] == "comment":
                continue
            if parts[0] == "end_header":
                break
            if parts[0] == "format":
                fmt = parts[1]
            elif parts[0] == "element":
                element = parts[1]
                if element == "vertex":
                    n_vertex = int(parts[2])
            elif parts[0] == "property" and element == "vertex":
                if parts[1] == "list":
                    raise SchemaError(f"{path}: list properties on vertices are not supported")
                props.append((parts[2], "<" + _PLY_TYPES[parts[1]]))
        if fmt != "binary_little_endian":
            raise SchemaError(f"{path}: only binary_little_endian PLY is supported, got {fmt}")
        data = np.frombuffer(fh.read(np.dtype(props).itemsize * n_vertex), dtype=np.dtype(props), count=n_vertex)
    names = data.dtype.names
    if not {"x", "y", "z"} <= set(names):
        raise SchemaError(f"{path}: vertex element lacks x/y/z")
    positions = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    colors = None
    if {"red", "green", "blue"} <= set(names):
        colors = np.stack([data["red"], data["green"], data["blue"]], axis=1)
    return PointCloud(positions, colors)


def write_ply(path: str | Path, cloud: PointCloud) -> None:
    props = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if cloud.colors is not None:
        props += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    data = np.empty(len(cloud), dtype=props)
    for i, axis in enumerate("xyz"):
        data[axis] = cloud.positions[:, i]
    if cloud.colors is not None:
        for i, ch in enumerate(("red", "green", "blue")):
            data[ch] = cloud.colors[:, i]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(cloud)}"]
    header += [f"property {'float' if t == '<f4' else 'uchar'} {n}" for n, t in props]
    header.append("end_header")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(data.tobytes())


# --- loaders ---------------------------------------------------------------

def _read_manifest(path: str | Path, schema: dict) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise SchemaError(f"manifest not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path)
        raise SchemaError(f"{path}: {exc.message} at {where or '<root>'}") from exc
    return doc


def _camera(d: dict, where: str) -> CameraParams:
    try:
        return CameraParams.from_dict(d)
    except ValueError as exc:
        raise SchemaError(f"{where}: invalid camera ({exc})") from exc


def load_capture(manifest_path: str | Path) -> SceneCapture:
    manifest_path = Path(manifest_path)
    doc = _read_manifest(manifest_path, CAPTURE_SCHEMA)
    root = manifest_path.parent
    views = []
    for i, v in enumerate(doc["views"]):
        image_path = root / v["image"]
        if not image_path.exists():
            raise MissingImage(f"missing image: {image_path}")
        pixels = read_image(image_path)
        h, w = pixels.shape[:2]
        if (w, h) != (v["width"], v["height"]):
            raise CalibrationMismatch(
                f"{image_path}: decoded {w}x{h} but camera declares {v['width']}x{v['height']}"
            )
        cam = _camera(v, f"{manifest_path} view {i}")
        views.append(View(
            image_ref=str(image_path), width=w, height=h, camera=cam,
            camera_id=v.get("camera_id", f"view_{i:02d}"), pixels=pixels,
        ))
    cloud = read_ply(root / doc["cloud"])
    return SceneCapture(doc["scene_id"], doc["category"], tuple(views), cloud)


def load_trajectory(manifest_path: str | Path) -> Trajectory:
    manifest_path = Path(manifest_path)
    doc = _read_manifest(manifest_path, TRAJECTORY_SCHEMA)
    root = manifest_path.parent
    metas = {}
    for c in doc["cameras"]:
        cid = c["camera_id"]
        if cid in metas:
            raise SchemaError(f"{manifest_path}: duplicate camera_id {cid!r}")
        ext = _camera(c["extrinsics"], f"{manifest_path} camera {cid}") if "extrinsics" in c else None
        metas[cid] = CameraMeta(cid, c["mount"], c.get("side"), ext, tuple(c.get("description_keys", ())))
    frames = []
    for f in doc["frames"]:
        images = {}
        for cid, rel in sorted(f["images"].items()):
            p = root / rel
            if not p.exists():
                raise MissingImage(f"missing image: {p}")
            images[cid] = str(p)
        frames.append(Frame(float(f["t"]), images))
    ts = [f.timestamp for f in frames]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise NonMonotonicTimestamps(f"{manifest_path}: timestamps are not strictly increasing")
    states = doc["states"]
    if states and len(states) != len(frames):
        raise StateLengthMismatch(f"{manifest_path}: {len(states)} states for {len(frames)} frames")
    actions = doc.get("actions")
    if actions is not None and len(actions) != len(frames):
        raise StateLengthMismatch(f"{manifest_path}: {len(actions)} actions for {len(frames)} frames")
    return Trajectory(
        traj_id=doc["traj_id"],
        dataset_tag=doc["dataset_tag"],
        frames=tuple(frames),
        control_hz=float(doc["control_hz"]),
        camera_meta=metas,
        states=np.asarray(states, dtype=np.float64) if states else None,
        actions=np.asarray(actions, dtype=np.float64) if actions else None,
    )


# --- writers ---------------------------------------------------------------

def write_capture_manifest(scene: SceneCapture, out_dir: str | Path) -> Path:
    """Write images, cloud and manifest for ``scene`` under ``out_dir``."""
    out_dir = Path(out_dir)
    views = []
    for i, v in enumerate(scene.views):
        rel = f"images/{v.camera_id or f'view_{i:02d}'}.png"
        write_png(out_dir / rel, v.image())
        views.append({"image": rel, "camera_id": v.camera_id or f"view_{i:02d}", **v.camera.to_dict()})
    write_ply(out_dir / "cloud.ply", scene.cloud)
    doc = {"scene_id": scene.scene_id, "category": scene.category, "cloud": "cloud.ply", "views": views}
    path = out_dir / "capture.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def write_trajectory_manifest(traj: Trajectory, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    frames = []
    for k, f in enumerate(traj.frames):
        images = {}
        for cid, ref in sorted(f.images.items()):
            rel = f"images/{cid}/{k:05d}.png"
            write_png(out_dir / rel, traj.image(ref))
            images[cid] = rel
        frames.append({"t": f.timestamp, "images": images})
    cameras = []
    for cid in sorted(traj.camera_meta):
        m = traj.camera_meta[cid]
        entry = {"camera_id": cid, "mount": m.mount, "description_keys": list(m.description_keys)}
        if m.side is not None:
            entry["side"] = m.side
        if m.extrinsics is not None:
            entry["extrinsics"] = m.extrinsics.to_dict()
        cameras.append(entry)
    doc = {
        "traj_id": traj.traj_id,
        "dataset_tag": traj.dataset_tag,
        "control_hz": traj.control_hz,
        "cameras": cameras,
        "frames": frames,
        "states": traj.states.tolist() if traj.states is not None else [],
    }
    if traj.actions is not None:
        doc["actions"] = traj.actions.tolist()
    path = out_dir / "trajectory.json"
    path.write_text(json.dumps(doc, sort_keys=True) + "\n")
    return path


# --- curation --------------------------------------------------------------

@dataclass
class CurationCriteria:
    min_points: int = 1_000_000
    min_cameras: int = 3
    min_duration_s: float = 20.0
    activity_quantile: float = 0.20
    # dataset_tag -> minimum trajectory activity; computed from the input when absent
    activity_floor: dict[str, float] = field(default_factory=dict)


@dataclass
class CurationReport:
    rejected: list[tuple[str, str]]
    activity_floor: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "rejected": [{"id": i, "reason": r} for i, r in self.rejected],
            "activity_floor": self.activity_floor,
        }


def _camera_check(traj: Trajectory, min_cameras: int) -> str | None:
    ids = {frozenset(f.images) for f in traj.frames}
    if not traj.frames:
        return "min_duration"
    if len(ids) != 1:
        return "inconsistent_cameras"
    (cams,) = ids
    if len(cams) < min_cameras:
        return "min_views"
    if not cams <= set(traj.camera_meta):
        return "inconsistent_cameras"
    return None


def curate(
    captures: Sequence[SceneCapture],
    trajectories: Sequence[Trajectory],
    criteria: CurationCriteria | None = None,
) -> tuple[list[SceneCapture], list[Trajectory], CurationReport]:
    """Partition inputs into kept sets and a rejection report of ``(id, reason)``.

    Trajectories without actions skip the activity check.
    """
    criteria = criteria or CurationCriteria()
    rejected: list[tuple[str, str]] = []

    kept_caps = []
    for c in captures:
        if c.point_count < criteria.min_points:
            rejected.append((c.scene_id, "min_points"))
        else:
            kept_caps.append(c)

    survivors = []
    for t in trajectories:
        reason = _camera_check(t, criteria.min_cameras)
        if reason is None and t.duration < criteria.min_duration_s:
            reason = "min_duration"
        if reason is None:
            survivors.append(t)
        else:
            rejected.append((t.traj_id, reason))

    floors = dict(criteria.activity_floor)
    by_tag: dict[str, list[Trajectory]] = {}
    for t in survivors:
        if t.actions is not None and len(t.actions):
            by_tag.setdefault(t.dataset_tag, []).append(t)
    active_ids = set()
    for tag, group in sorted(by_tag.items()):
        if tag in floors:
            active_ids.update(t.traj_id for t in group if trajectory_activity(t) >= floors[tag])
        else:
            kept = prefilter_bottom_quantile(group, criteria.activity_quantile)
            floors[tag] = min(trajectory_activity(t) for t in kept) if kept else float("inf")
            active_ids.update(t.traj_id for t in kept)

    kept_trajs = []
    for t in survivors:
        if t.actions is None or not len(t.actions) or t.traj_id in active_ids:
            kept_trajs.append(t)
        else:
            rejected.append((t.traj_id, "low_activity"))
    log.info("curation kept %d/%d captures, %d/%d trajectories",
             len(kept_caps), len(captures), len(kept_trajs), len(trajectories))
    return kept_caps, kept_trajs, CurationReport(rejected, floors)
