"""Metadata-based task generators over robot trajectories.

Temporal verification uses timestamps plus the motion/SSIM filter; the three
localization tasks use camera identifiers, relative poses and the camera lexicon.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import (
    AmbiguousDescription,
    ConfigError,
    InsufficientSharedCameras,
    NoUnambiguousLayout,
    NoValidPair,
    UnknownKey,
)
from .geometry import AMBIGUOUS, DIRECTIONS, LEFT, RIGHT, relative_direction
from .scene import CameraMeta, Trajectory
from .tasks import (
    CROSS_SCENARIO_LOCALIZATION,
    DIRECTIONAL_VIEW_LOCALIZATION,
    LANGUAGE_CONDITIONED_LOCALIZATION,
    TEMPORAL_VERIFICATION,
    RawTask,
)
from .temporal import MotionStats, validate_frame_pair


@dataclass
class MetaTaskConfig:
    n_choices: dict[str, int] = field(default_factory=lambda: {
        TEMPORAL_VERIFICATION: 3,
        DIRECTIONAL_VIEW_LOCALIZATION: 2,
        CROSS_SCENARIO_LOCALIZATION: 3,
        LANGUAGE_CONDITIONED_LOCALIZATION: 2,
    })
    max_attempts: int = 50
    dead_zone: float = 0.5
    direction_floor: float = 0.05

    def validate(self) -> None:
        if any(not 2 <= n <= 6 for n in self.n_choices.values()):
            raise ConfigError("choice counts must lie in [2, 6]")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "MetaTaskConfig":
        cfg = cls()
        for k, v in d.items():
            if not hasattr(cfg, k):
                raise ConfigError(f"unknown meta option {k!r}")
            setattr(cfg, k, {**cfg.n_choices, **v} if k == "n_choices" else v)
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class CameraLexicon:
    phrases: dict[str, str]
    # optional per-camera override of the description keys carried by CameraMeta
    camera_keys: dict[str, tuple[str, ...]] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path) -> "CameraLexicon":
        data = json.loads(Path(path).read_text())
        if not isinstance(data, dict) or not all(isinstance(v, str) for v in data.values()):
            raise ConfigError(f"{path}: lexicon must map keys to phrases")
        return cls(dict(data))

    @classmethod
    def default(cls) -> "CameraLexicon":
        text = resources.files("crossview").joinpath("data/lexicon.json").read_text()
        return cls(json.loads(text))

    def phrase(self, key: str) -> str:
        try:
            return self.phrases[key]
        except KeyError:
            raise UnknownKey(key) from None

    def keys_for(self, meta: CameraMeta) -> tuple[str, ...]:
        """Primary mount key first, then any extra description keys."""
        primary = f"{meta.mount}_{meta.side}" if meta.side else meta.mount
        extra = self.camera_keys.get(meta.camera_id, meta.description_keys)
        return tuple(dict.fromkeys((primary, *extra)))

    def phrases_for(self, meta: CameraMeta) -> set[str]:
        return {self.phrase(k) for k in self.keys_for(meta)}


@dataclass(frozen=True)
class LocalizationCondition:
    direction: str | None = None
    description: str | None = None
    cross_scene: str | None = None

    def __post_init__(self) -> None:
        set_fields = [v for v in (self.direction, self.description, self.cross_scene) if v is not None]
        if len(set_fields) != 1:
            raise ValueError("exactly one condition variant must be populated")
        if self.direction is not None and self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")

    def to_dict(self) -> dict[str, str]:
        return {k: v for k, v in (("direction", self.direction), ("description", self.description),
                                  ("cross_scene", self.cross_scene)) if v is not None}


def describe_camera(meta: CameraMeta, lexicon: CameraLexicon) -> str:
    keys = lexicon.keys_for(meta)
    for k in keys:
        lexicon.phrase(k)
    return lexicon.phrase(keys[0])


def _pick(rng: np.random.Generator, items, n: int) -> list:
    return [items[i] for i in rng.permutation(len(items))[:n]]


def gen_temporal_verification(
    traj: Trajectory, stats: MotionStats | None, cfg: MetaTaskConfig, rng: np.random.Generator
) -> RawTask:
    n = cfg.n_choices[TEMPORAL_VERIFICATION]
    cams = traj.camera_ids
    if len(cams) < n:
        raise InsufficientSharedCameras(f"{traj.traj_id}: {len(cams)} cameras, {n} needed")
    nf = len(traj.frames)
    if nf < 2:
        raise NoValidPair(f"{traj.traj_id}: fewer than two frames")
    for _ in range(cfg.max_attempts):
        i, j = (int(x) for x in rng.choice(nf, size=2, replace=False))
        chosen = _pick(rng, cams, n)
        odd = int(rng.integers(n))
        t_r, t_t = traj.frames[i].timestamp, traj.frames[j].timestamp
        verdict = validate_frame_pair(traj, t_r, t_t, stats, camera_id=chosen[odd])
        if verdict.accepted:
            break
    else:
        raise NoValidPair(f"{traj.traj_id}: no frame pair passed the motion/similarity filter")
    cands = [(traj.view(j if k == odd else i, c), ()) for k, c in enumerate(chosen)]
    return RawTask(
        TEMPORAL_VERIFICATION,
        reference_views=(),
        candidate_views=cands,
        correct_index=odd,
        provenance={
            "source_id": traj.traj_id,
            "dataset_tag": traj.dataset_tag,
            "t_r": t_r,
            "t_t": t_t,
            "cameras": chosen,
            "odd_camera": chosen[odd],
            "delta_s": verdict.delta_s,
            "ssim": verdict.ssim,
            "reason": verdict.reason,
        },
    )


def _ordinal_direction(base: CameraMeta, other: CameraMeta) -> str:
    rank = {LEFT: -1, None: 0, RIGHT: 1}
    d = rank[other.side] - rank[base.side]
    return AMBIGUOUS if d == 0 else (RIGHT if d > 0 else LEFT)


def layout_direction(base: CameraMeta, other: CameraMeta, cfg: MetaTaskConfig) -> str:
    """Direction of ``other`` from ``base``: poses when both have them, else the side ordinal."""
    if base.extrinsics is not None and other.extrinsics is not None:
        return relative_direction(base.extrinsics, other.extrinsics, cfg.dead_zone, cfg.direction_floor)
    return _ordinal_direction(base, other)


def gen_directional_view_localization(traj: Trajectory, cfg: MetaTaskConfig, rng: np.random.Generator) -> RawTask:
    n = cfg.n_choices[DIRECTIONAL_VIEW_LOCALIZATION]
    cams = [c for c in traj.camera_ids if c in traj.camera_meta]
    if len(cams) < n + 1:
        raise NoUnambiguousLayout(f"{traj.traj_id}: {len(cams)} described cameras, {n + 1} needed")
    options = []
    for base in cams:
        labels = {c: layout_direction(traj.camera_meta[base], traj.camera_meta[c], cfg) for c in cams if c != base}
        for d in DIRECTIONS:
            hits = sorted(c for c, lab in labels.items() if lab == d)
            # distractors must carry a definite, different label
            misses = sorted(c for c, lab in labels.items() if lab not in (d, AMBIGUOUS))
            if hits and len(misses) >= n - 1:
                options.append((base, d, hits, misses))
    if not options:
        raise NoUnambiguousLayout(f"{traj.traj_id}: no direction singles out one camera")
    base, d, hits, misses = options[int(rng.integers(len(options)))]
    target = hits[int(rng.integers(len(hits)))]
    others = _pick(rng, misses, n - 1)
    idx = int(rng.integers(len(traj.frames)))
    cond = LocalizationCondition(direction=d)
    return RawTask(
        DIRECTIONAL_VIEW_LOCALIZATION,
        reference_views=[(traj.view(idx, base), ())],
        candidate_views=[(traj.view(idx, c), ()) for c in [target, *others]],
        correct_index=0,
        condition=cond.to_dict(),
        provenance={
            "source_id": traj.traj_id,
            "timestamp": traj.frames[idx].timestamp,
            "base_camera": base,
            "direction": d,
            "candidate_cameras": [target, *others],
        },
    )


def gen_cross_scenario_localization(
    traj_a: Trajectory, traj_b: Trajectory, cfg: MetaTaskConfig, rng: np.random.Generator
) -> RawTask:
    n = cfg.n_choices[CROSS_SCENARIO_LOCALIZATION]
    if traj_a.traj_id == traj_b.traj_id:
        raise ValueError("cross-scenario localization needs two distinct trajectories")
    cams_b = traj_b.camera_ids
    shared = sorted(set(traj_a.camera_ids) & set(cams_b))
    if len(shared) < n:
        raise InsufficientSharedCameras(f"{traj_a.traj_id}/{traj_b.traj_id}: {len(shared)} shared cameras")
    c = shared[int(rng.integers(len(shared)))]
    others = _pick(rng, [x for x in cams_b if x != c], n - 1)
    ia = int(rng.integers(len(traj_a.frames)))
    ib = int(rng.integers(len(traj_b.frames)))
    cond = LocalizationCondition(cross_scene=traj_a.traj_id)
    return RawTask(
        CROSS_SCENARIO_LOCALIZATION,
        reference_views=[(traj_a.view(ia, c), ())],
        candidate_views=[(traj_b.view(ib, x), ()) for x in [c, *others]],
        correct_index=0,
        condition=cond.to_dict(),
        provenance={
            "source_id": traj_b.traj_id,
            "reference_traj": traj_a.traj_id,
            "reference_camera": c,
            "reference_timestamp": traj_a.frames[ia].timestamp,
            "timestamp": traj_b.frames[ib].timestamp,
            "candidate_cameras": [c, *others],
        },
    )


def gen_language_conditioned_localization(
    traj: Trajectory, lexicon: CameraLexicon, cfg: MetaTaskConfig, rng: np.random.Generator
) -> RawTask:
    """Pick the camera matching a described mount.

    One extra camera outside the candidate set is shown first as the base frame,
    so every sample carries at least three images.
    """
    n = cfg.n_choices[LANGUAGE_CONDITIONED_LOCALIZATION]
    cams = [c for c in traj.camera_ids if c in traj.camera_meta]
    if len(cams) < n + 1:
        raise InsufficientSharedCameras(f"{traj.traj_id}: {len(cams)} described cameras, {n + 1} needed")
    picked = _pick(rng, cams, n + 1)
    base, chosen = picked[0], picked[1:]
    target = chosen[0]
    keys = lexicon.keys_for(traj.camera_meta[target])
    key = keys[int(rng.integers(len(keys)))]
    phrase = lexicon.phrase(key)
    matches = [c for c in chosen if phrase in lexicon.phrases_for(traj.camera_meta[c])]
    if len(matches) > 1:
        raise AmbiguousDescription(f"{traj.traj_id}: {phrase!r} matches {matches}")
    idx = int(rng.integers(len(traj.frames)))
    cond = LocalizationCondition(description=phrase)
    return RawTask(
        LANGUAGE_CONDITIONED_LOCALIZATION,
        reference_views=[(traj.view(idx, base), ())],
        candidate_views=[(traj.view(idx, c), ()) for c in chosen],
        correct_index=0,
        condition=cond.to_dict(),
        provenance={
            "source_id": traj.traj_id,
            "timestamp": traj.frames[idx].timestamp,
            "base_camera": base,
            "description_key": key,
            "candidate_cameras": chosen,
        },
    )
