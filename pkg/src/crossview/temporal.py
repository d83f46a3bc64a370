"""Temporal-verification filtering.

Two stages: trajectory-level pre-filtering on summed action magnitude, then
frame-pair validation combining state displacement against a per-dataset
threshold (80th percentile of the 1-second max displacement) with a
grayscale SSIM ceiling.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyInput, NoActionData, SizeMismatch, TooShort
from .scene import Trajectory

log = logging.getLogger(__name__)

PERCENTILE_KEYS = tuple(f"p{p}" for p in range(10, 100, 10))

SSIM_WINDOW = 7
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2
TAU_SSIM_WITH_ACTIONS = 0.9
TAU_SSIM_NO_ACTIONS = 0.8
BT601 = np.array([0.299, 0.587, 0.114])

OK = "ok"
LOW_MOTION = "low_motion"
TOO_SIMILAR = "too_similar"
NO_ACTION_OK = "no_action_data_ok"
NO_ACTION_TOO_SIMILAR = "no_action_data_too_similar"


@dataclass(frozen=True)
class MotionStats:
    dataset_tag: str
    percentiles: dict[str, float]
    tau_act: float
    n_trajectories: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MotionStats":
        return cls(d["dataset_tag"], {k: float(v) for k, v in d["percentiles"].items()},
                   float(d["tau_act"]), int(d["n_trajectories"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "MotionStats":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class FilterVerdict:
    accepted: bool
    delta_s: float | None
    ssim: float
    reason: str


def trajectory_activity(traj: Trajectory) -> float:
    """Sum of per-step action norms."""
    if traj.actions is None or len(traj.actions) == 0:
        raise NoActionData(f"{traj.traj_id} has no actions")
    return float(np.linalg.norm(traj.actions, axis=1).sum())


def prefilter_bottom_quantile(trajs: Sequence[Trajectory], q: float = 0.20) -> list[Trajectory]:
    """Drop the floor(q*N) least active trajectories (ties broken by traj_id).

    The kept trajectories are returned in input order.
    """
    scored = sorted(trajs, key=lambda t: (trajectory_activity(t), t.traj_id))
    n_drop = int(np.floor(q * len(trajs)))
    dropped = {id(t) for t in scored[:n_drop]}
    return [t for t in trajs if id(t) not in dropped]


def control_stride(traj: Trajectory) -> int:
    f = int(round(traj.control_hz))
    if f != traj.control_hz:
        log.info("control rate %s Hz rounded to %d frames for %s", traj.control_hz, f, traj.traj_id)
    return max(f, 1)


def max_displacement_window(traj: Trajectory) -> float:
    """Largest state displacement across any one-second stride."""
    if traj.states is None:
        raise TooShort(f"{traj.traj_id} has no states")
    f = control_stride(traj)
    s = traj.states
    if len(s) <= f:
        raise TooShort(f"{traj.traj_id}: {len(s)} states do not span one second ({f} frames)")
    return float(np.linalg.norm(s[f:] - s[:-f], axis=1).max())


def motion_stats(trajs: Iterable[Trajectory], dataset_tag: str) -> MotionStats:
    values = np.array([max_displacement_window(t) for t in trajs if t.states is not None])
    if values.size == 0:
        raise EmptyInput(f"no trajectories with states for {dataset_tag}")
    if values.size < 10:
        log.warning("motion stats for %s from only %d trajectories", dataset_tag, values.size)
    pct = np.percentile(values, np.arange(10, 100, 10), method="linear")
    percentiles = {k: float(v) for k, v in zip(PERCENTILE_KEYS, pct)}
    return MotionStats(dataset_tag, percentiles, percentiles["p80"], int(values.size))


def state_displacement(traj: Trajectory, t_r: float, t_t: float) -> float:
    if traj.states is None:
        raise NoActionData(f"{traj.traj_id} has no states")
    i, j = traj.frame_index(t_r), traj.frame_index(t_t)
    return float(np.linalg.norm(traj.states[j] - traj.states[i]))


def to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return img[..., :3] @ BT601


def _window_sums(a: np.ndarray, w: int) -> np.ndarray:
    """Sums over every fully contained w x w window (summed-area table)."""
    s = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    s[1:, 1:] = a.cumsum(0).cumsum(1)
    return s[w:, w:] - s[:-w, w:] - s[w:, :-w] + s[:-w, :-w]


def ssim_gray(img_a: np.ndarray, img_b: np.ndarray) -> float:
    """Mean SSIM of the BT.601 luma planes over all valid 7x7 uniform windows."""
    a, b = to_gray(img_a), to_gray(img_b)
    if a.shape != b.shape:
        raise SizeMismatch(f"image sizes differ: {a.shape} vs {b.shape}")
    w = min(SSIM_WINDOW, *a.shape)
    n = w * w
    # centre before the running sums to limit cancellation in the second moments
    oa, ob = a.mean(), b.mean()
    a, b = a - oa, b - ob
    ma = _window_sums(a, w) / n
    mb = _window_sums(b, w) / n
    var_a = np.maximum(_window_sums(a * a, w) / n - ma**2, 0.0)
    var_b = np.maximum(_window_sums(b * b, w) / n - mb**2, 0.0)
    cov = _window_sums(a * b, w) / n - ma * mb
    mu_a, mu_b = ma + oa, mb + ob
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.clip(np.mean(num / den), -1.0, 1.0))


def validate_frame_pair(
    traj: Trajectory,
    t_r: float,
    t_t: float,
    stats: MotionStats | None,
    camera_id: str | None = None,
) -> FilterVerdict:
    """Accept a frame pair for a temporal question.

    With motion stats and action data both tests must pass (displacement above
    ``tau_act`` and SSIM below 0.9); otherwise only SSIM below 0.8 is required.
    SSIM is measured on ``camera_id`` (default: first camera shared by both frames).
    """
    i, j = traj.frame_index(t_r), traj.frame_index(t_t)
    fi, fj = traj.frames[i], traj.frames[j]
    if camera_id is None:
        shared = sorted(set(fi.images) & set(fj.images))
        if not shared:
            raise ValueError(f"{traj.traj_id}: frames share no camera")
        camera_id = shared[0]
    ssim = ssim_gray(traj.image(fi.images[camera_id]), traj.image(fj.images[camera_id]))

    has_actions = stats is not None and traj.actions is not None and traj.states is not None
    if not has_actions:
        if ssim < TAU_SSIM_NO_ACTIONS:
            return FilterVerdict(True, None, ssim, NO_ACTION_OK)
        return FilterVerdict(False, None, ssim, NO_ACTION_TOO_SIMILAR)

    delta = float(np.linalg.norm(traj.states[j] - traj.states[i]))
    if not ssim < TAU_SSIM_WITH_ACTIONS:
        return FilterVerdict(False, delta, ssim, TOO_SIMILAR)
    if not delta > stats.tau_act:
        return FilterVerdict(False, delta, ssim, LOW_MOTION)
    return FilterVerdict(True, delta, ssim, OK)
