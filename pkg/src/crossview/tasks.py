"""Task kinds, marker annotations and the un-templated task record."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .scene import View

POINT_CORRESPONDENCE = "point_correspondence"
DIRECTIONAL_CORRESPONDENCE = "directional_correspondence"
SPATIAL_VERIFICATION = "spatial_verification"
TEMPORAL_VERIFICATION = "temporal_verification"
VIEWPOINT_LOCALIZATION = "viewpoint_localization"
DIRECTIONAL_VIEW_LOCALIZATION = "directional_view_localization"
CROSS_SCENARIO_LOCALIZATION = "cross_scenario_localization"
LANGUAGE_CONDITIONED_LOCALIZATION = "language_conditioned_localization"

TASK_KINDS = (
    POINT_CORRESPONDENCE,
    DIRECTIONAL_CORRESPONDENCE,
    SPATIAL_VERIFICATION,
    TEMPORAL_VERIFICATION,
    VIEWPOINT_LOCALIZATION,
    DIRECTIONAL_VIEW_LOCALIZATION,
    CROSS_SCENARIO_LOCALIZATION,
    LANGUAGE_CONDITIONED_LOCALIZATION,
)
GEO_KINDS = TASK_KINDS[:3] + (VIEWPOINT_LOCALIZATION,)
META_KINDS = (TEMPORAL_VERIFICATION, DIRECTIONAL_VIEW_LOCALIZATION,
              CROSS_SCENARIO_LOCALIZATION, LANGUAGE_CONDITIONED_LOCALIZATION)
# the answer is a marker inside one image rather than one of several images
IN_IMAGE_KINDS = (POINT_CORRESPONDENCE, DIRECTIONAL_CORRESPONDENCE)

PALETTE = {
    "red": (220, 50, 47),
    "blue": (38, 114, 178),
    "green": (35, 139, 69),
    "yellow": (240, 180, 0),
    "purple": (120, 80, 160),
}
COLORS = tuple(PALETTE)

MIN_VIEWS, MAX_VIEWS = 3, 6


@dataclass(frozen=True)
class MarkerAnnotation:
    kind: str  # "point" or "arrow"
    pixel: tuple[float, float]
    color: str
    angle: float = 0.0
    size: float = 8.0  # disc radius or arrow length, pixels

    def __post_init__(self) -> None:
        if self.kind not in ("point", "arrow"):
            raise ValueError(f"unknown marker kind {self.kind!r}")
        if self.color not in PALETTE:
            raise ValueError(f"color {self.color!r} not in palette")
        if not math.isfinite(self.angle):
            raise ValueError("arrow angle must be finite")
        object.__setattr__(self, "pixel", (float(self.pixel[0]), float(self.pixel[1])))
        object.__setattr__(self, "angle", float(self.angle) % (2 * math.pi))

    @property
    def extent(self) -> float:
        """Pixels the rendered marker reaches beyond ``pixel``."""
        return self.size + 2 if self.kind == "point" else self.size + 8

    def in_bounds(self, width: int, height: int) -> bool:
        u, v = self.pixel
        e = self.extent
        return e <= u <= width - 1 - e and e <= v <= height - 1 - e

    def to_dict(self) -> dict:
        return {"kind": self.kind, "pixel": list(self.pixel), "color": self.color,
                "angle": self.angle, "size": self.size}


@dataclass(frozen=True, eq=False)
class RawTask:
    kind: str
    reference_views: tuple[tuple[View, tuple[MarkerAnnotation, ...]], ...]
    candidate_views: tuple[tuple[View, tuple[MarkerAnnotation, ...]], ...]
    correct_index: int
    provenance: dict[str, Any] = field(default_factory=dict)
    # for in-image tasks the colours of the candidate markers, in candidate order
    choice_colors: tuple[str, ...] = ()
    # text substituted into the question template (direction, phrase, ...)
    condition: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "reference_views", tuple((v, tuple(m)) for v, m in self.reference_views))
        object.__setattr__(self, "candidate_views", tuple((v, tuple(m)) for v, m in self.candidate_views))
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        n = self.n_choices
        if not 0 <= self.correct_index < n:
            raise ValueError(f"correct_index {self.correct_index} outside {n} choices")
        if not MIN_VIEWS <= self.n_images <= MAX_VIEWS:
            raise ValueError(f"{self.kind}: {self.n_images} images, expected {MIN_VIEWS}..{MAX_VIEWS}")

    @property
    def n_images(self) -> int:
        return len(self.reference_views) + len(self.candidate_views)

    @property
    def n_choices(self) -> int:
        return len(self.choice_colors) if self.kind in IN_IMAGE_KINDS else len(self.candidate_views)


def derive_rng(seed: int, *parts: Any) -> np.random.Generator:
    """Independent generator for one (source, kind, ordinal) work item.

    Parts are hashed, so the stream depends only on the identifiers and never on
    scheduling order.
    """
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, *words])


def to_jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return to_jsonable(x.tolist())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, float):
        return round(x, 9)
    return x
