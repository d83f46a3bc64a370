"""QA assembly: marker rendering, templated questions, answer shuffling,
dataset serialization and summary statistics."""
from __future__ import annotations

import json
import math
import shutil
import statistics
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from PIL import Image, ImageDraw

from .errors import EmptyDataset, MarkerOutOfBounds, TemplateMissing
from .scene import View, read_image, write_png
from .tasks import COLORS, IN_IMAGE_KINDS, MAX_VIEWS, MIN_VIEWS, PALETTE, MarkerAnnotation, RawTask, to_jsonable

DATASET_VERSION = "1.0"
MAX_QUESTION_CHARS = 508
ARROW_HEAD = 8.0


# --- rendering ----------------------------------------------------------------

def annotate_image(image: np.ndarray, markers: Sequence[MarkerAnnotation]) -> np.ndarray:
    """Rasterize markers onto a copy of ``image`` (H x W x 3 uint8)."""
    img = np.asarray(image, dtype=np.uint8)
    if not markers:
        return img.copy()
    h, w = img.shape[:2]
    for m in markers:
        if not m.in_bounds(w, h):
            raise MarkerOutOfBounds(f"{m.kind} marker at {m.pixel} exceeds {w}x{h}")
    canvas = Image.fromarray(img[..., :3] if img.ndim == 3 else np.stack([img] * 3, -1))
    draw = ImageDraw.Draw(canvas)
    for m in markers:
        rgb = PALETTE[m.color]
        u, v = m.pixel
        if m.kind == "point":
            r = m.size
            draw.ellipse([u - r, v - r, u + r, v + r], fill=rgb, outline=(255, 255, 255))
        else:
            c, s = math.cos(m.angle), math.sin(m.angle)
            tip = (u + m.size * c, v + m.size * s)
            neck = (tip[0] - ARROW_HEAD * c, tip[1] - ARROW_HEAD * s)
            draw.line([(u, v), neck], fill=rgb, width=3)
            half = ARROW_HEAD * 0.6
            draw.polygon([tip, (neck[0] - half * s, neck[1] + half * c), (neck[0] + half * s, neck[1] - half * c)],
                         fill=rgb)
            draw.ellipse([u - 3, v - 3, u + 3, v + 3], fill=rgb)
    return np.asarray(canvas)


# --- samples -------------------------------------------------------------------

@dataclass(eq=False)
class QASample:
    sample_id: str
    task: str
    question: str
    images: list[str]
    choices: list[str]
    answer: str
    meta: dict[str, Any]
    # transient: what to draw for each image, or where previously written files live
    sources: tuple[tuple[View, tuple[MarkerAnnotation, ...]], ...] | None = field(default=None, repr=False)
    root: Path | None = field(default=None, repr=False)

    def to_record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "task": self.task,
            "question": self.question,
            "images": list(self.images),
            "choices": list(self.choices),
            "answer": self.answer,
            "meta": self.meta,
        }

    @classmethod
    def from_record(cls, rec: dict, root: Path | None = None) -> "QASample":
        return cls(rec["sample_id"], rec["task"], rec["question"], list(rec["images"]),
                   list(rec["choices"]), rec["answer"], rec["meta"], root=root)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, QASample) and self.to_record() == other.to_record()

    def render(self) -> list[np.ndarray]:
        if self.sources is not None:
            return [annotate_image(v.image(), m) for v, m in self.sources]
        if self.root is None:
            raise ValueError(f"{self.sample_id}: no image sources")
        return [read_image(self.root / ref) for ref in self.images]

    def check(self) -> None:
        """Raise ValueError on any violated record invariant."""
        if self.answer not in self.choices:
            raise ValueError(f"{self.sample_id}: answer {self.answer!r} not among choices")
        if not MIN_VIEWS <= len(self.images) <= MAX_VIEWS:
            raise ValueError(f"{self.sample_id}: {len(self.images)} images")
        if len(self.choices) < 2 or len(set(self.choices)) != len(self.choices):
            raise ValueError(f"{self.sample_id}: bad choices {self.choices}")
        if self.task not in IN_IMAGE_KINDS and not 2 <= len(self.choices) <= MAX_VIEWS:
            raise ValueError(f"{self.sample_id}: {len(self.choices)} image choices")
        if len(self.question) > MAX_QUESTION_CHARS:
            raise ValueError(f"{self.sample_id}: question of {len(self.question)} chars")
        for marks, (w, h) in zip(self.meta["markers"], self.meta["image_sizes"]):
            for m in marks:
                if not MarkerAnnotation(m["kind"], m["pixel"], m["color"], m["angle"], m["size"]).in_bounds(w, h):
                    raise ValueError(f"{self.sample_id}: marker out of bounds")


def load_templates(path: str | Path | None = None) -> dict[str, str]:
    if path is None:
        return json.loads(resources.files("crossview").joinpath("data/templates.json").read_text())
    return json.loads(Path(path).read_text())


def _recolor(markers, mapping: dict[str, str]) -> tuple[MarkerAnnotation, ...]:
    return tuple(MarkerAnnotation(m.kind, m.pixel, mapping[m.color], m.angle, m.size) for m in markers)


def assemble_sample(
    raw: RawTask,
    templates: dict[str, str],
    rng: np.random.Generator,
    sample_id: str = "sample",
    seed: int | None = None,
) -> QASample:
    """Shuffle the candidates, fill the question template and attach metadata.

    Image-choice tasks use numeric labels ("1".."n") for candidate positions;
    in-image marker tasks permute marker colours and answer with a colour.
    """
    if raw.kind not in templates:
        raise TemplateMissing(raw.kind)
    refs = list(raw.reference_views)
    cands = list(raw.candidate_views)
    if raw.kind in IN_IMAGE_KINDS:
        perm = [str(c) for c in rng.permutation(list(raw.choice_colors))]
        mapping = dict(zip(raw.choice_colors, perm))
        view, marks = cands[0]
        cands = [(view, _recolor(marks, mapping))]
        answer = perm[raw.correct_index]
        choices = [c for c in COLORS if c in perm]
    else:
        order = [int(i) for i in rng.permutation(len(cands))]
        cands = [cands[i] for i in order]
        answer = str(order.index(raw.correct_index) + 1)
        choices = [str(i + 1) for i in range(len(cands))]
    sources = tuple(refs + cands)
    fields = {
        "n_ref": len(refs),
        "n_images": len(sources),
        "n_choices": len(choices),
        "choice_list": ", ".join(choices),
        **raw.condition,
    }
    try:
        question = templates[raw.kind].format(**fields)
    except KeyError as exc:
        raise TemplateMissing(f"{raw.kind}: template field {exc.args[0]} unavailable") from None
    meta = to_jsonable({
        "n_views": len(sources),
        "n_reference": len(refs),
        "choice_count": len(choices),
        "provenance": raw.provenance,
        "condition": raw.condition,
        "seed": seed,
        "image_sizes": [[v.width, v.height] for v, _ in sources],
        "markers": [[m.to_dict() for m in marks] for _, marks in sources],
        "source_images": [v.image_ref for v, _ in sources],
    })
    images = [f"images/{sample_id}_{i}.png" for i in range(len(sources))]
    return QASample(sample_id, raw.kind, question, images, choices, answer, meta, sources=sources)


# --- serialization -------------------------------------------------------------

def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def write_dataset(
    samples: Iterable[QASample],
    out_dir: str | Path,
    *,
    config_hash: str = "",
    seed: int | None = None,
    motion_stats: dict | None = None,
    workers: int = 1,
) -> dict:
    """Write images, ``samples.jsonl`` (sorted by sample_id) and ``manifest.json``."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    ordered = sorted(samples, key=lambda s: s.sample_id)
    if len({s.sample_id for s in ordered}) != len(ordered):
        raise ValueError("duplicate sample_id")

    def emit(s: QASample) -> None:
        if s.sources is None and s.root is not None and s.root.resolve() != out.resolve():
            for ref in s.images:
                shutil.copyfile(s.root / ref, out / ref)
        elif s.sources is not None:
            for ref, px in zip(s.images, s.render()):
                write_png(out / ref, px)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(emit, ordered))
    else:
        for s in ordered:
            emit(s)
    with open(out / "samples.jsonl", "w", encoding="utf-8") as fh:
        for s in ordered:
            fh.write(_dumps(s.to_record()) + "\n")
    stats = compute_stats(ordered).to_dict() if ordered else None
    manifest = {
        "version": DATASET_VERSION,
        "config_hash": config_hash,
        "seed": seed,
        "n_samples": len(ordered),
        "counts": dict(sorted(Counter(s.task for s in ordered).items())),
        "stats": stats,
        "motion_stats": motion_stats or {},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if motion_stats:
        (out / "motion_stats.json").write_text(json.dumps(motion_stats, indent=2, sort_keys=True) + "\n")
    return manifest


def load_dataset(path: str | Path) -> tuple[list[QASample], dict]:
    root = Path(path)
    manifest_path = root / "manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    samples = []
    with open(root / "samples.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                samples.append(QASample.from_record(json.loads(line), root))
    return samples, manifest


# --- statistics ------------------------------------------------------------------

def _summary(values: Sequence[float]) -> dict[str, float]:
    return {
        "mean": float(statistics.fmean(values)),
        "median": float(statistics.median(values)),
        "min": float(min(values)),
        "max": float(max(values)),
    }


@dataclass(frozen=True)
class StatsReport:
    n_samples: int
    n_images: int
    question_length: dict[str, float]
    choices: dict[str, float]
    views: dict[str, float]
    answer_histogram: dict[str, int]
    resolution_histogram: dict[str, int]
    task_counts: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "n_images": self.n_images,
            "question_length": self.question_length,
            "choices": self.choices,
            "views": self.views,
            "answer_histogram": self.answer_histogram,
            "resolution_histogram": self.resolution_histogram,
            "task_counts": self.task_counts,
        }

    def render_table(self) -> str:
        rows = [("Total QA pairs", str(self.n_samples)), ("Total images", str(self.n_images))]
        for title, d, fmt in (("Question length (chars)", self.question_length, "{:.1f}"),
                              ("Choices per QA", self.choices, "{:.2f}"),
                              ("Views per QA", self.views, "{:.2f}")):
            rows.append((title, ""))
            rows += [(f"  {k.capitalize()}", fmt.format(d[k])) for k in ("mean", "median", "min", "max")]
        rows.append(("Tasks", ""))
        rows += [(f"  {k}", str(v)) for k, v in self.task_counts.items()]
        rows.append(("Answer distribution", ""))
        rows += [(f"  {k}", f"{100 * v / self.n_samples:.2f}%") for k, v in self.answer_histogram.items()]
        rows.append(("Resolution", ""))
        rows += [(f"  {k}", f"{100 * v / self.n_images:.2f}%") for k, v in self.resolution_histogram.items()]
        width = max(len(a) for a, _ in rows) + 2
        return "\n".join(f"{a:<{width}}{b}" for a, b in rows)


def _label_key(label: str) -> tuple:
    return (0, int(label), "") if label.isdigit() else (1, 0, label)


def compute_stats(samples: Sequence[QASample]) -> StatsReport:
    if not samples:
        raise EmptyDataset("no samples")
    answers = Counter(s.answer for s in samples)
    sizes = Counter(f"{w}x{h}" for s in samples for w, h in s.meta["image_sizes"])
    tasks = Counter(s.task for s in samples)
    return StatsReport(
        n_samples=len(samples),
        n_images=sum(len(s.images) for s in samples),
        question_length=_summary([len(s.question) for s in samples]),
        choices=_summary([len(s.choices) for s in samples]),
        views=_summary([len(s.images) for s in samples]),
        answer_histogram={k: answers[k] for k in sorted(answers, key=_label_key)},
        resolution_histogram=dict(sorted(sizes.items())),
        task_counts=dict(sorted(tasks.items())),
    )
