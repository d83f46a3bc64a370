"""Declarative pipeline: config, quota-driven generation and the skip report."""
from __future__ import annotations

import copy
import glob
import hashlib
import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .assembly import QASample, assemble_sample, load_templates
from .errors import ConfigError, SampleSkipped
from .geotasks import GEO_GENERATORS, GeoTaskConfig
from .ingest import CurationCriteria, curate, load_capture, load_trajectory
from .metatasks import (
    CameraLexicon,
    MetaTaskConfig,
    gen_cross_scenario_localization,
    gen_directional_view_localization,
    gen_language_conditioned_localization,
    gen_temporal_verification,
)
from .scene import SceneCapture, Trajectory
from .tasks import (
    CROSS_SCENARIO_LOCALIZATION,
    DIRECTIONAL_VIEW_LOCALIZATION,
    GEO_KINDS,
    LANGUAGE_CONDITIONED_LOCALIZATION,
    TASK_KINDS,
    TEMPORAL_VERIFICATION,
    derive_rng,
)
from .temporal import MotionStats, motion_stats

log = logging.getLogger(__name__)

DEFAULTS: dict[str, Any] = {
    "inputs": {"captures": [], "trajectories": []},
    "curation": {},
    "quotas": {k: 0 for k in TASK_KINDS},
    "geo": {},
    "meta": {},
    "lexicon": None,
    "templates": None,
    "out_dir": "out",
    "seed": 0,
    "workers": 1,
    "attempt_multiplier": 5,
    "fill_ratio": 0.9,
    "endpoint": None,
    "dataset": None,
    "responses": None,
    "synth": {},
}


def _merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class PipelineConfig:
    data: dict[str, Any] = field(default_factory=lambda: copy.deepcopy(DEFAULTS))
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], base_dir: Path | None = None) -> "PipelineConfig":
        unknown = set(d) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(_merge(DEFAULTS, d), base_dir or Path.cwd())
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None, overrides: Mapping[str, Any] | None = None) -> "PipelineConfig":
        d: dict[str, Any] = {}
        base = Path.cwd()
        if path is not None:
            p = Path(path)
            try:
                d = json.loads(p.read_text())
            except FileNotFoundError:
                raise ConfigError(f"config not found: {p}") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{p}: {exc}") from None
            base = p.parent
        return cls.from_dict(_merge(d, overrides or {}), base)

    def validate(self) -> None:
        d = self.data
        if not isinstance(d.get("seed"), int):
            raise ConfigError("seed must be an integer")
        for k, q in d["quotas"].items():
            if k not in TASK_KINDS:
                raise ConfigError(f"unknown task kind in quotas: {k}")
            if not isinstance(q, int) or q < 0:
                raise ConfigError(f"quota for {k} must be a non-negative integer")
        if not 0 <= d["fill_ratio"] <= 1 or d["attempt_multiplier"] < 1 or d["workers"] < 1:
            raise ConfigError("invalid fill_ratio, attempt_multiplier or workers")
        self.geo_config()
        self.meta_config()

    def __getitem__(self, key: str) -> Any:
        return self.data[key]

    def path(self, value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def geo_config(self) -> GeoTaskConfig:
        return GeoTaskConfig.from_dict(self.data["geo"])

    def meta_config(self) -> MetaTaskConfig:
        return MetaTaskConfig.from_dict(self.data["meta"])

    def criteria(self) -> CurationCriteria:
        try:
            return CurationCriteria(**self.data["curation"])
        except TypeError as exc:
            raise ConfigError(f"curation: {exc}") from None

    def config_hash(self) -> str:
        # keys that cannot change the generated content are left out
        d = {k: v for k, v in self.data.items() if k not in ("out_dir", "workers")}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def manifests(self, kind: str) -> list[Path]:
        out: list[Path] = []
        for pattern in self.data["inputs"][kind]:
            pat = str(self.path(pattern))
            out.extend(Path(p) for p in sorted(glob.glob(pat, recursive=True)))
        return out


@dataclass
class Corpus:
    captures: list[SceneCapture]
    trajectories: list[Trajectory]
    report: dict
    stats: dict[str, MotionStats]


def ingest(cfg: PipelineConfig) -> Corpus:
    caps = [load_capture(p) for p in cfg.manifests("captures")]
    trajs = [load_trajectory(p) for p in cfg.manifests("trajectories")]
    kept_c, kept_t, report = curate(caps, trajs, cfg.criteria())
    stats: dict[str, MotionStats] = {}
    tags = sorted({t.dataset_tag for t in kept_t if t.states is not None and t.actions is not None})
    for tag in tags:
        stats[tag] = motion_stats([t for t in kept_t if t.dataset_tag == tag and t.actions is not None], tag)
    rep = {**report.to_dict(), "kept_captures": [c.scene_id for c in kept_c],
           "kept_trajectories": [t.traj_id for t in kept_t]}
    return Corpus(kept_c, kept_t, rep, stats)


@dataclass
class GenerationResult:
    samples: list[QASample]
    skips: dict[str, dict[str, int]]
    shortfall: dict[str, int]


def _work_fn(kind: str, corpus: Corpus, cfg: PipelineConfig) -> tuple[Sequence, Callable]:
    geo, meta = cfg.geo_config(), cfg.meta_config()
    if kind in GEO_KINDS:
        gen = GEO_GENERATORS[kind]
        return corpus.captures, lambda src, rng: gen(src, geo, rng)
    trajs = corpus.trajectories
    if kind == TEMPORAL_VERIFICATION:
        return trajs, lambda t, rng: gen_temporal_verification(t, corpus.stats.get(t.dataset_tag), meta, rng)
    if kind == DIRECTIONAL_VIEW_LOCALIZATION:
        return trajs, lambda t, rng: gen_directional_view_localization(t, meta, rng)
    if kind == LANGUAGE_CONDITIONED_LOCALIZATION:
        lex_path = cfg.path(cfg["lexicon"])
        lexicon = CameraLexicon.load(lex_path) if lex_path else CameraLexicon.default()
        return trajs, lambda t, rng: gen_language_conditioned_localization(t, lexicon, meta, rng)
    if kind == CROSS_SCENARIO_LOCALIZATION:
        def cross(t, rng):
            others = [o for o in trajs if o.traj_id != t.traj_id]
            if not others:
                raise SampleSkipped("only one trajectory available")
            return gen_cross_scenario_localization(others[int(rng.integers(len(others)))], t, meta, rng)
        return trajs, cross
    raise ConfigError(f"unknown task kind {kind}")


def source_id(src) -> str:
    return src.scene_id if isinstance(src, SceneCapture) else src.traj_id


def generate(corpus: Corpus, cfg: PipelineConfig) -> GenerationResult:
    """Fill every task quota, taking successes in ordinal order.

    Work item ``n`` of a task uses source ``n mod |sources|`` and an RNG derived
    from (seed, source, task, n), so the output does not depend on ``workers``.
    """
    seed = cfg["seed"]
    templates = load_templates(cfg.path(cfg["templates"]))
    samples: list[QASample] = []
    skips: dict[str, dict[str, int]] = {}
    shortfall: dict[str, int] = {}
    with ThreadPoolExecutor(cfg["workers"]) as pool:
        for kind in TASK_KINDS:
            quota = cfg["quotas"].get(kind, 0)
            if quota == 0:
                continue
            sources, fn = _work_fn(kind, corpus, cfg)
            reasons: Counter = Counter()
            got: list[QASample] = []
            budget = quota * cfg["attempt_multiplier"]
            if not sources:
                reasons["no_sources"] += budget
                budget = 0

            def attempt(n: int):
                src = sources[n % len(sources)]
                sid = source_id(src)
                rng = derive_rng(seed, sid, kind, n)
                try:
                    raw = fn(src, rng)
                except SampleSkipped as exc:
                    return type(exc).__name__
                return assemble_sample(raw, templates, rng, sample_id=f"{kind}-{n:06d}", seed=seed)

            n = 0
            while len(got) < quota and n < budget:
                batch = range(n, min(budget, n + max(quota - len(got), cfg["workers"])))
                for res in pool.map(attempt, batch):
                    if isinstance(res, str):
                        reasons[res] += 1
                    elif len(got) < quota:
                        got.append(res)
                n = batch.stop
            samples += got
            if reasons:
                skips[kind] = dict(sorted(reasons.items()))
            if len(got) < quota:
                shortfall[kind] = quota - len(got)
                log.warning("quota shortfall", extra={"task": kind, "got": len(got), "quota": quota})
    return GenerationResult(samples, skips, shortfall)
