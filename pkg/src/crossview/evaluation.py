"""Scoring of model responses and a resumable remote-endpoint runner."""
from __future__ import annotations

import base64
import json
import logging
import math
import os
import re
import threading
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import httpx

from .assembly import QASample
from .errors import ConfigError, EmptyDataset, EndpointError, UnknownSampleId
from .tasks import TASK_KINDS

log = logging.getLogger(__name__)

_TOKEN = re.compile(r"[A-Za-z0-9]+")


def parse_answer(text: str | None, answer_space: Sequence[str]) -> str | None:
    """First token of ``text`` equal (case-insensitively) to a label, else ``None``."""
    if not answer_space:
        raise ValueError("empty answer space")
    if not text:
        return None
    lookup = {label.lower(): label for label in answer_space}
    if len(lookup) != len(answer_space):
        raise ValueError("answer labels must be distinct")
    for tok in _TOKEN.findall(text):
        hit = lookup.get(tok.lower())
        if hit is not None:
            return hit
    return None


@dataclass(frozen=True)
class EvalRecord:
    sample_id: str
    raw_response: str | None
    parsed: str | None
    correct: bool


@dataclass(frozen=True)
class EvalReport:
    per_task: dict[str, float]
    overall: float
    baseline_per_task: dict[str, float]
    baseline_overall: float
    unparseable_rate: float
    counts: dict[str, int]
    records: tuple[EvalRecord, ...] = ()

    def to_dict(self) -> dict:
        return {
            "per_task": self.per_task,
            "overall": self.overall,
            "baseline_per_task": self.baseline_per_task,
            "baseline_overall": self.baseline_overall,
            "unparseable_rate": self.unparseable_rate,
            "counts": self.counts,
        }

    def render_table(self) -> str:
        lines = [f"{'Task':<36}{'N':>7}{'Acc %':>9}{'Random %':>10}"]
        for task in self.per_task:
            lines.append(f"{task:<36}{self.counts[task]:>7}{self.per_task[task]:>9.2f}"
                         f"{self.baseline_per_task[task]:>10.2f}")
        lines.append(f"{'Overall':<36}{sum(self.counts.values()):>7}{self.overall:>9.2f}{self.baseline_overall:>10.2f}")
        return "\n".join(lines)


def _task_order(tasks: Iterable[str]) -> list[str]:
    rank = {k: i for i, k in enumerate(TASK_KINDS)}
    return sorted(set(tasks), key=lambda t: (rank.get(t, len(rank)), t))


def random_baseline(samples: Sequence[QASample]) -> tuple[dict[str, float], float]:
    """Expected accuracy (%) of uniform guessing, per task and sample-weighted overall."""
    if not samples:
        raise EmptyDataset("no samples")
    # fsum keeps the result independent of sample order
    terms: dict[str, list[float]] = defaultdict(list)
    for s in samples:
        terms[s.task].append(1.0 / len(s.choices))
    per_task = {t: 100.0 * math.fsum(terms[t]) / len(terms[t]) for t in _task_order(terms)}
    overall = 100.0 * math.fsum(x for v in terms.values() for x in v) / len(samples)
    return per_task, overall


def score_dataset(samples: Sequence[QASample], responses: Mapping[str, str | None]) -> EvalReport:
    """Accuracy per task; missing responses count as unparseable and incorrect."""
    if not samples:
        raise EmptyDataset("no samples")
    by_id = {s.sample_id: s for s in samples}
    unknown = sorted(set(responses) - set(by_id))
    if unknown:
        raise UnknownSampleId(unknown[0])
    records = []
    correct: dict[str, int] = defaultdict(int)
    counts: dict[str, int] = defaultdict(int)
    for s in samples:
        raw = responses.get(s.sample_id)
        parsed = parse_answer(raw, s.choices)
        ok = parsed is not None and parsed == s.answer
        records.append(EvalRecord(s.sample_id, raw, parsed, ok))
        counts[s.task] += 1
        correct[s.task] += ok
    order = _task_order(counts)
    base_task, base_all = random_baseline(samples)
    return EvalReport(
        per_task={t: 100.0 * correct[t] / counts[t] for t in order},
        overall=100.0 * sum(correct.values()) / len(samples),
        baseline_per_task=base_task,
        baseline_overall=base_all,
        unparseable_rate=100.0 * sum(r.parsed is None for r in records) / len(records),
        counts={t: counts[t] for t in order},
        records=tuple(records),
    )


# --- responses file -----------------------------------------------------------------

def read_responses(path: str | Path) -> dict[str, dict]:
    """Last record per sample_id from a responses JSONL file (absent file: empty)."""
    out: dict[str, dict] = {}
    p = Path(path)
    if not p.exists():
        return out
    for line in p.read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            out[rec["sample_id"]] = rec
    return out


def successful_responses(records: Mapping[str, dict]) -> dict[str, str]:
    return {k: r["response"] for k, r in records.items() if not r.get("error")}


# --- remote runner ------------------------------------------------------------------

@dataclass(frozen=True)
class EndpointConfig:
    url: str
    request_template: Any
    response_text_path: str
    auth_env: str | None = None
    max_concurrency: int = 4
    timeout_s: float = 60.0
    max_retries: int = 3
    backoff_s: float = 0.5
    min_interval_s: float = 0.0  # spacing between request starts

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EndpointConfig":
        try:
            cfg = cls(
                url=d["url"],
                request_template=d["request_template"],
                response_text_path=d["response_text_path"],
                auth_env=d.get("auth_env"),
                max_concurrency=int(d.get("max_concurrency", 4)),
                timeout_s=float(d.get("timeout_s", 60.0)),
                max_retries=int(d.get("max_retries", 3)),
                backoff_s=float(d.get("backoff_s", 0.5)),
                min_interval_s=float(d.get("min_interval_s", 0.0)),
            )
        except KeyError as exc:
            raise ConfigError(f"endpoint config missing {exc.args[0]!r}") from None
        if cfg.max_concurrency < 1 or cfg.timeout_s <= 0 or cfg.max_retries < 0:
            raise ConfigError("invalid endpoint limits")
        return cfg


def _fill(template: Any, values: Mapping[str, Any]) -> Any:
    """Substitute ``{{name}}`` placeholders; a string that is exactly one placeholder takes the raw value."""
    if isinstance(template, dict):
        return {k: _fill(v, values) for k, v in template.items()}
    if isinstance(template, list):
        return [_fill(v, values) for v in template]
    if isinstance(template, str):
        m = re.fullmatch(r"\{\{(\w+)\}\}", template)
        if m and m.group(1) in values:
            return values[m.group(1)]
        return re.sub(r"\{\{(\w+)\}\}", lambda mm: str(values.get(mm.group(1), mm.group(0))), template)
    return template


def _extract(payload: Any, path: str) -> str:
    cur = payload
    for part in path.split("."):
        if isinstance(cur, list):
            cur = cur[int(part)]
        else:
            cur = cur[part]
    if not isinstance(cur, str):
        raise TypeError("response text is not a string")
    return cur


def build_request(sample: QASample, cfg: EndpointConfig) -> Any:
    root = sample.root
    images = []
    for ref in sample.images:
        data = (root / ref).read_bytes() if root is not None else b""
        images.append(base64.b64encode(data).decode("ascii"))
    return _fill(cfg.request_template, {
        "question": sample.question,
        "images": images,
        "choices": sample.choices,
        "sample_id": sample.sample_id,
    })


def run_remote_eval(
    samples: Sequence[QASample],
    cfg: EndpointConfig,
    responses_path: str | Path,
    client: httpx.Client | None = None,
) -> dict[str, dict]:
    """Query the endpoint for every sample lacking a successful response.

    Results are appended to ``responses_path`` one line at a time by a single
    writer; failed samples are recorded with an ``error`` and retried on the
    next run. Returns the merged record map.
    """
    path = Path(responses_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.touch()
    done = read_responses(path)
    pending = [s for s in samples if s.sample_id not in done or done[s.sample_id].get("error")]
    headers = {}
    if cfg.auth_env:
        token = os.environ.get(cfg.auth_env)
        if not token:
            raise ConfigError(f"environment variable {cfg.auth_env} is not set")
        headers["Authorization"] = f"Bearer {token}"
    own = client is None
    client = client or httpx.Client(timeout=cfg.timeout_s, headers=headers)
    lock = threading.Lock()
    pace = threading.Lock()
    last_start = [0.0]

    def call(sample: QASample) -> dict:
        body = build_request(sample, cfg)
        err = None
        for attempt in range(cfg.max_retries + 1):
            if cfg.min_interval_s:
                with pace:
                    wait = last_start[0] + cfg.min_interval_s - time.monotonic()
                    if wait > 0:
                        time.sleep(wait)
                    last_start[0] = time.monotonic()
            try:
                r = client.post(cfg.url, json=body, headers=headers)
                r.raise_for_status()
                return {"sample_id": sample.sample_id, "response": _extract(r.json(), cfg.response_text_path)}
            except (httpx.HTTPError, ValueError, KeyError, IndexError, TypeError) as exc:
                err = f"{type(exc).__name__}: {exc}"
                if attempt < cfg.max_retries:
                    time.sleep(cfg.backoff_s * 2**attempt)
        log.warning("endpoint failed for %s: %s", sample.sample_id, err)
        return {"sample_id": sample.sample_id, "response": None, "error": str(EndpointError(err))}

    try:
        with open(path, "a", encoding="utf-8") as fh, ThreadPoolExecutor(cfg.max_concurrency) as pool:
            for rec in pool.map(call, pending):
                with lock:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
                    fh.flush()
                done[rec["sample_id"]] = rec
    finally:
        if own:
            client.close()
    return done
