"""Command-line entry point: ``crossview <command> [--config FILE] [flags]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from .assembly import compute_stats, load_dataset, write_dataset
from .errors import ConfigError, CrossViewError
from .evaluation import EndpointConfig, read_responses, run_remote_eval, score_dataset, successful_responses
from .pipeline import PipelineConfig, generate, ingest
from .synthetic import FixtureCorpusConfig, write_fixture_corpus

COMMANDS = ("ingest", "generate", "stats", "score", "eval", "synth")

log = logging.getLogger("crossview")


class JsonFormatter(logging.Formatter):
    _skip = set(vars(logging.LogRecord("", 0, "", 0, "", (), None))) | {"message"}

    def format(self, record: logging.LogRecord) -> str:
        out = {"level": record.levelname.lower(), "logger": record.name, "msg": record.getMessage()}
        out.update({k: v for k, v in vars(record).items() if k not in self._skip})
        return json.dumps(out, sort_keys=True, default=str)


def _setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter())
    root = logging.getLogger("crossview")
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO if verbose else logging.WARNING)
    root.propagate = False


def _error(exc: BaseException, code: int) -> int:
    rec = {"error": type(exc).__name__, "module": getattr(exc, "module", "crossview"), "message": str(exc)}
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    return code


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crossview", description="Cross-view spatial QA generation and evaluation.")
    p.add_argument("command", help="one of: " + ", ".join(COMMANDS))
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--out-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--captures", action="append", help="capture manifest glob (repeatable)")
    p.add_argument("--trajectories", action="append", help="trajectory manifest glob (repeatable)")
    p.add_argument("--quota", action="append", metavar="TASK=N", help="per-task sample quota (repeatable)")
    p.add_argument("--lexicon")
    p.add_argument("--templates")
    p.add_argument("--dataset", help="dataset directory for stats/score/eval")
    p.add_argument("--responses", help="responses JSONL for score/eval")
    p.add_argument("--endpoint", help="endpoint config JSON for eval")
    p.add_argument("--set", action="append", metavar="KEY=JSON", help="override any config key, dotted path")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    o: dict[str, Any] = {}
    for name in ("out_dir", "seed", "workers", "lexicon", "templates", "dataset", "responses"):
        v = getattr(args, name)
        if v is not None:
            o[name] = str(Path(v).resolve()) if name in ("out_dir", "lexicon", "templates", "dataset",
                                                         "responses") else v
    inputs = {}
    if args.captures:
        inputs["captures"] = [str(Path(g).absolute()) for g in args.captures]
    if args.trajectories:
        inputs["trajectories"] = [str(Path(g).absolute()) for g in args.trajectories]
    if inputs:
        o["inputs"] = inputs
    if args.quota:
        q = {}
        for item in args.quota:
            kind, _, n = item.partition("=")
            try:
                q[kind] = int(n)
            except ValueError:
                raise ConfigError(f"bad --quota {item!r}") from None
        o["quotas"] = q
    if args.endpoint:
        o["endpoint"] = json.loads(Path(args.endpoint).read_text())
    for item in args.set or []:
        key, _, raw = item.partition("=")
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        cur = o
        parts = key.split(".")
        for part in parts[:-1]:
            cur = cur.setdefault(part, {})
        cur[parts[-1]] = val
    return o


def _write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _dataset_dir(cfg: PipelineConfig) -> Path:
    return cfg.path(cfg["dataset"]) or cfg.path(cfg["out_dir"])


def cmd_ingest(cfg: PipelineConfig) -> int:
    corpus = ingest(cfg)
    out = cfg.path(cfg["out_dir"])
    report = {**corpus.report, "motion_stats": {k: v.to_dict() for k, v in corpus.stats.items()}}
    _write_json(out / "curation.json", report)
    print(json.dumps({"captures": len(corpus.captures), "trajectories": len(corpus.trajectories),
                      "rejected": len(corpus.report["rejected"])}, sort_keys=True))
    return 0


def cmd_generate(cfg: PipelineConfig) -> int:
    corpus = ingest(cfg)
    result = generate(corpus, cfg)
    out = cfg.path(cfg["out_dir"])
    stats = {k: v.to_dict() for k, v in sorted(corpus.stats.items())}
    manifest = write_dataset(result.samples, out, config_hash=cfg.config_hash(), seed=cfg["seed"],
                             motion_stats=stats, workers=cfg["workers"])
    _write_json(out / "skips.json", {"skipped": result.skips, "shortfall": result.shortfall,
                                     "curation": corpus.report})
    print(json.dumps({"out_dir": str(out), "counts": manifest["counts"]}, sort_keys=True))
    short = {k: v for k, v in result.shortfall.items()
             if cfg["quotas"][k] - v < cfg["fill_ratio"] * cfg["quotas"][k]}
    if short:
        return _error(CrossViewError(f"quota fill below {cfg['fill_ratio']:.0%}: {short}"), 1)
    return 0


def cmd_stats(cfg: PipelineConfig) -> int:
    samples, _ = load_dataset(_dataset_dir(cfg))
    report = compute_stats(samples)
    print(report.render_table())
    return 0


def _responses_path(cfg: PipelineConfig) -> Path:
    p = cfg.path(cfg["responses"])
    return p if p is not None else _dataset_dir(cfg) / "responses.jsonl"


def _score(cfg: PipelineConfig, samples) -> int:
    responses = successful_responses(read_responses(_responses_path(cfg)))
    report = score_dataset(samples, responses)
    _write_json(cfg.path(cfg["out_dir"]) / "eval_report.json", report.to_dict())
    print(report.render_table())
    return 0


def cmd_score(cfg: PipelineConfig) -> int:
    samples, _ = load_dataset(_dataset_dir(cfg))
    return _score(cfg, samples)


def cmd_eval(cfg: PipelineConfig) -> int:
    if not cfg["endpoint"]:
        raise ConfigError("eval needs an endpoint config")
    samples, _ = load_dataset(_dataset_dir(cfg))
    run_remote_eval(samples, EndpointConfig.from_dict(cfg["endpoint"]), _responses_path(cfg))
    return _score(cfg, samples)


def cmd_synth(cfg: PipelineConfig) -> int:
    s = cfg["synth"]
    out = cfg.path(cfg["out_dir"])
    fc = FixtureCorpusConfig(n_scenes=s.get("n_scenes", 3), n_trajectories=s.get("n_trajectories", 12),
                             seed=s.get("seed", cfg["seed"]))
    paths = write_fixture_corpus(fc, out)
    # a ready-to-run pipeline config; fixture clouds are far below the 1M-point default
    pipeline = {
        "inputs": {"captures": ["captures/*/capture.json"], "trajectories": ["trajectories/*/trajectory.json"]},
        "curation": {"min_points": fc.scene.n_points},
        "quotas": {k: 100 for k in cfg["quotas"]},
        "seed": cfg["seed"],
        "out_dir": "dataset",
    }
    _write_json(out / "pipeline.json", pipeline)
    print(json.dumps({k: len(v) for k, v in paths.items()}, sort_keys=True))
    return 0


HANDLERS = {
    "ingest": cmd_ingest,
    "generate": cmd_generate,
    "stats": cmd_stats,
    "score": cmd_score,
    "eval": cmd_eval,
    "synth": cmd_synth,
}


def run(command: str, config_path: str | None = None, overrides: dict | None = None) -> int:
    if command not in HANDLERS:
        return _error(ConfigError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}"), 2)
    try:
        cfg = PipelineConfig.load(config_path, overrides)
        return HANDLERS[command](cfg)
    except ConfigError as exc:
        return _error(exc, 2)
    except CrossViewError as exc:
        return _error(exc, 1)
    except OSError as exc:
        return _error(exc, 1)


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        overrides = _overrides(args)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        return _error(ConfigError(str(exc)), 2)
    return run(args.command, args.config, overrides)


if __name__ == "__main__":
    sys.exit(main())
