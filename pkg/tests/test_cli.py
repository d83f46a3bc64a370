import json

import pytest

from crossview.cli import main
from crossview.tasks import TASK_KINDS


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def synth_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out-dir", str(root), "--set", "synth.n_scenes=1",
                 "--set", "synth.n_trajectories=4"]) == 0
    return root


def generate(capsys, root, out, *extra):
    quotas = [a for k in TASK_KINDS for a in ("--quota", f"{k}=3")]
    return run(capsys, "generate", "--config", str(root / "pipeline.json"), "--out-dir", str(out), *quotas, *extra)


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_unknown_command(capsys):
    code, _, err = run(capsys, "frobnicate")
    assert code == 2
    rec = json.loads(err.strip().splitlines()[-1])
    assert rec["error"] == "ConfigError" and "frobnicate" in rec["message"] and "module" in rec


def test_missing_config(capsys, tmp_path):
    code, _, err = run(capsys, "generate", "--config", str(tmp_path / "nope.json"))
    assert code == 2 and json.loads(err.strip().splitlines()[-1])["error"] == "ConfigError"


def test_bad_quota(capsys):
    code, _, _ = run(capsys, "generate", "--quota", "point_correspondence=lots")
    assert code == 2
    code, _, _ = run(capsys, "generate", "--quota", "made_up_task=3")
    assert code == 2


def test_synth_layout(synth_root):
    cfg = json.loads((synth_root / "pipeline.json").read_text())
    assert cfg["out_dir"] == "dataset" and set(cfg["quotas"]) == set(TASK_KINDS)
    assert len(list(synth_root.glob("captures/*/capture.json"))) == 1
    assert len(list(synth_root.glob("trajectories/*/trajectory.json"))) == 4


def test_generate_deterministic(capsys, synth_root, tmp_path):
    code, out, _ = generate(capsys, synth_root, tmp_path / "a")
    assert code == 0
    counts = json.loads(out)["counts"]
    assert counts == {k: 3 for k in sorted(TASK_KINDS)}
    assert generate(capsys, synth_root, tmp_path / "b", "--workers", "2")[0] == 0
    assert tree(tmp_path / "a") == tree(tmp_path / "b")
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["n_samples"] == 24 and manifest["seed"] == 0 and len(manifest["config_hash"]) == 16
    assert (tmp_path / "a" / "skips.json").exists() and (tmp_path / "a" / "motion_stats.json").exists()


def test_seed_changes_output(capsys, synth_root, tmp_path):
    generate(capsys, synth_root, tmp_path / "a")
    generate(capsys, synth_root, tmp_path / "b", "--seed", "1")
    a = (tmp_path / "a" / "samples.jsonl").read_text()
    b = (tmp_path / "b" / "samples.jsonl").read_text()
    assert a != b


def test_stats_and_score(capsys, synth_root, tmp_path):
    ds = tmp_path / "ds"
    generate(capsys, synth_root, ds)
    code, out, _ = run(capsys, "stats", "--dataset", str(ds))
    assert code == 0 and "Total QA pairs" in out and "24" in out
    lines = [json.loads(x) for x in (ds / "samples.jsonl").read_text().splitlines()]
    resp = tmp_path / "responses.jsonl"
    resp.write_text("".join(json.dumps({"sample_id": r["sample_id"], "response": r["answer"]}) + "\n"
                            for r in lines))
    code, out, _ = run(capsys, "score", "--dataset", str(ds), "--responses", str(resp), "--out-dir", str(tmp_path))
    assert code == 0 and "100.00" in out
    report = json.loads((tmp_path / "eval_report.json").read_text())
    assert report["overall"] == 100.0 and report["unparseable_rate"] == 0.0


def test_score_unknown_id(capsys, synth_root, tmp_path):
    ds = tmp_path / "ds"
    generate(capsys, synth_root, ds)
    resp = tmp_path / "r.jsonl"
    resp.write_text('{"sample_id": "ghost", "response": "1"}\n')
    code, _, err = run(capsys, "score", "--dataset", str(ds), "--responses", str(resp))
    assert code == 1 and json.loads(err.strip().splitlines()[-1])["error"] == "UnknownSampleId"


def test_shortfall_exit(capsys, synth_root, tmp_path):
    code, _, err = run(capsys, "generate", "--config", str(synth_root / "pipeline.json"),
                       "--out-dir", str(tmp_path / "x"), "--trajectories", str(tmp_path / "none/*.json"),
                       "--set", 'quotas=' + json.dumps({k: 2 if k == "temporal_verification" else 0 for k in TASK_KINDS}))
    assert code == 1
    skips = json.loads((tmp_path / "x" / "skips.json").read_text())
    assert skips["shortfall"] == {"temporal_verification": 2}


def test_eval_needs_endpoint(capsys, synth_root, tmp_path):
    code, _, _ = run(capsys, "eval", "--dataset", str(tmp_path))
    assert code == 2
