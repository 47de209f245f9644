import csv
import json

import pytest

from nodeforge.cli import main
from nodeforge.demo import JUDICIAL_NODES, JUDICIAL_WIRING


@pytest.fixture
def optimized(judicial_dir, tmp_path):
    cfg = str(judicial_dir / "config.yaml")
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "gen")]) == 0
    assert main(["optimize", "--config", cfg, "--epochs", "2", "--library", str(tmp_path / "gen" / "library.json"),
                 "--out", str(tmp_path / "run")]) == 0
    return judicial_dir, tmp_path


def test_generate_writes_artifacts(optimized):
    _, tmp = optimized
    assert sorted(p.name for p in (tmp / "gen").iterdir()) == ["config.json", "harvest.json", "library.json",
                                                               "usage.json"]
    usage = json.loads((tmp / "gen" / "usage.json").read_text())
    assert usage["designer"]["prompt_tokens"] > 0


def test_optimize_run_directory(optimized, capsys):
    _, tmp = optimized
    run = tmp / "run"
    assert len(list((run / "libraries").glob("*.json"))) == 3
    assert len(list((run / "reports").glob("*.json"))) == 2
    rows = list(csv.DictReader((run / "summary.csv").open()))
    assert len(rows) == 2 * 5
    assert sum(r["refined"] == "True" for r in rows) == 2
    for fig in ("node_rewards.png", "mean_return.png"):
        assert (run / "figures" / fig).read_bytes()[:4] == b"\x89PNG"
    assert main(["inspect", str(run)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("epoch 1: bottleneck=Fact_Analyzer")
    assert lines[-1] == "final library: libraries/epoch_002.json"


@pytest.mark.parametrize("stored", [True, False])
def test_score_matches_optimize_rows(optimized, stored):
    judicial_dir, tmp = optimized
    dumps = sorted(str(p) for p in (tmp / "run" / "trajectories" / "epoch_002").glob("*.json"))
    args = ["score", "--config", str(judicial_dir / "config.yaml"), "--epoch", "2", "--out", str(tmp / "sc")]
    assert main(args + (["--stored"] if stored else []) + dumps) == 0
    assert (tmp / "sc" / "report.csv").read_text() == (tmp / "run" / "reports" / "epoch_002.csv").read_text()


def test_run_command(optimized):
    judicial_dir, tmp = optimized
    assert main(["run", "--config", str(judicial_dir / "config.yaml"), "--library",
                 str(tmp / "run" / "libraries" / "epoch_002.json"), "--samples", str(judicial_dir / "val.jsonl"),
                 "--out", str(tmp / "traj")]) == 0
    assert len(list((tmp / "traj").glob("*.json"))) == 4


def test_usage_errors_exit_2(judicial_dir, tmp_path):
    cfg = str(judicial_dir / "config.yaml")
    assert main(["generate", "--config", cfg, "--dataset", "nope.jsonl", "--out", str(tmp_path / "g")]) == 2
    assert main(["generate", "--config", cfg, "--alpha", "1.5", "--out", str(tmp_path / "g")]) == 2
    assert main(["optimize", "--config", cfg]) == 2
    assert main(["frobnicate"]) == 2
    nodes = json.loads(json.dumps(JUDICIAL_NODES))
    nodes[0]["dependencies"] = ["Judgment_Drafter"]
    cyclic = {"pipeline_description": "loop", "nodes": nodes, "connections_plan": JUDICIAL_WIRING, "epoch": 0,
              "provenance": {}}
    (tmp_path / "cyclic.json").write_text(json.dumps(cyclic))
    assert main(["optimize", "--config", cfg, "--library", str(tmp_path / "cyclic.json"),
                 "--out", str(tmp_path / "o")]) == 2


def test_provider_failure_exits_3(judicial_dir, tmp_path):
    (judicial_dir / "designer.json").write_text(json.dumps({"default_chat": {"_error": "service unavailable"}}))
    assert main(["generate", "--config", str(judicial_dir / "config.yaml"), "--out", str(tmp_path / "g")]) == 3


def test_storage_failure_exits_4(judicial_dir, tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("x")
    assert main(["generate", "--config", str(judicial_dir / "config.yaml"), "--out", str(blocker / "g")]) == 4


def test_demo_command(tmp_path, capsys):
    assert main(["demo", str(tmp_path / "d")]) == 0
    assert capsys.readouterr().out.strip().endswith("config.yaml")
