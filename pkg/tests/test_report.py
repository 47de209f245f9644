import pytest

from nodeforge.errors import StorageError
from nodeforge.optimizer import EpochReport, optimize
from nodeforge.report import inspect_lines, load_reports, render_figures, summary_csv, summary_rows, write_summary
from scenarios import chain_library, chain_samples, gateways


def test_summary_from_a_run(tmp_path):
    ex, de, _, _ = gateways()
    optimize(chain_library(), chain_samples(), ex, de, K=2, run_dir=tmp_path)
    reports = load_reports(tmp_path)
    rows = summary_rows(reports)
    assert [(r["epoch"], r["node"]) for r in rows][:3] == [(1, "Extractor"), (1, "Reasoner"), (1, "Answerer")]
    assert all(r["is_bottleneck"] == (r["node"] == "Reasoner") for r in rows)
    assert summary_csv(reports).splitlines()[0] == "epoch,node,mean_reward,is_bottleneck,refined,mean_return"
    paths = write_summary(tmp_path)
    assert [p.name for p in paths] == ["summary.csv", "node_rewards.png", "mean_return.png"]


def test_failed_epochs_are_listed_and_plots_still_render(tmp_path):
    failed = EpochReport(1, None, "", "", "", False, "epoch failed: WiringError")
    assert inspect_lines([failed]) == ["epoch 1: failed (epoch failed: WiringError)"]
    assert summary_rows([failed]) == []
    assert all(p.exists() for p in render_figures([failed], tmp_path))


def test_missing_reports():
    with pytest.raises(StorageError):
        load_reports("/nonexistent/run")
