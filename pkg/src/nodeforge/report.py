"""Run summaries: a per-epoch CSV table and matplotlib figures."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

from .errors import StorageError  # noqa: E402
from .optimizer import EpochReport  # noqa: E402

SUMMARY_COLUMNS = ("epoch", "node", "mean_reward", "is_bottleneck", "refined", "mean_return")


def load_reports(run_dir: str | Path) -> list[EpochReport]:
    rdir = Path(run_dir) / "reports"
    paths = sorted(rdir.glob("epoch_*.json"))
    if not paths:
        raise StorageError(f"no epoch reports under {rdir}")
    return [EpochReport.from_dict(json.loads(p.read_text("utf-8"))) for p in paths]


def summary_rows(reports: Sequence[EpochReport]) -> list[dict]:
    rows = []
    for rep in reports:
        if rep.ledger is None:
            continue
        for node in rep.ledger.node_order:
            rows.append({"epoch": rep.epoch, "node": node, "mean_reward": rep.ledger.per_node_mean[node],
                         "is_bottleneck": node == rep.ledger.bottleneck,
                         "refined": rep.refined and node == rep.refined_node, "mean_return": rep.mean_return})
    return rows


def summary_csv(reports: Sequence[EpochReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, SUMMARY_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(summary_rows(reports))
    return buf.getvalue()


def inspect_lines(reports: Sequence[EpochReport]) -> list[str]:
    lines = []
    for rep in reports:
        if rep.ledger is None:
            lines.append(f"epoch {rep.epoch}: failed ({rep.note})")
            continue
        status = "refined" if rep.refined else f"unchanged ({rep.note})"
        means = ", ".join(f"{n}={rep.ledger.per_node_mean[n]:+.4f}" for n in rep.ledger.node_order)
        lines.append(f"epoch {rep.epoch}: bottleneck={rep.ledger.bottleneck} mean_return={rep.mean_return:+.4f} "
                     f"{status}; {means}")
    return lines


def _save(fig, path: Path) -> None:
    # no Software/date metadata, so reruns give identical bytes
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def render_figures(reports: Sequence[EpochReport], out_dir: str | Path) -> list[Path]:
    """Per-node mean reward by epoch and mean return by epoch, as PNG files."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create {out}: {exc}") from exc
    done = [r for r in reports if r.ledger is not None]
    paths = []

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    if done:
        for node in done[0].ledger.node_order:
            ax.plot([r.epoch for r in done], [r.ledger.per_node_mean[node] for r in done], marker="o", label=node)
        ax.scatter([r.epoch for r in done], [r.ledger.per_node_mean[r.ledger.bottleneck] for r in done],
                   s=120, facecolors="none", edgecolors="black", label="bottleneck")
        ax.legend(fontsize=7, loc="best")
    ax.axhline(0.0, color="grey", lw=0.5)
    ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean step reward")
    ax.set_title("Per-node mean reward")
    fig.tight_layout()
    paths.append(out / "node_rewards.png")
    _save(fig, paths[-1])

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot([r.epoch for r in done], [r.mean_return for r in done], marker="o", color="tab:blue")
    ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean final quality")
    ax.set_title("Pipeline quality by epoch")
    fig.tight_layout()
    paths.append(out / "mean_return.png")
    _save(fig, paths[-1])
    return paths


def write_summary(run_dir: str | Path) -> list[Path]:
    run_dir = Path(run_dir)
    reports = load_reports(run_dir)
    csv_path = run_dir / "summary.csv"
    try:
        csv_path.write_text(summary_csv(reports), encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot write {csv_path}: {exc}") from exc
    return [csv_path] + render_figures(reports, run_dir / "figures")
