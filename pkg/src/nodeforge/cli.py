"""Command-line entry point: generate, optimize, run, score, inspect, demo."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .errors import (
    MalformedOutputError,
    NodeforgeError,
    ProviderError,
    SearchBackendError,
    StorageError,
    UnsupportedError,
)
from .config import ConfigError, RunConfig, load_config, load_dataset
from .harvest import harvest, sample_context_buffer
from .llm import gateway_from_config
from .model import build_pipeline_graph, deserialize_library, serialize_library, validate_library
from .optimizer import RunStore, ledger_csv, optimize, trajectory_document
from .reward import StepScore, aggregate_epoch, compose_scores, score_trajectory
from .runtime import Trajectory, run_samples
from .search import backend_from_config
from .synthesis import generate_initial_nodes

log = logging.getLogger("nodeforge")

EXIT_OK, EXIT_USAGE, EXIT_PROVIDER, EXIT_STORAGE = 0, 2, 3, 4
_PROVIDER_ERRORS = (ProviderError, SearchBackendError, UnsupportedError, MalformedOutputError)


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc
    return path


def _dump(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def _read_library(path: str | Path):
    try:
        text = Path(path).read_text("utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read library {path}: {exc}") from exc
    lib = deserialize_library(text)
    build_pipeline_graph(lib)  # raises CycleError / DanglingDependencyError first
    report = validate_library(lib)
    if not report.ok:
        raise ConfigError(f"library {path} is invalid:\n{report.render()}")
    return lib


def _gateways(cfg: RunConfig):
    designer = gateway_from_config(cfg.designer, "designer", cfg.base)
    executor = gateway_from_config(cfg.executor, "executor", cfg.base)
    return designer, executor


# ------------------------------------------------------------------ commands

def cmd_generate(cfg: RunConfig, out: Path) -> Path:
    """Harvest knowledge and synthesize the epoch-0 library into ``out/library.json``."""
    samples = load_dataset(cfg.path(cfg.dataset), cfg.question_key, cfg.answer_key, cfg.id_key)
    designer = gateway_from_config(cfg.designer, "designer", cfg.base)
    backend = backend_from_config(cfg.search, cfg.base)
    buffer = sample_context_buffer([(s.question, s.answer) for s in samples], cfg.N, cfg.seed,
                                   Path(cfg.dataset).name)
    result = harvest(buffer, designer, backend, cfg.harvest_settings())
    provenance = {"dataset": Path(cfg.dataset).name, "N": cfg.N, "seed": cfg.seed,
                  "search_rounds": cfg.max_search_rounds}
    lib = generate_initial_nodes(result.profile.thinking, buffer.samples, result.analyses, designer,
                                 provenance=provenance, preview_count=cfg.preview_count,
                                 preview_chars=cfg.preview_chars)
    _write(out / "harvest.json", _dump(result.to_dict()))
    _write(out / "config.json", _dump(cfg.to_dict()))
    usage = designer.usage_summary()
    _write(out / "usage.json", _dump({"designer": usage.to_dict()}))
    return _write(out / "library.json", serialize_library(lib))


def cmd_optimize(cfg: RunConfig, library_path: Path, out: Path) -> Path:
    """Run the refinement epochs; returns the selected final library path."""
    from .report import write_summary

    lib = _read_library(library_path)
    val_path = cfg.val_dataset or cfg.dataset
    samples = load_dataset(cfg.path(val_path), cfg.question_key, cfg.answer_key, cfg.id_key)
    designer, executor = _gateways(cfg)
    backend = backend_from_config(cfg.search, cfg.base)
    RunStore(out).save_json("config.json", cfg.to_dict())
    run = optimize(lib, samples, executor, designer, backend, K=cfg.K, settings=cfg.epoch_settings(),
                   selection_policy=cfg.selection_policy, run_dir=out)
    RunStore(out).save_json("usage.json", {"designer": designer.usage_summary().to_dict(),
                                           "executor": executor.usage_summary().to_dict()})
    write_summary(out)
    return out / RunStore.library_rel(run.final_epoch)


def cmd_run(cfg: RunConfig, library_path: Path, samples_path: Path, out: Path) -> list[Path]:
    lib = _read_library(library_path)
    samples = load_dataset(samples_path, cfg.question_key, cfg.answer_key, cfg.id_key)
    designer, executor = _gateways(cfg)
    backend = backend_from_config(cfg.search, cfg.base)
    trajs = run_samples(lib, samples, executor, designer=designer, backend=backend,
                        settings=cfg.epoch_settings().runtime, jobs=cfg.jobs)
    return [_write(out / f"{t.sample_id}.json", t.dumps()) for t in trajs]


def _load_trajectory(path: Path) -> tuple[Trajectory, list[StepScore] | None]:
    try:
        doc = json.loads(path.read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read trajectory dump {path}: {exc}") from exc
    if "trajectory" in doc:
        return Trajectory.from_dict(doc["trajectory"]), [StepScore.from_dict(s) for s in doc.get("scores", [])]
    return Trajectory.from_dict(doc), None


def cmd_score(cfg: RunConfig, paths: Sequence[Path], out: Path, rescore: bool = True, epoch: int = 0) -> Path:
    """Score trajectory dumps into a reward report (JSON plus CSV).

    With ``rescore`` the Executor scores every step again; otherwise the J
    values stored in the dumps are recomposed.
    """
    executor = gateway_from_config(cfg.executor, "executor", cfg.base) if rescore else None
    scores, order = {}, None
    for path in sorted(paths):
        traj, stored = _load_trajectory(path)
        if rescore:
            steps = score_trajectory(traj, cfg.alpha, executor, cfg.delta_mode)
        else:
            if not stored:
                raise ConfigError(f"{path} holds no stored scores; rescoring is required")
            steps = compose_scores(stored[0].J0, [None if s.failed else s.J for s in stored], cfg.alpha,
                                   cfg.delta_mode, [s.token_count for s in stored], [s.note for s in stored])
        scores[traj.sample_id] = steps
        order = order or tuple(traj.node_names)
    if not scores:
        raise ConfigError("no trajectory dumps given")
    ledger = aggregate_epoch(scores, order, epoch, cfg.n_refine, cfg.alpha, cfg.delta_mode)
    _write(out / "report.csv", ledger_csv(ledger))
    return _write(out / "report.json", _dump(ledger.to_dict()))


def cmd_inspect(run_dir: Path) -> list[str]:
    from .report import inspect_lines, load_reports

    lines = inspect_lines(load_reports(run_dir))
    final = run_dir / "FINAL"
    if final.exists():
        lines.append("final library: " + final.read_text("utf-8").splitlines()[0])
    return lines


# ------------------------------------------------------------------ argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML or JSON run config")
    common.add_argument("--seed", type=int)
    common.add_argument("--alpha", type=float)
    common.add_argument("--epochs", type=int, dest="K")
    common.add_argument("--n", type=int, dest="N")
    common.add_argument("--rounds", type=int, dest="max_search_rounds")
    common.add_argument("--delta-mode", dest="delta_mode")
    common.add_argument("--jobs", type=int)
    common.add_argument("--dataset")
    common.add_argument("--out", type=Path, default=Path("out"))
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="nodeforge", description="Search-based node generation and "
                                "perplexity-reward node optimization for multi-agent pipelines.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="build the epoch-0 node library")
    o = sub.add_parser("optimize", parents=[common], help="refine the library for K epochs")
    o.add_argument("--library", type=Path, required=True)
    o.add_argument("--policy", choices=("last_epoch", "best_mean_reward"), dest="selection_policy")
    r = sub.add_parser("run", parents=[common], help="execute a library on a sample file")
    r.add_argument("--library", type=Path, required=True)
    r.add_argument("--samples", type=Path, required=True)
    s = sub.add_parser("score", parents=[common], help="score trajectory dumps")
    s.add_argument("trajectories", type=Path, nargs="+")
    s.add_argument("--stored", action="store_true", help="recompose stored J values instead of rescoring")
    s.add_argument("--epoch", type=int, default=0, help="epoch number written into the report")
    i = sub.add_parser("inspect", help="summarize a run directory")
    i.add_argument("run_dir", type=Path)
    d = sub.add_parser("demo", help="write the offline judicial demo scenario")
    d.add_argument("target", type=Path)
    return p


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=args.seed, alpha=args.alpha, K=args.K, N=args.N,
                              max_search_rounds=args.max_search_rounds, delta_mode=args.delta_mode,
                              jobs=args.jobs, dataset=args.dataset,
                              selection_policy=getattr(args, "selection_policy", None))


def _dispatch(args) -> int:
    if args.command == "inspect":
        for line in cmd_inspect(args.run_dir):
            print(line)
        return EXIT_OK
    if args.command == "demo":
        from .demo import write_scenario

        cfg_path = write_scenario(args.target)
        print(cfg_path)
        return EXIT_OK
    cfg = _config(args)
    if args.command == "generate":
        print(cmd_generate(cfg, args.out))
    elif args.command == "optimize":
        print(cmd_optimize(cfg, args.library, args.out))
    elif args.command == "run":
        for path in cmd_run(cfg, args.library, args.samples, args.out):
            print(path)
    elif args.command == "score":
        print(cmd_score(cfg, args.trajectories, args.out, rescore=not args.stored, epoch=args.epoch))
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except StorageError as exc:
        print(f"error: storage: {exc}", file=sys.stderr)
        return EXIT_STORAGE
    except _PROVIDER_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (NodeforgeError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
