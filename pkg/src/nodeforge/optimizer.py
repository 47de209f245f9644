"""Reward-driven refinement: find the bottleneck node each epoch and rewrite it."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import prompts
from .errors import InterfaceDriftError, MalformedOutputError, NodeforgeError, PreconditionError, StorageError
from .llm import ChatMessage, Gateway, extract_json_object
from .model import (
    LLM_GENERATOR,
    NodeBlueprint,
    NodeLibrary,
    _coerce_list,
    build_pipeline_graph,
    normalize_retrieval_slot,
    serialize_library,
    validate_blueprint,
    validate_library,
)
from .reward import (
    DEFAULT_ALPHA,
    DEFAULT_N_REFINE,
    MAGNITUDE,
    RewardLedger,
    StepScore,
    aggregate_epoch,
    check_alpha,
    score_trajectory,
)
from .runtime import RuntimeSettings, Sample, Trajectory, run_samples
from .search import SearchBackend

log = logging.getLogger(__name__)

LAST_EPOCH = "last_epoch"
BEST_MEAN_REWARD = "best_mean_reward"
SELECTION_POLICIES = (LAST_EPOCH, BEST_MEAN_REWARD)

_INTERFACE_KEYS = {
    "node_name": "node_name",
    "node_type": "node_type",
    "dependencies": "dependencies",
    "input": "input_keys",
    "output": "output_keys",
}


@dataclass(frozen=True)
class Evidence:
    question: str
    answer: str
    intermediate: str
    reward: float


@dataclass(frozen=True)
class Refinement:
    blueprint: NodeBlueprint
    analysis: Mapping[str, Any]
    explanation: str
    attempts: int


# ------------------------------------------------------------------ refinement

def _blocks(label: str, items: Sequence[str]) -> str:
    if len(items) == 1:
        return items[0]
    return "\n\n".join(f"[Sample {i}] {label}: {x}" for i, x in enumerate(items, 1))


def optimization_messages(bp: NodeBlueprint, evidence: Sequence[Evidence], position: int) -> list[ChatMessage]:
    reward = math.fsum(e.reward for e in evidence) / len(evidence)
    impl = {k: v for k, v in bp.to_dict().items() if k not in ("all_code", "version")}
    intermediate = "\n\n".join(f"[Sample {i}]\n{e.intermediate}" for i, e in enumerate(evidence, 1))
    focus = prompts.load("optimization_focus_llm" if bp.node_type == LLM_GENERATOR
                         else "optimization_focus_rag").text
    system, user = prompts.render(
        "node_optimization",
        question=_blocks("Question", [e.question for e in evidence]),
        answer=_blocks("Answer", [e.answer for e in evidence]),
        node_name=bp.node_name, node_type=bp.node_type, node_description=bp.description,
        node_reward=f"{reward:.6f}", node_position=position,
        node_implementation=json.dumps(impl, ensure_ascii=False, indent=2, sort_keys=True),
        node_all_code=bp.all_code or "(none)", intermediate_context=intermediate,
        optimization_focus=focus)
    return [ChatMessage("system", system), ChatMessage("user", user)]


def _drifted(bp: NodeBlueprint, obj: Mapping[str, Any]) -> list[str]:
    """Interface fields the response tries to change (top level or inside the implementation)."""
    current = bp.interface()
    fields = []
    for src in (obj, obj.get("optimized_implementation") or {}):
        if not isinstance(src, Mapping):
            continue
        for key in _INTERFACE_KEYS:
            if key in src and key not in fields:
                val = src[key]
                val = list(val) if isinstance(val, (list, tuple)) else val
                if val != current[key]:
                    fields.append(key)
    return fields


def _apply(bp: NodeBlueprint, obj: Mapping[str, Any]) -> NodeBlueprint:
    impl = obj.get("optimized_implementation")
    if not isinstance(impl, Mapping):
        raise MalformedOutputError("optimized_implementation must be an object")
    prompt = impl.get("prompt_template", bp.prompt_template)
    logic = impl.get("logic_description", bp.logic_description)
    tools = impl.get("tools_needed", list(bp.tools_needed))
    if isinstance(tools, str):
        tools = _coerce_list(tools) if tools.strip().startswith("[") else list(bp.tools_needed)
    code = obj.get("optimized_all_code", bp.all_code)
    return replace(
        bp,
        prompt_template=normalize_retrieval_slot(prompt if isinstance(prompt, str) else bp.prompt_template),
        logic_description=logic if isinstance(logic, str) else json.dumps(logic, ensure_ascii=False),
        tools_needed=tuple(str(t) for t in tools),
        all_code=code if isinstance(code, str) else bp.all_code,
        version=bp.version + 1,
    )


def _check(bp: NodeBlueprint, obj: Mapping[str, Any]) -> tuple[NodeBlueprint | None, list[str], str]:
    drift = _drifted(bp, obj)
    if drift:
        return None, drift, f"the interface fields {drift} were changed"
    new = _apply(bp, obj)
    report = validate_blueprint(new)
    if not report.ok:
        return None, [], "the blueprint is invalid: " + "; ".join(str(v) for v in report.violations)
    return new, [], ""


def refine_node(bp: NodeBlueprint, evidence: Sequence[Evidence], designer: Gateway,
                position: int = 1) -> Refinement:
    """Rewrite one node's prompt, logic and code; its interface must not change.

    An unacceptable answer gets one corrective re-prompt. A second failure
    raises :class:`InterfaceDriftError` (interface changed) or
    :class:`MalformedOutputError` (invalid blueprint).
    """
    if not evidence:
        raise PreconditionError("refine_node needs at least one evidence sample")
    messages = optimization_messages(bp, evidence, position)
    text, _ = designer.chat(messages, "json_object", required_keys=("optimized_implementation",))
    obj = extract_json_object(text)[0]
    new, drift, problem = _check(bp, obj)
    attempts = 1
    if new is None:
        log.info("refinement of %s rejected (%s); re-prompting", bp.node_name, problem)
        iface = bp.interface()
        _, user = prompts.render("interface_drift", problem=problem, node_name=bp.node_name,
                                 node_type=bp.node_type, dependencies=json.dumps(iface["dependencies"]),
                                 input_keys=json.dumps(iface["input"]), output_keys=json.dumps(iface["output"]))
        retry = messages + [ChatMessage("assistant", text), ChatMessage("user", user)]
        obj, _ = designer.chat_json(retry, required_keys=("optimized_implementation",))
        new, drift, problem = _check(bp, obj)
        attempts = 2
        if new is None:
            if drift:
                raise InterfaceDriftError(bp.node_name, drift)
            raise MalformedOutputError(f"refinement of {bp.node_name} still invalid: {problem}")
    analysis = obj.get("analysis", {})
    explanation = obj.get("optimization_explanation", "")
    return Refinement(new, analysis if isinstance(analysis, Mapping) else {"text": str(analysis)},
                      explanation if isinstance(explanation, str) else json.dumps(explanation), attempts)


# ------------------------------------------------------------------ epochs

@dataclass(frozen=True)
class EpochReport:
    epoch: int
    ledger: RewardLedger | None
    refined_node: str
    digest_before: str
    digest_after: str
    refined: bool
    note: str = ""
    designer_analysis: Mapping[str, Any] = field(default_factory=dict)

    @property
    def mean_return(self) -> float:
        """Mean over samples of the summed step rewards, i.e. of the final quality."""
        if self.ledger is None:
            return math.nan
        return math.fsum(self.ledger.per_node_mean.values())

    def to_dict(self) -> dict[str, Any]:
        return {"epoch": self.epoch, "ledger": self.ledger.to_dict() if self.ledger else None,
                "refined_node": self.refined_node, "digest_before": self.digest_before,
                "digest_after": self.digest_after, "refined": self.refined, "note": self.note,
                "designer_analysis": dict(self.designer_analysis)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EpochReport":
        ledger = RewardLedger.from_dict(d["ledger"]) if d.get("ledger") else None
        return cls(int(d["epoch"]), ledger, d["refined_node"], d["digest_before"], d["digest_after"],
                   bool(d["refined"]), d.get("note", ""), dict(d.get("designer_analysis", {})))


@dataclass(frozen=True)
class EpochSettings:
    alpha: float = DEFAULT_ALPHA
    n_refine: int = DEFAULT_N_REFINE
    delta_mode: str = MAGNITUDE
    jobs: int = 1
    cache_baseline: bool = False
    runtime: RuntimeSettings = RuntimeSettings()


@dataclass
class EpochResult:
    library: NodeLibrary
    report: EpochReport
    trajectories: list[Trajectory]
    scores: dict[str, list[StepScore]]


def _evidence(trajs: Mapping[str, Trajectory], scores: Mapping[str, Sequence[StepScore]],
              ids: Sequence[str], index: int) -> list[Evidence]:
    return [Evidence(trajs[sid].question, trajs[sid].ground_truth, trajs[sid].accumulated[-1],
                     scores[sid][index].r) for sid in ids]


def run_epoch(library: NodeLibrary, samples: Sequence[Sample], executor: Gateway, designer: Gateway,
              backend: SearchBackend | None = None, *, epoch: int = 1,
              settings: EpochSettings = EpochSettings(),
              baseline_cache: dict[str, float] | None = None) -> EpochResult:
    """Execute and score every sample, then refine the bottleneck node once."""
    if not samples:
        raise PreconditionError("validation set is empty")
    check_alpha(settings.alpha)
    order = build_pipeline_graph(library).ordered_nodes
    trajs = run_samples(library, samples, executor, designer=designer, backend=backend,
                        settings=settings.runtime, jobs=settings.jobs)
    scores: dict[str, list[StepScore]] = {}
    for traj in trajs:
        cached = baseline_cache.get(traj.sample_id) if baseline_cache is not None else None
        steps = score_trajectory(traj, settings.alpha, executor, settings.delta_mode, cached)
        if baseline_cache is not None and not steps[0].failed and not math.isnan(steps[0].J0):
            baseline_cache.setdefault(traj.sample_id, steps[0].J0)
        scores[traj.sample_id] = steps
    ledger = aggregate_epoch(scores, order, epoch, settings.n_refine, settings.alpha, settings.delta_mode)
    target = library.node(ledger.bottleneck)
    before = target.digest()
    by_id = {t.sample_id: t for t in trajs}
    if not ledger.refinement_sample_ids:
        report = EpochReport(epoch, ledger, target.node_name, before, before, False,
                             "no sample has the bottleneck as its lowest-reward step")
        return EpochResult(library.with_epoch(epoch), report, trajs, scores)
    evidence = _evidence(by_id, scores, ledger.refinement_sample_ids, order.index(target.node_name))
    try:
        ref = refine_node(target, evidence, designer, order.index(target.node_name) + 1)
    except NodeforgeError as exc:
        log.warning("epoch %d: refinement of %s failed: %s", epoch, target.node_name, exc)
        report = EpochReport(epoch, ledger, target.node_name, before, before, False,
                             f"refinement failed: {type(exc).__name__}: {exc}")
        return EpochResult(library.with_epoch(epoch), report, trajs, scores)
    new_lib = library.replace_node(ref.blueprint).with_epoch(epoch)
    check = validate_library(new_lib)
    if not check.ok:
        report = EpochReport(epoch, ledger, target.node_name, before, before, False,
                             "refined library invalid: " + check.render())
        return EpochResult(library.with_epoch(epoch), report, trajs, scores)
    analysis = {"analysis": dict(ref.analysis), "optimization_explanation": ref.explanation,
                "attempts": ref.attempts}
    report = EpochReport(epoch, ledger, target.node_name, before, ref.blueprint.digest(), True, "", analysis)
    return EpochResult(new_lib, report, trajs, scores)


# ------------------------------------------------------------------ persistence

def trajectory_document(traj: Trajectory, steps: Sequence[StepScore]) -> dict[str, Any]:
    return {"trajectory": traj.to_dict(), "scores": [s.to_dict() for s in steps]}


REPORT_COLUMNS = ("epoch", "sample_id", "t", "node", "J", "J0", "delta", "S_i", "S_c", "S_t", "r",
                  "token_count", "failed", "note")


def ledger_csv(ledger: RewardLedger) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, REPORT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in ledger.rows():
        writer.writerow({k: row[k] for k in REPORT_COLUMNS})
    return buf.getvalue()


def _json(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


class RunStore:
    """Run directory layout::

        libraries/epoch_000.json .. epoch_K.json   snapshot after each epoch
        reports/epoch_001.json, epoch_001.csv       epoch report and flat reward table
        trajectories/epoch_001/<sample_id>.json     trajectory plus its step scores
        FINAL                                       relative path of the selected library
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _write(self, rel: str, text: str) -> Path:
        path = self.root / rel
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"cannot write {path}: {exc}") from exc
        return path

    @staticmethod
    def library_rel(epoch: int) -> str:
        return f"libraries/epoch_{epoch:03d}.json"

    def save_library(self, lib: NodeLibrary, epoch: int) -> Path:
        return self._write(self.library_rel(epoch), serialize_library(lib))

    def save_epoch(self, result: EpochResult) -> None:
        rep = result.report
        self._write(f"reports/epoch_{rep.epoch:03d}.json", _json(rep.to_dict()))
        if rep.ledger is not None:
            self._write(f"reports/epoch_{rep.epoch:03d}.csv", ledger_csv(rep.ledger))
        for traj in result.trajectories:
            self._write(f"trajectories/epoch_{rep.epoch:03d}/{traj.sample_id}.json",
                        _json(trajectory_document(traj, result.scores.get(traj.sample_id, []))))

    def save_final(self, epoch: int, policy: str) -> Path:
        return self._write("FINAL", f"{self.library_rel(epoch)}\n{policy}\n")

    def save_json(self, rel: str, obj: Any) -> Path:
        return self._write(rel, _json(obj))


# ------------------------------------------------------------------ outer loop

@dataclass
class OptimizationRun:
    initial: NodeLibrary
    snapshots: list[NodeLibrary]
    reports: list[EpochReport]
    final: NodeLibrary
    final_epoch: int
    selection_policy: str = LAST_EPOCH

    def to_dict(self) -> dict[str, Any]:
        return {"final_epoch": self.final_epoch, "selection_policy": self.selection_policy,
                "reports": [r.to_dict() for r in self.reports]}


def select_final(reports: Sequence[EpochReport], K: int, policy: str) -> int:
    """Snapshot index to return: ``K`` for last_epoch, else the best-scoring evaluated snapshot.

    The report of epoch ``k`` scores snapshot ``k - 1``, so best_mean_reward
    chooses among snapshots ``0 .. K-1`` (ties: earliest).
    """
    if policy == LAST_EPOCH:
        return K
    if policy != BEST_MEAN_REWARD:
        raise PreconditionError(f"unknown selection policy {policy!r}")
    best, best_val = K, -math.inf
    for rep in reports:
        val = rep.mean_return
        if not math.isnan(val) and val > best_val:
            best, best_val = rep.epoch - 1, val
    return best


def optimize(library: NodeLibrary, samples: Sequence[Sample], executor: Gateway, designer: Gateway,
             backend: SearchBackend | None = None, *, K: int = 10,
             settings: EpochSettings = EpochSettings(), selection_policy: str = LAST_EPOCH,
             run_dir: str | Path | None = None) -> OptimizationRun:
    if K < 1:
        raise PreconditionError("K must be >= 1")
    if selection_policy not in SELECTION_POLICIES:
        raise PreconditionError(f"unknown selection policy {selection_policy!r}")
    check_alpha(settings.alpha)
    report = validate_library(library)
    if not report.ok:
        raise PreconditionError("library is invalid:\n" + report.render())
    store = RunStore(run_dir) if run_dir is not None else None
    cache: dict[str, float] | None = {} if settings.cache_baseline else None
    snapshots = [library]
    reports: list[EpochReport] = []
    if store:
        store.save_library(library, 0)
    current = library
    for k in range(1, K + 1):
        try:
            result = run_epoch(current, samples, executor, designer, backend, epoch=k,
                               settings=settings, baseline_cache=cache)
        except StorageError:
            raise
        except NodeforgeError as exc:
            log.error("epoch %d failed: %s", k, exc)
            digest = ""
            rep = EpochReport(k, None, "", digest, digest, False, f"epoch failed: {type(exc).__name__}: {exc}")
            result = EpochResult(current.with_epoch(k), rep, [], {})
        current = result.library
        snapshots.append(current)
        reports.append(result.report)
        if store:
            store.save_library(current, k)
            store.save_epoch(result)
    final_idx = select_final(reports, K, selection_policy)
    if store:
        store.save_final(final_idx, selection_policy)
    return OptimizationRun(library, snapshots, reports, snapshots[final_idx], final_idx, selection_policy)


def recompute_ledger(run_dir: str | Path, epoch: int, node_order: Sequence[str] | None = None,
                     alpha: float = DEFAULT_ALPHA, delta_mode: str = MAGNITUDE,
                     n_refine: int = DEFAULT_N_REFINE) -> RewardLedger:
    """Rebuild an epoch ledger from its trajectory dumps alone (J values are in the dumps)."""
    from .reward import compose_scores

    tdir = Path(run_dir) / "trajectories" / f"epoch_{epoch:03d}"
    scores = {}
    order = tuple(node_order) if node_order else None
    for path in sorted(tdir.glob("*.json")):
        doc = json.loads(path.read_text("utf-8"))
        traj = Trajectory.from_dict(doc["trajectory"])
        stored = [StepScore.from_dict(s) for s in doc["scores"]]
        Js = [None if s.failed else s.J for s in stored]
        scores[traj.sample_id] = compose_scores(stored[0].J0, Js, alpha, delta_mode,
                                                [s.token_count for s in stored], [s.note for s in stored])
        order = order or tuple(traj.node_names)
    if not scores:
        raise StorageError(f"no trajectory dumps in {tdir}")
    return aggregate_epoch(scores, order, epoch, n_refine, alpha, delta_mode)
