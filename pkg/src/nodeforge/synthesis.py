"""Initial node generation from the four strategy analyses."""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from typing import Any, Iterable, Mapping, Sequence

from . import prompts
from .errors import MalformedOutputError, PreconditionError, SchemaError, ValidationError
from .harvest import STRATEGIES, STRATEGY_TITLE, StrategyAnalysis, render_samples
from .llm import ChatMessage, Gateway
from .model import (
    CYCLE,
    DANGLING,
    DEFAULT_INITIAL_FIELDS,
    DUPLICATE_NAME,
    MISSING_SECTION,
    TOOLS_MISMATCH,
    TYPE_INVALID,
    UNDECLARED_PLACEHOLDER,
    NodeBlueprint,
    NodeLibrary,
    ValidationReport,
    Violation,
    blueprint_from_dict,
    validate_library,
    validate_nodes,
)

log = logging.getLogger(__name__)

SCHEMA = "schema"

_HINTS = {
    CYCLE: "Dependencies must form a valid DAG.",
    TYPE_INVALID: "Allowed node types: LLM_Generator and Retrieval_RAG.",
    TOOLS_MISMATCH: 'tools_needed: For Retrieval_RAG nodes use ["Search"]; for LLM_Generator use [].',
    MISSING_SECTION: 'prompt_template MUST contain both "System Prompt:" and "User Prompt:".',
    UNDECLARED_PLACEHOLDER: "Every {placeholder} in a prompt_template must be one of the node's input keys, "
                            "or {retrieved_context} for Retrieval_RAG nodes.",
    DANGLING: "Every dependency must name a node defined in the pipeline.",
    DUPLICATE_NAME: "Node names must be unique.",
    SCHEMA: "Every node needs node_name, node_type, dependencies, input, output and implementation.",
}


def _parse_nodes(obj: Mapping[str, Any]) -> tuple[list[NodeBlueprint], ValidationReport]:
    raw = obj.get("nodes")
    if not isinstance(raw, list):
        return [], ValidationReport((Violation(SCHEMA, "'nodes' must be a list", "nodes"),))
    nodes, problems = [], []
    for i, item in enumerate(raw):
        try:
            bp = blueprint_from_dict(item, f"nodes[{i}]")
        except SchemaError as exc:
            problems.append(Violation(SCHEMA, str(exc), exc.path))
            continue
        nodes.append(replace(bp, version=0))
    if not raw:
        problems.append(Violation(SCHEMA, "pipeline has no nodes", "nodes"))
    return nodes, ValidationReport(tuple(problems))


def _draft(obj: Mapping[str, Any], provenance: Mapping[str, Any]) -> tuple[NodeLibrary, ValidationReport]:
    nodes, report = _parse_nodes(obj)
    report = report + validate_nodes(nodes)
    code = obj.get("Connections", obj.get("connections", ""))
    code = code if isinstance(code, str) else json.dumps(code, ensure_ascii=False)
    desc = obj.get("pipeline_description", "")
    lib = NodeLibrary(desc if isinstance(desc, str) else json.dumps(desc, ensure_ascii=False),
                      tuple(nodes), {"source_code": code}, 0, dict(provenance))
    return lib, report


def generation_messages(task_thinking: str, sample_previews: Sequence[tuple[str, str]],
                        analyses: Sequence[StrategyAnalysis], preview_count: int = 3,
                        preview_chars: int = 2000) -> list[ChatMessage]:
    by_strategy = {a.strategy: a for a in analyses}
    missing = [s for s in STRATEGIES if s not in by_strategy]
    if missing:
        raise PreconditionError(f"missing strategy analyses: {missing}")
    analysis_text = "\n\n".join(
        f"### {STRATEGY_TITLE[s]}\n{json.dumps(by_strategy[s].payload, ensure_ascii=False, indent=2, sort_keys=True)}"
        for s in STRATEGIES)
    previews = list(sample_previews)[:preview_count]
    samples_section = "Task Samples:\n" + render_samples(previews, preview_chars) if previews else ""
    system, user = prompts.render("node_generation", task_thinking=task_thinking,
                                  task_samples_section=samples_section, strategy_analysis=analysis_text,
                                  code_template=prompts.raw("node_template").rstrip("\n"))
    return [ChatMessage("system", system), ChatMessage("user", user)]


def regenerate_on_failure(previous_output: str, violations: ValidationReport, designer: Gateway,
                          messages: Sequence[ChatMessage], provenance: Mapping[str, Any] | None = None,
                          ) -> NodeLibrary:
    """One re-prompt embedding the violations; a second failure is terminal.

    Returns an unwired draft library (``connections_plan`` holds only the
    generated execution code under ``source_code``).
    """
    if violations.ok:
        raise PreconditionError("regenerate_on_failure needs at least one violation")
    hints = [_HINTS[c] for c in sorted(violations.codes) if c in _HINTS]
    _, user = prompts.render("regenerate", violations=violations.render(),
                             violation_hints="\n".join(hints))
    retry = list(messages) + [ChatMessage("assistant", previous_output or "(empty)"), ChatMessage("user", user)]
    obj, _ = designer.chat_json(retry, required_keys=("nodes",))
    lib, report = _draft(obj, provenance or {})
    if not report.ok:
        raise ValidationError("generated pipeline still invalid after regeneration:\n" + report.render(),
                              [violations, report])
    return lib


def _nodes_summary(lib: NodeLibrary) -> str:
    return "\n".join(
        f"- {n.node_name} ({n.node_type}): dependencies={list(n.dependencies)}; "
        f"input={list(n.input_keys)}; output={list(n.output_keys)}" for n in lib.nodes)


def _wire(draft: NodeLibrary, designer: Gateway, initial_fields: Iterable[str]) -> NodeLibrary:
    code = draft.connections_plan.get("source_code", "")
    system, user = prompts.render("wiring", initial_fields=", ".join(f"input.{f}" for f in initial_fields),
                                  nodes_summary=_nodes_summary(draft), connections_code=code or "(none)")
    obj, _ = designer.chat_json([ChatMessage("system", system), ChatMessage("user", user)],
                                required_keys=("nodes", "final_output"))
    wiring = obj["nodes"]
    if not isinstance(wiring, Mapping):
        raise MalformedOutputError("wiring 'nodes' must be an object")
    plan_nodes = {}
    for name, mapping in wiring.items():
        if not isinstance(mapping, Mapping):
            raise MalformedOutputError(f"wiring for {name!r} must be an object")
        plan_nodes[str(name)] = {str(k): str(v) for k, v in mapping.items()}
    plan = {"nodes": plan_nodes, "final_output": str(obj["final_output"]), "source_code": code}
    return NodeLibrary(draft.pipeline_description, draft.nodes, plan, 0, draft.provenance)


def generate_initial_nodes(task_thinking: str, sample_previews: Sequence[tuple[str, str]],
                           analyses: Sequence[StrategyAnalysis], designer: Gateway, *,
                           provenance: Mapping[str, Any] | None = None,
                           initial_fields: Iterable[str] = DEFAULT_INITIAL_FIELDS,
                           preview_count: int = 3, preview_chars: int = 2000) -> NodeLibrary:
    """Generate, validate (one regeneration allowed), then wire the epoch-0 library."""
    initial_fields = tuple(initial_fields)
    messages = generation_messages(task_thinking, sample_previews, analyses, preview_count, preview_chars)
    text, _ = designer.chat(messages, "json_object", required_keys=("nodes",))
    obj = json.loads(text)
    draft, report = _draft(obj, provenance or {})
    if not report.ok:
        log.info("generated pipeline invalid, regenerating:\n%s", report.render())
        draft = regenerate_on_failure(text, report, designer, messages, provenance)
    lib = _wire(draft, designer, initial_fields)
    final = validate_library(lib, initial_fields)
    if not final.ok:
        raise ValidationError("wired library is invalid:\n" + final.render(), [final])
    return lib
