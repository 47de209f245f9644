"""Execute a node library on one sample, accumulating rendered step outputs."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from . import prompts
from .errors import MalformedOutputError, MissingInputError, ProviderError, SearchBackendError, WiringError
from .harvest import run_multi_turn_search
from .llm import JSON_OBJECT, NORMAL, ChatMessage, Gateway, extract_json_object
from .model import (
    INPUT_PREFIX,
    LLM_GENERATOR,
    RETRIEVAL_RAG,
    RETRIEVED_CONTEXT,
    WHOLE_OUTPUT,
    NodeBlueprint,
    NodeLibrary,
    fill_placeholders,
    normalize_retrieval_slot,
    ordered_nodes,
    split_prompt,
)
from .search import GENERAL_WEB, SearchBackend

log = logging.getLogger(__name__)

# node-level failures that become placeholder steps instead of aborting the run
STEP_FAILURES = (ProviderError, MalformedOutputError, SearchBackendError)


@dataclass(frozen=True)
class Sample:
    sample_id: str
    question: str
    answer: str

    def to_dict(self):
        return {"sample_id": self.sample_id, "question": self.question, "answer": self.answer}


@dataclass(frozen=True)
class StepRecord:
    node_name: str
    output: Mapping[str, Any]
    rendered: str
    failed: bool = False
    failure_note: str = ""

    def to_dict(self):
        return {"node_name": self.node_name, "output": dict(self.output), "rendered": self.rendered,
                "failed": self.failed, "failure_note": self.failure_note}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StepRecord":
        return cls(d["node_name"], dict(d["output"]), d["rendered"], bool(d.get("failed", False)),
                   d.get("failure_note", ""))


@dataclass(frozen=True)
class Trajectory:
    """One pipeline execution; ``accumulated[t]`` is A_t with ``accumulated[0] == ""``."""

    sample_id: str
    question: str
    ground_truth: str
    steps: tuple[StepRecord, ...]
    accumulated: tuple[str, ...]
    final_answer: str
    node_versions: Mapping[str, int] = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.steps)

    @property
    def node_names(self) -> list[str]:
        return [s.node_name for s in self.steps]

    def to_dict(self):
        return {"sample_id": self.sample_id, "question": self.question, "ground_truth": self.ground_truth,
                "steps": [s.to_dict() for s in self.steps], "accumulated": list(self.accumulated),
                "final_answer": self.final_answer, "node_versions": dict(self.node_versions)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Trajectory":
        return cls(str(d["sample_id"]), d["question"], d["ground_truth"],
                   tuple(StepRecord.from_dict(s) for s in d["steps"]), tuple(d["accumulated"]),
                   d["final_answer"], dict(d.get("node_versions", {})))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Trajectory":
        return cls.from_dict(json.loads(text))


def render_value(value: Any) -> str:
    return value if isinstance(value, str) else json.dumps(value, ensure_ascii=False, sort_keys=True)


def render_output(output: Mapping[str, Any]) -> str:
    """Text form of a node output: the bare value for one key, else a JSON object."""
    if len(output) == 1:
        return render_value(next(iter(output.values())))
    return json.dumps(dict(output), ensure_ascii=False, indent=2, sort_keys=True)


def render_step(node_name: str, body: str) -> str:
    return f"### Output of {node_name}\n{body}\n"


def failure_placeholder(node_name: str, note: str) -> str:
    return f"[node {node_name} failed: {note}]"


# ------------------------------------------------------------------ single node

@dataclass(frozen=True)
class RuntimeSettings:
    search_rounds: int = 10
    engine_kind: str = GENERAL_WEB
    input_chars: int = 4000


def _wants_json(bp: NodeBlueprint) -> bool:
    return len(bp.output_keys) > 1 or "json" in bp.prompt_template.lower()


def _messages(bp: NodeBlueprint, values: Mapping[str, str]) -> list[ChatMessage]:
    template = normalize_retrieval_slot(bp.prompt_template)
    system, user = split_prompt(template)
    system, user = fill_placeholders(system, values), fill_placeholders(user, values)
    if bp.constraints and "{constraints}" not in template:
        user = f"{user}\n\nConstraints: {bp.constraints}"
    msgs = [ChatMessage("system", system)] if system else []
    msgs.append(ChatMessage("user", user or "(no input)"))
    return msgs


def _map_output(bp: NodeBlueprint, text: str, json_mode: bool) -> dict[str, Any]:
    found = extract_json_object(text)
    obj = found[0] if found else None
    if json_mode:
        if obj is None:
            raise MalformedOutputError(f"{bp.node_name}: no JSON object in reply", raw=text)
        return {k: obj[k] for k in bp.output_keys}
    (key,) = bp.output_keys
    if obj is not None and set(obj) == {key}:
        return {key: obj[key]}
    return {key: text.strip()}


def _chat_node(bp: NodeBlueprint, values: Mapping[str, str], executor: Gateway) -> dict[str, Any]:
    json_mode = _wants_json(bp)
    if not bp.output_keys:
        raise MalformedOutputError(f"{bp.node_name} declares no output keys")
    text, _ = executor.chat(_messages(bp, values), JSON_OBJECT if json_mode else NORMAL,
                            required_keys=bp.output_keys if json_mode else ())
    return _map_output(bp, text, json_mode)


def _norm(text: str) -> str:
    return " ".join(text.lower().split())


def retrieval_target(bp: NodeBlueprint, inputs: Mapping[str, Any], designer: Gateway,
                     question: str = "", input_chars: int = 4000) -> str:
    """Distill logic_description + inputs into a search target that is not the question itself."""
    inputs_text = "\n".join(f"- {k}: {render_value(v)[:input_chars]}" for k, v in inputs.items()) or "(none)"
    system, user = prompts.render("retrieval_target", node_name=bp.node_name,
                                  logic_description=bp.logic_description or bp.description,
                                  inputs_text=inputs_text)
    obj, _ = designer.chat_json([ChatMessage("system", system), ChatMessage("user", user)],
                                required_keys=("target_description",))
    target = str(obj["target_description"]).strip()
    q = _norm(question)
    if not target or (q and q in _norm(target)):
        log.info("%s: retrieval target restated the question; using logic_description", bp.node_name)
        target = bp.logic_description or bp.description or bp.node_name
    return target


def execute_node(bp: NodeBlueprint, inputs: Mapping[str, Any], executor: Gateway, *,
                 designer: Gateway | None = None, backend: SearchBackend | None = None,
                 settings: RuntimeSettings = RuntimeSettings(), question: str = "") -> dict[str, Any]:
    """Run one blueprint; returns a mapping over its output keys."""
    for key in bp.input_keys:
        if key not in inputs:
            raise MissingInputError(bp.node_name, key)
    values = {k: render_value(inputs[k]) for k in bp.input_keys}
    if bp.constraints:
        values["constraints"] = bp.constraints
    if bp.node_type == LLM_GENERATOR:
        return _chat_node(bp, values, executor)
    if bp.node_type == RETRIEVAL_RAG:
        if designer is None or backend is None:
            raise WiringError(f"{bp.node_name}: retrieval needs a designer gateway and a search backend")
        target = retrieval_target(bp, {k: inputs[k] for k in bp.input_keys}, designer, question,
                                  settings.input_chars)
        session = run_multi_turn_search(target, settings.engine_kind, backend, executor, settings.search_rounds)
        values[RETRIEVED_CONTEXT] = session.render()
        return _chat_node(bp, values, executor)
    raise WiringError(f"{bp.node_name}: cannot execute node type {bp.node_type!r}")


# ------------------------------------------------------------------ pipeline

def _resolve(src: str, sample: Sample, outputs: Mapping[str, Mapping[str, Any]],
             rendered: Mapping[str, str], consumer: str, key: str) -> Any:
    if src.startswith(INPUT_PREFIX):
        name = src[len(INPUT_PREFIX):]
        if name == "question":
            return sample.question
        raise WiringError(f"{consumer}.{key}: initial field {name!r} is not available")
    node, _, out_key = src.partition(".")
    if node not in outputs:
        raise WiringError(f"{consumer}.{key}: source {src!r} has not been produced")
    if out_key == WHOLE_OUTPUT:
        return rendered[node]
    if out_key not in outputs[node]:
        raise WiringError(f"{consumer}.{key}: {node} produced no key {out_key!r}")
    return outputs[node][out_key]


def run_pipeline(library: NodeLibrary, sample: Sample, executor: Gateway, *,
                 designer: Gateway | None = None, backend: SearchBackend | None = None,
                 settings: RuntimeSettings = RuntimeSettings()) -> Trajectory:
    order = ordered_nodes(library)
    outputs: dict[str, dict[str, Any]] = {}
    bodies: dict[str, str] = {}
    steps: list[StepRecord] = []
    accumulated = [""]
    for bp in order:
        wiring = library.wiring_for(bp.node_name)
        inputs = {}
        for key in bp.input_keys:
            if key not in wiring:
                raise WiringError(f"{bp.node_name}.{key}: no source in connections_plan")
            inputs[key] = _resolve(wiring[key], sample, outputs, bodies, bp.node_name, key)
        try:
            out = execute_node(bp, inputs, executor, designer=designer, backend=backend,
                               settings=settings, question=sample.question)
            body, failed, note = render_output(out), False, ""
        except STEP_FAILURES as exc:
            note = f"{type(exc).__name__}: {exc}".splitlines()[0]
            log.warning("sample %s: node %s failed: %s", sample.sample_id, bp.node_name, note)
            body, failed = failure_placeholder(bp.node_name, note), True
            out = {k: body for k in bp.output_keys}
        outputs[bp.node_name], bodies[bp.node_name] = out, body
        block = render_step(bp.node_name, body)
        steps.append(StepRecord(bp.node_name, out, block, failed, note))
        accumulated.append(accumulated[-1] + block)
    node, _, key = library.final_output.partition(".")
    if node not in outputs or key not in outputs[node]:
        raise WiringError(f"final_output {library.final_output!r} was not produced")
    return Trajectory(sample.sample_id, sample.question, sample.answer, tuple(steps), tuple(accumulated),
                      render_value(outputs[node][key]), {bp.node_name: bp.version for bp in order})


def run_samples(library: NodeLibrary, samples: Sequence[Sample], executor: Gateway, *,
                designer: Gateway | None = None, backend: SearchBackend | None = None,
                settings: RuntimeSettings = RuntimeSettings(), jobs: int = 1) -> list[Trajectory]:
    """Trajectories in sample order; ``jobs > 1`` runs samples on a thread pool."""

    def one(s):
        return run_pipeline(library, s, executor, designer=designer, backend=backend, settings=settings)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(one, samples))
    return [one(s) for s in samples]
