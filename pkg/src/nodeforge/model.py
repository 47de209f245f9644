"""Node blueprints, node libraries, validation and the dependency graph.

A library file is canonical JSON: sorted keys, two-space indent, UTF-8, and a
trailing newline, so equal libraries serialize to identical bytes.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import re
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping

from .errors import CycleError, DanglingDependencyError, SchemaError

LLM_GENERATOR = "LLM_Generator"
RETRIEVAL_RAG = "Retrieval_RAG"
NODE_TYPES = (LLM_GENERATOR, RETRIEVAL_RAG)

SYSTEM_MARKER = "System Prompt:"
USER_MARKER = "User Prompt:"

RETRIEVED_CONTEXT = "retrieved_context"
# Slots filled by the runtime rather than by wiring.
RESERVED_SLOTS = frozenset({RETRIEVED_CONTEXT, "constraints"})
# Designers sometimes use the alternative name; normalized on ingestion.
RETRIEVED_ALIASES = ("retrieved_chunks",)

INPUT_PREFIX = "input."
WHOLE_OUTPUT = "*"
DEFAULT_INITIAL_FIELDS = ("question",)

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_PLACEHOLDER = re.compile(r"\{\{?\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}?\}")


def placeholders(template: str) -> list[str]:
    """Placeholder names referenced as ``{name}`` (or ``{{name}}``), in order of first use."""
    return list(dict.fromkeys(_PLACEHOLDER.findall(template)))


def split_prompt(template: str) -> tuple[str, str]:
    """Split a prompt template into its system and user sections."""
    sys_at = template.find(SYSTEM_MARKER)
    user_at = template.find(USER_MARKER)
    if user_at < 0:
        return template.replace(SYSTEM_MARKER, "", 1).strip(), ""
    if sys_at < 0:
        return "", template[user_at + len(USER_MARKER):].strip()
    if sys_at < user_at:
        system = template[sys_at + len(SYSTEM_MARKER):user_at]
        user = template[user_at + len(USER_MARKER):]
    else:
        user = template[user_at + len(USER_MARKER):sys_at]
        system = template[sys_at + len(SYSTEM_MARKER):]
    return system.strip(), user.strip()


def fill_placeholders(text: str, values: Mapping[str, str]) -> str:
    """Substitute ``{name}`` / ``{{name}}`` for every name in *values*; others are left alone."""

    def sub(m: re.Match) -> str:
        name = m.group(1)
        return values[name] if name in values else m.group(0)

    return _PLACEHOLDER.sub(sub, text)


@dataclass(frozen=True)
class NodeBlueprint:
    node_name: str
    node_type: str
    description: str = ""
    dependencies: tuple[str, ...] = ()
    input_keys: tuple[str, ...] = ()
    output_keys: tuple[str, ...] = ()
    constraints: str = ""
    logic_description: str = ""
    prompt_template: str = ""
    tools_needed: tuple[str, ...] = ()
    all_code: str = ""
    version: int = 0

    def __post_init__(self):
        for name in ("dependencies", "input_keys", "output_keys", "tools_needed"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "node_name": self.node_name,
            "node_type": self.node_type,
            "description": self.description,
            "dependencies": list(self.dependencies),
            "input": list(self.input_keys),
            "output": list(self.output_keys),
            "constraints": self.constraints,
            "implementation": {
                "logic_description": self.logic_description,
                "prompt_template": self.prompt_template,
                "tools_needed": list(self.tools_needed),
            },
            "all_code": self.all_code,
            "version": self.version,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def interface(self) -> dict[str, Any]:
        return {
            "node_name": self.node_name,
            "node_type": self.node_type,
            "dependencies": list(self.dependencies),
            "input": list(self.input_keys),
            "output": list(self.output_keys),
        }


@dataclass(frozen=True)
class NodeLibrary:
    """Ordered blueprints plus declarative wiring.

    ``connections_plan`` has two keys: ``nodes`` maps each node name to a
    ``{input_key: source}`` map, and ``final_output`` names ``Node.key``.
    A source is ``input.<field>``, ``<Node>.<key>``, or ``<Node>.*`` for
    the producer's whole output rendered as text.
    """

    pipeline_description: str = ""
    nodes: tuple[NodeBlueprint, ...] = ()
    connections_plan: Mapping[str, Any] = field(default_factory=dict)
    epoch: int = 0
    provenance: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))

    @property
    def names(self) -> list[str]:
        return [n.node_name for n in self.nodes]

    def node(self, name: str) -> NodeBlueprint:
        for n in self.nodes:
            if n.node_name == name:
                return n
        raise KeyError(name)

    def wiring_for(self, name: str) -> dict[str, str]:
        return dict(self.connections_plan.get("nodes", {}).get(name, {}))

    @property
    def final_output(self) -> str:
        return str(self.connections_plan.get("final_output", ""))

    def replace_node(self, blueprint: NodeBlueprint) -> "NodeLibrary":
        nodes = tuple(blueprint if n.node_name == blueprint.node_name else n for n in self.nodes)
        return replace(self, nodes=nodes)

    def with_epoch(self, epoch: int) -> "NodeLibrary":
        return replace(self, epoch=epoch)

    def to_dict(self) -> dict[str, Any]:
        return {
            "pipeline_description": self.pipeline_description,
            "nodes": [n.to_dict() for n in self.nodes],
            "connections_plan": _plain(self.connections_plan),
            "epoch": self.epoch,
            "provenance": _plain(self.provenance),
        }


@dataclass(frozen=True)
class PipelineGraph:
    ordered_nodes: tuple[str, ...]
    edges: frozenset[tuple[str, str]]


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    path: str = ""

    def __str__(self):
        where = f"{self.path}: " if self.path else ""
        return f"[{self.code}] {where}{self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def codes(self) -> set[str]:
        return {v.code for v in self.violations}

    def __add__(self, other: "ValidationReport") -> "ValidationReport":
        return ValidationReport(self.violations + other.violations)

    def render(self) -> str:
        return "\n".join(f"- {v}" for v in self.violations) or "(no violations)"


# Violation codes
TYPE_INVALID = "invalid node type"
MISSING_SECTION = "missing prompt section"
TOOLS_MISMATCH = "tools/type mismatch"
UNDECLARED_PLACEHOLDER = "undeclared placeholder"
BAD_IDENTIFIER = "bad identifier"
BAD_VERSION = "bad version"
DUPLICATE_NAME = "duplicate node name"
DANGLING = "dangling dependency"
CYCLE = "dependency cycle"
UNRESOLVED_INPUT = "unresolved input"
SINK = "sink"


def validate_blueprint(bp: NodeBlueprint, prefix: str = "") -> ValidationReport:
    out: list[Violation] = []

    def add(code, msg, sub=""):
        out.append(Violation(code, msg, f"{prefix}{sub}" if sub or prefix else ""))

    if not _IDENT.match(bp.node_name or ""):
        add(BAD_IDENTIFIER, f"node_name {bp.node_name!r} is not an identifier", "node_name")
    if bp.node_type not in NODE_TYPES:
        add(TYPE_INVALID, f"node_type {bp.node_type!r} not in {list(NODE_TYPES)}", "node_type")
    missing = [m for m in (SYSTEM_MARKER, USER_MARKER) if m not in bp.prompt_template]
    if missing:
        add(MISSING_SECTION, "prompt_template lacks " + " and ".join(repr(m) for m in missing),
            "implementation.prompt_template")
    tools = list(bp.tools_needed)
    if bp.node_type == RETRIEVAL_RAG and tools != ["Search"]:
        add(TOOLS_MISMATCH, f"Retrieval_RAG requires tools_needed ['Search'], got {tools}",
            "implementation.tools_needed")
    elif bp.node_type == LLM_GENERATOR and tools:
        add(TOOLS_MISMATCH, f"LLM_Generator requires empty tools_needed, got {tools}",
            "implementation.tools_needed")
    for key in bp.input_keys + bp.output_keys:
        if not _IDENT.match(key):
            add(BAD_IDENTIFIER, f"I/O key {key!r} is not an identifier")
    allowed = set(bp.input_keys) | RESERVED_SLOTS
    for name in placeholders(bp.prompt_template):
        if name not in allowed:
            add(UNDECLARED_PLACEHOLDER, f"placeholder {{{name}}} is neither an input key nor reserved",
                "implementation.prompt_template")
    if not isinstance(bp.version, int) or bp.version < 0:
        add(BAD_VERSION, f"version must be a nonnegative integer, got {bp.version!r}", "version")
    return ValidationReport(tuple(out))


def validate_nodes(nodes: Iterable[NodeBlueprint]) -> ValidationReport:
    """Blueprint checks plus the graph invariants that need no wiring."""
    nodes = list(nodes)
    report = ValidationReport()
    for i, bp in enumerate(nodes):
        report += validate_blueprint(bp, prefix=f"nodes[{i}].")
    seen: set[str] = set()
    out: list[Violation] = []
    for i, bp in enumerate(nodes):
        if bp.node_name in seen:
            out.append(Violation(DUPLICATE_NAME, f"node name {bp.node_name!r} repeated", f"nodes[{i}].node_name"))
        seen.add(bp.node_name)
    for i, bp in enumerate(nodes):
        for dep in bp.dependencies:
            if dep not in seen:
                out.append(Violation(DANGLING, f"{bp.node_name!r} depends on unknown node {dep!r}",
                                     f"nodes[{i}].dependencies"))
    if not any(v.code in (DUPLICATE_NAME, DANGLING) for v in out):
        try:
            _toposort(nodes)
        except CycleError as exc:
            out.append(Violation(CYCLE, str(exc), "nodes"))
    return report + ValidationReport(tuple(out))


def validate_library(lib: NodeLibrary,
                     initial_fields: Iterable[str] = DEFAULT_INITIAL_FIELDS) -> ValidationReport:
    report = validate_nodes(lib.nodes)
    if not report.ok:
        return report
    return report + validate_wiring(lib, initial_fields)


def validate_wiring(lib: NodeLibrary,
                    initial_fields: Iterable[str] = DEFAULT_INITIAL_FIELDS) -> ValidationReport:
    initial_fields = set(initial_fields)
    out: list[Violation] = []
    by_name = {n.node_name: n for n in lib.nodes}
    ancestors = _ancestors(lib.nodes)
    plan_nodes = lib.connections_plan.get("nodes", {}) if isinstance(lib.connections_plan, Mapping) else {}
    for name in plan_nodes:
        if name not in by_name:
            out.append(Violation(UNRESOLVED_INPUT, f"wiring for unknown node {name!r}", f"connections_plan.nodes.{name}"))
    for bp in lib.nodes:
        wiring = plan_nodes.get(bp.node_name, {})
        for key in bp.input_keys:
            path = f"connections_plan.nodes.{bp.node_name}.{key}"
            src = wiring.get(key)
            if not src:
                out.append(Violation(UNRESOLVED_INPUT, f"input {key!r} of {bp.node_name!r} has no source", path))
                continue
            problem = _source_problem(src, bp.node_name, by_name, ancestors, initial_fields)
            if problem:
                out.append(Violation(UNRESOLVED_INPUT, problem, path))
    sinks = _sinks(lib.nodes)
    final = lib.final_output
    if len(sinks) != 1:
        out.append(Violation(SINK, f"expected exactly one sink node, found {sorted(sinks)}", "nodes"))
    if "." not in final:
        out.append(Violation(SINK, f"final_output {final!r} must be 'Node.key'", "connections_plan.final_output"))
    else:
        node, key = final.split(".", 1)
        if len(sinks) == 1 and node not in sinks:
            out.append(Violation(SINK, f"final_output node {node!r} is not the sink {sinks[0]!r}",
                                 "connections_plan.final_output"))
        elif node in by_name and key not in by_name[node].output_keys:
            out.append(Violation(SINK, f"final_output key {key!r} not produced by {node!r}",
                                 "connections_plan.final_output"))
        elif node not in by_name:
            out.append(Violation(SINK, f"final_output names unknown node {node!r}", "connections_plan.final_output"))
    return ValidationReport(tuple(out))


def _source_problem(src, consumer, by_name, ancestors, initial_fields) -> str:
    if not isinstance(src, str):
        return f"source {src!r} is not a string"
    if src.startswith(INPUT_PREFIX):
        fld = src[len(INPUT_PREFIX):]
        return "" if fld in initial_fields else f"unknown initial input field {fld!r}"
    if "." not in src:
        return f"source {src!r} must be 'input.<field>' or 'Node.key'"
    node, key = src.split(".", 1)
    if node not in by_name:
        return f"source node {node!r} does not exist"
    if node not in ancestors.get(consumer, set()):
        return f"source node {node!r} is not upstream of {consumer!r}"
    if key != WHOLE_OUTPUT and key not in by_name[node].output_keys:
        return f"{node!r} has no output {key!r}"
    return ""


def _sinks(nodes) -> list[str]:
    used = {d for n in nodes for d in n.dependencies}
    return [n.node_name for n in nodes if n.node_name not in used]


def _ancestors(nodes) -> dict[str, set[str]]:
    deps = {n.node_name: set(n.dependencies) for n in nodes}
    memo: dict[str, set[str]] = {}

    def walk(name, stack=()):
        if name in memo:
            return memo[name]
        acc: set[str] = set()
        for d in deps.get(name, ()):
            if d in stack:
                continue
            acc.add(d)
            acc |= walk(d, stack + (name,))
        memo[name] = acc
        return acc

    for name in deps:
        walk(name)
    return memo


def _toposort(nodes) -> list[str]:
    names = [n.node_name for n in nodes]
    known = set(names)
    indeg = {name: 0 for name in names}
    children: dict[str, list[str]] = {name: [] for name in names}
    for n in nodes:
        for d in dict.fromkeys(n.dependencies):
            if d not in known:
                raise DanglingDependencyError(n.node_name, d)
            indeg[n.node_name] += 1
            children[d].append(n.node_name)
    heap = [name for name, k in indeg.items() if k == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        name = heapq.heappop(heap)
        order.append(name)
        for c in children[name]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    if len(order) != len(names):
        raise CycleError(_find_cycle({n.node_name: list(n.dependencies) for n in nodes if indeg[n.node_name] > 0}))
    return order


def _find_cycle(deps: dict[str, list[str]]) -> list[str]:
    # every node here still has an unmet dependency inside the remainder, so walking
    # dependencies from any start must revisit a node
    start = min(deps)
    path, pos = [], {}
    node = start
    while node not in pos:
        pos[node] = len(path)
        path.append(node)
        node = min(d for d in deps[node] if d in deps)
    return path[pos[node]:] + [node]


def build_pipeline_graph(lib: NodeLibrary) -> PipelineGraph:
    """Deterministic topological order; ties broken by smallest node name."""
    order = _toposort(lib.nodes)
    edges = frozenset((d, n.node_name) for n in lib.nodes for d in n.dependencies)
    return PipelineGraph(tuple(order), edges)


def ordered_nodes(lib: NodeLibrary) -> list[NodeBlueprint]:
    return [lib.node(name) for name in build_pipeline_graph(lib).ordered_nodes]


# ---------------------------------------------------------------- serialization

def serialize_library(lib: NodeLibrary) -> str:
    return json.dumps(lib.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def deserialize_library(document: str | bytes) -> NodeLibrary:
    try:
        data = json.loads(document)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaError("$", f"not valid JSON: {exc}") from exc
    return library_from_dict(data)


def library_from_dict(data: Any) -> NodeLibrary:
    _expect(data, dict, "$")
    for key in ("pipeline_description", "nodes", "connections_plan", "epoch", "provenance"):
        if key not in data:
            raise SchemaError(key, "missing required key")
    desc = _expect(data["pipeline_description"], str, "pipeline_description")
    nodes = [blueprint_from_dict(n, f"nodes[{i}]", strict=True)
             for i, n in enumerate(_expect(data["nodes"], list, "nodes"))]
    plan = _expect(data["connections_plan"], dict, "connections_plan")
    wiring = plan.get("nodes", {})
    _expect(wiring, dict, "connections_plan.nodes")
    for name, mapping in wiring.items():
        _expect(mapping, dict, f"connections_plan.nodes.{name}")
        for k, v in mapping.items():
            _expect(v, str, f"connections_plan.nodes.{name}.{k}")
    if "final_output" in plan:
        _expect(plan["final_output"], str, "connections_plan.final_output")
    epoch = _expect(data["epoch"], int, "epoch")
    if isinstance(epoch, bool) or epoch < 0:
        raise SchemaError("epoch", "must be a nonnegative integer")
    prov = _expect(data["provenance"], dict, "provenance")
    return NodeLibrary(desc, tuple(nodes), plan, epoch, prov)


def blueprint_from_dict(d: Any, path: str = "node", strict: bool = False) -> NodeBlueprint:
    """Build a blueprint from the node-generation schema.

    ``strict`` enforces the file format (exact types, allowed node types);
    otherwise designer output is coerced where the intent is unambiguous.
    """
    _expect(d, dict, path)
    impl = d.get("implementation") or {}
    _expect(impl, dict, f"{path}.implementation")

    def text(key, src=d, sub=None):
        val = src.get(key, "")
        if val is None:
            val = ""
        if strict:
            return _expect(val, str, f"{path}.{sub or key}")
        return val if isinstance(val, str) else json.dumps(val, ensure_ascii=False)

    def names(key, src=d, sub=None):
        val = src.get(key, [])
        if val is None:
            val = []
        if strict:
            _expect(val, list, f"{path}.{sub or key}")
            for i, v in enumerate(val):
                _expect(v, str, f"{path}.{sub or key}[{i}]")
            return tuple(val)
        if isinstance(val, str):
            val = _coerce_list(val)
        return tuple(str(v).strip() for v in val if str(v).strip())

    if "node_name" not in d:
        raise SchemaError(f"{path}.node_name", "missing required key")
    node_type = text("node_type")
    if strict and node_type not in NODE_TYPES:
        raise SchemaError(f"{path}.node_type", f"{node_type!r} is not one of {list(NODE_TYPES)}")
    version = d.get("version", 0)
    if strict and (not isinstance(version, int) or isinstance(version, bool) or version < 0):
        raise SchemaError(f"{path}.version", "must be a nonnegative integer")
    prompt = text("prompt_template", impl, "implementation.prompt_template")
    if not strict:
        prompt = normalize_retrieval_slot(prompt)
    return NodeBlueprint(
        node_name=text("node_name").strip() if not strict else text("node_name"),
        node_type=node_type.strip() if not strict else node_type,
        description=text("description"),
        dependencies=names("dependencies"),
        input_keys=names("input"),
        output_keys=names("output"),
        constraints=text("constraints"),
        logic_description=text("logic_description", impl, "implementation.logic_description"),
        prompt_template=prompt,
        tools_needed=names("tools_needed", impl, "implementation.tools_needed"),
        all_code=text("all_code"),
        version=int(version) if not strict else version,
    )


def normalize_retrieval_slot(template: str) -> str:
    for alias in RETRIEVED_ALIASES:
        template = re.sub(r"\{(\{?)\s*" + alias + r"\s*(\}?)\}", r"{\1" + RETRIEVED_CONTEXT + r"\2}", template)
    return template


def _coerce_list(val: str) -> list[str]:
    val = val.strip()
    if val.startswith("["):
        try:
            parsed = json.loads(val)
            if isinstance(parsed, list):
                return [str(v) for v in parsed]
        except json.JSONDecodeError:
            pass
    return [p for p in re.split(r"[,\n]", val) if p.strip()]


def _expect(val, typ, path):
    if typ is int and isinstance(val, bool):
        raise SchemaError(path, "expected integer, got boolean")
    if not isinstance(val, typ):
        raise SchemaError(path, f"expected {typ.__name__}, got {type(val).__name__}")
    return val


def _plain(obj):
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj
