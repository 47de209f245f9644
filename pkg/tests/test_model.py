import json

import pytest

from nodeforge.errors import CycleError, SchemaError
from nodeforge.model import (
    BAD_IDENTIFIER,
    CYCLE,
    DANGLING,
    DUPLICATE_NAME,
    MISSING_SECTION,
    TOOLS_MISMATCH,
    TYPE_INVALID,
    UNDECLARED_PLACEHOLDER,
    NodeBlueprint,
    NodeLibrary,
    blueprint_from_dict,
    build_pipeline_graph,
    deserialize_library,
    fill_placeholders,
    placeholders,
    serialize_library,
    split_prompt,
    validate_blueprint,
    validate_library,
    validate_nodes,
)
from scenarios import chain_library, llm_node


def rag(name="Lookup", deps=(), inputs=("question",)):
    return NodeBlueprint(name, "Retrieval_RAG", "look up", tuple(deps), tuple(inputs), ("docs",),
                         prompt_template="System Prompt: search.\nUser Prompt: {question} {retrieved_context}",
                         tools_needed=("Search",))


def test_placeholders_and_fill():
    tpl = "System Prompt: x\nUser Prompt: {a} and {{b}} and { c }"
    assert placeholders(tpl) == ["a", "b", "c"]
    assert fill_placeholders(tpl, {"a": "1", "b": "2"}).endswith("1 and 2 and { c }")


def test_split_prompt():
    system, user = split_prompt("System Prompt: be brief.\nUser Prompt: {q}")
    assert system == "be brief."
    assert user == "{q}"


def test_valid_blueprints_pass():
    assert validate_blueprint(rag()).ok
    assert validate_blueprint(chain_library().nodes[0]).ok


@pytest.mark.parametrize("change, code", [
    ({"node_type": "Tool_Caller"}, TYPE_INVALID),
    ({"prompt_template": "no sections {question}"}, MISSING_SECTION),
    ({"tools_needed": ("Search",)}, TOOLS_MISMATCH),
    ({"prompt_template": "System Prompt: a\nUser Prompt: {mystery}"}, UNDECLARED_PLACEHOLDER),
    ({"node_name": "bad name"}, BAD_IDENTIFIER),
])
def test_blueprint_violations(change, code):
    bp = chain_library().nodes[0]
    fields = bp.to_dict()
    bad = NodeBlueprint(**{**{k: getattr(bp, k) for k in bp.__dataclass_fields__}, **change})
    assert code in validate_blueprint(bad).codes, fields


def test_rag_needs_search_tool():
    bp = rag()
    bad = NodeBlueprint(bp.node_name, bp.node_type, input_keys=bp.input_keys, output_keys=bp.output_keys,
                        prompt_template=bp.prompt_template)
    assert TOOLS_MISMATCH in validate_blueprint(bad).codes


def test_graph_violations():
    a = llm_node("A", [], ["question"], ["x"], "s", "{question}")
    assert DUPLICATE_NAME in validate_nodes([a, a]).codes
    dangling = llm_node("B", ["Ghost"], ["x"], ["y"], "s", "{x}")
    assert DANGLING in validate_nodes([a, dangling]).codes
    loop1 = llm_node("P", ["Q"], ["y"], ["x"], "s", "{y}")
    loop2 = llm_node("Q", ["P"], ["x"], ["y"], "s", "{x}")
    assert CYCLE in validate_nodes([loop1, loop2]).codes


def test_cycle_error_from_graph_builder():
    loop1 = llm_node("P", ["Q"], ["y"], ["x"], "s", "{y}")
    loop2 = llm_node("Q", ["P"], ["x"], ["y"], "s", "{x}")
    lib = NodeLibrary("loop", (loop1, loop2), {"nodes": {}, "final_output": "Q.y"})
    with pytest.raises(CycleError) as info:
        build_pipeline_graph(lib)
    assert set(info.value.cycle) >= {"P", "Q"}


def test_order_ties_break_lexicographically():
    root = llm_node("Root", [], ["question"], ["r"], "s", "{question}")
    b = llm_node("Beta", ["Root"], ["r"], ["b"], "s", "{r}")
    a = llm_node("Alpha", ["Root"], ["r"], ["a"], "s", "{r}")
    end = llm_node("End", ["Alpha", "Beta"], ["a", "b"], ["out"], "s", "{a}{b}")
    lib = NodeLibrary("", (end, b, a, root), {"nodes": {}, "final_output": "End.out"})
    assert build_pipeline_graph(lib).ordered_nodes == ("Root", "Alpha", "Beta", "End")


def test_wiring_problems_reported():
    lib = chain_library()
    plan = json.loads(json.dumps(lib.connections_plan))
    plan["nodes"]["Answerer"]["reasoning"] = "Extractor.nothing"
    report = validate_library(NodeLibrary("", lib.nodes, plan))
    assert not report.ok
    plan["nodes"]["Answerer"]["reasoning"] = "Reasoner.reasoning"
    plan["final_output"] = "Reasoner.reasoning"  # not the sink
    assert not validate_library(NodeLibrary("", lib.nodes, plan)).ok


def test_round_trip_is_exact():
    lib = chain_library().with_epoch(4)
    text = serialize_library(lib)
    back = deserialize_library(text)
    assert back == lib
    assert serialize_library(back) == text


@pytest.mark.parametrize("mutate, path", [
    (lambda d: d.pop("epoch"), "epoch"),
    (lambda d: d.__setitem__("epoch", -1), "epoch"),
    (lambda d: d["nodes"][0].__setitem__("node_type", "Other"), "nodes[0].node_type"),
    (lambda d: d["nodes"][0].__setitem__("version", True), "nodes[0].version"),
    (lambda d: d["nodes"][0].__setitem__("input", "question"), "nodes[0].input"),
])
def test_schema_errors_name_the_path(mutate, path):
    data = chain_library().to_dict()
    mutate(data)
    with pytest.raises(SchemaError) as info:
        deserialize_library(json.dumps(data))
    assert info.value.path == path


def test_not_json_is_schema_error():
    with pytest.raises(SchemaError):
        deserialize_library("{nope")


def test_lenient_parse_coerces_designer_output():
    bp = blueprint_from_dict({"node_name": " Lookup ", "node_type": "Retrieval_RAG", "input": "question, topic",
                              "output": ["docs"], "dependencies": None,
                              "implementation": {"prompt_template": "System Prompt: s\nUser Prompt: {retrieved_chunks}",
                                                 "tools_needed": ["Search"]}})
    assert bp.node_name == "Lookup"
    assert bp.input_keys == ("question", "topic")
    assert "{retrieved_context}" in bp.prompt_template


def test_digest_tracks_content():
    bp = chain_library().nodes[1]
    assert bp.digest() == NodeBlueprint(**{k: getattr(bp, k) for k in bp.__dataclass_fields__}).digest()
    other = NodeBlueprint(**{**{k: getattr(bp, k) for k in bp.__dataclass_fields__}, "version": 1})
    assert other.digest() != bp.digest()
