import copy

import pytest

from nodeforge import demo
from nodeforge.errors import PreconditionError, ValidationError
from nodeforge.harvest import STRATEGIES, StrategyAnalysis
from nodeforge.llm import Gateway, MockProvider
from nodeforge.model import validate_library
from nodeforge.synthesis import generate_initial_nodes, generation_messages

ANALYSES = [StrategyAnalysis(s, {"summary": f"analysis {s}"}) for s in STRATEGIES]
PREVIEWS = [(q, a) for _, q, a in demo.CASES]


def generation_reply(nodes):
    return {"pipeline_description": "judicial", "nodes": nodes, "Connections": demo.CONNECTIONS_CODE}


def designer(*generation):
    return MockProvider({"chat": [{"match": "declarative wiring data", "responses": [demo.JUDICIAL_WIRING]},
                                  {"match": "Allowed node types", "responses": list(generation)}]})


def broken_nodes():
    nodes = copy.deepcopy(demo.JUDICIAL_NODES)
    nodes[0]["node_type"] = "Tool_Caller"
    nodes[1]["implementation"]["tools_needed"] = []
    return nodes


def test_messages_embed_previews_and_every_analysis():
    system, user = [m.content for m in generation_messages("thinking", PREVIEWS, ANALYSES, preview_count=2)]
    assert "Allowed node types" in system + user
    assert "[Sample 2]" in user and "[Sample 3]" not in user
    assert all(f"analysis {s}" in user for s in STRATEGIES)
    with pytest.raises(PreconditionError):
        generation_messages("thinking", PREVIEWS, ANALYSES[:3])


def test_valid_generation_is_wired_and_versioned_zero():
    mock = designer(generation_reply(demo.JUDICIAL_NODES))
    lib = generate_initial_nodes("thinking", PREVIEWS, ANALYSES, Gateway(mock), provenance={"seed": 1})
    assert validate_library(lib).ok
    assert [n.version for n in lib.nodes] == [0] * 5
    assert lib.final_output == "Judgment_Drafter.final_judgment"
    assert lib.provenance == {"seed": 1}
    assert len(mock.chat_calls()) == 2


def test_one_regeneration_embeds_violations():
    mock = designer(generation_reply(broken_nodes()), generation_reply(demo.JUDICIAL_NODES))
    lib = generate_initial_nodes("thinking", PREVIEWS, ANALYSES, Gateway(mock))
    assert validate_library(lib).ok
    retry = mock.chat_calls()[1].messages[-1].content
    assert "invalid node type" in retry and "tools/type mismatch" in retry


def test_second_invalid_generation_is_terminal():
    mock = designer(generation_reply(broken_nodes()))
    with pytest.raises(ValidationError) as info:
        generate_initial_nodes("thinking", PREVIEWS, ANALYSES, Gateway(mock))
    assert len(info.value.reports) == 2
    assert len(mock.chat_calls()) == 2
