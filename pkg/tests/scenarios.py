"""Small scripted pipelines shared by several test modules."""

from nodeforge.llm import Gateway, MockProvider
from nodeforge.model import NodeBlueprint, NodeLibrary
from nodeforge.runtime import Sample

FACTS, MUDDLED, CLEAR, ANSWER = "<<facts>>", "<<muddled>>", "<<clear>>", "<<answer>>"
BONUSES = [
    {"match": FACTS, "bonus": 0.5},
    {"match": MUDDLED, "bonus": -0.3},
    {"match": CLEAR, "bonus": 0.4},
    {"match": ANSWER, "bonus": 0.6},
]
# J trajectories these bonuses produce (base -3.0):
#   ordinary sample: -3.0 | -2.5, -2.8, -2.2   (Reasoner is the per-sample minimum)
#   ROBUST sample:   -3.0 | -2.5, -2.1, -1.5   (Answerer is the per-sample minimum)
ORDINARY_J = (-3.0, [-2.5, -2.8, -2.2])
ROBUST_J = (-3.0, [-2.5, -2.1, -1.5])


def llm_node(name, deps, inputs, outputs, system, user, **kw):
    return NodeBlueprint(name, "LLM_Generator", f"{name} step", tuple(deps), tuple(inputs), tuple(outputs),
                         prompt_template=f"System Prompt: {system}\nUser Prompt: {user}", **kw)


def chain_library() -> NodeLibrary:
    nodes = (
        llm_node("Extractor", [], ["question"], ["facts"], "You are the extractor.", "Question: {question}"),
        llm_node("Reasoner", ["Extractor"], ["facts"], ["reasoning"], "You are the reasoner.", "Facts: {facts}"),
        llm_node("Answerer", ["Reasoner"], ["reasoning"], ["answer"], "You are the answerer.",
                 "Reasoning: {reasoning}"),
    )
    plan = {"nodes": {"Extractor": {"question": "input.question"}, "Reasoner": {"facts": "Extractor.facts"},
                      "Answerer": {"reasoning": "Reasoner.reasoning"}},
            "final_output": "Answerer.answer"}
    return NodeLibrary("three-step chain", nodes, plan)


def chain_samples():
    return [Sample("s1", "What is owed in case one?", "ten yuan"),
            Sample("s2", "What is owed in case two?", "twenty yuan"),
            Sample("s3", "ROBUST: what is owed in case three?", "thirty yuan"),
            Sample("s4", "What is owed in case four?", "forty yuan")]


def executor_script(extra_rules=()):
    return {
        "chat": list(extra_rules) + [
            {"match": ["You are the reasoner", "ROBUST"], "responses": [f"the claim holds {CLEAR}"]},
            {"match": "You are the reasoner", "responses": [f"unclear, maybe {MUDDLED}"]},
            {"match": ["You are the extractor", "ROBUST"], "responses": [f"facts listed {FACTS} (ROBUST case)"]},
            {"match": "You are the extractor", "responses": [f"facts listed {FACTS}"]},
            {"match": "You are the answerer", "responses": [f"final {ANSWER}"]},
        ],
        "scores": {"base_logprob": -3.0, "bonuses": BONUSES},
    }


def refinement_reply(prompt_template, **extra):
    reply = {"analysis": {"problem_identification": "vague", "root_cause": "prompt",
                          "optimization_strategy": "be specific"},
             "optimized_implementation": {"prompt_template": prompt_template, "tools_needed": [],
                                          "logic_description": "sharper instructions"},
             "optimized_all_code": "def node(self, input_data):\n    return {}\n",
             "optimization_explanation": "tightened the prompt"}
    reply.update(extra)
    return reply


def designer_script(responses=None):
    """Refinement replies for the Reasoner; by default it stays as bad as before."""
    if responses is None:
        responses = [refinement_reply("System Prompt: You are the reasoner. Think carefully.\n"
                                      "User Prompt: Facts: {facts}")]
    return {"chat": [{"match": "Node Reward:", "responses": responses}]}


def gateways(executor_extra=(), designer_responses=None):
    ex = MockProvider(executor_script(executor_extra))
    de = MockProvider(designer_script(designer_responses))
    return Gateway(ex, role="executor"), Gateway(de, role="designer"), ex, de
