"""Offline judicial scenario: dataset, scripted providers, recorded search and config.

The scripted Designer reproduces a five-node legal-adjudication pipeline
(case structuring, legal retrieval, fact analysis, damages, drafting). The
scripted Executor's scoring model rewards marker strings that each node
writes into the accumulated context, with the fact analyzer initially
lowering predictability until it is refined.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from .search import CODE_REPOSITORY, GENERAL_WEB, SCHOLARLY, FixtureBackend

CASES = [
    ("c01", "Plaintiff Li was bitten by a dog owned by defendant Wang while walking in a residential compound. "
            "Li claims medical expenses of 3,200 yuan, lost wages of 1,800 yuan and 5,000 yuan for emotional "
            "distress. Wang argues Li provoked the dog and offers only the vaccination receipt as evidence.",
     "Wang bears full liability as the animal keeper; he pays Li 3,200 yuan medical expenses and 1,800 yuan "
     "lost wages; the emotional distress claim is rejected."),
    ("c02", "Plaintiff Zhao lent defendant Chen 50,000 yuan under a written IOU with 6% annual interest. Chen "
            "repaid 20,000 yuan and says the rest was a gift. Zhao submits the IOU and bank transfer records.",
     "Chen repays the remaining 30,000 yuan principal plus interest at 6% per year from the due date; the "
     "gift defence is rejected for lack of evidence."),
    ("c03", "Plaintiff Sun and defendant Zhou married in 2015 and have one child. Sun seeks divorce citing "
            "two years of separation, custody of the child and half of a jointly owned apartment.",
     "The divorce is granted; Sun receives custody; Zhou pays 1,500 yuan monthly child support; the "
     "apartment is divided equally."),
    ("c04", "Plaintiff Huang's parked car was hit by a delivery van driven by defendant Ma, an employee of "
            "Swift Logistics. Huang claims 12,000 yuan repair costs and 2,000 yuan for loss of use.",
     "Swift Logistics as employer bears liability for Ma's conduct at work; it pays 12,000 yuan repair "
     "costs and 1,000 yuan for loss of use."),
    ("c05", "Plaintiff Feng bought a refrigerator from defendant Cool Home Store that stopped working after "
            "ten days. The store refused a refund. Feng claims a refund of 4,500 yuan and triple damages.",
     "The store refunds 4,500 yuan; the triple damages claim is rejected because no fraud was proven."),
    ("c06", "Plaintiff Guo, a tenant, paid a 6,000 yuan deposit to landlord defendant He. After the lease "
            "ended He withheld the deposit citing wall damage, without itemized proof.",
     "He returns the 6,000 yuan deposit to Guo; the deduction for wall damage is rejected for lack of proof."),
]

VAL_IDS = ("c01", "c02", "c04", "c05")

SEARCH_QUERIES = {
    GENERAL_WEB: "civil code tort liability compensation rules",
    SCHOLARLY: "legal judgment prediction multi-agent reasoning",
    CODE_REPOSITORY: "legal judgment prediction pipeline",
}

SEARCH_RECORDS = {
    GENERAL_WEB: [
        {"title": "Tort liability and compensation under the Civil Code", "url": "https://example.org/tort",
         "snippet": "Animal keepers bear liability for harm caused by their animals; employers bear liability "
                    "for torts their employees commit while performing work."},
        {"title": "Private lending disputes: burden of proof", "url": "https://example.org/loans",
         "snippet": "A written IOU plus transfer records establishes a loan; a gift defence requires proof."},
    ],
    SCHOLARLY: [
        {"title": "Structured legal reasoning with staged agents", "url": "https://example.org/paper1",
         "snippet": "Separating case structuring, statute retrieval, fact verification and damages "
                    "calculation improves verdict accuracy."},
    ],
    CODE_REPOSITORY: [
        {"title": "example/legal-pipeline", "url": "https://example.org/repo",
         "snippet": "Prompted pipeline: parse the case, retrieve statutes, compute damages, draft judgment."},
    ],
}

# marker strings the scripted node outputs carry, and their effect on scoring
M_STRUCTURED = "[case structured]"
M_UNVERIFIED = "[facts unverified]"
M_VERIFIED = "[facts verified by category]"
M_STATUTES = "[statutes retrieved]"
M_DAMAGES = "[damages computed]"
M_JUDGMENT = "[judgment drafted]"

SCORE_BONUSES = [
    {"match": M_STRUCTURED, "bonus": 0.5},
    {"match": M_UNVERIFIED, "bonus": -0.2},
    {"match": M_VERIFIED, "bonus": 0.4},
    {"match": M_STATUTES, "bonus": 0.6},
    {"match": M_DAMAGES, "bonus": 0.3},
    {"match": M_JUDGMENT, "bonus": 0.8},
]
BASE_LOGPROB = -3.0

REFINED_FACT_PHRASE = "Apply category-aware rules for tort, lending, divorce and consumer cases"


def _node(name, node_type, description, deps, inputs, outputs, logic, prompt, constraints=""):
    tools = ["Search"] if node_type == "Retrieval_RAG" else []
    code = (f"def {name}(self, input_data):\n"
            + "".join(f"    {k} = input_data['{k}']\n" for k in inputs)
            + "    node_messages = build_messages(prompt_template, locals())\n"
            + ("    retrieved_context = self.search_engine.multi_turn_search(target)\n"
               if node_type == "Retrieval_RAG" else "")
            + "    response = self.llm_client.chat(node_messages, response_format='json_object')\n"
            + "    return response\n")
    return {"node_name": name, "node_type": node_type, "description": description, "dependencies": deps,
            "input": inputs, "output": outputs, "constraints": constraints,
            "implementation": {"logic_description": logic, "prompt_template": prompt, "tools_needed": tools},
            "all_code": code}


JUDICIAL_NODES = [
    _node("Case_Structurer", "LLM_Generator",
          "Parses raw case text into parties, cause of action, claims, and dispute summary.",
          [], ["question"], ["parties", "cause_of_action", "arguments", "evidence_summary", "financial_claims"],
          "One LLM call that reads the raw case and returns a JSON brief.",
          "System Prompt: You are a court clerk who structures civil case files. Output valid JSON only.\n"
          "User Prompt: Case:\n{question}\n\nReturn JSON with keys parties, cause_of_action, arguments, "
          "evidence_summary, financial_claims.",
          "Do not invent facts that are not in the case text."),
    _node("Legal_Search_Engine", "Retrieval_RAG",
          "Retrieves statutes and judicial interpretations relevant to the dispute type.",
          ["Case_Structurer"], ["cause_of_action", "arguments"], ["relevant_laws"],
          "Retrieve the civil-law statutes and judicial interpretations governing this cause of action "
          "(not the case itself), then summarize the applicable rules.",
          "System Prompt: You are a legal research assistant who summarizes statutes. Output valid JSON only.\n"
          "User Prompt: Cause of action: {cause_of_action}\nArguments: {arguments}\n\n"
          "Retrieved material:\n{retrieved_context}\n\nReturn JSON with key relevant_laws."),
    _node("Fact_Analyzer", "LLM_Generator",
          "Verifies facts and causality from conflicting statements and evidence.",
          ["Case_Structurer"], ["arguments", "evidence_summary", "cause_of_action", "parties"], ["verified_facts"],
          "One LLM call that weighs both parties' statements against the evidence.",
          "System Prompt: You are a forensic fact analyst.\n"
          "User Prompt: Cause of action: {cause_of_action}\nParties: {parties}\nArguments: {arguments}\n"
          "Evidence: {evidence_summary}\n\nState the verified facts."),
    _node("Damages_Calculator", "LLM_Generator",
          "Validates and computes monetary compensation items.",
          ["Case_Structurer", "Fact_Analyzer", "Legal_Search_Engine"],
          ["financial_claims", "verified_facts", "relevant_laws", "cause_of_action"], ["damages_table"],
          "One LLM call that checks each claimed item against facts and law and totals the award.",
          "System Prompt: You are a damages actuary for civil courts. Output valid JSON only.\n"
          "User Prompt: Claims: {financial_claims}\nVerified facts: {verified_facts}\nLaw: {relevant_laws}\n"
          "Cause: {cause_of_action}\n\nReturn JSON with key damages_table."),
    _node("Judgment_Drafter", "LLM_Generator",
          "Drafts the final formal judgment text from structured reasoning.",
          ["Case_Structurer", "Legal_Search_Engine", "Fact_Analyzer", "Damages_Calculator"],
          ["structured_brief", "relevant_laws", "verified_facts", "damages_table"], ["final_judgment"],
          "One LLM call that writes the reasoning and the verdict.",
          "System Prompt: You are a presiding judge drafting a civil judgment.\n"
          "User Prompt: Brief:\n{structured_brief}\nLaw: {relevant_laws}\nFacts: {verified_facts}\n"
          "Damages: {damages_table}\n\nWrite the final judgment.",
          "Stay neutral; rule on every claim."),
]

JUDICIAL_WIRING = {
    "nodes": {
        "Case_Structurer": {"question": "input.question"},
        "Legal_Search_Engine": {"cause_of_action": "Case_Structurer.cause_of_action",
                                "arguments": "Case_Structurer.arguments"},
        "Fact_Analyzer": {"arguments": "Case_Structurer.arguments",
                          "evidence_summary": "Case_Structurer.evidence_summary",
                          "cause_of_action": "Case_Structurer.cause_of_action",
                          "parties": "Case_Structurer.parties"},
        "Damages_Calculator": {"financial_claims": "Case_Structurer.financial_claims",
                               "verified_facts": "Fact_Analyzer.verified_facts",
                               "relevant_laws": "Legal_Search_Engine.relevant_laws",
                               "cause_of_action": "Case_Structurer.cause_of_action"},
        "Judgment_Drafter": {"structured_brief": "Case_Structurer.*",
                             "relevant_laws": "Legal_Search_Engine.relevant_laws",
                             "verified_facts": "Fact_Analyzer.verified_facts",
                             "damages_table": "Damages_Calculator.damages_table"},
    },
    "final_output": "Judgment_Drafter.final_judgment",
}

CONNECTIONS_CODE = """def execute_pipeline(self, initial_input_data):
    s = self.Case_Structurer({"question": initial_input_data["question"]})
    l = self.Legal_Search_Engine({"cause_of_action": s["cause_of_action"], "arguments": s["arguments"]})
    f = self.Fact_Analyzer({k: s[k] for k in ("arguments", "evidence_summary", "cause_of_action", "parties")})
    c = self.Damages_Calculator({"financial_claims": s["financial_claims"], "verified_facts": f["verified_facts"],
                                 "relevant_laws": l["relevant_laws"], "cause_of_action": s["cause_of_action"]})
    d = self.Judgment_Drafter({"structured_brief": json.dumps(s), "relevant_laws": l["relevant_laws"],
                               "verified_facts": f["verified_facts"], "damages_table": c["damages_table"]})
    return d["final_judgment"]
"""

KEYWORDS = {
    "Domain": ["Civil Law", "Judicial Adjudication", "Tort Law", "Contract Law", "Family Law"],
    "Task": ["Legal Judgment Prediction", "Verdict Generation", "Legal Reasoning", "Damages Assessment",
             "Case Summarization"],
    "Entities": ["Complaints", "Defense Statements", "Evidence", "Statutes", "Monetary Claims"],
    "Actions": ["Extract", "Retrieve", "Verify", "Calculate", "Draft"],
    "Constraints": ["Neutrality", "Statutory Grounding", "Explainability", "Consistency", "Evidence Standards"],
    "Desired_Outcomes": ["Verdict Accuracy", "Damages Accuracy", "Judge Agreement", "Reasoning Quality",
                         "Claim Coverage"],
    "Implicit_Knowledge": ["Burden of Proof", "High Probability Standard", "Comparative Fault",
                           "Vicarious Liability", "Judicial Interpretations"],
}

TASK_THINKING = ("Civil adjudication: read a complaint and defence with evidence, find the governing statutes, "
                 "verify facts, compute compensation and draft a neutral judgment that rules on every claim.")


def _queries(prefix: str) -> list[dict[str, str]]:
    return [{"query": f"{prefix} {i}", "reasoning": f"{prefix} angle {i}"} for i in range(1, 6)]


def _controller_rules() -> list[dict[str, Any]]:
    rules = []
    for kind, query in SEARCH_QUERIES.items():
        rules.append({"match": ["web search controller", "(none yet)", f"Backend type: {kind}"],
                      "responses": [{"done": False, "need_search": True, "next_query": query,
                                     "reasoning": "nothing retrieved yet", "summary": ""}]})
    rules.append({"match": "web search controller",
                  "responses": [{"done": True, "need_search": False, "next_query": "",
                                 "reasoning": "the retrieved material covers the target",
                                 "summary": "Statutes on liability, proof and compensation were found."}]})
    return rules


def _optimized(node: dict, prompt: str, logic: str, explanation: str) -> dict:
    return {"analysis": {"problem_identification": f"{node['node_name']} output adds little evidence.",
                         "root_cause": "The prompt gives no category-specific guidance.",
                         "optimization_strategy": "Add explicit rules and a structured output."},
            "optimized_implementation": {"prompt_template": prompt, "tools_needed": node["implementation"]["tools_needed"],
                                         "logic_description": logic},
            "optimized_all_code": node["all_code"],
            "optimization_explanation": explanation}


def designer_script() -> dict[str, Any]:
    fact = JUDICIAL_NODES[2]
    fact_prompt = ("System Prompt: You are a forensic fact analyst. " + REFINED_FACT_PHRASE
                   + ", then weigh each statement against the evidence.\n"
                   "User Prompt: Cause of action: {cause_of_action}\nParties: {parties}\nArguments: {arguments}\n"
                   "Evidence: {evidence_summary}\n\nState the verified facts, one per line.")
    rules = [
        {"match": ["Node Reward:", "Node Name: Fact_Analyzer"],
         "responses": [_optimized(fact, fact_prompt, "Two-stage analysis: category rules first, then "
                                  "evidence weighing.", "Added category-aware fact rules.")]},
    ]
    for node in JUDICIAL_NODES:
        if node["node_name"] == "Fact_Analyzer":
            continue
        impl = node["implementation"]
        rules.append({"match": ["Node Reward:", f"Node Name: {node['node_name']}"],
                      "responses": [_optimized(node, impl["prompt_template"] + "\nBe precise and complete.",
                                               impl["logic_description"], "Tightened the instructions.")]})
    rules += [
        {"match": "declarative wiring data", "responses": [JUDICIAL_WIRING]},
        {"match": "Allowed node types",
         "responses": [{"pipeline_description": "Structured judicial workflow: structure the case, retrieve "
                                                "law, verify facts, compute damages, draft the judgment.",
                        "nodes": JUDICIAL_NODES, "Connections": CONNECTIONS_CODE}]},
        {"match": "four specific search strategies",
         "responses": [{f"strategy_{s}": _queries(f"legal strategy {s}") for s in "ABCD"}]},
        {"match": "Strategy: Strategy A",
         "responses": [{"aspects_covered": ["liability", "proof"], "background_information": "Civil liability "
                        "rules and proof standards.", "summary": "Background on civil adjudication."}]},
        {"match": "Strategy: Strategy B",
         "responses": [{"architectural_patterns": ["staged pipeline"], "design_information": "Separate "
                        "structuring, retrieval, fact analysis, damages and drafting.", "summary": "Staged design."}]},
        {"match": "Strategy: Strategy C",
         "responses": [{"overall_framework": "prompted pipeline", "llm_migration": "each stage is one LLM call",
                        "data_processing": "JSON briefs between stages", "summary": "Prompted stages."}]},
        {"match": "Strategy: Strategy D",
         "responses": [{"evaluation_metrics": ["verdict accuracy"], "evaluation_information": "Judge-based "
                        "agreement with reference verdicts.", "summary": "Verdict agreement."}]},
        {"match": "target description for a search controller",
         "responses": [{"target_description": "Civil Code provisions and judicial interpretations on liability, "
                                              "burden of proof and compensation."}]},
        {"match": "expert dataset and task analyst",
         "responses": [{"thinking": TASK_THINKING, "answer": KEYWORDS}]},
    ]
    rules += _controller_rules()
    return {"chat": rules}


def _brief(case_id: str) -> dict[str, Any]:
    return {"parties": {"plaintiff": f"plaintiff of {case_id}", "defendant": f"defendant of {case_id}"},
            "cause_of_action": "civil dispute", "arguments": f"claims and defence of {case_id} {M_STRUCTURED}",
            "evidence_summary": "documents submitted by both parties", "financial_claims": ["itemized claims"]}


def executor_script() -> dict[str, Any]:
    rules = [
        {"match": "presiding judge drafting", "responses": [
            {"_text": f"Judgment: the court rules on every claim as reasoned above. {M_JUDGMENT}"}]},
        {"match": "damages actuary", "responses": [{"damages_table": f"approved items totalled {M_DAMAGES}"}]},
        {"match": REFINED_FACT_PHRASE, "responses": [
            {"_text": f"Facts established under the applicable category rules. {M_VERIFIED}"}]},
        {"match": "forensic fact analyst", "responses": [
            {"_text": f"Both parties disagree; facts remain uncertain. {M_UNVERIFIED}"}]},
        {"match": "legal research assistant", "responses": [
            {"relevant_laws": f"Liability, proof and compensation provisions apply. {M_STATUTES}"}]},
        {"match": "court clerk who structures", "responses": [_brief("the case")]},
    ]
    rules += _controller_rules()
    return {"chat": rules, "scores": {"base_logprob": BASE_LOGPROB, "bonuses": SCORE_BONUSES,
                                      "floor": -20.0, "ceiling": -0.01}}


def config_document(epochs: int = 3) -> dict[str, Any]:
    return {
        "dataset": "dataset.jsonl",
        "val_dataset": "val.jsonl",
        "N": 6,
        "K": epochs,
        "seed": 7,
        "designer": {"kind": "mock", "script": "designer.json"},
        "executor": {"kind": "mock", "script": "executor.json"},
        "search": {"kind": "fixture", "path": "search"},
    }


def _jsonl(rows) -> str:
    return "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in rows)


def write_scenario(target: str | Path, epochs: int = 3) -> Path:
    """Write every scenario file under ``target``; returns the config path."""
    import yaml

    target = Path(target)
    target.mkdir(parents=True, exist_ok=True)
    rows = [{"id": cid, "question": q, "answer": a} for cid, q, a in CASES]
    (target / "dataset.jsonl").write_text(_jsonl(rows), encoding="utf-8")
    (target / "val.jsonl").write_text(_jsonl(r for r in rows if r["id"] in VAL_IDS), encoding="utf-8")
    for name, script in (("designer.json", designer_script()), ("executor.json", executor_script())):
        (target / name).write_text(json.dumps(script, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")
    for kind, query in SEARCH_QUERIES.items():
        FixtureBackend.record(target / "search", kind, query, SEARCH_RECORDS[kind])
    path = target / "config.yaml"
    path.write_text(yaml.safe_dump(config_document(epochs), sort_keys=True), encoding="utf-8")
    return path
