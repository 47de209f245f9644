import math

import pytest

from nodeforge.errors import InvalidLogprobError, MalformedOutputError, PreconditionError, ProviderError
from nodeforge.llm import (
    ChatMessage,
    Gateway,
    MockProvider,
    Rates,
    extract_json_object,
    fingerprint,
    gateway_from_config,
    simple_tokenize,
)


def msgs(text="hello"):
    return [ChatMessage("system", "sys"), ChatMessage("user", text)]


def test_extract_json_object_handles_fences_and_prose():
    assert extract_json_object('```json\n{"a": 1}\n```')[0] == {"a": 1}
    assert extract_json_object('Sure! {"a": {"b": 2}} done')[0] == {"a": {"b": 2}}
    assert extract_json_object("no json here") is None


def test_tokenizer_round_trips():
    text = "The court held, in 2021: damages = 5,000 yuan."
    assert "".join(simple_tokenize(text)) == text


def test_rules_match_in_order_and_last_response_repeats():
    mock = MockProvider({"chat": [{"match": ["hello", "sys"], "responses": ["one", "two"]},
                                  {"match": "hello", "responses": ["never"]}]})
    gw = Gateway(mock)
    assert [gw.chat(msgs())[0] for _ in range(3)] == ["one", "two", "two"]


def test_unmatched_call_is_provider_error():
    with pytest.raises(ProviderError):
        Gateway(MockProvider()).chat(msgs())


def test_error_response_raises():
    gw = Gateway(MockProvider({"chat": [{"match": "hello", "responses": [{"_error": "rate limited"}]}]}))
    with pytest.raises(ProviderError, match="rate limited"):
        gw.chat(msgs())


def test_json_repair_round_then_failure():
    mock = MockProvider({"chat": [{"match": "hello", "responses": ["not json", {"ok": 1}]}]})
    obj, _ = Gateway(mock).chat_json(msgs(), required_keys=("ok",))
    assert obj == {"ok": 1}
    assert len(mock.chat_calls()) == 2
    assert "ok" in mock.chat_calls()[1].messages[-1].content

    bad = MockProvider({"chat": [{"match": "hello", "responses": ["{}"]}]})
    with pytest.raises(MalformedOutputError):
        Gateway(bad).chat_json(msgs(), required_keys=("ok",))
    assert len(bad.chat_calls()) == 2


def test_chat_preconditions():
    gw = Gateway(MockProvider({"default_chat": "x"}))
    with pytest.raises(PreconditionError):
        gw.chat([])
    with pytest.raises(PreconditionError):
        gw.chat([ChatMessage("assistant", "hi")])
    with pytest.raises(PreconditionError):
        gw.chat(msgs(), "yaml")


def test_usage_accumulates_with_rates():
    mock = MockProvider({"chat": [{"match": "hello",
                                   "responses": [{"_text": "ok", "_prompt_tokens": 10, "_completion_tokens": 4}]}]})
    gw = Gateway(mock, rates=Rates(prompt=0.5, completion=2.0))
    gw.chat(msgs())
    gw.chat(msgs())
    usage = gw.usage_summary()
    assert (usage.prompt_tokens, usage.completion_tokens) == (20, 8)
    assert math.isclose(usage.cost, 2 * (10 * 0.5 + 4 * 2.0))
    assert gw.calls == 2


def test_scores_apply_bonuses_and_clip():
    mock = MockProvider({"scores": {"base_logprob": -2.0, "bonuses": [{"match": "good", "bonus": 1.5},
                                                                      {"match": "great", "bonus": 5.0}]}})
    gw = Gateway(mock)
    plain = gw.score_completion("bad prompt", "an answer")
    assert {lp for _, lp in plain.tokens} == {-2.0}
    assert "".join(t for t, _ in plain.tokens) == "an answer"
    boosted = gw.score_completion("good prompt", "an answer")
    assert {lp for _, lp in boosted.tokens} == {-0.5}
    clipped = gw.score_completion("good and great", "an answer")
    assert {lp for _, lp in clipped.tokens} == {-0.01}
    assert plain.prompt_fingerprint == fingerprint("bad prompt")


def test_score_table_and_validation():
    with pytest.raises(ValueError):
        MockProvider({"scores": {"table": [{"target": "abc", "tokens": [["x", -1.0]]}]}})
    mock = MockProvider({"scores": {"table": [{"target": "ab", "match": "P", "tokens": [["a", -0.1], ["b", -0.3]]}]}})
    score = Gateway(mock).score_completion("P!", "ab")
    assert [lp for _, lp in score.tokens] == [-0.1, -0.3]
    positive = MockProvider({"scores": {"table": [{"target": "ab", "tokens": [["ab", 0.2]]}]}})
    with pytest.raises(InvalidLogprobError):
        Gateway(positive).score_completion("P", "ab")
    with pytest.raises(PreconditionError):
        Gateway(mock).score_completion("P", "")


def test_gateway_from_config_reads_mock_script(tmp_path):
    path = tmp_path / "script.json"
    path.write_text('{"default_chat": "fine"}')
    gw = gateway_from_config({"kind": "mock", "script": "script.json", "temperature": 0.2}, "executor", tmp_path)
    assert gw.chat(msgs())[0] == "fine"
    assert gw.temperature == 0.2 and gw.role == "executor"
