import pytest

from nodeforge import prompts


def test_every_asset_loads_and_is_listed():
    names = prompts.asset_names()
    assert set(names) == set(prompts.manifest()["assets"])
    for name in names:
        assert prompts.raw(name).strip()
        prompts.load(name)


def test_render_fills_and_preserves_literal_braces():
    system, user = prompts.render("json_repair", problem="no JSON object found", required_keys_line="")
    assert "no JSON object found" in system + user
    text = prompts.fill('{"a": 1} {name}', {"name": "x"})
    assert text == '{"a": 1} x'


def test_fill_is_single_pass_and_leaves_unknown_slots():
    assert prompts.fill("<a> {b} <c>", {"a": "{b}", "b": "x"}) == "{b} x <c>"


def test_unknown_asset():
    with pytest.raises(KeyError):
        prompts.raw("no_such_prompt")
