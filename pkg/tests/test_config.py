import json

import pytest

from nodeforge.config import ConfigError, RunConfig, config_from_dict, load_config, load_dataset


def test_defaults_validate_and_feed_settings():
    cfg = RunConfig().validate()
    assert cfg.harvest_settings().max_rounds == 10
    es = cfg.epoch_settings()
    assert (es.alpha, es.n_refine, es.cache_baseline, es.runtime.search_rounds) == (0.6, 3, False, 10)
    assert "base_dir" not in cfg.to_dict()


@pytest.mark.parametrize("bad", [{"alpha": 1.5}, {"K": 0}, {"delta_mode": "log"}, {"selection_policy": "x"},
                                 {"retrieval_engine": "bing"}, {"surprise": 1},
                                 {"designer": {"kind": "openai", "api_key": "sk-123"}}])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ConfigError):
        config_from_dict(bad)


def test_secret_indirection_allowed():
    cfg = config_from_dict({"designer": {"kind": "openai", "api_key_env": "OPENAI_API_KEY"}})
    assert cfg.designer["api_key_env"] == "OPENAI_API_KEY"


def test_yaml_and_json_loading(tmp_path):
    (tmp_path / "c.yaml").write_text("dataset: data.jsonl\nK: 4\nalpha: 0.3\n")
    cfg = load_config(tmp_path / "c.yaml")
    assert (cfg.K, cfg.alpha) == (4, 0.3)
    assert cfg.path(cfg.dataset) == tmp_path / "data.jsonl"
    (tmp_path / "c.json").write_text(json.dumps({"N": 5}))
    assert load_config(tmp_path / "c.json").N == 5
    (tmp_path / "bad.yaml").write_text("- just\n- a list\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_overrides_skip_none_and_revalidate():
    cfg = RunConfig().with_overrides(K=2, alpha=None)
    assert cfg.K == 2 and cfg.alpha == 0.6
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(alpha=-1.0)


def test_dataset_ids(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text('{"id": "case/1", "question": "q1", "answer": "a1"}\n\n{"question": "q2", "answer": "a2"}\n')
    samples = load_dataset(path)
    assert [s.sample_id for s in samples] == ["case_1", "0001"]
    path.write_text('{"id": 1, "question": "q", "answer": "a"}\n{"id": 1, "question": "q", "answer": "a"}\n')
    with pytest.raises(ConfigError, match="duplicate"):
        load_dataset(path)
    path.write_text('{"question": "q"}\n')
    with pytest.raises(ConfigError):
        load_dataset(path)
    path.write_text("")
    with pytest.raises(ConfigError):
        load_dataset(path)


def test_custom_keys(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text('{"uid": "x", "prompt": "q", "gold": "a"}\n')
    (s,) = load_dataset(path, "prompt", "gold", "uid")
    assert (s.sample_id, s.question, s.answer) == ("x", "q", "a")
