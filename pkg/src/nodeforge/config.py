"""Run configuration, dataset ingestion and defaults."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import PreconditionError
from .harvest import HarvestSettings
from .optimizer import LAST_EPOCH, SELECTION_POLICIES, EpochSettings
from .reward import DELTA_MODES, MAGNITUDE, check_alpha
from .runtime import RuntimeSettings, Sample
from .search import ENGINE_KINDS, GENERAL_WEB

# hyperparameter defaults used by the method
DEFAULT_N = 10
DEFAULT_SEARCH_ROUNDS = 10
DEFAULT_ALPHA = 0.6
DEFAULT_EPOCHS = 10
DEFAULT_N_REFINE = 3

_SECRET_KEYS = re.compile(r"(api[_-]?key|token|secret|password)$", re.IGNORECASE)


class ConfigError(PreconditionError):
    """Invalid or unreadable configuration."""


@dataclass(frozen=True)
class RunConfig:
    dataset: str = ""
    val_dataset: str = ""
    question_key: str = "question"
    answer_key: str = "answer"
    id_key: str = "id"
    N: int = DEFAULT_N
    max_search_rounds: int = DEFAULT_SEARCH_ROUNDS
    alpha: float = DEFAULT_ALPHA
    K: int = DEFAULT_EPOCHS
    n_refine: int = DEFAULT_N_REFINE
    delta_mode: str = MAGNITUDE
    seed: int = 0
    jobs: int = 1
    designer: Mapping[str, Any] = field(default_factory=lambda: {"kind": "mock"})
    executor: Mapping[str, Any] = field(default_factory=lambda: {"kind": "mock"})
    search: Mapping[str, Any] = field(default_factory=lambda: {"kind": "fixture", "path": "search"})
    queries_per_strategy: int = 3
    analysis_char_budget: int = 60_000
    sample_chars: int = 4000
    preview_count: int = 3
    preview_chars: int = 2000
    retrieval_engine: str = GENERAL_WEB
    selection_policy: str = LAST_EPOCH
    cache_baseline: bool = False
    base_dir: str = "."

    def validate(self) -> "RunConfig":
        try:
            check_alpha(self.alpha)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        for name in ("N", "max_search_rounds", "K", "n_refine", "jobs", "queries_per_strategy"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.delta_mode not in DELTA_MODES:
            raise ConfigError(f"delta_mode must be one of {list(DELTA_MODES)}, got {self.delta_mode!r}")
        if self.selection_policy not in SELECTION_POLICIES:
            raise ConfigError(f"selection_policy must be one of {list(SELECTION_POLICIES)}")
        if self.retrieval_engine not in ENGINE_KINDS:
            raise ConfigError(f"retrieval_engine must be one of {list(ENGINE_KINDS)}")
        for section in ("designer", "executor", "search"):
            _reject_secrets(getattr(self, section), section)
        return self

    @property
    def base(self) -> Path:
        return Path(self.base_dir)

    def path(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base / p

    def harvest_settings(self) -> HarvestSettings:
        return HarvestSettings(max_rounds=self.max_search_rounds, queries_per_strategy=self.queries_per_strategy,
                               analysis_char_budget=self.analysis_char_budget, sample_chars=self.sample_chars,
                               jobs=self.jobs)

    def epoch_settings(self) -> EpochSettings:
        return EpochSettings(alpha=self.alpha, n_refine=self.n_refine, delta_mode=self.delta_mode,
                             jobs=self.jobs, cache_baseline=self.cache_baseline,
                             runtime=RuntimeSettings(search_rounds=self.max_search_rounds,
                                                     engine_kind=self.retrieval_engine))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d.pop("base_dir")
        return json.loads(json.dumps(d))

    def with_overrides(self, **values) -> "RunConfig":
        return replace(self, **{k: v for k, v in values.items() if v is not None}).validate()


def _reject_secrets(obj: Any, where: str) -> None:
    if isinstance(obj, Mapping):
        for k, v in obj.items():
            if _SECRET_KEYS.search(str(k)) and not str(k).endswith("_env"):
                raise ConfigError(f"{where}.{k}: secrets belong in environment variables (use {k}_env)")
            _reject_secrets(v, f"{where}.{k}")


def config_from_dict(data: Mapping[str, Any], base_dir: str | Path = ".") -> RunConfig:
    known = {f.name for f in fields(RunConfig)} - {"base_dir"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    try:
        cfg = RunConfig(**dict(data), base_dir=str(base_dir))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def load_config(path: str | Path | None) -> RunConfig:
    """Read a YAML or JSON config; relative paths inside resolve against its directory."""
    if path is None:
        return RunConfig().validate()
    path = Path(path)
    try:
        text = path.read_text("utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from exc
    if not isinstance(data, Mapping):
        raise ConfigError(f"config {path} must be a mapping")
    return config_from_dict(data, path.parent)


_SAFE_ID = re.compile(r"[^A-Za-z0-9_.-]+")


def load_dataset(path: str | Path, question_key: str = "question", answer_key: str = "answer",
                 id_key: str = "id") -> list[Sample]:
    """Line-delimited JSON records normalized to samples; ids default to the line index."""
    path = Path(path)
    try:
        lines = path.read_text("utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from exc
    samples, seen = [], set()
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{i + 1}: not valid JSON: {exc}") from exc
        if not isinstance(rec, Mapping) or question_key not in rec or answer_key not in rec:
            raise ConfigError(f"{path}:{i + 1}: record needs {question_key!r} and {answer_key!r}")
        sid = _SAFE_ID.sub("_", str(rec[id_key])) if id_key in rec else f"{len(samples):04d}"
        if sid in seen:
            raise ConfigError(f"{path}:{i + 1}: duplicate sample id {sid!r}")
        seen.add(sid)
        samples.append(Sample(sid, str(rec[question_key]), str(rec[answer_key])))
    if not samples:
        raise ConfigError(f"dataset {path} has no records")
    return samples
