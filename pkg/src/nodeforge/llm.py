"""Designer/Executor model access: chat, forced-completion scoring, usage accounting.

Two providers ship with the package: :class:`MockProvider`, driven by a JSON
script and fully deterministic, and :class:`OpenAICompatibleProvider` for any
endpoint speaking the OpenAI chat/completions wire format.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

from . import prompts
from .errors import (
    InvalidLogprobError,
    MalformedOutputError,
    PreconditionError,
    ProviderError,
    UnsupportedError,
)

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
NORMAL = "normal"
JSON_OBJECT = "json_object"

DEFAULT_TEMPERATURE = 1.0
DEFAULT_MAX_TOKENS = 32768


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise PreconditionError(f"unknown message role {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise PreconditionError(f"{self.role} message content must be non-empty")

    def to_dict(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}


def as_messages(messages: Iterable[ChatMessage | Mapping[str, str]]) -> list[ChatMessage]:
    out = []
    for m in messages:
        out.append(m if isinstance(m, ChatMessage) else ChatMessage(m["role"], m["content"]))
    return out


def fingerprint(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class CompletionScore:
    tokens: tuple[tuple[str, float], ...]
    prompt_fingerprint: str

    @property
    def logprobs(self) -> list[float]:
        return [lp for _, lp in self.tokens]

    def to_dict(self) -> dict[str, Any]:
        return {"tokens": [list(t) for t in self.tokens], "prompt_fingerprint": self.prompt_fingerprint}


@dataclass(frozen=True)
class Rates:
    """USD per prompt token and per completion token."""

    prompt: float = 0.0
    completion: float = 0.0


@dataclass(frozen=True)
class UsageRecord:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    cost: float = 0.0

    def __add__(self, other: "UsageRecord") -> "UsageRecord":
        return UsageRecord(self.prompt_tokens + other.prompt_tokens,
                           self.completion_tokens + other.completion_tokens,
                           self.cost + other.cost)

    def to_dict(self) -> dict[str, Any]:
        return {"prompt_tokens": self.prompt_tokens, "completion_tokens": self.completion_tokens, "cost": self.cost}


@dataclass(frozen=True)
class ProviderReply:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0


class Provider(Protocol):
    name: str

    def complete(self, messages: Sequence[ChatMessage], *, json_mode: bool,
                 temperature: float, max_tokens: int) -> ProviderReply: ...

    def score(self, prompt: str, target: str) -> tuple[list[tuple[str, float]], int]: ...


# ------------------------------------------------------------------ JSON helpers

_FENCE = re.compile(r"```(?:json|JSON)?\s*\n?(.*?)```", re.DOTALL)


def extract_json_object(text: str) -> tuple[dict, str] | None:
    """Find a single JSON object in model output; returns ``(obj, exact_text)`` or None."""
    stripped = text.strip()
    candidates = [stripped] + [m.group(1).strip() for m in _FENCE.finditer(text)]
    for cand in candidates:
        try:
            obj = json.loads(cand)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj, cand
    decoder = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch != "{":
            continue
        try:
            obj, end = decoder.raw_decode(text, i)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj, text[i:end]
    return None


# ------------------------------------------------------------------ gateway

class Gateway:
    """One model role (Designer or Executor) behind a provider.

    Safe to call from several threads; usage is accumulated under a lock.
    """

    def __init__(self, provider: Provider, *, role: str = "designer", rates: Rates = Rates(),
                 temperature: float = DEFAULT_TEMPERATURE, max_tokens: int = DEFAULT_MAX_TOKENS):
        self.provider = provider
        self.role = role
        self.rates = rates
        self.temperature = temperature
        self.max_tokens = max_tokens
        self._lock = threading.Lock()
        self._usage = UsageRecord()
        self.calls = 0

    def _record(self, prompt_tokens: int, completion_tokens: int) -> UsageRecord:
        rec = UsageRecord(prompt_tokens, completion_tokens,
                          prompt_tokens * self.rates.prompt + completion_tokens * self.rates.completion)
        with self._lock:
            self._usage = self._usage + rec
            self.calls += 1
        return rec

    def usage_summary(self) -> UsageRecord:
        with self._lock:
            return self._usage

    def _complete(self, messages: list[ChatMessage], json_mode: bool) -> tuple[str, UsageRecord]:
        reply = self.provider.complete(messages, json_mode=json_mode,
                                       temperature=self.temperature, max_tokens=self.max_tokens)
        return reply.text, self._record(reply.prompt_tokens, reply.completion_tokens)

    def chat(self, messages: Iterable[ChatMessage | Mapping[str, str]], response_format: str = NORMAL,
             *, required_keys: Sequence[str] = (),
             check: Callable[[dict], list[str]] | None = None) -> tuple[str, UsageRecord]:
        """Send a conversation; for ``json_object`` the reply is a single JSON object.

        A JSON reply that does not parse, or that lacks ``required_keys`` (or
        fails ``check``, which returns the missing key names), gets exactly one
        repair round before :class:`MalformedOutputError` is raised.
        """
        msgs = as_messages(messages)
        if not msgs:
            raise PreconditionError("chat needs at least one message")
        if msgs[0].role not in ("system", "user"):
            raise PreconditionError("first message must be a system or user message")
        if response_format not in (NORMAL, JSON_OBJECT):
            raise PreconditionError(f"unknown response_format {response_format!r}")
        if response_format == NORMAL:
            return self._complete(msgs, json_mode=False)

        text, usage = self._complete(msgs, json_mode=True)
        result, problem = self._accept_json(text, required_keys, check)
        if result is not None:
            return result, usage
        log.info("%s reply rejected (%s); issuing repair round", self.role, problem)
        missing_line = ""
        if required_keys:
            missing_line = "\nThe object must contain the keys: " + ", ".join(required_keys) + "."
        _, repair_user = prompts.render("json_repair", problem=problem, required_keys_line=missing_line)
        retry = msgs + [ChatMessage("assistant", text or "(empty)"), ChatMessage("user", repair_user)]
        text2, usage2 = self._complete(retry, json_mode=True)
        result, problem2 = self._accept_json(text2, required_keys, check)
        if result is None:
            raise MalformedOutputError(f"{self.role} output still invalid after repair: {problem2}", raw=text2)
        return result, usage + usage2

    def chat_json(self, messages, *, required_keys: Sequence[str] = (),
                  check: Callable[[dict], list[str]] | None = None) -> tuple[dict, UsageRecord]:
        text, usage = self.chat(messages, JSON_OBJECT, required_keys=required_keys, check=check)
        found = extract_json_object(text)
        assert found is not None
        return found[0], usage

    @staticmethod
    def _accept_json(text, required_keys, check) -> tuple[str | None, str]:
        found = extract_json_object(text or "")
        if found is None:
            return None, "no JSON object found in the reply"
        obj, exact = found
        missing = [k for k in required_keys if k not in obj]
        if check is not None:
            missing += [k for k in check(obj) if k not in missing]
        if missing:
            return None, "missing required keys: " + ", ".join(missing)
        return exact, ""

    def score_completion(self, prompt: str, target: str) -> CompletionScore:
        """Per-token natural-log probabilities of ``target`` forced after ``prompt``."""
        if not target:
            raise PreconditionError("target must be non-empty")
        tokens, prompt_tokens = self.provider.score(prompt, target)
        if not tokens:
            raise ProviderError("provider returned no target tokens")
        for tok, lp in tokens:
            if not lp <= 0.0:  # also rejects NaN
                raise InvalidLogprobError(f"provider returned logprob {lp!r} > 0 for token {tok!r}")
        self._record(prompt_tokens, 0)
        return CompletionScore(tuple((str(t), float(lp)) for t, lp in tokens), fingerprint(prompt))


# ------------------------------------------------------------------ mock provider

_TOKEN = re.compile(r"\s*\w+|\s*[^\w\s]|\s+")


def simple_tokenize(text: str) -> list[str]:
    """Word/punctuation tokens that concatenate back to ``text`` exactly."""
    return _TOKEN.findall(text)


def _as_list(match) -> list[str]:
    if match is None:
        return []
    return [match] if isinstance(match, str) else list(match)


@dataclass
class _Rule:
    match: list[str]
    responses: list[Any]
    hits: int = 0

    def matches(self, text: str) -> bool:
        return all(m in text for m in self.match)


@dataclass
class MockCall:
    kind: str
    messages: tuple[ChatMessage, ...] = ()
    prompt: str = ""
    target: str = ""
    response: Any = None
    json_mode: bool = False

    @property
    def text(self) -> str:
        if self.kind == "score":
            return self.prompt
        return "\n".join(m.content for m in self.messages)


class MockProvider:
    """Scripted provider for tests and offline runs.

    Script keys (all optional):

    ``chat``        list of rules ``{"match": str | [str], "responses": [...]}``; the
                    first rule whose substrings all occur in the conversation
                    answers. Responses are used in order and the last repeats.
                    A response is text, a JSON value (sent serialized),
                    ``{"_text", "_prompt_tokens", "_completion_tokens"}``, or
                    ``{"_error": msg}``.
    ``transcript``  responses for calls no rule matched, in call order.
    ``default_chat`` reply when nothing else applies.
    ``scores``      ``{"table": [...], "base_logprob": -2.0, "bonuses": [...],
                    "floor": -20.0, "ceiling": -0.01}``. Table entries
                    ``{"fingerprint"|"match", "target", "tokens"}`` win; otherwise
                    every target token gets ``base + sum(bonus for matched markers)``
                    clipped to ``[floor, ceiling]``.
    """

    name = "mock"

    def __init__(self, script: Mapping[str, Any] | None = None):
        script = dict(script or {})
        self.script = script
        self._rules = [_Rule(_as_list(r.get("match")), list(r.get("responses", [r.get("response")])))
                       for r in script.get("chat", [])]
        self._transcript = list(script.get("transcript", []))
        self._transcript_pos = 0
        self._default = script.get("default_chat")
        scores = dict(script.get("scores", {}))
        self._table = list(scores.get("table", []))
        for entry in self._table:
            joined = "".join(t for t, _ in entry["tokens"])
            if joined.strip() != entry["target"].strip():
                raise ValueError(f"mock tokens {joined!r} do not spell target {entry['target']!r}")
        self._base = float(scores.get("base_logprob", -2.0))
        self._bonuses = [(_as_list(b["match"]), float(b["bonus"])) for b in scores.get("bonuses", [])]
        self._floor = float(scores.get("floor", -20.0))
        self._ceiling = float(scores.get("ceiling", -0.01))
        self._lock = threading.Lock()
        self.calls: list[MockCall] = []

    @classmethod
    def from_file(cls, path: str | Path) -> "MockProvider":
        return cls(json.loads(Path(path).read_text("utf-8")))

    def complete(self, messages, *, json_mode, temperature, max_tokens) -> ProviderReply:
        text_in = "\n".join(m.content for m in messages)
        with self._lock:
            response = self._pick(text_in)
            self.calls.append(MockCall("chat", tuple(messages), response=response, json_mode=json_mode))
        if response is None:
            raise ProviderError("mock script has no response for this request")
        if isinstance(response, Mapping):
            if "_error" in response:
                raise ProviderError(str(response["_error"]))
            if "_text" in response:
                text = response["_text"]
                text = text if isinstance(text, str) else json.dumps(text, ensure_ascii=False)
                return ProviderReply(text,
                                     int(response.get("_prompt_tokens", len(text_in.split()))),
                                     int(response.get("_completion_tokens", len(text.split()))))
            response = json.dumps(response, ensure_ascii=False)
        elif not isinstance(response, str):
            response = json.dumps(response, ensure_ascii=False)
        return ProviderReply(response, len(text_in.split()), len(response.split()))

    def _pick(self, text: str):
        for rule in self._rules:
            if rule.matches(text):
                idx = min(rule.hits, len(rule.responses) - 1)
                rule.hits += 1
                return rule.responses[idx]
        if self._transcript_pos < len(self._transcript):
            self._transcript_pos += 1
            return self._transcript[self._transcript_pos - 1]
        return self._default

    def score(self, prompt: str, target: str) -> tuple[list[tuple[str, float]], int]:
        fp = fingerprint(prompt)
        tokens = None
        for entry in self._table:
            if entry["target"] != target:
                continue
            if "fingerprint" in entry and entry["fingerprint"] != fp:
                continue
            if not all(m in prompt for m in _as_list(entry.get("match"))):
                continue
            tokens = [(str(t), float(lp)) for t, lp in entry["tokens"]]
            break
        if tokens is None:
            lp = self._base + sum(b for marks, b in self._bonuses if all(m in prompt for m in marks))
            lp = min(max(lp, self._floor), self._ceiling)
            tokens = [(tok, lp) for tok in simple_tokenize(target)]
        with self._lock:
            self.calls.append(MockCall("score", prompt=prompt, target=target, response=tokens))
        return tokens, len(prompt.split())

    def chat_calls(self) -> list[MockCall]:
        return [c for c in self.calls if c.kind == "chat"]

    def score_calls(self) -> list[MockCall]:
        return [c for c in self.calls if c.kind == "score"]


# ------------------------------------------------------------------ live provider

class OpenAICompatibleProvider:
    """Chat via ``/chat/completions``; scoring via ``/completions`` with ``echo``.

    Scoring needs a server that returns prompt logprobs for echoed text
    (vLLM and similar). With ``scoring=False`` :meth:`score` raises
    :class:`UnsupportedError` instead of approximating.
    """

    name = "openai-compatible"

    def __init__(self, base_url: str, model: str, *, api_key_env: str | None = None,
                 scoring: bool = False, timeout: float = 600.0, client=None):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.model = model
        self.scoring = scoring
        headers = {}
        if api_key_env:
            key = os.environ.get(api_key_env)
            if not key:
                raise ProviderError(f"environment variable {api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        self._client = client or httpx.Client(timeout=timeout, headers=headers)

    def _post(self, path: str, payload: dict) -> dict:
        import httpx

        try:
            resp = self._client.post(self.base_url + path, json=payload)
            resp.raise_for_status()
            return resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise ProviderError(f"{path}: {exc}") from exc

    def complete(self, messages, *, json_mode, temperature, max_tokens) -> ProviderReply:
        payload = {"model": self.model, "messages": [m.to_dict() for m in messages],
                   "temperature": temperature, "max_tokens": max_tokens}
        if json_mode:
            payload["response_format"] = {"type": "json_object"}
        data = self._post("/chat/completions", payload)
        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"unexpected chat response shape: {exc}") from exc
        usage = data.get("usage") or {}
        return ProviderReply(text, int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0)))

    def score(self, prompt: str, target: str) -> tuple[list[tuple[str, float]], int]:
        if not self.scoring:
            raise UnsupportedError(f"{self.base_url} is not configured for forced-completion logprobs")
        full = prompt + target
        data = self._post("/completions", {"model": self.model, "prompt": full, "echo": True,
                                           "logprobs": 1, "max_tokens": 1, "temperature": 0.0})
        try:
            lp = data["choices"][0]["logprobs"]
            toks, lps, offs = lp["tokens"], lp["token_logprobs"], lp["text_offset"]
        except (KeyError, IndexError, TypeError) as exc:
            raise UnsupportedError(f"endpoint returned no echoed logprobs: {exc}") from exc
        out = []
        for tok, val, off in zip(toks, lps, offs):
            if off + len(tok) <= len(prompt) or off >= len(full):
                continue
            if val is None:
                raise UnsupportedError("endpoint omitted a target-token logprob")
            out.append((tok, float(val)))
        usage = data.get("usage") or {}
        return out, int(usage.get("prompt_tokens", 0))


def provider_from_config(cfg: Mapping[str, Any], base_dir: Path | None = None) -> Provider:
    kind = cfg.get("kind", "mock")
    if kind == "mock":
        script = cfg.get("script")
        if script is None:
            return MockProvider(cfg.get("inline", {}))
        path = Path(script)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return MockProvider.from_file(path)
    if kind in ("openai", "openai-compatible", "live-chat-endpoint"):
        return OpenAICompatibleProvider(cfg["base_url"], cfg["model"], api_key_env=cfg.get("api_key_env"),
                                        scoring=bool(cfg.get("scoring", False)),
                                        timeout=float(cfg.get("timeout", 600.0)))
    raise ValueError(f"unknown provider kind {kind!r}")


def gateway_from_config(cfg: Mapping[str, Any], role: str, base_dir: Path | None = None) -> Gateway:
    rates = Rates(float(cfg.get("rate_in", 0.0)), float(cfg.get("rate_out", 0.0)))
    return Gateway(provider_from_config(cfg, base_dir), role=role, rates=rates,
                   temperature=float(cfg.get("temperature", DEFAULT_TEMPERATURE)),
                   max_tokens=int(cfg.get("max_tokens", DEFAULT_MAX_TOKENS)))
