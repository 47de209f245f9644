"""Knowledge harvest: context buffer, keywords, strategy queries, multi-turn search, analyses."""

from __future__ import annotations

import json
import logging
import random
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from . import prompts
from .errors import EmptySourceError, MalformedOutputError, PreconditionError, SearchBackendError
from .llm import ChatMessage, Gateway
from .search import CODE_REPOSITORY, ENGINE_KINDS, GENERAL_WEB, SCHOLARLY, SearchBackend, SearchResult

log = logging.getLogger(__name__)

DIMENSIONS = ("Domain", "Task", "Entities", "Actions", "Constraints", "Desired_Outcomes", "Implicit_Knowledge")

STRATEGIES = ("A", "B", "C", "D")
STRATEGY_INTENT = {
    "A": "background_knowledge",
    "B": "system_architecture",
    "C": "code_implementation",
    "D": "evaluation",
}
STRATEGY_TITLE = {
    "A": "Strategy A: Background Knowledge",
    "B": "Strategy B: High-quality Academic Papers about System Architecture (Workflow & Design)",
    "C": "Strategy C: Technical Code Implementation",
    "D": "Strategy D: Evaluation & Metrics",
}
DEFAULT_ROUTING = {
    "A": (GENERAL_WEB, SCHOLARLY),
    "B": (SCHOLARLY, GENERAL_WEB),
    "C": (CODE_REPOSITORY,),
    "D": (SCHOLARLY, GENERAL_WEB),
}
ANALYSIS_KEYS = {
    "A": ("aspects_covered", "background_information", "summary"),
    "B": ("architectural_patterns", "design_information", "summary"),
    "C": ("overall_framework", "llm_migration", "data_processing", "summary"),
    "D": ("evaluation_metrics", "evaluation_information", "summary"),
}
ENGINE_HINT_ASSET = {
    GENERAL_WEB: "hint_general_web",
    CODE_REPOSITORY: "hint_code_repository",
    SCHOLARLY: "hint_scholarly",
}

MIN_TERMS, MAX_TERMS = 5, 10
MIN_QUERIES, MAX_QUERIES = 5, 10


def _dump(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True)


# ------------------------------------------------------------------ context buffer

@dataclass(frozen=True)
class ContextBuffer:
    samples: tuple[tuple[str, str], ...]
    seed: int
    source_name: str = ""

    def to_dict(self):
        return {"samples": [list(s) for s in self.samples], "seed": self.seed, "source_name": self.source_name}


def sample_context_buffer(source: Sequence[tuple[str, str]], n: int = 10, seed: int = 0,
                          source_name: str = "") -> ContextBuffer:
    """Draw ``n`` samples; without replacement unless the source is too small."""
    if n < 1:
        raise PreconditionError("n must be >= 1")
    if not source:
        raise EmptySourceError("cannot sample a context buffer from an empty source")
    rng = random.Random(seed)
    if len(source) >= n:
        idx = rng.sample(range(len(source)), n)
    else:
        warnings.warn(f"source has {len(source)} items < n={n}; sampling with replacement", stacklevel=2)
        idx = rng.choices(range(len(source)), k=n)
    picked = tuple((str(source[i][0]), str(source[i][1])) for i in idx)
    return ContextBuffer(picked, seed, source_name)


def render_samples(samples: Sequence[tuple[str, str]], max_chars: int | None = None) -> str:
    blocks = []
    for i, (q, a) in enumerate(samples, 1):
        if max_chars is not None:
            q, a = _clip(q, max_chars), _clip(a, max_chars)
        blocks.append(f"[Sample {i}]\nQuestion: {q}\nAnswer: {a}")
    return "\n\n".join(blocks)


def _clip(text: str, limit: int) -> str:
    return text if len(text) <= limit else text[:limit] + " ...[truncated]"


# ------------------------------------------------------------------ keywords

@dataclass(frozen=True)
class KeywordProfile:
    keywords: Mapping[str, tuple[str, ...]]
    thinking: str = ""

    def __getitem__(self, dim: str) -> tuple[str, ...]:
        return self.keywords[dim]

    def to_dict(self):
        return {"keywords": {d: list(self.keywords[d]) for d in DIMENSIONS}, "thinking": self.thinking}


def _keyword_answer(obj: Mapping) -> Mapping:
    answer = obj.get("answer", obj)
    if isinstance(answer, str):
        try:
            answer = json.loads(answer)
        except json.JSONDecodeError:
            return {}
    return answer if isinstance(answer, Mapping) else {}


def _missing_dimensions(obj: Mapping) -> list[str]:
    answer = _keyword_answer(obj)
    return [d for d in DIMENSIONS if not answer.get(d)]


def extract_keywords(buffer: ContextBuffer, designer: Gateway, sample_chars: int = 4000) -> KeywordProfile:
    if not buffer.samples:
        raise PreconditionError("context buffer is empty")
    system, user = prompts.render("keyword_extraction",
                                  samples_text=render_samples(buffer.samples, sample_chars))
    obj, _ = designer.chat_json([ChatMessage("system", system), ChatMessage("user", user)],
                                check=_missing_dimensions)
    answer = _keyword_answer(obj)
    keywords = {}
    for dim in DIMENSIONS:
        terms = answer[dim]
        terms = [terms] if isinstance(terms, str) else [str(t) for t in terms if str(t).strip()]
        if not terms:
            raise MalformedOutputError(f"keyword dimension {dim} is empty")
        if len(terms) > MAX_TERMS:
            warnings.warn(f"{dim}: {len(terms)} terms, keeping the first {MAX_TERMS}", stacklevel=2)
            terms = terms[:MAX_TERMS]
        elif len(terms) < MIN_TERMS:
            warnings.warn(f"{dim}: only {len(terms)} terms (expected {MIN_TERMS}-{MAX_TERMS})", stacklevel=2)
        keywords[dim] = tuple(terms)
    thinking = obj.get("thinking", "")
    return KeywordProfile(keywords, thinking if isinstance(thinking, str) else _dump(thinking))


# ------------------------------------------------------------------ queries

@dataclass(frozen=True)
class StrategyQuerySet:
    strategy: str
    intent: str
    queries: tuple[tuple[str, str], ...]

    def to_dict(self):
        return {"strategy": self.strategy, "intent": self.intent,
                "queries": [{"query": q, "reasoning": r} for q, r in self.queries]}


def _missing_strategies(obj: Mapping) -> list[str]:
    return [f"strategy_{s}" for s in STRATEGIES if not obj.get(f"strategy_{s}")]


def synthesize_queries(profile: KeywordProfile, designer: Gateway) -> list[StrategyQuerySet]:
    system, user = prompts.render("query_generation",
                                  keywords_json_str=json.dumps(profile.to_dict()["keywords"], ensure_ascii=False, indent=2))
    obj, _ = designer.chat_json([ChatMessage("system", system), ChatMessage("user", user)],
                                check=_missing_strategies)
    out = []
    for s in STRATEGIES:
        raw = obj[f"strategy_{s}"]
        if not isinstance(raw, list):
            raise MalformedOutputError(f"strategy_{s} must be a list of queries")
        queries = []
        for item in raw:
            if isinstance(item, str):
                q, r = item, ""
            elif isinstance(item, Mapping):
                q, r = str(item.get("query", "")), str(item.get("reasoning", ""))
            else:
                continue
            if q.strip():
                queries.append((q.strip(), r))
        if not queries:
            raise MalformedOutputError(f"strategy_{s} has no usable queries")
        if len(queries) > MAX_QUERIES:
            warnings.warn(f"strategy_{s}: {len(queries)} queries, keeping the first {MAX_QUERIES}", stacklevel=2)
            queries = queries[:MAX_QUERIES]
        elif len(queries) < MIN_QUERIES:
            warnings.warn(f"strategy_{s}: only {len(queries)} queries", stacklevel=2)
        out.append(StrategyQuerySet(s, STRATEGY_INTENT[s], tuple(queries)))
    return out


# ------------------------------------------------------------------ multi-turn search

@dataclass(frozen=True)
class ControllerDecision:
    done: bool
    need_search: bool
    next_query: str
    reasoning: str
    summary: str

    def to_dict(self):
        return {"done": self.done, "need_search": self.need_search, "next_query": self.next_query,
                "reasoning": self.reasoning, "summary": self.summary}


@dataclass(frozen=True)
class SearchRound:
    query: str
    raw_results: tuple[SearchResult, ...]
    decision: ControllerDecision
    error: str = ""

    def to_dict(self):
        return {"query": self.query, "raw_results": [r.to_dict() for r in self.raw_results],
                "controller_decision": self.decision.to_dict(), "error": self.error}


@dataclass(frozen=True)
class SearchSession:
    target_description: str
    engine_kind: str
    rounds: tuple[SearchRound, ...]
    final_summary: str
    completed: bool

    @property
    def results(self) -> list[SearchResult]:
        return [r for rnd in self.rounds for r in rnd.raw_results]

    def has_content(self) -> bool:
        return bool(self.final_summary.strip() or self.results)

    def to_dict(self):
        return {"target_description": self.target_description, "engine_kind": self.engine_kind,
                "rounds": [r.to_dict() for r in self.rounds], "final_summary": self.final_summary,
                "completed": self.completed}

    def render(self, snippet_chars: int = 500) -> str:
        lines = [f"Target: {self.target_description} (engine: {self.engine_kind})"]
        if self.final_summary:
            lines.append(f"Summary: {self.final_summary}")
        for r in self.results:
            lines.append(f"- {r.title} ({r.url}): {_clip(r.snippet, snippet_chars)}")
        return "\n".join(lines)


def _as_bool(v) -> bool:
    if isinstance(v, str):
        return v.strip().lower() in ("true", "yes", "1")
    return bool(v)


def _decision(obj: Mapping) -> ControllerDecision:
    done = _as_bool(obj.get("done", False))
    return ControllerDecision(
        done=done,
        need_search=_as_bool(obj.get("need_search", not done)),
        next_query=str(obj.get("next_query") or "").strip(),
        reasoning=str(obj.get("reasoning") or ""),
        summary=str(obj.get("summary") or ""),
    )


def _history(rounds: Sequence[SearchRound], snippet_chars: int = 300) -> str:
    if not rounds:
        return "(none yet)"
    parts = []
    for i, rnd in enumerate(rounds, 1):
        if not rnd.query:
            parts.append(f"Round {i}: no search ({rnd.decision.reasoning})")
            continue
        lines = [f"Round {i} query: {rnd.query}"]
        if rnd.error:
            lines.append(f"  search failed: {rnd.error}")
        elif not rnd.raw_results:
            lines.append("  no results")
        for j, r in enumerate(rnd.raw_results, 1):
            lines.append(f"  {j}. {r.title} | {r.url} | {_clip(r.snippet, snippet_chars)}")
        parts.append("\n".join(lines))
    return "\n".join(parts)


def run_multi_turn_search(target: str, engine_kind: str, backend: SearchBackend, controller: Gateway,
                          max_rounds: int = 10) -> SearchSession:
    """Controller-driven search loop; stops when the controller is done or after ``max_rounds``."""
    if max_rounds < 1:
        raise PreconditionError("max_rounds must be >= 1")
    if engine_kind not in ENGINE_KINDS:
        raise PreconditionError(f"unknown engine kind {engine_kind!r}")
    hint = prompts.load(ENGINE_HINT_ASSET[engine_kind]).text
    rounds: list[SearchRound] = []
    for idx in range(1, max_rounds + 1):
        system, user = prompts.render("multi_turn_search", target_description=target, round_idx=idx,
                                      max_rounds=max_rounds, history_str=_history(rounds),
                                      engine_type=engine_kind, engine_hint=hint)
        obj, _ = controller.chat_json([ChatMessage("system", system), ChatMessage("user", user)],
                                      required_keys=("done",))
        decision = _decision(obj)
        if decision.done:
            rounds.append(SearchRound("", (), decision))
            completed = bool(decision.summary.strip())
            return SearchSession(target, engine_kind, tuple(rounds), decision.summary, completed)
        results: tuple[SearchResult, ...] = ()
        error = ""
        if decision.next_query:
            try:
                results = tuple(backend.search(decision.next_query, engine_kind))
            except SearchBackendError as exc:
                error = str(exc)
                log.warning("search failed for %r: %s", decision.next_query, exc)
        rounds.append(SearchRound(decision.next_query, results, decision, error))
    return SearchSession(target, engine_kind, tuple(rounds), "", False)


# ------------------------------------------------------------------ analyses

@dataclass(frozen=True)
class StrategyAnalysis:
    strategy: str
    payload: Mapping[str, Any]
    source_sessions: tuple[SearchSession, ...] = ()

    def to_dict(self):
        return {"strategy": self.strategy, "payload": self.payload,
                "source_sessions": [s.to_dict() for s in self.source_sessions]}


def render_sessions(sessions: Sequence[SearchSession], char_budget: int = 60_000) -> str:
    blocks = [f"## Document set {i}\n{s.render()}" for i, s in enumerate(sessions, 1)]
    return _clip("\n\n".join(blocks), char_budget)


def analyze_strategy(strategy: str, sessions: Sequence[SearchSession], task_thinking: str, designer: Gateway,
                     char_budget: int = 60_000) -> StrategyAnalysis:
    if strategy not in STRATEGIES:
        raise PreconditionError(f"unknown strategy {strategy!r}")
    if not any(s.has_content() for s in sessions):
        raise PreconditionError(f"strategy {strategy}: no session with retrieved content")
    system, user = prompts.render(f"strategy_{strategy.lower()}_analysis", task_thinking=task_thinking,
                                  strategy_name=STRATEGY_TITLE[strategy],
                                  files_text=render_sessions(sessions, char_budget))
    obj, _ = designer.chat_json([ChatMessage("system", system), ChatMessage("user", user)],
                                required_keys=ANALYSIS_KEYS[strategy])
    return StrategyAnalysis(strategy, obj, tuple(sessions))


# ------------------------------------------------------------------ full harvest

@dataclass(frozen=True)
class HarvestSettings:
    max_rounds: int = 10
    queries_per_strategy: int = 3
    analysis_char_budget: int = 60_000
    sample_chars: int = 4000
    routing: Mapping[str, tuple[str, ...]] = field(default_factory=lambda: dict(DEFAULT_ROUTING))
    jobs: int = 1


@dataclass(frozen=True)
class HarvestResult:
    buffer: ContextBuffer
    profile: KeywordProfile
    query_sets: tuple[StrategyQuerySet, ...]
    analyses: tuple[StrategyAnalysis, ...]

    def to_dict(self):
        return {"buffer": self.buffer.to_dict(), "profile": self.profile.to_dict(),
                "query_sets": [q.to_dict() for q in self.query_sets],
                "analyses": [a.to_dict() for a in self.analyses]}


def harvest(buffer: ContextBuffer, designer: Gateway, backend: SearchBackend,
            settings: HarvestSettings = HarvestSettings()) -> HarvestResult:
    profile = extract_keywords(buffer, designer, settings.sample_chars)
    query_sets = synthesize_queries(profile, designer)
    jobs = []
    for qs in query_sets:
        engines = tuple(settings.routing.get(qs.strategy, DEFAULT_ROUTING[qs.strategy]))
        for query, reasoning in qs.queries[: settings.queries_per_strategy]:
            target = f"{query}\n(Purpose: {reasoning})" if reasoning else query
            for engine in engines:
                jobs.append((qs.strategy, target, engine))

    def run(job):
        _, target, engine = job
        return run_multi_turn_search(target, engine, backend, designer, settings.max_rounds)

    # map() keeps job order, so output is independent of thread scheduling
    if settings.jobs > 1:
        with ThreadPoolExecutor(settings.jobs) as pool:
            sessions = list(pool.map(run, jobs))
    else:
        sessions = [run(j) for j in jobs]
    by_strategy: dict[str, list[SearchSession]] = {s: [] for s in STRATEGIES}
    for job, session in zip(jobs, sessions):
        by_strategy[job[0]].append(session)
    analyses = tuple(analyze_strategy(s, by_strategy[s], profile.thinking, designer, settings.analysis_char_budget)
                     for s in STRATEGIES)
    return HarvestResult(buffer, profile, tuple(query_sets), analyses)
