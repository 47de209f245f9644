"""Search backends: a recorded fixture store and live HTTP adapters.

Every backend answers ``search(query, kind)`` with a list of
:class:`SearchResult`; ``kind`` is one of :data:`ENGINE_KINDS`.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Protocol

from .errors import SearchBackendError

GENERAL_WEB = "general_web"
CODE_REPOSITORY = "code_repository"
SCHOLARLY = "scholarly"
ENGINE_KINDS = (GENERAL_WEB, CODE_REPOSITORY, SCHOLARLY)


@dataclass(frozen=True)
class SearchResult:
    title: str
    url: str
    snippet: str

    def to_dict(self) -> dict[str, str]:
        return {"title": self.title, "url": self.url, "snippet": self.snippet}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SearchResult":
        return cls(str(d.get("title", "")), str(d.get("url", "")),
                   str(d.get("snippet", d.get("content", ""))))


class SearchBackend(Protocol):
    def search(self, query: str, kind: str) -> list[SearchResult]: ...


def normalize_query(query: str) -> str:
    return " ".join(query.lower().split())


def query_key(query: str) -> str:
    return hashlib.sha256(normalize_query(query).encode("utf-8")).hexdigest()[:16]


def _words(text: str) -> set[str]:
    return set(re.findall(r"\w+", text.lower()))


class FixtureBackend:
    """Recorded results on disk: ``<root>/<kind>/<query_key>.json``.

    Each document is ``{"query": str, "results": [{title, url, snippet}]}``.
    An unrecorded query falls back to the recorded query of the same kind
    with the highest word-set Jaccard overlap (ties: smallest key); with no
    overlap at all the result list is empty.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._store: dict[str, dict[str, dict]] = {}
        for kind in ENGINE_KINDS:
            docs = {}
            kdir = self.root / kind
            if kdir.is_dir():
                for path in sorted(kdir.glob("*.json")):
                    doc = json.loads(path.read_text("utf-8"))
                    docs[path.stem] = doc
            self._store[kind] = docs

    def search(self, query: str, kind: str) -> list[SearchResult]:
        if kind not in ENGINE_KINDS:
            raise SearchBackendError(f"unknown engine kind {kind!r}")
        docs = self._store[kind]
        doc = docs.get(query_key(query))
        if doc is None:
            doc = self._nearest(query, docs)
        if doc is None:
            return []
        return [SearchResult.from_dict(r) for r in doc.get("results", [])]

    @staticmethod
    def _nearest(query: str, docs: Mapping[str, dict]):
        q = _words(query)
        best, best_score = None, 0.0
        for key in sorted(docs):
            w = _words(docs[key].get("query", ""))
            union = q | w
            score = len(q & w) / len(union) if union else 0.0
            if score > best_score:
                best, best_score = docs[key], score
        return best

    @staticmethod
    def record(root: str | Path, kind: str, query: str, results: list[SearchResult | Mapping]) -> Path:
        path = Path(root) / kind / f"{query_key(query)}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        rows = [r.to_dict() if isinstance(r, SearchResult) else dict(r) for r in results]
        path.write_text(json.dumps({"query": query, "results": rows}, indent=2, sort_keys=True,
                                   ensure_ascii=False) + "\n", encoding="utf-8")
        return path


class GitHubRepositoryBackend:
    """GitHub repository search REST API (``code_repository`` only)."""

    def __init__(self, token_env: str | None = "GITHUB_TOKEN", per_page: int = 10, client=None):
        import httpx

        headers = {"Accept": "application/vnd.github+json"}
        token = os.environ.get(token_env) if token_env else None
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self.per_page = per_page
        self._client = client or httpx.Client(timeout=30.0, headers=headers)

    def search(self, query: str, kind: str) -> list[SearchResult]:
        import httpx

        try:
            resp = self._client.get("https://api.github.com/search/repositories",
                                    params={"q": query, "per_page": self.per_page})
            resp.raise_for_status()
            items = resp.json().get("items", [])
        except (httpx.HTTPError, ValueError) as exc:
            raise SearchBackendError(f"github search failed: {exc}") from exc
        return [SearchResult(i.get("full_name", ""), i.get("html_url", ""), i.get("description") or "")
                for i in items]


class HttpJsonBackend:
    """A search proxy answering ``GET <url>?q=...&kind=...`` with a JSON list of results.

    The result list may sit at the top level or under ``results``/``items``.
    """

    def __init__(self, url: str, api_key_env: str | None = None, client=None):
        import httpx

        headers = {}
        if api_key_env and os.environ.get(api_key_env):
            headers["Authorization"] = f"Bearer {os.environ[api_key_env]}"
        self.url = url
        self._client = client or httpx.Client(timeout=30.0, headers=headers)

    def search(self, query: str, kind: str) -> list[SearchResult]:
        import httpx

        try:
            resp = self._client.get(self.url, params={"q": query, "kind": kind})
            resp.raise_for_status()
            data = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise SearchBackendError(f"search endpoint failed: {exc}") from exc
        if isinstance(data, Mapping):
            data = data.get("results", data.get("items", []))
        return [SearchResult.from_dict(r) for r in data if isinstance(r, Mapping)]


class RoutedBackend:
    """Dispatches each engine kind to its own backend."""

    def __init__(self, routes: Mapping[str, SearchBackend], default: SearchBackend | None = None):
        self.routes = dict(routes)
        self.default = default

    def search(self, query: str, kind: str) -> list[SearchResult]:
        backend = self.routes.get(kind, self.default)
        if backend is None:
            raise SearchBackendError(f"no backend configured for {kind!r}")
        return backend.search(query, kind)


def backend_from_config(cfg: Mapping[str, Any], base_dir: Path | None = None) -> SearchBackend:
    """Build a backend from ``{"kind": "fixture", "path": ...}`` and friends.

    ``{"kind": "routed", "routes": {engine_kind: cfg, ...}, "default": cfg}``
    composes per-engine backends.
    """
    kind = cfg.get("kind", "fixture")
    if kind == "fixture":
        path = Path(cfg["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return FixtureBackend(path)
    if kind == "github":
        return GitHubRepositoryBackend(cfg.get("token_env", "GITHUB_TOKEN"), int(cfg.get("per_page", 10)))
    if kind == "http":
        return HttpJsonBackend(cfg["url"], cfg.get("api_key_env"))
    if kind == "routed":
        routes = {k: backend_from_config(v, base_dir) for k, v in cfg.get("routes", {}).items()}
        default = backend_from_config(cfg["default"], base_dir) if cfg.get("default") else None
        return RoutedBackend(routes, default)
    raise ValueError(f"unknown search backend kind {kind!r}")
