import httpx
import pytest

from nodeforge.errors import SearchBackendError
from nodeforge.search import (
    FixtureBackend,
    HttpJsonBackend,
    RoutedBackend,
    SearchResult,
    backend_from_config,
    normalize_query,
    query_key,
)


@pytest.fixture
def fixtures(tmp_path):
    FixtureBackend.record(tmp_path, "general_web", "contract damages law",
                          [SearchResult("Damages", "https://e.x/d", "how damages work")])
    FixtureBackend.record(tmp_path, "scholarly", "tort liability survey", [{"title": "Survey", "url": "u",
                                                                             "snippet": "s"}])
    return tmp_path


def test_query_key_ignores_case_and_spacing():
    assert normalize_query("  Contract   DAMAGES ") == "contract damages"
    assert query_key("Contract damages") == query_key("contract  damages")


def test_exact_and_nearest_lookup(fixtures):
    backend = FixtureBackend(fixtures)
    assert backend.search("Contract Damages Law", "general_web")[0].title == "Damages"
    assert backend.search("damages in contract disputes", "general_web")[0].url == "https://e.x/d"
    assert backend.search("zebra migration", "general_web") == []
    assert backend.search("contract damages law", "code_repository") == []
    with pytest.raises(SearchBackendError):
        backend.search("x", "bogus")


def test_http_backend_parses_and_wraps_errors():
    def handler(request):
        if request.url.params["q"] == "boom":
            return httpx.Response(500)
        return httpx.Response(200, json={"results": [{"title": "T", "url": "U", "content": "C"}]})

    backend = HttpJsonBackend("https://search.invalid/q", client=httpx.Client(transport=httpx.MockTransport(handler)))
    assert backend.search("ok", "general_web") == [SearchResult("T", "U", "C")]
    with pytest.raises(SearchBackendError):
        backend.search("boom", "general_web")


def test_routed_backend(fixtures):
    routed = backend_from_config({"kind": "routed", "routes": {"scholarly": {"kind": "fixture", "path": "."}}},
                                 fixtures)
    assert isinstance(routed, RoutedBackend)
    assert routed.search("tort liability survey", "scholarly")[0].title == "Survey"
    with pytest.raises(SearchBackendError):
        routed.search("x", "general_web")
