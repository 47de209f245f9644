import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nodeforge.demo import write_scenario  # noqa: E402


@pytest.fixture
def judicial_dir(tmp_path):
    write_scenario(tmp_path / "scenario")
    return tmp_path / "scenario"


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        status, title = results[number]
        terminalreporter.write_line(f"{status} criterion {number}: {title}")
