from __future__ import annotations

import sys

import pytest

from mragplan.backends import FixtureSet, MockChatBackend, MockSearchBackend
from mragplan.executor import Backends


def mock_backends(fx: FixtureSet) -> Backends:
    """All chat slots share one mock so call logs interleave in order."""
    chat = MockChatBackend(fx)
    return Backends(agent=chat, task=chat, rewrite=chat, judge=chat, search=MockSearchBackend(fx))


@pytest.fixture
def make_backends():
    return mock_backends


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdict lines at the end of the run."""
    verdicts = []
    for name, module in list(sys.modules.items()):
        if name.rsplit(".", 1)[-1] == "test_acceptance":
            verdicts = getattr(module, "VERDICTS", verdicts)
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for line in verdicts:
            terminalreporter.write_line(line)
