from __future__ import annotations

from importlib import resources
from pathlib import Path

import pytest

from kgtaskgen.ingest.doc import load_corpus
from kgtaskgen.ingest.web import load_snapshots


def bundled(relative: str) -> Path:
    return Path(str(resources.files("kgtaskgen").joinpath(relative)))


@pytest.fixture(scope="session")
def bundled_docs():
    return load_corpus(bundled("data/corpus/docs"))


@pytest.fixture(scope="session")
def bundled_snapshots():
    return load_snapshots(bundled("data/corpus/snapshots"))


# one line per acceptance criterion, echoed after the test session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
