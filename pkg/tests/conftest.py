import datetime as dt
import json
from pathlib import Path

import pytest

from dockerdoctor.fixes import FixContext
from dockerdoctor.resolvers import PackageIndexSnapshot, RegistrySnapshot

TESTS = Path(__file__).resolve().parent
CORPUS = TESTS / "corpus"
GOLDEN = TESTS / "golden"
FIXTURES = TESTS / "fixtures"
CORPUS_FILES = sorted(CORPUS.glob("*.Dockerfile"))
LAST_MODIFIED = dt.date(2021, 6, 1)


def corpus_ids():
    return [p.stem for p in CORPUS_FILES]


def hadolint_golden(path: Path) -> set[tuple[str, int]]:
    rows = json.loads((GOLDEN / "hadolint" / f"{path.stem}.json").read_text())
    return {(r["code"], r["line"]) for r in rows}


@pytest.fixture(scope="session")
def registry() -> RegistrySnapshot:
    return RegistrySnapshot.load(FIXTURES / "registry.jsonl")


@pytest.fixture(scope="session")
def apt_index() -> PackageIndexSnapshot:
    return PackageIndexSnapshot.load(FIXTURES / "apt.jsonl")


@pytest.fixture(scope="session")
def ctx(registry, apt_index) -> FixContext:
    return FixContext(LAST_MODIFIED, registry, apt_index)


ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
