from pathlib import Path

import pytest

from phqscreen import knowledge, transcripts

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"
REPLIES = FIXTURES / "replies"
SYNTHETIC = FIXTURES / "synthetic"
KNOWLEDGE = FIXTURES / "knowledge"
BACKENDS = FIXTURES / "backends"

DOC_PATHS = {
    "phq8": KNOWLEDGE / "phq8.txt",
    "dsm5": KNOWLEDGE / "dsm5.txt",
    "data-description": KNOWLEDGE / "data_description.txt",
    "training-examples": KNOWLEDGE / "training_examples.jsonl",
}
TABLE4_IDS = [300, 306, 308, 309, 311]


def reply_text(name: str) -> str:
    return (REPLIES / name).read_text(encoding="utf-8")


@pytest.fixture
def bundle():
    return knowledge.PromptBundle.default()


@pytest.fixture(scope="session")
def synthetic_dialogues():
    return [transcripts.extract_participant_text(t)
            for t in transcripts.load_transcript_dir(SYNTHETIC / "transcripts")]


@pytest.fixture(scope="session")
def synthetic_labels():
    return transcripts.load_labels((SYNTHETIC / "labels.csv").read_bytes())


# -- acceptance summary: one PASS/FAIL line per criterion ----------------------

_acceptance: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    _acceptance.append((name, "PASS" if report.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        terminalreporter.write_line(f"[{outcome}] {name}")


def doc_args() -> list[str]:
    return [arg for kind, path in DOC_PATHS.items() for arg in ("--doc", f"{kind}={path}")]
