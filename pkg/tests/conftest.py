"""Prints one PASS/FAIL line per acceptance criterion after the run."""

import re

_CRITERION_PATTERN = re.compile(r"test_criterion_(\d+)")

_TITLES = {
    1: "equation unit suite (defaults, exact arithmetic, < 1 s)",
    2: "similarity tracks precision (Spearman >= 0.9, 3 seeds, < 2 min)",
    3: "estimation beats labeled prior (>= 80% of domains, < 2 min)",
    4: "dynamic thresholds damp class bias (3/3 seeds, < 3 min)",
    5: "easy phase yields more accepts per image (3/3 seeds)",
    6: "streaming state equals batch recount; schedule equals sort oracle",
    7: "byte-identical reruns; >= 1e6 boxes through the loop in < 60 s",
    8: "tau x mu ablation grid runs with one schema",
}

_outcomes: dict[int, str] = {}
_details: dict[int, str] = {}


def record_detail(criterion: int, text: str) -> None:
    _details[criterion] = text


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    match = _CRITERION_PATTERN.search(report.nodeid)
    if not match:
        return
    number = int(match.group(1))
    outcome = "PASS" if report.passed else "FAIL"
    if number in _outcomes and _outcomes[number] == "FAIL":
        return
    _outcomes[number] = outcome


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for number in sorted(_outcomes):
        line = f"criterion {number}: {_outcomes[number]} - {_TITLES.get(number, '')}"
        if number in _details:
            line += f" [{_details[number]}]"
        terminalreporter.write_line(line)
