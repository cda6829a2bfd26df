import os

import pytest

from gitwatch.archive import build_event_index
from gitwatch.graph import build_graph
from gitwatch.heuristics import HeuristicContext, PatchSpec, tags_from_index
from gitwatch.provider import FixtureBackend, MetadataProvider, ProviderConfig

os.environ.setdefault("GITHUB_TOKEN", "")


def analyze_sim(result, cache_dir=None):
    """Run the full pipeline over a simulation in memory.

    Returns ``(graph, context, {label: estimate})``.
    """
    sc = result.script
    index = build_event_index(result.events)
    provider = MetadataProvider(ProviderConfig(cache_dir=cache_dir), FixtureBackend(result.all_commits()))
    graph = build_graph(index, provider, fork=sc.fork_repo, upstream=sc.upstream_repo)
    ctx = HeuristicContext(graph, index, tags_from_index(index, sc.fork_repo),
                           tags_from_index(index, sc.upstream_repo))
    ests = {p.label: ctx.estimate(PatchSpec(p.label, (p.commit,)), sc.fork_repo) for p in result.truth}
    return graph, ctx, ests


@pytest.fixture
def analyze():
    return analyze_sim


ACCEPTANCE_LINES: list[str] = []


def criterion(number: int, ok: bool, text: str, detail: str = "") -> None:
    """Print and remember one acceptance verdict, then fail the test if it did not hold."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {text}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def pytest_runtest_logreport(report):
    # a criterion test that raised before reaching its verdict still gets a FAIL line
    if report.when != "call" or not report.failed or "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    number = name.split("_")[1]
    if number.isdigit() and not any(l.startswith(f"criterion {number}:") for l in ACCEPTANCE_LINES):
        ACCEPTANCE_LINES.append(f"criterion {number}: FAIL - {name} raised before reaching a verdict")
