import pytest

from aaupower.teacher import generate_dataset, sample_fleet


@pytest.fixture(scope="session")
def small_fleet():
    return sample_fleet(4, 12, 6, 42)


@pytest.fixture(scope="session")
def small_ds(small_fleet):
    return generate_dataset(small_fleet, 6, 1)


# ── acceptance summary ─────────────────────────────────────────────────

_DETAILS: dict[str, str] = {}
_PREFIX = "test_acceptance.py::test_criterion_"


@pytest.fixture
def detail(request):
    """Record the measured values behind an acceptance criterion."""
    def note(text: str) -> None:
        _DETAILS[request.node.nodeid] = text
    return note


def pytest_terminal_summary(terminalreporter):
    status: dict[str, bool] = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if _PREFIX not in nodeid:
                continue
            ok = outcome == "passed" and rep.when == "call"
            status[nodeid] = status.get(nodeid, True) and ok
    if not status:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in sorted(status):
        name = nodeid.split(_PREFIX, 1)[1]
        num, _, title = name.partition("_")
        line = f"criterion {int(num):2d} {'PASS' if status[nodeid] else 'FAIL'}  {title.replace('_', ' ')}"
        if nodeid in _DETAILS:
            line += f"  [{_DETAILS[nodeid]}]"
        terminalreporter.write_line(line)
