"""Shared test plumbing: acceptance bookkeeping and hypothesis defaults."""

from __future__ import annotations

from contextlib import contextmanager

from hypothesis import HealthCheck, settings

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

# cid -> (description, "PASS" | "FAIL"), filled by the acceptance tests.
_RESULTS: dict[str, tuple[str, str]] = {}


@contextmanager
def criterion(cid: str, description: str):
    """Record one acceptance criterion outcome for the terminal summary."""

    try:
        yield
    except BaseException:
        _RESULTS[cid] = (description, "FAIL")
        raise
    _RESULTS[cid] = (description, "PASS")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for cid in sorted(_RESULTS):
        description, outcome = _RESULTS[cid]
        terminalreporter.write_line(f"[{outcome}] {cid} {description}")
