import sys

from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion, collected by tests/test_acceptance.py."""
    mod = next((m for m in list(sys.modules.values()) if hasattr(m, "ACCEPTANCE_OUTCOMES")), None)
    if mod is None or not mod.ACCEPTANCE_OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
