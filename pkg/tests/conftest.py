import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_criteria = {}


class CriterionLog:
    """Collects the checks behind each acceptance criterion for the end-of-run summary."""

    def check(self, number, title, ok, detail=""):
        entry = _criteria.setdefault(number, {"title": title, "parts": []})
        entry["parts"].append((bool(ok), detail))
        print(f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
        return bool(ok)


@pytest.fixture(scope="session")
def criteria():
    return CriterionLog()


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        ok = all(p[0] for p in entry["parts"])
        details = "; ".join(d for _, d in entry["parts"] if d)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {number:>2}. {entry['title']} | {details}")
