"""Acceptance suite: one test and one printed pass/fail line per criterion."""
import pytest

from ambiguity_limits.acceptance import CRITERIA, run_acceptance
from ambiguity_limits.scenarios import ScenarioConfig


@pytest.fixture(scope="module")
def acceptance():
    return run_acceptance(ScenarioConfig())


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(acceptance, number, capsys):
    result = next(c for c in acceptance.criteria if c.number == number)
    with capsys.disabled():
        print(f"\n{result.line()}")
        for c in result.checks:
            if not c.passed:
                print(f"    failed: {c.name} {c.detail}")
    assert result.checks, f"criterion {number} has no checks"
    assert result.passed, [c.name for c in result.checks if not c.passed]


def test_scenarios_have_no_failing_checks(acceptance):
    failing = [(name, c.name) for name, rep in acceptance.reports.items() for c in rep.checks if not c.passed]
    assert not failing
