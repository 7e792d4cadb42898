"""Acceptance harness: runs every scenario and groups checks by criterion."""
from __future__ import annotations

from dataclasses import dataclass, field

from .scenarios import SCENARIOS, Check, ScenarioConfig, ScenarioReport

CRITERIA = {
    1: "Ellsberg margin",
    2: "smooth demand closed form",
    3: "cutoff construction",
    4: "rationalization roundtrip",
    5: "maxmin optimum value",
    6: "derandomization",
    7: "convex-hull restriction",
    8: "cutoff-state belief",
    9: "brute-force dominance equivalence",
    10: "simple-order approximation",
}


@dataclass
class CriterionResult:
    number: int
    title: str
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    def line(self) -> str:
        n_ok = sum(c.passed for c in self.checks)
        status = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number:2d} {status}  {self.title} ({n_ok}/{len(self.checks)} checks)"


@dataclass
class AcceptanceReport:
    criteria: list[CriterionResult]
    reports: dict[str, ScenarioReport]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria) and all(r.passed for r in self.reports.values())

    def lines(self) -> list[str]:
        return [c.line() for c in self.criteria]


def run_acceptance(cfg: ScenarioConfig | None = None) -> AcceptanceReport:
    cfg = cfg or ScenarioConfig()
    reports = {name: runner(cfg) for name, runner in SCENARIOS.items()}
    results = {n: CriterionResult(n, title) for n, title in CRITERIA.items()}
    for rep in reports.values():
        for c in rep.checks:
            if c.criterion is not None:
                results[c.criterion].checks.append(c)
    return AcceptanceReport([results[n] for n in sorted(results)], reports)
