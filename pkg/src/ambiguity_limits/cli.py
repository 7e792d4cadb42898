"""Command-line entry point.

Exit codes: 0 when every assertion passes, 1 on an assertion failure, 2 on a
configuration or input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .acceptance import run_acceptance
from .dominance import deterministic_dominator, dominance_lp, rationalize
from .market_model import UtilitySpec, action_grid, build_model, payoff_kernel, uninformative_family
from .orders import LimitOrder, derandomize
from .preferences import PhiSpec, SecondOrderPrior, optimize_maxmin, optimize_seu, optimize_smooth
from .scenarios import ScenarioConfig, ScenarioReport, emit_report, parse_config, run_scenario
from .schemas import ConfigError, validate_document

log = logging.getLogger("ambiguity_limits")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario config JSON")
    common.add_argument("--out", help="output directory for reports")
    common.add_argument("--seed", type=int, help="seed for randomized batteries")
    common.add_argument("--tol", type=float, help="verification tolerance")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ambiguity-limits", parents=[common],
                                     description="Dominance, rationalization and demand for limit orders.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("ellsberg", "two-urn example"), ("motivating", "two-value example end to end"),
                       ("appendix", "cutoff-state belief world"), ("batteries", "randomized batteries"),
                       ("acceptance", "every scenario, one line per criterion")):
        sub.add_parser(name, help=text, parents=[common])
    for name in ("dominance", "rationalize"):
        p = sub.add_parser(name, help=f"{name} report for an order file", parents=[common])
        p.add_argument("--order", required=True, help="limit order JSON (breakpoints, levels)")
        p.add_argument("--model", help="model JSON (default: the two-value uninformative family)")
    p = sub.add_parser("demand", help="SEU / maxmin / smooth demand at each price node", parents=[common])
    p.add_argument("--model", required=True, help="model JSON")
    return parser


def _config(args) -> ScenarioConfig:
    cfg = parse_config(args.config) if args.config else ScenarioConfig()
    changes = {}
    if args.out is not None:
        changes["out"] = args.out
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.tol is not None:
        changes["verification"] = args.tol
    return cfg.replace(**changes) if changes else cfg


def _read_json(path: str, kind: str):
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"{kind} file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{kind} file is not valid JSON ({exc.msg}, line {exc.lineno})") from exc
    validate_document(doc, kind)
    return doc


def _model(args, cfg: ScenarioConfig):
    if getattr(args, "model", None):
        doc = _read_json(args.model, "model")
        try:
            family = build_model(doc)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        utility = UtilitySpec.from_dict(doc["utility"]) if "utility" in doc else None
        n_actions = int(doc.get("actions", cfg.action_nodes))
    else:
        family, utility, n_actions = uninformative_family(cfg.price_nodes, (cfg.beta_l, cfg.beta_h)), None, cfg.action_nodes
    if utility is None:
        utility = UtilitySpec.exponential(cfg.risk_aversion) if cfg.utility == "exponential" else UtilitySpec.linear()
    return family, payoff_kernel(family, utility, action_grid(family.bounds, n_actions))


def _order_report(args, cfg: ScenarioConfig) -> ScenarioReport:
    order = LimitOrder.from_dict(_read_json(args.order, "order"))
    family, kernel = _model(args, cfg)
    rep = ScenarioReport(args.command)
    if args.command == "dominance":
        res = dominance_lp(order, kernel, family, cfg.eps_dom)
        rep.data.update(res.to_dict(order))
        if res.dominated:
            det = deterministic_dominator(res, kernel, family)
            rep.data["deterministic_dominator"] = det.order.to_dict()
            rep.check("dominator strictly better in every state", np.all(det.state_gaps > 0))
        else:
            rep.check("belief certificate within tolerance", res.verification_gap <= cfg.verification,
                      gap=res.verification_gap)
    else:
        result = rationalize(order, kernel, family, tol=cfg.verification, eps_dom=cfg.eps_dom)
        rep.data.update(result.to_dict())
        rep.data["order"] = order.to_dict()
        rep.check("certificate verified", result.verified)
    rep.tables["summary"] = [{"order_id": Path(args.order).stem, "t_star": rep.data["t_star"],
                              "verified": rep.passed}]
    return rep


def _demand_report(args, cfg: ScenarioConfig) -> ScenarioReport:
    family, kernel = _model(args, cfg)
    Y = family.n_states
    Pi = np.eye(Y)
    uniform = np.full(Y, 1.0 / Y)
    seu = optimize_seu(uniform, kernel, family)
    mm, _ = optimize_maxmin(Pi, kernel, family)
    prior = SecondOrderPrior(Pi, uniform)
    sm, _ = optimize_smooth(prior, PhiSpec("exponential", cfg.alpha), kernel, family, tol=1e-9)
    rows = [{"price": float(p), "seu": float(a), "maxmin": float(b), "smooth": float(c)}
            for p, a, b, c in zip(family.prices, seu(family.prices), derandomize(mm)(family.prices),
                                  derandomize(sm)(family.prices))]
    rep = ScenarioReport("demand", tables={"curves": rows})
    rep.data["states"] = list(family.state_labels or range(Y))
    return rep


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.command == "acceptance":
            acc = run_acceptance(cfg)
            for line in acc.lines():
                print(line)
            reports = list(acc.reports.values())
            ok = acc.passed
        else:
            if args.command in ("dominance", "rationalize"):
                rep = _order_report(args, cfg)
            elif args.command == "demand":
                rep = _demand_report(args, cfg)
            else:
                rep = run_scenario(args.command, cfg)
            for c in rep.checks:
                print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}")
            reports, ok = [rep], rep.passed
        for rep in reports:
            for path in emit_report(rep, cfg.out):
                log.info("wrote %s", path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return 2
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
