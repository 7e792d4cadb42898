"""Strict dominance between limit orders and rationalizing beliefs.

The dominance LP searches the behavioral orders for the largest uniform
payoff gain over a tested order. A positive optimum is a dominator; otherwise
the optimal dual multipliers are a belief under which the tested order is an
SEU best response.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.optimize import brentq

from ._lp import solve_margin_lp
from .market_model import (
    Grid,
    ModelFamily,
    PayoffKernel,
    UtilitySpec,
    as_belief,
    payoff_kernel,
    payoff_vector,
)
from .orders import (
    BehavioralOrder,
    LimitOrder,
    MixedOrder,
    derandomize,
    purify_by_refinement,
)
from .preferences import as_belief_set

log = logging.getLogger(__name__)

EPS_DOM = 1e-7


def order_to_dict(order) -> dict:
    if isinstance(order, LimitOrder):
        return {"type": "limit", **order.to_dict()}
    if isinstance(order, BehavioralOrder):
        return {
            "type": "behavioral",
            "prices": order.prices.tolist(),
            "actions": order.actions.tolist(),
            "probs": order.probs.tolist(),
        }
    if isinstance(order, MixedOrder):
        return {"type": "mixed", "atoms": [{"weight": w, **l.to_dict()} for w, l in order.atoms]}
    raise TypeError(f"cannot serialize {type(order).__name__}")


# --- cutoff construction for uninformative prices -------------------------------

class LRCurves:
    """``L(v) = int_{p<v} (1 - l) dF`` and ``R(v) = int_{p>=v} (1 + l) dF``.

    Each grid node's mass is spread uniformly over its cell, so both curves are
    continuous and piecewise linear in ``v``.
    """

    def __init__(self, l: LimitOrder, F: Grid):
        values = np.array(l(F.points), dtype=float)
        low, high = F.points < -1.0, F.points > 1.0
        if np.any(values[low] != 1.0) or np.any(values[high] != -1.0):
            warnings.warn("order corrected to buy below -1 and sell above 1", stacklevel=2)
            values[low], values[high] = 1.0, -1.0
        self.values = values
        self.edges = F.cell_edges()
        self.masses = F.weights

    def _below(self, v: float) -> np.ndarray:
        lo, hi = self.edges[:-1], self.edges[1:]
        return np.clip((v - lo) / (hi - lo), 0.0, 1.0)

    def __call__(self, v: float) -> tuple[float, float]:
        frac = self._below(v)
        L = float(np.sum((1.0 - self.values) * self.masses * frac))
        R = float(np.sum((1.0 + self.values) * self.masses * (1.0 - frac)))
        return L, R

    def difference(self, v: float) -> float:
        L, R = self(v)
        return L - R

    def crossing(self, tol: float = 1e-9) -> float:
        """A point where ``L = R`` (L - R is nondecreasing)."""
        lo, hi = float(self.edges[0]), float(self.edges[-1])
        d_lo, d_hi = self.difference(lo), self.difference(hi)
        if d_lo >= 0:
            return lo
        if d_hi <= 0:
            return hi
        v = brentq(self.difference, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        if abs(self.difference(v)) > tol:
            raise RuntimeError(f"bisection left |L - R| = {abs(self.difference(v)):.3g}")
        return float(v)


def lr_functions(l: LimitOrder, F: Grid) -> LRCurves:
    return LRCurves(l, F)


@dataclass(frozen=True)
class CutoffCertificate:
    v: float
    gain_per_state: np.ndarray
    L_at_v: float
    R_at_v: float
    already_cutoff: bool = False
    grid_gain_per_state: np.ndarray | None = None

    @property
    def strict(self) -> bool:
        return bool(np.all(self.gain_per_state > 0))

    def to_dict(self) -> dict:
        return {
            "v": self.v,
            "gain_per_state": self.gain_per_state.tolist(),
            "L_at_v": self.L_at_v,
            "R_at_v": self.R_at_v,
            "already_cutoff": self.already_cutoff,
            "grid_gain_per_state": None if self.grid_gain_per_state is None else self.grid_gain_per_state.tolist(),
        }


def _check_uninformative(family: ModelFamily) -> np.ndarray:
    x = family.value_grid.points
    if x.size != 2 or not np.allclose(x, [-1.0, 1.0]):
        raise ValueError("cutoff construction needs values {-1, 1}")
    if not np.allclose(family.bounds, (-1.0, 1.0)):
        raise ValueError("cutoff construction needs action bounds [-1, 1]")
    h = family.density
    if not np.allclose(h, h[:1], rtol=0, atol=1e-9 * max(1.0, h.max())):
        raise ValueError("cutoff construction needs a price-independent value distribution")
    means = family.conditional_mean_values()[0]
    return means


def find_dominating_cutoff(l: LimitOrder, family: ModelFamily, tol: float = 1e-9) -> CutoffCertificate:
    """Cutoff order with uniform extra expected return over ``l`` (risk-neutral, uninformative prices)."""
    means = _check_uninformative(family)
    curves = LRCurves(l, family.price_grid)
    vals = curves.values
    if np.any(np.abs(vals) > 1.0 + 1e-12):
        raise ValueError("order must stay within [-1, 1]")
    active = family.price_grid.weights > 0
    a = vals[active]
    is_cutoff = bool(np.all(np.isin(a, (-1.0, 1.0))) and np.all(np.diff(a) <= 0))
    v = curves.crossing(tol)
    L, R = curves(v)
    if is_cutoff:
        zeros = np.zeros(family.n_states)
        return CutoffCertificate(v, zeros, L, R, already_cutoff=True, grid_gain_per_state=zeros)
    # exact integral of (l_v - l)(m - p) dF with mass spread over each cell
    lo, hi = curves.edges[:-1], curves.edges[1:]
    c = np.clip(v, lo, hi)
    dens = family.price_grid.weights / (hi - lo)

    def seg(m, a_, b_):
        return m * (b_ - a_) - 0.5 * (b_ ** 2 - a_ ** 2)

    gains = np.array([
        np.sum(dens * ((1.0 - vals) * seg(m, lo, c) + (-1.0 - vals) * seg(m, c, hi)))
        for m in means
    ])
    kernel = payoff_kernel(family, UtilitySpec.linear(), np.array([-1.0, 0.0, 1.0]))
    cutoff = LimitOrder(np.array([v]), np.array([1.0, -1.0]))
    grid_gains = payoff_vector(cutoff, kernel, family) - payoff_vector(LimitOrder.from_grid_values(family.prices, vals), kernel, family)
    return CutoffCertificate(float(v), gains, L, R, False, grid_gains)


# --- dominance LP ----------------------------------------------------------------

@dataclass(frozen=True)
class DominanceResult:
    t_star: float
    baseline: np.ndarray
    dominator: BehavioralOrder | None
    belief: np.ndarray | None
    state_gaps: np.ndarray | None
    lp_stats: dict = field(default_factory=dict)
    eps_dom: float = EPS_DOM

    @property
    def dominated(self) -> bool:
        return self.t_star > self.eps_dom

    @property
    def certificate_type(self) -> str:
        return "dominator" if self.dominated else "belief"

    @property
    def verification_gap(self) -> float:
        return float(self.lp_stats.get("dual_value", np.nan))

    def to_dict(self, order=None) -> dict:
        out: dict[str, Any] = {
            "t_star": self.t_star,
            "certificate_type": self.certificate_type,
            "verification_gap": self.verification_gap,
            "lp_stats": self.lp_stats,
        }
        if order is not None:
            out["order"] = order_to_dict(order)
        if self.dominated:
            out["dominator"] = order_to_dict(self.dominator)
            out["state_gaps"] = self.state_gaps.tolist()
        else:
            out["belief"] = self.belief.tolist()
        return out


def _lp_result(baseline: np.ndarray, kernel: PayoffKernel, family: ModelFamily, eps_dom: float) -> DominanceResult:
    sol = solve_margin_lp(kernel.W, baseline, family.price_grid.weights)
    stats = dict(sol.stats)
    if sol.t > eps_dom:
        dominator = BehavioralOrder.from_rows(family.prices, kernel.actions, sol.kappa)
        gaps = payoff_vector(dominator, kernel, family) - baseline
        return DominanceResult(sol.t, baseline, dominator, None, gaps, stats, eps_dom)
    return DominanceResult(sol.t, baseline, None, sol.dual, None, stats, eps_dom)


def dominance_lp(order, kernel: PayoffKernel, family: ModelFamily, eps_dom: float = EPS_DOM) -> DominanceResult:
    """Largest uniform gain any behavioral order achieves over ``order``, with its certificate."""
    baseline = payoff_vector(order, kernel, family)
    return _lp_result(baseline, kernel, family, eps_dom)


@dataclass(frozen=True)
class DeterministicDominance:
    """Deterministic order strictly dominating a tested order, on ``family``'s price grid."""

    order: LimitOrder
    family: ModelFamily
    state_gaps: np.ndarray
    method: str
    splits: int = 1


def _gaps_on(order: LimitOrder, kernel: PayoffKernel, family: ModelFamily, baseline: np.ndarray) -> np.ndarray:
    return payoff_vector(order, kernel, family) - baseline


def _refined_kernel(kernel: PayoffKernel, family: ModelFamily, splits: int) -> PayoffKernel:
    if kernel.utility is not None:
        return payoff_kernel(family, kernel.utility, kernel.actions)
    return PayoffKernel(np.repeat(kernel.W, splits, axis=0), kernel.actions, None)


def deterministic_dominator(
    result: DominanceResult,
    kernel: PayoffKernel,
    family: ModelFamily,
    max_splits: int = 4096,
) -> DeterministicDominance:
    """Replace the LP's behavioral dominator by a deterministic one.

    Mean-action derandomization is tried first (never worse state by state for
    concave utility); otherwise price nodes are split until the rounding loss
    is below ``t_star / 2``.
    """
    if not result.dominated or result.dominator is None:
        raise ValueError("result carries no dominator")
    dom, base = result.dominator, result.baseline
    mean_order = derandomize(dom)
    gaps = _gaps_on(mean_order, kernel, family, base)
    concave = kernel.utility is not None and kernel.utility.is_concave
    if dom.is_deterministic or concave or np.all(gaps > 0):
        if np.all(gaps > 0):
            method = "deterministic" if dom.is_deterministic else "derandomize"
            return DeterministicDominance(mean_order, family, gaps, method)
        if dom.is_deterministic or concave:
            log.warning("derandomized order failed to dominate (min gap %.3g)", gaps.min())
    dom_payoff = payoff_vector(dom, kernel, family)
    splits = 2
    while splits <= max_splits:
        pure, refined = purify_by_refinement(dom, family, splits)
        rk = _refined_kernel(kernel, refined, splits)
        value = payoff_vector(pure, rk, refined)
        loss = float(np.max(dom_payoff - value))
        if loss < result.t_star / 2:
            return DeterministicDominance(pure, refined, value - base, "purify", splits)
        splits *= 2
    raise RuntimeError(f"refinement budget exhausted at {max_splits} splits")


# --- rationalization -------------------------------------------------------------

@dataclass(frozen=True)
class VerificationReport:
    gap: float
    passed: bool
    order_value: float
    best_value: float
    tol: float


def verify_seu_optimal(order, belief, kernel: PayoffKernel, family: ModelFamily, tol: float = 1e-8) -> VerificationReport:
    """Gap between the best SEU value on the action grid under ``belief`` and the order's value.

    The best behavioral order is separable: a per-price argmax over the grid.
    The gap can be negative when the order uses better off-grid levels.
    """
    beta = as_belief(belief, family.n_states)
    pi = family.price_grid.weights
    own = float(beta @ payoff_vector(order, kernel, family))
    best = float(pi @ (kernel.W @ beta).max(axis=1))
    gap = best - own
    return VerificationReport(gap, gap <= tol, own, best, tol)


@dataclass(frozen=True)
class Rationalization:
    undominated: bool
    dominance: DominanceResult
    belief: np.ndarray | None = None
    verification: VerificationReport | None = None
    dominator: DeterministicDominance | None = None

    @property
    def verified(self) -> bool:
        if self.undominated:
            return self.verification is not None and self.verification.passed
        return self.dominator is not None and bool(np.all(self.dominator.state_gaps > 0))

    def to_dict(self) -> dict:
        out = {
            "undominated": self.undominated,
            "verified": self.verified,
            "t_star": self.dominance.t_star,
            "certificate_type": self.dominance.certificate_type,
        }
        if self.undominated:
            out["belief"] = self.belief.tolist()
            out["verification_gap"] = self.verification.gap
        else:
            out["dominator"] = order_to_dict(self.dominator.order)
            out["dominator_state_gaps"] = self.dominator.state_gaps.tolist()
        return out


def _require_deterministic(order) -> None:
    if isinstance(order, BehavioralOrder) and not order.is_deterministic:
        raise ValueError("rationalization needs a deterministic order")
    if isinstance(order, MixedOrder) and len(order.atoms) != 1:
        raise ValueError("rationalization needs a deterministic order")


def rationalize(order, kernel: PayoffKernel, family: ModelFamily, tol: float = 1e-8, eps_dom: float = EPS_DOM) -> Rationalization:
    """Belief making ``order`` SEU-optimal, or a deterministic order dominating it."""
    _require_deterministic(order)
    result = dominance_lp(order, kernel, family, eps_dom)
    if result.dominated:
        return Rationalization(False, result, dominator=deterministic_dominator(result, kernel, family))
    check = verify_seu_optimal(order, result.belief, kernel, family, tol)
    return Rationalization(True, result, result.belief, check)


def mixture_family(family: ModelFamily, Pi: np.ndarray) -> ModelFamily:
    """Model whose states are the beliefs in ``Pi`` (mixtures of the original densities)."""
    h = family.density @ Pi.T
    labels = tuple(f"pi{j}" for j in range(Pi.shape[0]))
    return ModelFamily(family.price_grid, family.value_grid, h, family.bounds, family.integrability_bound, labels)


@dataclass(frozen=True)
class RestrictedRationalization:
    premise_holds: bool
    dominance: DominanceResult
    weights: np.ndarray | None = None
    belief: np.ndarray | None = None
    verification: VerificationReport | None = None
    dominator: DeterministicDominance | None = None

    def to_dict(self) -> dict:
        out = {"premise_holds": self.premise_holds, "t_star": self.dominance.t_star}
        if self.premise_holds:
            out.update(weights=self.weights.tolist(), belief=self.belief.tolist(),
                       verification_gap=self.verification.gap, verified=self.verification.passed)
        else:
            out["dominator"] = order_to_dict(self.dominator.order)
        return out


def rationalize_restricted(
    order, Pi, kernel: PayoffKernel, family: ModelFamily, tol: float = 1e-8, eps_dom: float = EPS_DOM
) -> RestrictedRationalization:
    """Rationalizing belief inside the convex hull of ``Pi``.

    Members of ``Pi`` play the role of states: if no order beats ``order`` under
    every member, the dual weights over ``Pi`` average to the belief.
    """
    _require_deterministic(order)
    Pi = as_belief_set(Pi, family.n_states)
    fam_pi = mixture_family(family, Pi)
    if kernel.utility is not None:
        k_pi = payoff_kernel(fam_pi, kernel.utility, kernel.actions)
    else:
        k_pi = PayoffKernel(kernel.W @ Pi.T, kernel.actions, None)
    result = dominance_lp(order, k_pi, fam_pi, eps_dom)
    if result.dominated:
        return RestrictedRationalization(False, result, dominator=deterministic_dominator(result, k_pi, fam_pi))
    lam = result.belief
    beta = np.clip(lam @ Pi, 0.0, None)
    beta /= beta.sum()
    check = verify_seu_optimal(order, beta, kernel, family, tol)
    return RestrictedRationalization(True, result, lam, beta, check)


__all__ = [
    "EPS_DOM", "LRCurves", "lr_functions", "CutoffCertificate", "find_dominating_cutoff",
    "DominanceResult", "dominance_lp", "DeterministicDominance", "deterministic_dominator",
    "VerificationReport", "verify_seu_optimal", "Rationalization", "rationalize",
    "mixture_family", "RestrictedRationalization", "rationalize_restricted", "order_to_dict",
]
