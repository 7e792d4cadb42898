"""SEU, maxmin and smooth-ambiguity evaluators and optimizers.

Also carries the closed-form demand functions for the two-value, known-price
setting (values in {-1, 1}, risk-neutral trader, at most one unit either way).
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._lp import solve_margin_lp
from .market_model import PROBABILITY_TOL, ModelFamily, PayoffKernel, as_belief, payoff_vector
from .orders import BehavioralOrder, LimitOrder

log = logging.getLogger(__name__)


# --- known-price demand --------------------------------------------------------

@dataclass(frozen=True)
class Demand:
    """Optimal demand set, always an interval ``[low, high]`` of positions."""

    low: float
    high: float

    @property
    def indifferent(self) -> bool:
        return self.low < self.high

    @property
    def unique(self) -> float | None:
        return None if self.indifferent else self.low

    def __contains__(self, x: float) -> bool:
        return self.low - 1e-15 <= x <= self.high + 1e-15

    def selection(self) -> float:
        """Element of smallest absolute value."""
        return float(min((self.low, self.high, 0.0) if 0.0 in self else (self.low, self.high), key=abs))


def seu_demand(p: float, beta: float) -> Demand:
    """Risk-neutral demand at price ``p`` when P(x = 1) = ``beta``."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    threshold = beta - (1.0 - beta)
    if p < threshold:
        return Demand(1.0, 1.0)
    if p > threshold:
        return Demand(-1.0, -1.0)
    return Demand(-1.0, 1.0)


def maxmin_demand(p: float, beta_lo: float, beta_hi: float) -> Demand:
    """Maxmin demand with belief set spanned by P(x = 1) in [beta_lo, beta_hi]."""
    if not 0.0 <= beta_lo < beta_hi <= 1.0:
        raise ValueError("need 0 <= beta_lo < beta_hi <= 1")
    buy_below = beta_lo - (1.0 - beta_lo)
    sell_above = beta_hi - (1.0 - beta_hi)
    if p < buy_below:
        return Demand(1.0, 1.0)
    if p == buy_below:
        return Demand(0.0, 1.0)
    if p < sell_above:
        return Demand(0.0, 0.0)
    if p == sell_above:
        return Demand(-1.0, 0.0)
    return Demand(-1.0, -1.0)


def smooth_demand_closed_form(p: float, alpha: float) -> float:
    """Smooth-ambiguity demand for beliefs 1/4, 3/4 with equal prior weight."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if p <= -0.5:
        return 1.0
    if p >= 0.5:
        return -1.0
    x = (math.log(0.5 - p) - math.log(0.5 + p)) / alpha
    return min(x, 1.0) if p <= 0 else max(x, -1.0)


def smooth_objective_known_price(x: float, p: float, alpha: float) -> float:
    """Two-belief smooth objective of buying ``x`` units at known price ``p``."""
    phi = PhiSpec("exponential", alpha)
    good = x * (0.25 * (-1 - p) + 0.75 * (1 - p))
    bad = x * (0.75 * (-1 - p) + 0.25 * (1 - p))
    return float(0.5 * phi(good) + 0.5 * phi(bad))


# --- ambiguity attitudes -------------------------------------------------------

@dataclass(frozen=True)
class PhiSpec:
    """``identity`` or ``exponential``: phi(v) = (1 - exp(-alpha v)) / (1 - exp(-alpha))."""

    kind: str = "identity"
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ("identity", "exponential"):
            raise ValueError(f"unknown phi kind {self.kind!r}")
        if self.kind == "exponential" and not self.alpha > 0:
            raise ValueError("exponential phi needs alpha > 0")

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "identity":
            return v
        with np.errstate(over="ignore"):
            return np.expm1(-self.alpha * v) / np.expm1(-self.alpha)


@dataclass(frozen=True)
class SecondOrderPrior:
    """Weights over a finite list of beliefs (rows of ``beliefs``)."""

    beliefs: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.beliefs, dtype=float))
        q = np.asarray(self.weights, dtype=float).reshape(-1)
        if B.shape[0] == 0:
            raise ValueError("second-order prior needs at least one belief")
        if q.shape != (B.shape[0],):
            raise ValueError("one prior weight per belief required")
        if np.any(q < 0) or abs(q.sum() - 1) > PROBABILITY_TOL:
            raise ValueError("prior weights must form a probability vector")
        for row in B:
            as_belief(row, B.shape[1])
        B.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "beliefs", B)
        object.__setattr__(self, "weights", q)

    def reduced(self) -> np.ndarray:
        return self.weights @ self.beliefs


def as_belief_set(Pi, n_states: int) -> np.ndarray:
    Pi = np.atleast_2d(np.asarray(Pi, dtype=float))
    if Pi.shape[0] == 0:
        raise ValueError("belief set must be nonempty")
    return np.stack([as_belief(row, n_states) for row in Pi])


# --- evaluators ----------------------------------------------------------------

def smooth_value(order, prior: SecondOrderPrior, phi: PhiSpec, kernel: PayoffKernel, family: ModelFamily) -> float:
    if prior.beliefs.shape[1] != family.n_states:
        raise ValueError("prior beliefs must range over the model's states")
    v = prior.beliefs @ payoff_vector(order, kernel, family)
    return float(prior.weights @ phi(v))


def maxmin_value(order, Pi, kernel: PayoffKernel, family: ModelFamily) -> float:
    Pi = as_belief_set(Pi, family.n_states)
    return float(np.min(Pi @ payoff_vector(order, kernel, family)))


# --- optimizers ----------------------------------------------------------------

def _tie_break_argmax(scores: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Per-row argmax; ties go to the smallest |action|, then the smallest action."""
    top = scores.max(axis=1, keepdims=True)
    tol = 1e-12 * max(1.0, float(np.abs(scores).max(initial=0.0)))
    tied = scores >= top - tol
    # actions pre-sorted by (|a|, a); first tied entry in that order wins
    order = np.lexsort((actions, np.abs(actions)))
    first = np.argmax(tied[:, order], axis=1)
    return order[first]


def seu_scores(belief, kernel: PayoffKernel, family: ModelFamily) -> np.ndarray:
    beta = as_belief(belief, family.n_states)
    return kernel.W @ beta


def optimize_seu(belief, kernel: PayoffKernel, family: ModelFamily) -> LimitOrder:
    """Per-price best response to ``belief``; optimal among all behavioral orders."""
    idx = _tie_break_argmax(seu_scores(belief, kernel, family), kernel.actions)
    return LimitOrder.from_grid_values(family.prices, kernel.actions[idx])


def optimize_maxmin(Pi, kernel: PayoffKernel, family: ModelFamily) -> tuple[BehavioralOrder, float]:
    """Maxmin-optimal behavioral order over the action grid, via the epigraph LP."""
    Pi = as_belief_set(Pi, family.n_states)
    G = kernel.W @ Pi.T  # (prices, actions, beliefs)
    sol = solve_margin_lp(G, np.zeros(Pi.shape[0]), family.price_grid.weights)
    order = BehavioralOrder.from_rows(family.prices, kernel.actions, sol.kappa)
    return order, sol.t


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, order: BehavioralOrder, grad_norm: float):
        super().__init__(message)
        self.order = order
        self.grad_norm = grad_norm


def _project_rows(Y: np.ndarray) -> np.ndarray:
    """Euclidean projection of every row onto the probability simplex."""
    n = Y.shape[1]
    U = -np.sort(-Y, axis=1)
    css = np.cumsum(U, axis=1) - 1.0
    ks = np.arange(1, n + 1)
    cond = U - css / ks > 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(Y.shape[0]), rho] / (rho + 1)
    return np.maximum(Y - theta[:, None], 0.0)


@dataclass(frozen=True)
class SmoothInfo:
    grad_norm: float
    iterations: int
    objective: float


def optimize_smooth(
    prior: SecondOrderPrior,
    phi: PhiSpec,
    kernel: PayoffKernel,
    family: ModelFamily,
    tol: float = 1e-7,
    max_iter: int = 100_000,
    return_info: bool = False,
):
    """Smooth-ambiguity optimum over behavioral orders by spectral projected gradient.

    The exponential objective is maximized in the equivalent form
    ``-log(sum_j q_j exp(-alpha V_j)) / alpha``, which has the same maximizers and
    stays finite for large ``alpha``. Gradients are taken per unit of price mass,
    so ``tol`` bounds the stationarity residual row by row.
    """
    if prior.beliefs.shape[1] != family.n_states:
        raise ValueError("prior beliefs must range over the model's states")
    w = kernel.W @ prior.beliefs.T  # (prices, actions, beliefs)
    pi = family.price_grid.weights
    q = prior.weights
    logq = np.log(np.where(q > 0, q, 1.0))

    def values(k):
        return np.einsum("p,pa,paj->j", pi, k, w)

    def objective(v):
        if phi.kind == "identity":
            return float(q @ v)
        z = np.where(q > 0, logq - phi.alpha * v, -np.inf)
        m = z.max()
        return float(-(m + np.log(np.exp(z - m).sum())) / phi.alpha)

    def grad(v):
        if phi.kind == "identity":
            s = q
        else:
            z = np.where(q > 0, logq - phi.alpha * v, -np.inf)
            s = np.exp(z - z.max())
            s /= s.sum()
        return w @ s  # per-unit-mass gradient, (prices, actions)

    P, A = pi.size, kernel.n_actions
    kappa = np.full((P, A), 1.0 / A)
    v = values(kappa)
    f = objective(v)
    g = grad(v)
    step = 1.0
    history = [f]
    best = (f, kappa)
    residual = np.inf
    for it in range(1, max_iter + 1):
        residual = float(np.abs(_project_rows(kappa + g) - kappa).max())
        if residual <= tol:
            break
        d = _project_rows(kappa + step * g) - kappa
        slope = float(np.einsum("p,pa,pa->", pi, g, d))
        ref = max(history[-10:])
        lam = 1.0
        while True:
            cand = kappa + lam * d
            v_new = values(cand)
            f_new = objective(v_new)
            if f_new >= ref + 1e-4 * lam * slope or lam < 1e-14:
                break
            lam *= 0.5
        g_new = grad(v_new)
        s_vec, y_vec = cand - kappa, g_new - g
        sy = -float(np.einsum("p,pa,pa->", pi, s_vec, y_vec))
        ss = float(np.einsum("p,pa,pa->", pi, s_vec, s_vec))
        step = min(max(ss / sy, 1e-10), 1e10) if sy > 0 else 1e10
        kappa, v, f, g = cand, v_new, f_new, g_new
        history.append(f)
        if f > best[0]:
            best = (f, kappa)
    else:
        order = BehavioralOrder.from_rows(family.prices, kernel.actions, best[1])
        raise ConvergenceError(
            f"projected gradient stopped after {max_iter} iterations (residual {residual:.3g})",
            order, residual,
        )
    order = BehavioralOrder.from_rows(family.prices, kernel.actions, kappa)
    value = smooth_value(order, prior, phi, kernel, family)
    log.debug("smooth optimum after %d iterations, residual %.3g", it, residual)
    if return_info:
        return order, value, SmoothInfo(residual, it, f)
    return order, value


# --- demand sweeps --------------------------------------------------------------

def demand_table(prices: Sequence[float], beta: float, beta_lo: float, beta_hi: float, alpha: float) -> list[dict]:
    """SEU / maxmin / smooth demand at each known price (set-valued demands use the selection)."""
    rows = []
    for p in prices:
        rows.append({
            "price": float(p),
            "seu": seu_demand(p, beta).selection(),
            "maxmin": maxmin_demand(p, beta_lo, beta_hi).selection(),
            "smooth": smooth_demand_closed_form(p, alpha),
        })
    return rows


def demand_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["price", "seu", "maxmin", "smooth"], lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: repr(float(r[k])) for k in writer.fieldnames})
    return buf.getvalue()
