"""Epigraph LP over row-stochastic behavioral orders.

    maximize t  s.t.  sum_{p,a} w_p kappa[p,a] G[p,a,k] - baseline[k] >= t  for all k
                      sum_a kappa[p,a] = 1,  kappa >= 0

Used for strict-dominance margins (k = states) and maxmin optima (k = priors).
The optimal dual multipliers on the ``k`` constraints form a probability vector.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

log = logging.getLogger(__name__)

_METHODS = ("highs", "highs-ds", "highs-ipm")


class LPError(RuntimeError):
    pass


@dataclass(frozen=True)
class MarginSolution:
    t: float
    kappa: np.ndarray
    dual: np.ndarray
    stats: dict = field(default_factory=dict)


def solve_margin_lp(G: np.ndarray, baseline: np.ndarray, weights: np.ndarray) -> MarginSolution:
    G = np.asarray(G, dtype=float)
    P, A, K = G.shape
    n = P * A
    scaled = (weights[:, None, None] * G).reshape(n, K)
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = sparse.hstack([sparse.csr_matrix(-scaled.T), sparse.csr_matrix(np.ones((K, 1)))], format="csr")
    b_ub = -np.asarray(baseline, dtype=float)
    rows = np.repeat(np.arange(P), A)
    A_eq = sparse.csr_matrix((np.ones(n), (rows, np.arange(n))), shape=(P, n + 1))
    b_eq = np.ones(P)
    bounds = [(0.0, None)] * n + [(None, None)]
    res = None
    for attempt, method in enumerate(_METHODS):
        rhs = b_ub if attempt < 2 else b_ub + 1e-13 * np.arange(K)
        res = linprog(c, A_ub=A_ub, b_ub=rhs, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method=method)
        if res.status == 0:
            break
        log.warning("LP attempt with %s failed (%s); retrying", method, res.message)
    if res is None or res.status != 0:
        raise LPError(f"margin LP failed: {res.message if res is not None else 'no solve'}")
    x = res.x
    kappa = x[:n].reshape(P, A)
    t = float(x[-1])
    dual = np.clip(-np.asarray(res.ineqlin.marginals, dtype=float), 0.0, None)
    total = dual.sum()
    dual = dual / total if total > 0 else np.full(K, 1.0 / K)
    achieved = scaled.T @ x[:n] - baseline
    slack = achieved - t
    best = (weights * np.max(G @ dual, axis=1)).sum() - dual @ baseline
    stats = {
        "method": method,
        "iterations": int(getattr(res, "nit", 0)),
        "primal_residual": float(max(0.0, -slack.min(), np.abs(kappa.sum(axis=1) - 1).max())),
        "complementary_slackness": float(abs(dual @ slack)),
        "dual_value": float(best),
        "duality_gap": float(abs(best - t)),
    }
    return MarginSolution(t, kappa, dual, stats)
