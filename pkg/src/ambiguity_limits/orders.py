"""Deterministic, mixed and behavioral limit orders.

A ``LimitOrder`` is a right-continuous step function from prices to net
positions. Mixed orders randomize over whole limit orders; behavioral orders
randomize the action independently at each price node.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .market_model import Grid, ModelFamily, PayoffKernel, PROBABILITY_TOL, _frozen


@dataclass(frozen=True, eq=False)
class LimitOrder:
    """Step function: ``levels[0]`` below ``breakpoints[0]``, ``levels[i]`` on
    ``[breakpoints[i-1], breakpoints[i])``, ``levels[-1]`` from the last breakpoint on.
    """

    breakpoints: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        bp = _frozen(self.breakpoints).reshape(-1)
        lv = _frozen(self.levels).reshape(-1)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "levels", lv)
        if lv.size != bp.size + 1:
            raise ValueError("a limit order needs exactly one more level than breakpoints")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if not np.all(np.isfinite(lv)):
            raise ValueError("levels must be finite")

    def __eq__(self, other) -> bool:
        if not isinstance(other, LimitOrder):
            return NotImplemented
        return np.array_equal(self.breakpoints, other.breakpoints) and np.array_equal(self.levels, other.levels)

    def __hash__(self) -> int:
        return hash((self.breakpoints.tobytes(), self.levels.tobytes()))

    @classmethod
    def constant(cls, level: float) -> "LimitOrder":
        return cls(np.empty(0), np.array([float(level)]))

    @classmethod
    def from_grid_values(cls, prices: Sequence[float], actions: Sequence[float]) -> "LimitOrder":
        """Order taking ``actions[i]`` at ``prices[i]``; jumps sit halfway between nodes."""
        prices = np.asarray(prices, dtype=float)
        actions = np.asarray(actions, dtype=float)
        if prices.shape != actions.shape or prices.size == 0:
            raise ValueError("need one action per price node")
        change = np.flatnonzero(actions[1:] != actions[:-1]) + 1
        bp = 0.5 * (prices[change] + prices[change - 1])
        return cls(bp, np.concatenate([actions[:1], actions[change]]))

    def __call__(self, p):
        idx = np.searchsorted(self.breakpoints, np.asarray(p, dtype=float), side="right")
        return self.levels[idx]

    @property
    def n_intervals(self) -> int:
        return self.levels.size

    def canonical(self) -> "LimitOrder":
        """Same function with adjacent equal levels merged."""
        keep = np.flatnonzero(self.levels[1:] != self.levels[:-1])
        return LimitOrder(self.breakpoints[keep], np.concatenate([self.levels[:1], self.levels[keep + 1]]))

    def state_payoff_rows(self, kernel: PayoffKernel, family: ModelFamily) -> np.ndarray:
        return kernel.level_payoffs(self(family.prices), family)

    def to_dict(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "levels": self.levels.tolist()}

    @classmethod
    def from_dict(cls, d) -> "LimitOrder":
        return cls(np.asarray(d.get("breakpoints", []), float), np.asarray(d["levels"], float))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self, prices: Iterable[float]) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["price", "action"])
        prices = np.asarray(list(prices), dtype=float)
        for p, a in zip(prices, self(prices)):
            writer.writerow([repr(float(p)), repr(float(a))])
        return buf.getvalue()


def make_cutoff_order(v: float, high: float = 1.0, low: float = -1.0,
                      bounds: tuple[float, float] = (-1.0, 1.0)) -> LimitOrder:
    """``high`` strictly below ``v``, ``low`` at and above ``v``."""
    b, t = bounds
    for a in (high, low):
        if not b - 1e-12 <= a <= t + 1e-12:
            raise ValueError(f"action {a} outside bounds [{b}, {t}]")
    if high == low or v == -math.inf:
        return LimitOrder.constant(low)
    if v == math.inf:
        return LimitOrder.constant(high)
    return LimitOrder(np.array([float(v)]), np.array([float(high), float(low)]))


def load_order(path: str | Path) -> LimitOrder:
    return LimitOrder.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class MixedOrder:
    """Finite lottery over limit orders."""

    atoms: tuple[tuple[float, LimitOrder], ...]

    def __post_init__(self):
        atoms = tuple((float(w), l) for w, l in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not atoms:
            raise ValueError("mixed order needs at least one atom")
        weights = np.array([w for w, _ in atoms])
        if np.any(weights <= 0):
            raise ValueError("mixed order weights must be positive")
        if abs(weights.sum() - 1.0) > PROBABILITY_TOL:
            raise ValueError(f"mixed order weights sum to {weights.sum():.15g}, not 1")

    @classmethod
    def dirac(cls, order: LimitOrder) -> "MixedOrder":
        return cls(((1.0, order),))

    def state_payoff_rows(self, kernel: PayoffKernel, family: ModelFamily) -> np.ndarray:
        return sum(w * l.state_payoff_rows(kernel, family) for w, l in self.atoms)


@dataclass(frozen=True)
class BehavioralOrder:
    """Row ``p`` of ``probs`` is the action distribution at price node ``prices[p]``."""

    prices: np.ndarray
    actions: np.ndarray
    probs: np.ndarray
    snap_error: float = 0.0

    def __post_init__(self):
        prices, actions = _frozen(self.prices), _frozen(self.actions)
        probs = np.array(self.probs, dtype=float)
        if probs.shape != (prices.size, actions.size):
            raise ValueError(f"probs must have shape {(prices.size, actions.size)}, got {probs.shape}")
        if np.any(probs < -1e-12):
            raise ValueError("behavioral rows must be nonnegative")
        sums = probs.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > PROBABILITY_TOL):
            raise ValueError(f"behavioral rows must sum to 1 (worst {np.abs(sums - 1).max():.3g})")
        probs = np.clip(probs, 0.0, None)
        probs.setflags(write=False)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_limit_order(cls, order: LimitOrder, prices, actions) -> "BehavioralOrder":
        return mixed_to_behavioral(MixedOrder.dirac(order), np.asarray(prices, float), actions)

    @classmethod
    def from_rows(cls, prices, actions, probs, tol: float = 1e-9) -> "BehavioralOrder":
        """Build from solver output: clip tiny negatives and renormalize rows."""
        probs = np.clip(np.asarray(probs, dtype=float), 0.0, None)
        probs[probs < tol * 1e-3] = 0.0
        probs /= probs.sum(axis=1, keepdims=True)
        return cls(prices, actions, probs)

    @property
    def mean_actions(self) -> np.ndarray:
        return self.probs @ self.actions

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all(np.isclose(self.probs.max(axis=1), 1.0, rtol=0, atol=1e-12)))

    def state_payoff_rows(self, kernel: PayoffKernel, family: ModelFamily) -> np.ndarray:
        if self.prices.shape != family.prices.shape or not np.allclose(self.prices, family.prices, rtol=0, atol=1e-12):
            raise ValueError("behavioral order prices do not match the model's price grid")
        return kernel.behavioral_payoffs(self.actions, self.probs, family)


def _snap(levels: np.ndarray, actions: np.ndarray) -> tuple[np.ndarray, float]:
    idx = np.argmin(np.abs(levels[:, None] - actions[None, :]), axis=1)
    dist = np.abs(levels - actions[idx])
    # inside the grid the nearest node is always within half a step; outside, use the end step
    if actions.size > 1:
        lo_step, hi_step = actions[1] - actions[0], actions[-1] - actions[-2]
    else:
        lo_step = hi_step = 0.0
    allowed = np.where(levels < actions[0], 0.5 * lo_step,
                       np.where(levels > actions[-1], 0.5 * hi_step, np.inf))
    bad = dist > allowed + 1e-12
    if np.any(bad):
        worst = int(np.flatnonzero(bad)[0])
        raise ValueError(
            f"level {levels[worst]:.6g} is {dist[worst]:.3g} from the action grid "
            "(more than half a grid step)"
        )
    return idx, float(dist.max(initial=0.0))


def mixed_to_behavioral(mixed: MixedOrder | LimitOrder, price_grid: Grid | np.ndarray, actions) -> BehavioralOrder:
    """Per-price action distribution induced by a mixed order, snapped to ``actions``."""
    if isinstance(mixed, LimitOrder):
        mixed = MixedOrder.dirac(mixed)
    prices = price_grid.points if isinstance(price_grid, Grid) else np.asarray(price_grid, float)
    actions = np.asarray(actions, dtype=float)
    probs = np.zeros((prices.size, actions.size))
    rows = np.arange(prices.size)
    snap = 0.0
    for w, order in mixed.atoms:
        idx, d = _snap(order(prices), actions)
        snap = max(snap, d)
        np.add.at(probs, (rows, idx), w)
    return BehavioralOrder(prices, actions, probs, snap_error=snap)


def derandomize(behavioral: BehavioralOrder) -> LimitOrder:
    """Replace each price's action lottery by its mean action."""
    return LimitOrder.from_grid_values(behavioral.prices, behavioral.mean_actions)


def _apportion(row: np.ndarray, splits: int) -> np.ndarray:
    """Largest-remainder rounding of a probability row to multiples of 1/splits."""
    quota = row * splits
    counts = np.floor(quota + 1e-9).astype(int)
    remaining = splits - counts.sum()
    if remaining > 0:
        rem = quota - counts
        order = np.lexsort((np.arange(row.size), -rem))
        counts[order[:remaining]] += 1
    return counts


def refine_family(family: ModelFamily, splits: int, offset: float = 1e-10) -> ModelFamily:
    """Split every price node into ``splits`` sub-nodes with equal share of its weight.

    Sub-nodes sit at ``p + k * delta`` with ``delta`` a tiny fraction of the
    smallest price gap and carry the parent's density column unchanged.
    """
    if splits < 1:
        raise ValueError("splits must be at least 1")
    prices = family.prices
    gap = float(np.diff(prices).min()) if prices.size > 1 else 1.0
    delta = offset * gap / splits
    k = np.arange(splits)
    new_prices = (prices[:, None] + k[None, :] * delta).reshape(-1)
    new_weights = np.repeat(family.price_grid.weights / splits, splits)
    grid = Grid(new_prices, new_weights, probability=family.price_grid.probability)
    d = family.integrability_bound
    return ModelFamily(
        grid,
        family.value_grid,
        np.repeat(family.density, splits, axis=0),
        family.bounds,
        None if d is None else np.repeat(d, splits, axis=0),
        family.state_labels,
    )


def purify_by_refinement(behavioral: BehavioralOrder, family: ModelFamily, splits: int) -> tuple[LimitOrder, ModelFamily]:
    """Deterministic order on a refined price grid mimicking ``behavioral``.

    Row probabilities are rounded to multiples of ``1/splits``; the order is
    payoff-exact when they already are.
    """
    if splits < 1:
        raise ValueError("splits must be at least 1")
    refined = refine_family(family, splits)
    assigned = np.empty((behavioral.prices.size, splits))
    for p, row in enumerate(behavioral.probs):
        assigned[p] = np.repeat(behavioral.actions, _apportion(row, splits))
    return LimitOrder.from_grid_values(refined.prices, assigned.reshape(-1)), refined


def purification_error_bound(behavioral: BehavioralOrder, kernel: PayoffKernel, family: ModelFamily, splits: int) -> float:
    """Upper bound on the per-state payoff change caused by the rounding in purification."""
    rounded = np.array([_apportion(r, splits) for r in behavioral.probs]) / splits
    err = np.abs(rounded - behavioral.probs)
    W = kernel.W if kernel.matches(behavioral.actions) else None
    if W is None:
        raise ValueError("kernel action grid must match the behavioral order")
    return float(np.max(np.einsum("p,pa,pay->y", family.price_grid.weights, err, np.abs(W))))


def _values_at(order, prices: np.ndarray) -> np.ndarray:
    if isinstance(order, LimitOrder):
        return order(prices)
    values = np.asarray(order, dtype=float)
    if values.shape != prices.shape:
        raise ValueError("order values must align with the price grid")
    return values


def _check_probability(price_grid: Grid) -> np.ndarray:
    w = price_grid.weights
    if abs(w.sum() - 1.0) > PROBABILITY_TOL:
        raise ValueError(f"Ky Fan distance needs a probability grid (mass {w.sum():.15g})")
    return w


def ky_fan_distance(l, l2, price_grid: Grid) -> float:
    """``inf{eps > 0 : pi(|l - l2| > eps) <= eps}`` on a probability grid."""
    w = _check_probability(price_grid)
    prices = price_grid.points
    gap = np.abs(_values_at(l, prices) - _values_at(l2, prices))
    levels, inverse = np.unique(gap, return_inverse=True)
    mass = np.bincount(inverse, weights=w, minlength=levels.size)
    # descending distinct gaps g_1 > g_2 > ...; M_k = mass of {gap >= g_k}
    g = levels[::-1]
    tail = np.concatenate([[0.0], np.cumsum(mass[::-1])])
    nxt = np.concatenate([g[1:], [0.0]])
    candidates = np.concatenate([[g[0]], np.maximum(nxt, tail[1:])])
    return float(max(candidates.min(), 0.0))


def _runs(values: np.ndarray, weights: np.ndarray):
    change = np.flatnonzero(values[1:] != values[:-1]) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [values.size]])
    return starts, ends, values[starts], np.add.reduceat(weights, starts)


class _MissSolver:
    """Minimum pi-mass of runs left uncovered by ``k`` segments at window half-width eps."""

    def __init__(self, levels: np.ndarray, masses: np.ndarray, max_segments: int):
        self.levels = levels
        self.masses = masses
        self.K = max_segments
        R = levels.size
        self.cum = np.concatenate([[0.0], np.cumsum(masses)])
        self.seg_mass = self.cum[None, 1:] - self.cum[:-1, None]  # [i, j] = mass of runs i..j
        self.upper = np.triu(np.ones((R, R), dtype=bool))

    def solve(self, eps: float):
        a, m = self.levels, self.masses
        R = a.size
        inside = (a[None, :] >= a[:, None]) & (a[None, :] - a[:, None] <= 2 * eps + 1e-12)
        S = np.concatenate([np.zeros((R, 1)), np.cumsum(inside * m[None, :], axis=1)], axis=1)
        # cover[i, j] = max over windows of mass covered among runs i..j
        cover = np.zeros((R, R))
        for row in S:
            np.maximum(cover, row[None, 1:] - row[:-1, None], out=cover)
        cost = np.where(self.upper, self.seg_mass - cover, np.inf)
        best = cost[0].copy()
        back = [np.zeros(R, dtype=int)]
        results = [best.copy()]
        for _ in range(1, min(self.K, R)):
            prev = np.concatenate([[np.inf], results[-1][:-1]])  # prev[i] = best with runs < i covered
            total = prev[:, None] + cost
            arg = np.argmin(total, axis=0)
            results.append(total[arg, np.arange(R)])
            back.append(arg)
        finals = np.array([r[-1] for r in results])
        s = int(np.argmin(finals))
        return float(max(finals[s], 0.0)), (s, back)

    def segments(self, plan):
        s, back = plan
        R = self.levels.size
        segs, j = [], R - 1
        while s >= 0:
            i = int(back[s][j]) if s > 0 else 0
            segs.append((i, j))
            j = i - 1
            s -= 1
        return segs[::-1]


def simplify_order(l: LimitOrder, max_intervals: int, price_grid: Grid) -> tuple[LimitOrder, float]:
    """Order with at most ``max_intervals`` intervals closest to ``l`` in Ky Fan distance.

    Exact on the grid: segment boundaries are restricted to run boundaries of
    ``l`` and the threshold is located by bisection over half-gaps between levels.
    """
    if max_intervals < 1:
        raise ValueError("max_intervals must be at least 1")
    w = _check_probability(price_grid)
    if l.n_intervals <= max_intervals:
        return l, 0.0
    prices = price_grid.points
    values = l(prices)
    starts, ends, levels, masses = _runs(values, w)
    if levels.size <= max_intervals:
        return LimitOrder.from_grid_values(prices, values), 0.0
    solver = _MissSolver(levels, masses, max_intervals)
    half = np.unique(np.abs(levels[:, None] - levels[None, :]).ravel() / 2)
    lo, hi = 0, half.size - 1  # predicate miss(half[k]) <= half[k] holds at hi
    cache = {}

    def miss(k):
        if k not in cache:
            cache[k] = solver.solve(float(half[k]))
        return cache[k]

    while lo < hi:
        mid = (lo + hi) // 2
        if miss(mid)[0] <= half[mid]:
            hi = mid
        else:
            lo = mid + 1
    k_star = lo
    eps, plan = half[k_star], miss(k_star)[1]
    if k_star > 0 and miss(k_star - 1)[0] < half[k_star]:
        eps, plan = half[k_star - 1], miss(k_star - 1)[1]
    new_values = np.empty_like(values)
    for i, j in solver.segments(plan):
        seg = levels[i:j + 1]
        seg_mass = masses[i:j + 1]
        best_level, best_cov = seg[0], -1.0
        for anchor in np.unique(seg):
            hit = (seg >= anchor) & (seg - anchor <= 2 * eps + 1e-12)
            cov = seg_mass[hit].sum()
            if cov > best_cov + 1e-15:
                best_cov = cov
                best_level = 0.5 * (seg[hit].min() + seg[hit].max())
        new_values[starts[i]:ends[j]] = best_level
    simple = LimitOrder.from_grid_values(prices, new_values)
    return simple, ky_fan_distance(simple, l, price_grid)


def random_step_order(rng: np.random.Generator, prices: np.ndarray, n_intervals: int, actions) -> LimitOrder:
    """Random order with ``n_intervals`` pieces on the price grid, levels drawn from ``actions``."""
    actions = np.asarray(actions, dtype=float)
    n_intervals = min(n_intervals, prices.size)
    cuts = np.sort(rng.choice(np.arange(1, prices.size), size=n_intervals - 1, replace=False)) if n_intervals > 1 else np.array([], int)
    levels = [rng.choice(actions)]
    for _ in cuts:
        levels.append(rng.choice(actions[actions != levels[-1]]) if actions.size > 1 else levels[-1])
    values = np.empty(prices.size)
    bounds = np.concatenate([[0], cuts, [prices.size]])
    for lv, (s, e) in zip(levels, zip(bounds[:-1], bounds[1:])):
        values[s:e] = lv
    return LimitOrder.from_grid_values(prices, values)


def interval_count_on(l: LimitOrder, prices: np.ndarray) -> int:
    """Number of constant pieces of ``l`` as seen by the grid."""
    v = l(prices)
    return int(1 + np.count_nonzero(v[1:] != v[:-1]))


__all__ = [
    "LimitOrder", "MixedOrder", "BehavioralOrder", "make_cutoff_order", "load_order",
    "mixed_to_behavioral", "derandomize", "refine_family", "purify_by_refinement",
    "purification_error_bound", "ky_fan_distance", "simplify_order", "random_step_order",
    "interval_count_on",
]
