"""Discretized price/value environment, Bernoulli utilities and payoff kernels.

A model is a finite family of joint densities ``h[p, x, y]`` over a price grid
(measure ``pi``) and a value grid (measure ``xi``), one density per state ``y``.
All integrals are exact sums over grid nodes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import stats

NORMALIZATION_TOL = 1e-9
RENORMALIZE_TOL = 1e-6
PROBABILITY_TOL = 1e-12
_EXP_CAP = 700.0


def _frozen(arr: Any, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Grid:
    """Finite support points with nonnegative weights."""

    points: np.ndarray
    weights: np.ndarray
    probability: bool = False

    def __post_init__(self):
        pts = _frozen(self.points)
        wts = _frozen(self.weights)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)
        if pts.ndim != 1 or wts.shape != pts.shape:
            raise ValueError(
                f"grid points and weights must be 1-d of equal length, got {pts.shape} and {wts.shape}"
            )
        if pts.size == 0:
            raise ValueError("grid must have at least one point")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        if np.any(wts < 0) or not np.all(np.isfinite(wts)):
            raise ValueError("grid weights must be finite and nonnegative")
        if self.probability and abs(wts.sum() - 1.0) > PROBABILITY_TOL:
            raise ValueError(f"probability grid weights sum to {wts.sum():.15g}, not 1")

    def __len__(self) -> int:
        return self.points.size

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def cell_edges(self) -> np.ndarray:
        """Edges of the cells around each node (midpoints, ends mirrored)."""
        pts = self.points
        if pts.size == 1:
            return np.array([pts[0] - 0.5, pts[0] + 0.5])
        mids = 0.5 * (pts[1:] + pts[:-1])
        lo = pts[0] - (mids[0] - pts[0])
        hi = pts[-1] + (pts[-1] - mids[-1])
        return np.concatenate([[lo], mids, [hi]])

    @classmethod
    def uniform(cls, low: float, high: float, n: int) -> "Grid":
        """Midpoint grid of ``n`` equal cells on [low, high], weights 1/n."""
        if n < 1 or not high > low:
            raise ValueError("uniform grid needs n >= 1 and high > low")
        edges = np.linspace(low, high, n + 1)
        return cls(0.5 * (edges[1:] + edges[:-1]), np.full(n, 1.0 / n), probability=True)

    @classmethod
    def point_masses(cls, points: Sequence[float], weights: Sequence[float] | None = None) -> "Grid":
        points = np.asarray(points, dtype=float)
        if weights is None:
            weights = np.ones_like(points)
        return cls(points, weights)


@dataclass(frozen=True)
class UtilitySpec:
    """Increasing Bernoulli utility normalized to ``u(0) = 0`` (before ``shift``).

    ``kind`` is ``"linear"``, ``"exponential"`` (``u(m) = (1 - exp(-a m)) / a``)
    or ``"piecewise"`` (slopes between sorted ``knots``, one more slope than knots).
    ``scale`` and ``shift`` apply the affine map ``scale * u + shift``.
    """

    kind: str = "linear"
    a: float = 1.0
    knots: tuple[float, ...] = ()
    slopes: tuple[float, ...] = ()
    scale: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if self.kind not in ("linear", "exponential", "piecewise"):
            raise ValueError(f"unknown utility kind {self.kind!r}")
        if self.kind == "exponential" and not self.a > 0:
            raise ValueError("exponential utility needs a > 0")
        if self.kind == "piecewise":
            object.__setattr__(self, "knots", tuple(float(k) for k in self.knots))
            object.__setattr__(self, "slopes", tuple(float(s) for s in self.slopes))
            if len(self.slopes) != len(self.knots) + 1:
                raise ValueError("piecewise utility needs len(slopes) == len(knots) + 1")
            if any(s <= 0 for s in self.slopes):
                raise ValueError("piecewise utility slopes must be positive")
            if any(np.diff(self.knots) <= 0):
                raise ValueError("piecewise utility knots must be strictly increasing")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @classmethod
    def linear(cls) -> "UtilitySpec":
        return cls("linear")

    @classmethod
    def exponential(cls, a: float) -> "UtilitySpec":
        return cls("exponential", a=a)

    @classmethod
    def piecewise(cls, knots: Sequence[float], slopes: Sequence[float]) -> "UtilitySpec":
        return cls("piecewise", knots=tuple(knots), slopes=tuple(slopes))

    def affine(self, scale: float, shift: float = 0.0) -> "UtilitySpec":
        return UtilitySpec(
            self.kind, self.a, self.knots, self.slopes,
            scale=self.scale * scale, shift=self.shift * scale + shift,
        )

    @property
    def is_linear(self) -> bool:
        return self.kind == "linear" or (self.kind == "piecewise" and len(set(self.slopes)) == 1)

    @property
    def is_concave(self) -> bool:
        if self.kind == "piecewise":
            return all(np.diff(self.slopes) <= 0)
        return True

    def _base(self, m: np.ndarray) -> np.ndarray:
        if self.kind == "linear":
            return m
        if self.kind == "exponential":
            # past the float64 overflow point continue along the tangent: still finite, increasing, concave
            z = -self.a * m
            zc = np.minimum(z, _EXP_CAP)
            return -(np.expm1(zc) + np.exp(zc) * (z - zc)) / self.a
        knots = np.asarray(self.knots)
        slopes = np.asarray(self.slopes)
        # u(m) = integral of the slope from 0 to m
        nodes = np.unique(np.concatenate([knots, [0.0]]))
        seg_slopes = slopes[np.searchsorted(knots, 0.5 * (nodes[1:] + nodes[:-1]), side="right")]
        values = np.concatenate([[0.0], np.cumsum(seg_slopes * np.diff(nodes))])
        values -= values[np.searchsorted(nodes, 0.0)]
        out = np.interp(m, nodes, values)
        out = np.where(m < nodes[0], values[0] + slopes[0] * (m - nodes[0]), out)
        return np.where(m > nodes[-1], values[-1] + slopes[-1] * (m - nodes[-1]), out)

    def __call__(self, m):
        m = np.asarray(m, dtype=float)
        return self.scale * self._base(m) + self.shift

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind}
        if self.kind == "exponential":
            out["a"] = self.a
        if self.kind == "piecewise":
            out["knots"] = list(self.knots)
            out["slopes"] = list(self.slopes)
        if self.scale != 1.0 or self.shift != 0.0:
            out["scale"], out["shift"] = self.scale, self.shift
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "UtilitySpec":
        return cls(
            d.get("kind", "linear"), a=d.get("a", 1.0),
            knots=tuple(d.get("knots", ())), slopes=tuple(d.get("slopes", ())),
            scale=d.get("scale", 1.0), shift=d.get("shift", 0.0),
        )


@dataclass(frozen=True)
class ModelFamily:
    """Finite family of joint price/value densities, one per state.

    ``density[p, x, y]`` is a density with respect to ``price_grid.weights[p] *
    value_grid.weights[x]``; every state integrates to one.
    """

    price_grid: Grid
    value_grid: Grid
    density: np.ndarray
    bounds: tuple[float, float] = (-1.0, 1.0)
    integrability_bound: np.ndarray | None = None
    state_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        h = _frozen(self.density)
        object.__setattr__(self, "density", h)
        b, t = (float(v) for v in self.bounds)
        object.__setattr__(self, "bounds", (b, t))
        if not b < 0 < t:
            raise ValueError(f"action bounds must satisfy b < 0 < t, got ({b}, {t})")
        expected = (len(self.price_grid), len(self.value_grid))
        if h.ndim != 3 or h.shape[:2] != expected:
            raise ValueError(f"density must have shape {expected} + (n_states,), got {h.shape}")
        if h.shape[2] < 1:
            raise ValueError("model needs at least one state")
        if np.any(h < 0) or not np.all(np.isfinite(h)):
            raise ValueError("density must be finite and nonnegative")
        totals = self.state_masses()
        bad = np.flatnonzero(np.abs(totals - 1.0) > NORMALIZATION_TOL)
        if bad.size:
            raise ValueError(f"states {bad.tolist()} are not normalized (masses {totals[bad].tolist()})")
        if self.integrability_bound is not None:
            d = _frozen(self.integrability_bound)
            if d.shape != expected:
                raise ValueError(f"integrability bound must have shape {expected}")
            object.__setattr__(self, "integrability_bound", d)
        if self.state_labels is not None:
            labels = tuple(str(s) for s in self.state_labels)
            if len(labels) != self.n_states:
                raise ValueError("one state label per state required")
            object.__setattr__(self, "state_labels", labels)

    @property
    def n_prices(self) -> int:
        return len(self.price_grid)

    @property
    def n_states(self) -> int:
        return self.density.shape[2]

    @property
    def prices(self) -> np.ndarray:
        return self.price_grid.points

    def state_masses(self) -> np.ndarray:
        pi, xi = self.price_grid.weights, self.value_grid.weights
        return np.einsum("p,x,pxy->y", pi, xi, self.density)

    def conditional_mean_values(self) -> np.ndarray:
        """E[x | p, y] as a (prices, states) array; nan where a price has no mass."""
        xi, x = self.value_grid.weights, self.value_grid.points
        mass = np.einsum("x,pxy->py", xi, self.density)
        first = np.einsum("x,x,pxy->py", xi, x, self.density)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(mass > 0, first / np.where(mass > 0, mass, 1.0), np.nan)

    def check_actions(self, actions: np.ndarray, tol: float = 1e-12) -> None:
        b, t = self.bounds
        actions = np.asarray(actions, dtype=float)
        if actions.size and (actions.min() < b - tol or actions.max() > t + tol):
            raise ValueError(
                f"actions [{actions.min():.6g}, {actions.max():.6g}] outside bounds [{b}, {t}]"
            )


def action_grid(bounds: tuple[float, float], n: int) -> np.ndarray:
    """Odd-sized action grid on [b, t] containing 0, uniform on each side of 0."""
    if n < 1 or n % 2 == 0:
        raise ValueError("action grid size must be odd and positive")
    if n == 1:
        return np.zeros(1)
    b, t = bounds
    k = (n - 1) // 2
    return np.concatenate([np.linspace(b, 0.0, k + 1)[:-1], [0.0], np.linspace(0.0, t, k + 1)[1:]])


@dataclass(frozen=True)
class PayoffKernel:
    """``W[p, a, y] = sum_x u(a (x - p)) h[p, x, y] xi_x`` on an action grid.

    Kernels built from a table (no ``utility``) evaluate off-grid actions by
    linear interpolation along the action axis.
    """

    W: np.ndarray
    actions: np.ndarray
    utility: UtilitySpec | None = None

    def __post_init__(self):
        W = _frozen(self.W)
        acts = _frozen(self.actions)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "actions", acts)
        if W.ndim != 3 or W.shape[1] != acts.size:
            raise ValueError("W must be (prices, actions, states) matching the action grid")
        if np.any(np.diff(acts) <= 0):
            raise ValueError("action grid must be strictly increasing")
        if not np.all(np.isfinite(W)):
            raise ValueError("payoff kernel has non-finite entries")

    @property
    def n_actions(self) -> int:
        return self.actions.size

    @classmethod
    def from_table(cls, W, actions) -> "PayoffKernel":
        return cls(np.asarray(W, dtype=float), np.asarray(actions, dtype=float), None)

    def matches(self, actions: np.ndarray) -> bool:
        return actions.shape == self.actions.shape and np.allclose(actions, self.actions, rtol=0, atol=1e-12)

    def level_payoffs(self, levels: np.ndarray, family: ModelFamily) -> np.ndarray:
        """Per-price, per-state payoff (before pi-weighting) of a deterministic action per price."""
        levels = np.asarray(levels, dtype=float)
        family.check_actions(levels)
        if self.utility is not None:
            return _level_payoffs(family, self.utility, levels)
        out = np.empty((levels.size, self.W.shape[2]))
        for p, a in enumerate(levels):
            for y in range(self.W.shape[2]):
                out[p, y] = np.interp(a, self.actions, self.W[p, :, y])
        return out

    def behavioral_payoffs(self, actions: np.ndarray, probs: np.ndarray, family: ModelFamily) -> np.ndarray:
        family.check_actions(actions)
        if self.matches(actions):
            W = self.W
        elif self.utility is not None:
            W = payoff_kernel(family, self.utility, actions).W
        else:
            raise ValueError("behavioral order actions do not match the tabulated kernel")
        return np.einsum("pa,pay->py", probs, W)


def _level_payoffs(family: ModelFamily, utility: UtilitySpec, levels: np.ndarray) -> np.ndarray:
    x, xi = family.value_grid.points, family.value_grid.weights
    gains = levels[:, None] * (x[None, :] - family.prices[:, None])
    return np.einsum("px,x,pxy->py", utility(gains), xi, family.density)


def payoff_kernel(family: ModelFamily, utility: UtilitySpec, actions) -> PayoffKernel:
    actions = np.asarray(actions, dtype=float)
    family.check_actions(actions)
    x, xi = family.value_grid.points, family.value_grid.weights
    gains = actions[None, :, None] * (x[None, None, :] - family.prices[:, None, None])
    W = np.einsum("pax,x,pxy->pay", utility(gains), xi, family.density)
    return PayoffKernel(W, actions, utility)


def payoff_vector(order, kernel: PayoffKernel, family: ModelFamily) -> np.ndarray:
    """Expected payoff of ``order`` in every state, as a length-``n_states`` array."""
    rows = order.state_payoff_rows(kernel, family)
    return family.price_grid.weights @ rows


def expected_payoff(order, y: int, kernel: PayoffKernel, family: ModelFamily) -> float:
    if not 0 <= y < family.n_states:
        raise IndexError(f"state {y} out of range")
    return float(payoff_vector(order, kernel, family)[y])


def as_belief(beta, n_states: int) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (n_states,):
        raise ValueError(f"belief must have {n_states} weights, got shape {beta.shape}")
    if np.any(beta < -PROBABILITY_TOL) or abs(beta.sum() - 1.0) > PROBABILITY_TOL:
        raise ValueError(f"belief is not a probability vector (sum {beta.sum():.15g})")
    return np.clip(beta, 0.0, None)


def seu_value(order, belief, kernel: PayoffKernel, family: ModelFamily) -> float:
    beta = as_belief(belief, family.n_states)
    return float(beta @ payoff_vector(order, kernel, family))


@dataclass(frozen=True)
class IntegrabilityReport:
    max_lhs: float
    minimal_bound: np.ndarray
    violations: int
    max_violation: float = 0.0
    extra: dict = field(default_factory=dict)


def validate_integrability(family: ModelFamily, utility: UtilitySpec, tol: float = 1e-12) -> IntegrabilityReport:
    """Evaluate ``|u(t(x - p))| h + |u(b(x - p))| h`` over the grid.

    The minimal valid bound is its max over states; violations are counted
    against ``family.integrability_bound`` when one is present.
    """
    b, t = family.bounds
    diff = family.value_grid.points[None, :] - family.prices[:, None]
    weight = np.abs(utility(t * diff)) + np.abs(utility(b * diff))
    lhs = weight[:, :, None] * family.density
    minimal = lhs.max(axis=2)
    violations, worst = 0, 0.0
    if family.integrability_bound is not None:
        excess = lhs - family.integrability_bound[:, :, None]
        violations = int(np.count_nonzero(excess > tol))
        worst = float(max(excess.max(), 0.0))
    return IntegrabilityReport(float(lhs.max()), minimal, violations, worst)


# --- declarative model specs -------------------------------------------------

def _grid_from_spec(spec: Mapping[str, Any], name: str) -> Grid:
    if "uniform" in spec:
        u = spec["uniform"]
        return Grid.uniform(u["low"], u["high"], int(u["n"]))
    if "linspace" in spec:
        u = spec["linspace"]
        n = int(u["n"])
        pts = np.linspace(u["low"], u["high"], n)
        if u.get("rule", "trapezoid") == "trapezoid":
            step = (u["high"] - u["low"]) / (n - 1)
            wts = np.full(n, step)
            wts[[0, -1]] *= 0.5
        else:
            wts = np.ones(n)
        return Grid(pts, wts)
    if "points" in spec:
        pts = spec["points"]
        wts = spec.get("weights", [1.0] * len(pts))
        if len(wts) != len(pts):
            raise ValueError(f"{name}: grid length mismatch ({len(pts)} points, {len(wts)} weights)")
        return Grid(pts, wts)
    raise ValueError(f"{name}: grid needs 'points', 'uniform' or 'linspace'")


def _state_density(state: Mapping[str, Any], prices: Grid, values: Grid, idx: int) -> np.ndarray:
    pi, xi = prices.weights, values.weights
    P, X = len(prices), len(values)
    if "density" in state:
        h = np.asarray(state["density"], dtype=float)
        if h.shape != (P, X):
            raise ValueError(f"states[{idx}].density: expected shape {(P, X)}, got {h.shape}")
        renormalize = False
    elif "value_probs" in state:
        q = np.asarray(state["value_probs"], dtype=float)
        if q.shape != (X,):
            raise ValueError(f"states[{idx}].value_probs: expected {X} entries, got {q.shape}")
        if np.any((q > 0) & (xi == 0)):
            raise ValueError(f"states[{idx}]: positive probability on a zero-weight value node")
        # price-independent conditional value distribution
        h = np.tile(np.divide(q, xi, out=np.zeros(X), where=xi > 0), (P, 1)) / pi.sum()
        renormalize = False
    elif state.get("family") == "bivariate_normal":
        mean = np.asarray(state.get("mean", [0.0, 0.0]), dtype=float)
        cov = np.asarray(state.get("cov", [[1.0, 0.0], [0.0, 1.0]]), dtype=float)
        pp, xx = np.meshgrid(prices.points, values.points, indexing="ij")
        h = stats.multivariate_normal(mean, cov).pdf(np.stack([pp, xx], axis=-1)).reshape(P, X)
        renormalize = True
    else:
        raise ValueError(f"states[{idx}]: need 'density', 'value_probs' or a known 'family'")
    if np.any(h < 0):
        raise ValueError(f"states[{idx}]: negative density")
    mass = float(pi @ h @ xi)
    if mass <= 0:
        raise ValueError(f"states[{idx}]: density has zero mass and cannot be normalized")
    if not renormalize and abs(mass - 1.0) > RENORMALIZE_TOL:
        raise ValueError(f"states[{idx}]: density integrates to {mass:.9g}, not 1")
    return h / mass


def build_model(spec: Mapping[str, Any]) -> ModelFamily:
    """Materialize a ``ModelFamily`` from a declarative (JSON-like) description."""
    prices = _grid_from_spec(spec["prices"], "prices")
    values = _grid_from_spec(spec["values"], "values")
    bounds = tuple(spec.get("bounds", (-1.0, 1.0)))
    if len(bounds) != 2:
        raise ValueError("bounds must be [b, t]")
    if not bounds[0] < 0 < bounds[1]:
        raise ValueError(f"bounds must satisfy b < 0 < t, got {list(bounds)}")
    states = spec["states"]
    if not states:
        raise ValueError("model needs at least one state")
    h = np.stack([_state_density(s, prices, values, i) for i, s in enumerate(states)], axis=2)
    labels = tuple(s.get("label", f"y{i}") for i, s in enumerate(states))
    d = spec.get("integrability_bound")
    return ModelFamily(prices, values, h, bounds, None if d is None else np.asarray(d, float), labels)


def load_model(path: str | Path) -> ModelFamily:
    from .schemas import validate_document

    doc = json.loads(Path(path).read_text())
    validate_document(doc, "model")
    return build_model(doc)


# --- standard instances --------------------------------------------------------

def uninformative_family(
    n_prices: int = 200,
    value_probs: Sequence[float] = (0.25, 0.75),
    price_range: tuple[float, float] = (-1.0, 1.0),
) -> ModelFamily:
    """Prices uniform on ``price_range``, values in {-1, 1}, P(x = 1) per state, price-independent."""
    spec = {
        "prices": {"uniform": {"low": price_range[0], "high": price_range[1], "n": n_prices}},
        "values": {"points": [-1.0, 1.0]},
        "bounds": [-1.0, 1.0],
        "states": [{"label": f"P(x=1)={q:g}", "value_probs": [1.0 - q, q]} for q in value_probs],
    }
    return build_model(spec)


def single_price_family(price: float, value_probs: Sequence[float] = (0.25, 0.75)) -> ModelFamily:
    """One known price, values in {-1, 1}."""
    spec = {
        "prices": {"points": [price], "weights": [1.0]},
        "values": {"points": [-1.0, 1.0]},
        "bounds": [-1.0, 1.0],
        "states": [{"label": f"P(x=1)={q:g}", "value_probs": [1.0 - q, q]} for q in value_probs],
    }
    return build_model(spec)
