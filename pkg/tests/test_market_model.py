import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from ambiguity_limits.market_model import (
    Grid,
    ModelFamily,
    PayoffKernel,
    UtilitySpec,
    action_grid,
    as_belief,
    build_model,
    expected_payoff,
    load_model,
    payoff_kernel,
    payoff_vector,
    seu_value,
    single_price_family,
    uninformative_family,
    validate_integrability,
)
from ambiguity_limits.orders import BehavioralOrder, LimitOrder, make_cutoff_order
from ambiguity_limits.schemas import ConfigError

MIMIC = LimitOrder(np.array([-0.5, 0.5]), np.array([1.0, 0.0, -1.0]))


# --- grids -----------------------------------------------------------------------

def test_grid_rejects_unsorted_and_negative():
    with pytest.raises(ValueError):
        Grid([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        Grid([0.0, 1.0], [1.0, -0.1])
    with pytest.raises(ValueError):
        Grid([0.0, 1.0], [0.5, 0.6], probability=True)


def test_uniform_grid_is_midpoint_rule():
    g = Grid.uniform(-1, 1, 4)
    assert np.allclose(g.points, [-0.75, -0.25, 0.25, 0.75])
    assert np.allclose(g.weights, 0.25)
    assert np.allclose(g.cell_edges(), [-1, -0.5, 0, 0.5, 1])


# --- utilities -------------------------------------------------------------------

@pytest.mark.parametrize("u", [UtilitySpec.linear(), UtilitySpec.exponential(1.3),
                               UtilitySpec.piecewise([0.0], [2.0, 1.0])])
def test_utility_vanishes_at_zero_and_increases(u):
    assert u(0.0) == 0.0
    m = np.linspace(-5, 5, 101)
    assert np.all(np.diff(u(m)) > 0)
    far = u(np.array([-1e4, -700.0, 700.0, 1e4]))
    assert np.all(np.isfinite(far)) and np.all(np.diff(far) >= 0)


def test_exponential_utility_concave_on_random_pairs(rng):
    u = UtilitySpec.exponential(0.8)
    a, b = rng.uniform(-10, 10, size=(2, 1000))
    assert np.all(u((a + b) / 2) >= (u(a) + u(b)) / 2 - 1e-12)
    assert u.is_concave and not u.is_linear


def test_utility_roundtrips_through_dict():
    for u in (UtilitySpec.exponential(2.0), UtilitySpec.piecewise([-1.0, 1.0], [3.0, 2.0, 1.0]).affine(2.0, 0.5)):
        assert UtilitySpec.from_dict(u.to_dict()) == u


# --- model families --------------------------------------------------------------

def test_two_value_family_is_price_independent():
    fam = uninformative_family(50)
    assert np.allclose(fam.density, fam.density[:1])
    assert np.allclose(fam.state_masses(), 1.0, atol=1e-12)
    assert np.allclose(fam.conditional_mean_values(), [[-0.5, 0.5]] * 50)


def test_point_mass_value_single_state():
    fam = build_model({"prices": {"points": [-1.0, 0.0, 2.0], "weights": [0.2, 0.3, 0.5]},
                       "values": {"points": [0.0]},
                       "states": [{"value_probs": [1.0]}]})
    assert fam.n_states == 1
    assert abs(fam.state_masses()[0] - 1.0) <= 1e-12


def test_bivariate_normal_states_normalized_and_match_regression_line():
    cov = [[0.3, 0.1], [0.1, 0.4]]
    means = [(0.0, 0.0), (0.0, 0.2), (0.1, 0.1)]
    spec = {"prices": {"linspace": {"low": -1.0, "high": 1.0, "n": 41}},
            "values": {"linspace": {"low": -5.0, "high": 5.0, "n": 2001}},
            "states": [{"family": "bivariate_normal", "mean": list(m), "cov": cov} for m in means]}
    fam = build_model(spec)
    assert np.allclose(fam.state_masses(), 1.0, atol=1e-9)
    # conditional mean of a bivariate normal: mu_x + cov_px / var_p * (p - mu_p)
    cm = fam.conditional_mean_values()
    for y, (mp, mx) in enumerate(means):
        oracle = mx + cov[0][1] / cov[0][0] * (fam.prices - mp)
        assert np.max(np.abs(cm[:, y] - oracle)) < 1e-6


def test_bivariate_normal_price_marginal_matches_scipy():
    spec = {"prices": {"uniform": {"low": -3.0, "high": 3.0, "n": 3000}},
            "values": {"linspace": {"low": -6.0, "high": 6.0, "n": 1201}},
            "states": [{"family": "bivariate_normal", "mean": [0.0, 0.0], "cov": [[1.0, 0.5], [0.5, 1.0]]}]}
    fam = build_model(spec)
    marg = np.einsum("x,px->p", fam.value_grid.weights, fam.density[:, :, 0])
    # uniform price weights are dp / 6; renormalization divides by the mass captured on [-3, 3]
    captured = stats.norm.cdf(3) - stats.norm.cdf(-3)
    assert np.max(np.abs(marg - 6.0 * stats.norm.pdf(fam.prices) / captured)) < 1e-5


def test_build_model_errors():
    base = {"prices": {"points": [0.0, 1.0]}, "values": {"points": [-1.0, 1.0]}}
    with pytest.raises(ValueError, match="not 1"):
        build_model({**base, "states": [{"density": [[0.5, 0.5], [0.5, 0.6]]}]})
    with pytest.raises(ValueError, match="zero mass"):
        build_model({**base, "states": [{"density": [[0.0, 0.0], [0.0, 0.0]]}]})
    with pytest.raises(ValueError, match="b < 0 < t"):
        build_model({**base, "bounds": [0.0, 1.0], "states": [{"value_probs": [0.5, 0.5]}]})
    with pytest.raises(ValueError, match="length mismatch"):
        build_model({"prices": {"points": [0.0, 1.0], "weights": [1.0]}, "values": base["values"],
                     "states": [{"value_probs": [0.5, 0.5]}]})


def test_density_renormalized_within_tolerance():
    fam = build_model({"prices": {"points": [0.0, 1.0]}, "values": {"points": [-1.0, 1.0]},
                       "states": [{"density": [[0.25, 0.25], [0.25, 0.2500004]]}]})
    assert abs(fam.state_masses()[0] - 1.0) <= 1e-12


def test_unnormalized_family_rejected():
    with pytest.raises(ValueError, match="not normalized"):
        ModelFamily(Grid([0.0], [1.0]), Grid([0.0], [1.0]), np.full((1, 1, 1), 0.9))


def test_load_model_reports_schema_location(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"prices": {"points": [0.0]}, "values": {"points": [0.0]},
                                "states": [{"value_probs": ["a"]}]}))
    with pytest.raises(ConfigError, match=r"\$\.states\[0\]\.value_probs\[0\]"):
        load_model(path)


def test_load_model_valid(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"prices": {"uniform": {"low": -1, "high": 1, "n": 10}},
                                "values": {"points": [-1, 1]},
                                "states": [{"value_probs": [0.5, 0.5]}]}))
    assert load_model(path).n_prices == 10


# --- action grid and kernel ------------------------------------------------------

@given(st.floats(-3, -0.1), st.floats(0.1, 3), st.integers(0, 6))
def test_action_grid_odd_and_contains_zero(b, t, k):
    a = action_grid((b, t), 2 * k + 1)
    assert a.size == 2 * k + 1 and 0.0 in a
    assert np.all(np.diff(a) > 0)
    if k:
        assert a[0] == b and a[-1] == t


def test_action_grid_rejects_even():
    with pytest.raises(ValueError):
        action_grid((-1, 1), 4)


def test_linear_kernel_scales_with_action(two_value):
    fam, _ = two_value
    acts = action_grid(fam.bounds, 9)
    W = payoff_kernel(fam, UtilitySpec.linear(), acts).W
    unit = payoff_kernel(fam, UtilitySpec.linear(), [1.0]).W[:, 0, :]
    assert np.allclose(W, acts[None, :, None] * unit[:, None, :], atol=1e-14)


def test_tabulated_kernel_interpolates_levels():
    fam = single_price_family(0.0)
    W = np.array([[[0.1, 0.2], [0.0, 0.0], [0.3, -0.5]]])
    k = PayoffKernel.from_table(W, [-1, 0, 1])
    assert np.allclose(k.level_payoffs(np.array([0.5]), fam), [[0.15, -0.25]])


def test_action_outside_bounds_rejected(two_value):
    fam, kernel = two_value
    with pytest.raises(ValueError, match="outside bounds"):
        payoff_vector(LimitOrder.constant(1.5), kernel, fam)


# --- expected payoff oracles ------------------------------------------------------

def test_abstain_pays_zero(two_value):
    fam, kernel = two_value
    for u in (UtilitySpec.linear(), UtilitySpec.exponential(2.0)):
        k = payoff_kernel(fam, u, kernel.actions)
        assert np.all(payoff_vector(LimitOrder.constant(0.0), k, fam) == 0.0)


def test_cutoff_at_zero_pays_half(two_value):
    fam, kernel = two_value
    # int_{-1}^0 (m - p) dp/2 - int_0^1 (m - p) dp/2 = 1/2 for any m
    v = payoff_vector(make_cutoff_order(0.0), kernel, fam)
    assert np.allclose(v, 0.5, atol=1e-12)
    assert abs(expected_payoff(make_cutoff_order(0.0), 1, kernel, fam) - 0.5) < 1e-12
    assert abs(seu_value(make_cutoff_order(0.0), [0.5, 0.5], kernel, fam) - 0.5) < 1e-12


def test_mimicking_order_pays_three_eighths(two_value):
    fam, kernel = two_value
    assert np.allclose(payoff_vector(MIMIC, kernel, fam), 0.375, atol=1e-12)


def test_unit_buy_against_conditional_mean_oracle(rng):
    P = 7
    fam = build_model({"prices": {"points": sorted(rng.uniform(-1, 1, P)), "weights": list(rng.dirichlet(np.ones(P)))},
                       "values": {"points": [-1.0, 0.5, 2.0]},
                       "states": [{"value_probs": list(rng.dirichlet(np.ones(3)))} for _ in range(3)]})
    kernel = payoff_kernel(fam, UtilitySpec.linear(), [-1.0, 0.0, 1.0])
    m = fam.conditional_mean_values()
    pi = fam.price_grid.weights / fam.price_grid.weights.sum()
    oracle = np.array([np.sum(pi * (m[:, y] - fam.prices)) for y in range(3)])
    assert np.allclose(payoff_vector(LimitOrder.constant(1.0), kernel, fam), oracle, atol=1e-12)


def test_point_belief_equals_state_payoff(two_value):
    fam, kernel = two_value
    l = make_cutoff_order(0.3)
    assert seu_value(l, [0.0, 1.0], kernel, fam) == pytest.approx(expected_payoff(l, 1, kernel, fam), abs=1e-15)


def test_symmetric_states_average_to_zero():
    fam = single_price_family(0.0, (0.2, 0.8))
    kernel = payoff_kernel(fam, UtilitySpec.linear(), [-1.0, 0.0, 1.0])
    for level in (-1.0, 1.0):
        assert abs(seu_value(LimitOrder.constant(level), [0.5, 0.5], kernel, fam)) < 1e-15


def test_belief_must_be_normalized(two_value):
    fam, kernel = two_value
    with pytest.raises(ValueError):
        seu_value(LimitOrder.constant(0.0), [0.6, 0.6], kernel, fam)
    with pytest.raises(ValueError):
        as_belief([1.0], 2)


@given(st.integers(0, 10_000))
def test_payoff_bilinear_in_behavioral_weights(seed):
    rng = np.random.default_rng(seed)
    fam = uninformative_family(6, tuple(rng.uniform(0, 1, 3)))
    kernel = payoff_kernel(fam, UtilitySpec.exponential(1.0), [-1.0, 0.0, 1.0])
    k1, k2 = rng.dirichlet(np.ones(3), size=(2, 6))
    v1 = payoff_vector(BehavioralOrder(fam.prices, kernel.actions, k1), kernel, fam)
    v2 = payoff_vector(BehavioralOrder(fam.prices, kernel.actions, k2), kernel, fam)
    for lam in (0.0, 0.25, 0.5, 1.0):
        mix = BehavioralOrder(fam.prices, kernel.actions, lam * k1 + (1 - lam) * k2)
        assert np.allclose(payoff_vector(mix, kernel, fam), lam * v1 + (1 - lam) * v2, atol=1e-14)


# --- integrability -----------------------------------------------------------------

def test_integrability_linear_minimal_bound(two_value):
    fam, _ = two_value
    rep = validate_integrability(fam, UtilitySpec.linear())
    diff = np.abs(fam.value_grid.points[None, :] - fam.prices[:, None])
    assert np.allclose(rep.minimal_bound, 2 * diff * fam.density.max(axis=2))
    assert rep.violations == 0


def test_integrability_bounded_utility_no_violations(two_value):
    fam, _ = two_value
    u = UtilitySpec.exponential(1.0)
    rep = validate_integrability(fam, u)
    assert np.isfinite(rep.max_lhs)
    bounded = ModelFamily(fam.price_grid, fam.value_grid, fam.density, fam.bounds,
                          integrability_bound=rep.minimal_bound)
    assert validate_integrability(bounded, u).violations == 0


def test_integrability_counts_violations(two_value):
    fam, _ = two_value
    tight = ModelFamily(fam.price_grid, fam.value_grid, fam.density, fam.bounds,
                        integrability_bound=np.zeros((fam.n_prices, 2)))
    rep = validate_integrability(tight, UtilitySpec.linear())
    assert rep.violations > 0 and rep.max_violation > 0
