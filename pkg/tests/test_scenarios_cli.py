import json

import numpy as np
import pytest

from ambiguity_limits.cli import main
from ambiguity_limits.dominance import dominance_lp
from ambiguity_limits.market_model import UtilitySpec, payoff_kernel, payoff_vector
from ambiguity_limits.orders import LimitOrder
from ambiguity_limits.schemas import ConfigError
from ambiguity_limits.scenarios import (
    AppendixWorld,
    ScenarioConfig,
    _simplex_mesh,
    brute_force_margin,
    emit_report,
    ellsberg_instance,
    parse_config,
    run_ellsberg,
    run_scenario,
)

ACTS = np.array([-1.0, 0.0, 1.0])


def _write(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


# --- config ---------------------------------------------------------------------------

def test_config_roundtrip(tmp_path):
    cfg = ScenarioConfig().replace(seed=7, alpha=3.5, z_nodes=(11, 21))
    path = _write(tmp_path / "cfg.json", cfg.to_dict())
    again = parse_config(path)
    assert again == cfg
    assert again.to_dict() == cfg.to_dict()


def test_config_needs_alpha(tmp_path):
    doc = ScenarioConfig().to_dict()
    del doc["model"]["alpha"]
    with pytest.raises(ConfigError, match="alpha"):
        parse_config(_write(tmp_path / "cfg.json", doc))


@pytest.mark.parametrize("section,key,value", [
    ("resolutions", "price_nodes", 1),
    ("model", "beta_h", 0.1),
    ("model", "prior_weights", [0.7, 0.7]),
    ("resolutions", "action_nodes", 4),
    ("model", "surprise", 1),
])
def test_config_rejects_bad_values(tmp_path, section, key, value):
    doc = ScenarioConfig().to_dict()
    doc[section][key] = value
    with pytest.raises(ConfigError):
        parse_config(_write(tmp_path / "cfg.json", doc))


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "missing.json")
    (tmp_path / "broken.json").write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        parse_config(tmp_path / "broken.json")


def test_unknown_scenario():
    with pytest.raises(ConfigError):
        run_scenario("nope", ScenarioConfig())


# --- reports --------------------------------------------------------------------------

def test_reports_are_reproducible(tmp_path):
    cfg = ScenarioConfig().replace(micro_instances=20, jensen_orders=50, families=4)
    a = emit_report(run_scenario("batteries", cfg), tmp_path / "a")
    b = emit_report(run_scenario("batteries", cfg), tmp_path / "b")
    assert [p.name for p in a] == [p.name for p in b]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()


def test_emit_to_unwritable_location(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_report(run_ellsberg(ScenarioConfig()), blocker / "sub")


def test_ellsberg_report_contents(tmp_path):
    rep = run_ellsberg(ScenarioConfig())
    assert rep.passed
    paths = emit_report(rep, tmp_path)
    doc = json.loads(paths[0].read_text())
    assert doc["data"]["bet3"]["t_star"] == pytest.approx(0.01, abs=1e-9)
    csv_lines = (tmp_path / "ellsberg_dominance.csv").read_text().splitlines()
    assert csv_lines[0] == "order_id,t_star,verified"
    assert len(csv_lines) == 4


def test_even_known_bet_is_rationalized():
    rep = run_ellsberg(ScenarioConfig().replace(known_win=0.5))
    assert rep.passed
    assert rep.data["bet3"]["certificate_type"] == "belief"


def test_ellsberg_encoding():
    fam, kernel = ellsberg_instance(4, 0.49)
    assert np.allclose(payoff_vector(LimitOrder.constant(-1.0), kernel, fam), [0, 0.25, 0.5, 0.75, 1])
    assert np.allclose(payoff_vector(LimitOrder.constant(0.0), kernel, fam), [1, 0.75, 0.5, 0.25, 0])


# --- appendix world ---------------------------------------------------------------------

def test_appendix_deviation_shrinks():
    world = AppendixWorld.build(201)
    assert world.sup_deviation() <= 0.01
    assert world.sup_deviation() == pytest.approx(1 / 201, rel=1e-9)
    inner = world.prices[np.abs(world.prices) <= 1]
    assert np.allclose(world.conditional_mean(inner), inner, atol=1e-12)


def test_appendix_flip_state_punishes_trading():
    world = AppendixWorld.build(51)
    order = LimitOrder(np.array([0.0, 1.0]), np.array([0.0, 1.0, 0.0]))
    flip = world.flip_state(order)
    fam = world.family([flip])
    kernel = payoff_kernel(fam, UtilitySpec.linear(), ACTS)
    assert payoff_vector(order, kernel, fam)[-1] < 0


def test_appendix_buying_far_below_is_strict():
    world = AppendixWorld.build(51)
    fam = world.family()
    kernel = payoff_kernel(fam, UtilitySpec.linear(), ACTS)
    i = int(np.flatnonzero(world.prices == -1.5)[0])
    W = kernel.W[i]
    assert np.all(W[2] > W[1]) and np.all(W[1] > W[0])


def test_appendix_abstention_is_undominated():
    world = AppendixWorld.build(51)
    order = world.abstention_order()
    fam = world.family([world.flip_state(order)])
    kernel = payoff_kernel(fam, UtilitySpec.linear(), ACTS)
    assert not dominance_lp(order, kernel, fam).dominated


# --- brute force oracle -------------------------------------------------------------------

def test_simplex_mesh():
    mesh = _simplex_mesh(3, 0.5)
    assert len(mesh) == 6
    assert np.allclose(mesh.sum(axis=1), 1.0)


def test_brute_force_on_a_tiny_case():
    # one price, two states; an even mix of the two bets gains 0.1 over the sure action
    W = np.array([[[1.0, 0.0], [0.0, 1.0], [0.4, 0.4]]])
    assert brute_force_margin(W, np.array([1.0]), np.array([0.4, 0.4]), 0.05) == pytest.approx(0.1, abs=1e-12)
    W2 = np.stack([W[0], W[0]])
    got = brute_force_margin(W2, np.array([0.5, 0.5]), np.array([0.4, 0.4]), 0.25)
    assert got == pytest.approx(0.1, abs=1e-12)


# --- command line -------------------------------------------------------------------------

def test_cli_scenarios(tmp_path, capsys):
    for name in ("ellsberg", "motivating", "appendix"):
        assert main([name, "--out", str(tmp_path)]) == 0
        assert (tmp_path / f"{name}.json").exists()
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_cli_failing_check_exits_one(tmp_path):
    assert main(["ellsberg", "--out", str(tmp_path), "--tol=-1"]) == 1


def test_cli_bad_config_exits_two(tmp_path, capsys):
    doc = ScenarioConfig().to_dict()
    del doc["model"]["alpha"]
    path = _write(tmp_path / "cfg.json", doc)
    assert main(["ellsberg", "--config", path, "--out", str(tmp_path)]) == 2
    assert "alpha" in capsys.readouterr().err


def test_cli_unwritable_output_exits_two(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["ellsberg", "--out", str(blocker / "sub")]) == 2


def test_cli_order_commands(tmp_path):
    order = _write(tmp_path / "mimic.json", {"breakpoints": [-0.5, 0.5], "levels": [1, 0, -1]})
    assert main(["dominance", "--order", order, "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "dominance.json").read_text())
    assert doc["data"]["certificate_type"] == "dominator"
    assert doc["data"]["t_star"] == pytest.approx(0.125, abs=1e-6)
    cutoff = _write(tmp_path / "cutoff.json", {"breakpoints": [0.0], "levels": [1, -1]})
    assert main(["rationalize", "--order", cutoff, "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "rationalize.json").read_text())
    assert doc["data"]["undominated"] and doc["data"]["verified"]


def test_cli_rejects_bad_order_file(tmp_path):
    bad = _write(tmp_path / "bad.json", {"breakpoints": [0.0]})
    assert main(["dominance", "--order", bad, "--out", str(tmp_path)]) == 2
    assert main(["dominance", "--order", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2


def test_cli_demand(tmp_path):
    model = _write(tmp_path / "model.json", {
        "prices": {"uniform": {"low": -1, "high": 1, "n": 9}},
        "values": {"points": [-1, 1]},
        "states": [{"value_probs": [0.75, 0.25]}, {"value_probs": [0.25, 0.75]}],
    })
    assert main(["demand", "--model", model, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "demand_curves.csv").read_text().splitlines()
    assert lines[0] == "price,seu,maxmin,smooth" and len(lines) == 10
