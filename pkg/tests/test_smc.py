import csv
import math

import numpy as np
import pytest
from statsmodels.stats.proportion import proportion_confint

from oran_verifier import analysis, parser, scenario, smc, statespace
from oran_verifier.parser import parse_expr
from oracles import random_model_text

TWO_STATE = """ctmc
module ue  on : bool init false;
  [] !on -> 0.1 : (on'=true);
  [] on -> 0.01 : (on'=false);
endmodule
rewards "on" on : 1; endrewards
rewards "one" true : 1; endrewards
"""


def model(text):
    return parser.parse_model(text)


@pytest.fixture(scope="module")
def two_state():
    return model(TWO_STATE)


def test_dwell_mean():
    st = smc.Stepper(model("ctmc module m x : bool init false; [] !x -> 2 : (x'=true); endmodule"))
    rng = np.random.default_rng(1)
    n = 100_000
    dwell = np.array([st.step(st.initial, rng)[0] for _ in range(n)])
    assert abs(dwell.mean() - 0.5) < 3 * 0.5 / math.sqrt(n)


def test_choice_frequency():
    m = model("ctmc module m s : [0..2] init 0; [] s=0 -> 1 : (s'=1); [] s=0 -> 3 : (s'=2); endmodule")
    st = smc.Stepper(m)
    rng = np.random.default_rng(2)
    n = 100_000
    second = sum(smc.step(st, st.initial, rng)[1] == (2,) for _ in range(n))
    assert abs(second / n - 0.75) < 3 * math.sqrt(0.75 * 0.25 / n)


def test_absorbing_step():
    st = smc.Stepper(model("ctmc module m x : bool init true; [] !x -> 1 : (x'=true); endmodule"))
    assert smc.step(st, st.initial, np.random.default_rng(0)) is None


def test_trajectory_is_seed_deterministic():
    m = scenario.generate_model(scenario.subset(scenario.preset("cnf1"), [1, 4, 8]))
    a = smc.simulate_trajectory(m, 200.0, seed=7)
    b = smc.simulate_trajectory(m, 200.0, seed=7)
    c = smc.simulate_trajectory(m, 200.0, seed=8)
    assert a.steps == b.steps
    assert a.steps != c.steps


def test_trajectory_legality():
    m = scenario.generate_model(scenario.subset(scenario.preset("cnf5"), [1, 2, 3, 4, 8]))
    st = smc.Stepper(m)
    sample = smc.simulate_trajectory(st, 500.0, seed=3)
    assert len(sample.steps) > 20
    succ = st.succ
    lay = succ.layout
    times = [t for t, _, _ in sample.steps]
    assert all(a < b for a, b in zip(times, times[1:]))
    for (_, _, prev), (_, label, nxt) in zip(sample.steps, sample.steps[1:]):
        key = lay.pack_one(st.as_dict(prev))
        _, tids, targets = succ.expand(np.array([key], dtype=np.int64))
        assert lay.pack_one(st.as_dict(nxt)) in targets.tolist()
        assert label in {succ.transitions[k].label or "" for k in tids.tolist()}


def test_stepper_matches_explorer():
    cfg = scenario.subset(scenario.preset("cnf1"), [1, 2, 4])
    space = statespace.explore(scenario.generate_model(cfg))
    st = smc.Stepper(scenario.generate_model(cfg))
    q = space.rates
    for i in range(0, space.num_states, 7):
        s = space.state(i)
        state = tuple(int(s[n]) for n in st.names)
        got = {}
        for _, rate, nxt in st.moves(state):
            j = space.index_of(st.as_dict(nxt))
            got[j] = got.get(j, 0.0) + rate
        row = q.getrow(i)
        assert got == pytest.approx(dict(zip(row.indices.tolist(), row.data.tolist())))


@pytest.mark.parametrize("k, n, c", [(0, 10, 0.95), (3, 10, 0.95), (10, 10, 0.99), (4810, 10000, 0.99), (1, 100000, 0.9)])
def test_wilson_matches_statsmodels(k, n, c):
    low, high = smc.wilson_interval(k, n, c)
    ref_low, ref_high = proportion_confint(k, n, alpha=1 - c, method="wilson")
    assert low == pytest.approx(ref_low, abs=1e-12)
    assert high == pytest.approx(ref_high, abs=1e-12)


def test_bounded_reach_two_state(two_state):
    rec = smc.estimate_bounded_reach(two_state, parse_expr("on"), 10.0, samples=100_000, confidence=0.99, seed=11)
    assert rec.ci_low <= 1 - math.exp(-1) <= rec.ci_high
    assert rec.ci_low <= rec.estimate <= rec.ci_high
    assert rec.samples == 100_000 and rec.diagnostics["successes"] == round(rec.estimate * 100_000)


def test_bounded_reach_reproducible(two_state):
    a = smc.estimate_bounded_reach(two_state, parse_expr("on"), 10.0, samples=9000, seed=5)
    b = smc.estimate_bounded_reach(two_state, parse_expr("on"), 10.0, samples=9000, seed=5)
    c = smc.estimate_bounded_reach(two_state, parse_expr("on"), 10.0, samples=9000, seed=6)
    assert a == b
    assert a.estimate != c.estimate


def test_zero_bound(two_state):
    rec = smc.estimate_bounded_reach(two_state, parse_expr("on"), 0.0, samples=500)
    assert rec.estimate == 0.0 and rec.ci_low == 0.0 and 0 < rec.ci_high < 0.02


def test_reduced_scenario_agrees_with_exact():
    cfg = scenario.subset(scenario.preset("cnf1"), [1, 2, 4, 7, 8])
    m = scenario.generate_model(cfg)
    phi = parse_expr("ue4_rc > 0")
    exact = analysis.bounded_reach_all_states(statespace.explore(m), phi, 10.0)[0]
    rec = smc.estimate_bounded_reach(m, phi, 10.0, samples=20_000, confidence=0.99, seed=1)
    assert rec.ci_low <= exact <= rec.ci_high


def test_random_models_agree_with_exact():
    misses = 0
    for seed in range(12):
        m = model(random_model_text(np.random.default_rng(seed)))
        space = statespace.explore(m)
        name = m.variables[0].name
        phi = parse_expr(name if m.variables[0].type == "bool" else f"{name} > 0")
        exact = analysis.bounded_reach_all_states(space, phi, 1.5)[0]
        rec = smc.estimate_bounded_reach(m, phi, 1.5, samples=20_000, confidence=0.99, seed=seed)
        misses += not rec.ci_low <= exact <= rec.ci_high
    assert misses <= 1


def test_constant_reward_is_exact(two_state):
    rec = smc.estimate_longrun_reward(two_state, "one", horizon=5000.0, burn_in=100.0, seed=1)
    assert rec.estimate == 1.0


def test_longrun_two_state(two_state):
    rec = smc.estimate_longrun_reward(two_state, "on", horizon=200_000.0, burn_in=1000.0, seed=2)
    assert rec.ci_low <= 0.1 / 0.11 <= rec.ci_high
    assert len(rec.diagnostics["batch_means"]) == 20


def test_longrun_cnf1_operating():
    m = scenario.generate_model(scenario.preset("cnf1"))
    rec = smc.estimate_longrun_reward(m, "operating", horizon=1e5, burn_in=1e3, seed=0)
    assert rec.ci_low <= 2.265360891 <= rec.ci_high


def test_unknown_reward(two_state):
    with pytest.raises(KeyError, match="unknown reward"):
        smc.estimate_longrun_reward(two_state, "nope", horizon=10.0, burn_in=0.0)


@pytest.mark.parametrize("kw", [dict(samples=0), dict(confidence=1.0), dict(t=-1.0)])
def test_bad_bounded_inputs(two_state, kw):
    args = dict(samples=10, confidence=0.9, t=1.0) | kw
    with pytest.raises(ValueError):
        smc.estimate_bounded_reach(two_state, parse_expr("on"), **args)


def test_bad_window(two_state):
    with pytest.raises(ValueError):
        smc.estimate_longrun_reward(two_state, "on", horizon=10.0, burn_in=10.0)


def test_trajectory_csv(tmp_path, two_state):
    st = smc.Stepper(two_state)
    sample = smc.simulate_trajectory(st, 1000.0, seed=4)
    path = tmp_path / "traj.csv"
    smc.write_trajectory_csv(sample, st.names, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["time", "action", "on"]
    assert len(rows) == len(sample.steps) + 1
    assert rows[1] == ["0.0", "", "0"]


def test_trajectory_stops_at_target(two_state):
    sample = smc.simulate_trajectory(two_state, 1e6, seed=9, target=parse_expr("on"))
    assert sample.hit_time == sample.steps[-1][0] > 0
    assert sample.steps[-1][2] == (1,)
