from __future__ import annotations

import random
from dataclasses import replace
from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowsub.ergopt import (
    RatioError,
    howard,
    lawler,
    minimal_average,
    negative_cycle,
    potentials_for,
    verify_certificate,
)
from flowsub.sft import Cycle, TransitionSystem
from flowsub.suspension import SectionObservable, discretize_observable, section_roof

import oracles
from conftest import three_state_observable, three_state_roof, three_state_system


def _obs(ts, values):
    return SectionObservable.from_mapping(ts, values)


def _three_ratio_example():
    ts = three_state_system()
    cost = _obs(ts, {("0", "1"): 1, ("1", "0"): 3, ("1", "2"): F(3, 2), ("2", "0"): 2})
    time = _obs(ts, {e: 1 for e in ts.transitions})
    return ts, cost, time


def test_constant_observable_gives_its_value(three):
    roof = three_state_roof(three)
    time = section_roof(roof, 4)
    cost = time.map(lambda e, v: F(5, 3) * v)
    cert = minimal_average(cost, time)
    assert cert.m == F(5, 3)
    rep = verify_certificate(cert, cost, time)
    assert rep.passed and rep.min_slack == 0


def test_single_cycle_ratio(two_cycle):
    cost = _obs(two_cycle, {("0", "1"): 1, ("1", "0"): 3})
    time = _obs(two_cycle, {("0", "1"): 1, ("1", "0"): 2})
    cert = minimal_average(cost, time)
    assert cert.m == F(4, 3)
    assert cert.witness == Cycle(("0", "1"))
    assert cert.exact


def test_three_state_ratio_example():
    ts, cost, time = _three_ratio_example()
    cert = minimal_average(cost, time)
    assert cert.m == F(3, 2)
    assert cert.witness == Cycle(("0", "1", "2"))
    assert cert.method_agreement == 0


def test_each_method_alone():
    _, cost, time = _three_ratio_example()
    for method in ("lawler", "howard"):
        cert = minimal_average(cost, time, method=method)
        assert cert.m == F(3, 2) and cert.method == method


def test_certificate_on_windowed_example(three):
    roof = three_state_roof(three)
    cost = discretize_observable(three_state_observable(), roof)
    time = section_roof(roof, cost.window)
    cert = minimal_average(cost, time)
    rep = verify_certificate(cert, cost, time, max_len=8)
    assert rep.passed
    assert rep.min_slack >= -1e-10
    assert cert.m == pytest.approx(8 / 11, abs=1e-12)


def test_tampered_certificates_are_caught():
    _, cost, time = _three_ratio_example()
    cert = minimal_average(cost, time)
    # raising m makes the witness itself fall below the line
    up = verify_certificate(replace(cert, m=cert.m + F(1, 10)), cost, time)
    assert up.witness_gap < 0 and up.violations
    assert not up.passed
    # lowering m leaves positive slack on the witness, so equality fails
    down = verify_certificate(replace(cert, m=cert.m - F(1, 10)), cost, time)
    assert down.witness_gap > 0 and not down.violations
    assert not down.witness_ok and not down.passed


def test_reducible_graph_is_rejected():
    ts = TransitionSystem.from_pairs([("0", "0"), ("0", "1"), ("1", "1")])
    cost = _obs(ts, {e: 1 for e in ts.transitions})
    with pytest.raises(RatioError):
        minimal_average(cost, cost)


def test_nonpositive_time_is_rejected(two_cycle):
    cost = _obs(two_cycle, {e: 1 for e in two_cycle.transitions})
    time = _obs(two_cycle, {("0", "1"): 0, ("1", "0"): 1})
    with pytest.raises(RatioError):
        minimal_average(cost, time)


def test_unknown_method(two_cycle):
    cost = _obs(two_cycle, {e: 1 for e in two_cycle.transitions})
    with pytest.raises(ValueError):
        minimal_average(cost, cost, method="karp")


def test_negative_cycle_detection():
    ts, cost, time = _three_ratio_example()
    edges = ts.sorted_transitions()
    w = {e: cost[e] - F(3, 2) * time[e] for e in edges}
    assert negative_cycle(ts, edges, w) is None
    w = {e: cost[e] - F(8, 5) * time[e] for e in edges}
    cyc = negative_cycle(ts, edges, w)
    assert cyc is not None and sorted(cyc) == ["0", "1", "2"]


def test_potentials_make_reduced_costs_nonnegative():
    _, cost, time = _three_ratio_example()
    u = potentials_for(cost, time, F(3, 2))
    assert all(cost[e] - F(3, 2) * time[e] + u[e[0]] - u[e[1]] >= 0 for e in cost.system.transitions)


def _random_instance(seed: int, exact: bool = True):
    rng = random.Random(seed)
    pairs, states = oracles.random_irreducible(rng, rng.randint(1, 6))
    ts = TransitionSystem.from_pairs(pairs, states)
    a = {e: oracles.random_rational(rng, -3, 3) for e in pairs}
    t = {e: oracles.random_rational(rng, 1, 4) + F(1, 8) for e in pairs}
    if not exact:
        a = {e: float(v) + rng.uniform(-1e-3, 1e-3) for e, v in a.items()}
        t = {e: float(v) for e, v in t.items()}
    return ts, pairs, states, a, t


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_matches_brute_force_exactly(seed):
    ts, pairs, states, a, t = _random_instance(seed)
    cert = minimal_average(_obs(ts, a), _obs(ts, t))
    assert cert.m == oracles.min_cycle_ratio(pairs, states, a, t)
    assert cert.witness.birkhoff(a) / cert.witness.birkhoff(t) == cert.m


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_matches_brute_force_in_floats(seed):
    ts, pairs, states, a, t = _random_instance(seed, exact=False)
    cert = minimal_average(_obs(ts, a), _obs(ts, t), tol=1e-11)
    assert abs(cert.m - oracles.min_cycle_ratio(pairs, states, a, t)) <= 1e-9
    ml, _ = lawler(_obs(ts, a), _obs(ts, t), 1e-11)
    mh, _ = howard(_obs(ts, a), _obs(ts, t))
    assert abs(ml - mh) <= 1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_certificate_survives_independent_check(seed):
    ts, _, _, a, t = _random_instance(seed)
    cost, time = _obs(ts, a), _obs(ts, t)
    rep = verify_certificate(minimal_average(cost, time), cost, time, max_len=6)
    assert rep.passed
