from __future__ import annotations

import math
import random
from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowsub.sft import SymbolicSequence, TransitionSystem, random_sequence, shift
from flowsub.suspension import (
    CertificationError,
    FlowPoint,
    Observable,
    ObservableTerm,
    Profile,
    RoofFunction,
    adaptive_simpson,
    discretize_observable,
    exact_orbit_integral,
    flow,
    integrate_along_flow,
    metric_graph,
    section_roof,
    suspension_distance,
)

from conftest import three_state_observable, three_state_roof, three_state_system


def test_base_only_roof(two_cycle):
    roof = RoofFunction(two_cycle, {("0", "1"): F(3, 2), ("1", "0"): 1})
    w = SymbolicSequence.periodic(("0", "1"))
    assert roof(w) == F(3, 2)
    assert roof.window == 2


def test_roof_correction_on_centered_word(full_two):
    roof = RoofFunction(full_two, {e: 1 for e in full_two.transitions}, ((("0", "1", "0"), F(1, 10)),))
    w = SymbolicSequence(("1",), ("0", "1", "0"), ("1",), 1)
    assert roof(w) == 1 + F(1, 10)
    assert roof(shift(w, 1)) == 1
    assert roof.lower_bound() == 1 - F(1, 10)


def test_constant_roof(three):
    roof = RoofFunction.constant(three, 1)
    rng = random.Random(0)
    assert all(roof(random_sequence(three, rng)) == 1 for _ in range(20))


def test_roof_must_be_certified_positive(two_cycle):
    with pytest.raises(CertificationError):
        RoofFunction(two_cycle, {("0", "1"): F(1, 20), ("1", "0"): 1}, ((("1", "0", "1"), F(-1, 10)),))
    with pytest.raises(CertificationError):
        RoofFunction(two_cycle, {("0", "1"): 1})


def test_flow_identity_and_first_return(three):
    roof = three_state_roof(three)
    w = random_sequence(three, random.Random(3))
    p = FlowPoint(w, 0)
    assert flow(p, 0, roof) == p
    q = flow(p, roof(w), roof)
    assert q.base == shift(w, 1) and q.height == 0


def test_flow_on_constant_roof(three):
    roof = RoofFunction.constant(three, 1)
    w = random_sequence(three, random.Random(4))
    q = flow(FlowPoint(w, 0), F(5, 2), roof)
    assert q.base == shift(w, 2) and q.height == F(1, 2)


@settings(max_examples=40)
@given(st.integers(0, 10_000), st.fractions(0, 7, max_denominator=16), st.fractions(0, 7, max_denominator=16))
def test_flow_is_a_group_action(seed, s, t):
    ts = three_state_system()
    roof = three_state_roof(ts)
    w = random_sequence(ts, random.Random(seed))
    p = FlowPoint(w, 0)
    assert flow(flow(p, s, roof), t, roof) == flow(p, s + t, roof)
    assert flow(flow(p, s, roof), -s, roof) == p


def test_suspension_distance_along_the_flow(three):
    roof = three_state_roof(three)
    p = FlowPoint(random_sequence(three, random.Random(5)), F(1, 10))
    assert suspension_distance(p, p, roof) == 0
    q = flow(p, F(1, 100), roof)
    assert math.isclose(suspension_distance(p, q, roof), 0.01)


def test_integrate_constant():
    ts = three_state_system()
    roof = three_state_roof(ts)
    p = FlowPoint(random_sequence(ts, random.Random(1)), 0)
    A = Observable.constant(F(3, 2))
    assert math.isclose(integrate_along_flow(A, p, 4.3, roof), 1.5 * 4.3, rel_tol=1e-12)
    assert integrate_along_flow(A, p, 0, roof) == 0


def test_integrate_linear_profile_over_one_fiber(two_cycle):
    L = F(7, 4)
    roof = RoofFunction.constant(two_cycle, L)
    A = Observable((ObservableTerm((), Profile.parse("poly: 0 1")),))
    p = FlowPoint(SymbolicSequence.periodic(("0", "1")), 0)
    assert math.isclose(integrate_along_flow(A, p, L, roof), float(L) / 2, rel_tol=1e-12)
    assert exact_orbit_integral(A, p, L, roof) == L / 2


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 6))
def test_quadrature_matches_exact_integral(seed, T):
    ts = three_state_system()
    roof = three_state_roof(ts)
    A = three_state_observable()
    rng = random.Random(seed)
    w = random_sequence(ts, rng)
    p = FlowPoint(w, rng.random() * float(roof(w)))
    assert math.isclose(integrate_along_flow(A, p, T, roof, 1e-11), float(exact_orbit_integral(A, p, T, roof)),
                        abs_tol=1e-9)


def test_profile_parsing_and_calculus():
    p = Profile.parse("poly: 1 2 3")
    assert p(F(1, 2)) == 1 + 1 + F(3, 4)
    assert p.antiderivative(1) == 1 + 1 + 1
    assert p.derivative(0) == 2
    # a0, then cos and sin coefficients of each harmonic
    t = Profile.parse("trig: 0 1 2")
    assert math.isclose(t(0.25), 2.0, abs_tol=1e-12)
    assert math.isclose(t(0.5), -1.0, abs_tol=1e-12)
    assert math.isclose(t.antiderivative(1), 0.0, abs_tol=1e-12)
    with pytest.raises(ValueError):
        Profile.parse("spline: 1 2")


def test_adaptive_simpson():
    assert math.isclose(adaptive_simpson(math.sin, 0, math.pi, 1e-12), 2.0, rel_tol=1e-11)


def test_discretize_centered_constant(three):
    roof = three_state_roof(three)
    d = discretize_observable(Observable.constant(F(2, 3)), roof, m=F(2, 3))
    assert all(v == 0 for v in d.values.values())


def test_discretize_constant_on_constant_roof(three):
    roof = RoofFunction.constant(three, F(5, 4))
    d = discretize_observable(Observable.constant(3), roof)
    assert set(d.values.values()) == {F(15, 4)}


def test_discretize_profile_on_roof_two(two_cycle):
    roof = RoofFunction.constant(two_cycle, 2)
    # profiles are functions of u = t / tau, so u integrates to tau / 2 = 1
    u = Observable((ObservableTerm((), Profile.parse("poly: 0 1")),))
    assert set(discretize_observable(u, roof).values.values()) == {1}
    two_u = Observable((ObservableTerm((), Profile.parse("poly: 0 2")),))
    assert set(discretize_observable(two_u, roof).values.values()) == {2}


def test_discretization_matches_flow_integral(three):
    roof = three_state_roof(three)
    A = three_state_observable()
    d = discretize_observable(A, roof)
    rng = random.Random(7)
    for _ in range(20):
        w = random_sequence(three, rng)
        direct = exact_orbit_integral(A, FlowPoint(w, 0), roof(w), roof)
        assert math.isclose(float(d.at(w)), float(direct), abs_tol=1e-12)
        assert section_roof(roof, d.window).at(w) == roof(w)


def test_window_corrections_need_decay(three):
    roof = three_state_roof(three)
    A = Observable((ObservableTerm(("1", "2", "0"), Profile.constant(1)),))
    with pytest.raises(CertificationError):
        discretize_observable(A, roof)


def test_metric_graph_states_and_roof():
    ts, roof = metric_graph({"a": ("u", "v", 1), "b": ("u", "v", F(5, 4)), "c": ("u", "v", F(3, 2))})
    assert len(ts.states) == 6 and len(ts.transitions) == 12
    assert not ts.allows("a+", "a-")
    assert roof.base[("b+", "a-")] == F(5, 4)
    assert roof.lower_bound() == 1 and roof.upper_bound() == F(3, 2)


def test_metric_graph_single_loop_is_a_two_cycle():
    ts, _ = metric_graph({"e": ("v", "v", 2)})
    assert isinstance(ts, TransitionSystem)
    assert len(ts.states) == 2
