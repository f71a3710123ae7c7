from __future__ import annotations

import random
from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowsub.mls import (
    coboundary_roof,
    mls_compare,
    reparametrization,
    rigidity_check,
    solve_coboundary,
    uniform_markov_average,
)
from flowsub.sft import TransitionSystem
from flowsub.suspension import RoofFunction, SectionObservable, metric_graph

import oracles
from conftest import three_state_roof


def _theta():
    return metric_graph({"a": ("u", "v", 1), "b": ("u", "v", F(5, 4)), "c": ("u", "v", F(3, 2))})


def _map_roof(roof, f):
    return RoofFunction(roof.system, {e: f(e, v) for e, v in roof.base.items()}, roof.corrections, roof.decay)


def test_identical_roofs(three):
    roof = three_state_roof(three)
    cmp = mls_compare(roof, roof)
    assert all(r.ratio == 1 for r in cmp.rows)
    assert cmp.m == 0 and not cmp.violations and cmp.consistent
    v = rigidity_check(roof, roof)
    assert v.verdict == "length-spectra-equal"
    assert set(v.potential.values()) == {0}


def test_uniform_scaling(three):
    roof = three_state_roof(three)
    big = RoofFunction(three, {e: v * F(11, 10) for e, v in roof.base.items()},
                       tuple((w, c * F(11, 10)) for w, c in roof.corrections), roof.decay)
    cmp = mls_compare(roof, big)
    assert all(r.ratio == pytest.approx(1.1, abs=1e-12) for r in cmp.rows)
    assert cmp.m == F(1, 10)
    assert rigidity_check(roof, big).verdict == "strict-inequality"


def test_coboundary_keeps_every_length(three):
    roof = three_state_roof(three)
    u = {s: F(int(s), 10) for s in three.states}
    other = coboundary_roof(roof, u)
    cmp = mls_compare(roof, other)
    assert all(r.length0 == r.length1 for r in cmp.rows)
    assert cmp.m == 0
    v = rigidity_check(roof, other)
    assert v.verdict == "length-spectra-equal"
    # recovered on the recoded states up to a constant
    A, _ = reparametrization(roof, other)
    for e in A.system.transitions:
        i, j = (A.code.words[x][-1] for x in e)
        assert v.potential[e[1]] - v.potential[e[0]] == u[j] - u[i]


def test_uniform_increase_is_strict(three):
    roof = three_state_roof(three)
    plus = _map_roof(roof, lambda e, v: v + F(1, 10))
    v = rigidity_check(roof, plus)
    assert v.verdict == "strict-inequality"
    assert v.m > 0 and v.average > 0


def test_shortened_orbit_is_reported():
    ts, roof = _theta()
    mixed = _map_roof(roof, lambda e, v: v - F(1, 5) if "a+" in e else v + F(1, 20))
    cmp = mls_compare(roof, mixed)
    assert cmp.m < 0 and cmp.violations and cmp.consistent
    v = rigidity_check(roof, mixed)
    assert v.verdict == "inconsistent"
    assert v.violating_cycle is not None
    assert "a+" in v.violating_cycle.symbols


def test_zero_average_without_coboundary():
    ts = TransitionSystem.from_pairs([("0", "0"), ("0", "1"), ("1", "0"), ("1", "1")])
    A = SectionObservable.from_mapping(ts, {("0", "0"): 1, ("1", "1"): -1, ("0", "1"): 0, ("1", "0"): 0})
    res = solve_coboundary(A)
    assert res.potential is None and res.bad_edge is not None
    assert uniform_markov_average(A, SectionObservable.from_mapping(ts, {e: 1 for e in ts.transitions})) \
        == pytest.approx(0, abs=1e-12)


def test_mismatched_systems(three, two_cycle):
    with pytest.raises(ValueError):
        mls_compare(RoofFunction.constant(three, 1), RoofFunction.constant(two_cycle, 1))


def test_uniform_markov_average_of_constant(three):
    A = SectionObservable.from_mapping(three, {e: 3 for e in three.transitions})
    t = SectionObservable.from_mapping(three, {e: 2 for e in three.transitions})
    avg = uniform_markov_average(A, t)
    assert isinstance(avg, float) and avg == pytest.approx(1.5, abs=1e-12)


def test_csv_rows(two_cycle):
    cmp = mls_compare(RoofFunction.constant(two_cycle, 1), RoofFunction.constant(two_cycle, 2))
    assert cmp.csv_rows() == [("01", 2.0, 4.0)]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_tree_choice_does_not_matter(seed):
    rng = random.Random(seed)
    pairs, states = oracles.random_irreducible(rng, rng.randint(2, 6))
    ts = TransitionSystem.from_pairs(pairs, states)
    u = {s: oracles.random_rational(rng, -2, 2) for s in states}
    A = SectionObservable.from_mapping(ts, {(i, j): u[j] - u[i] for i, j in pairs})
    a = solve_coboundary(A).potential
    b = solve_coboundary(A, rng=random.Random(seed + 1)).potential
    assert a is not None and b is not None
    shift = {a[s] - b[s] for s in states}
    assert len(shift) == 1
    assert {a[s] - u[s] for s in states} == {a[states[0]] - u[states[0]]}


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_sign_of_m_matches_cycle_table(seed):
    rng = random.Random(seed)
    pairs, states = oracles.random_irreducible(rng, rng.randint(1, 5))
    ts = TransitionSystem.from_pairs(pairs, states)
    r0 = RoofFunction(ts, {e: oracles.random_rational(rng, 1, 3) for e in pairs})
    r1 = RoofFunction(ts, {e: v + oracles.random_rational(rng, -1, 1) / 4 for e, v in r0.base.items()})
    cmp = mls_compare(r0, r1, max_len=len(states))
    # every simple cycle has length <= number of states, so the table is complete
    assert cmp.consistent
    v = rigidity_check(r0, r1)
    if cmp.violations:
        assert v.verdict == "inconsistent"
    all_equal = all(r.length0 == r.length1 for r in cmp.rows)
    assert (v.verdict == "length-spectra-equal") == all_equal
