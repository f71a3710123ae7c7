from __future__ import annotations

from fractions import Fraction as F
from pathlib import Path

import pytest

from flowsub.sft import TransitionSystem
from flowsub.suspension import Observable, ObservableTerm, Profile, RoofFunction

DATA = Path(__file__).resolve().parent.parent / "data"

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def three_state_system() -> TransitionSystem:
    return TransitionSystem.from_pairs([("0", "1"), ("1", "0"), ("1", "2"), ("2", "0")])


def three_state_roof(ts: TransitionSystem | None = None) -> RoofFunction:
    ts = ts or three_state_system()
    return RoofFunction(
        ts,
        {("0", "1"): 1, ("1", "0"): F(3, 2), ("1", "2"): 1, ("2", "0"): F(3, 4)},
        ((("2", "0", "1", "0"), F(1, 20)), (("1", "0", "1"), F(-1, 10))),
        (1.0, 0.5),
    )


def three_state_observable() -> Observable:
    return Observable(
        (
            ObservableTerm(("0", "1"), Profile.parse("poly: 1 2")),
            ObservableTerm(("1", "2", "0", "1"), Profile.parse("trig: 0 0.1 0")),
        ),
        None,
        (1.0, 0.5),
    )


@pytest.fixture
def three():
    return three_state_system()


@pytest.fixture
def two_cycle():
    return TransitionSystem.from_pairs([("0", "1"), ("1", "0")])


@pytest.fixture
def full_two():
    return TransitionSystem.from_pairs([("0", "0"), ("0", "1"), ("1", "0"), ("1", "1")])
