"""Suspension flows over a transition system.

Window convention: a word ``w`` of length ``L >= 2`` matches a sequence
``x`` when ``x[2-L..1] == w``, so the last two symbols of ``w`` are the
transition ``(x_0, x_1)`` currently being traversed and the remaining ones
are the immediate past. A one-letter word matches ``x_0`` and the empty
word matches everything.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

from .sft import (
    DEFAULT_THETA,
    BlockCode,
    SymbolicSequence,
    Transition,
    TransitionSystem,
    Word,
    higher_block,
    shift,
    symbolic_distance,
)

TWO_PI = 2.0 * math.pi
MAX_POLY_DEGREE = 8
MAX_HARMONICS = 4


class CertificationError(ValueError):
    """Raised when a bound needed for a certified result is unavailable."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


def parse_number(text: str) -> Fraction | float:
    """Exact rational for decimal or fraction literals, float otherwise."""
    text = text.strip()
    try:
        return Fraction(text)
    except ValueError:
        return float(text)


# ---------------------------------------------------------------------------
# fiber profiles


def _divide(c, n: int):
    if isinstance(c, (int, Fraction)):
        return Fraction(c) / n
    return c / n


@dataclass(frozen=True)
class Profile:
    """Polynomial or trigonometric polynomial on [0, 1].

    ``poly`` coefficients are ``c0 c1 ...`` of ``sum c_k u^k``; ``trig``
    coefficients are ``a0 a1 b1 a2 b2 ...`` of
    ``a0 + sum a_k cos(2 pi k u) + b_k sin(2 pi k u)``.
    """

    kind: str
    coeffs: tuple

    def __post_init__(self) -> None:
        if self.kind == "poly":
            if len(self.coeffs) - 1 > MAX_POLY_DEGREE:
                raise ValueError(f"polynomial degree exceeds {MAX_POLY_DEGREE}")
        elif self.kind == "trig":
            if len(self.coeffs) % 2 != 1 or (len(self.coeffs) - 1) // 2 > MAX_HARMONICS:
                raise ValueError(f"trig profile needs a0 plus at most {MAX_HARMONICS} (a, b) pairs")
        else:
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if not self.coeffs:
            raise ValueError("empty profile")

    @classmethod
    def parse(cls, text: str) -> "Profile":
        kind, _, rest = text.partition(":")
        coeffs = tuple(parse_number(t) for t in rest.split())
        return cls(kind.strip(), coeffs)

    @classmethod
    def constant(cls, c=1) -> "Profile":
        return cls("poly", (c,))

    def __str__(self) -> str:
        return f"{self.kind}: " + " ".join(str(c) for c in self.coeffs)

    def _harmonics(self):
        c = self.coeffs
        return [(k, c[2 * k - 1], c[2 * k]) for k in range(1, (len(c) - 1) // 2 + 1)]

    def __call__(self, u):
        if self.kind == "poly":
            acc = 0 * u
            for c in reversed(self.coeffs):
                acc = acc * u + c
            return acc
        out = float(self.coeffs[0])
        for k, a, b in self._harmonics():
            out += float(a) * math.cos(TWO_PI * k * u) + float(b) * math.sin(TWO_PI * k * u)
        return out

    def antiderivative(self, u):
        """Primitive vanishing at u = 0."""
        if self.kind == "poly":
            acc = 0 * u
            for k in range(len(self.coeffs) - 1, -1, -1):
                acc = acc * u + _divide(self.coeffs[k], k + 1)
            return acc * u
        u = float(u)
        out = float(self.coeffs[0]) * u
        for k, a, b in self._harmonics():
            w = TWO_PI * k
            out += float(a) * math.sin(w * u) / w + float(b) * (1.0 - math.cos(w * u)) / w
        return out

    def derivative(self, u):
        if self.kind == "poly":
            acc = 0 * u
            for k in range(len(self.coeffs) - 1, 0, -1):
                acc = acc * u + k * self.coeffs[k]
            return acc
        out = 0.0
        for k, a, b in self._harmonics():
            w = TWO_PI * k
            out += -float(a) * w * math.sin(w * u) + float(b) * w * math.cos(w * u)
        return out

    def sup_bound(self) -> float:
        """Certified bound on sup |profile| over [0, 1]."""
        if self.kind == "poly":
            return float(sum(abs(c) for c in self.coeffs))
        return abs(float(self.coeffs[0])) + sum(abs(float(a)) + abs(float(b)) for _, a, b in self._harmonics())

    def derivative_bound(self) -> float:
        """Certified bound on sup |profile'| over [0, 1]."""
        if self.kind == "poly":
            return float(sum(k * abs(c) for k, c in enumerate(self.coeffs)))
        return sum(TWO_PI * k * (abs(float(a)) + abs(float(b))) for k, a, b in self._harmonics())


# ---------------------------------------------------------------------------
# window matching


def window_of(seq: SymbolicSequence, length: int, n: int = 0) -> Word:
    """The length-``length`` window of ``seq`` ending at index n+1."""
    return seq.window(n + 2 - length, n + 1)


def word_matches_window(word: Word, win: Word) -> bool:
    """Does ``word`` match a full window (ending at index 1)?"""
    L = len(word)
    if L == 0:
        return True
    if L == 1:
        return win[-2] == word[0]
    return L <= len(win) and win[len(win) - L:] == word


def _window_length(words: Sequence[Word]) -> int:
    return max([2] + [len(w) for w in words])


# ---------------------------------------------------------------------------
# roofs and observables


@dataclass(frozen=True)
class RoofFunction:
    system: TransitionSystem
    base: Mapping[Transition, object]
    corrections: tuple[tuple[Word, object], ...] = ()
    decay: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        missing = [e for e in self.system.transitions if e not in self.base]
        if missing:
            raise CertificationError(f"roof has no base value for transitions {sorted(missing)}")
        for word, _ in self.corrections:
            if not self.system.is_admissible(word):
                raise ValueError(f"correction word {word} is not admissible")
        if self.lower_bound() <= 0:
            raise CertificationError("roof is not certified positive: min base - sum |c_w| <= 0")
        if self.decay is not None:
            C, th = self.decay
            for word, c in self.corrections:
                if abs(c) > C * th ** len(word) * (1 + 1e-12):
                    raise CertificationError(f"correction on {word} violates the decay bound")

    @classmethod
    def constant(cls, ts: TransitionSystem, value) -> "RoofFunction":
        return cls(ts, {e: value for e in ts.sorted_transitions()})

    @property
    def window(self) -> int:
        return _window_length([w for w, _ in self.corrections])

    def value_on_window(self, win: Word):
        out = self.base[(win[-2], win[-1])]
        for word, c in self.corrections:
            if word_matches_window(word, win):
                out = out + c
        return out

    def __call__(self, seq: SymbolicSequence, n: int = 0):
        return self.value_on_window(window_of(seq, self.window, n))

    def lower_bound(self):
        return min(self.base.values()) - sum(abs(c) for _, c in self.corrections)

    def upper_bound(self):
        return max(self.base.values()) + sum(abs(c) for _, c in self.corrections)

    def birkhoff(self, seq: SymbolicSequence, n: int):
        """tau_n(seq) = sum of the first n return times (n may be negative)."""
        if n >= 0:
            return sum((self(seq, k) for k in range(n)), 0 * self.lower_bound())
        return -sum((self(seq, k) for k in range(n, 0)), 0 * self.lower_bound())

    def transition_local(self) -> bool:
        return self.window == 2 and all(len(w) >= 2 for w, _ in self.corrections)

    def scaled(self, factor) -> "RoofFunction":
        return RoofFunction(
            self.system,
            {e: v * factor for e, v in self.base.items()},
            tuple((w, c * factor) for w, c in self.corrections),
            None if self.decay is None else (self.decay[0] * abs(float(factor)), self.decay[1]),
        )


@dataclass(frozen=True)
class ObservableTerm:
    word: Word
    profile: Profile
    coeff: object = 1


@dataclass(frozen=True)
class Observable:
    terms: tuple[ObservableTerm, ...]
    holder: tuple[float, float] | None = None
    decay: tuple[float, float] | None = None

    @classmethod
    def constant(cls, c) -> "Observable":
        return cls((ObservableTerm((), Profile.constant(1), c),))

    @property
    def window(self) -> int:
        return _window_length([t.word for t in self.terms])

    def terms_on_window(self, win: Word) -> list[ObservableTerm]:
        return [t for t in self.terms if word_matches_window(t.word, win)]

    def value_on_window(self, win: Word, t, tau):
        u = t / tau
        return sum((term.coeff * term.profile(u) for term in self.terms_on_window(win)), 0 * u)

    def derivative_on_window(self, win: Word, t, tau):
        u = t / tau
        return sum((term.coeff * term.profile.derivative(u) / tau for term in self.terms_on_window(win)), 0 * u)

    def fiber_integral(self, win: Word, tau, t0, t1):
        """Exact integral of A over heights [t0, t1] of a fiber with roof tau."""
        u0, u1 = t0 / tau, t1 / tau
        out = 0 * u0
        for term in self.terms_on_window(win):
            p = term.profile
            out = out + term.coeff * tau * (p.antiderivative(u1) - p.antiderivative(u0))
        return out

    def __call__(self, point: "FlowPoint", roof: RoofFunction):
        tau = roof(point.base)
        return self.value_on_window(window_of(point.base, self.window), point.height, tau)

    def sup_bound(self) -> float:
        return sum(abs(float(t.coeff)) * t.profile.sup_bound() for t in self.terms)

    def has_corrections(self) -> bool:
        return any(len(t.word) > 2 for t in self.terms)


# ---------------------------------------------------------------------------
# flow


@dataclass(frozen=True)
class FlowPoint:
    base: SymbolicSequence
    height: object = 0

    def normalized(self, roof: RoofFunction) -> "FlowPoint":
        return flow(self, 0 * self.height, roof)


def flow(p: FlowPoint, s, roof: RoofFunction) -> FlowPoint:
    """g_s p; crossing a roof shifts the base sequence."""
    base, h = p.base, p.height + s
    while True:
        if h < 0:
            base = shift(base, -1)
            h = h + roof(base)
            continue
        tau = roof(base)
        if h >= tau:
            h = h - tau
            base = shift(base, 1)
            continue
        return FlowPoint(base, h)


def suspension_distance(p: FlowPoint, q: FlowPoint, roof: RoofFunction, theta=DEFAULT_THETA) -> float:
    """min over flow alignments of |height gap| + symbolic distance of the bases."""

    def reps(point: FlowPoint):
        out = [(point.base, point.height)]
        out.append((shift(point.base, 1), point.height - roof(point.base)))
        prev = shift(point.base, -1)
        out.append((prev, point.height + roof(prev)))
        return out

    best = math.inf
    for b1, h1 in reps(p):
        for b2, h2 in reps(q):
            d = abs(float(h1) - float(h2)) + float(symbolic_distance(b1, b2, theta))
            best = min(best, d)
    return best


def adaptive_simpson(f: Callable[[float], float], a: float, b: float, tol: float, max_depth: int = 48) -> float:
    """Adaptive Simpson quadrature with Richardson correction.

    The absolute error estimate of the returned value is below ``tol``;
    :class:`QuadratureError` is raised if the recursion limit is hit first.
    """
    if b == a:
        return 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) * (fa + 4 * fm + fb) / 6

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) * (fa + 4 * flm + fm) / 6
        right = (b - m) * (fm + 4 * frm + fb) / 6
        err = left + right - whole
        if abs(err) <= 15 * tol:
            return left + right + err / 15
        if depth <= 0:
            raise QuadratureError(f"no convergence on [{a}, {b}]")
        return recurse(a, m, fa, flm, fm, left, tol / 2, depth - 1) + recurse(m, b, fm, frm, fb, right, tol / 2, depth - 1)

    return recurse(a, b, fa, fm, fb, whole, tol, max_depth)


def fiber_segments(p: FlowPoint, T, roof: RoofFunction):
    """Split the orbit segment [0, T] at roof crossings.

    Yields ``(base, h0, h1)``: heights h0..h1 inside the fiber over ``base``.
    """
    base, h = p.base, p.height
    remaining = T
    while remaining > 0:
        tau = roof(base)
        step = min(tau - h, remaining)
        yield base, h, h + step
        remaining -= step
        h = 0 * h
        base = shift(base, 1)


def integrate_along_flow(A: Observable, p: FlowPoint, T, roof: RoofFunction, tol: float = 1e-10) -> float:
    """int_0^T A(g_t p) dt by adaptive Simpson on each fiber segment."""
    if T < 0:
        raise ValueError("T must be nonnegative")
    if T == 0:
        return 0.0
    segments = list(fiber_segments(p, T, roof))
    total = 0.0
    for base, h0, h1 in segments:
        tau = float(roof(base))
        win = window_of(base, A.window)
        share = tol * float(h1 - h0) / float(T)
        f = lambda t: float(A.value_on_window(win, t, tau))  # noqa: E731
        try:
            total += adaptive_simpson(f, float(h0), float(h1), max(share, 1e-15))
        except QuadratureError as exc:
            raise QuadratureError(f"segment over {base!r} heights [{h0}, {h1}]: {exc}") from exc
    return total


def exact_orbit_integral(A: Observable, p: FlowPoint, T, roof: RoofFunction):
    """Same integral as :func:`integrate_along_flow` from profile antiderivatives."""
    total = 0 * p.height
    for base, h0, h1 in fiber_segments(p, T, roof):
        total = total + A.fiber_integral(window_of(base, A.window), roof(base), h0, h1)
    return total


# ---------------------------------------------------------------------------
# discretization


@dataclass(frozen=True)
class SectionObservable:
    """Values on the transitions of a recoded system.

    ``code`` recodes the base system into ``window - 1`` blocks so that the
    data is transition-local on ``code.system``.
    """

    code: BlockCode
    values: Mapping[Transition, object]
    decay: tuple[float, float] | None = None

    @classmethod
    def from_mapping(cls, ts: TransitionSystem, values: Mapping[Transition, object]) -> "SectionObservable":
        missing = [e for e in ts.transitions if e not in values]
        if missing:
            raise ValueError(f"no value for transitions {sorted(missing)}")
        return cls(higher_block(ts, 1), {e: values[e] for e in ts.sorted_transitions()})

    @property
    def system(self) -> TransitionSystem:
        return self.code.system

    @property
    def window(self) -> int:
        return self.code.k + 1

    def __getitem__(self, e: Transition):
        return self.values[e]

    def at(self, seq: SymbolicSequence, n: int = 0):
        """Value of the transition traversed at step n of the base sequence."""
        return self.values[self.code.transition_at(seq, n)]

    def on_window(self, win: Word):
        return self.values[self.code.transition_of_word(win)]

    def map(self, fn) -> "SectionObservable":
        return SectionObservable(self.code, {e: fn(e, v) for e, v in self.values.items()}, self.decay)

    def combine(self, other: "SectionObservable", fn) -> "SectionObservable":
        if other.code.system != self.code.system:
            raise ValueError("section observables live on different systems")
        return SectionObservable(self.code, {e: fn(v, other.values[e]) for e, v in self.values.items()}, self.decay)


def common_window(*windows: int) -> int:
    return max((2,) + windows)


def section_roof(roof: RoofFunction, window: int | None = None) -> SectionObservable:
    W = common_window(roof.window, window or 2)
    code = higher_block(roof.system, W - 1)
    values = {}
    for e in code.system.sorted_transitions():
        word = code.word_of_transition(e)
        values[e] = roof.value_on_window(word)
    return SectionObservable(code, values, roof.decay)


def _combined_decay(A: Observable, roof: RoofFunction):
    needs = A.has_corrections() or bool(roof.corrections)
    if not needs:
        return None
    if A.has_corrections() and A.decay is None:
        raise CertificationError("observable has window corrections but no decay constants")
    if roof.corrections and roof.decay is None:
        raise CertificationError("roof has window corrections but no decay constants")
    decays = [d for d in (A.decay, roof.decay) if d is not None]
    C = sum(d[0] for d in decays)
    theta = max(d[1] for d in decays)
    return (C, theta)


def discretize_observable(
    A: Observable, roof: RoofFunction, m=0, tol: float = 1e-10, window: int | None = None
) -> SectionObservable:
    """The return-time integral of A - m over each fiber, as section data.

    Correction lists are finite, so recoding to the longest correction word
    leaves no symbolic tail; profile integrals use exact antiderivatives.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    decay = _combined_decay(A, roof)
    W = common_window(A.window, roof.window, window or 2)
    code = higher_block(roof.system, W - 1)
    values = {}
    for e in code.system.sorted_transitions():
        word = code.word_of_transition(e)
        tau = roof.value_on_window(word)
        values[e] = A.fiber_integral(word, tau, 0 * tau, tau) - m * tau
    return SectionObservable(code, values, decay)


# ---------------------------------------------------------------------------
# metric graphs


def metric_graph(edges: Mapping[str, tuple[str, str, object]]) -> tuple[TransitionSystem, RoofFunction]:
    """Geodesic flow of a compact metric graph.

    ``edges`` maps an edge name to ``(u, v, length)``. States are directed
    edges ``name+`` (u to v) and ``name-`` (v to u); transitions are the
    non-backtracking concatenations, and the roof is the length of the
    edge being traversed.
    """
    heads, tails, lengths, states = {}, {}, {}, []
    for name, (u, v, length) in edges.items():
        for sign, a, b in (("+", u, v), ("-", v, u)):
            s = name + sign
            states.append(s)
            tails[s], heads[s], lengths[s] = a, b, length
    reverse = {s: s[:-1] + ("-" if s.endswith("+") else "+") for s in states}
    pairs = [(x, y) for x in states for y in states if heads[x] == tails[y] and y != reverse[x]]
    ts = TransitionSystem.from_pairs(pairs, states)
    roof = RoofFunction(ts, {(x, y): lengths[x] for x, y in pairs})
    return ts, roof


def empirical_holder_constant(
    A: Observable, roof: RoofFunction, pairs: Sequence[tuple[FlowPoint, FlowPoint]], alpha: float, theta=DEFAULT_THETA
) -> float:
    """sup |A(p) - A(q)| / d(p, q)^alpha over the given pairs."""
    best = 0.0
    for p, q in pairs:
        d = suspension_distance(p, q, roof, theta)
        if d == 0:
            continue
        best = max(best, abs(float(A(p, roof)) - float(A(q, roof))) / d**alpha)
    return best
