"""Extension of the discrete subaction to the whole suspension flow.

Pipeline: stacked section family, nesting levels, multiple transitions,
a smoothing function ``h`` vanishing near every section, flow-box functions
spreading each discrete residual along its box, the rank-inductive gluing
``H'`` and the global subaction ``V``.

Everything orbit-dependent is evaluated in an :class:`OrbitChart`, a finite
window of the orbit through a point that records the fiber starts and the
section hits. Times in a chart are floats measured from the chart's point.
"""

from __future__ import annotations

import bisect
import math
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .ergopt import RatioCertificate, minimal_average
from .sft import (
    DEFAULT_THETA,
    SymbolicSequence,
    Transition,
    TransitionSystem,
    Word,
    enumerate_cycles,
    first_disagreement,
    random_sequence,
    shift,
)
from .subaction import DiscreteSubaction, solve_subaction
from .suspension import (
    FlowPoint,
    Observable,
    RoofFunction,
    SectionObservable,
    adaptive_simpson,
    flow,
    suspension_distance,
    window_of,
)


class SectionError(ValueError):
    """The requested family cannot be certified."""


class SmoothingError(ValueError):
    """Smoothing parameters violate their ordering constraints."""


class CoverError(RuntimeError):
    """No backward hit of the final section set inside the allowed time."""


# ---------------------------------------------------------------------------
# section families


@dataclass(frozen=True)
class Section:
    word: Word
    level: int
    name: str


def _window_in(word: Word, r: int, W: int) -> Word:
    """The length-W window ending at index 1 of a word indexed from -r."""
    return tuple(word[r + 2 - W : r + 2])


@dataclass(frozen=True)
class SectionFamily:
    """Stacked cylinder sections with their return data.

    A section is a cylinder on indices [-r, r] placed at fiber height
    ``level * span / stack``. ``levels[k]`` is the set of section names that
    survive at nesting level k; ``levels[-1]`` is the final section set used
    for the global subaction.
    """

    system: TransitionSystem
    roof: RoofFunction
    radius: int
    stack: int
    span: object
    alpha: float
    theta: float
    sections: tuple[Section, ...]
    graph: TransitionSystem
    return_time: Mapping[Transition, float]
    words: Mapping[Transition, Word]
    tau_low: float
    tau_high: float
    max_rank: int
    max_strict_chain: int
    levels: tuple[frozenset, ...]
    margins: tuple[Mapping[str, float], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "_by_name", {s.name: s for s in self.sections})
        object.__setattr__(self, "_by_key", {(s.word, s.level): s.name for s in self.sections})

    def section(self, name: str) -> Section:
        return self._by_name[name]

    def name_of(self, word: Word, level: int) -> str:
        return self._by_key[(tuple(word), level)]

    def height(self, level: int):
        return level * self.span / self.stack

    def cylinder(self, seq: SymbolicSequence, n: int = 0) -> Word:
        return seq.window(n - self.radius, n + self.radius)

    @property
    def prime(self) -> frozenset:
        return self.levels[-1]

    def active(self, name: str, level: int) -> bool:
        return name in self.levels[min(level, len(self.levels) - 1)]

    def clearance(self, name: str) -> float:
        """Distance from a section to everything outside it.

        Along the flow the nearest other section is ``tau_low`` away. Across
        the flow the nearest other cylinder first differs at the smallest
        radius where the system branches.
        """
        cache = self.__dict__.setdefault("_clearance", {})
        word = self.section(name).word
        if word not in cache:
            r = self.radius
            best = 1.0
            for other in {s.word for s in self.sections}:
                if other == word:
                    continue
                n = next(k for k in range(r + 1) if word[r + k] != other[r + k] or word[r - k] != other[r - k])
                best = min(best, 1.0 if n == 0 else self.theta ** (n - 1))
            cache[word] = best
        return min(self.tau_low, cache[word])

    def summary(self) -> dict:
        return {
            "sections": len(self.sections),
            "radius": self.radius,
            "stack": self.stack,
            "alpha": self.alpha,
            "tau_low": self.tau_low,
            "tau_high": self.tau_high,
            "max_rank": self.max_rank,
            "rank_bound": rank_bound(self.tau_low, self.tau_high),
            "levels": [len(lv) for lv in self.levels],
        }


def rank_bound(tau_low: float, tau_high: float) -> int:
    return math.ceil(2 * tau_high / tau_low - 1e-12)


def _chain_lengths(graph: TransitionSystem, times: Mapping[Transition, float], limit: float, strict: bool) -> int:
    """Longest path whose total time is <= limit (< limit when strict)."""
    best = 0
    succ = {s: graph.successors(s) for s in graph.states}
    tol = 1e-12 * max(1.0, limit)

    def ok(t: float) -> bool:
        return t < limit - tol if strict else t <= limit + tol

    frontier = [(s, 0.0, 0) for s in graph.states]
    while frontier:
        s, t, n = frontier.pop()
        best = max(best, n)
        for j in succ[s]:
            t2 = t + times[(s, j)]
            if ok(t2):
                frontier.append((j, t2, n + 1))
    return best


def build_sections(
    ts: TransitionSystem,
    roof: RoofFunction,
    alpha: float | None = None,
    stack: int = 1,
    radius: int | None = None,
    theta: float = DEFAULT_THETA,
    span=None,
    observable: Observable | None = None,
) -> SectionFamily:
    """Cylinder sections of diameter < alpha, stacked ``stack`` times per fiber."""
    if roof.system != ts:
        raise SectionError("roof lives on a different system")
    if stack < 1:
        raise SectionError("stack must be >= 1")
    span = roof.lower_bound() if span is None else span
    if not 0 < span <= roof.lower_bound():
        raise SectionError("stack span must lie in (0, min roof]")
    W = max(roof.window, observable.window if observable is not None else 2)
    r_min = max(W - 2, 1 if stack > 1 else 0)
    # return times do not depend on the radius once r >= r_min
    tau_low = _min_return(ts, roof, stack, span, r_min)
    if alpha is None:
        alpha = tau_low / 8
    if not alpha < tau_low / 4:
        raise SectionError(f"alpha={alpha} must be < tau_low/4 = {tau_low / 4} to certify disjointness")
    if radius is None:
        r_alpha = 0
        while theta**r_alpha >= alpha:
            r_alpha += 1
        radius = max(r_alpha, r_min)
    elif radius < r_min:
        raise SectionError(f"radius {radius} cannot see the data window (needs >= {r_min})")
    r = radius
    sections = []
    by_key = {}
    for word in ts.words(2 * r + 1):
        for lvl in range(stack):
            name = f"{ts.format_word(word)}@{lvl}"
            sec = Section(word, lvl, name)
            sections.append(sec)
            by_key[(word, lvl)] = name
    pairs, times, words = [], {}, {}
    step = span / stack
    for word in ts.words(2 * r + 1):
        for lvl in range(stack - 1):
            e = (by_key[(word, lvl)], by_key[(word, lvl + 1)])
            pairs.append(e)
            times[e] = float(step)
            words[e] = word
    for J in ts.words(2 * r + 2):
        e = (by_key[(J[:-1], stack - 1)], by_key[(J[1:], 0)])
        pairs.append(e)
        tau = roof.value_on_window(_window_in(J, r, roof.window))
        times[e] = float(tau - (stack - 1) * step)
        words[e] = J
    graph = TransitionSystem.from_pairs(pairs, [s.name for s in sections])
    tau_high = float(roof.upper_bound())
    names = frozenset(s.name for s in sections)
    return SectionFamily(
        system=ts,
        roof=roof,
        radius=r,
        stack=stack,
        span=span,
        alpha=float(alpha),
        theta=theta,
        sections=tuple(sections),
        graph=graph,
        return_time=times,
        words=words,
        tau_low=min(times.values()),
        tau_high=tau_high,
        max_rank=_chain_lengths(graph, times, tau_high, strict=False),
        max_strict_chain=_chain_lengths(graph, times, tau_high, strict=True),
        levels=(names,),
        margins=({},),
    )


def _min_return(ts: TransitionSystem, roof: RoofFunction, stack: int, span, r: int) -> float:
    step = span / stack
    out = float(step) if stack > 1 else math.inf
    for J in ts.words(2 * r + 2):
        out = min(out, float(roof.value_on_window(_window_in(J, r, roof.window)) - (stack - 1) * step))
    return out


# ---------------------------------------------------------------------------
# nesting


def default_margin(fam: SectionFamily, eps: float) -> float:
    """min of half the Lebesgue-type radius eps * exp(-2 tau_high) and eps."""
    return min(eps * math.exp(-2 * fam.tau_high) / 2, eps)


def shrink_subsections(
    fam: SectionFamily, k: int, margin: float | Mapping[str, float] | None = None, eps: float | None = None
) -> SectionFamily:
    """Level k+1 from level k by shrinking every section by its margin.

    Sections are clopen cylinders at isolated heights, so shrinking by a
    margin below the section's clearance leaves it unchanged and a margin at
    or above the clearance empties it.
    """
    if not 0 <= k < len(fam.levels):
        raise ValueError(f"level {k} does not exist")
    if margin is None:
        margin = default_margin(fam, eps if eps is not None else fam.tau_low / 40)
    per = margin if isinstance(margin, Mapping) else {}
    base = 0.0 if isinstance(margin, Mapping) else float(margin)
    if base < 0 or any(v < 0 for v in per.values()):
        raise ValueError("margins must be nonnegative")
    survivors = frozenset(n for n in fam.levels[k] if per.get(n, base) < fam.clearance(n))
    margins = {n: per.get(n, base) for n in fam.levels[k]}
    return replace(fam, levels=fam.levels[: k + 1] + (survivors,), margins=fam.margins[: k + 1] + (margins,))


def thinning_margins(fam: SectionFamily, remove: Sequence[str]) -> dict[str, float]:
    """Margins that empty exactly the listed sections."""
    return {n: fam.clearance(n) * 2 for n in remove}


def nest_levels(fam: SectionFamily, eps: float, thin: str = "alternate") -> SectionFamily:
    """Fill levels 1..max_rank.

    With ``thin == "alternate"`` and a stack of height > 1, the final level
    keeps only bottom copies, and the intermediate levels drop the upper
    copies of every other cylinder. Boxes of the final set then have rank
    >= 2, and both branches of the gluing occur. With ``thin == "none"``
    every level uses the default margin.
    """
    N = max(fam.max_rank, 1)
    out = replace(fam, levels=fam.levels[:1], margins=fam.margins[:1])
    if thin == "none" or fam.stack == 1:
        for k in range(N):
            out = shrink_subsections(out, k, eps=eps)
        return out
    if thin != "alternate":
        raise ValueError(f"unknown thinning {thin!r}")
    words = sorted({s.word for s in fam.sections}, key=lambda w: [fam.system.index(x) for x in w])
    odd = {w for i, w in enumerate(words) if i % 2 == 1}
    mid_remove = [s.name for s in fam.sections if s.level > 0 and s.word in odd]
    top_remove = [s.name for s in fam.sections if s.level > 0]
    small = default_margin(fam, eps)
    for k in range(N):
        remove = top_remove if k == N - 1 else mid_remove
        margins = {n: small for n in out.levels[k]}
        margins.update({n: m for n, m in thinning_margins(fam, remove).items() if n in out.levels[k]})
        out = shrink_subsections(out, k, margins)
    return out


@dataclass
class NestingReport:
    level: int
    containment: bool
    min_margin_gap: float
    cover_failures: list[tuple[str, float]] = field(default_factory=list)
    dropped_pairs: list[tuple[str, str]] = field(default_factory=list)
    lost_pairs: list[tuple[str, str]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.containment and not self.cover_failures and not self.lost_pairs

    def as_dict(self) -> dict:
        return {
            "level": self.level,
            "containment": self.containment,
            "min_margin_gap": self.min_margin_gap,
            "cover_failures": len(self.cover_failures),
            "dropped_pairs": len(self.dropped_pairs),
            "lost_pairs": len(self.lost_pairs),
        }


def random_flow_point(fam: SectionFamily, rng: random.Random) -> FlowPoint:
    seq = random_sequence(fam.system, rng)
    tau = float(fam.roof(seq))
    return FlowPoint(seq, rng.random() * tau)


def backward_hit_time(fam: SectionFamily, p: FlowPoint, allowed: frozenset, limit: float) -> float | None:
    """Time to the most recent hit of a section in ``allowed`` (None past limit)."""
    base, h = p.base, float(p.height)
    back = 0.0
    step = float(fam.span / fam.stack)
    while True:
        word = fam.cylinder(base)
        for lvl in range(fam.stack - 1, -1, -1):
            ht = lvl * step
            if ht <= h and fam.name_of(word, lvl) in allowed:
                t = back + h - ht
                return t if t <= limit + 1e-12 else None
        back += h
        base = shift(base, -1)
        h = float(fam.roof(base))
        if back > limit:
            return None


def check_nesting(fam: SectionFamily, k: int, samples: int = 1000, seed: int = 0) -> NestingReport:
    """Sampled check of containment, cover and preserved intersections at level k+1."""
    upper, lower = fam.levels[k], fam.levels[k + 1]
    margins = fam.margins[k + 1] if k + 1 < len(fam.margins) else {}
    gap = min((fam.clearance(n) - margins.get(n, 0.0) for n in lower), default=math.inf)
    rep = NestingReport(k + 1, lower <= upper, gap)
    rng = random.Random(seed)
    for _ in range(samples):
        p = random_flow_point(fam, rng)
        t = backward_hit_time(fam, p, lower, fam.tau_high)
        if t is None:
            rep.cover_failures.append((repr(p.base), float(p.height)))
    reach = _reachable_within(fam, fam.tau_high)
    for i in sorted(lower):
        for j in sorted(reach[i]):
            if j not in upper:
                continue
            if j not in lower:
                rep.dropped_pairs.append((i, j))
    # every surviving box must still meet some surviving section
    for i in sorted(lower):
        if not any(j in lower for j in reach[i]):
            rep.lost_pairs.append((i, "*"))
    return rep


def _reachable_within(fam: SectionFamily, limit: float) -> dict[str, set]:
    out = {}
    tol = 1e-12 * max(1.0, limit)
    for s in fam.graph.states:
        seen = set()
        stack = [(s, 0.0)]
        while stack:
            v, t = stack.pop()
            for j in fam.graph.successors(v):
                t2 = t + fam.return_time[(v, j)]
                if t2 <= limit + tol:
                    seen.add(j)
                    stack.append((j, t2))
        out[s] = seen
    return out


def cover_check(fam: SectionFamily, samples: int = 1000, seed: int = 0, level: int = 0) -> list:
    """Sampled flow points that fail to reach a level section within tau_high."""
    rng = random.Random(seed)
    bad = []
    for _ in range(samples):
        p = random_flow_point(fam, rng)
        if backward_hit_time(fam, p, fam.levels[level], fam.tau_high) is None:
            bad.append(p)
    return bad


# ---------------------------------------------------------------------------
# multiple transitions


@dataclass(frozen=True)
class MultipleTransition:
    source: str
    target: str
    rank: int
    chains: tuple[tuple[str, ...], ...]
    splits: tuple[tuple[str, int, int], ...]


def multiple_transitions(fam: SectionFamily) -> list[MultipleTransition]:
    """All i => j reachable by chains of total time <= tau_high that hit j
    only at the end; the rank is the longest such chain."""
    g, times = fam.graph, fam.return_time
    tol = 1e-12 * max(1.0, fam.tau_high)
    chains: dict[tuple[str, str], list[tuple[str, ...]]] = {}
    for s in g.states:
        stack = [((s,), 0.0)]
        while stack:
            path, t = stack.pop()
            for j in g.successors(path[-1]):
                t2 = t + times[(path[-1], j)]
                if t2 > fam.tau_high + tol:
                    continue
                new = path + (j,)
                if j not in path[1:]:
                    chains.setdefault((s, j), []).append(new)
                stack.append((new, t2))
    rank = {k: max(len(c) - 1 for c in v) for k, v in chains.items()}
    out = []
    for (i, j), cs in sorted(chains.items()):
        n = rank[(i, j)]
        longest = sorted(c for c in cs if len(c) - 1 == n)
        splits = set()
        for c in longest:
            for pos in range(1, len(c) - 1):
                k = c[pos]
                splits.add((k, rank.get((i, k), pos), rank.get((k, j), len(c) - 1 - pos)))
        out.append(MultipleTransition(i, j, n, tuple(longest), tuple(sorted(splits))))
    return out


# ---------------------------------------------------------------------------
# bump and convolution


class Bump:
    """exp(-1/(1-(u/eps)^2)) normalized to unit mass on (-eps, eps).

    Partial moments use fixed 64-point Gauss-Legendre on [-eps, x], with
    the symmetric complement for x > 0.
    """

    def __init__(self, eps: float) -> None:
        if eps <= 0:
            raise SmoothingError("eps must be positive")
        self.eps = float(eps)
        self._v, self._w = np.polynomial.legendre.leggauss(64)
        raw = self._raw(np.array([0.0]))
        self._z = 2 * raw[0][0]
        self.m2 = 2 * raw[2][0] / self._z

    def _shape(self, u: np.ndarray) -> np.ndarray:
        z = (u / self.eps) ** 2
        out = np.zeros_like(u)
        inside = z < 1
        out[inside] = np.exp(-1.0 / (1.0 - z[inside]))
        return out

    def _raw(self, y: np.ndarray):
        # integrals of u^k shape(u) over [-eps, y], y in [-eps, 0]
        half = (y + self.eps) / 2
        u = half[:, None] * self._v[None, :] + ((y - self.eps) / 2)[:, None]
        f = self._shape(u) * self._w[None, :]
        return (half * f.sum(1), half * (f * u).sum(1), half * (f * u * u).sum(1))

    def __call__(self, u: float) -> float:
        return float(self._shape(np.array([float(u)]))[0] / self._z)

    def moments(self, xs) -> np.ndarray:
        """Rows k = 0, 1, 2 of int_{-eps}^{x} u^k psi(u) du for each x."""
        x = np.clip(np.asarray(xs, dtype=float), -self.eps, self.eps)
        y = -np.abs(x)
        r0, r1, r2 = (a / self._z for a in self._raw(y))
        pos = x > 0
        m0 = np.where(pos, 1.0 - r0, r0)
        m1 = r1
        m2 = np.where(pos, self.m2 - r2, r2)
        return np.vstack([m0, m1, m2])


Piece = tuple  # (p, q, c0, c1, c2): c0 + c1 (t - p) + c2 (t - p)^2 on [p, q]


def convolve_piecewise(pieces: Sequence[Piece], s: float, bump: Bump, left: float = 0.0, right: float = 0.0) -> float:
    """(f * psi)(s) for a piecewise quadratic f, constant outside its pieces."""
    eps = bump.eps
    xs = []
    for p, q, *_ in pieces:
        xs.append(s - q)
        xs.append(s - p)
    if not xs:
        return left if right == left else 0.0
    M = bump.moments(xs)
    total = 0.0
    for k, (p, q, c0, c1, c2) in enumerate(pieces):
        lo, hi = max(s - q, -eps), min(s - p, eps)
        if lo >= hi:
            continue
        d0 = M[0, 2 * k + 1] - M[0, 2 * k]
        d1 = M[1, 2 * k + 1] - M[1, 2 * k]
        d2 = M[2, 2 * k + 1] - M[2, 2 * k]
        w = s - p
        total += (c0 + c1 * w + c2 * w * w) * d0 - (c1 + 2 * c2 * w) * d1 + c2 * d2
    if left:
        # u > s - p0 reaches t < p0
        total += left * (1.0 - M[0, 1])
    if right:
        total += right * M[0, len(xs) - 2]
    return total


def convolve_piecewise_linear(pieces: Sequence[tuple], s: float, bump: Bump) -> float:
    """(phi * psi)(s) for phi given as (p, q, value_at_p, slope) pieces, zero elsewhere."""
    return convolve_piecewise([(p, q, v, b, 0.0) for p, q, v, b in pieces], s, bump)


def tent_pieces(starts: Sequence[float], end: float, scale: float) -> list[Piece]:
    """Sum of tents on (c, end), each of slope +-1, divided by scale."""
    cs = sorted(c for c in starts if c < end)
    if not cs:
        return []
    pts = sorted(set(cs) | {(c + end) / 2 for c in cs} | {end})
    pieces = []
    for a, b in zip(pts, pts[1:]):
        v = sum(max(0.0, min(a - c, end - a)) for c in cs) / scale
        slope = sum((1.0 if a < (c + end) / 2 else -1.0) for c in cs if c <= a) / scale
        pieces.append((a, b, v, slope, 0.0))
    return pieces


def antiderivative_pieces(pieces: Sequence[Piece]) -> tuple[list[Piece], float]:
    out = []
    acc = 0.0
    for p, q, c0, c1, _ in pieces:
        out.append((p, q, acc, c0, c1 / 2))
        L = q - p
        acc += c0 * L + c1 * L * L / 2
    return out, acc


# ---------------------------------------------------------------------------
# smoothing function


@dataclass(frozen=True)
class SmoothingParams:
    eps: float
    delta: float
    tau_low: float
    tau_high: float
    gap_min: float
    half_gap_max: float
    multiplicity: int
    D0: float
    r: float
    lower_bound: float
    lipschitz: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def smoothing_params(fam: SectionFamily, eps: float | None = None, delta: float | None = None) -> SmoothingParams:
    eps = fam.tau_low / 40 if eps is None else float(eps)
    delta = fam.tau_low / 10 if delta is None else float(delta)
    if not (0 < eps < delta):
        raise SmoothingError(f"need 0 < eps < delta, got eps={eps}, delta={delta}")
    L = fam.tau_low - 2 * (delta + eps)
    if L <= 0:
        raise SmoothingError(f"delta + eps = {delta + eps} leaves no room below tau_low/2 = {fam.tau_low / 2}")
    if eps > L / 2:
        raise SmoothingError("eps exceeds half the minimal gap")
    half = (max(fam.return_time.values()) - 2 * (delta + eps)) / 2
    mult = 1 + fam.max_strict_chain
    D0 = mult * half
    r = L / 2
    lower = min(eps**2 / 2, r**2 / 2) / D0
    lip = (2 * mult + 3) / L * math.exp(2 * eps)
    return SmoothingParams(eps, delta, fam.tau_low, fam.tau_high, L, half, mult, D0, r, lower, lip)


@dataclass
class SmoothingFunction:
    """h = sum of flow convolutions of the partition functions with the bump."""

    fam: SectionFamily
    params: SmoothingParams
    bump: Bump

    def chart(self, p: FlowPoint, lo: float = 0.0, hi: float = 0.0) -> "OrbitChart":
        return OrbitChart(self.fam, self, p, lo, hi)

    def __call__(self, p: FlowPoint) -> float:
        return self.chart(p).h(0.0)

    def orbit_integral(self, p: FlowPoint, T: float) -> float:
        return self.chart(p, 0.0, T).h_integral(0.0, T)


def smoothing_h(fam: SectionFamily, eps: float | None = None, delta: float | None = None) -> SmoothingFunction:
    params = smoothing_params(fam, eps, delta)
    return SmoothingFunction(fam, params, Bump(params.eps))


# ---------------------------------------------------------------------------
# orbit charts


class OrbitChart:
    """Fibers and section hits of the orbit of ``p`` around times [lo, hi]."""

    def __init__(self, fam: SectionFamily, smooth: SmoothingFunction, p: FlowPoint, lo: float, hi: float,
                 ext: "GlobalSubaction | None" = None) -> None:
        self.fam = fam
        self.smooth = smooth
        self.ext = ext
        p = p.normalized(fam.roof)
        self.point = p
        pad = (fam.max_rank + 4) * fam.tau_high
        seq = p.base
        roof = fam.roof
        starts = {0: -float(p.height)}
        taus = {0: float(roof(seq, 0))}
        n = 0
        while starts[n] + taus[n] <= hi + pad:
            starts[n + 1] = starts[n] + taus[n]
            n += 1
            taus[n] = float(roof(seq, n))
        n_hi = n
        n = 0
        while starts[n] > lo - pad:
            n -= 1
            taus[n] = float(roof(seq, n))
            starts[n] = starts[n + 1] - taus[n]
        n_lo = n
        self.n_lo = n_lo
        self.fiber_starts = [starts[k] for k in range(n_lo, n_hi + 1)]
        self.fiber_taus = [taus[k] for k in range(n_lo, n_hi + 1)]
        self.seq = seq
        step = float(fam.span / fam.stack)
        self.hit_times: list[float] = []
        self.hit_names: list[str] = []
        for k in range(n_lo, n_hi + 1):
            word = fam.cylinder(seq, k)
            for lvl in range(fam.stack):
                self.hit_times.append(starts[k] + lvl * step)
                self.hit_names.append(fam.name_of(word, lvl))
        self._gaps: dict[int, tuple] = {}
        self._prime = [i for i, nm in enumerate(self.hit_names) if nm in fam.prime]
        self._Aw = None

    # -- fibers and the observable

    def fiber_index(self, s: float) -> int:
        i = bisect.bisect_right(self.fiber_starts, s) - 1
        if i < 0 or s > self.fiber_starts[-1] + self.fiber_taus[-1]:
            raise CoverError("time outside the chart")
        return i

    def fiber_base(self, i: int) -> SymbolicSequence:
        return shift(self.seq, self.n_lo + i)

    def flow_point(self, s: float) -> FlowPoint:
        i = self.fiber_index(s)
        return FlowPoint(self.fiber_base(i), s - self.fiber_starts[i])

    def _A_windows(self):
        if self._Aw is None:
            W = self.ext.A.window
            self._Aw = [window_of(self.seq, W, self.n_lo + i) for i in range(len(self.fiber_starts))]
        return self._Aw

    def A(self, s: float) -> float:
        i = self.fiber_index(s)
        return float(self.ext.A.value_on_window(self._A_windows()[i], s - self.fiber_starts[i], self.fiber_taus[i]))

    def A_integral(self, s0: float, s1: float) -> float:
        """Closed-form integral of A over [s0, s1] from profile antiderivatives."""
        if s1 < s0:
            return -self.A_integral(s1, s0)
        total = 0.0
        i = self.fiber_index(s0)
        while True:
            F, tau = self.fiber_starts[i], self.fiber_taus[i]
            a, b = max(s0, F), min(s1, F + tau)
            if b > a:
                total += float(self.ext.A.fiber_integral(self._A_windows()[i], tau, a - F, b - F))
            if F + tau >= s1:
                return total
            i += 1

    def A_quadrature(self, s0: float, s1: float, tol: float = 1e-11) -> float:
        """Adaptive Simpson integral of A over [s0, s1], split at fiber ends."""
        total = 0.0
        i = self.fiber_index(s0)
        while True:
            F, tau = self.fiber_starts[i], self.fiber_taus[i]
            a, b = max(s0, F), min(s1, F + tau)
            if b > a:
                win = self._A_windows()[i]
                f = lambda t, win=win, F=F, tau=tau: float(self.ext.A.value_on_window(win, t - F, tau))  # noqa: E731
                total += adaptive_simpson(f, a, b, tol * (b - a) / max(s1 - s0, 1e-300))
            if F + tau >= s1:
                return total
            i += 1

    # -- smoothing function

    def _gap(self, m: int):
        g = self._gaps.get(m)
        if g is not None:
            return g
        par = self.smooth.params
        T = self.hit_times
        a = T[m - 1] + par.delta + par.eps
        b = T[m] - par.delta - par.eps
        starts, seen = [], set()
        ell = m
        while True:
            if ell >= len(T):
                raise CoverError("chart too short for the cover look-ahead")
            if T[ell] - par.tau_high >= b:
                break
            nm = self.hit_names[ell]
            if nm not in seen:
                seen.add(nm)
                starts.append(max(T[ell] - par.tau_high, a))
            ell += 1
        phi = tent_pieces(starts, b, par.D0)
        Phi, total = antiderivative_pieces(phi)
        g = (a, b, phi, Phi, total)
        self._gaps[m] = g
        return g

    def _gap_index(self, s: float) -> int:
        m = bisect.bisect_right(self.hit_times, s)
        if m <= 0 or m >= len(self.hit_times):
            raise CoverError("time outside the chart")
        return m

    def h(self, s: float) -> float:
        m = self._gap_index(s)
        a, b, phi, _, _ = self._gap(m)
        eps = self.smooth.bump.eps
        if s <= a - eps or s >= b + eps:
            return 0.0
        return convolve_piecewise(phi, s, self.smooth.bump)

    def _conv_Phi(self, m: int, s: float) -> float:
        a, b, _, Phi, total = self._gap(m)
        eps = self.smooth.bump.eps
        if s <= a - eps:
            return 0.0
        if s >= b + eps:
            return total
        return convolve_piecewise(Phi, s, self.smooth.bump, right=total)

    def h_integral(self, s0: float, s1: float) -> float:
        if s1 < s0:
            return -self.h_integral(s1, s0)
        m0, m1 = self._gap_index(s0), self._gap_index(s1)
        return sum(self._conv_Phi(m, s1) - self._conv_Phi(m, s0) for m in range(m0, m1 + 1))

    def h_quadrature(self, s0: float, s1: float, tol: float = 1e-12) -> float:
        """Adaptive Simpson of h over the supports inside [s0, s1]."""
        eps = self.smooth.bump.eps
        total = 0.0
        for m in range(self._gap_index(s0), self._gap_index(s1) + 1):
            a, b, *_ = self._gap(m)
            lo, hi = max(s0, a - eps), min(s1, b + eps)
            if hi > lo:
                total += adaptive_simpson(self.h, lo, hi, tol)
        return total

    # -- flow-box functions and gluing

    def residual(self, i: int, j: int) -> float:
        res = self.ext.residuals
        return sum(res[(self.hit_names[k], self.hit_names[k + 1])] for k in range(i, j))

    def _split(self, i: int, j: int) -> int | None:
        """First intermediate hit active at the level of a rank j - i box."""
        if j - i < 2:
            return None
        for k in range(i + 1, j):
            if self.fam.active(self.hit_names[k], j - i - 1):
                return k
        return None

    def H0(self, i: int, j: int, s: float) -> float:
        R = self.residual(i, j)
        if R == 0:
            return 0.0
        I = self.h_integral(self.hit_times[i], self.hit_times[j])
        if I < self.smooth.params.lower_bound * (1 - 1e-9):
            raise SmoothingError(f"box integral of h {I} below its lower bound")
        return R * self.h(s) / I

    def H0_integral(self, i: int, j: int, s0: float, s1: float) -> float:
        R = self.residual(i, j)
        if R == 0:
            return 0.0
        I = self.h_integral(self.hit_times[i], self.hit_times[j])
        return R * self.h_integral(s0, s1) / I

    def weights(self, i: int, j: int) -> tuple[float, float]:
        """(p, q) for the box between hits i and j.

        p is a clamped ramp of clearance over margin at the first active
        intermediate hit; with all-or-nothing shrinking it is 0 or 1.
        """
        k = self._split(i, j)
        if k is None:
            return 0.0, 1.0
        nm = self.hit_names[k]
        level = min(j - i - 1, len(self.fam.levels) - 1)
        margin = self.fam.margins[level].get(nm, 0.0)
        clear = self.fam.clearance(nm)
        p = 1.0 if margin <= 0 else min(1.0, max(0.0, (clear - margin) / margin))
        return p, 1.0 - p

    def H_chain(self, i: int, j: int, s: float) -> float:
        k = self._split(i, j)
        if k is None:
            return self.H0(i, j, s)
        p, q = self.weights(i, j)
        sub = self.H_chain(i, k, s) if s < self.hit_times[k] else self.H_chain(k, j, s)
        return p * sub + (q * self.H0(i, j, s) if q else 0.0)

    def H_chain_integral(self, i: int, j: int, s0: float, s1: float) -> float:
        k = self._split(i, j)
        if k is None:
            return self.H0_integral(i, j, s0, s1)
        p, q = self.weights(i, j)
        Tk = self.hit_times[k]
        sub = 0.0
        if s0 < Tk:
            sub += self.H_chain_integral(i, k, s0, min(s1, Tk))
        if s1 > Tk:
            sub += self.H_chain_integral(k, j, max(s0, Tk), s1)
        return p * sub + (q * self.H0_integral(i, j, s0, s1) if q else 0.0)

    def prime_bracket(self, s: float) -> tuple[int, int]:
        """Indices of the last final-set hit at or before s and the next one after."""
        T = self.hit_times
        pos = bisect.bisect_right([T[i] for i in self._prime], s + 1e-12) - 1
        if pos < 0 or pos + 1 >= len(self._prime):
            raise CoverError("no final-set hit around this time in the chart")
        k0, k1 = self._prime[pos], self._prime[pos + 1]
        if s - T[k0] > 2 * self.fam.tau_high + 1e-12:
            raise CoverError(f"backward hitting time {s - T[k0]} exceeds 2 tau_high")
        return k0, k1

    def H(self, s: float) -> float:
        k0, k1 = self.prime_bracket(s)
        return self.H_chain(k0, k1, s)

    def H_integral(self, s0: float, s1: float) -> float:
        if s1 < s0:
            return -self.H_integral(s1, s0)
        total = 0.0
        k0, k1 = self.prime_bracket(s0)
        while True:
            a, b = max(s0, self.hit_times[k0]), min(s1, self.hit_times[k1])
            if b > a:
                total += self.H_chain_integral(k0, k1, a, b)
            if self.hit_times[k1] >= s1:
                return total
            k0, k1 = self.prime_bracket(self.hit_times[k1])

    # -- global subaction

    def V(self, s: float, charts_back: int = 0) -> float:
        """V at time s using the final-set hit ``charts_back`` boxes earlier."""
        k0, _ = self.prime_bracket(s)
        pos = self._prime.index(k0) - charts_back
        if pos < 0:
            raise CoverError("chart too short for the requested backward hit")
        start = self._prime[pos]
        T0 = self.hit_times[start]
        ext = self.ext
        return (
            ext.values[self.hit_names[start]]
            + self.A_integral(T0, s)
            - ext.m * (s - T0)
            - self.H_integral(T0, s)
        )

    def section_hits(self, lo: float, hi: float) -> list[tuple[float, str]]:
        return [(t, n) for t, n in zip(self.hit_times, self.hit_names) if lo <= t <= hi]


# ---------------------------------------------------------------------------
# section-level discrete data


@dataclass
class SectionData:
    cost: SectionObservable
    time: SectionObservable
    cert: RatioCertificate
    sub: DiscreteSubaction
    base_m: float | None

    @property
    def m_gap(self) -> float | None:
        return None if self.base_m is None else abs(float(self.cert.m) - self.base_m)


def section_data(fam: SectionFamily, A: Observable, base_m=None) -> SectionData:
    """Fiber integrals of A between consecutive section hits, with m and the subaction."""
    r, C, step = fam.radius, fam.stack, fam.span / fam.stack
    W = max(A.window, fam.roof.window)
    if W - 2 > r:
        raise SectionError("section radius too small for the observable window")
    cost = {}
    for e, word in fam.words.items():
        lvl = fam.section(e[0]).level
        tau = fam.roof.value_on_window(_window_in(word, r, fam.roof.window))
        win = _window_in(word, r, A.window)
        t0 = lvl * step
        t1 = (lvl + 1) * step if lvl < C - 1 else tau
        cost[e] = float(A.fiber_integral(win, tau, t0, t1))
    g = fam.graph
    cost_obs = SectionObservable.from_mapping(g, cost)
    time_obs = SectionObservable.from_mapping(g, dict(fam.return_time))
    cert = minimal_average(cost_obs, time_obs, method="howard")
    sub = solve_subaction(cert, cost_obs, time_obs)
    return SectionData(cost_obs, time_obs, cert, sub, None if base_m is None else float(base_m))


# ---------------------------------------------------------------------------
# flow-box functions, gluing and the global subaction


@dataclass
class FlowBoxFunctions:
    """H0 on every box: the box residual spread in proportion to h."""

    fam: SectionFamily
    smooth: SmoothingFunction
    residuals: Mapping[Transition, float]

    def chart(self, p: FlowPoint, lo: float = 0.0, hi: float = 0.0) -> OrbitChart:
        return OrbitChart(self.fam, self.smooth, p, lo, hi, self)


def flowbox_H0(fam: SectionFamily, data: SectionData, smooth: SmoothingFunction, tol: float = 1e-9) -> FlowBoxFunctions:
    res = {e: float(v) for e, v in data.sub.residuals.items()}
    low = min(res.values())
    if low < -tol:
        raise ValueError(f"discrete residual {low} below -tol: subaction invalid")
    return FlowBoxFunctions(fam, smooth, res)


@dataclass
class GluedFunction(FlowBoxFunctions):
    """H' on the boxes of the final section set, glued rank by rank."""

    def value(self, p: FlowPoint) -> float:
        return self.chart(p).H(0.0)


def inductive_extend(fam: SectionFamily, H0: FlowBoxFunctions) -> GluedFunction:
    need = max(fam.max_rank, 1) + 1
    if len(fam.levels) < need and fam.stack > 1:
        raise SectionError(f"nesting has {len(fam.levels)} levels, rank {fam.max_rank} needs {need}")
    for k in range(len(fam.levels) - 1):
        if not fam.levels[k + 1] <= fam.levels[k]:
            raise SectionError(f"level {k + 1} is not nested in level {k}")
    return GluedFunction(fam, H0.smooth, H0.residuals)


@dataclass
class GlobalSubaction(GluedFunction):
    A: Observable = None
    m: float = 0.0
    values: Mapping[str, float] = None

    def V(self, p: FlowPoint) -> float:
        return self.chart(p).V(0.0)

    def H(self, p: FlowPoint) -> float:
        return self.chart(p).H(0.0)


def global_V(fam: SectionFamily, Hp: GluedFunction, data: SectionData, A: Observable) -> GlobalSubaction:
    return GlobalSubaction(
        fam, Hp.smooth, Hp.residuals, A=A, m=float(data.cert.m),
        values={s: float(v) for s, v in data.sub.values.items()},
    )


def build_extension(
    ts: TransitionSystem,
    roof: RoofFunction,
    A: Observable,
    *,
    stack: int = 2,
    alpha: float | None = None,
    eps: float | None = None,
    delta: float | None = None,
    thin: str = "alternate",
    base_m=None,
    radius: int | None = None,
) -> tuple[GlobalSubaction, SectionData]:
    """Sections, nesting, smoothing, H0, H' and V in one call."""
    fam = build_sections(ts, roof, alpha=alpha, stack=stack, observable=A, radius=radius)
    params = smoothing_params(fam, eps, delta)
    fam = nest_levels(fam, params.eps, thin)
    smooth = SmoothingFunction(fam, params, Bump(params.eps))
    data = section_data(fam, A, base_m)
    H0 = flowbox_H0(fam, data, smooth)
    Hp = inductive_extend(fam, H0)
    return global_V(fam, Hp, data, A), data


# ---------------------------------------------------------------------------
# verification


def random_section_point(fam: SectionFamily, rng: random.Random, allowed: frozenset | None = None):
    """A random point on a section (in ``allowed`` if given) and its name."""
    allowed = allowed if allowed is not None else fam.levels[0]
    for _ in range(10_000):
        seq = random_sequence(fam.system, rng)
        lvl = rng.randrange(fam.stack)
        name = fam.name_of(fam.cylinder(seq), lvl)
        if name in allowed:
            return FlowPoint(seq, fam.height(lvl)), name
    raise CoverError("could not sample a point on the requested sections")


@dataclass
class Check:
    name: str
    passed: bool
    residual: float
    tol: float

    def as_dict(self) -> dict:
        return {"name": self.name, "pass": bool(self.passed), "residual": _clean(self.residual), "tol": self.tol}


def _clean(x: float) -> float:
    return float(f"{float(x):.12g}") + 0.0


def check_smoothing(smooth: SmoothingFunction, samples: int = 200, seed: int = 0) -> list[Check]:
    """Support near sections, lower bound on one return, Lipschitz along pairs."""
    fam, par = smooth.fam, smooth.params
    rng = random.Random(seed)
    worst_support = 0.0
    worst_lower = math.inf
    for _ in range(samples):
        p, _ = random_section_point(fam, rng)
        t = (2 * rng.random() - 1) * par.delta * (1 - 1e-9)
        ch = smooth.chart(p, -par.delta, par.tau_high)
        worst_support = max(worst_support, abs(ch.h(t)))
        T1 = ch.hit_times[bisect.bisect_right(ch.hit_times, 1e-12)]
        worst_lower = min(worst_lower, ch.h_integral(0.0, T1))
    rng = random.Random(seed + 1)
    worst_lip = 0.0
    depth = fam.radius + 2 * math.ceil((fam.max_rank + 5) * par.tau_high / par.tau_low)
    for _ in range(samples):
        x = random_flow_point(fam, rng)
        ch = smooth.chart(x, -1.0, 1.0)
        ds = rng.choice([1e-3, 1e-2, 1e-1]) * rng.random()
        y = flow(x, ds, fam.roof)
        d = suspension_distance(x, y, fam.roof, fam.theta)
        if d > 0:
            worst_lip = max(worst_lip, abs(ch.h(ds) - ch.h(0.0)) / d)
        # a transverse partner agreeing with x beyond the chart's reach
        z = _far_perturbation(x.base, depth, fam.system)
        if z is not None:
            zp = FlowPoint(z, x.height)
            d2 = suspension_distance(x, zp, fam.roof, fam.theta)
            gap = abs(smooth(zp) - ch.h(0.0))
            if d2 > 0:
                worst_lip = max(worst_lip, gap / d2)
    return [
        Check("h_vanishes_near_sections", worst_support == 0.0, worst_support, 0.0),
        Check("h_return_integral_lower_bound", worst_lower >= par.lower_bound, par.lower_bound - worst_lower, 0.0),
        Check("h_lipschitz", worst_lip <= par.lipschitz, worst_lip - par.lipschitz, 0.0),
    ]


def _far_perturbation(seq: SymbolicSequence, depth: int, ts: TransitionSystem) -> SymbolicSequence | None:
    """A sequence equal to ``seq`` on [-depth, depth] but different further out."""
    core = seq.window(-depth, depth)
    cycles = [c.symbols for c in enumerate_cycles(ts, len(ts.states), "none")]
    for left in cycles:
        if not ts.allows(left[-1], core[0]):
            continue
        for right in cycles:
            if not ts.allows(core[-1], right[0]):
                continue
            cand = SymbolicSequence(left, core, right, depth)
            if first_disagreement(cand, seq) is not None:
                return cand
    return None


def check_integrability(ext: GlobalSubaction, samples: int = 200, seed: int = 0, tol: float = 1e-7) -> Check:
    """Residual of int_0^{tau'} (A - m) - (V(next) - V(here)) - int_0^{tau'} H' on final-set points.

    Both integrals are adaptive Simpson on pointwise values, independent of
    the closed forms used to build V.
    """
    fam = ext.fam
    rng = random.Random(seed)
    worst = 0.0
    for _ in range(samples):
        p, name = random_section_point(fam, rng, fam.prime)
        ch = ext.chart(p, 0.0, 2 * fam.tau_high)
        k0, k1 = ch.prime_bracket(0.0)
        T1 = ch.hit_times[k1]
        lhs = ch.A_quadrature(0.0, T1) - ext.m * T1 - (ext.values[ch.hit_names[k1]] - ext.values[name])
        rhs = _H_quadrature(ch, k0, k1)
        worst = max(worst, abs(lhs - rhs))
    return Check("integrability", worst <= tol, worst, tol)


def _H_quadrature(ch: OrbitChart, k0: int, k1: int, tol: float = 1e-9) -> float:
    eps = ch.smooth.bump.eps
    total = 0.0
    for m in range(k0 + 1, k1 + 1):
        a, b, *_ = ch._gap(m)
        total += adaptive_simpson(ch.H, a - eps, b + eps, tol)
    return total


def max_rank_in_boxes(ext: GlobalSubaction, samples: int = 50, seed: int = 0) -> int:
    rng = random.Random(seed)
    best = 0
    for _ in range(samples):
        p, _ = random_section_point(ext.fam, rng, ext.fam.prime)
        ch = ext.chart(p, 0.0, 2 * ext.fam.tau_high)
        k0, k1 = ch.prime_bracket(0.0)
        best = max(best, k1 - k0)
    return best


def witness_orbit(ext: GlobalSubaction, data: SectionData) -> FlowPoint:
    """A point on the periodic orbit of the section-level witness cycle."""
    fam = ext.fam
    syms = [fam.section(n).word[fam.radius] for n in data.cert.witness.symbols if fam.section(n).level == 0]
    first = next(n for n in data.cert.witness.symbols if fam.section(n).level == 0)
    word = tuple(syms)
    seq = SymbolicSequence.periodic(word)
    # align so the chart's first fiber carries the witness section
    for k in range(len(word)):
        cand = shift(seq, k)
        if fam.name_of(fam.cylinder(cand), 0) == first:
            return FlowPoint(cand, fam.height(0))
    return FlowPoint(seq, fam.height(0))


@dataclass
class MainTheoremReport:
    checks: list[Check]
    inequality_min: float
    witness_max: float
    witness_H_max: float
    derivative_max: float
    richardson_ok: bool
    K1: float
    chart_gap: float

    def as_dict(self) -> dict:
        return {
            "inequality_min": _clean(self.inequality_min),
            "witness_max": _clean(self.witness_max),
            "witness_H_max": _clean(self.witness_H_max),
            "derivative_max": _clean(self.derivative_max),
            "richardson_ok": self.richardson_ok,
            "K1": _clean(self.K1),
            "chart_gap": _clean(self.chart_gap),
        }


def verify_main_theorem(
    ext: GlobalSubaction,
    data: SectionData,
    samples: int = 500,
    T_range: tuple[float, float] = (0.0, 5.0),
    fd_step: float = 1e-5,
    fd_samples: int = 100,
    seed: int = 0,
    tol: float = 1e-6,
    deriv_tol: float = 1e-4,
) -> MainTheoremReport:
    fam = ext.fam
    rng = random.Random(seed)
    worst = math.inf
    chart_gap = 0.0
    for _ in range(samples):
        x = random_flow_point(fam, rng)
        T = T_range[0] + (T_range[1] - T_range[0]) * rng.random()
        ch = ext.chart(x, 0.0, T)
        intA = ch.A_quadrature(0.0, T)
        Vx = ch.V(0.0)
        VT = ext.V(flow(x, T, fam.roof))
        worst = min(worst, intA - (VT - Vx + ext.m * T))
        chart_gap = max(chart_gap, abs(ch.V(0.0, charts_back=1) - Vx))
    # witness orbit: equality and H' = 0
    w = witness_orbit(ext, data)
    wmax, wH = 0.0, 0.0
    ch = ext.chart(w, 0.0, T_range[1])
    for k in range(20):
        T = T_range[1] * (k + 1) / 20
        r = ch.A_quadrature(0.0, T) - (ch.V(T) - ch.V(0.0) + ext.m * T)
        wmax = max(wmax, abs(r))
        wH = max(wH, abs(ch.H(T * 0.987)))
    # derivative identity away from fiber ends
    rng = random.Random(seed + 7)
    dmax, K1 = 0.0, 0.0
    rich_ok = True
    noise = 1e-9
    done = 0
    while done < fd_samples:
        x = random_flow_point(fam, rng)
        ch = ext.chart(x, -1.0, 1.0)
        i = ch.fiber_index(0.0)
        F, tau = ch.fiber_starts[i], ch.fiber_taus[i]
        if min(-F, F + tau) < 1e-2:
            continue
        target = ch.A(0.0) - ext.m - ch.H(0.0)

        def fd(hh: float) -> float:
            return (ch.V(hh) - ch.V(-hh)) / (2 * hh)

        e1 = abs(fd(2e-3) - target)
        e2 = abs(fd(1e-3) - target)
        if e2 > e1 / 2 + noise / 1e-3:
            rich_ok = False
        K1 = max(K1, e1 / 2e-3)
        dmax = max(dmax, abs(fd(fd_step) - target))
        done += 1
    checks = [
        Check("main_inequality", worst >= -tol, -worst, tol),
        Check("witness_equality", wmax <= tol, wmax, tol),
        Check("witness_H_zero", wH <= tol, wH, tol),
        Check("derivative_identity", dmax <= deriv_tol, dmax, deriv_tol),
        Check("derivative_richardson", rich_ok, K1, 0.0),
        Check("chart_independence", chart_gap <= 2e-9, chart_gap, 2e-9),
    ]
    return MainTheoremReport(checks, worst, wmax, wH, dmax, rich_ok, K1, chart_gap)


def emit_profile(ext: GlobalSubaction, p: FlowPoint, T: float, points: int = 200) -> list[tuple[float, ...]]:
    """Rows (t, A, V, H', dV/dt) along the orbit of p."""
    ch = ext.chart(p, -0.01, T + 0.01)
    rows = []
    hh = 1e-5
    for k in range(points + 1):
        t = T * k / points
        v = ch.V(t)
        dv = (ch.V(t + hh) - ch.V(t - hh)) / (2 * hh)
        rows.append((t, ch.A(t), v, ch.H(t), dv))
    return rows
