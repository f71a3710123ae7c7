"""Discrete subaction on section states and its symbolic corrections.

The discrete subaction is the min-plus eigenvector of the normalized costs
``a - m t``. It is computed by single-source Bellman-Ford from the first
state of the witness cycle. The stable correction and the Busemann delay
are finite sums for data with finite correction lists. Their geometric tail
estimates are still recorded, so convergence can be inspected.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

from .ergopt import RatioCertificate
from .sft import (
    DEFAULT_THETA,
    SymbolicSequence,
    Transition,
    TransitionSystem,
    enumerate_cycles,
    first_disagreement,
    shift,
    splice,
    symbolic_distance,
)
from .suspension import RoofFunction, SectionObservable


class SubactionError(ValueError):
    """Stale certificate or violated precondition."""


class StableSetError(ValueError):
    """The second sequence does not share the forward itinerary of the first."""


# ---------------------------------------------------------------------------
# discrete subaction


@dataclass(frozen=True)
class DiscreteSubaction:
    values: Mapping[str, object]
    residuals: Mapping[Transition, object]
    m: object
    witness: tuple[str, ...]
    system: TransitionSystem

    def __getitem__(self, state: str):
        return self.values[state]

    def as_dict(self) -> dict:
        return {
            "values": {s: float(v) for s, v in self.values.items()},
            "residual_min": float(min(self.residuals.values())),
        }


def _reduced(cost: SectionObservable, time: SectionObservable, m) -> dict[Transition, object]:
    return {e: cost[e] - m * time[e] for e in cost.system.sorted_transitions()}


def solve_subaction(cert: RatioCertificate, cost: SectionObservable, time: SectionObservable) -> DiscreteSubaction:
    """Shortest normalized action from the witness cycle, shifted so min = 0."""
    ts = cost.system
    m = cert.m
    c = _reduced(cost, time, m)
    edges = ts.sorted_transitions()
    source = cert.witness.symbols[0]
    if source not in ts.states:
        raise SubactionError("certificate witness does not live on this system")
    dist: dict[str, object] = {source: 0 * m}
    # lowest-index predecessor wins ties because edges are scanned in index order
    for _ in range(len(ts.states)):
        changed = False
        for e in edges:
            i, j = e
            if i not in dist:
                continue
            cand = dist[i] + c[e]
            if j not in dist or cand < dist[j]:
                dist[j] = cand
                changed = True
        if not changed:
            break
    else:
        tol = 0 if isinstance(m, Fraction) else 1e-12
        for e in edges:
            i, j = e
            if dist[i] + c[e] < dist[j] - tol:
                raise SubactionError("negative cycle in reduced costs: certificate is stale")
    if len(dist) != len(ts.states):
        raise SubactionError("some states are unreachable from the witness")
    low = min(dist.values())
    values = {s: dist[s] - low for s in ts.states}
    residuals = {e: c[e] - (values[e[1]] - values[e[0]]) for e in edges}
    return DiscreteSubaction(values, residuals, m, cert.witness.symbols, ts)


@dataclass
class SubactionReport:
    residual_min: object
    witness_max: object
    bellman_max: object
    violations: list[tuple[Transition, object]] = field(default_factory=list)
    tol: float = 1e-9

    @property
    def passed(self) -> bool:
        return not self.violations and abs(self.witness_max) <= self.tol and self.bellman_max <= self.tol


def verify_discrete_subaction(
    values: Mapping[str, object],
    cost: SectionObservable,
    time: SectionObservable,
    m,
    witness: Sequence[str],
    tol: float = 1e-9,
) -> SubactionReport:
    """Recompute every residual a - m t - (V(j) - V(i)) from scratch."""
    ts = cost.system
    c = _reduced(cost, time, m)
    res = {e: c[e] - values[e[1]] + values[e[0]] for e in c}
    violations = [(e, r) for e, r in res.items() if r < -tol]
    n = len(witness)
    wit = [res[(witness[k], witness[(k + 1) % n])] for k in range(n)]
    bellman = 0
    for j in ts.states:
        best = min(values[i] + c[(i, j)] for i in ts.predecessors(j))
        bellman = max(bellman, abs(values[j] - best))
    return SubactionReport(min(res.values()), max(wit, key=abs), bellman, violations, tol)


# ---------------------------------------------------------------------------
# stable correction and Busemann delay


@dataclass(frozen=True)
class SeriesResult:
    """Partial sums of a stable-set series with their tail estimates."""

    value: object
    partial_sums: tuple
    tail_bounds: tuple[float, ...]
    exact: bool

    @property
    def tail_ratios(self) -> list[float]:
        t = self.tail_bounds
        return [t[k + 1] / t[k] for k in range(len(t) - 1) if t[k] > 0]


def in_stable_set(omega: SymbolicSequence, eta: SymbolicSequence) -> bool:
    """Syntactic test: eta_k == omega_k for every k >= 0."""
    reach = max(omega.right_start, eta.right_start, 0) + math.lcm(len(omega.right), len(eta.right))
    return all(omega[k] == eta[k] for k in range(reach + 1))


def _series(
    term: Callable[[int], object], window: int, decay, tol: float, min_terms: int = 0
) -> SeriesResult:
    """Sum term(n) for n >= 0 where term(n) == 0 once n >= window - 2.

    The tail bound after N terms is 2 C theta**(N + 3) / (1 - theta)**2; only
    correction words longer than n + 2 can see the differing past at step n.
    """
    C, theta = decay if decay is not None else (0.0, DEFAULT_THETA)
    exact_from = max(window - 2, 0)
    total = None
    sums, tails = [], []
    n = 0
    while True:
        v = term(n)
        total = v if total is None else total + v
        sums.append(total)
        tails.append(2 * C * theta ** (n + 4) / (1 - theta) ** 2)
        n += 1
        # terms past exact_from vanish identically, so the sum is exact there
        if n >= max(exact_from, min_terms):
            break
    return SeriesResult(total, tuple(sums), tuple(tails), True)


def stable_correction(
    cost: SectionObservable, omega: SymbolicSequence, eta: SymbolicSequence, tol: float = 1e-12, min_terms: int = 0
) -> SeriesResult:
    """Sum over n >= 0 of cost(sigma^n eta) - cost(sigma^n omega)."""
    if not in_stable_set(omega, eta):
        raise StableSetError("eta does not share the forward itinerary of omega")
    return _series(lambda n: cost.at(eta, n) - cost.at(omega, n), cost.window, cost.decay, tol, min_terms)


def busemann_delay(
    roof: RoofFunction, omega: SymbolicSequence, eta: SymbolicSequence, tol: float = 1e-12, min_terms: int = 0
) -> SeriesResult:
    """Limit of tau_n(eta) - tau_n(omega) along the stable set."""
    if not in_stable_set(omega, eta):
        raise StableSetError("eta does not share the forward itinerary of omega")
    return _series(lambda n: roof(eta, n) - roof(omega, n), roof.window, roof.decay, tol, min_terms)


def check_cocycle(roof: RoofFunction, omega: SymbolicSequence, eta: SymbolicSequence, n: int, tol: float = 1e-12):
    """|b(w, e) + tau_n(w) - b(s^n w, s^n e) - tau_n(e)|, each delay summed independently."""
    lhs = busemann_delay(roof, omega, eta, tol).value + roof.birkhoff(omega, n)
    rhs = busemann_delay(roof, shift(omega, n), shift(eta, n), tol).value + roof.birkhoff(eta, n)
    return abs(lhs - rhs)


def bracket(omega: SymbolicSequence, zeta: SymbolicSequence) -> SymbolicSequence:
    """Past of zeta joined to the future of omega."""
    if omega[0] != zeta[0]:
        raise ValueError(f"origin symbols differ: {omega[0]!r} vs {zeta[0]!r}")
    return splice(zeta, omega)


# ---------------------------------------------------------------------------
# infimum formula


class InfimumSubaction:
    """The subaction as an infimum over pasts, evaluated on sequences.

    The infimum over backward orbits reduces to free-start shortest paths
    ``D`` on the recoded graph (the empty path is allowed). The value at
    omega is the minimum over recoded states s ending in omega_0 of
    ``D(s) + stable_correction(omega, eta_s)``, where eta_s has the past
    spelled by s and the future of omega. The correction is taken on the
    normalized cost, i.e. the stable correction of the cost minus m times
    the Busemann delay of the return time.
    """

    def __init__(self, cost: SectionObservable, time: SectionObservable, m) -> None:
        if time.code.system != cost.code.system:
            raise SubactionError("cost and time must share one recoding")
        self.cost = cost
        self.time = time
        self.m = m
        self.code = cost.code
        ts = cost.system
        c = _reduced(cost, time, m)
        dist = {s: 0 * m for s in ts.states}
        eps = 0 if isinstance(m, Fraction) else 1e-12
        for _ in range(len(ts.states) + 1):
            changed = False
            for e in ts.sorted_transitions():
                cand = dist[e[0]] + c[e]
                if cand < dist[e[1]] - eps:
                    dist[e[1]] = cand
                    changed = True
            if not changed:
                break
        else:
            raise SubactionError("negative cycle in reduced costs")
        self.free_start = dist
        k = self.code.k
        self._ending: dict[str, list[str]] = {}
        for name, word in self.code.words.items():
            self._ending.setdefault(word[-1], []).append(name)
        self.k = k

    @property
    def window(self) -> int:
        """Values depend on omega only through indices in [-(W-2), W-2]."""
        return self.cost.window

    def eta_for(self, omega: SymbolicSequence, state: str) -> SymbolicSequence:
        """omega with its past replaced by one ending in the word of ``state``."""
        word = self.code.words[state]
        ts = self.code.base
        past = SymbolicSequence(_back_fill(ts, word[0]), word, _forward_fill(ts, word[-1]), len(word) - 1)
        return splice(past, omega)

    def __call__(self, omega: SymbolicSequence):
        best = None
        for s in self._ending[omega[0]]:
            val = self.free_start[s]
            if self.k > 1:
                eta = self.eta_for(omega, s)
                # the roof moves too, so the delay enters with weight -m
                val = (val + stable_correction(self.cost, omega, eta).value
                       - self.m * stable_correction(self.time, omega, eta).value)
            if best is None or val < best:
                best = val
        return best


def infimum_inequality_min(sub: InfimumSubaction, sequences: Iterable[SymbolicSequence]) -> float:
    """min over omega of a(omega) - m t(omega) - (V(sigma omega) - V(omega))."""
    worst = math.inf
    for w in sequences:
        r = sub.cost.at(w) - sub.m * sub.time.at(w) - (sub(shift(w, 1)) - sub(w))
        worst = min(worst, float(r))
    return worst


def eventually_periodic_sequences(ts: TransitionSystem, max_period: int = 4) -> list[SymbolicSequence]:
    """Periodic sequences of period <= max_period at every origin, plus all
    admissible splices of two of them at index 0."""
    periodic = []
    for c in enumerate_cycles(ts, max_period, "rotation"):
        if not c.primitive:
            continue
        for r in range(len(c)):
            periodic.append(SymbolicSequence.periodic(c.symbols, r))
    out = list(periodic)
    for x, y in itertools.product(periodic, repeat=2):
        if ts.allows(x[-1], y[0]) and first_disagreement(x, y) is not None:
            z = splice(x, y)
            if z != x and z != y:
                out.append(z)
    uniq: list[SymbolicSequence] = []
    for s in out:
        if all(first_disagreement(s, u) is not None for u in uniq):
            uniq.append(s)
    return uniq


@dataclass
class HolderWitness:
    beta: float
    constant: float
    empirical_constant: float
    pairs: list[tuple[float, float]]
    violations: int

    def as_dict(self) -> dict:
        return {
            "beta": self.beta,
            "constant": self.constant,
            "empirical_constant": self.empirical_constant,
            "pairs": len(self.pairs),
            "violations": self.violations,
        }


def holder_exponent(tau_low: float, tau_high: float) -> float:
    """beta = contraction / (expansion bound + contraction) with rates
    (-tau_low, tau_low, 2 tau_high)."""
    return tau_low / (2 * tau_high + tau_low)


def holder_estimate(
    evaluator: Callable[[SymbolicSequence], object],
    sequences: Iterable[SymbolicSequence],
    beta: float,
    window: int,
    theta: float = DEFAULT_THETA,
    oscillation: float | None = None,
) -> HolderWitness:
    """Check |V(x) - V(y)| <= K d(x, y)**beta on every same-origin pair.

    K = osc(V) * theta**(-beta * max(W - 3, 0)): V only sees indices within
    W - 2 of the origin, so any pair it separates is at distance at least
    theta**(W - 3).
    """
    seqs = list(sequences)
    vals = [float(evaluator(s)) for s in seqs]
    osc = oscillation if oscillation is not None else (max(vals) - min(vals) if vals else 0.0)
    K = osc * theta ** (-beta * max(window - 3, 0))
    pairs = []
    emp = 0.0
    bad = 0
    for a, b in itertools.combinations(range(len(seqs)), 2):
        x, y = seqs[a], seqs[b]
        if x[0] != y[0]:
            continue
        d = float(symbolic_distance(x, y, theta))
        gap = abs(vals[a] - vals[b])
        pairs.append((d, gap))
        if d > 0:
            emp = max(emp, gap / d**beta)
        if gap > K * d**beta * (1 + 1e-12) + 1e-12:
            bad += 1
    return HolderWitness(beta, K, emp, pairs, bad)


def oscillation_over_windows(sub: InfimumSubaction, ts: TransitionSystem) -> float:
    """max - min of the infimum subaction over every admissible central window."""
    W = sub.window
    span = max(2 * (W - 2) + 1, 1)
    vals = []
    half = W - 2
    for word in ts.words(span):
        seq = SymbolicSequence(_back_fill(ts, word[0]), word, _forward_fill(ts, word[-1]), half)
        vals.append(float(sub(seq)))
    return max(vals) - min(vals)


def _back_fill(ts: TransitionSystem, start: str) -> tuple[str, ...]:
    """A periodic left tail whose last symbol precedes ``start``."""
    for c in enumerate_cycles(ts, len(ts.states), "none"):
        if ts.allows(c.symbols[-1], start):
            return c.symbols
    raise SubactionError(f"nothing precedes {start}")


def _forward_fill(ts: TransitionSystem, end: str) -> tuple[str, ...]:
    for c in enumerate_cycles(ts, len(ts.states), "none"):
        if ts.allows(end, c.symbols[0]):
            return c.symbols
    raise SubactionError(f"nothing follows {end}")
