"""Comparing two roof functions through their periodic orbit lengths.

The reparameterization observable is ``tau1 - tau0`` on transitions. Its
minimal average against ``tau0`` decides whether every orbit got longer,
and a zero average against a fully supported Markov measure forces it to be
a coboundary.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from .ergopt import RatioCertificate, minimal_average
from .sft import Cycle, Transition, TransitionSystem, enumerate_cycles
from .suspension import RoofFunction, SectionObservable, common_window, section_roof


@dataclass(frozen=True)
class SpectrumRow:
    cycle: Cycle
    length0: object
    length1: object
    reverse_lengths: tuple | None = None

    @property
    def ratio(self) -> float:
        return float(self.length1) / float(self.length0)

    @property
    def violates(self) -> bool:
        if self.length0 > self.length1:
            return True
        return self.reverse_lengths is not None and self.reverse_lengths[0] > self.reverse_lengths[1]


@dataclass
class SpectrumComparison:
    system: TransitionSystem
    rows: list[SpectrumRow]
    certificate: RatioCertificate
    reparam: SectionObservable
    time: SectionObservable

    @property
    def m(self):
        return self.certificate.m

    @property
    def violations(self) -> list[SpectrumRow]:
        return [r for r in self.rows if r.violates]

    @property
    def consistent(self) -> bool:
        """m >= 0 exactly when no listed class has l0 > l1."""
        return (self.m >= 0) == (not self.violations)

    def csv_rows(self) -> list[tuple[str, float, float]]:
        return [(self.system.format_word(r.cycle.symbols), float(r.length0), float(r.length1)) for r in self.rows]


def _check_same(tau0: RoofFunction, tau1: RoofFunction) -> TransitionSystem:
    if tau0.system != tau1.system:
        raise ValueError("roofs live on different transition systems")
    return tau0.system


def cycle_length(roof: RoofFunction, cycle: Cycle):
    """Period of the orbit of ``cycle`` under the suspension with this roof."""
    return roof.birkhoff(cycle.as_sequence(), len(cycle))


def reparametrization(tau0: RoofFunction, tau1: RoofFunction) -> tuple[SectionObservable, SectionObservable]:
    """tau1 - tau0 and tau0 on a common recoding."""
    _check_same(tau0, tau1)
    W = common_window(tau0.window, tau1.window)
    t0 = section_roof(tau0, W)
    t1 = section_roof(tau1, W)
    return t1.combine(t0, lambda a, b: a - b), t0


def mls_compare(tau0: RoofFunction, tau1: RoofFunction, max_len: int = 8, method: str = "both") -> SpectrumComparison:
    ts = _check_same(tau0, tau1)
    rows = []
    for c in enumerate_cycles(ts, max_len, "rotation+reversal"):
        rev = None
        r = Cycle(c.symbols[::-1])
        if len(c) > 2 and r.is_admissible(ts) and r.canonical(ts) != c.canonical(ts):
            rev = (cycle_length(tau0, r), cycle_length(tau1, r))
        rows.append(SpectrumRow(c, cycle_length(tau0, c), cycle_length(tau1, c), rev))
    A, t0 = reparametrization(tau0, tau1)
    cert = minimal_average(A, t0, method=method)
    return SpectrumComparison(ts, rows, cert, A, t0)


def uniform_markov_average(A: SectionObservable, time: SectionObservable, tol: float = 1e-12) -> float:
    """Time-normalized average of A for the equal-probability Markov chain.

    The stationary vector comes from power iteration on the lazy chain
    (I + P) / 2, which converges for periodic graphs as well.
    """
    ts = A.system
    n = len(ts.states)
    P = np.zeros((n, n))
    for i, s in enumerate(ts.states):
        succ = ts.successors(s)
        for t in succ:
            P[i, ts.index(t)] = 1.0 / len(succ)
    lazy = 0.5 * (np.eye(n) + P)
    pi = np.full(n, 1.0 / n)
    for _ in range(1_000_000):
        nxt = pi @ lazy
        if np.abs(nxt - pi).max() < tol:
            pi = nxt
            break
        pi = nxt
    num = den = 0.0
    for (i, j), a in A.values.items():
        w = pi[ts.index(i)] * P[ts.index(i), ts.index(j)]
        num += w * float(a)
        den += w * float(time[(i, j)])
    return float(num / den)


@dataclass
class CoboundaryResult:
    potential: dict[str, object] | None
    bad_edge: Transition | None = None
    discrepancy: object = 0


def solve_coboundary(
    A: SectionObservable, tol: float = 1e-10, rng: random.Random | None = None
) -> CoboundaryResult:
    """u with A(i, j) = u(j) - u(i), by a spanning tree from the first state.

    Non-tree transitions are then verified, exactly for rational data. A
    generator shuffles the tree so different trees can be compared.
    """
    ts = A.system
    exact = all(isinstance(v, (int, Fraction)) for v in A.values.values())
    root = ts.states[0]
    u: dict[str, object] = {root: Fraction(0) if exact else 0.0}
    tree: set[Transition] = set()
    queue = deque([root])
    while queue:
        i = queue.popleft()
        succ = list(ts.successors(i))
        if rng is not None:
            rng.shuffle(succ)
        for j in succ:
            if j not in u:
                u[j] = u[i] + A[(i, j)]
                tree.add((i, j))
                queue.append(j)
    for e in ts.sorted_transitions():
        if e in tree:
            continue
        gap = A[e] - (u[e[1]] - u[e[0]])
        if (gap != 0) if exact else (abs(gap) > tol):
            return CoboundaryResult(None, e, gap)
    return CoboundaryResult(u)


@dataclass
class RigidityVerdict:
    verdict: str
    m: object
    average: float
    potential: dict[str, object] | None = None
    violating_cycle: Cycle | None = None
    details: dict = field(default_factory=dict)

    def as_dict(self, ts: TransitionSystem | None = None) -> dict:
        out = {"verdict": self.verdict, "m": float(self.m), "average": self.average}
        if self.potential is not None:
            out["potential"] = {s: float(v) for s, v in self.potential.items()}
        if self.violating_cycle is not None:
            sym = self.violating_cycle.symbols
            out["violating_cycle"] = ts.format_word(sym) if ts is not None else list(sym)
        out.update(self.details)
        return out


def rigidity_check(tau0: RoofFunction, tau1: RoofFunction, tol: float = 1e-10, max_len: int = 8) -> RigidityVerdict:
    """strict-inequality, length-spectra-equal or inconsistent."""
    ts = _check_same(tau0, tau1)
    A, t0 = reparametrization(tau0, tau1)
    cert = minimal_average(A, t0)
    code = A.code
    if cert.m < -tol:
        return RigidityVerdict("inconsistent", cert.m, uniform_markov_average(A, t0), None,
                               code.project_cycle(cert.witness), {"reason": "some orbit got shorter"})
    avg = uniform_markov_average(A, t0)
    if avg > tol:
        return RigidityVerdict("strict-inequality", cert.m, avg)
    cob = solve_coboundary(A, tol)
    if cob.potential is not None:
        return RigidityVerdict("length-spectra-equal", cert.m, avg, cob.potential)
    bad = _nonzero_cycle(A, max_len, tol)
    return RigidityVerdict(
        "inconsistent", cert.m, avg, None, None if bad is None else code.project_cycle(bad),
        {"reason": "zero average without a coboundary", "edge": list(cob.bad_edge), "gap": float(cob.discrepancy)},
    )


def _nonzero_cycle(A: SectionObservable, max_len: int, tol: float) -> Cycle | None:
    for c in enumerate_cycles(A.system, max_len, "rotation"):
        if abs(c.birkhoff(A.values)) > tol:
            return c
    return None


def coboundary_roof(tau0: RoofFunction, u: Mapping[str, object]) -> RoofFunction:
    """tau0 + u(j) - u(i) on the base transitions."""
    base = {e: v + u[e[1]] - u[e[0]] for e, v in tau0.base.items()}
    return RoofFunction(tau0.system, base, tau0.corrections, tau0.decay)
