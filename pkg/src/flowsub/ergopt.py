"""Minimal ergodic average as a minimum cost-to-time ratio cycle.

Two independent solvers are provided, a parametric (Lawler) search driven
by Bellman-Ford negative-cycle detection and Howard policy iteration. Both
run in exact rational arithmetic when every input is an ``int`` or
``Fraction`` and in floating point otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

from .sft import Cycle, Transition, TransitionSystem, enumerate_cycles, validate
from .suspension import SectionObservable


class RatioError(ValueError):
    """Unusable input for the ratio solvers."""


class MethodDisagreement(RuntimeError):
    """Lawler and Howard returned different minimal averages."""


@dataclass(frozen=True)
class RatioCertificate:
    m: object
    witness: Cycle
    potentials: Mapping[str, object]
    method: str
    method_agreement: float | None = None
    tail_bound: float = 0.0
    exact: bool = False

    def as_dict(self) -> dict:
        return {
            "m": float(self.m),
            "m_exact": str(self.m) if self.exact else None,
            "witness": list(self.witness.symbols),
            "potentials": {s: float(v) for s, v in self.potentials.items()},
            "method": self.method,
            "method_agreement": self.method_agreement,
            "tail_bound": self.tail_bound,
        }


def _is_exact(*maps: Mapping) -> bool:
    return all(isinstance(v, (int, Fraction)) for mp in maps for v in mp.values())


def _prepare(cost: SectionObservable, time: SectionObservable):
    ts = cost.system
    if time.system != ts:
        raise RatioError("cost and time live on different systems")
    report = validate(ts)
    if not report.accepted:
        raise RatioError("reducible or incomplete graph: " + "; ".join(report.problems()))
    edges = ts.sorted_transitions()
    exact = _is_exact(cost.values, time.values)
    conv = Fraction if exact else float
    a = {e: conv(cost.values[e]) for e in edges}
    t = {e: conv(time.values[e]) for e in edges}
    if min(t.values()) <= 0:
        raise RatioError("nonpositive return time")
    return ts, edges, a, t, exact


def _cycle_from_pred(pred: Mapping[str, str], start: str, n: int) -> list[str]:
    v = start
    for _ in range(n):
        v = pred[v]
    cycle = [v]
    u = pred[v]
    while u != v:
        cycle.append(u)
        u = pred[u]
    cycle.reverse()
    return cycle


def negative_cycle(ts: TransitionSystem, edges, weight: Mapping[Transition, object], eps=0) -> list[str] | None:
    """A cycle of negative total weight, or None (Bellman-Ford, virtual source)."""
    n = len(ts.states)
    zero = 0 * next(iter(weight.values()))
    dist = {s: zero for s in ts.states}
    pred: dict[str, str] = {}
    last = None
    for _ in range(n + 1):
        last = None
        for e in edges:
            i, j = e
            cand = dist[i] + weight[e]
            if cand < dist[j] - eps:
                dist[j] = cand
                pred[j] = i
                last = j
        if last is None:
            return None
    return _cycle_from_pred(pred, last, n)


def _ratio(cycle: list[str], a, t):
    n = len(cycle)
    es = [(cycle[k], cycle[(k + 1) % n]) for k in range(n)]
    return sum(a[e] for e in es) / sum(t[e] for e in es)


def _canonical(cycle: list[str], ts: TransitionSystem) -> Cycle:
    return Cycle(tuple(cycle)).canonical(ts)


def lawler(cost: SectionObservable, time: SectionObservable, tol: float = 1e-10):
    """Parametric search on mu with negative-cycle detection.

    Every detected cycle tightens the upper end of the bracket to its own
    ratio, so the returned value is always the exact ratio of the witness.
    """
    ts, edges, a, t, exact = _prepare(cost, time)
    ratios = [a[e] / t[e] for e in edges]
    lo, hi = min(ratios), max(ratios)
    width = tol * min(t.values())
    scale = max(abs(v) for v in list(a.values()) + list(t.values()))
    eps = 0 if exact else 1e-13 * scale

    def probe(mu):
        return negative_cycle(ts, edges, {e: a[e] - mu * t[e] for e in edges}, eps)

    # above every edge ratio every cycle is negative
    witness = probe(hi + abs(hi) + 1)
    hi = _ratio(witness, a, t)
    for _ in range(400):
        if hi - lo < width:
            break
        mu = (lo + hi) / 2
        cyc = probe(mu)
        if cyc is None:
            lo = mu
        else:
            r = _ratio(cyc, a, t)
            if r < hi:
                hi, witness = r, cyc
            else:
                lo = mu
    while True:
        cyc = probe(hi)
        if cyc is None or not _ratio(cyc, a, t) < hi:
            break
        witness = cyc
        hi = _ratio(cyc, a, t)
    return hi, _canonical(witness, ts)


def howard(cost: SectionObservable, time: SectionObservable, max_iter: int = 10_000):
    """Howard policy iteration for the minimum cycle ratio."""
    ts, edges, a, t, exact = _prepare(cost, time)
    order = ts.states
    succ = {s: ts.successors(s) for s in order}
    scale = max(abs(v) for v in list(a.values()) + list(t.values()))
    eps = 0 if exact else 1e-12 * scale
    policy = {}
    for s in order:
        policy[s] = min(succ[s], key=lambda j: (a[(s, j)] / t[(s, j)], ts.index(j)))
    for _ in range(max_iter):
        eta, x = _evaluate_policy(order, policy, a, t)
        changed = False
        for s in order:
            best = min(succ[s], key=lambda j: (eta[j], ts.index(j)))
            if eta[best] < eta[s] - eps:
                policy[s] = best
                changed = True
        if changed:
            continue
        for s in order:
            cands = [j for j in succ[s] if abs(eta[j] - eta[s]) <= eps]
            vals = {j: a[(s, j)] - eta[s] * t[(s, j)] + x[j] for j in cands}
            best = min(cands, key=lambda j: (vals[j], ts.index(j)))
            if vals[best] < x[s] - eps and best != policy[s]:
                policy[s] = best
                changed = True
        if not changed:
            break
    else:
        raise RatioError("policy iteration did not converge")
    m = min(eta.values())
    start = min((s for s in order if eta[s] == m), key=ts.index)
    # walk the policy into its cycle
    seen = []
    v = start
    while v not in seen:
        seen.append(v)
        v = policy[v]
    cycle = seen[seen.index(v):]
    return _ratio(cycle, a, t), _canonical(cycle, ts)


def _evaluate_policy(order, policy, a, t):
    eta: dict = {}
    x: dict = {}
    for s in order:
        if s in eta:
            continue
        path = []
        pos = {}
        v = s
        while v not in eta and v not in pos:
            pos[v] = len(path)
            path.append(v)
            v = policy[v]
        if v in pos:
            cyc = path[pos[v]:]
            es = [(c, policy[c]) for c in cyc]
            r = sum(a[e] for e in es) / sum(t[e] for e in es)
            anchor = min(cyc, key=order.index)
            k0 = cyc.index(anchor)
            rot = cyc[k0:] + cyc[:k0]
            eta[anchor] = r
            x[anchor] = 0 * r
            for c in reversed(rot[1:]):
                nxt = policy[c]
                eta[c] = r
                x[c] = a[(c, nxt)] - r * t[(c, nxt)] + x[nxt]
            path = path[: pos[v]]
        for c in reversed(path):
            nxt = policy[c]
            eta[c] = eta[nxt]
            x[c] = a[(c, nxt)] - eta[c] * t[(c, nxt)] + x[nxt]
    return eta, x


def potentials_for(cost: SectionObservable, time: SectionObservable, m) -> dict[str, object]:
    """Node potentials u with a - m t + u_i - u_j >= 0 on every transition."""
    ts, edges, a, t, exact = _prepare(cost, time)
    m = Fraction(m) if exact and isinstance(m, (int, Fraction)) else (m if exact else float(m))
    w = {e: a[e] - m * t[e] for e in edges}
    zero = 0 * m
    dist = {s: zero for s in ts.states}
    for _ in range(len(ts.states) + 1):
        changed = False
        for e in edges:
            i, j = e
            cand = dist[i] + w[e]
            if cand < dist[j] - (0 if exact else 1e-15 * (1 + abs(cand))):
                dist[j] = cand
                changed = True
        if not changed:
            break
    return dist


def minimal_average(
    cost: SectionObservable, time: SectionObservable, method: str = "both", tol: float = 1e-10
) -> RatioCertificate:
    """m = min over cycles of sum(cost) / sum(time), with a certificate."""
    if method not in ("lawler", "howard", "both"):
        raise ValueError(f"unknown method {method!r}")
    exact = _is_exact(cost.values, time.values)
    agreement = None
    if method == "lawler":
        m, witness = lawler(cost, time, tol)
    elif method == "howard":
        m, witness = howard(cost, time)
    else:
        m_l, w_l = lawler(cost, time, tol)
        m, witness = howard(cost, time)
        agreement = float(abs(m_l - m))
        if agreement > 10 * tol:
            raise MethodDisagreement(f"lawler m={float(m_l)!r} vs howard m={float(m)!r}")
    return RatioCertificate(
        m=m,
        witness=witness,
        potentials=potentials_for(cost, time, m),
        method=method,
        method_agreement=agreement,
        tail_bound=0.0,
        exact=exact,
    )


@dataclass
class CertificateReport:
    min_reduced_cost: object
    min_slack: object
    witness_gap: object
    violations: list[tuple[Cycle, object]] = field(default_factory=list)
    tol: float = 1e-10

    @property
    def reduced_costs_ok(self) -> bool:
        return self.min_reduced_cost >= -self.tol

    @property
    def cycles_ok(self) -> bool:
        return not self.violations

    @property
    def witness_ok(self) -> bool:
        return abs(self.witness_gap) <= self.tol

    @property
    def passed(self) -> bool:
        return self.reduced_costs_ok and self.cycles_ok and self.witness_ok


def verify_certificate(
    cert: RatioCertificate,
    cost: SectionObservable,
    time: SectionObservable,
    max_len: int = 8,
    tol: float = 1e-10,
) -> CertificateReport:
    """Independent re-check of reduced costs, enumerated cycles and the witness.

    Slacks are per unit of cycle length: ``(sum a - m sum t) / |c|``.
    """
    ts = cost.system
    m, u = cert.m, cert.potentials
    reduced = [cost[e] - m * time[e] + u[e[0]] - u[e[1]] for e in ts.sorted_transitions()]
    min_slack = None
    violations = []
    for c in enumerate_cycles(ts, max_len, "rotation"):
        es = c.transitions()
        slack = (sum(cost[e] for e in es) - m * sum(time[e] for e in es)) / len(c)
        if min_slack is None or slack < min_slack:
            min_slack = slack
        if slack < -tol:
            violations.append((c, slack))
    w = cert.witness.transitions()
    gap = (sum(cost[e] for e in w) - m * sum(time[e] for e in w)) / len(cert.witness)
    return CertificateReport(min(reduced), min_slack, gap, violations, tol)
