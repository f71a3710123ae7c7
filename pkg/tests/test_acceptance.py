"""Acceptance criteria, one pass/fail line each.

Run under pytest (lines appear in the terminal summary) or directly:
``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import functools
import os
import random
import subprocess
import sys
import time
from fractions import Fraction as F
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
if __name__ == "__main__":
    sys.path[:0] = [str(ROOT / "src"), str(ROOT / "tests")]

from flowsub.cli import Pipeline  # noqa: E402
from flowsub.config import load_config  # noqa: E402
from flowsub.ergopt import howard, lawler, minimal_average  # noqa: E402
from flowsub.flowext import (  # noqa: E402
    check_integrability,
    check_smoothing,
    max_rank_in_boxes,
    multiple_transitions,
    verify_main_theorem,
)
from flowsub.mls import coboundary_roof, reparametrization, rigidity_check  # noqa: E402
from flowsub.sft import TransitionSystem, random_sequence  # noqa: E402
from flowsub.subaction import (  # noqa: E402
    InfimumSubaction,
    bracket,
    check_cocycle,
    eventually_periodic_sequences,
    holder_estimate,
    holder_exponent,
    oscillation_over_windows,
    solve_subaction,
    verify_discrete_subaction,
)
from flowsub.suspension import RoofFunction, SectionObservable, discretize_observable, section_roof  # noqa: E402

import oracles  # noqa: E402
from conftest import ACCEPTANCE_LINES, three_state_observable, three_state_roof, three_state_system  # noqa: E402

GOLDEN = ROOT / "data" / "theta.cfg"
THREE = ROOT / "data" / "three_state.cfg"


def _record(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {number:2d} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    if __name__ == "__main__":
        print(line, flush=True)


@functools.lru_cache(maxsize=None)
def _pipeline(path: Path) -> Pipeline:
    return Pipeline(load_config(path))


def _random_system(seed: int):
    rng = random.Random(seed)
    pairs, states = oracles.random_irreducible(rng, rng.randint(1, 6))
    ts = TransitionSystem.from_pairs(pairs, states)
    a = {e: oracles.random_rational(rng, -3, 3) for e in pairs}
    t = {e: oracles.random_rational(rng, 1, 4) + F(1, 8) for e in pairs}
    return rng, ts, pairs, states, a, t


def _stable_partner(ts, omega, rng):
    while True:
        zeta = random_sequence(ts, rng)
        if zeta[0] == omega[0]:
            return bracket(omega, zeta)


# ---------------------------------------------------------------------------
# criteria


def criterion_minimal_average():
    start = time.perf_counter()
    worst_exact = worst_float = worst_methods = 0.0
    mismatches = 0
    for seed in range(25):
        rng, ts, pairs, states, a, t = _random_system(seed)
        cost = SectionObservable.from_mapping(ts, a)
        tm = SectionObservable.from_mapping(ts, t)
        if minimal_average(cost, tm).m != oracles.min_cycle_ratio(pairs, states, a, t):
            mismatches += 1
        af = {e: float(v) + rng.uniform(-1e-3, 1e-3) for e, v in a.items()}
        tf = {e: float(v) for e, v in t.items()}
        cf = SectionObservable.from_mapping(ts, af)
        tff = SectionObservable.from_mapping(ts, tf)
        worst_float = max(worst_float, abs(minimal_average(cf, tff, tol=1e-11).m
                                           - oracles.min_cycle_ratio(pairs, states, af, tf)))
        worst_methods = max(worst_methods, abs(lawler(cf, tff, 1e-11)[0] - howard(cf, tff)[0]))
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and worst_float <= 1e-9 and worst_methods <= 1e-8 and elapsed < 10
    return ok, (f"exact mismatches={mismatches}, float err={worst_float:.2e} (<=1e-9), "
                f"Lawler-Howard={worst_methods:.2e} (<=1e-8), {elapsed:.2f}s (<10s)")


def criterion_discrete_subaction():
    systems = []
    for seed in range(25):
        _, ts, _, _, a, t = _random_system(seed)
        systems.append((SectionObservable.from_mapping(ts, a), SectionObservable.from_mapping(ts, t)))
    for path in (THREE, GOLDEN):
        cost, tm, _ = _pipeline(path).base
        systems.append((cost, tm))
    worst_res, worst_wit = float("inf"), 0.0
    for cost, tm in systems:
        cert = minimal_average(cost, tm)
        sub = solve_subaction(cert, cost, tm)
        rep = verify_discrete_subaction(sub.values, cost, tm, cert.m, cert.witness.symbols, 1e-9)
        worst_res = min(worst_res, float(rep.residual_min))
        worst_wit = max(worst_wit, abs(float(rep.witness_max)))
    ok = worst_res >= -1e-9 and worst_wit <= 1e-9
    return ok, f"{len(systems)} systems, min residual={worst_res:.2e} (>=-1e-9), witness={worst_wit:.2e} (<=1e-9)"


def criterion_cocycle():
    ts = three_state_system()
    windowed = three_state_roof(ts)
    local = RoofFunction(ts, {("0", "1"): 1, ("1", "0"): F(3, 2), ("1", "2"): 1, ("2", "0"): F(3, 4)})
    rng = random.Random(0)
    worst = 0.0
    nonzero_local = 0
    for _ in range(50):
        w = random_sequence(ts, rng)
        eta = _stable_partner(ts, w, rng)
        for n in range(21):
            worst = max(worst, float(check_cocycle(windowed, w, eta, n)))
            nonzero_local += check_cocycle(local, w, eta, n) != 0
    ok = worst <= 1e-8 and nonzero_local == 0
    return ok, f"50 pairs, n<=20: windowed residual={worst:.2e} (<=1e-8), transition-local nonzero={nonzero_local}"


def criterion_smoothing():
    pipe = _pipeline(GOLDEN)
    checks = {c.name: c for c in check_smoothing(pipe.smooth, samples=200, seed=0)}
    sup = checks["h_vanishes_near_sections"]
    low = checks["h_return_integral_lower_bound"]
    ok = sup.passed and low.passed
    bound = pipe.smooth.params.lower_bound
    return ok, (f"theta graph, 200 samples: max |h| near sections={sup.residual:.1e}, "
                f"min return integral - bound={-low.residual:.3e} (bound {bound:.3e})")


def criterion_integrability():
    ext, _ = _pipeline(GOLDEN).extension
    chk = check_integrability(ext, samples=200, seed=0, tol=1e-7)
    rank = max(m.rank for m in multiple_transitions(ext.fam))
    box_rank = max_rank_in_boxes(ext)
    ok = chk.passed and rank >= 2 and box_rank >= 2
    return ok, f"200 section points, residual={chk.residual:.2e} (<=1e-7), transition rank={rank}, box rank={box_rank}"


@functools.lru_cache(maxsize=None)
def _main_report(path: Path):
    pipe = _pipeline(path)
    ext, data = pipe.extension
    start = time.perf_counter()
    rep = verify_main_theorem(ext, data, samples=500, T_range=(0.0, 5.0), fd_step=1e-5, fd_samples=100, seed=0)
    return rep, time.perf_counter() - start


def criterion_main_theorem():
    details, ok = [], True
    for path in (GOLDEN, THREE):
        rep, elapsed = _main_report(path)
        good = rep.inequality_min >= -1e-6 and rep.witness_max <= 1e-6 and elapsed < 60
        ok &= good
        details.append(f"{path.stem}: min={rep.inequality_min:.1e}, witness={rep.witness_max:.1e}, {elapsed:.1f}s")
    return ok, "500 samples, T in [0,5]; " + "; ".join(details) + " (>=-1e-6, <=1e-6, <60s)"


def criterion_derivative():
    details, ok = [], True
    for path in (GOLDEN, THREE):
        rep, _ = _main_report(path)
        ok &= rep.richardson_ok and rep.derivative_max <= 1e-4
        details.append(f"{path.stem}: max err={rep.derivative_max:.1e}, Richardson={'ok' if rep.richardson_ok else 'no'}")
    return ok, "100 samples at step 1e-5; " + "; ".join(details) + " (<=1e-4)"


def criterion_holder():
    details, total = [], 0
    for path in (THREE, GOLDEN):
        cfg = load_config(path)
        cost, tm, cert = _pipeline(path).base
        inf = InfimumSubaction(cost, tm, cert.m)
        beta = holder_exponent(float(cfg.roof.lower_bound()), float(cfg.roof.upper_bound()))
        seqs = eventually_periodic_sequences(cfg.system, 4)
        hw = holder_estimate(inf, seqs, beta, inf.window, oscillation=oscillation_over_windows(inf, cfg.system))
        total += hw.violations
        details.append(f"{path.stem}: beta={beta:.3f}, {len(hw.pairs)} pairs, {hw.violations} violations")
    return total == 0, "; ".join(details)


def criterion_rigidity():
    wrong = 0
    recovered = 0
    for seed in range(10):
        rng = random.Random(1000 + seed)
        pairs, states = oracles.random_irreducible(rng, rng.randint(2, 6))
        ts = TransitionSystem.from_pairs(pairs, states)
        tau0 = RoofFunction(ts, {e: oracles.random_rational(rng, 1, 3) + 1 for e in pairs})
        u = {s: oracles.random_rational(rng, -1, 1) / 2 for s in states}
        v = rigidity_check(tau0, coboundary_roof(tau0, u))
        if v.verdict != "length-spectra-equal":
            wrong += 1
            continue
        A, _ = reparametrization(tau0, coboundary_roof(tau0, u))
        words = A.code.words
        exact = all(v.potential[j] - v.potential[i] == u[words[j][-1]] - u[words[i][-1]] for i, j in A.system.transitions)
        recovered += exact
    # the windowed example as well
    ts = three_state_system()
    roof = three_state_roof(ts)
    u = {"0": F(0), "1": F(1, 10), "2": F(2, 10)}
    wrong += rigidity_check(roof, coboundary_roof(roof, u)).verdict != "length-spectra-equal"
    positive = 0
    for seed in range(10):
        rng = random.Random(2000 + seed)
        pairs, states = oracles.random_irreducible(rng, rng.randint(1, 6))
        ts = TransitionSystem.from_pairs(pairs, states)
        tau0 = RoofFunction(ts, {e: oracles.random_rational(rng, 1, 3) + 1 for e in pairs})
        tau1 = RoofFunction(ts, {e: val + abs(oracles.random_rational(rng, -1, 1)) + F(1, 100)
                                 for e, val in tau0.base.items()})
        v = rigidity_check(tau0, tau1)
        if v.verdict == "strict-inequality" and v.m > 0:
            positive += 1
        else:
            wrong += 1
    ok = wrong == 0 and recovered == 10 and positive == 10
    return ok, f"coboundary pairs recovered exactly={recovered}/10, strict={positive}/10, misclassified={wrong}"


def _cli_run() -> bytes:
    env = dict(os.environ, PYTHONPATH=str(ROOT / "src"))
    proc = subprocess.run([sys.executable, "-m", "flowsub.cli", "run", "--config", str(GOLDEN)],
                          capture_output=True, env=env, cwd=str(ROOT), check=False)
    return proc.returncode, proc.stdout


def criterion_determinism():
    (c1, a), (c2, b) = _cli_run(), _cli_run()
    ok = a == b and len(a) > 0 and c1 == c2 == 0
    return ok, f"two runs of the golden config: {len(a)} bytes, identical={a == b}, exit codes {c1}, {c2}"


CRITERIA = [
    (1, "minimal-average oracle equivalence", criterion_minimal_average),
    (2, "discrete subaction", criterion_discrete_subaction),
    (3, "cocycle equation", criterion_cocycle),
    (4, "smoothing function", criterion_smoothing),
    (5, "integrability condition", criterion_integrability),
    (6, "flow subaction inequality", criterion_main_theorem),
    (7, "derivative identity", criterion_derivative),
    (8, "Hoelder bound", criterion_holder),
    (9, "rigidity dichotomy", criterion_rigidity),
    (10, "determinism", criterion_determinism),
]


def _check(number: int) -> None:
    _, title, fn = CRITERIA[number - 1]
    ok, detail = fn()
    _record(number, title, ok, detail)
    assert ok, detail


def test_01_minimal_average():
    _check(1)


def test_02_discrete_subaction():
    _check(2)


def test_03_cocycle():
    _check(3)


def test_04_smoothing():
    _check(4)


def test_05_integrability():
    _check(5)


def test_06_flow_subaction_inequality():
    _check(6)


def test_07_derivative_identity():
    _check(7)


def test_08_holder():
    _check(8)


def test_09_rigidity():
    _check(9)


def test_10_determinism():
    _check(10)


if __name__ == "__main__":
    failures = 0
    for number, title, fn in CRITERIA:
        ok, detail = fn()
        _record(number, title, ok, detail)
        failures += not ok
    sys.exit(1 if failures else 0)
