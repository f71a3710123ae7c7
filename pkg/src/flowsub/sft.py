"""Subshifts of finite type.

States are plain strings. Two-sided sequences are eventually periodic and
stored as ``(left, center, right, origin)``: the word ``left`` repeats to
the left of the centre, ``right`` repeats to the right, and ``origin`` is
the position inside ``center`` that carries index 0 (it may lie outside
the centre, in which case index 0 falls in one of the periodic tails).
"""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import networkx as nx

Transition = tuple[str, str]
Word = tuple[str, ...]

DEFAULT_THETA = math.exp(-1.0)


class SystemError_(ValueError):
    """Raised when a transition system is structurally unusable."""


@dataclass(frozen=True)
class TransitionSystem:
    states: tuple[str, ...]
    transitions: frozenset[Transition]
    labels: Mapping[Transition, str] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        known = set(self.states)
        if len(known) != len(self.states):
            raise SystemError_("duplicate state symbols")
        for i, j in self.transitions:
            if i not in known or j not in known:
                raise SystemError_(f"transition {i}->{j} mentions an unknown state")
        object.__setattr__(self, "_index", {s: k for k, s in enumerate(self.states)})
        succ: dict[str, list[str]] = {s: [] for s in self.states}
        pred: dict[str, list[str]] = {s: [] for s in self.states}
        for i, j in self.transitions:
            succ[i].append(j)
            pred[j].append(i)
        order = self._index
        object.__setattr__(
            self, "_succ", {s: tuple(sorted(v, key=order.__getitem__)) for s, v in succ.items()}
        )
        object.__setattr__(
            self, "_pred", {s: tuple(sorted(v, key=order.__getitem__)) for s, v in pred.items()}
        )

    @classmethod
    def from_pairs(cls, pairs: Iterable[Transition], states: Sequence[str] | None = None) -> "TransitionSystem":
        pairs = [(str(i), str(j)) for i, j in pairs]
        if states is None:
            seen: dict[str, None] = {}
            for i, j in pairs:
                seen.setdefault(i)
                seen.setdefault(j)
            states = list(seen)
        return cls(tuple(str(s) for s in states), frozenset(pairs))

    def index(self, state: str) -> int:
        return self._index[state]

    def successors(self, state: str) -> tuple[str, ...]:
        return self._succ[state]

    def predecessors(self, state: str) -> tuple[str, ...]:
        return self._pred[state]

    def allows(self, i: str, j: str) -> bool:
        return (i, j) in self.transitions

    def sorted_transitions(self) -> list[Transition]:
        idx = self._index
        return sorted(self.transitions, key=lambda e: (idx[e[0]], idx[e[1]]))

    def matrix(self) -> list[list[int]]:
        n = len(self.states)
        out = [[0] * n for _ in range(n)]
        for i, j in self.transitions:
            out[self._index[i]][self._index[j]] = 1
        return out

    def is_admissible(self, word: Sequence[str]) -> bool:
        return all((a, b) in self.transitions for a, b in zip(word, word[1:]))

    def words(self, length: int) -> list[Word]:
        """All admissible words of the given length, in lexicographic state order."""
        if length <= 0:
            return [()]
        out: list[Word] = [(s,) for s in self.states]
        for _ in range(length - 1):
            out = [w + (t,) for w in out for t in self._succ[w[-1]]]
        return out

    def format_word(self, word: Sequence[str]) -> str:
        if all(len(s) == 1 for s in self.states):
            return "".join(word)
        return " ".join(word)

    def parse_word(self, text: str) -> Word:
        text = text.strip()
        if not text:
            return ()
        if any(ch.isspace() for ch in text):
            word = tuple(text.split())
        elif text in self._index:
            word = (text,)
        elif all(len(s) == 1 for s in self.states):
            word = tuple(text)
        else:
            raise SystemError_(f"cannot split word {text!r}; separate symbols with spaces")
        for s in word:
            if s not in self._index:
                raise SystemError_(f"unknown symbol {s!r} in word {text!r}")
        return word


@dataclass(frozen=True)
class ValidationReport:
    irreducible: bool
    period: int | None
    no_outgoing: tuple[str, ...]
    no_incoming: tuple[str, ...]
    components: int

    @property
    def aperiodic(self) -> bool:
        return self.period == 1

    @property
    def accepted(self) -> bool:
        return self.irreducible and not self.no_outgoing and not self.no_incoming

    def problems(self) -> list[str]:
        out = [f"state {s} has no outgoing transition" for s in self.no_outgoing]
        out += [f"state {s} has no incoming transition" for s in self.no_incoming]
        if not self.irreducible:
            out.append(f"transition graph has {self.components} strongly connected components")
        return out

    def as_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "irreducible": self.irreducible,
            "period": self.period,
            "aperiodic": self.aperiodic,
            "problems": self.problems(),
        }


def _digraph(ts: TransitionSystem) -> nx.DiGraph:
    g = nx.DiGraph()
    g.add_nodes_from(ts.states)
    g.add_edges_from(ts.sorted_transitions())
    return g


def _period(ts: TransitionSystem) -> int:
    # gcd of level differences along every edge of a BFS layering
    root = ts.states[0]
    level = {root: 0}
    queue = deque([root])
    while queue:
        s = queue.popleft()
        for t in ts.successors(s):
            if t not in level:
                level[t] = level[s] + 1
                queue.append(t)
    g = 0
    for i, j in ts.transitions:
        g = math.gcd(g, abs(level[i] + 1 - level[j]))
    return g


def validate(ts: TransitionSystem) -> ValidationReport:
    comps = nx.number_strongly_connected_components(_digraph(ts))
    irreducible = comps == 1
    no_out = tuple(s for s in ts.states if not ts.successors(s))
    no_in = tuple(s for s in ts.states if not ts.predecessors(s))
    period = _period(ts) if irreducible else None
    return ValidationReport(irreducible, period, no_out, no_in, comps)


def require_valid(ts: TransitionSystem) -> None:
    report = validate(ts)
    if not report.accepted:
        raise SystemError_("; ".join(report.problems()))


def parse_adjacency(text: str) -> TransitionSystem:
    pairs: list[Transition] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "->" not in line:
            raise SystemError_(f"line {lineno}: expected 'i -> j', got {raw!r}")
        left, right = (part.strip() for part in line.split("->", 1))
        if not left or not right or " " in left or " " in right:
            raise SystemError_(f"line {lineno}: malformed transition {raw!r}")
        pairs.append((left, right))
    if not pairs:
        raise SystemError_("adjacency list contains no transitions")
    return TransitionSystem.from_pairs(pairs)


def load_transition_system(path: str | Path) -> TransitionSystem:
    return parse_adjacency(Path(path).read_text())


# ---------------------------------------------------------------------------
# sequences


def _primitive_root(word: Word) -> Word:
    n = len(word)
    for p in range(1, n + 1):
        if n % p == 0 and word[:p] * (n // p) == word:
            return word[:p]
    return word


def _min_rotation(word: Word, key=None) -> Word:
    rots = [word[k:] + word[:k] for k in range(len(word))]
    return min(rots, key=key) if key else min(rots)


@dataclass(frozen=True, eq=False)
class SymbolicSequence:
    left: Word
    center: Word
    right: Word
    origin: int = 0

    def __post_init__(self) -> None:
        if not self.left or not self.right:
            raise ValueError("periodic tails must be non-empty")
        object.__setattr__(self, "left", tuple(self.left))
        object.__setattr__(self, "center", tuple(self.center))
        object.__setattr__(self, "right", tuple(self.right))

    @classmethod
    def periodic(cls, word: Sequence[str], origin: int = 0) -> "SymbolicSequence":
        word = tuple(word)
        return cls(word, (), word, origin % len(word))

    def __getitem__(self, k: int) -> str:
        pos = k + self.origin
        n = len(self.center)
        if 0 <= pos < n:
            return self.center[pos]
        if pos >= n:
            return self.right[(pos - n) % len(self.right)]
        return self.left[pos % len(self.left)]

    def window(self, lo: int, hi: int) -> Word:
        """Symbols at indices lo..hi inclusive."""
        return tuple(self[k] for k in range(lo, hi + 1))

    @property
    def right_start(self) -> int:
        """First index from which the sequence follows the right period."""
        return len(self.center) - self.origin

    @property
    def left_end(self) -> int:
        """Indices strictly below this follow the left period."""
        return -self.origin

    def is_admissible(self, ts: TransitionSystem) -> bool:
        lo = self.left_end - len(self.left) - 1
        hi = self.right_start + len(self.right) + 1
        return ts.is_admissible(self.window(lo, hi))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SymbolicSequence):
            return NotImplemented
        return first_disagreement(self, other) is None

    def __hash__(self) -> int:
        return hash((_min_rotation(_primitive_root(self.left)), _min_rotation(_primitive_root(self.right))))

    def __repr__(self) -> str:
        return f"SymbolicSequence(left={self.left}, center={self.center}, right={self.right}, origin={self.origin})"


def first_disagreement(x: SymbolicSequence, y: SymbolicSequence) -> int | None:
    """Smallest |k| with x_k != y_k (None when the sequences are equal)."""
    lo = min(x.left_end, y.left_end) - math.lcm(len(x.left), len(y.left))
    hi = max(x.right_start, y.right_start) + math.lcm(len(x.right), len(y.right))
    reach = max(abs(lo), abs(hi))
    for n in range(reach + 1):
        if x[n] != y[n] or x[-n] != y[-n]:
            return n
    return None


def shift(seq: SymbolicSequence, k: int = 1) -> SymbolicSequence:
    return SymbolicSequence(seq.left, seq.center, seq.right, seq.origin + k)


def symbolic_distance(x: SymbolicSequence, y: SymbolicSequence, theta=DEFAULT_THETA):
    """theta**N where N is the largest radius of agreement around index 0."""
    n = first_disagreement(x, y)
    if n is None:
        return 0 * theta
    if n == 0:
        return 1 + 0 * theta
    return theta ** (n - 1)


def splice(past: SymbolicSequence, future: SymbolicSequence) -> SymbolicSequence:
    """Sequence equal to ``past`` at negative indices and ``future`` from index 0 on."""
    a = min(past.left_end, 0)
    b = max(future.right_start, 0)
    pl = len(past.left)
    shift_l = (a - past.left_end) % pl
    left = past.left[shift_l:] + past.left[:shift_l]
    pr = len(future.right)
    shift_r = (b - future.right_start) % pr
    right = future.right[shift_r:] + future.right[:shift_r]
    center = past.window(a, -1) + future.window(0, b - 1)
    return SymbolicSequence(left, center, right, -a)


def random_sequence(
    ts: TransitionSystem,
    rng: random.Random,
    length: int = 12,
    max_period: int = 4,
) -> SymbolicSequence:
    """Random admissible eventually periodic sequence.

    Tails are random cycles of length at most ``max_period``; the centre is
    a random walk of ``length`` symbols joined to the right tail by a
    shortest path. Index 0 sits in the middle of the walk.
    """
    cycles = enumerate_cycles(ts, max_period, "rotation")
    if not cycles:
        raise SystemError_("no cycles available for periodic tails")
    left = rng.choice(cycles).symbols
    right = rng.choice(cycles).symbols
    walk = [rng.choice(ts.successors(left[-1]))]
    for _ in range(length - 1):
        walk.append(rng.choice(ts.successors(walk[-1])))
    bridge = _shortest_path(ts, walk[-1], right[0])
    center = tuple(walk) + tuple(bridge[1:-1])
    return SymbolicSequence(tuple(left), center, tuple(right), len(walk) // 2)


def _shortest_path(ts: TransitionSystem, a: str, b: str) -> list[str]:
    """Shortest admissible path a -> ... -> b with at least one step."""
    prev: dict[str, str] = {}
    queue = deque()
    for t in ts.successors(a):
        if t not in prev:
            prev[t] = a
            queue.append(t)
    while queue:
        s = queue.popleft()
        if s == b:
            break
        for t in ts.successors(s):
            if t not in prev:
                prev[t] = s
                queue.append(t)
    if b not in prev:
        raise SystemError_(f"{b} unreachable from {a}")
    path = [b]
    while True:
        p = prev[path[-1]]
        path.append(p)
        if p == a and len(path) >= 2:
            break
    return path[::-1]


# ---------------------------------------------------------------------------
# cycles


@dataclass(frozen=True)
class Cycle:
    symbols: Word

    def __post_init__(self) -> None:
        if not self.symbols:
            raise ValueError("empty cycle")
        object.__setattr__(self, "symbols", tuple(self.symbols))

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def primitive(self) -> bool:
        return _primitive_root(self.symbols) == self.symbols

    def transitions(self) -> list[Transition]:
        s = self.symbols
        return [(s[k], s[(k + 1) % len(s)]) for k in range(len(s))]

    def is_admissible(self, ts: TransitionSystem) -> bool:
        return all(ts.allows(i, j) for i, j in self.transitions())

    def canonical(self, ts: TransitionSystem, reversal: bool = False) -> "Cycle":
        key = lambda w: [ts.index(s) for s in w]  # noqa: E731
        best = _min_rotation(self.symbols, key)
        if reversal:
            rev = Cycle(self.symbols[::-1])
            if rev.is_admissible(ts):
                best = min(best, _min_rotation(rev.symbols, key), key=key)
        return Cycle(best)

    def as_sequence(self) -> SymbolicSequence:
        return SymbolicSequence.periodic(self.symbols)

    def birkhoff(self, values: Mapping[Transition, object]):
        return sum(values[e] for e in self.transitions())


def _closed_walks_from(ts: TransitionSystem, start: str, n: int) -> Iterator[Word]:
    # walks start -> ... -> start of length n, never visiting lower-index states
    floor = ts.index(start)
    stack: list[tuple[Word]] = [((start,),)]
    while stack:
        (walk,) = stack.pop()
        if len(walk) == n:
            if ts.allows(walk[-1], start):
                yield walk
            continue
        for t in reversed(ts.successors(walk[-1])):
            if ts.index(t) >= floor:
                stack.append((walk + (t,),))


def enumerate_cycles(ts: TransitionSystem, max_len: int, modulo: str = "rotation") -> list[Cycle]:
    """Primitive cycles of length <= max_len, deduplicated per ``modulo``.

    ``modulo`` is one of ``"none"`` (every rotation listed), ``"rotation"``
    or ``"rotation+reversal"``. The order is by length, then by the index
    sequence of the canonical representative.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if modulo not in ("none", "rotation", "rotation+reversal"):
        raise ValueError(f"unknown modulo {modulo!r}")
    key = lambda w: [ts.index(s) for s in w]  # noqa: E731
    canon: list[Word] = []
    for n in range(1, max_len + 1):
        found = []
        for s in ts.states:
            for walk in _closed_walks_from(ts, s, n):
                if _primitive_root(walk) == walk and _min_rotation(walk, key) == walk:
                    found.append(walk)
        canon.extend(sorted(found, key=key))
    if modulo == "rotation":
        return [Cycle(w) for w in canon]
    if modulo == "none":
        return [Cycle(w[k:] + w[:k]) for w in canon for k in range(len(w))]
    out: list[Cycle] = []
    seen: set[Word] = set()
    for w in canon:
        c = Cycle(w).canonical(ts, reversal=True)
        if c.symbols not in seen:
            seen.add(c.symbols)
            out.append(c)
    return out


# ---------------------------------------------------------------------------
# higher block recoding


@dataclass(frozen=True)
class BlockCode:
    """Recoding of ``base`` into admissible ``k``-words.

    A new state is the word ``x[-k+1..0]`` ending at the current symbol, so a
    new transition is the ``k+1``-word ``x[-k+1..1]``.
    """

    base: TransitionSystem
    system: TransitionSystem
    k: int
    words: Mapping[str, Word]
    names: Mapping[Word, str]

    def state_at(self, seq: SymbolicSequence, n: int = 0) -> str:
        return self.names[seq.window(n - self.k + 1, n)]

    def transition_at(self, seq: SymbolicSequence, n: int = 0) -> Transition:
        return (self.state_at(seq, n), self.state_at(seq, n + 1))

    def transition_of_word(self, word: Sequence[str]) -> Transition:
        """The recoded transition for a (k+1)-word."""
        word = tuple(word)
        return (self.names[word[:-1]], self.names[word[1:]])

    def word_of_transition(self, e: Transition) -> Word:
        return self.words[e[0]] + self.words[e[1]][-1:]

    def project_cycle(self, cycle: Cycle) -> Cycle:
        return Cycle(tuple(self.words[s][-1] for s in cycle.symbols))

    def lift_cycle(self, cycle: Cycle) -> Cycle:
        s = cycle.symbols
        n = len(s)
        out = []
        for t in range(n):
            out.append(self.names[tuple(s[(t - self.k + 1 + j) % n] for j in range(self.k))])
        return Cycle(tuple(out))


def higher_block(ts: TransitionSystem, k: int) -> BlockCode:
    if k < 1:
        raise ValueError("k must be >= 1")
    words = ts.words(k)
    if k == 1:
        names = {w: w[0] for w in words}
    else:
        sep = "" if all(len(s) == 1 for s in ts.states) else "."
        names = {w: sep.join(w) for w in words}
    pairs = []
    for w in ts.words(k + 1):
        pairs.append((names[w[:-1]], names[w[1:]]))
    system = TransitionSystem(tuple(names[w] for w in words), frozenset(pairs))
    return BlockCode(ts, system, k, {v: w for w, v in names.items()}, names)


def exact(value) -> Fraction | float:
    """Fraction for exact inputs, float otherwise."""
    if isinstance(value, (int, Fraction)):
        return Fraction(value)
    return float(value)
