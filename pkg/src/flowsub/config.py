"""Run configuration files.

INI syntax read with :mod:`configparser`::

    [run]
    system = three_state.adj        # or a [graph] section
    observable = A
    stack = 2
    eps = 0.0075                    # optional, defaults derive from tau_low

    [graph]
    a = u v 1                       # edge name = endpoints and length

    [roof]
    default = 1
    base.0->1 = 3/2
    word."2 0 1 0" = 1/20
    decay = 1 1/2

    [observable.A]
    profile = poly: 0 1
    profile."0 1" = trig: 0 1/10 0
    word."1 2" = 1/4
    decay = 1 1/2

Numbers are read as exact fractions when possible. Paths are relative to
the config file.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .sft import TransitionSystem, load_transition_system, SystemError_
from .suspension import (
    CertificationError,
    Observable,
    ObservableTerm,
    Profile,
    RoofFunction,
    metric_graph,
    parse_number,
)


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


PARAM_TYPES = {
    "tol": float,
    "eps": float,
    "delta": float,
    "alpha": float,
    "samples": int,
    "seed": int,
    "max_len": int,
    "stack": int,
    "t_max": float,
    "fd_step": float,
    "thin": str,
    "method": str,
    "holder_period": int,
    "theorem_samples": int,
    "fd_samples": int,
}

DEFAULTS = {
    "tol": 1e-10,
    "samples": 200,
    "seed": 0,
    "max_len": 8,
    "stack": 1,
    "t_max": 5.0,
    "fd_step": 1e-5,
    "thin": "alternate",
    "method": "both",
    "holder_period": 4,
    "theorem_samples": 500,
    "fd_samples": 100,
}


@dataclass
class RunConfig:
    path: Path | None
    system: TransitionSystem
    roof: RoofFunction
    observable: Observable
    observable_name: str = "A"
    roof1: RoofFunction | None = None
    params: dict = field(default_factory=dict)

    def get(self, key: str):
        return self.params.get(key, DEFAULTS.get(key))

    def tau_low_estimate(self) -> float:
        stack = self.get("stack")
        return float(self.roof.lower_bound()) / stack

    def validate_params(self) -> None:
        """Ordering guards checked before any computation."""
        if self.get("stack") < 1:
            raise ConfigError("stack must be >= 1")
        tau = self.tau_low_estimate()
        eps = self.get("eps") if self.get("eps") is not None else tau / 40
        delta = self.get("delta") if self.get("delta") is not None else tau / 10
        if not 0 < eps < delta:
            raise ConfigError(f"need 0 < eps < delta, got eps={eps}, delta={delta}")
        if not eps + delta < tau / 2:
            raise ConfigError(f"eps + delta = {eps + delta} must stay below tau_low/2 = {tau / 2}")
        alpha = self.get("alpha")
        if alpha is not None and not 0 < alpha < tau / 4:
            raise ConfigError(f"alpha = {alpha} must lie in (0, tau_low/4 = {tau / 4})")
        if self.get("tol") <= 0:
            raise ConfigError("tol must be positive")
        if self.get("samples") < 2:
            raise ConfigError("samples must be >= 2")


def _unquote(text: str) -> str:
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def _number(text: str, where: str):
    try:
        return parse_number(_unquote(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"{where}: not a number: {text!r}") from exc


def _pair(text: str, where: str) -> tuple[float, float]:
    parts = _unquote(text).split()
    if len(parts) != 2:
        raise ConfigError(f"{where}: expected two numbers, got {text!r}")
    return float(_number(parts[0], where)), float(_number(parts[1], where))


def _word(ts: TransitionSystem, key: str, prefix: str, where: str):
    raw = _unquote(key[len(prefix):])
    try:
        return ts.parse_word(raw)
    except (SystemError_, ValueError) as exc:
        raise ConfigError(f"{where}: bad word {raw!r}: {exc}") from exc


def parse_roof(ts: TransitionSystem, section: configparser.SectionProxy, fallback: RoofFunction | None = None) -> RoofFunction:
    where = f"[{section.name}]"
    base = dict(fallback.base) if fallback is not None else {}
    corrections = []
    decay = None
    default = None
    for key, value in section.items():
        if key == "default":
            default = _number(value, where)
        elif key.startswith("base."):
            spec = key[len("base."):]
            if "->" not in spec:
                raise ConfigError(f"{where}: base key must look like base.i->j, got {key!r}")
            i, j = (s.strip() for s in spec.split("->", 1))
            if not ts.allows(i, j):
                raise ConfigError(f"{where}: {i}->{j} is not a transition")
            base[(i, j)] = _number(value, where)
        elif key.startswith("word."):
            corrections.append((_word(ts, key, "word.", where), _number(value, where)))
        elif key == "decay":
            decay = _pair(value, where)
        else:
            raise ConfigError(f"{where}: unknown key {key!r}")
    if default is not None:
        for e in ts.sorted_transitions():
            base.setdefault(e, default)
    try:
        return RoofFunction(ts, base, tuple(corrections), decay)
    except (CertificationError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_observable(ts: TransitionSystem, section: configparser.SectionProxy) -> Observable:
    where = f"[{section.name}]"
    terms = []
    decay = holder = None
    for key, value in section.items():
        try:
            if key == "profile":
                terms.append(ObservableTerm((), Profile.parse(_unquote(value))))
            elif key.startswith("profile."):
                terms.append(ObservableTerm(_word(ts, key, "profile.", where), Profile.parse(_unquote(value))))
            elif key.startswith("word."):
                terms.append(ObservableTerm(_word(ts, key, "word.", where), Profile.constant(_number(value, where))))
            elif key == "decay":
                decay = _pair(value, where)
            elif key == "holder":
                holder = _pair(value, where)
            else:
                raise ConfigError(f"{where}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{where}: {exc}") from exc
    if not terms:
        raise ConfigError(f"{where}: observable has no terms")
    return Observable(tuple(terms), holder, decay)


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    cp = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    return config_from_parser(cp, path.parent, path, overrides)


def config_from_parser(cp: configparser.ConfigParser, root: Path, path: Path | None = None,
                       overrides: dict | None = None) -> RunConfig:
    if not cp.has_section("run"):
        raise ConfigError("missing [run] section")
    run = cp["run"]
    roof_from_graph = None
    if cp.has_section("graph"):
        edges = {}
        for name, value in cp["graph"].items():
            parts = _unquote(value).split()
            if len(parts) != 3:
                raise ConfigError(f"[graph] {name}: expected 'u v length'")
            edges[name] = (parts[0], parts[1], _number(parts[2], "[graph]"))
        ts, roof_from_graph = metric_graph(edges)
    elif "system" in run:
        sys_path = (root / _unquote(run["system"])).resolve()
        if not sys_path.is_file():
            raise ConfigError(f"transition system file {sys_path} does not exist")
        try:
            ts = load_transition_system(sys_path)
        except SystemError_ as exc:
            raise ConfigError(str(exc)) from exc
    else:
        raise ConfigError("[run] needs 'system' or a [graph] section")
    if cp.has_section("roof"):
        roof = parse_roof(ts, cp["roof"], roof_from_graph)
    elif roof_from_graph is not None:
        roof = roof_from_graph
    else:
        raise ConfigError("missing [roof] section")
    roof1 = parse_roof(ts, cp["roof1"], roof) if cp.has_section("roof1") else None
    name = _unquote(run.get("observable", "A"))
    sec = f"observable.{name}"
    if cp.has_section(sec):
        obs = parse_observable(ts, cp[sec])
    else:
        raise ConfigError(f"missing [{sec}] section")
    params = {}
    for key, value in run.items():
        if key in ("system", "observable"):
            continue
        if key not in PARAM_TYPES:
            raise ConfigError(f"[run]: unknown key {key!r}")
        typ = PARAM_TYPES[key]
        try:
            params[key] = _unquote(value) if typ is str else typ(float(_number(value, "[run]")) if typ is float else int(value))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[run] {key}: {exc}") from exc
    for k, v in (overrides or {}).items():
        if v is not None:
            params[k] = v
    cfg = RunConfig(path, ts, roof, obs, name, roof1, params)
    cfg.validate_params()
    return cfg


def load_roof_file(
    ts: TransitionSystem, path: str | Path, section: str = "roof", fallback: RoofFunction | None = None
) -> RoofFunction:
    """A roof from a file holding a single roof section (used by ``mls compare``).

    Entries override ``fallback`` when one is given.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"roof file {path} does not exist")
    cp = configparser.ConfigParser(delimiters=("=",), inline_comment_prefixes=("#",))
    cp.optionxform = str
    cp.read_string(path.read_text(), source=str(path))
    if not cp.has_section(section):
        raise ConfigError(f"{path}: missing [{section}] section")
    return parse_roof(ts, cp[section], fallback)
