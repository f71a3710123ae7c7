from __future__ import annotations

from fractions import Fraction as F
from pathlib import Path

import pytest

from flowsub.config import DEFAULTS, ConfigError, load_config, load_roof_file
from flowsub.sft import SymbolicSequence

DATA = Path(__file__).resolve().parents[1] / "data"


def _write(tmp_path: Path, text: str, name: str = "run.cfg") -> Path:
    p = tmp_path / name
    p.write_text(text)
    return p


GRAPH_CFG = """
[run]
observable = A
stack = 2

[graph]
a = u v 1
b = u v 3/2

[observable.A]
profile = poly: 0 1
"""


def test_three_state_config():
    cfg = load_config(DATA / "three_state.cfg")
    assert cfg.system.states == ("0", "1", "2")
    assert cfg.roof.base[("1", "0")] == F(3, 2)
    assert cfg.roof.window == 4
    assert cfg.roof1 is not None and cfg.roof1.base[("1", "0")] == F(8, 5)
    # roof1 inherits every entry it does not override
    assert cfg.roof1.base[("0", "1")] == 1 and cfg.roof1.corrections == ()
    assert cfg.get("stack") == 2 and cfg.get("tol") == DEFAULTS["tol"]


def test_theta_config_builds_a_metric_graph():
    cfg = load_config(DATA / "theta.cfg")
    assert len(cfg.system.states) == 6
    assert cfg.roof.lower_bound() == 1
    assert cfg.observable_name == "A"


def test_graph_section(tmp_path):
    cfg = load_config(_write(tmp_path, GRAPH_CFG))
    assert len(cfg.system.states) == 4
    assert cfg.roof.upper_bound() == F(3, 2)


def test_overrides_win(tmp_path):
    cfg = load_config(_write(tmp_path, GRAPH_CFG), {"seed": 7, "samples": 10})
    assert cfg.get("seed") == 7 and cfg.get("samples") == 10


@pytest.mark.parametrize(
    "extra, message",
    [
        ("eps = 0.05\ndelta = 0.01\n", "eps < delta"),
        ("eps = 0.1\ndelta = 0.2\n", "tau_low/2"),
        ("alpha = 0.3\n", "alpha"),
        ("samples = 1\n", "samples"),
        ("stack = 0\n", "stack"),
        ("colour = red\n", "unknown key"),
    ],
)
def test_bad_run_parameters(tmp_path, extra, message):
    text = GRAPH_CFG.replace("stack = 2\n", "stack = 2\n" + extra) if "stack = 0" not in extra \
        else GRAPH_CFG.replace("stack = 2\n", extra)
    with pytest.raises(ConfigError, match=message):
        load_config(_write(tmp_path, text))


def test_missing_pieces(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(tmp_path / "nope.cfg")
    with pytest.raises(ConfigError, match=r"\[run\]"):
        load_config(_write(tmp_path, "[graph]\na = u v 1\n"))
    with pytest.raises(ConfigError, match="observable.B"):
        load_config(_write(tmp_path, GRAPH_CFG.replace("observable = A", "observable = B")))
    with pytest.raises(ConfigError, match="system"):
        load_config(_write(tmp_path, "[run]\nsystem = missing.adj\n"))


def test_roof_errors(tmp_path):
    (tmp_path / "s.adj").write_text("0 -> 1\n1 -> 0\n")
    base = "[run]\nsystem = s.adj\n\n[observable.A]\nprofile = poly: 1\n\n"
    with pytest.raises(ConfigError, match="not a transition"):
        load_config(_write(tmp_path, base + "[roof]\ndefault = 1\nbase.0->0 = 2\n"))
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, base + "[roof]\nbase.0->1 = 1\n"))
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(_write(tmp_path, base + "[roof]\ndefault = 1\nwidth = 3\n"))
    cfg = load_config(_write(tmp_path, base + "[roof]\ndefault = 5/4\n"))
    assert cfg.roof(SymbolicSequence.periodic(("0", "1"))) == F(5, 4)


def test_roof_file_overrides_fallback():
    cfg = load_config(DATA / "theta.cfg")
    plus = load_roof_file(cfg.system, DATA / "mls" / "theta_plus.roof", fallback=cfg.roof)
    for e, v in cfg.roof.base.items():
        assert plus.base[e] == v + F(1, 10)
    with pytest.raises(ConfigError):
        load_roof_file(cfg.system, DATA / "mls" / "absent.roof")
