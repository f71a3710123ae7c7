"""Run every stage on the bundled configs and write reports under results/."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from flowsub.cli import main

ROOT = Path(__file__).resolve().parents[1]


def run(args: argparse.Namespace) -> int:
    status = 0
    for cfg in args.configs:
        out = args.out / cfg.stem
        code = main(["run", "--config", str(cfg), "--out", str(out)])
        code |= main(["mls", "--config", str(cfg), "--out", str(out)]) if "roof1" in cfg.read_text() else 0
        main(["validate", "--config", str(cfg), "--emit-profile", str(out / "profile.csv")])
        print(f"{cfg.name}: exit {code}", file=sys.stderr)
        status |= code
    return status


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("configs", nargs="*", type=Path,
                   default=[ROOT / "data" / "theta.cfg", ROOT / "data" / "three_state.cfg"])
    p.add_argument("--out", type=Path, default=ROOT / "results")
    sys.exit(run(p.parse_args()))
