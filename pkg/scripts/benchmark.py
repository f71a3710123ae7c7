"""Wall-clock time of each pipeline stage on a config."""

from __future__ import annotations

import argparse
import time
from pathlib import Path

from flowsub.cli import STAGES, Pipeline, run_stage
from flowsub.config import load_config

ROOT = Path(__file__).resolve().parents[1]


def bench(path: Path) -> None:
    cfg = load_config(path)
    pipe = Pipeline(cfg)
    total = 0.0
    for stage in STAGES:
        if stage == "mls" and cfg.roof1 is None:
            continue
        start = time.perf_counter()
        _, checks = run_stage(pipe, stage)
        dt = time.perf_counter() - start
        total += dt
        ok = all(c.passed for c in checks)
        print(f"{path.stem:12s} {stage:10s} {dt:7.2f}s  {'pass' if ok else 'FAIL'}")
    print(f"{path.stem:12s} {'total':10s} {total:7.2f}s")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("configs", nargs="*", type=Path,
                   default=[ROOT / "data" / "three_state.cfg", ROOT / "data" / "theta.cfg"])
    for path in p.parse_args().configs:
        bench(path)
