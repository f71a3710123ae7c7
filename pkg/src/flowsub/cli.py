"""Command-line front end.

Every subcommand prints one JSON report with a top-level ``checks`` array of
``{name, pass, residual, tol}`` records. Exit status is 0 when every check
passes, 1 when a check fails or a stage breaks, and 2 on configuration
errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import random
import sys
from functools import cached_property
from pathlib import Path

from .config import ConfigError, RunConfig, load_config, load_roof_file
from .ergopt import RatioError, minimal_average, verify_certificate
from .flowext import (
    Check,
    CoverError,
    SectionError,
    SmoothingError,
    build_sections,
    check_integrability,
    check_nesting,
    check_smoothing,
    emit_profile,
    flowbox_H0,
    global_V,
    inductive_extend,
    max_rank_in_boxes,
    multiple_transitions,
    nest_levels,
    section_data,
    smoothing_params,
    SmoothingFunction,
    Bump,
    verify_main_theorem,
    witness_orbit,
)
from .mls import mls_compare, reparametrization, rigidity_check, solve_coboundary
from .sft import validate
from .subaction import (
    InfimumSubaction,
    eventually_periodic_sequences,
    holder_estimate,
    holder_exponent,
    infimum_inequality_min,
    oscillation_over_windows,
    solve_subaction,
    verify_discrete_subaction,
)
from .suspension import CertificationError, discretize_observable, section_roof

STAGES = ("validate", "m-average", "subaction", "sections", "smooth", "extend", "verify", "mls")

# parameter problems discovered while building a stage count as config errors
PARAM_ERRORS = (ConfigError, SectionError, SmoothingError, CertificationError)


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: Exception) -> None:
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage
        self.config_error = isinstance(exc, PARAM_ERRORS)


def _f(x) -> float:
    return float(f"{float(x):.12g}") + 0.0


class Pipeline:
    """Lazily computed stage results for one configuration."""

    def __init__(self, cfg: RunConfig) -> None:
        self.cfg = cfg
        self.ts = cfg.system
        self.tol = cfg.get("tol")
        self.seed = cfg.get("seed")
        self.samples = cfg.get("samples")

    # shared data

    @cached_property
    def base(self):
        cfg = self.cfg
        cost = discretize_observable(cfg.observable, cfg.roof)
        time = section_roof(cfg.roof, cost.window)
        cert = minimal_average(cost, time, method=cfg.get("method"), tol=self.tol)
        return cost, time, cert

    @cached_property
    def family(self):
        cfg = self.cfg
        fam = build_sections(self.ts, cfg.roof, alpha=cfg.get("alpha"), stack=cfg.get("stack"), observable=cfg.observable)
        params = smoothing_params(fam, cfg.get("eps"), cfg.get("delta"))
        return nest_levels(fam, params.eps, cfg.get("thin")), params

    @cached_property
    def smooth(self) -> SmoothingFunction:
        fam, params = self.family
        return SmoothingFunction(fam, params, Bump(params.eps))

    @cached_property
    def extension(self):
        fam, _ = self.family
        data = section_data(fam, self.cfg.observable, self.base[2].m)
        H0 = flowbox_H0(fam, data, self.smooth, tol=1e-9)
        return global_V(fam, inductive_extend(fam, H0), data, self.cfg.observable), data

    # stages

    def validate(self) -> dict:
        rep = validate(self.ts)
        out = {
            "states": len(self.ts.states),
            "transitions": len(self.ts.transitions),
            "system": rep.as_dict(),
            "roof_min": _f(self.cfg.roof.lower_bound()),
            "roof_max": _f(self.cfg.roof.upper_bound()),
        }
        checks = [Check("system_accepted", rep.accepted, float(len(rep.problems())), 0.0)]
        return out, checks

    def m_average(self) -> dict:
        cost, time, cert = self.base
        rep = verify_certificate(cert, cost, time, self.cfg.get("max_len"), self.tol)
        out = cert.as_dict()
        out["witness"] = list(cost.code.project_cycle(cert.witness).symbols)
        out["min_slack"] = _f(rep.min_slack)
        out["min_reduced_cost"] = _f(rep.min_reduced_cost)
        checks = [
            Check("certificate_reduced_costs", rep.reduced_costs_ok, -float(rep.min_reduced_cost), self.tol),
            Check("certificate_cycles", rep.cycles_ok, -float(rep.min_slack), self.tol),
            Check("certificate_witness", rep.witness_ok, abs(float(rep.witness_gap)), self.tol),
        ]
        if cert.method_agreement is not None:
            checks.append(Check("method_agreement", cert.method_agreement <= 10 * self.tol,
                                cert.method_agreement, 10 * self.tol))
        return out, checks

    def subaction(self) -> dict:
        cost, time, cert = self.base
        sub = solve_subaction(cert, cost, time)
        rep = verify_discrete_subaction(sub.values, cost, time, cert.m, cert.witness.symbols, 1e-9)
        inf = InfimumSubaction(cost, time, cert.m)
        roof = self.cfg.roof
        beta = holder_exponent(float(roof.lower_bound()), float(roof.upper_bound()))
        seqs = eventually_periodic_sequences(self.ts, self.cfg.get("holder_period"))
        hw = holder_estimate(inf, seqs, beta, inf.window, oscillation=oscillation_over_windows(inf, self.ts))
        inf_min = infimum_inequality_min(inf, seqs)
        out = {
            "m": _f(cert.m),
            "values": {s: _f(v) for s, v in sub.values.items()},
            "residual_min": _f(rep.residual_min),
            "witness_zero_check": _f(rep.witness_max),
            "bellman_max": _f(rep.bellman_max),
            "holder": hw.as_dict(),
            "infimum_residual_min": _f(inf_min),
        }
        checks = [
            Check("subaction_residuals", not rep.violations, -float(rep.residual_min), 1e-9),
            Check("witness_zero", abs(rep.witness_max) <= 1e-9, abs(float(rep.witness_max)), 1e-9),
            Check("holder_bound", hw.violations == 0, float(hw.violations), 0.0),
            Check("infimum_subaction_inequality", inf_min >= -1e-9, -inf_min, 1e-9),
        ]
        return out, checks

    def sections(self) -> dict:
        fam, params = self.family
        out = fam.summary()
        mts = multiple_transitions(fam)
        out["multiple_transitions"] = len(mts)
        out["max_transition_rank"] = max(m.rank for m in mts)
        reports = [check_nesting(fam, k, self.samples, self.seed) for k in range(len(fam.levels) - 1)]
        out["nesting"] = [r.as_dict() for r in reports]
        checks = [Check("alpha_disjointness", fam.alpha < fam.tau_low / 4, fam.alpha - fam.tau_low / 4, 0.0)]
        for r in reports:
            checks.append(Check(f"nesting_level_{r.level}", r.passed,
                                float(len(r.cover_failures) + len(r.lost_pairs)), 0.0))
        if fam.stack > 1:
            checks.append(Check("rank_at_least_2", out["max_transition_rank"] >= 2,
                                float(out["max_transition_rank"]), 2.0))
        return out, checks

    def smooth_stage(self) -> dict:
        par = self.smooth.params
        out = {k: _f(v) if isinstance(v, float) else v for k, v in par.as_dict().items()}
        return out, check_smoothing(self.smooth, self.samples, self.seed)

    def extend(self) -> dict:
        ext, data = self.extension
        integ = check_integrability(ext, self.samples, self.seed, tol=1e-7)
        rank = max_rank_in_boxes(ext, min(self.samples, 50), self.seed)
        out = {
            "m_section": _f(data.cert.m),
            "m_base": _f(self.base[2].m),
            "m_gap": _f(data.m_gap),
            "residual_min": _f(min(ext.residuals.values())),
            "final_sections": len(ext.fam.prime),
            "max_box_rank": rank,
        }
        checks = [
            Check("section_m_matches_base", data.m_gap <= 1e-9, data.m_gap, 1e-9),
            Check("box_residuals_nonnegative", min(ext.residuals.values()) >= -1e-9,
                  -min(ext.residuals.values()), 1e-9),
            integ,
        ]
        if ext.fam.stack > 1:
            checks.append(Check("box_rank_at_least_2", rank >= 2, float(rank), 2.0))
        return out, checks

    def verify(self) -> dict:
        ext, data = self.extension
        T = self.cfg.get("t_max")
        rep = verify_main_theorem(
            ext, data,
            samples=self.cfg.get("theorem_samples"),
            T_range=(0.0, T),
            fd_step=self.cfg.get("fd_step"),
            fd_samples=self.cfg.get("fd_samples"),
            seed=self.seed,
        )
        out = rep.as_dict()
        out["m"] = _f(ext.m)
        out["t_max"] = T
        return out, rep.checks

    def profile_rows(self, points: int = 200):
        ext, data = self.extension
        return emit_profile(ext, witness_orbit(ext, data), self.cfg.get("t_max"), points)

    def mls(self, roof0=None, roof1=None) -> dict:
        tau0 = roof0 if roof0 is not None else self.cfg.roof
        tau1 = roof1 if roof1 is not None else self.cfg.roof1
        if tau1 is None:
            raise ConfigError("mls needs a second roof ([roof1] or --roof1)")
        comp = mls_compare(tau0, tau1, self.cfg.get("max_len"))
        verdict = rigidity_check(tau0, tau1, self.tol, self.cfg.get("max_len"))
        out = verdict.as_dict(self.ts)
        out = {k: (_f(v) if isinstance(v, float) else v) for k, v in out.items()}
        if "potential" in out:
            out["potential"] = {s: _f(v) for s, v in out["potential"].items()}
        out["classes"] = len(comp.rows)
        out["violations"] = len(comp.violations)
        out["m_compare"] = _f(comp.m)
        checks = [Check("mls_consistent", comp.consistent, float(len(comp.violations)), 0.0)]
        if verdict.verdict == "length-spectra-equal":
            a, _ = reparametrization(tau0, tau1)
            other = solve_coboundary(a, self.tol, random.Random(self.seed))
            gap = _potential_gap(verdict.potential, other.potential)
            checks.append(Check("coboundary_tree_independent", gap <= self.tol, gap, self.tol))
        checks.append(Check("lengths_dominate", verdict.verdict != "inconsistent", 0.0, self.tol))
        self._spectrum = comp.csv_rows()
        out["spectrum"] = [[c, _f(a), _f(b)] for c, a, b in self._spectrum]
        return out, checks


def _potential_gap(u, v) -> float:
    if u is None or v is None:
        return float("inf")
    keys = sorted(u)
    shift = v[keys[0]] - u[keys[0]]
    return max(abs(float(v[k] - u[k] - shift)) for k in keys)


STAGE_METHODS = {
    "validate": Pipeline.validate,
    "m-average": Pipeline.m_average,
    "subaction": Pipeline.subaction,
    "sections": Pipeline.sections,
    "smooth": Pipeline.smooth_stage,
    "extend": Pipeline.extend,
    "verify": Pipeline.verify,
    "mls": Pipeline.mls,
}


def run_stage(pipe: Pipeline, stage: str, **kw) -> tuple[dict, list[Check]]:
    try:
        return STAGE_METHODS[stage](pipe, **kw)
    except (RatioError, CoverError, ValueError, RuntimeError) as exc:
        raise StageError(stage, exc) from exc


def run_pipeline(cfg: RunConfig, stages=None) -> dict:
    """Run the stages in order and merge them into one flat report."""
    pipe = Pipeline(cfg)
    if stages is None:
        stages = [s for s in STAGES if s != "mls" or cfg.roof1 is not None]
    report: dict = {"tol": cfg.get("tol"), "seed": cfg.get("seed")}
    checks = []
    for stage in stages:
        out, cs = run_stage(pipe, stage)
        report[stage] = out
        checks += [dict(c.as_dict(), name=f"{stage}/{c.name}") for c in cs]
    report["checks"] = checks
    return report


def _single(cfg: RunConfig, stage: str, pipe: Pipeline | None = None, **kw) -> tuple[dict, Pipeline]:
    pipe = pipe or Pipeline(cfg)
    out, cs = run_stage(pipe, stage, **kw)
    report = {"stage": stage, "tol": cfg.get("tol"), **out, "checks": [c.as_dict() for c in cs]}
    return report, pipe


def dump(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, float) else x for x in r])
    path.write_text(buf.getvalue())


def _common_options(default=None) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=default)
    common.add_argument("--config", type=Path, help="run configuration file")
    common.add_argument("--tol", type=float, help="certification tolerance")
    common.add_argument("--seed", type=int, help="sampling seed (default 0)")
    common.add_argument("--out", type=Path, help="directory for the JSON report and CSV files")
    common.add_argument("--alpha", type=float, help="section diameter bound")
    common.add_argument("--eps", type=float, help="bump half-width")
    common.add_argument("--delta", type=float, help="half-width of the zero band around sections")
    common.add_argument("--samples", type=int, help="samples per sampled check")
    common.add_argument("--max-len", type=int, dest="max_len", help="longest enumerated cycle")
    common.add_argument("--emit-profile", type=Path, help="CSV of (t, A, V, H', dV/dt) along the witness orbit")
    return common


def build_parser() -> argparse.ArgumentParser:
    # subcommands must not reset options given before them
    common = _common_options(argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="flowsub", description=__doc__.splitlines()[0], parents=[_common_options()])
    sub = p.add_subparsers(dest="command", required=True)
    for name in STAGES[:-1]:
        sub.add_parser(name, parents=[common], help=f"run the {name} stage")
    m = sub.add_parser("mls", parents=[common], help="compare two roofs by cycle lengths")
    m.add_argument("action", choices=["compare"], nargs="?", default="compare")
    m.add_argument("--roof0", type=Path, help="file with a [roof] section (default: config roof)")
    m.add_argument("--roof1", type=Path, help="file with a [roof] section (default: config [roof1])")
    r = sub.add_parser("run", parents=[common], help="run every stage in order")
    r.add_argument("--stage", choices=STAGES, help="run only this stage")
    return p


def _overrides(args) -> dict:
    keys = ("tol", "seed", "alpha", "eps", "delta", "samples", "max_len")
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is None:
            raise ConfigError("--config is required")
        cfg = load_config(args.config, _overrides(args))
        pipe = None
        name = args.command
        if args.command == "run" and args.stage is None:
            report = run_pipeline(cfg)
            name = "run"
        else:
            stage = args.stage if args.command == "run" else args.command
            kw = {}
            if stage == "mls":
                if getattr(args, "roof0", None) is not None:
                    kw["roof0"] = load_roof_file(cfg.system, args.roof0, fallback=cfg.roof)
                if getattr(args, "roof1", None) is not None:
                    kw["roof1"] = load_roof_file(cfg.system, args.roof1, fallback=cfg.roof)
            report, pipe = _single(cfg, stage, **kw)
            name = stage
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if exc.config_error else 1
    except PARAM_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    text = dump(report)
    sys.stdout.write(text)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / f"{name}.json").write_text(text)
        if pipe is not None and hasattr(pipe, "_spectrum"):
            _write_csv(args.out / "mls_spectrum.csv", ("class", "length0", "length1"), pipe._spectrum)
    if args.emit_profile is not None:
        pipe = pipe or Pipeline(cfg)
        try:
            rows = pipe.profile_rows()
        except (ValueError, RuntimeError) as exc:
            print(f"error: [profile] {exc}", file=sys.stderr)
            return 1
        _write_csv(args.emit_profile, ("t", "A", "V", "Hprime", "dVdt"), rows)
    ok = all(c["pass"] for c in report["checks"])
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
