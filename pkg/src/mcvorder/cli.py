"""Command-line entry point: ``mcvorder <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical blow-up,
4 order violation, 5 oracle failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__, oracles
from .coefficients import ASSUMPTION_II, ModelPair, validate_assumption_II
from .config import ConfigError, ExperimentConfig, load_config
from .measures import (EmpiricalMeasure, check_mcv, default_strikes, stop_loss_curve, stop_loss_tolerance,
                       write_stop_loss_csv)
from .paths import (Estimate, estimate_difference, estimate_functional, spot_check_composite,
                    write_curve_csv)
from .scheme import (NumericalBlowup, ParticleEnsemble, StepSizeError, check_step_size,
                     coincidence_probability, generate_noise, refinement_errors, simulate,
                     step_size_bound)
from .svg import Series, write_svg

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_ORDER = 4
EXIT_ORACLE = 5


class OrderViolation(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _out_dir(cfg: ExperimentConfig) -> Path:
    path = Path(cfg.outputs.directory)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_manifest(directory: Path, command: str, cfg: ExperimentConfig | None, extra: dict) -> None:
    """``run.manifest``: sorted JSON with config echo, seed and versions; no timestamps."""
    data = {"tool": "mcvorder", "version": __version__, "numpy": np.__version__, "command": command, **extra}
    if cfg is not None:
        data["config"] = cfg.raw
        data["seed"] = cfg.scheme.seed
        data["models"] = {name: {"h": cfg.scheme.h, "step_bound": step_size_bound(spec.model),
                                 "step_size_ok": cfg.scheme.h < step_size_bound(spec.model)}
                          for name, spec in sorted(cfg.models.items())}
    with open(directory / "run.manifest", "w") as fh:
        json.dump(data, fh, sort_keys=True, indent=2, default=str)
        fh.write("\n")


def _run_models(cfg: ExperimentConfig, names, threads: int) -> dict[str, ParticleEnsemble]:
    """Simulate each distinct named model on one shared noise grid."""
    for name in names:
        check_step_size(cfg.model(name).model, cfg.scheme)
    noise = generate_noise(cfg.scheme.seed, cfg.scheme.particles, cfg.scheme.steps, threads)
    out = {}
    for name in dict.fromkeys(names):
        spec = cfg.model(name)
        out[name] = simulate(spec.model, spec.initial_samples(cfg.scheme.particles), cfg.scheme, noise, threads)
    return out


def _strikes(cfg: ExperimentConfig, mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> np.ndarray:
    s = cfg.order_check.strikes
    return np.asarray(s) if isinstance(s, tuple) else default_strikes(mu, nu, s)


def _ensemble_strikes(cfg: ExperimentConfig, ens: ParticleEnsemble) -> np.ndarray:
    """One strike grid for every marginal of a run: its full range widened by one std."""
    s = cfg.order_check.strikes
    if isinstance(s, tuple):
        return np.asarray(s)
    spread = float(ens.states.std())
    lo, hi = float(ens.states.min()) - spread, float(ens.states.max()) + spread
    if hi <= lo:
        lo, hi = lo - 1.0, hi + 1.0
    return np.linspace(lo, hi, s)


def _curve(ens: ParticleEnsemble, f) -> list[Estimate]:
    return [estimate_functional(ens, f, t) for t in ens.times]


def _spot_check(cfg: ExperimentConfig, ens: ParticleEnsemble) -> None:
    for f in cfg.functionals:
        spot_check_composite(f, ens, seed=cfg.scheme.seed)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: ExperimentConfig, threads: int = 1) -> int:
    out = _out_dir(cfg)
    if not cfg.models:
        raise ConfigError("models: at least one model is required")
    runs = _run_models(cfg, list(cfg.models), threads)
    for name, ens in runs.items():
        if cfg.outputs.ensemble_csv:
            ens.to_csv(out / f"ensemble_{name}.csv")
        if cfg.outputs.marginals_csv:
            strikes = _ensemble_strikes(cfg, ens)
            write_stop_loss_csv(out / f"marginals_{name}.csv",
                                [(m, stop_loss_curve(mu, strikes)) for m, mu in enumerate(ens.marginals)])
        _spot_check(cfg, ens)
        for f in cfg.functionals:
            write_curve_csv(out / f"curve_{f.name}_{name}.csv", ens.times, _curve(ens, f))
    write_manifest(out, "simulate", cfg, {})
    print(f"simulated {len(runs)} model(s) into {out}")
    return EXIT_OK


@dataclass(frozen=True)
class BoundRow:
    functional: str
    t: float
    lower: Estimate
    mid: Estimate
    upper: Estimate
    margin_lower: Estimate
    margin_upper: Estimate


def bound_rows(cfg: ExperimentConfig, runs: dict[str, ParticleEnsemble]) -> list[BoundRow]:
    spec = cfg.bound_check
    lo, mid, up = runs[spec.lower], runs[spec.mid], runs[spec.upper]
    rows = []
    for f in cfg.functionals:
        for t in lo.times:
            rows.append(BoundRow(
                f.name, float(t),
                estimate_functional(lo, f, t), estimate_functional(mid, f, t), estimate_functional(up, f, t),
                estimate_difference(lo, mid, f, t), estimate_difference(mid, up, f, t),
            ))
    return rows


def _violates(margin: Estimate, slack_z: float) -> bool:
    return margin.value < -slack_z * margin.stderr - 1e-12 * (1.0 + abs(margin.value))


def cmd_bound_check(cfg: ExperimentConfig, threads: int = 1) -> int:
    spec = cfg.bound_check
    if spec is None:
        raise ConfigError("bound_check: section [bound_check] with lower, mid, upper is required")
    out = _out_dir(cfg)
    runs = _run_models(cfg, [spec.lower, spec.mid, spec.upper], threads)
    for ens in runs.values():
        _spot_check(cfg, ens)
    rows = bound_rows(cfg, runs)

    with open(out / "bounds.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["functional", "t", "lower", "lower_stderr", "mid", "mid_stderr", "upper", "upper_stderr",
                    "margin_lower", "margin_lower_stderr", "margin_upper", "margin_upper_stderr"])
        for r in rows:
            w.writerow([r.functional, _fmt(r.t)] + [_fmt(v) for e in (r.lower, r.mid, r.upper, r.margin_lower,
                                                                        r.margin_upper)
                                                    for v in (e.value, e.stderr)])
    for f in cfg.functionals:
        frows = [r for r in rows if r.functional == f.name]
        times = [r.t for r in frows]
        for role in ("lower", "mid", "upper"):
            write_curve_csv(out / f"curve_{f.name}_{role}.csv", times, [getattr(r, role) for r in frows])
        if cfg.outputs.svg:
            series = []
            for role, key in (("lower", spec.lower), ("mid", spec.mid), ("upper", spec.upper)):
                ests = [getattr(r, role) for r in frows]
                ci = np.array([e.ci95 for e in ests])
                series.append(Series(f"{role}: {key}", np.array(times), np.array([e.value for e in ests]),
                                     ci[:, 0], ci[:, 1]))
            write_svg(out / f"bounds_{f.name}.svg", series, title=f"{f.name}: {spec.lower} <= {spec.mid} "
                      f"<= {spec.upper}", ylabel="E F_t")

    probes = {}
    for a, b in ((spec.lower, spec.mid), (spec.mid, spec.upper)):
        report = validate_assumption_II(ModelPair(cfg.model(a).model, cfg.model(b).model), probe_count=200,
                                        seed=cfg.scheme.seed)
        probes[f"{a}<={b}"] = report.kinds()
    write_manifest(out, "bound-check", cfg, {"assumption_probes": probes})

    bad = [(r, side, m) for r in rows
           for side, m in (("lower<=mid", r.margin_lower), ("mid<=upper", r.margin_upper))
           if _violates(m, spec.slack_z)]
    if bad:
        r, side, m = min(bad, key=lambda item: item[2].value / max(item[2].stderr, 1e-300))
        raise OrderViolation(f"bound violated for {r.functional}: {side} at t={r.t:g}, margin {m.value:.6g} "
                             f"(stderr {m.stderr:.3g}, slack z={spec.slack_z:g}); "
                             f"{len(bad)} violating (t, side) pair(s)")
    print(f"ordering {spec.lower} <= {spec.mid} <= {spec.upper} holds at all {len(rows)} (functional, t) points")
    return EXIT_OK


def cmd_order_check(cfg: ExperimentConfig, threads: int = 1) -> int:
    spec = cfg.order
    if spec is None:
        raise ConfigError("order: section [order] with lower, upper, relation is required")
    out = _out_dir(cfg)
    runs = _run_models(cfg, [spec.lower, spec.upper], threads)
    x, y = runs[spec.lower], runs[spec.upper]
    # (II): X below Y; (II'): Y below X
    small, large = (x, y) if spec.relation == ASSUMPTION_II else (y, x)
    verdicts = []
    for m in range(small.n_steps + 1):
        mu, nu = small.marginals[m], large.marginals[m]
        strikes = _strikes(cfg, mu, nu)
        tol = stop_loss_tolerance(mu, nu, strikes, cfg.order_check.z)
        verdicts.append((m, strikes, check_mcv(mu, nu, strikes, tol)))
    with open(out / "verdicts.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "t", "dominated", "worst_margin", "worst_strike", "tolerance_used"])
        for m, _, v in verdicts:
            w.writerow([m, _fmt(small.times[m]), "true" if v.dominated else "false", _fmt(v.worst_margin),
                        _fmt(v.worst_strike), _fmt(v.tolerance_used)])
    if cfg.outputs.marginals_csv:
        for label, ens in (("smaller", small), ("larger", large)):
            write_stop_loss_csv(out / f"marginals_{label}.csv",
                                [(m, stop_loss_curve(ens.marginals[m], k)) for m, k, _ in verdicts])
    write_manifest(out, "order-check", cfg, {"relation": spec.relation})
    failed = [(m, v) for m, _, v in verdicts if not v.dominated]
    if failed:
        m, v = failed[0]
        raise OrderViolation(f"mcv order violated at step {m} (t={small.times[m]:g}): strike {v.worst_strike:.6g}, "
                             f"margin {v.worst_margin:.6g}, tolerance {v.tolerance_used:.3g}; "
                             f"{len(failed)} step(s) fail")
    print(f"dominated at all {len(verdicts)} marginals ({spec.relation})")
    return EXIT_OK


def cmd_oracle(suite: str, out_dir: str = "out") -> int:
    if suite not in oracles.SUITES + ("all",):
        raise ConfigError(f"unknown oracle suite {suite!r}; choose from {list(oracles.SUITES) + ['all']}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = oracles.run_suite(suite)
    text = report.to_text()
    (out / f"oracle_{suite}.txt").write_text(text)
    report.to_csv(out / f"oracle_{suite}.csv")
    write_manifest(out, "oracle", None, {"suite": suite, "catalog_version": oracles.CATALOG_VERSION})
    sys.stdout.write(text)
    return EXIT_OK if report.passed else EXIT_ORACLE


def cmd_convergence(cfg: ExperimentConfig, threads: int = 1) -> int:
    spec = cfg.convergence
    if spec is None:
        raise ConfigError("convergence: section [convergence] with model and ladder is required")
    out = _out_dir(cfg)
    mspec = cfg.model(spec.model)
    base = replace(cfg.scheme, truncation=spec.truncation)
    study = refinement_errors(mspec.model, mspec.initial_samples(base.particles), base, spec.ladder,
                              norm_exponent=spec.r, threads=threads)
    with open(out / "convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["coarse_steps", "fine_steps", "h", "error", "stderr"])
        for r in study.rows:
            w.writerow([r.coarse_steps, r.fine_steps, _fmt(r.h), _fmt(r.error), _fmt(r.stderr)])
    with open(out / "convergence_fit.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "norm_exponent", "truncation", "slope"])
        w.writerow([spec.model, _fmt(study.norm_exponent), spec.truncation, _fmt(study.slope)])
    lip = mspec.model.lip_x_diffusion
    coincidence = []
    if lip > 0 and spec.coincidence_trials > 0:
        with open(out / "coincidence.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["steps", "empirical", "bound", "binomial_stderr"])
            for m in spec.ladder:
                cfg_m = replace(base, steps=m)
                emp, bound = coincidence_probability(cfg_m, lip, spec.coincidence_trials, threads)
                se = math.sqrt(max(emp * (1 - emp), 0.0) / spec.coincidence_trials)
                coincidence.append((m, emp, bound, se))
                w.writerow([m, _fmt(emp), _fmt(bound), _fmt(se)])
    write_manifest(out, "convergence", cfg, {"slope": study.slope})
    print(f"{spec.model}: L^{study.norm_exponent:g} sup-error slope {study.slope:.4f} over ladder {list(spec.ladder)}")
    for m, emp, bound, se in coincidence:
        print(f"  M={m}: untruncated fraction {emp:.5f} (bound {bound:.5f}, stderr {se:.2g})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML experiment configuration")
    common.add_argument("--seed", type=int, help="override scheme.seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    common.add_argument("--allow-large-h", action="store_true", default=None,
                        help="run even when h violates the drift step-size bound")
    common.add_argument("--out", help="override outputs.directory")

    parser = argparse.ArgumentParser(prog="mcvorder", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mcvorder {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate every configured model")
    sub.add_parser("bound-check", parents=[common], help="certify lower <= mid <= upper on path functionals")
    sub.add_parser("order-check", parents=[common], help="certify mcv order of the marginals step by step")
    sub.add_parser("convergence", parents=[common], help="refinement ladder error and slope")
    oracle = sub.add_parser("oracle", help="quadrature and enumeration checks")
    oracle.add_argument("suite", choices=oracles.SUITES + ("all",))
    oracle.add_argument("--out", default="out", help="report directory")
    return parser


_COMMANDS = {
    "simulate": cmd_simulate,
    "bound-check": cmd_bound_check,
    "order-check": cmd_order_check,
    "convergence": cmd_convergence,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "oracle":
            return cmd_oracle(args.suite, args.out)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.config, seed=args.seed, allow_large_h=args.allow_large_h, out=args.out)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            return _COMMANDS[args.command](cfg, args.threads)
    except (ConfigError, StepSizeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalBlowup as exc:
        print(f"numerical blow-up: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OrderViolation as exc:
        print(f"order violation: {exc}", file=sys.stderr)
        return EXIT_ORDER


if __name__ == "__main__":
    sys.exit(main())
