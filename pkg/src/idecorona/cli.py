"""``idecorona`` command line: check, synth, simulate, reproduce-paper.

Exit codes: 0 success, 1 a check or criterion failed, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys as _sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .acceptance import PaperPipeline, run_all
from .exceptions import AssumptionError, ConfigurationError, SizingError, SolverError
from .io import (ProblemSetup, load_setup, parse_number, preset, read_gains_csv, write_gains_csv,
                 write_trajectory_csv)
from .model import ControllerGains
from .simulate import SimulationRun, simulate_closed_loop, simulate_open_loop
from .spectral import GridSpec, SpectralReport, choose_rates, spectral_report, write_report_csv
from .svg import Panel, Series, write_svg
from .synthesis import (SynthesisResult, rv_tv, support_bound, synthesize, target_norm,
                        theorem_norm_bound)

log = logging.getLogger("idecorona")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SUPPORT_BOUND_EPS = 1e-7


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(_sys.stderr)
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--system", help="system configuration file (INI)")
    src.add_argument("--preset", default=None, help="built-in setup (default: paper-example)")
    p.add_argument("--h", type=float, help="grid step")
    p.add_argument("--nu", type=float, help="decay rate for the synthesis (default: auto)")
    p.add_argument("--grid", help="spectral grid as re_max,im_max,step")
    p.add_argument("--supports", help="gain supports S_1..S_{n+1}, comma separated (expressions in pi allowed)")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
    p.add_argument("--force", action="store_true", help="continue even if an assumption check fails")
    p.add_argument("--tend", type=float, help="simulation horizon")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="idecorona", description="Stabilizing controllers for integral difference "
                                                   "equations with delays via a corona-type synthesis.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("check", help="verify the design assumptions on a spectral grid")
    _common(p)
    p = sub.add_parser("synth", help="synthesize controller gains")
    _common(p)
    p = sub.add_parser("simulate", help="simulate open or closed loop")
    _common(p)
    p.add_argument("--gains", default="none", help="gains CSV from 'synth', or 'none' for open loop")
    p = sub.add_parser("reproduce-paper", help="check, synthesize, simulate and run all acceptance checks")
    _common(p)
    return parser


def _setup(args) -> ProblemSetup:
    setup = load_setup(args.system) if args.system else preset(args.preset or "paper-example")
    if args.h is not None:
        if args.h <= 0:
            raise ConfigurationError("--h must be positive")
        setup = setup.with_step(args.h)
    changes = {}
    if args.grid:
        parts = [parse_number(x) for x in args.grid.split(",")]
        if len(parts) != 3:
            raise ConfigurationError("--grid expects re_max,im_max,step")
        changes["grid"] = GridSpec(*parts)
    if args.supports:
        changes["supports"] = tuple(parse_number(x) for x in args.supports.split(","))
    if args.nu is not None:
        changes["nu"] = args.nu
    if args.tend is not None:
        changes["T_end"] = args.tend
    if changes:
        setup = replace(setup, **changes)
    return setup


def _outdir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _report(setup: ProblemSetup) -> SpectralReport:
    return spectral_report(setup.system, setup.nu_tilde, setup.nu_bar, setup.grid, setup.nu)


def _write_text(path: Path, text: str) -> None:
    path.write_text(text if text.endswith("\n") else text + "\n")


def cmd_check(args) -> int:
    setup, out = _setup(args), _outdir(args)
    report = _report(setup)
    nu = report.nu if report.nu is not None else 0.5 * min(report.nu_tilde, report.nu_bar)
    write_report_csv(out / "spectral_grid.csv", setup.system, nu, setup.grid)
    _write_text(out / "spectral_report.txt", report.summary())
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_FAIL


def _synthesize(setup: ProblemSetup, report: SpectralReport, force: bool) -> tuple[float, SynthesisResult, object]:
    if report.passed:
        nu = choose_rates(report, setup.nu)
    elif force:
        nu = setup.nu if setup.nu is not None else 0.5 * min(report.nu_tilde, report.nu_bar)
        log.warning("assumption checks failed; continuing because of --force")
    else:
        raise AssumptionError("assumption checks failed (use --force to override):\n" + report.summary())
    result, minors, _ = synthesize(setup.system, nu, setup.system.h, setup.supports, budget=report.eta_lower)
    return nu, result, minors


def _synthesis_summary(setup, report, nu, result, minors) -> str:
    sys = setup.system
    h = sys.h
    lines = [
        f"nu = {nu:g}, h = {h:g}, supports = {', '.join(f'{s:.10g}' for s in result.gains.supports)}",
        f"residual_eps = {result.residual_eps:.6e} (budget eta_lower = {report.eta_lower:.6g}, "
        f"{'within' if result.within_budget else 'EXCEEDS'} budget)",
        f"solution_norm = {result.solution_norm:.6g}, method = {result.method}, "
        f"cond = {result.diagnostics.get('cond', math.nan):.3e}, "
        f"optimality = {result.diagnostics.get('optimality', math.nan):.3e}",
        f"atom snap error = {result.diagnostics.get('snap_error', 0.0):.3e}",
    ]
    if report.d_estimate:
        nt = target_norm(minors, h, nu)
        bound = theorem_norm_bound(sys.n, report.d_estimate, nt)
        lines.append(f"norm bound sqrt(n+1)/d |N_T| = {bound:.6g} (d_estimate = {report.d_estimate:.6g}, "
                     f"|N_T| = {nt:.6g})")
        if nu > 0 and nt > 0:
            eps = max(result.residual_eps, SUPPORT_BOUND_EPS)
            S = support_bound(eps, nu, report.d_estimate, rv_tv(minors, nu), nt, sys.n)
            lines.append(f"theoretical support length for residual {eps:.1e}: {S:.6g} "
                         f"(used: {max(result.gains.supports):.6g})")
    return "\n".join(lines)


def _gains_panel(gains: ControllerGains) -> Panel:
    series = [Series(f"g_{i + 1}", gains.h * np.arange(len(c)), c) for i, c in enumerate(gains.g)]
    series.append(Series("f", gains.h * np.arange(len(gains.f)), gains.f, dashed=True))
    return Panel("Controller gains", series, "eta", "gain")


def cmd_synth(args) -> int:
    setup, out = _setup(args), _outdir(args)
    report = _report(setup)
    if report.d_estimate is not None and report.d_estimate <= 0:
        raise AssumptionError("corona gap estimate is zero: spectral stabilizability fails on the grid")
    nu, result, minors = _synthesize(setup, report, args.force)
    write_gains_csv(out / "gains.csv", result.gains, nu, result.residual_eps)
    text = _synthesis_summary(setup, report, nu, result, minors)
    _write_text(out / "synthesis_report.txt", report.summary() + "\n" + text)
    write_svg(out / "gains.svg", [_gains_panel(result.gains)])
    print(text)
    return EXIT_OK if result.within_budget else EXIT_FAIL


def _dynamics_panels(runs: list[tuple[str, SimulationRun]]) -> list[Panel]:
    state = Panel("State X(t)", ylabel="X")
    ctrl = Panel("Input U(t)", ylabel="U")
    norm = Panel("Window norm |X_t| + |U_t|", ylabel="log10 norm", logy=True)
    for label, run in runs:
        for i in range(run.X.values.shape[1]):
            state.series.append(Series(f"{label} X_{i + 1}", run.X.t, run.X.values[:, i], label == "open loop"))
        ctrl.series.append(Series(f"{label} U", run.U.t, run.U.values[:, 0], label == "open loop"))
        norm.series.append(Series(label, run.window_norms[:, 0], run.window_norms[:, 1], label == "open loop"))
    return [state, ctrl, norm]


def _decay_text(label: str, run: SimulationRun) -> str:
    return (f"{label}: fitted rate = {run.fitted_rate:.6g}, R^2 = {run.fit_quality:.4f}, "
            f"C = {run.fit.C:.4g}{' (' + run.fit.flag + ')' if run.fit.flag else ''}, "
            f"final window norm = {run.window_norms[-1, 1]:.4e}")


def cmd_simulate(args) -> int:
    setup, out = _setup(args), _outdir(args)
    sys = setup.system
    if args.gains == "none":
        run = simulate_open_loop(sys, setup.X0, None, sys.h, setup.T_end, setup.U0)
        label = "open loop"
    else:
        gains, _ = read_gains_csv(args.gains)
        if gains.n != sys.n:
            raise ConfigurationError(f"gains file has {gains.n} state gains, system has n = {sys.n}")
        if not math.isclose(gains.h, sys.h, rel_tol=1e-12):
            raise ConfigurationError(f"gains step {gains.h} differs from simulation step {sys.h}; "
                                     "resampling is not supported, rerun synth with --h")
        run = simulate_closed_loop(sys, gains, setup.X0, setup.U0, sys.h, setup.T_end)
        label = "closed loop"
    write_trajectory_csv(out / "trajectory.csv", run)
    write_svg(out / "trajectory.svg", _dynamics_panels([(label, run)]))
    text = _decay_text(label, run)
    _write_text(out / "decay_report.txt", text)
    print(text)
    if label == "closed loop" and not run.fitted_rate < 0:
        return EXIT_FAIL
    return EXIT_OK


def cmd_reproduce_paper(args) -> int:
    setup, out = _setup(args), _outdir(args)
    stage = "check"
    try:
        pipe = PaperPipeline.run(setup)
        stage = "write"
        gains = pipe.result.gains
        write_gains_csv(out / "gains.csv", gains, pipe.nu, pipe.result.residual_eps)
        write_trajectory_csv(out / "trajectory_closed.csv", pipe.closed)
        write_trajectory_csv(out / "trajectory_open.csv", pipe.open)
        write_svg(out / "gains.svg", [_gains_panel(gains)])
        runs = [("closed loop", pipe.closed), ("open loop", pipe.open)]
        write_svg(out / "dynamics.svg", _dynamics_panels(runs))
        write_svg(out / "figure.svg", [_gains_panel(gains), _dynamics_panels(runs)[2]], columns=2)
        stage = "acceptance"
        checks = run_all(pipe, args.seed)
    except (AssumptionError, SolverError, SizingError) as exc:
        raise type(exc)(f"stage {stage}: {exc}") from exc
    lines = [pipe.report.summary(),
             _synthesis_summary(pipe.setup, pipe.report, pipe.nu, pipe.result, pipe.minors),
             _decay_text("closed loop", pipe.closed), _decay_text("open loop", pipe.open), ""]
    lines += [c.line() for c in checks]
    passed = sum(c.passed for c in checks)
    lines.append(f"{passed}/{len(checks)} acceptance checks passed")
    text = "\n".join(lines)
    _write_text(out / "summary.txt", text)
    (out / "summary.json").write_text(json.dumps(
        {"checks": [{"number": c.number, "name": c.name, "passed": c.passed, "detail": c.detail}
                    for c in checks],
         "nu": pipe.nu, "residual_eps": pipe.result.residual_eps,
         "closed_loop_rate": pipe.closed.fitted_rate}, indent=2) + "\n")
    print(text)
    return EXIT_OK if passed == len(checks) else EXIT_FAIL


COMMANDS = {"check": cmd_check, "synth": cmd_synth, "simulate": cmd_simulate,
            "reproduce-paper": cmd_reproduce_paper}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"idecorona: error: {exc}", file=_sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"idecorona: configuration error: {exc}", file=_sys.stderr)
        return EXIT_USAGE
    except (AssumptionError, SolverError, SizingError) as exc:
        print(f"idecorona: {exc}", file=_sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    raise SystemExit(main())
