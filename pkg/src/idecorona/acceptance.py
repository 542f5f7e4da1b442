"""End-to-end pipeline on the built-in example and the numbered acceptance checks.

Each ``criterion_k`` returns a :class:`CheckResult`; :func:`run_all` runs the
nine of them in order. Random systems come from :func:`random_system` and are
fully determined by the seed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .io import ProblemSetup, preset
from .measures import discretize, identical, laplace_eval, weighted_tv_norm
from .model import ControllerGains, IdeSystem, Kernel, build_P, build_Q, p_eval, q_eval
from .simulate import SimulationRun, simulate_closed_loop, simulate_open_loop
from .spectral import (GridSpec, SpectralReport, certify_principal_part,
                       check_spectral_stabilizability, choose_rates, spectral_report)
from .synthesis import (AssembledSystem, MinorSet, SynthesisProblem, SynthesisResult,
                        assemble_system, complex_minors, compute_minors, decomposition_terms,
                        solve_min_norm, synthesize, target_norm, theorem_norm_bound)

__all__ = [
    "CheckResult",
    "PaperPipeline",
    "random_system",
    "random_gains",
    "run_all",
]

RESIDUAL_TOL = 1e-6
RUNTIME_LIMIT = 60.0


@dataclass(frozen=True)
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number}. {self.name}: {self.detail}"


@dataclass
class PaperPipeline:
    """Check, synthesize and simulate one setup, keeping every intermediate."""

    setup: ProblemSetup
    report: SpectralReport
    nu: float
    result: SynthesisResult
    minors: MinorSet
    system: AssembledSystem
    synth_seconds: float
    closed: SimulationRun
    open: SimulationRun
    timings: dict = field(default_factory=dict)

    @classmethod
    def run(cls, setup: ProblemSetup | None = None, h: float | None = None, T_end: float | None = None,
            nu: float | None = None, grid: GridSpec | None = None) -> PaperPipeline:
        setup = preset("paper-example") if setup is None else setup
        if h is not None:
            setup = setup.with_step(h)
        sys = setup.system
        T_end = setup.T_end if T_end is None else T_end
        grid = setup.grid if grid is None else grid
        nu = setup.nu if nu is None else nu
        t0 = time.perf_counter()
        report = spectral_report(sys, setup.nu_tilde, setup.nu_bar, grid, nu)
        t1 = time.perf_counter()
        rate = choose_rates(report, nu)
        result, minors, system = synthesize(sys, rate, sys.h, setup.supports, budget=report.eta_lower)
        t2 = time.perf_counter()
        closed = simulate_closed_loop(sys, result.gains, setup.X0, setup.U0, T_end=T_end)
        opened = simulate_open_loop(sys, setup.X0, None, sys.h, T_end, setup.U0)
        t3 = time.perf_counter()
        return cls(setup, report, rate, result, minors, system, t2 - t1, closed, opened,
                   {"check": t1 - t0, "synth": t2 - t1, "simulate": t3 - t2})


def random_system(rng: np.random.Generator, n: int, h: float = 0.05) -> IdeSystem:
    """Small random system with two state delays, two input delays and smooth kernels."""
    tau_star, theta_star = 2.0, 1.5
    taus = np.sort(rng.uniform(0.2, tau_star, 2))
    thetas = np.sort(rng.uniform(0.0, theta_star, 2))
    if rng.random() < 0.5:
        thetas[0] = 0.0
    scale = 0.3 / n
    N = Kernel.named(str(rng.choice(["sin", "cos", "one"])), scale * rng.normal(size=(n, n)))
    M = Kernel.named(str(rng.choice(["sqrt2eta", "one", "cos"])), rng.normal(size=(n, 1)))
    return IdeSystem.create(
        n,
        state_atoms=[(float(t), scale * rng.normal(size=(n, n))) for t in taus],
        input_atoms=[(float(t), rng.normal(size=(n, 1))) for t in thetas],
        N=N, M=M, tau_star=tau_star, theta_star=theta_star, h=h, name=f"random-n{n}",
    )


def random_gains(rng: np.random.Generator, n: int, h: float, support: float = 1.0) -> ControllerGains:
    k = int(round(support / h)) + 1
    return ControllerGains(h, tuple(0.3 * rng.normal(size=k) for _ in range(n)), 0.3 * rng.normal(size=k))


def _random_z(rng: np.random.Generator, nu: float, count: int, re_max: float = 3.0,
              im_max: float = 30.0) -> np.ndarray:
    return rng.uniform(-nu, re_max, count) + 1j * rng.uniform(-im_max, im_max, count)


def criterion_1(pipe: PaperPipeline) -> CheckResult:
    eps, secs = pipe.result.residual_eps, pipe.synth_seconds
    ok = eps <= RESIDUAL_TOL and secs <= RUNTIME_LIMIT
    return CheckResult(1, "example synthesis residual", ok,
                       f"residual_eps = {eps:.3e} (tol {RESIDUAL_TOL:g}) at nu = {pipe.nu:g}, "
                       f"h = {pipe.setup.system.h:g}; synthesis took {secs:.2f} s")


def criterion_2(pipe: PaperPipeline) -> CheckResult:
    run = pipe.closed
    wn = run.window_norms[:, 1]
    ratio = float(wn[-1] / wn.max())
    ok = run.fitted_rate < 0 and run.fit_quality >= 0.9 and ratio <= 0.01
    return CheckResult(2, "closed-loop decay", ok,
                       f"fitted rate {run.fitted_rate:.4f}, R^2 {run.fit_quality:.4f}, "
                       f"final/max window norm {ratio:.2e} (open loop rate {pipe.open.fitted_rate:.4f})")


def criterion_3(seed: int = 0, systems: int = 5, points: int = 100, nu: float = 0.05) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst, dims = 0.0, []
    for _ in range(systems):
        n = int(rng.integers(1, 4))
        dims.append(n)
        sys = random_system(rng, n)
        gains = random_gains(rng, n, sys.h)
        minors = compute_minors(sys)
        z = _random_z(rng, nu, points)
        detA, rhs = decomposition_terms(sys, gains, minors, z)
        worst = max(worst, float(np.max(np.abs(detA - rhs) / (1 + np.abs(detA)))))
    return CheckResult(3, "determinant decomposition identity", worst <= 1e-6,
                       f"max scaled error {worst:.2e} over {systems} systems (n = {dims})")


def criterion_4(seed: int = 0, points: int = 100, nu: float = 0.05) -> CheckResult:
    rng = np.random.default_rng(seed + 1)
    worst = 0.0
    for n in (1, 2, 3):
        sys = random_system(rng, n)
        minors = compute_minors(sys)
        z = _random_z(rng, nu, points)
        direct = complex_minors(q_eval(sys, z), p_eval(sys, z))
        via = minors.eval(z)
        rel = np.abs(via - direct) / np.maximum(np.abs(direct), 1e-300)
        worst = max(worst, float(np.max(np.where(np.abs(direct) > 1e-12, rel, np.abs(via - direct)))))
    ex = preset("paper-example").system
    m1 = compute_minors(ex)
    P, Q = build_P(ex), build_Q(ex)
    exact = identical(m1.R[0].scaled(m1.signs[0]), P) and identical(m1.R[1], Q)
    return CheckResult(4, "minor/measure consistency", worst <= 1e-6 and exact,
                       f"max relative error {worst:.2e}; n = 1 minors equal -P and Q "
                       f"(sign-corrected R_1 == P, R_2 == Q): {exact}")


def criterion_5(seed: int = 0, trials: int = 20) -> CheckResult:
    rng = np.random.default_rng(seed + 2)
    worst_res = worst_norm = worst_opt = 0.0
    largest = 0
    for _ in range(trials):
        n = int(rng.integers(1, 3))
        sys = random_system(rng, n, h=0.1)
        minors = compute_minors(sys)
        supports = tuple(float(s) for s in rng.uniform(0.3, 2.0, n + 1).round(1))
        nu = float(rng.uniform(0.0, 0.2))
        prob = SynthesisProblem.default(sys, minors, nu, sys.h, supports)
        system = assemble_system(minors, prob, dense=True)
        largest = max(largest, system.n_unknowns)
        res = solve_min_norm(system)
        A, b = system.A, system.b
        w_star = np.linalg.pinv(A) @ b
        r_star = float(np.linalg.norm(A @ w_star - b))
        n_star = float(np.linalg.norm(w_star))
        worst_res = max(worst_res, abs(res.residual_eps - r_star) / max(r_star, 1e-300))
        worst_norm = max(worst_norm, abs(res.solution_norm - n_star) / n_star)
        scale = float(np.linalg.norm(A, 2) * np.linalg.norm(b))
        worst_opt = max(worst_opt, res.diagnostics["optimality"] / scale)
    ok = worst_res <= 1e-8 and worst_norm <= 1e-8 and worst_opt <= 1e-8 and largest <= 200
    return CheckResult(5, "minimum-norm contract", ok,
                       f"vs pinv: residual {worst_res:.1e}, norm {worst_norm:.1e}; "
                       f"optimality {worst_opt:.1e}; up to {largest} unknowns")


def _weighted(samples: np.ndarray, h: float, nu: float) -> float:
    t = h * np.arange(samples.size)
    return math.sqrt(h * float(np.sum((np.exp(nu * t) * samples) ** 2)))


def criterion_6(pipe: PaperPipeline, seed: int = 0, signals: int = 50) -> CheckResult:
    sys, h, nu = pipe.setup.system, pipe.setup.system.h, pipe.nu
    nt = target_norm(pipe.minors, h, nu)
    d = pipe.report.d_estimate
    bound = theorem_norm_bound(sys.n, d, nt)
    norm_ok = pipe.result.solution_norm <= bound * (1 + 1e-3)

    rng = np.random.default_rng(seed + 3)
    minors = list(pipe.minors.R)
    for n in (1, 2):
        minors += list(compute_minors(random_system(rng, n, h)).R)
    young = 0.0
    for k in range(signals):
        R = minors[k % len(minors)]
        masses = discretize(R, h).weights[:, 0, 0]
        v = rng.normal(size=int(rng.integers(20, 400)))
        nu_k = float(rng.uniform(0.0, 0.3))
        lhs = _weighted(np.convolve(masses, v), h, nu_k)
        rhs = weighted_tv_norm(R, nu_k).value * _weighted(v, h, nu_k)
        young = max(young, lhs / rhs)
    tail = 0.0
    for _ in range(signals):
        v = rng.normal(size=int(rng.integers(20, 1000)))
        nu_k = float(rng.uniform(0.0, 0.3))
        T = float(rng.uniform(0.0, h * v.size))
        k0 = int(math.ceil(T / h - 1e-12))
        lhs = math.sqrt(h * float(np.sum(v[k0:] ** 2)))
        tail = max(tail, lhs / (math.exp(-nu_k * T) * _weighted(v, h, nu_k)))
    ok = norm_ok and young <= 1 + 1e-6 and tail <= 1 + 1e-6
    return CheckResult(6, "norm, Young and tail bounds", ok,
                       f"solution norm {pipe.result.solution_norm:.4f} <= sqrt(n+1)/d |N_T| = {bound:.4f} "
                       f"(d = {d:.4f}, |N_T| = {nt:.4f}); worst Young ratio {young:.4f}, tail ratio {tail:.4f}")


def criterion_7(pipe: PaperPipeline | None = None, nu_tilde: float = 0.05) -> CheckResult:
    sys = preset("paper-example").system if pipe is None else pipe.setup.system
    grid = GridSpec() if pipe is None else pipe.setup.grid
    nu_bar = 0.05 if pipe is None else pipe.setup.nu_bar
    cert = certify_principal_part(sys, nu_tilde)
    rho = 0.2 * math.exp(2 * nu_tilde) + 0.4 * math.exp(4 * nu_tilde)
    st = check_spectral_stabilizability(sys, nu_bar, grid)
    ok = (cert.certified and abs(cert.rho - rho) <= 1e-12 and abs(cert.eta_lower - (1 - rho)) <= 1e-12
          and st.ok and st.relative > 1e-9)
    return CheckResult(7, "assumption certification", ok,
                       f"rho = {cert.rho:.6f}, eta_lower = {cert.eta_lower:.6f} (certified {cert.certified}); "
                       f"sigma_n min {st.min_rank_indicator:.4f}, relative {st.relative:.3e}")


def criterion_8(pipe: PaperPipeline) -> CheckResult:
    sys = pipe.setup.system
    g = pipe.result.gains
    want = (sys.tau_star, sys.theta_star)
    inside = all(h_len <= s + 1e-12 for h_len, s in zip((g.h * (len(c) - 1) for c in g.channels), want))
    ok = tuple(g.supports) == want and inside and pipe.result.residual_eps <= RESIDUAL_TOL
    return CheckResult(8, "supports at tau* and theta*", ok,
                       f"supports {tuple(round(s, 6) for s in g.supports)}, last nodes at "
                       f"{tuple(round(g.h * (len(c) - 1), 6) for c in g.channels)}, "
                       f"residual {pipe.result.residual_eps:.2e}")


def criterion_9(pipe: PaperPipeline | None = None) -> CheckResult:
    toy = IdeSystem.create(1, state_atoms=[(1.0, 0.5)], tau_star=1.0, theta_star=1.0, h=0.01)
    run = simulate_open_loop(toy, X0=1.0, T_end=10.0)
    k = np.arange(1, 1001)
    expected = 0.5 ** (-(-k // 100))
    got = run.X.values[-1000:, 0]
    toy_ok = bool(np.array_equal(got, expected))

    setup = preset("paper-example") if pipe is None else pipe.setup
    sys = setup.system
    zero = ControllerGains.zeros(1, sys.h, (sys.tau_star, sys.theta_star))
    a = simulate_closed_loop(sys, zero, setup.X0, T_end=setup.T_end)
    b = simulate_open_loop(sys, setup.X0, None, sys.h, setup.T_end)
    same = bool(np.array_equal(a.X.values, b.X.values) and np.array_equal(a.U.values, b.U.values))

    gains = pipe.result.gains if pipe is not None else zero
    r1 = simulate_closed_loop(sys, gains, setup.X0, T_end=setup.T_end)
    r2 = simulate_closed_loop(sys, gains, lambda t: 2 * setup.X0(t), T_end=setup.T_end)
    lin = float(np.max(np.abs(r2.X.values - 2 * r1.X.values)) / np.max(np.abs(2 * r1.X.values)))
    ok = toy_ok and same and lin <= 1e-12
    return CheckResult(9, "simulator oracles", ok,
                       f"toy geometric decay exact: {toy_ok}; zero gains == open loop: {same}; "
                       f"linearity error {lin:.1e}")


def run_all(pipe: PaperPipeline | None = None, seed: int = 0) -> list[CheckResult]:
    pipe = PaperPipeline.run() if pipe is None else pipe
    return [
        criterion_1(pipe),
        criterion_2(pipe),
        criterion_3(seed),
        criterion_4(seed),
        criterion_5(seed),
        criterion_6(pipe, seed),
        criterion_7(pipe),
        criterion_8(pipe),
        criterion_9(pipe),
    ]
