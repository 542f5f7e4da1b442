"""Numerical checks of the design assumptions on a grid of the shifted half-plane.

Grids cover ``Re z`` in ``[-nu, re_max]`` and ``Im z`` in ``[0, im_max]``;
every symbol has real coefficients, so values below the real axis are the
conjugates of the ones above it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import AssumptionError, ConfigurationError
from .measures import laplace_eval_grid
from .model import IdeSystem, build_P, build_Q, delta0_eval
from .synthesis import MinorSet, complex_minors, compute_target

__all__ = [
    "GridSpec",
    "SpectralReport",
    "grid_axes",
    "certify_principal_part",
    "estimate_corona_gap",
    "check_spectral_stabilizability",
    "choose_rates",
    "spectral_report",
    "write_report_csv",
]

MAX_GRID_STEP = 0.5


@dataclass(frozen=True)
class GridSpec:
    re_max: float = 20.0
    im_max: float = 200.0
    step: float = 0.05
    re_min: float | None = None  # defaults to -nu

    def refined(self, factor: int = 2) -> GridSpec:
        return GridSpec(self.re_max, self.im_max, self.step / factor, self.re_min)

    def with_im_max(self, im_max: float) -> GridSpec:
        return GridSpec(self.re_max, im_max, self.step, self.re_min)


def grid_axes(grid: GridSpec, nu: float) -> tuple[np.ndarray, np.ndarray]:
    if grid.step <= 0 or grid.step > MAX_GRID_STEP:
        raise ConfigurationError(f"grid step {grid.step} outside (0, {MAX_GRID_STEP}]")
    lo = -nu if grid.re_min is None else grid.re_min
    n_re = int(math.floor((grid.re_max - lo) / grid.step + 1e-9)) + 1
    n_im = int(math.floor(grid.im_max / grid.step + 1e-9)) + 1
    return lo + grid.step * np.arange(n_re), grid.step * np.arange(n_im)


def _symbols(sys: IdeSystem, re, im, h=None) -> tuple[np.ndarray, np.ndarray]:
    q = laplace_eval_grid(build_Q(sys, h), re, im)
    p = laplace_eval_grid(build_P(sys, h), re, im)
    return q, p


@dataclass(frozen=True)
class PrincipalPartCertificate:
    certified: bool
    eta_lower: float
    rho: float


def certify_principal_part(sys: IdeSystem, nu_tilde: float, grid: GridSpec | None = None) -> PrincipalPartCertificate:
    """Lower bound on ``|det Delta_0|`` over ``Re z > -nu_tilde``.

    If ``rho = sum_k |A_k| exp(nu_tilde tau_k) < 1`` every eigenvalue of
    ``Delta_0(z)`` is at least ``1 - rho`` in modulus and ``(1 - rho)^n`` is a
    certified bound. Otherwise the grid minimum, lowered by the largest change
    of ``|det Delta_0|`` across half a grid cell diagonal (estimated from
    neighbouring nodes), is returned uncertified; it is 0 when a zero could
    hide between grid nodes.
    """
    if nu_tilde < 0:
        raise ConfigurationError("nu_tilde must be nonnegative")
    rho = 0.0
    if sys.taus.size:
        rho = float(np.sum(np.linalg.norm(sys.A, 2, axis=(1, 2)) * np.exp(nu_tilde * sys.taus)))
    if rho < 1.0:
        return PrincipalPartCertificate(True, (1.0 - rho) ** sys.n, rho)
    grid = GridSpec() if grid is None else grid
    re, im = grid_axes(grid, nu_tilde)
    z = re[:, None] + 1j * im[None, :]
    vals = np.abs(np.linalg.det(delta0_eval(sys, z)))
    slope = 0.0
    if vals.shape[0] > 1:
        slope = max(slope, float(np.max(np.abs(np.diff(vals, axis=0)))) / grid.step)
    if vals.shape[1] > 1:
        slope = max(slope, float(np.max(np.abs(np.diff(vals, axis=1)))) / grid.step)
    eta = float(vals.min()) - slope * grid.step / math.sqrt(2.0)
    return PrincipalPartCertificate(False, max(eta, 0.0), rho)


@dataclass(frozen=True)
class GapEstimate:
    d_estimate: float
    argmin: complex
    tail_floor: float  # heuristic, never certified
    certified: bool = False


def estimate_corona_gap(sys: IdeSystem, nu: float, grid: GridSpec, h: float | None = None,
                        target: MinorSet | None = None, eta_lower: float | None = None) -> GapEstimate:
    """Grid minimum of ``sum_j |r_j(z)|`` over ``Re z >= -nu``.

    ``tail_floor`` is ``eta_lower - max |N~(z)|`` over ``Im z > im_max / 2``,
    a rough stand-in for the behaviour beyond the grid where
    ``r_{n+1} = det Delta_0 + N~`` and ``N~`` decays.
    """
    re, im = grid_axes(grid, nu)
    q, p = _symbols(sys, re, im, h)
    r = complex_minors(q, p)
    total = np.sum(np.abs(r), axis=-1)
    k = np.unravel_index(np.argmin(total), total.shape)
    if eta_lower is None:
        eta_lower = certify_principal_part(sys, nu, grid).eta_lower
    N_T = target.N_T if target is not None else compute_target(sys, h)
    hi = im > 0.5 * grid.im_max
    tail = 0.0
    if not N_T.is_zero and hi.any():
        tail = float(np.max(np.abs(laplace_eval_grid(N_T, re, im[hi]))))
    return GapEstimate(float(total[k]), complex(re[k[0]], im[k[1]]), eta_lower - tail)


@dataclass(frozen=True)
class StabilizabilityCheck:
    ok: bool
    min_rank_indicator: float
    relative: float
    argmin: complex


def check_spectral_stabilizability(sys: IdeSystem, nu_bar: float, grid: GridSpec, h: float | None = None,
                                   rank_tol: float = 1e-9) -> StabilizabilityCheck:
    """Smallest n-th singular value of ``[q, -p]`` on the grid over ``Re z >= -nu_bar``.

    The check passes when that minimum exceeds ``rank_tol`` times the largest
    singular value met on the grid.
    """
    if nu_bar <= 0:
        raise ConfigurationError("nu_bar must be positive")
    re, im = grid_axes(grid, nu_bar)
    q, p = _symbols(sys, re, im, h)
    sv = np.linalg.svd(np.concatenate([q, -p], axis=-1), compute_uv=False)
    sig_n = sv[..., sys.n - 1]
    k = np.unravel_index(np.argmin(sig_n), sig_n.shape)
    smin, smax = float(sig_n[k]), float(np.max(sv[..., 0]))
    rel = smin / smax if smax > 0 else 0.0
    return StabilizabilityCheck(rel > rank_tol, smin, rel, complex(re[k[0]], im[k[1]]))


@dataclass
class SpectralReport:
    """Margins and rates behind the two design assumptions.

    Golden values for the built-in example are generated by this code; they
    are not taken from a publication.
    """

    nu_tilde: float
    eta_lower: float
    eta_certified: bool
    rho: float
    nu_bar: float
    stabilizable: bool
    sigma_min: float
    sigma_rel: float
    grid: GridSpec
    nu: float | None = None
    d_estimate: float | None = None
    d_argmin: complex | None = None
    d_tail_floor: float | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        ok = self.eta_lower > 0 and self.stabilizable
        return ok and (self.d_estimate is None or self.d_estimate > 0)

    def summary(self) -> str:
        lines = [
            f"principal part: nu_tilde = {self.nu_tilde:g}, rho = {self.rho:.6g}, "
            f"eta_lower = {self.eta_lower:.6g} ({'certified' if self.eta_certified else 'grid estimate'})",
            f"stabilizability: nu_bar = {self.nu_bar:g}, min sigma_n = {self.sigma_min:.6g} "
            f"(relative {self.sigma_rel:.3g}) -> {'ok' if self.stabilizable else 'FAILED'}",
        ]
        if self.nu is not None:
            lines.append(f"rate: nu = {self.nu:g}")
        if self.d_estimate is not None:
            lines.append(f"corona gap: d_estimate = {self.d_estimate:.6g} at z = {self.d_argmin:.4g} "
                         f"(grid estimate, not certified); tail floor = {self.d_tail_floor:.6g}")
        lines.append(f"grid: re_max = {self.grid.re_max:g}, im_max = {self.grid.im_max:g}, "
                     f"step = {self.grid.step:g}")
        lines += self.notes
        return "\n".join(lines)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["d_argmin"] = None if self.d_argmin is None else [self.d_argmin.real, self.d_argmin.imag]
        d["passed"] = self.passed
        return d


def choose_rates(report: SpectralReport, nu: float | None = None) -> float:
    """Decay rate for the synthesis: ``0.5 min(nu_bar, nu_tilde)`` unless overridden.

    Refuses when an assumption check failed or the override is not in
    ``(0, min(nu_bar, nu_tilde))``.
    """
    if not (report.eta_lower > 0 and report.stabilizable):
        raise AssumptionError("design assumptions not verified:\n" + report.summary())
    cap = min(report.nu_bar, report.nu_tilde)
    if nu is None:
        return 0.5 * cap
    if not 0 < nu < cap:
        raise ConfigurationError(f"nu = {nu} must lie in (0, min(nu_bar, nu_tilde)) = (0, {cap})")
    return float(nu)


def spectral_report(sys: IdeSystem, nu_tilde: float = 0.1, nu_bar: float = 0.1,
                    grid: GridSpec | None = None, nu: float | None = None,
                    h: float | None = None) -> SpectralReport:
    """Run both assumption checks, pick ``nu`` and estimate the corona gap there."""
    grid = GridSpec() if grid is None else grid
    pp = certify_principal_part(sys, nu_tilde, grid)
    st = check_spectral_stabilizability(sys, nu_bar, grid, h)
    report = SpectralReport(nu_tilde, pp.eta_lower, pp.certified, pp.rho, nu_bar, st.ok,
                            st.min_rank_indicator, st.relative, grid)
    if not (pp.eta_lower > 0 and st.ok):
        return report
    report.nu = choose_rates(report, nu)
    gap = estimate_corona_gap(sys, report.nu, grid, h, eta_lower=pp.eta_lower)
    report.d_estimate, report.d_argmin, report.d_tail_floor = gap.d_estimate, gap.argmin, gap.tail_floor
    return report


def write_report_csv(path, sys: IdeSystem, nu: float, grid: GridSpec, h: float | None = None,
                     max_rows: int = 50_000) -> int:
    """CSV of ``(re, im, |det Delta_0|, sum |r_j|, sigma_n)`` on a thinned copy of the grid.

    The grid is subsampled with a common stride so that at most ``max_rows``
    rows are written. Returns the number of rows.
    """
    re, im = grid_axes(grid, nu)
    stride = max(1, math.ceil(math.sqrt(re.size * im.size / max_rows)))
    re, im = re[::stride], im[::stride]
    q, p = _symbols(sys, re, im, h)
    z = re[:, None] + 1j * im[None, :]
    det0 = np.abs(np.linalg.det(delta0_eval(sys, z)))
    rsum = np.sum(np.abs(complex_minors(q, p)), axis=-1)
    sig = np.linalg.svd(np.concatenate([q, -p], axis=-1), compute_uv=False)[..., sys.n - 1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["re", "im", "abs_det_delta0", "sum_abs_minors", "sigma_n"])
        for a in range(re.size):
            for b in range(im.size):
                w.writerow([f"{re[a]:.6g}", f"{im[b]:.6g}", f"{det0[a, b]:.10g}",
                            f"{rsum[a, b]:.10g}", f"{sig[a, b]:.10g}"])
    return re.size * im.size
