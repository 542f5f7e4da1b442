"""Gain synthesis by minimal-norm solution of the weighted convolution equation.

With ``r_j`` the order-n minors of ``[q, -p]`` (column ``j`` removed) and
``R_j`` their measures, the gains solve

    sum_j (-1)^(n+1+j) R_j * v_j  ~=  N_T        in L^2_nu(0, inf),

where ``v = (g_1, ..., g_n, f)`` and ``N_T`` is the density part of
``det Q - det Delta_0``. The equation is discretized on the grid ``k h`` with
every unknown restricted to its support ``[0, S_j]``; rows and unknowns are
scaled by ``sqrt(h) exp(nu t)`` so that Euclidean norms are discrete
``L^2_nu`` norms, and the minimum-norm least-squares solution is returned.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.signal
from scipy.sparse.linalg import LinearOperator, lsqr

from .exceptions import ConfigurationError, SizingError, SolverError
from .measures import (LATTICE_TOL, HybridMeasure, discretize, laplace_eval,
                       weighted_tv_norm)
from .model import (ControllerGains, IdeSystem, build_P, build_Q, delta0_eval,
                    gains_transform)

log = logging.getLogger(__name__)

__all__ = [
    "MinorSet",
    "SynthesisProblem",
    "AssembledSystem",
    "SynthesisResult",
    "measure_det",
    "compute_minors",
    "compute_target",
    "assemble_system",
    "solve_min_norm",
    "synthesize",
    "support_bound",
    "theorem_norm_bound",
    "verify_closed_loop_characteristic",
    "complex_minors",
]

#: memory cap for a dense design matrix, bytes
DEFAULT_MAX_BYTES = 2 * 1024**3
#: above this many unknowns the solve switches from dense SVD to LSQR
DENSE_UNKNOWN_LIMIT = 6000


def measure_det(entries: Sequence[Sequence[HybridMeasure]]) -> HybridMeasure:
    """Determinant of a square matrix of scalar measures by cofactor expansion."""
    k = len(entries)
    if k == 1:
        return entries[0][0]
    total = HybridMeasure.zero(1, 1)
    for j in range(k):
        if entries[0][j].is_zero:
            continue
        sub = [row[:j] + row[j + 1:] for row in entries[1:]]
        term = entries[0][j] * measure_det(sub)
        total = total + term if j % 2 == 0 else total - term
    return total


def _scalar_grid(m: HybridMeasure) -> list[list[HybridMeasure]]:
    return [[m.entry(i, j) for j in range(m.cols)] for i in range(m.rows)]


def complex_minors(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Minors of ``[q, -p]``: ``out[..., j]`` is the determinant with column ``j`` removed."""
    n = q.shape[-1]
    full = np.concatenate([q, -p], axis=-1)
    cols = list(range(n + 1))
    return np.stack([np.linalg.det(full[..., cols[:j] + cols[j + 1:]]) for j in range(n + 1)], axis=-1)


@dataclass(frozen=True, eq=False)
class MinorSet:
    """Minor measures ``R_j``, their cofactor signs and the target ``N_T``."""

    R: tuple[HybridMeasure, ...]
    signs: tuple[int, ...]
    N_T: HybridMeasure

    @property
    def n(self) -> int:
        return len(self.R) - 1

    def eval(self, z) -> np.ndarray:
        """``r_j(z)`` from the measures, shape ``z.shape + (n+1,)``."""
        return np.stack([laplace_eval(r, z)[..., 0, 0] for r in self.R], axis=-1)


def compute_minors(sys: IdeSystem, h: float | None = None) -> MinorSet:
    """Minor measures of ``[Q, -P]`` and the target ``N_T``.

    For ``n = 1`` this returns ``R_1 = -P`` and ``R_2 = Q`` so that the signed
    combination ``-R_1 * g + R_2 * f`` is ``P * g + Q * f``.
    """
    n = sys.n
    Q, P = build_Q(sys, h), build_P(sys, h)
    grid = [row + [-P.entry(i, 0)] for i, row in enumerate(_scalar_grid(Q))]
    R = []
    for j in range(n + 1):
        sub = [row[:j] + row[j + 1:] for row in grid]
        R.append(measure_det(sub))
    signs = tuple((-1) ** (n + 1 + j) for j in range(1, n + 2))
    return MinorSet(tuple(R), signs, compute_target(sys, h))


def compute_target(sys: IdeSystem, h: float | None = None) -> HybridMeasure:
    """``N_T`` with transform ``det q - det Delta_0``.

    Multilinear expansion of ``det q`` over the columns of ``q = Delta_0 -
    N_hat``: every column subset ``L`` that is nonempty replaces the columns in
    ``L`` by ``-N_hat`` columns, so each term carries at least one density
    factor and the sum has no atoms.
    """
    n = sys.n
    Q = build_Q(sys, h)
    principal = Q.atoms_only()
    minus_N = Q.density_only()
    if minus_N.is_zero:
        return HybridMeasure.zero(1, 1)
    D = _scalar_grid(principal)
    Nm = _scalar_grid(minus_N)
    total = HybridMeasure.zero(1, 1)
    for size in range(1, n + 1):
        for L in itertools.combinations(range(n), size):
            cols = [[(Nm if j in L else D)[i][j] for j in range(n)] for i in range(n)]
            total = total + measure_det(cols)
    # the atomic part cancels exactly; drop any rounding residue
    return total.density_only()


@dataclass(frozen=True)
class SynthesisProblem:
    """Grid, rate and supports of the discrete least-squares problem."""

    nu: float
    h: float
    supports: tuple[float, ...]
    T_fit: float
    budget: float = math.inf
    ridge: float = 0.0

    def __post_init__(self):
        if self.h <= 0 or self.nu < 0:
            raise ConfigurationError("need h > 0 and nu >= 0")
        if any(s < 0 for s in self.supports):
            raise ConfigurationError("supports must be nonnegative")

    def sizes(self) -> list[int]:
        return [int(math.floor(s / self.h + LATTICE_TOL)) + 1 for s in self.supports]

    @classmethod
    def default(cls, sys: IdeSystem, minors: MinorSet, nu: float, h: float | None = None,
                supports: Sequence[float] | None = None, budget: float = math.inf,
                ridge: float = 0.0) -> SynthesisProblem:
        """Supports ``tau*`` for the state gains, ``theta*`` for ``f``; fit horizon
        ``max S + max supp R + tau*``."""
        h = sys.h if h is None else h
        if supports is None:
            supports = (sys.tau_star,) * sys.n + (sys.theta_star,)
        supports = tuple(float(s) for s in supports)
        if len(supports) != sys.n + 1:
            raise ConfigurationError(f"expected {sys.n + 1} supports, got {len(supports)}")
        T_fit = max(supports) + max(r.support_end for r in minors.R) + sys.tau_star
        return cls(float(nu), float(h), supports, T_fit, budget, ridge)


@dataclass(frozen=True, eq=False)
class AssembledSystem:
    """Scaled design matrix ``A`` and target ``b``; unknowns are ``sqrt(h) exp(nu t) v``."""

    problem: SynthesisProblem
    kernels: tuple[np.ndarray, ...]  # signed, nu-weighted grid masses of each R_j
    b: np.ndarray
    sizes: tuple[int, ...]
    A: np.ndarray | None = None
    snap_error: float = 0.0

    @property
    def n_rows(self) -> int:
        return self.b.size

    @property
    def n_unknowns(self) -> int:
        return sum(self.sizes)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    def matvec(self, w: np.ndarray) -> np.ndarray:
        if self.A is not None:
            return self.A @ w
        out = np.zeros(self.n_rows)
        off = self.offsets
        for j, ker in enumerate(self.kernels):
            c = scipy.signal.fftconvolve(ker, w[off[j]:off[j + 1]])[: self.n_rows]
            out[: c.size] += c
        return out

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        if self.A is not None:
            return self.A.T @ y
        out = []
        for ker, size in zip(self.kernels, self.sizes):
            ker = ker[: self.n_rows]
            # correlation: (A^T y)_i = sum_m ker[m] y[i + m]
            c = scipy.signal.fftconvolve(y, ker[::-1])[ker.size - 1:]
            out.append(c[:size])
        return np.concatenate(out)

    def to_dense(self) -> np.ndarray:
        if self.A is not None:
            return self.A
        A = np.zeros((self.n_rows, self.n_unknowns))
        off = self.offsets
        for j, (ker, size) in enumerate(zip(self.kernels, self.sizes)):
            col = np.zeros(self.n_rows)
            m = min(ker.size, self.n_rows)
            col[:m] = ker[:m]
            A[:, off[j]:off[j + 1]] = scipy.linalg.toeplitz(col, np.zeros(size))
        return A

    def unscale(self, w: np.ndarray) -> list[np.ndarray]:
        """Gain samples ``v`` from scaled unknowns ``w``."""
        h, nu = self.problem.h, self.problem.nu
        off = self.offsets
        return [w[off[j]:off[j + 1]] / (math.sqrt(h) * np.exp(nu * h * np.arange(s)))
                for j, s in enumerate(self.sizes)]


def assemble_system(minors: MinorSet, prob: SynthesisProblem,
                    max_bytes: float = DEFAULT_MAX_BYTES, dense: bool | None = None) -> AssembledSystem:
    """Toeplitz blocks of ``sum_j sign_j R_j * v_j`` on the grid ``[0, T_fit]``.

    Block ``j`` is the lower-triangular Toeplitz matrix of the grid masses of
    ``R_j`` weighted by ``exp(nu t)``, the target is ``sqrt(h) exp(nu t)
    N_T(t)``. A dense matrix is built when it fits in ``max_bytes``
    (``dense=True`` forces it and raises :class:`SizingError` when it does not).
    """
    h, nu = prob.h, prob.nu
    if len(prob.supports) != len(minors.R):
        raise ConfigurationError("one support per minor required")
    K = int(math.floor(prob.T_fit / h + LATTICE_TOL)) + 1
    sizes = tuple(prob.sizes())
    kernels, snap = [], 0.0
    for sign, R in zip(minors.signs, minors.R):
        d = discretize(R, h)
        snap = max(snap, d.max_snap_error)
        m = d.weights[:K, 0, 0]
        kernels.append(sign * m * np.exp(nu * h * np.arange(m.size)))
    t = h * np.arange(K)
    nt = np.zeros(K)
    if not minors.N_T.is_zero:
        dn = discretize(minors.N_T, h).weights[:K, 0, 0] / h
        nt[: dn.size] = dn
    b = math.sqrt(h) * np.exp(nu * t) * nt
    nbytes = 8.0 * K * sum(sizes)
    want_dense = sum(sizes) <= DENSE_UNKNOWN_LIMIT if dense is None else dense
    if want_dense and nbytes > max_bytes:
        raise SizingError(
            f"dense design matrix {K} x {sum(sizes)} needs {nbytes / 2**20:.1f} MiB, "
            f"cap is {max_bytes / 2**20:.1f} MiB; raise the cap, coarsen h or shorten supports")
    system = AssembledSystem(prob, tuple(kernels), b, sizes, None, snap)
    if want_dense:
        system = AssembledSystem(prob, tuple(kernels), b, sizes, system.to_dense(), snap)
    return system


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    gains: ControllerGains
    residual_eps: float
    solution_norm: float
    w: np.ndarray
    residual: np.ndarray
    rank: int | None
    method: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def within_budget(self) -> bool:
        return self.residual_eps <= self.diagnostics.get("budget", math.inf)


def solve_min_norm(system: AssembledSystem, rcond: float | None = None) -> SynthesisResult:
    """Minimum-norm least-squares solution of the assembled system.

    Dense systems go through an SVD based solve (LAPACK ``gelsd``); larger ones
    use LSQR started from zero, whose iterates stay in the row space and hence
    converge to the minimum-norm solution as well. A nonzero ridge turns the
    problem into ``min |A w - b|^2 + ridge^2 |w|^2``.
    """
    prob = system.problem
    ridge = prob.ridge
    if system.A is not None:
        A, b = system.A, system.b
        if ridge > 0:
            A = np.vstack([A, ridge * np.eye(A.shape[1])])
            b = np.concatenate([b, np.zeros(A.shape[1])])
        try:
            w, _, rank, sv = scipy.linalg.lstsq(A, b, cond=rcond, lapack_driver="gelsd")
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SolverError(f"dense least squares failed: {exc}") from exc
        method = "gelsd"
        diag = {"cond": float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf,
                "sigma_max": float(sv[0]), "sigma_min": float(sv[-1])}
    else:
        op = LinearOperator((system.n_rows, system.n_unknowns), matvec=system.matvec,
                            rmatvec=system.rmatvec, dtype=float)
        res = lsqr(op, system.b, damp=ridge, atol=1e-15, btol=1e-15, conlim=1e12,
                   iter_lim=20 * system.n_unknowns)
        w, istop, itn = res[0], res[1], res[2]
        rank, method = None, "lsqr"
        diag = {"cond": float(res[6]), "iterations": int(itn), "istop": int(istop)}
        if istop not in (1, 2, 4, 5, 7):
            raise SolverError(f"LSQR stopped with code {istop} after {itn} iterations, "
                              f"condition estimate {res[6]:.3g}")
    if not np.all(np.isfinite(w)):
        raise SolverError(f"non-finite solution; conditioning {diag}")
    residual = system.matvec(w) - system.b
    eps = float(np.linalg.norm(residual))
    diag["budget"] = prob.budget
    diag["snap_error"] = system.snap_error
    diag["optimality"] = float(np.linalg.norm(system.rmatvec(residual)))
    v = system.unscale(w)
    gains = ControllerGains(prob.h, tuple(v[:-1]), v[-1], prob.supports)
    log.info("min-norm solve (%s): residual %.3e, norm %.3e", method, eps, np.linalg.norm(w))
    return SynthesisResult(gains, eps, float(np.linalg.norm(w)), w, residual, rank, method, diag)


def synthesize(sys: IdeSystem, nu: float, h: float | None = None,
               supports: Sequence[float] | None = None, budget: float = math.inf,
               ridge: float = 0.0, minors: MinorSet | None = None,
               max_bytes: float = DEFAULT_MAX_BYTES) -> tuple[SynthesisResult, MinorSet, AssembledSystem]:
    """Full pipeline: minors, target, assembly and min-norm solve."""
    h = sys.h if h is None else h
    minors = compute_minors(sys, h) if minors is None else minors
    prob = SynthesisProblem.default(sys, minors, nu, h, supports, budget, ridge)
    system = assemble_system(minors, prob, max_bytes)
    return solve_min_norm(system), minors, system


def weighted_l2(samples: np.ndarray, h: float, nu: float) -> float:
    """Discrete ``L^2_nu`` norm of samples on the grid ``k h``."""
    t = h * np.arange(len(samples))
    return math.sqrt(h * float(np.sum((np.exp(nu * t) * samples) ** 2)))


def target_norm(minors: MinorSet, h: float, nu: float) -> float:
    """Discrete ``L^2_nu`` norm of ``N_T`` on the grid."""
    if minors.N_T.is_zero:
        return 0.0
    return weighted_l2(discretize(minors.N_T, h).weights[:, 0, 0] / h, h, nu)


def rv_tv(minors: MinorSet, nu: float) -> float:
    """Root-sum-square of the ``nu``-weighted total variations of the minors."""
    return math.sqrt(sum(weighted_tv_norm(r, nu).value ** 2 for r in minors.R))


def theorem_norm_bound(n: int, d: float, nt_norm: float) -> float:
    """``sqrt(n+1) / d * |N_T|``: bound on the minimal-norm solution."""
    return math.sqrt(n + 1) / d * nt_norm


def support_bound(eps: float, nu: float, d_estimate: float, tv_norms: Sequence[float] | float,
                  nt_norm: float, n: int | None = None) -> float:
    """Smallest common support length guaranteeing a truncation error below ``eps``.

    ``tv_norms`` is either the per-minor weighted total variations (then
    ``n + 1 = len(tv_norms)``) or their root-sum-square together with ``n``.
    Returns 0 when any support suffices.
    """
    if d_estimate <= 0 or eps <= 0 or nu <= 0:
        raise ValueError("need d_estimate > 0, eps > 0 and nu > 0")
    if np.ndim(tv_norms) == 0:
        if n is None:
            raise ValueError("n is required with an aggregated TV norm")
        tv = float(tv_norms)
    else:
        tv = math.sqrt(sum(float(x) ** 2 for x in tv_norms))
        n = len(tv_norms) - 1 if n is None else n
    scale = tv * math.sqrt(n + 1) / d_estimate * nt_norm
    if eps >= scale:
        return 0.0
    return math.log(scale / eps) / nu


@dataclass(frozen=True)
class ClosedLoopCheck:
    min_abs_det: float
    argmin: complex
    decomposition_residual: float


def decomposition_terms(sys: IdeSystem, gains: ControllerGains, minors: MinorSet, z,
                        h: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``det A(z)`` and ``det Delta_0 + N~ - f r_{n+1} - sum_j sign_j r_j g_j`` at ``z``."""
    from .model import characteristic_matrix

    z = np.asarray(z, dtype=complex)
    n = sys.n
    Q, P = build_Q(sys, h), build_P(sys, h)
    detA = np.linalg.det(characteristic_matrix(sys, gains, z, Q=Q, P=P))
    r = complex_minors(laplace_eval(Q, z), laplace_eval(P, z))
    g_hat, f_hat = gains_transform(gains, z)
    signs = np.array(minors.signs[:n])
    n_tilde = laplace_eval(minors.N_T, z)[..., 0, 0]
    rhs = (np.linalg.det(delta0_eval(sys, z)) + n_tilde - f_hat * r[..., n]
           - np.sum(signs * r[..., :n] * g_hat[..., 0, :], axis=-1))
    return detA, rhs


def verify_closed_loop_characteristic(sys: IdeSystem, gains: ControllerGains, nu: float, grid,
                                      minors: MinorSet | None = None, h: float | None = None,
                                      samples: int = 20, seed: int = 0) -> ClosedLoopCheck:
    """Minimum of ``|det A|`` over a grid in ``Re z >= -nu`` plus the decomposition identity.

    ``grid`` is a :class:`idecorona.spectral.GridSpec`; the identity is checked
    at ``samples`` random points of the same box.
    """
    from .measures import laplace_eval_grid
    from .spectral import grid_axes

    h = gains.h if h is None else h
    minors = compute_minors(sys, h) if minors is None else minors
    re, im = grid_axes(grid, nu)
    Q, P = build_Q(sys, h), build_P(sys, h)
    n = sys.n
    M = np.zeros((re.size, im.size, n + 1, n + 1), dtype=complex)
    M[..., :n, :n] = laplace_eval_grid(Q, re, im)
    M[..., :n, n:] = -laplace_eval_grid(P, re, im)
    for i, m in enumerate(gains.as_measures()):
        val = laplace_eval_grid(m, re, im)[..., 0, 0]
        if i < n:
            M[..., n, i] = -val
        else:
            M[..., n, n] = 1.0 - val
    dets = np.abs(np.linalg.det(M))
    k = np.unravel_index(np.argmin(dets), dets.shape)
    rng = np.random.default_rng(seed)
    z = rng.uniform(-nu, grid.re_max, samples) + 1j * rng.uniform(-grid.im_max, grid.im_max, samples)
    detA, rhs = decomposition_terms(sys, gains, minors, z, h)
    resid = float(np.max(np.abs(detA - rhs) / (1 + np.abs(detA))))
    return ClosedLoopCheck(float(dets[k]), complex(re[k[0]], im[k[1]]), resid)
