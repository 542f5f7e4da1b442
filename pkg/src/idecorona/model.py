"""Plant and controller data, frequency symbols and the closed-loop characteristic matrix.

The plant is the integral difference equation

    X(t) - sum_k A_k X(t - tau_k) - int_0^tau* N(eta) X(t - eta) d eta
         = sum_j B_j U(t - theta_j) + int_0^theta* M(eta) U(t - eta) d eta

with an n-dimensional state and a scalar input, and the controller is

    U(t) = sum_i int_0^min(t, S_i) g_i(eta) X_i(t - eta) d eta
           + int_0^min(t, S_f) f(eta) U(t - eta) d eta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .measures import LATTICE_TOL, HybridMeasure, laplace_eval

__all__ = [
    "Kernel",
    "IdeSystem",
    "ControllerGains",
    "build_Q",
    "build_P",
    "delta0_eval",
    "q_eval",
    "p_eval",
    "characteristic_matrix",
    "paper_example",
    "paper_initial_state",
    "gains_transform",
]

#: closed-form kernel shapes accepted in configuration files
NAMED_KERNELS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "zero": lambda t: np.zeros_like(t),
    "one": lambda t: np.ones_like(t),
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt2eta": lambda t: np.sqrt(2.0 * np.maximum(t, 0.0)),
}


@dataclass(frozen=True, eq=False)
class Kernel:
    """Matrix kernel ``t -> coef * phi(t)`` or a table of node samples.

    Exactly one of ``func`` and ``samples`` is set. ``samples`` has shape
    ``(L, rows, cols)`` and holds the kernel at ``0, step, ..., (L-1) step``;
    it is linearly interpolated when evaluated elsewhere.
    """

    rows: int
    cols: int
    func: Callable[[np.ndarray], np.ndarray] | None = None
    coef: np.ndarray | None = None
    samples: np.ndarray | None = None
    step: float | None = None
    name: str = ""

    @classmethod
    def zero(cls, rows: int, cols: int) -> Kernel:
        return cls(rows, cols, NAMED_KERNELS["zero"], np.zeros((rows, cols)), name="zero")

    @classmethod
    def analytic(cls, func, coef, name: str = "") -> Kernel:
        c = np.atleast_2d(np.asarray(coef, dtype=float))
        return cls(c.shape[0], c.shape[1], func, c, name=name)

    @classmethod
    def named(cls, name: str, coef) -> Kernel:
        return cls.analytic(NAMED_KERNELS[name], coef, name)

    @classmethod
    def tabulated(cls, samples, step: float) -> Kernel:
        s = np.asarray(samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None, None]
        return cls(s.shape[1], s.shape[2], samples=s, step=float(step), name="samples")

    @property
    def is_zero(self) -> bool:
        if self.samples is not None:
            return not self.samples.any()
        return self.name == "zero" or not np.any(self.coef)

    def __call__(self, t) -> np.ndarray:
        """Kernel values at the times ``t``; returns shape ``(len(t), rows, cols)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.samples is not None:
            grid = self.step * np.arange(self.samples.shape[0])
            flat = self.samples.reshape(len(grid), -1)
            out = np.stack([np.interp(t, grid, flat[:, c], left=0.0, right=0.0)
                            for c in range(flat.shape[1])], axis=-1)
            return out.reshape(len(t), self.rows, self.cols)
        phi = np.asarray(self.func(t), dtype=float)
        return phi[:, None, None] * self.coef[None]


def _as_atoms(delays, mats, rows: int, cols: int) -> tuple[np.ndarray, np.ndarray]:
    d = np.asarray(delays, dtype=float).reshape(-1)
    m = np.asarray(mats, dtype=float).reshape(len(d), rows, cols)
    return d, m


@dataclass(frozen=True, eq=False)
class IdeSystem:
    """Vector-valued, single-input integral difference equation.

    ``taus``/``A`` hold the pointwise state delays and ``thetas``/``B`` the
    pointwise input delays; ``N`` and ``M`` are the distributed kernels on
    ``[0, tau_star]`` and ``[0, theta_star]``. ``h`` is the default step used
    to sample the kernels.
    """

    n: int
    taus: np.ndarray
    A: np.ndarray  # (K, n, n)
    thetas: np.ndarray
    B: np.ndarray  # (J, n, 1)
    N: Kernel
    M: Kernel
    tau_star: float
    theta_star: float
    h: float = 0.01
    name: str = ""

    def __post_init__(self):
        taus, A = _as_atoms(self.taus, self.A, self.n, self.n)
        thetas, B = _as_atoms(self.thetas, self.B, self.n, 1)
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "B", B)
        if self.tau_star <= 0 or self.theta_star <= 0:
            raise ValueError("tau_star and theta_star must be positive")
        if np.any(np.diff(taus) <= 0) or np.any(np.diff(thetas) <= 0):
            raise ValueError("delays must be strictly increasing")
        if taus.size and (taus[0] <= 0 or taus[-1] > self.tau_star + 1e-12):
            raise ValueError("state delays must lie in (0, tau_star]")
        if thetas.size and (thetas[0] < 0 or thetas[-1] > self.theta_star + 1e-12):
            raise ValueError("input delays must lie in [0, theta_star]")
        if (self.N.rows, self.N.cols) != (self.n, self.n):
            raise ValueError("N must be n x n")
        if (self.M.rows, self.M.cols) != (self.n, 1):
            raise ValueError("M must be n x 1")
        total = np.linalg.norm(A, 2, axis=(1, 2)).sum() if A.size else 0.0
        total += np.linalg.norm(B, 2, axis=(1, 2)).sum() if B.size else 0.0
        assert np.isfinite(total)

    @classmethod
    def create(cls, n: int, state_atoms: Sequence[tuple[float, object]] = (),
               input_atoms: Sequence[tuple[float, object]] = (), N: Kernel | None = None,
               M: Kernel | None = None, tau_star: float = 1.0, theta_star: float = 1.0,
               h: float = 0.01, name: str = "") -> IdeSystem:
        return cls(
            n,
            [t for t, _ in state_atoms], [np.asarray(a, dtype=float) for _, a in state_atoms],
            [t for t, _ in input_atoms], [np.asarray(b, dtype=float) for _, b in input_atoms],
            N if N is not None else Kernel.zero(n, n),
            M if M is not None else Kernel.zero(n, 1),
            float(tau_star), float(theta_star), float(h), name,
        )

    @property
    def state_atoms(self) -> list[tuple[float, np.ndarray]]:
        return list(zip(self.taus.tolist(), self.A))

    @property
    def input_atoms(self) -> list[tuple[float, np.ndarray]]:
        return list(zip(self.thetas.tolist(), self.B))

    def without_distributed_state(self) -> IdeSystem:
        """Same system with ``N = 0``."""
        return IdeSystem(self.n, self.taus, self.A, self.thetas, self.B, Kernel.zero(self.n, self.n),
                         self.M, self.tau_star, self.theta_star, self.h, self.name)


def _kernel_measure(kernel: Kernel, end: float, h: float, sign: float) -> HybridMeasure:
    if kernel.is_zero:
        return HybridMeasure.zero(kernel.rows, kernel.cols)
    return HybridMeasure.from_function(lambda t: sign * kernel(t), end, h, (kernel.rows, kernel.cols))


def build_Q(sys: IdeSystem, h: float | None = None) -> HybridMeasure:
    """``Q = delta_0 I - sum_k A_k delta_{tau_k} - N dt``."""
    h = sys.h if h is None else h
    atoms = [(0.0, np.eye(sys.n))] + [(t, -a) for t, a in sys.state_atoms]
    Q = HybridMeasure.from_atoms(atoms, sys.n, sys.n)
    return Q + _kernel_measure(sys.N, sys.tau_star, h, -1.0)


def build_P(sys: IdeSystem, h: float | None = None) -> HybridMeasure:
    """``P = sum_j B_j delta_{theta_j} + M dt``."""
    h = sys.h if h is None else h
    P = HybridMeasure.from_atoms(sys.input_atoms, sys.n, 1)
    return P + _kernel_measure(sys.M, sys.theta_star, h, 1.0)


def delta0_eval(sys: IdeSystem, z) -> np.ndarray:
    """Principal part symbol ``I - sum_k A_k exp(-tau_k z)``, shape ``z.shape + (n, n)``."""
    z = np.asarray(z, dtype=complex)
    out = np.broadcast_to(np.eye(sys.n, dtype=complex), z.shape + (sys.n, sys.n)).copy()
    if sys.taus.size:
        out -= np.einsum("...k,kij->...ij", np.exp(-z[..., None] * sys.taus), sys.A)
    return out


def q_eval(sys: IdeSystem, z, h: float | None = None) -> np.ndarray:
    return laplace_eval(build_Q(sys, h), z)


def p_eval(sys: IdeSystem, z, h: float | None = None) -> np.ndarray:
    return laplace_eval(build_P(sys, h), z)


@dataclass(frozen=True, eq=False)
class ControllerGains:
    """Sampled controller kernels on the grid ``0, h, 2h, ...``.

    ``g[i][k]`` and ``f[k]`` are kernel values at ``k h``; the control
    integrals are evaluated with weight ``h`` per node, the same quadrature the
    synthesis uses, so the transform of a gain is ``h * sum_k g[k] exp(-z k h)``.
    """

    h: float
    g: tuple[np.ndarray, ...]
    f: np.ndarray
    supports: tuple[float, ...] = field(default=())

    def __post_init__(self):
        g = tuple(np.asarray(gi, dtype=float).reshape(-1) for gi in self.g)
        f = np.asarray(self.f, dtype=float).reshape(-1)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "f", f)
        if not self.supports:
            object.__setattr__(self, "supports",
                               tuple(self.h * (len(v) - 1) for v in g + (f,)))
        if len(self.supports) != len(g) + 1:
            raise ValueError("need one support per gain")
        if any(s < 0 for s in self.supports):
            raise ValueError("supports must be nonnegative")

    @classmethod
    def zeros(cls, n: int, h: float, supports: Sequence[float] | None = None) -> ControllerGains:
        supports = tuple(supports) if supports is not None else (h,) * (n + 1)
        sizes = [int(math.floor(s / h + LATTICE_TOL)) + 1 for s in supports]
        return cls(h, tuple(np.zeros(k) for k in sizes[:-1]), np.zeros(sizes[-1]), supports)

    @property
    def n(self) -> int:
        return len(self.g)

    @property
    def channels(self) -> tuple[np.ndarray, ...]:
        return self.g + (self.f,)

    def as_measures(self) -> list[HybridMeasure]:
        return [HybridMeasure.from_samples(v, self.h) if v.any() else HybridMeasure.zero(1, 1)
                for v in self.channels]

    def weighted_norm(self, nu: float) -> float:
        """Discrete L^2_nu norm of the stacked gains."""
        total = 0.0
        for v in self.channels:
            t = self.h * np.arange(len(v))
            total += self.h * float(np.sum((np.exp(nu * t) * v) ** 2))
        return math.sqrt(total)


def gains_transform(gains: ControllerGains, z) -> tuple[np.ndarray, np.ndarray]:
    """Transforms ``(g_hat, f_hat)``; ``g_hat`` has shape ``z.shape + (1, n)``."""
    z = np.asarray(z, dtype=complex)
    vals = [laplace_eval(m, z)[..., 0, 0] for m in gains.as_measures()]
    g_hat = np.stack(vals[:-1], axis=-1)[..., None, :]
    return g_hat, vals[-1]


def characteristic_matrix(sys: IdeSystem, gains: ControllerGains, z, h: float | None = None,
                          Q: HybridMeasure | None = None, P: HybridMeasure | None = None) -> np.ndarray:
    """Closed-loop matrix ``[[q, -p], [-g_hat, 1 - f_hat]]`` of shape ``z.shape + (n+1, n+1)``."""
    z = np.asarray(z, dtype=complex)
    Q = build_Q(sys, h) if Q is None else Q
    P = build_P(sys, h) if P is None else P
    n = sys.n
    out = np.zeros(z.shape + (n + 1, n + 1), dtype=complex)
    out[..., :n, :n] = laplace_eval(Q, z)
    out[..., :n, n:] = -laplace_eval(P, z)
    g_hat, f_hat = gains_transform(gains, z)
    out[..., n:, :n] = -g_hat
    out[..., n, n] = 1.0 - f_hat
    return out


def paper_example(h: float = 0.01) -> IdeSystem:
    """Scalar example with two state delays, two input delays and sine/sqrt kernels."""
    return IdeSystem.create(
        1,
        state_atoms=[(2.0, -0.2), (4.0, -0.4)],
        input_atoms=[(1.0, 2.0), (math.pi / 2, 7.5)],
        N=Kernel.analytic(lambda t: -np.sin(t), 1.0, "-sin"),
        M=Kernel.named("sqrt2eta", 1.0),
        tau_star=4.0,
        theta_star=math.pi / 2,
        h=h,
        name="paper-example",
    )


def paper_initial_state(t) -> np.ndarray:
    """Initial history ``X0(t) = 0.2 cos(2t) exp(t/3)`` on ``[-4, 0]``."""
    t = np.asarray(t, dtype=float)
    return (0.2 * np.cos(2 * t) * np.exp(t / 3))[..., None]
