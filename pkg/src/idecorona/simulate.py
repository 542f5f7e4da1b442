"""Method-of-steps integration of the IDE, open loop and in closed loop with sampled gains."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import ConfigurationError
from .measures import LATTICE_TOL, trapezoid_nodes
from .model import ControllerGains, IdeSystem

__all__ = [
    "SampledSignal",
    "SimulationRun",
    "DecayFit",
    "simulate_open_loop",
    "simulate_closed_loop",
    "fit_decay_rate",
    "window_norms",
]


@dataclass(frozen=True, eq=False)
class SampledSignal:
    """Uniformly sampled vector signal, ``values[k]`` at ``t0 + k h``."""

    h: float
    t0: float
    values: np.ndarray  # (L, dim)

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(len(self.values))

    def at(self, t: float) -> np.ndarray:
        k = int(round((t - self.t0) / self.h))
        return self.values[k]

    def norm(self, p: float = 2, nu: float = 0.0) -> float:
        """Discrete ``L^p`` norm, optionally with weight ``exp(nu t)``."""
        mags = np.linalg.norm(self.values, axis=1) * np.exp(nu * self.t)
        if math.isinf(p):
            return float(mags.max(initial=0.0))
        return float((self.h * np.sum(mags ** p)) ** (1.0 / p))


@dataclass(frozen=True)
class DecayFit:
    rate: float
    C: float
    r2: float
    flag: str = ""


@dataclass(frozen=True, eq=False)
class SimulationRun:
    X: SampledSignal
    U: SampledSignal
    window: float
    window_norms: np.ndarray  # (M, 2): t, |X_t| + |U_t|
    fit: DecayFit = field(default=None)

    @property
    def fitted_rate(self) -> float:
        return self.fit.rate

    @property
    def fit_quality(self) -> float:
        return self.fit.r2


def _add_lag(coefs: np.ndarray, lag: float, mat: np.ndarray) -> None:
    """Spread ``mat`` over integer lags so that linear interpolation is reproduced."""
    base = math.floor(lag + LATTICE_TOL)
    frac = lag - base
    if abs(frac) < LATTICE_TOL or frac < 0:
        coefs[base] += mat
    else:
        coefs[base] += (1.0 - frac) * mat
        coefs[base + 1] += frac * mat


def _plant_lags(sys: IdeSystem, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Lag coefficients ``X_k = sum_l Ax[l] X_{k-l} + sum_l Bu[l] U_{k-l}``."""
    n = sys.n
    Lx = int(math.floor(sys.tau_star / h + LATTICE_TOL)) + 2
    Lu = int(math.floor(sys.theta_star / h + LATTICE_TOL)) + 2
    Ax = np.zeros((Lx, n, n))
    Bu = np.zeros((Lu, n, 1))
    for tau, a in sys.state_atoms:
        if tau < h * (1 - LATTICE_TOL):
            raise ConfigurationError(f"state delay {tau} is shorter than the step {h}")
        _add_lag(Ax, tau / h, a)
    for theta, b in sys.input_atoms:
        _add_lag(Bu, theta / h, b)
    if not sys.N.is_zero:
        nodes, w = trapezoid_nodes(sys.tau_star, h)
        vals = sys.N(nodes)
        for eta, wi, v in zip(nodes, w, vals):
            _add_lag(Ax, eta / h, wi * v)
    if not sys.M.is_zero:
        nodes, w = trapezoid_nodes(sys.theta_star, h)
        vals = sys.M(nodes)
        for eta, wi, v in zip(nodes, w, vals):
            _add_lag(Bu, eta / h, wi * v)
    return Ax, Bu


def _history(func, t: np.ndarray, dim: int) -> np.ndarray:
    if func is None:
        return np.zeros((t.size, dim))
    if callable(func):
        return np.asarray(func(t), dtype=float).reshape(t.size, dim)
    arr = np.asarray(func, dtype=float)
    if arr.ndim == 0:
        return np.full((t.size, dim), float(arr))
    return arr.reshape(t.size, dim)


def _run(sys: IdeSystem, X0, U0, h: float, T_end: float, gains: ControllerGains | None,
         U_ext: Callable | np.ndarray | None) -> tuple[SampledSignal, SampledSignal]:
    n = sys.n
    Ax, Bu = _plant_lags(sys, h)
    Hx, Hu = Ax.shape[0] - 1, Bu.shape[0] - 1  # history lengths in steps
    K = int(math.floor(T_end / h + LATTICE_TOL))
    X = np.zeros((Hx + K + 1, n))
    U = np.zeros((Hu + K + 1, 1))
    tx = h * np.arange(-Hx, 1)
    tu = h * np.arange(-Hu, 1)
    X[: Hx + 1] = _history(X0, np.maximum(tx, -sys.tau_star), n)
    U[: Hu + 1] = _history(U0, np.maximum(tu, -sys.theta_star), 1)
    if U_ext is not None:
        U[Hu + 1:] = _history(U_ext, h * np.arange(1, K + 1), 1)

    Sx_inv = np.linalg.inv(np.eye(n) - Ax[0])
    Ax_r = Ax[1:][::-1]
    Bu_r = Bu[1:][::-1]
    closed = gains is not None
    if closed:
        if not math.isclose(gains.h, h, rel_tol=1e-12):
            raise ConfigurationError(f"gain step {gains.h} differs from simulation step {h}; "
                                     "resample the gains explicitly")
        G = np.zeros((max(len(g) for g in gains.g), n))
        for i, g in enumerate(gains.g):
            G[: len(g), i] = h * g
        F = h * gains.f
        G0, F0 = G[0], (F[0] if F.size else 0.0)
        # U_k (1 - F0 - G0 Sx^-1 Bu0) = past terms + G0 Sx^-1 rhs_x
        schur = 1.0 - F0 - float(G0 @ Sx_inv @ Bu[0, :, 0])
        if abs(schur) < 1e-12:
            raise ConfigurationError("closed loop is not causal: singular instantaneous coupling")
        G0s = G0 @ Sx_inv

    for k in range(1, K + 1):
        ix, iu = Hx + k, Hu + k
        rhs_x = np.einsum("lij,lj->i", Ax_r, X[ix - Hx: ix]) + np.einsum("lij,lj->i", Bu_r, U[iu - Hu: iu])
        if closed:
            lg = min(k, G.shape[0] - 1)
            lf = min(k, F.size - 1)
            rhs_u = float(G0s @ rhs_x)
            if lg > 0:
                rhs_u += float(np.einsum("li,li->", G[lg:0:-1], X[ix - lg: ix]))
            if lf > 0:
                rhs_u += float(F[lf:0:-1] @ U[iu - lf: iu, 0])
            U[iu, 0] = rhs_u / schur
        X[ix] = Sx_inv @ (rhs_x + Bu[0, :, 0] * U[iu, 0])
    return SampledSignal(h, -Hx * h, X), SampledSignal(h, -Hu * h, U)


def window_norms(X: SampledSignal, U: SampledSignal, window: float, p: float = 2) -> np.ndarray:
    """``(t, |X_t| + |U_t|)`` on grid times ``t >= 0``, windows ``(t - window, t]``."""
    h = X.h
    w = max(1, int(round(window / h)))

    def seg_norms(sig: SampledSignal) -> tuple[np.ndarray, np.ndarray]:
        mags = np.linalg.norm(sig.values, axis=1) ** p
        # direct sliding sum; a cumulative-sum difference loses small late windows
        s = np.convolve(mags, np.ones(w))[: len(mags)]
        k0 = int(round(-sig.t0 / h))
        return sig.t[k0:], (h * s[k0:]) ** (1.0 / p)

    t, nx = seg_norms(X)
    _, nu_ = seg_norms(U)
    return np.column_stack([t, nx + nu_])


def fit_decay_rate(run, values=None, start: float | None = None) -> DecayFit:
    """Least-squares line through ``log(norm)`` over the second half of the run.

    Accepts a :class:`SimulationRun` or explicit arrays ``(t, values)``.
    Returns the slope as ``rate``, ``exp(intercept)`` as ``C`` and the
    coefficient of determination. Windows with zero norm are skipped
    (``flag = "zeros-skipped"``); if all are zero the rate is ``-inf`` with
    ``flag = "extinct"``.
    """
    if values is None:
        t, y = run.window_norms[:, 0], run.window_norms[:, 1]
    else:
        t, y = np.asarray(run, dtype=float), np.asarray(values, dtype=float)
    start = t[0] + 0.5 * (t[-1] - t[0]) if start is None else start
    sel = t >= start - 1e-12
    t, y = t[sel], y[sel]
    pos = y > 0
    if not pos.any():
        return DecayFit(-math.inf, 0.0, 1.0, "extinct")
    flag = "" if pos.all() else "zeros-skipped"
    t, ly = t[pos], np.log(y[pos])
    if t.size < 10:
        raise ValueError("need at least 10 positive window norms to fit a rate")
    slope, icpt = np.polyfit(t, ly, 1)
    pred = slope * t + icpt
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(slope), float(math.exp(icpt)), r2, flag)


def _finish(sys: IdeSystem, X: SampledSignal, U: SampledSignal, p: float) -> SimulationRun:
    window = max(sys.tau_star, sys.theta_star)
    wn = window_norms(X, U, window, p)
    try:
        fit = fit_decay_rate(wn[:, 0], wn[:, 1])
    except ValueError:
        fit = DecayFit(math.nan, math.nan, math.nan, "too-short")
    return SimulationRun(X, U, window, wn, fit)


def simulate_open_loop(sys: IdeSystem, X0=None, U=None, h: float | None = None, T_end: float = 40.0,
                       U0=None, p: float = 2) -> SimulationRun:
    """Integrate the IDE for a prescribed input.

    ``X0`` (history on ``[-tau*, 0]``), ``U0`` (on ``[-theta*, 0]``) and ``U``
    (for ``t > 0``) may be callables of time, arrays on the grid, scalars or
    ``None`` for zero. History values at off-grid lags are linearly
    interpolated and the distributed terms use the trapezoid rule.
    """
    h = sys.h if h is None else h
    if h <= 0:
        raise ConfigurationError("h must be positive")
    X, Us = _run(sys, X0, U0, h, T_end, None, U)
    return _finish(sys, X, Us, p)


def simulate_closed_loop(sys: IdeSystem, gains: ControllerGains, X0=None, U0=None,
                         h: float | None = None, T_end: float = 40.0, p: float = 2) -> SimulationRun:
    """Integrate the IDE together with the autoregressive control law.

    The control integrals use weight ``h`` per gain node (the quadrature of the
    synthesis) over ``[0, min(t, S)]``. The ``eta = 0`` node couples ``U(t)``
    to the current state; that coupling is resolved exactly by a scalar Schur
    complement at each step.
    """
    h = gains.h if h is None else h
    X, Us = _run(sys, X0, U0, h, T_end, gains, None)
    return _finish(sys, X, Us, p)
