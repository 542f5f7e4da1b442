"""Convolution algebra of compactly supported matrix-valued hybrid measures.

A :class:`HybridMeasure` is a finite sum of matrix-weighted Dirac atoms plus
a density part. The density part is held as one or more *combs*: a piece with
origin ``t0``, step ``h`` and values ``v_i`` stands for the absolutely
continuous measure whose integral against a test function ``phi`` is
``h * sum_i v_i phi(t0 + i h)``. Sampling a kernel with trapezoid end weights
folded into ``v`` gives a second order quadrature of the underlying density.

Combs with equal step are closed under convolution (origins add, values are
discretely convolved), so ``laplace_eval(a * b) == laplace_eval(a) *
laplace_eval(b)`` holds to rounding error, also for atoms located off the
sampling lattice.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import signal

from .exceptions import ShapeError

#: atom locations closer than this are merged
LOC_TOL = 1e-12
#: relative tolerance on ``origin / step`` when deciding lattice alignment
LATTICE_TOL = 1e-9

__all__ = [
    "DensityPiece",
    "HybridMeasure",
    "ExpWeightedTV",
    "Discretization",
    "AtomSnap",
    "convolve",
    "add",
    "laplace_eval",
    "laplace_eval_grid",
    "weighted_tv_norm",
    "discretize",
    "trapezoid_nodes",
    "to_record",
    "from_record",
    "dumps",
    "loads",
]


def trapezoid_nodes(end: float, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and trapezoid weights for integrating over ``[0, end]`` with step ``h``.

    The grid ``0, h, ..., L h`` with ``L = floor(end / h)`` is completed by a
    final node at ``end`` when ``end`` is not a grid point, so the rule stays
    second order on non-commensurate horizons.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    if end < 0:
        raise ValueError("end must be nonnegative")
    L = int(math.floor(end / h + LATTICE_TOL))
    nodes = h * np.arange(L + 1, dtype=float)
    weights = np.full(L + 1, h)
    rem = end - L * h
    if L == 0 and rem <= LATTICE_TOL * h:
        return np.zeros(1), np.zeros(1)
    weights[0] = 0.5 * h
    if rem > LATTICE_TOL * h:
        if L == 0:
            weights[0] = 0.5 * rem
        else:
            weights[-1] = 0.5 * (h + rem)
        nodes = np.append(nodes, end)
        weights = np.append(weights, 0.5 * rem)
    else:
        weights[-1] = 0.5 * h
    return nodes, weights


@dataclass(frozen=True, eq=False)
class DensityPiece:
    """Comb ``h * sum_i values[i] * delta(t0 + i h)`` standing for a density."""

    origin: float
    step: float
    values: np.ndarray  # (L, rows, cols)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def nodes(self) -> np.ndarray:
        return self.origin + self.step * np.arange(len(self))

    @property
    def end(self) -> float:
        return self.origin + (len(self) - 1) * self.step

    def same_lattice(self, other: DensityPiece) -> bool:
        if not _same_step(self.step, other.step):
            return False
        off = (other.origin - self.origin) / self.step
        return abs(off - round(off)) < LATTICE_TOL

    def resampled(self, step: float) -> DensityPiece:
        """Linear resampling of the density values onto a finer step, mass preserving."""
        if _same_step(step, self.step):
            return self
        n_new = int(math.floor((self.end - self.origin) / step + LATTICE_TOL)) + 1
        t_new = self.origin + step * np.arange(n_new)
        flat = self.values.reshape(len(self), -1)
        out = np.empty((n_new, flat.shape[1]))
        for c in range(flat.shape[1]):
            out[:, c] = np.interp(t_new, self.nodes, flat[:, c])
        mass_old = self.step * flat.sum(axis=0)
        mass_new = step * out.sum(axis=0)
        scale = np.divide(mass_old, mass_new, out=np.ones_like(mass_old), where=mass_new != 0)
        out *= scale
        return DensityPiece(self.origin, step, out.reshape((n_new,) + self.values.shape[1:]))


def _same_step(h1: float, h2: float) -> bool:
    return abs(h1 - h2) <= 1e-12 * max(abs(h1), abs(h2))


def _trim(piece: DensityPiece) -> DensityPiece | None:
    nz = np.flatnonzero(np.any(piece.values.reshape(len(piece), -1) != 0, axis=1))
    if nz.size == 0:
        return None
    lo, hi = nz[0], nz[-1]
    if lo == 0 and hi == len(piece) - 1:
        return piece
    return DensityPiece(piece.origin + lo * piece.step, piece.step, piece.values[lo:hi + 1])


def _merge_two(p: DensityPiece, q: DensityPiece) -> DensityPiece:
    if q.origin < p.origin:
        p, q = q, p
    off = int(round((q.origin - p.origin) / p.step))
    length = max(len(p), off + len(q))
    vals = np.zeros((length,) + p.values.shape[1:])
    vals[: len(p)] += p.values
    vals[off: off + len(q)] += q.values
    return DensityPiece(p.origin, p.step, vals)


def _normalize_pieces(pieces: Iterable[DensityPiece]) -> tuple[DensityPiece, ...]:
    merged: list[DensityPiece] = []
    for piece in pieces:
        for i, other in enumerate(merged):
            if other.same_lattice(piece):
                merged[i] = _merge_two(other, piece)
                break
        else:
            merged.append(piece)
    out = [t for t in (_trim(p) for p in merged) if t is not None]
    out.sort(key=lambda p: (p.origin, p.step))
    return tuple(out)


def _normalize_atoms(locs: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if locs.size == 0:
        return locs, weights
    order = np.argsort(locs, kind="stable")
    locs, weights = locs[order], weights[order]
    keep_locs = [locs[0]]
    keep_w = [weights[0].copy()]
    for loc, w in zip(locs[1:], weights[1:]):
        if loc - keep_locs[-1] <= LOC_TOL:
            keep_w[-1] = keep_w[-1] + w
        else:
            keep_locs.append(loc)
            keep_w.append(w.copy())
    locs = np.asarray(keep_locs, dtype=float)
    weights = np.asarray(keep_w, dtype=float)
    nonzero = np.any(weights.reshape(len(locs), -1) != 0, axis=1)
    return locs[nonzero], weights[nonzero]


@dataclass(frozen=True, eq=False)
class HybridMeasure:
    """Compactly supported ``rows x cols`` measure: Dirac atoms plus density combs.

    Instances are immutable and normalized at construction: atoms are sorted,
    atoms closer than :data:`LOC_TOL` are merged, zero atoms are dropped and
    density combs on a common lattice are summed.
    """

    rows: int
    cols: int
    locs: np.ndarray = field(default=None)  # (K,)
    weights: np.ndarray = field(default=None)  # (K, rows, cols)
    pieces: tuple[DensityPiece, ...] = ()

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ShapeError("rows and cols must be positive")
        locs = np.zeros(0) if self.locs is None else np.asarray(self.locs, dtype=float).reshape(-1)
        if self.weights is None:
            weights = np.zeros((0, self.rows, self.cols))
        else:
            weights = np.asarray(self.weights, dtype=float).reshape(len(locs), self.rows, self.cols)
        if np.any(locs < -LOC_TOL):
            raise ValueError("atom locations must be nonnegative")
        for p in self.pieces:
            if p.values.shape[1:] != (self.rows, self.cols):
                raise ShapeError(f"density piece of shape {p.values.shape[1:]} in a {self.shape} measure")
            if p.origin < -LOC_TOL:
                raise ValueError("density support must lie in [0, inf)")
        locs, weights = _normalize_atoms(np.maximum(locs, 0.0), weights)
        object.__setattr__(self, "locs", locs)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "pieces", _normalize_pieces(self.pieces))

    # -- constructors -----------------------------------------------------

    @classmethod
    def zero(cls, rows: int, cols: int) -> HybridMeasure:
        return cls(rows, cols)

    @classmethod
    def dirac(cls, loc: float, weight) -> HybridMeasure:
        w = np.atleast_2d(np.asarray(weight, dtype=float))
        return cls(w.shape[0], w.shape[1], np.array([loc]), w[None])

    @classmethod
    def identity(cls, n: int) -> HybridMeasure:
        return cls.dirac(0.0, np.eye(n))

    @classmethod
    def from_atoms(cls, atoms: Sequence[tuple[float, object]], rows: int, cols: int) -> HybridMeasure:
        if not atoms:
            return cls.zero(rows, cols)
        locs = np.array([loc for loc, _ in atoms], dtype=float)
        weights = np.array([np.asarray(w, dtype=float).reshape(rows, cols) for _, w in atoms])
        return cls(rows, cols, locs, weights)

    @classmethod
    def from_samples(cls, values, step: float, origin: float = 0.0) -> HybridMeasure:
        """Density-only measure from comb values (trapezoid weights already applied)."""
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None, None]
        return cls(v.shape[1], v.shape[2], pieces=(DensityPiece(float(origin), float(step), v),))

    @classmethod
    def from_function(cls, func: Callable[[np.ndarray], np.ndarray], end: float, step: float,
                      shape: tuple[int, int] = (1, 1)) -> HybridMeasure:
        """Density ``func(t) dt`` on ``[0, end]`` sampled with trapezoid weights.

        ``func`` maps an array of times of shape ``(L,)`` to values of shape
        ``(L,)`` (scalar case) or ``(L, rows, cols)``.
        """
        nodes, w = trapezoid_nodes(end, step)
        vals = np.asarray(func(nodes), dtype=float).reshape((len(nodes),) + tuple(shape))
        vals = vals * (w / step)[:, None, None]
        L = int(math.floor(end / step + LATTICE_TOL)) + 1
        pieces = [DensityPiece(0.0, step, vals[:L])]
        if len(nodes) > L:
            pieces.append(DensityPiece(float(nodes[-1]), step, vals[L:]))
        return cls(shape[0], shape[1], pieces=tuple(pieces))

    # -- views --------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def atoms(self) -> list[tuple[float, np.ndarray]]:
        return [(float(loc), w) for loc, w in zip(self.locs, self.weights)]

    @property
    def support_end(self) -> float:
        ends = [p.end for p in self.pieces]
        if self.locs.size:
            ends.append(float(self.locs[-1]))
        return max(ends, default=0.0)

    @property
    def is_zero(self) -> bool:
        return self.locs.size == 0 and not self.pieces

    def atoms_only(self) -> HybridMeasure:
        return HybridMeasure(self.rows, self.cols, self.locs, self.weights)

    def density_only(self) -> HybridMeasure:
        return HybridMeasure(self.rows, self.cols, pieces=self.pieces)

    def entry(self, i: int, j: int) -> HybridMeasure:
        """Scalar (1 x 1) measure in position ``(i, j)``."""
        return HybridMeasure(
            1, 1, self.locs, self.weights[:, i:i + 1, j:j + 1],
            tuple(DensityPiece(p.origin, p.step, p.values[:, i:i + 1, j:j + 1]) for p in self.pieces),
        )

    def scaled(self, alpha) -> HybridMeasure:
        """Left multiplication by a scalar or a constant matrix."""
        a = np.asarray(alpha, dtype=float)
        if a.ndim == 0:
            return HybridMeasure(self.rows, self.cols, self.locs, a * self.weights,
                                 tuple(DensityPiece(p.origin, p.step, a * p.values) for p in self.pieces))
        return convolve(HybridMeasure.dirac(0.0, a), self)

    def __add__(self, other: HybridMeasure) -> HybridMeasure:
        return add(self, other, 1.0)

    def __sub__(self, other: HybridMeasure) -> HybridMeasure:
        return add(self, other, -1.0)

    def __neg__(self) -> HybridMeasure:
        return self.scaled(-1.0)

    def __mul__(self, other):
        if isinstance(other, HybridMeasure):
            return convolve(self, other)
        return self.scaled(other)

    __rmul__ = scaled

    def __repr__(self) -> str:
        return (f"HybridMeasure({self.rows}x{self.cols}, atoms={self.locs.size}, "
                f"pieces={len(self.pieces)}, support_end={self.support_end:.6g})")


def identical(a: HybridMeasure, b: HybridMeasure) -> bool:
    """Exact structural equality: same atoms, same combs, bit for bit."""
    if a.shape != b.shape or a.locs.shape != b.locs.shape or len(a.pieces) != len(b.pieces):
        return False
    if not (np.array_equal(a.locs, b.locs) and np.array_equal(a.weights, b.weights)):
        return False
    return all(p.origin == q.origin and p.step == q.step and np.array_equal(p.values, q.values)
               for p, q in zip(a.pieces, b.pieces))


def _check_same_shape(a: HybridMeasure, b: HybridMeasure) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def add(a: HybridMeasure, b: HybridMeasure, alpha: float = 1.0) -> HybridMeasure:
    """Return ``a + alpha * b``."""
    _check_same_shape(a, b)
    pieces = list(a.pieces) + [DensityPiece(p.origin, p.step, alpha * p.values) for p in b.pieces]
    return HybridMeasure(a.rows, a.cols,
                         np.concatenate([a.locs, b.locs]),
                         np.concatenate([a.weights, alpha * b.weights]),
                         tuple(pieces))


def _matconv(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Discrete convolution of matrix sequences: ``out[k] = sum_i x[i] @ y[k - i]``."""
    L = x.shape[0] + y.shape[0] - 1
    r, m = x.shape[1], x.shape[2]
    c = y.shape[2]
    out = np.zeros((L, r, c))
    direct = x.shape[0] * y.shape[0] <= 250_000
    for i in range(r):
        for j in range(c):
            for k in range(m):
                xs, ys = x[:, i, k], y[:, k, j]
                if not (xs.any() and ys.any()):
                    continue
                out[:, i, j] += np.convolve(xs, ys) if direct else signal.fftconvolve(xs, ys)
    return out


def _refine(p: DensityPiece, step: float) -> DensityPiece:
    """Same comb on a finer lattice: exact by zero stuffing when ``p.step / step`` is an integer,
    linear resampling otherwise."""
    ratio = p.step / step
    k = round(ratio)
    if k < 1 or abs(ratio - k) > LATTICE_TOL * k:
        return p.resampled(step)
    if k == 1:
        return p
    vals = np.zeros(((len(p) - 1) * k + 1,) + p.values.shape[1:])
    vals[::k] = k * p.values
    return DensityPiece(p.origin, step, vals)


def _conv_pieces(p: DensityPiece, q: DensityPiece) -> DensityPiece:
    if not _same_step(p.step, q.step):
        step = min(p.step, q.step)
        p, q = _refine(p, step), _refine(q, step)
    return DensityPiece(p.origin + q.origin, p.step, p.step * _matconv(p.values, q.values))


def convolve(a: HybridMeasure, b: HybridMeasure) -> HybridMeasure:
    """Convolution ``a * b`` of an ``r x m`` and an ``m x c`` measure.

    Atom pairs give atoms at summed locations, atom/density pairs give shifted
    combs and density pairs give the discrete convolution of their combs. If
    two combs have different steps the coarser one is moved to the finer
    lattice; that is exact when the steps are commensurate and a linear
    resampling, the only inexact step of the algebra, otherwise.
    """
    if a.cols != b.rows:
        raise ShapeError(f"cannot convolve {a.shape} with {b.shape}")
    locs, weights, pieces = [], [], []
    for la, wa in zip(a.locs, a.weights):
        for lb, wb in zip(b.locs, b.weights):
            locs.append(la + lb)
            weights.append(wa @ wb)
        for q in b.pieces:
            pieces.append(DensityPiece(q.origin + la, q.step, np.einsum("ij,ljk->lik", wa, q.values)))
    for p in a.pieces:
        for lb, wb in zip(b.locs, b.weights):
            pieces.append(DensityPiece(p.origin + lb, p.step, np.einsum("lij,jk->lik", p.values, wb)))
        for q in b.pieces:
            pieces.append(_conv_pieces(p, q))
    if locs:
        locs_arr, w_arr = np.array(locs), np.array(weights)
    else:
        locs_arr, w_arr = np.zeros(0), np.zeros((0, a.rows, b.cols))
    return HybridMeasure(a.rows, b.cols, locs_arr, w_arr, tuple(pieces))


def laplace_eval(m: HybridMeasure, z) -> np.ndarray:
    """Laplace transform ``int exp(-z t) m(dt)``.

    ``z`` may be a scalar or an array; the result has shape
    ``np.shape(z) + (rows, cols)``.
    """
    z = np.asarray(z, dtype=complex)
    out = np.zeros(z.shape + m.shape, dtype=complex)
    if m.locs.size:
        out += np.einsum("...k,kij->...ij", np.exp(-z[..., None] * m.locs), m.weights)
    zz = z[..., None, None]
    for p in m.pieces:
        if len(p) <= 32:
            e = np.exp(-z[..., None] * p.nodes)
            out += p.step * np.einsum("...k,kij->...ij", e, p.values)
            continue
        w = np.exp(-zz * p.step)
        acc = np.zeros_like(out)
        for v in p.values[::-1]:
            acc *= w
            acc += v
        out += p.step * np.exp(-zz * p.origin) * acc
    return out


def laplace_eval_grid(m: HybridMeasure, re, im) -> np.ndarray:
    """Laplace transform on the rectangular grid ``re[a] + 1j * im[b]``.

    Uses the factorization ``exp(-z t) = exp(-x t) exp(-i y t)`` so that every
    comb costs one matrix product. Returns shape ``(len(re), len(im), rows, cols)``.
    """
    re = np.asarray(re, dtype=float)
    im = np.asarray(im, dtype=float)
    out = np.zeros((re.size, im.size) + m.shape, dtype=complex)
    flat = out.reshape(re.size, im.size, -1)
    blocks = []
    if m.locs.size:
        blocks.append((m.locs, m.weights.reshape(m.locs.size, -1), 1.0))
    for p in m.pieces:
        blocks.append((p.nodes, p.values.reshape(len(p), -1), p.step))
    for t, vals, scale in blocks:
        ex = np.exp(-np.outer(re, t))  # (R, L)
        ey = np.exp(-1j * np.outer(t, im))  # (L, I)
        for c in range(vals.shape[1]):
            if vals[:, c].any():
                flat[:, :, c] += scale * ((ex * vals[:, c]) @ ey)
    return out


@dataclass(frozen=True)
class ExpWeightedTV:
    """Total variation of ``exp(nu t) m(dt)``."""

    nu: float
    value: float

    def __float__(self) -> float:
        return self.value


def weighted_tv_norm(m: HybridMeasure, nu: float) -> ExpWeightedTV:
    """Exponentially weighted total variation with the spectral norm on matrix weights."""
    if nu < 0:
        raise ValueError("nu must be nonnegative")
    total = 0.0
    if m.locs.size:
        total += float(np.sum(np.linalg.norm(m.weights, ord=2, axis=(1, 2)) * np.exp(nu * m.locs)))
    for p in m.pieces:
        total += p.step * float(np.sum(np.linalg.norm(p.values, ord=2, axis=(1, 2)) * np.exp(nu * p.nodes)))
    return ExpWeightedTV(float(nu), total)


@dataclass(frozen=True)
class AtomSnap:
    loc: float
    index: int
    error: float  # snapped time minus true location
    tie: bool


@dataclass(frozen=True)
class Discretization:
    """Grid masses ``weights[k]`` at times ``k * step`` plus the atom snapping record."""

    step: float
    weights: np.ndarray  # (G, rows, cols)
    snaps: tuple[AtomSnap, ...]

    @property
    def max_snap_error(self) -> float:
        return max((abs(s.error) for s in self.snaps), default=0.0)

    @property
    def total(self) -> np.ndarray:
        return self.weights.sum(axis=0)


def discretize(m: HybridMeasure, h: float) -> Discretization:
    """Lump ``m`` onto the grid ``k h``, ``k = 0 .. ceil(support_end / h)``.

    Atoms go to the nearest grid index (exact halves round down) and the
    snapping error is recorded. Density nodes on the grid keep their mass;
    off-grid density nodes split their mass linearly between the two
    neighbouring indices, which preserves mass and first moment.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    G = int(math.ceil(m.support_end / h - LATTICE_TOL)) + 1
    out = np.zeros((G + 1, m.rows, m.cols))
    snaps = []
    for loc, w in zip(m.locs, m.weights):
        x = loc / h
        frac = x - math.floor(x)
        tie = abs(frac - 0.5) < LATTICE_TOL
        k = int(math.floor(x)) if tie else int(round(x))
        out[k] += w
        snaps.append(AtomSnap(float(loc), k, k * h - float(loc), tie))
    for p in m.pieces:
        x = p.nodes / h
        base = np.floor(x + LATTICE_TOL)
        frac = np.where(np.abs(x - np.round(x)) < LATTICE_TOL, 0.0, x - base)
        base = base.astype(int)
        mass = p.step * p.values
        np.add.at(out, base, (1.0 - frac)[:, None, None] * mass)
        split = frac > 0
        np.add.at(out, base[split] + 1, frac[split][:, None, None] * mass[split])
    return Discretization(float(h), out[:G], tuple(snaps))


# -- text records -------------------------------------------------------------

def to_record(m: HybridMeasure) -> dict:
    return {
        "rows": m.rows,
        "cols": m.cols,
        "atoms": [{"loc": float(loc), "weight": w.reshape(-1).tolist()} for loc, w in m.atoms],
        "density": [
            {"origin": p.origin, "step": p.step, "samples": p.values.reshape(len(p), -1).tolist()}
            for p in m.pieces
        ],
    }


def from_record(rec: dict) -> HybridMeasure:
    r, c = int(rec["rows"]), int(rec["cols"])
    atoms = rec.get("atoms", [])
    locs = np.array([a["loc"] for a in atoms], dtype=float)
    weights = np.array([a["weight"] for a in atoms], dtype=float).reshape(len(atoms), r, c)
    pieces = tuple(
        DensityPiece(float(d["origin"]), float(d["step"]),
                     np.asarray(d["samples"], dtype=float).reshape(-1, r, c))
        for d in rec.get("density", [])
    )
    return HybridMeasure(r, c, locs, weights, pieces)


def dumps(m: HybridMeasure) -> str:
    return json.dumps(to_record(m), indent=1)


def loads(text: str) -> HybridMeasure:
    return from_record(json.loads(text))
