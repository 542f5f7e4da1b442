"""Plain-text formats: system configuration (INI), gains CSV and trajectory CSV.

Configuration schema (matrices are row-major, comma separated; numbers may be
simple expressions in ``pi``, e.g. ``pi/2``)::

    [system]
    n = 1
    tau_star = 4
    theta_star = pi/2
    h = 0.01

    [delays]
    # delay: matrix; delay: matrix ...
    state = 2: -0.2; 4: -0.4
    input = 1: 2; pi/2: 7.5

    [kernels]
    # <shape>: <coefficient matrix>, shape in zero, one, sin, cos, exp, sqrt2eta
    # or samples: <step>; <node 0 matrix>; <node 1 matrix>; ...
    N = sin: -1
    M = sqrt2eta: 1

    [initial]
    # zero | const: v1, ..., vn | expcos: amplitude, frequency, growth
    X0 = expcos: 0.2, 2, 1/3
    U0 = zero

    [design]
    nu_tilde = 0.05
    nu_bar = 0.05
    nu = auto
    supports = auto
    T_end = 40

    [grid]
    re_max = 20
    im_max = 200
    step = 0.05
"""

from __future__ import annotations

import ast
import configparser
import csv
import math
import operator
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .exceptions import ConfigurationError
from .model import NAMED_KERNELS, ControllerGains, IdeSystem, Kernel, paper_example
from .simulate import SimulationRun
from .spectral import GridSpec

__all__ = [
    "ProblemSetup",
    "parse_number",
    "load_setup",
    "parse_setup",
    "preset",
    "PRESETS",
    "write_gains_csv",
    "read_gains_csv",
    "write_trajectory_csv",
]

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}


def parse_number(text: str) -> float:
    """Evaluate a numeric literal or a small arithmetic expression in ``pi`` and ``e``."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in ("pi", "e"):
            return getattr(math, node.id)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        raise ConfigurationError(f"not a number: {text!r}")

    try:
        return float(ev(ast.parse(text.strip(), mode="eval")))
    except (SyntaxError, ZeroDivisionError) as exc:
        raise ConfigurationError(f"not a number: {text!r}") from exc


def _matrix(text: str, rows: int, cols: int) -> np.ndarray:
    vals = [parse_number(x) for x in text.split(",") if x.strip()]
    if len(vals) != rows * cols:
        raise ConfigurationError(f"expected {rows * cols} entries, got {len(vals)} in {text!r}")
    return np.array(vals).reshape(rows, cols)


def _atoms(text: str, rows: int, cols: int) -> list[tuple[float, np.ndarray]]:
    out = []
    for item in text.split(";"):
        if not item.strip():
            continue
        if ":" not in item:
            raise ConfigurationError(f"delay entry must read 'delay: matrix', got {item!r}")
        d, m = item.split(":", 1)
        out.append((parse_number(d), _matrix(m, rows, cols)))
    return sorted(out, key=lambda a: a[0])


def _kernel(text: str, rows: int, cols: int) -> Kernel:
    text = text.strip()
    if not text or text == "zero":
        return Kernel.zero(rows, cols)
    head, _, rest = text.partition(":")
    head = head.strip()
    if head == "samples":
        step, *nodes = rest.split(";")
        samples = np.stack([_matrix(v, rows, cols) for v in nodes if v.strip()])
        return Kernel.tabulated(samples, parse_number(step))
    if head not in NAMED_KERNELS:
        raise ConfigurationError(f"unknown kernel shape {head!r}; known: {', '.join(NAMED_KERNELS)}")
    coef = _matrix(rest, rows, cols) if rest.strip() else np.ones((rows, cols))
    return Kernel.named(head, coef)


def _initial(text: str, dim: int) -> Callable[[np.ndarray], np.ndarray] | None:
    text = text.strip()
    if not text or text == "zero":
        return None
    head, _, rest = text.partition(":")
    head = head.strip()
    if head == "const":
        v = _matrix(rest, 1, dim)[0]
        return lambda t: np.broadcast_to(v, (np.size(t), dim)).copy()
    if head == "expcos":
        a, w, r = (parse_number(x) for x in rest.split(","))
        return lambda t: np.repeat((a * np.cos(w * np.asarray(t)) * np.exp(r * np.asarray(t)))[:, None], dim, 1)
    raise ConfigurationError(f"unknown initial condition {text!r}")


@dataclass(frozen=True, eq=False)
class ProblemSetup:
    """Everything a command needs besides the command-line overrides."""

    system: IdeSystem
    X0: Callable | None = None
    U0: Callable | None = None
    nu_tilde: float = 0.05
    nu_bar: float = 0.05
    nu: float | None = None
    supports: tuple[float, ...] | None = None
    T_end: float = 40.0
    grid: GridSpec = GridSpec()

    def with_step(self, h: float) -> ProblemSetup:
        s = self.system
        return replace(self, system=IdeSystem(s.n, s.taus, s.A, s.thetas, s.B, s.N, s.M,
                                              s.tau_star, s.theta_star, h, s.name))


def parse_setup(text: str, name: str = "") -> ProblemSetup:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse configuration: {exc}") from exc
    if not cp.has_section("system"):
        raise ConfigurationError("configuration lacks a [system] section")
    sec = cp["system"]
    try:
        n = int(sec["n"])
        tau_star = parse_number(sec["tau_star"])
        theta_star = parse_number(sec["theta_star"])
    except KeyError as exc:
        raise ConfigurationError(f"[system] is missing {exc}") from exc
    h = parse_number(sec.get("h", "0.01"))
    delays = cp["delays"] if cp.has_section("delays") else {}
    kernels = cp["kernels"] if cp.has_section("kernels") else {}
    try:
        system = IdeSystem.create(
            n,
            state_atoms=_atoms(delays.get("state", ""), n, n),
            input_atoms=_atoms(delays.get("input", ""), n, 1),
            N=_kernel(kernels.get("N", ""), n, n),
            M=_kernel(kernels.get("M", ""), n, 1),
            tau_star=tau_star, theta_star=theta_star, h=h, name=sec.get("name", name),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(str(exc)) from exc
    init = cp["initial"] if cp.has_section("initial") else {}
    design = cp["design"] if cp.has_section("design") else {}
    nu = design.get("nu", "auto").strip()
    sup = design.get("supports", "auto").strip()
    g = cp["grid"] if cp.has_section("grid") else {}
    grid = GridSpec(parse_number(g.get("re_max", "20")), parse_number(g.get("im_max", "200")),
                    parse_number(g.get("step", "0.05")))
    return ProblemSetup(
        system,
        X0=_initial(init.get("X0", "zero"), n),
        U0=_initial(init.get("U0", "zero"), 1),
        nu_tilde=parse_number(design.get("nu_tilde", "0.05")),
        nu_bar=parse_number(design.get("nu_bar", "0.05")),
        nu=None if nu == "auto" else parse_number(nu),
        supports=None if sup == "auto" else tuple(parse_number(x) for x in sup.split(",")),
        T_end=parse_number(design.get("T_end", "40")),
        grid=grid,
    )


def load_setup(path) -> ProblemSetup:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc
    return parse_setup(text, path.stem)


PAPER_EXAMPLE_INI = """\
[system]
name = paper-example
n = 1
tau_star = 4
theta_star = pi/2
h = 0.01

[delays]
state = 2: -0.2; 4: -0.4
input = 1: 2; pi/2: 7.5

[kernels]
N = sin: -1
M = sqrt2eta: 1

[initial]
X0 = expcos: 0.2, 2, 1/3
U0 = zero

[design]
nu_tilde = 0.05
nu_bar = 0.05
nu = auto
supports = auto
T_end = 40

[grid]
re_max = 20
im_max = 200
step = 0.05
"""


def _paper_setup() -> ProblemSetup:
    from .model import paper_initial_state

    return ProblemSetup(paper_example(), X0=paper_initial_state)


PRESETS: dict[str, Callable[[], ProblemSetup]] = {"paper-example": _paper_setup}


def preset(name: str) -> ProblemSetup:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}") from None


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_gains_csv(path, gains: ControllerGains, nu: float, residual_eps: float) -> None:
    """Columns ``t, g_1..g_n, f``; channels shorter than the longest are left blank."""
    chans = gains.channels
    L = max(len(c) for c in chans)
    with open(path, "w", newline="") as fh:
        fh.write(f"# h = {_fmt(gains.h)}\n")
        fh.write(f"# nu = {_fmt(nu)}\n")
        fh.write(f"# supports = {', '.join(_fmt(s) for s in gains.supports)}\n")
        fh.write(f"# residual_eps = {_fmt(residual_eps)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"g_{i + 1}" for i in range(gains.n)] + ["f"])
        for k in range(L):
            w.writerow([_fmt(k * gains.h)] + [_fmt(c[k]) if k < len(c) else "" for c in chans])


def read_gains_csv(path) -> tuple[ControllerGains, dict[str, object]]:
    """Inverse of :func:`write_gains_csv`; returns the gains and the header fields."""
    meta: dict[str, object] = {}
    rows = []
    try:
        with open(path, newline="") as fh:
            for line in fh:
                if line.startswith("#"):
                    key, _, val = line[1:].partition("=")
                    meta[key.strip()] = val.strip()
                else:
                    rows.append(line)
    except OSError as exc:
        raise ConfigurationError(f"cannot read gains file {path}: {exc}") from exc
    if "h" not in meta or not rows:
        raise ConfigurationError(f"{path} is not a gains file")
    table = list(csv.reader(rows))
    header, body = table[0], table[1:]
    cols = [[float(r[j]) for r in body if j < len(r) and r[j] != ""] for j in range(1, len(header))]
    h = float(meta["h"])
    supports = tuple(float(s) for s in str(meta.get("supports", "")).split(",") if s.strip())
    meta = {"h": h, "nu": float(meta.get("nu", "nan")), "supports": supports,
            "residual_eps": float(meta.get("residual_eps", "nan"))}
    gains = ControllerGains(h, tuple(np.array(c) for c in cols[:-1]), np.array(cols[-1]), supports)
    return gains, meta


def write_trajectory_csv(path, run: SimulationRun) -> None:
    """Rows ``t, X_1..X_n, U, window_norm`` at the grid times ``t >= 0``."""
    X, U = run.X, run.U
    kx = int(round(-X.t0 / X.h))
    ku = int(round(-U.t0 / U.h))
    n = X.values.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"X_{i + 1}" for i in range(n)] + ["U", "window_norm"])
        for k, (t, wn) in enumerate(run.window_norms):
            w.writerow([_fmt(t)] + [_fmt(x) for x in X.values[kx + k]]
                       + [_fmt(U.values[ku + k, 0]), _fmt(wn)])
