"""Acceptance gate: one printed pass/fail line per criterion."""

import math

import numpy as np
import pytest

from idecorona import acceptance
from idecorona.measures import discretize
from idecorona.model import build_P, build_Q


def _report(result):
    print("\n" + result.line())
    assert result.passed, result.line()


def test_criterion_1_example_residual(pipeline):
    _report(acceptance.criterion_1(pipeline))
    assert pipeline.setup.system.h == 0.01
    assert pipeline.result.gains.supports == (4.0, math.pi / 2)


def test_criterion_1_independent_residual(pipeline):
    # recompute |Q*f + P*g - N_T| on the grid from the unscaled gains, outside the solver
    sys, nu, h = pipeline.setup.system, pipeline.nu, pipeline.setup.system.h
    g, f = pipeline.result.gains.g[0], pipeline.result.gains.f
    q = discretize(build_Q(sys), h).weights[:, 0, 0]
    p = discretize(build_P(sys), h).weights[:, 0, 0]
    nt = discretize(pipeline.minors.N_T, h).weights[:, 0, 0]
    # the convolution of grid masses with gain samples approximates the density of N_T
    L = pipeline.system.n_rows
    diff = np.zeros(L)
    for masses, v in ((q, f), (p, g)):
        c = np.convolve(masses, v)[:L]
        diff[: c.size] += c
    diff[: min(L, nt.size)] -= nt[:L] / h
    t = h * np.arange(L)
    resid = math.sqrt(h * float(np.sum((np.exp(nu * t) * diff) ** 2)))
    assert resid <= 1e-6
    assert resid == pytest.approx(pipeline.result.residual_eps, abs=1e-9)


def test_criterion_2_closed_loop_decay(pipeline):
    assert pipeline.setup.T_end == 40
    _report(acceptance.criterion_2(pipeline))


def test_criterion_3_determinant_identity():
    _report(acceptance.criterion_3())


def test_criterion_4_minor_consistency():
    _report(acceptance.criterion_4())


def test_criterion_5_min_norm_contract():
    _report(acceptance.criterion_5())


def test_criterion_6_bounds(pipeline):
    _report(acceptance.criterion_6(pipeline))


def test_criterion_7_assumptions(pipeline):
    _report(acceptance.criterion_7(pipeline))
    assert pipeline.report.rho == pytest.approx(0.2 * math.exp(0.1) + 0.4 * math.exp(0.2), abs=1e-12)


def test_criterion_8_supports(pipeline):
    _report(acceptance.criterion_8(pipeline))


def test_criterion_9_simulator_oracles(pipeline):
    _report(acceptance.criterion_9(pipeline))
