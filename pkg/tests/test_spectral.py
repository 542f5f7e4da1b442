import math

import numpy as np
import pytest

from idecorona.exceptions import AssumptionError, ConfigurationError
from idecorona.model import IdeSystem, delta0_eval
from idecorona.spectral import (GridSpec, SpectralReport, certify_principal_part,
                                check_spectral_stabilizability, choose_rates, estimate_corona_gap,
                                grid_axes, spectral_report, write_report_csv)

SMALL = GridSpec(re_max=5.0, im_max=30.0, step=0.1)


def unit_input_system():
    """n = 1, no delays, P = delta_0 so p = 1."""
    return IdeSystem.create(1, input_atoms=[(0.0, 1.0)], tau_star=1.0, theta_star=1.0)


def test_grid_axes():
    re, im = grid_axes(GridSpec(20, 200, 0.05), 0.05)
    assert re[0] == -0.05 and re[1] == 0.0 and re[-1] == pytest.approx(20.0)
    assert im.size == 4001 and im[-1] == pytest.approx(200.0)
    with pytest.raises(ConfigurationError):
        grid_axes(GridSpec(step=0.6), 0.1)


def test_certify_no_atoms():
    c = certify_principal_part(unit_input_system(), 0.3)
    assert c.certified and c.rho == 0 and c.eta_lower == 1.0


def test_certify_example(example):
    c0 = certify_principal_part(example, 0.0)
    assert c0.rho == pytest.approx(0.6) and c0.eta_lower == pytest.approx(0.4)
    c = certify_principal_part(example, 0.05)
    assert c.certified and c.rho == pytest.approx(0.2 * math.exp(0.1) + 0.4 * math.exp(0.2))
    assert c.rho == pytest.approx(0.7096, abs=1e-4)


def test_certified_bound_is_a_lower_bound(rng):
    for n in (1, 2, 3):
        A = [0.25 / n * rng.normal(size=(n, n)) for _ in range(3)]
        sys = IdeSystem.create(n, state_atoms=list(zip([0.5, 1.3, 2.0], A)), tau_star=2, theta_star=1)
        nu = 0.1
        cert = certify_principal_part(sys, nu)
        if not cert.certified:
            continue
        z = rng.uniform(-nu, 5, 100) + 1j * rng.uniform(-100, 100, 100)
        assert np.all(np.abs(np.linalg.det(delta0_eval(sys, z))) >= cert.eta_lower - 1e-12)


def test_unstable_principal_part_is_not_certified():
    sys = IdeSystem.create(1, state_atoms=[(1.0, 1.2)], input_atoms=[(0.0, 1.0)], tau_star=1, theta_star=1)
    c = certify_principal_part(sys, 0.05, SMALL)
    assert not c.certified and c.rho >= 1.2
    # the real root ln(1.2) falls between grid nodes; the resolution margin exposes it
    assert c.eta_lower == 0.0
    report = spectral_report(sys, 0.05, 0.05, SMALL)
    with pytest.raises(AssumptionError):
        choose_rates(report)


def test_uncertified_but_stable_principal_part():
    # 1 - 0.6 w + 0.5 w^2 with w = exp(-z) has its roots at Re z = -ln(sqrt 2) < -0.05 although rho > 1
    sys = IdeSystem.create(1, state_atoms=[(1.0, 0.6), (2.0, -0.5)], input_atoms=[(0.0, 1.0)],
                           tau_star=2, theta_star=1)
    c = certify_principal_part(sys, 0.05, SMALL)
    assert not c.certified and c.rho > 1 and c.eta_lower > 0.1


def test_gap_with_unit_input_is_at_least_one():
    g = estimate_corona_gap(unit_input_system(), 0.05, SMALL)
    assert g.d_estimate >= 1.0 and not g.certified


def test_gap_rejects_coarse_grid(example):
    with pytest.raises(ConfigurationError):
        estimate_corona_gap(example, 0.05, GridSpec(step=1.0))


def test_gap_example_and_stability(pipeline):
    d = pipeline.report.d_estimate
    assert d > 0
    wide = estimate_corona_gap(pipeline.setup.system, pipeline.nu, pipeline.setup.grid.with_im_max(400.0))
    assert abs(wide.d_estimate - d) <= 0.05 * d


def test_gap_monotone_under_refinement(example):
    coarse = GridSpec(re_max=4.0, im_max=20.0, step=0.1)
    d1 = estimate_corona_gap(example, 0.05, coarse).d_estimate
    d2 = estimate_corona_gap(example, 0.05, coarse.refined()).d_estimate
    d3 = estimate_corona_gap(example, 0.05, coarse.refined(4)).d_estimate
    assert d3 <= d2 + 1e-12 <= d1 + 2e-12


def test_stabilizability_unit_input():
    s = check_spectral_stabilizability(unit_input_system(), 0.1, SMALL)
    assert s.ok and s.min_rank_indicator >= 1.0 - 1e-12


def test_stabilizability_fails_on_common_zero():
    # q(z) = 1 - exp(-z) vanishes at z = 0, which is a grid point, and p = 0
    sys = IdeSystem.create(1, state_atoms=[(1.0, 1.0)], tau_star=1, theta_star=1)
    s = check_spectral_stabilizability(sys, 0.05, GridSpec(re_max=2, im_max=10, step=0.05))
    assert not s.ok and s.min_rank_indicator == 0.0


def test_stabilizability_example(pipeline):
    s = check_spectral_stabilizability(pipeline.setup.system, pipeline.setup.nu_bar, pipeline.setup.grid)
    assert s.ok and s.relative > 1e-9


def test_conjugate_symmetry_of_grid_values(example):
    from idecorona.measures import laplace_eval_grid
    from idecorona.model import build_Q

    Q = build_Q(example)
    re = np.array([-0.05, 0.5, 3.0])
    im = np.array([0.7, 5.0, 40.0])
    up = laplace_eval_grid(Q, re, im)
    down = laplace_eval_grid(Q, re, -im)
    np.testing.assert_allclose(down, up.conj(), rtol=1e-12)


def _report(**kw):
    base = dict(nu_tilde=0.1, eta_lower=0.3, eta_certified=True, rho=0.7, nu_bar=0.1, stabilizable=True,
                sigma_min=1.0, sigma_rel=0.1, grid=GridSpec())
    base.update(kw)
    return SpectralReport(**base)


def test_choose_rates():
    assert choose_rates(_report()) == pytest.approx(0.05)
    assert choose_rates(_report(), 0.02) == 0.02
    with pytest.raises(ConfigurationError):
        choose_rates(_report(), 0.1)
    with pytest.raises(ConfigurationError):
        choose_rates(_report(nu_bar=0.04), 0.05)
    with pytest.raises(AssumptionError):
        choose_rates(_report(stabilizable=False))
    with pytest.raises(AssumptionError):
        choose_rates(_report(eta_lower=0.0))


def test_report_csv(tmp_path, example):
    path = tmp_path / "grid.csv"
    rows = write_report_csv(path, example, 0.05, SMALL, max_rows=500)
    lines = path.read_text().splitlines()
    assert lines[0] == "re,im,abs_det_delta0,sum_abs_minors,sigma_n"
    assert len(lines) == rows + 1 and rows <= 500
    vals = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    assert np.all(vals[:, 2:] > 0)
