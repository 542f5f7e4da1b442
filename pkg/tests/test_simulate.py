import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from idecorona.exceptions import ConfigurationError
from idecorona.io import preset
from idecorona.model import ControllerGains, IdeSystem
from idecorona.simulate import fit_decay_rate, simulate_closed_loop, simulate_open_loop, window_norms


def halving_system(h=0.05):
    return IdeSystem.create(1, state_atoms=[(1.0, 0.5)], input_atoms=[(0.5, 1.0)], tau_star=1, theta_star=1, h=h)


def test_pure_delay_halves_each_unit():
    run = simulate_open_loop(halving_system(), X0=1.0, T_end=5.0)
    t = run.X.t
    x = run.X.values[:, 0]
    sel = t >= -1e-12
    expected = 0.5 ** np.ceil(t[sel] - 1e-9)
    np.testing.assert_allclose(x[sel], expected, rtol=1e-13)


def test_zero_history_stays_zero():
    run = simulate_open_loop(preset("paper-example").system, X0=None, T_end=10.0)
    assert not run.X.values.any()
    assert run.fit.flag == "extinct"


def _x(run, t):
    return run.X.at(t)[0]


def test_linearity_in_history_and_input():
    sys = preset("paper-example").system
    f1 = lambda t: np.cos(t)
    f2 = lambda t: 1.0 + t
    u = lambda t: np.sin(3 * t)
    a = simulate_open_loop(sys, X0=f1, U=u, T_end=10.0)
    b = simulate_open_loop(sys, X0=f2, T_end=10.0)
    c = simulate_open_loop(sys, X0=lambda t: 2 * f1(t) - 3 * f2(t), U=lambda t: 2 * u(t), T_end=10.0)
    np.testing.assert_allclose(c.X.values, 2 * a.X.values - 3 * b.X.values, atol=1e-9)


def test_zero_gains_reproduce_open_loop():
    setup = preset("paper-example")
    sys = setup.system
    gains = ControllerGains.zeros(1, sys.h, (4.0, math.pi / 2))
    closed = simulate_closed_loop(sys, gains, setup.X0, setup.U0, T_end=15.0)
    opened = simulate_open_loop(sys, setup.X0, None, sys.h, 15.0, setup.U0)
    np.testing.assert_array_equal(closed.X.values, opened.X.values)
    assert not closed.U.values[closed.U.t > 0].any()


def test_first_order_convergence():
    setup = preset("paper-example")
    vals = []
    for h in (0.02, 0.01, 0.005):
        run = simulate_open_loop(setup.system, setup.X0, lambda t: np.sin(t), h, 10.0)
        vals.append(_x(run, 10.0))
    order = math.log2(abs(vals[0] - vals[1]) / abs(vals[1] - vals[2]))
    assert order >= 0.9


def test_gains_step_mismatch_rejected(example):
    gains = ControllerGains.zeros(1, 0.02, (1.0, 1.0))
    with pytest.raises(ConfigurationError):
        simulate_closed_loop(example, gains, h=0.01, T_end=2.0)


def test_fit_exact_exponential():
    t = np.linspace(0, 20, 401)
    fit = fit_decay_rate(t, 3.0 * np.exp(-0.3 * t))
    assert fit.rate == pytest.approx(-0.3, abs=1e-6)
    assert fit.C == pytest.approx(3.0, rel=1e-6) and fit.r2 == pytest.approx(1.0)


def test_fit_constant_and_extinct():
    t = np.linspace(0, 20, 401)
    assert abs(fit_decay_rate(t, np.full_like(t, 2.0)).rate) <= 1e-9
    assert fit_decay_rate(t, np.zeros_like(t)).flag == "extinct"
    with pytest.raises(ValueError):
        fit_decay_rate(t[:15], np.ones(15))


@given(st.floats(-1.0, 1.0), st.floats(0.1, 10))
def test_fit_recovers_any_rate(rate, scale):
    t = np.linspace(0, 30, 301)
    assert fit_decay_rate(t, scale * np.exp(rate * t)).rate == pytest.approx(rate, abs=1e-8)


def test_window_norm_of_constant_signal():
    from idecorona.simulate import SampledSignal

    X = SampledSignal(0.1, -1.0, np.ones((61, 1)))
    U = SampledSignal(0.1, -1.0, np.zeros((61, 1)))
    wn = window_norms(X, U, 1.0)
    assert wn[0, 0] == pytest.approx(0.0)
    np.testing.assert_allclose(wn[:, 1], 1.0, rtol=1e-12)


def test_closed_loop_decays_faster_than_half_rate(pipeline):
    assert pipeline.closed.fitted_rate <= -pipeline.nu / 2
    assert pipeline.closed.fit_quality >= 0.9
    wn = pipeline.closed.window_norms
    assert wn[-1, 1] <= 1e-2 * wn[:, 1].max()


def test_decay_envelope_covers_whole_run(pipeline):
    # envelope constant taken from the fitted half of the run must also bound the transient
    wn = pipeline.closed.window_norms
    fit = pipeline.closed.fit
    ratio = wn[:, 1] / np.exp(fit.rate * wn[:, 0])
    late = wn[:, 0] >= wn[-1, 0] / 2
    envelope = ratio[late].max()
    assert np.all(ratio <= 1.1 * envelope)
    assert envelope <= 1.25 * fit.C


def test_open_loop_is_not_stabilized(pipeline):
    assert pipeline.open.fitted_rate > pipeline.closed.fitted_rate + 0.1
