import math

import numpy as np
import pytest

from idecorona.measures import HybridMeasure, identical, laplace_eval
from idecorona.model import (ControllerGains, IdeSystem, Kernel, build_P, build_Q, characteristic_matrix,
                             delta0_eval, gains_transform, p_eval, paper_example, q_eval)


def empty_system(n=2):
    return IdeSystem.create(n, tau_star=1.0, theta_star=1.0)


def test_empty_system_symbols():
    sys = empty_system()
    assert identical(build_Q(sys), HybridMeasure.identity(2))
    assert build_P(sys).is_zero
    z = np.array([0.1 + 3j, -2.0, 5j])
    np.testing.assert_array_equal(delta0_eval(sys, z), np.broadcast_to(np.eye(2), (3, 2, 2)))
    np.testing.assert_allclose(q_eval(sys, z), np.broadcast_to(np.eye(2), (3, 2, 2)))


def test_example_P_structure_and_value_at_zero(example):
    P = build_P(example)
    assert [loc for loc, _ in P.atoms] == [1.0, math.pi / 2]
    assert [w[0, 0] for _, w in P.atoms] == [2.0, 7.5]
    exact = 9.5 + (2 * math.sqrt(2) / 3) * (math.pi / 2) ** 1.5
    assert exact == pytest.approx(11.356, abs=1e-3)
    # sqrt has an unbounded derivative at 0, so the trapezoid error is O(h^1.5)
    assert p_eval(example, 0.0)[0, 0].real == pytest.approx(exact, abs=5e-4)
    assert p_eval(paper_example(h=1e-4), 0.0)[0, 0].real == pytest.approx(exact, abs=1e-6)


def test_example_q_at_zero(example):
    assert q_eval(example, 0.0)[0, 0].real == pytest.approx(3.25364, abs=2e-5)


def test_delta0_at_zero(example):
    assert delta0_eval(example, 0.0)[0, 0] == pytest.approx(1.6)


def test_delta0_is_Q_plus_N(example, rng):
    z = rng.uniform(-0.5, 3, 10) + 1j * rng.uniform(-40, 40, 10)
    N = HybridMeasure.from_function(lambda t: example.N(t), example.tau_star, example.h)
    lhs = delta0_eval(example, z)
    rhs = laplace_eval(build_Q(example), z) + laplace_eval(N, z)
    np.testing.assert_allclose(lhs, rhs, atol=1e-8)


def test_q_matches_direct_quadrature(example, rng):
    from scipy import integrate

    z = complex(0.3, 2.0)
    dens = integrate.quad(lambda t: math.sin(t) * math.exp(-z.real * t) * math.cos(z.imag * t), 0, 4)[0] \
        - 1j * integrate.quad(lambda t: math.sin(t) * math.exp(-z.real * t) * math.sin(z.imag * t), 0, 4)[0]
    direct = delta0_eval(example, z)[0, 0] + dens
    assert abs(q_eval(example, z)[0, 0] - direct) <= 1e-4
    assert abs(q_eval(paper_example(h=1e-3), z)[0, 0] - direct) <= 1e-6


def test_conjugate_symmetry(example, rng):
    z = rng.uniform(-0.5, 3, 8) + 1j * rng.uniform(-40, 40, 8)
    gains = ControllerGains(0.01, (rng.normal(size=50),), rng.normal(size=30))
    for f in (delta0_eval, q_eval, p_eval):
        np.testing.assert_allclose(f(example, z.conj()), f(example, z).conj(), rtol=1e-12)
    dA = np.linalg.det(characteristic_matrix(example, gains, z))
    dAc = np.linalg.det(characteristic_matrix(example, gains, z.conj()))
    np.testing.assert_allclose(dAc, dA.conj(), rtol=1e-10)


def test_zero_gains_characteristic_matrix(example, rng):
    z = rng.uniform(0, 2, 5) + 1j * rng.uniform(-10, 10, 5)
    gains = ControllerGains.zeros(1, 0.01, (4.0, math.pi / 2))
    M = characteristic_matrix(example, gains, z)
    np.testing.assert_array_equal(M[:, 1, :], np.broadcast_to([0, 1], (5, 2)))
    np.testing.assert_allclose(np.linalg.det(M), np.linalg.det(q_eval(example, z)))


def test_scalar_characteristic_determinant(example, rng):
    z = rng.uniform(-0.05, 2, 10) + 1j * rng.uniform(-30, 30, 10)
    gains = ControllerGains(0.01, (rng.normal(size=401),), rng.normal(size=158))
    g_hat, f_hat = gains_transform(gains, z)
    expected = q_eval(example, z)[:, 0, 0] * (1 - f_hat) - p_eval(example, z)[:, 0, 0] * g_hat[:, 0, 0]
    np.testing.assert_allclose(np.linalg.det(characteristic_matrix(example, gains, z)), expected, rtol=1e-12)


def test_gain_transform_uses_node_weights():
    g = ControllerGains(0.1, (np.array([1.0, 2.0]),), np.array([3.0]))
    g_hat, f_hat = gains_transform(g, 0.5)
    assert g_hat[0, 0] == pytest.approx(0.1 * (1 + 2 * math.exp(-0.05)))
    assert f_hat == pytest.approx(0.3)


def test_system_validation():
    with pytest.raises(ValueError):
        IdeSystem.create(1, state_atoms=[(2.0, 0.1), (1.0, 0.1)], tau_star=3, theta_star=1)
    with pytest.raises(ValueError):
        IdeSystem.create(1, state_atoms=[(0.0, 0.1)], tau_star=3, theta_star=1)
    with pytest.raises(ValueError):
        IdeSystem.create(1, state_atoms=[(4.0, 0.1)], tau_star=3, theta_star=1)
    with pytest.raises(ValueError):
        IdeSystem.create(1, N=Kernel.named("sin", np.ones((2, 2))), tau_star=1, theta_star=1)
    with pytest.raises(ValueError):
        IdeSystem.create(1, tau_star=0, theta_star=1)


def test_input_delay_zero_allowed():
    sys = IdeSystem.create(1, input_atoms=[(0.0, 1.0)], tau_star=1, theta_star=1)
    assert p_eval(sys, 3.0)[0, 0] == 1.0


def test_tabulated_kernel_interpolates():
    k = Kernel.tabulated([0.0, 1.0, 4.0], 0.5)
    np.testing.assert_allclose(k([0.25, 0.75, 1.0, 2.0])[:, 0, 0], [0.5, 2.5, 4.0, 0.0])


def test_gains_validation():
    with pytest.raises(ValueError):
        ControllerGains(0.1, (np.zeros(3),), np.zeros(3), supports=(0.2,))
    g = ControllerGains.zeros(2, 0.01, (1.0, 2.0, math.pi / 2))
    assert [len(c) for c in g.channels] == [101, 201, 158]
    assert g.weighted_norm(0.1) == 0.0
