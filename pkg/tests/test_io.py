import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from idecorona.exceptions import ConfigurationError
from idecorona.io import (PAPER_EXAMPLE_INI, load_setup, parse_number, parse_setup, preset, read_gains_csv,
                          write_gains_csv, write_trajectory_csv)
from idecorona.measures import identical
from idecorona.model import ControllerGains, build_P, build_Q


def test_parse_number():
    assert parse_number("pi/2") == math.pi / 2
    assert parse_number("1/3") == pytest.approx(1 / 3)
    assert parse_number("-2e-3") == -2e-3
    assert parse_number("2**3") == 8
    for bad in ("__import__('os')", "x", "1/", "[1]"):
        with pytest.raises(ConfigurationError):
            parse_number(bad)


def test_example_config_matches_preset():
    from pathlib import Path

    cfg = parse_setup(PAPER_EXAMPLE_INI)
    ref = preset("paper-example")
    assert identical(build_Q(cfg.system), build_Q(ref.system))
    assert identical(build_P(cfg.system), build_P(ref.system))
    t = np.linspace(-4, 0, 41)
    np.testing.assert_allclose(cfg.X0(t), ref.X0(t), rtol=1e-15)
    assert cfg.U0 is None and cfg.nu is None and cfg.supports is None
    shipped = Path(__file__).resolve().parents[1] / "configs" / "paper_example.ini"
    assert identical(build_Q(load_setup(shipped).system), build_Q(ref.system))


@pytest.mark.parametrize("text", [
    "[delays]\nstate = 1: 0.5\n",
    "[system]\nn = 1\ntheta_star = 1\n",
    "[system]\nn = 1\ntau_star = 1\ntheta_star = 1\n[delays]\nstate = 2: 0.5\n",
    "[system]\nn = 1\ntau_star = 1\ntheta_star = 1\n[delays]\nstate = 0.5 0.1\n",
    "[system]\nn = 2\ntau_star = 1\ntheta_star = 1\n[delays]\nstate = 0.5: 1, 2\n",
    "[system]\nn = 1\ntau_star = 1\ntheta_star = 1\n[kernels]\nN = bessel: 1\n",
    "[system]\nn = 1\ntau_star = 1\ntheta_star = 1\n[initial]\nX0 = noise\n",
    "not an ini file",
])
def test_bad_configs_raise(text):
    with pytest.raises(ConfigurationError):
        parse_setup(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_setup(tmp_path / "nope.ini")


def test_tabulated_kernel_config():
    cfg = parse_setup("[system]\nn = 1\ntau_star = 1\ntheta_star = 1\n"
                      "[kernels]\nN = samples: 0.5; 0; 1; 0\n")
    np.testing.assert_allclose(cfg.system.N(np.array([0.25, 0.5]))[:, 0, 0], [0.5, 1.0])


@given(st.lists(st.floats(-1e6, 1e6, allow_subnormal=False), min_size=1, max_size=30),
       st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20),
       st.floats(1e-4, 0.5), st.floats(0, 1), st.floats(0, 1))
def test_gains_csv_roundtrip(g, f, h, nu, eps):
    import tempfile
    from pathlib import Path

    gains = ControllerGains(h, (np.array(g),), np.array(f))
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "gains.csv"
        write_gains_csv(path, gains, nu, eps)
        back, meta = read_gains_csv(path)
    assert back.h == h and meta["nu"] == nu and meta["residual_eps"] == eps
    np.testing.assert_array_equal(back.g[0], gains.g[0])
    np.testing.assert_array_equal(back.f, gains.f)
    assert back.supports == gains.supports


def test_not_a_gains_file(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ConfigurationError):
        read_gains_csv(p)


def test_trajectory_csv(tmp_path, pipeline):
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, pipeline.closed)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,X_1,U,window_norm"
    assert len(lines) - 1 == len(pipeline.closed.window_norms)
    first = [float(x) for x in lines[1].split(",")]
    assert first[0] == 0.0 and first[1] == pytest.approx(0.2)
