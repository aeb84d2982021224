import numpy as np
import pytest

from clusterlab.errors import BandError
from clusterlab.gabor import (
    GaborFrame,
    analyze,
    build_window,
    coefficients_to_csv,
    gram_ratio,
    synthesize,
)
from clusterlab.weyl import to_modes, to_samples

from conftest import band_limited


@pytest.fixture(scope="module")
def frame():
    return GaborFrame(216, 1024)


def l2sq(f, period=1.0):
    return period * np.mean(np.abs(f) ** 2)


def test_window_values():
    w = build_window()
    assert w.hat(0.0) == 1.0
    assert w.hat(1.0) ** 2 == pytest.approx(0.5, abs=1e-15)
    assert w.hat(-1.0) ** 2 + w.hat(1.0) ** 2 == pytest.approx(1.0)
    assert w.hat(1.2) == 0.0


def test_partition_of_unity():
    z = np.linspace(-50, 50, 10 ** 4)
    assert build_window().partition_defect(z).max() <= 1e-10


def test_hat_square_integral_is_two():
    # oracle: quadrature of sum_n |hat(phi)(zeta - 2n)|^2 over one period of length 2
    w = build_window()
    z = np.linspace(-1.5, 1.5, 300001)
    assert np.trapezoid(w.b(z), z) == pytest.approx(2.0, rel=1e-9)
    assert w.hat_l2_norm_sq == 2.0
    assert w.l2_norm_sq == pytest.approx(2.0 / (2 * np.pi))


def test_frame_geometry(frame):
    assert frame.n_positions == 36
    assert frame.scale == 36.0
    assert frame.xi_spacing == 72.0
    assert frame.n_max == 6
    assert frame.coverage > 0.75 * 216


def test_zero_field(frame):
    assert analyze(np.zeros(1024), frame) == {}


def test_single_coefficient_synthesizes_element(frame):
    f = synthesize({(5, -2): 1.0}, frame)
    assert np.allclose(f, frame.element(5, -2), atol=1e-14)


def test_element_energy_identity(frame):
    phi = frame.element(7, 1)
    c = analyze(phi, frame)
    assert sum(abs(v) ** 2 for v in c.values()) == pytest.approx(l2sq(phi), rel=1e-12)


def test_round_trip_and_parseval(frame, rng):
    for _ in range(20):
        c = band_limited(rng, 1024, 0.75 * 216)
        f = to_samples(c)
        co = analyze(f, frame)
        back = synthesize(co, frame)
        assert np.linalg.norm(back - f) <= 1e-8 * np.linalg.norm(f)
        assert abs(sum(abs(v) ** 2 for v in co.values()) - l2sq(f)) <= 1e-8 * l2sq(f)


def test_band_check(frame):
    c = np.zeros(1024, dtype=complex)
    c[512 + 200] = 1.0  # xi = 2 pi 200, far outside the coverage
    with pytest.raises(BandError):
        analyze(to_samples(c), frame)


def test_translation_covariance(frame, rng):
    # shifting f by one lattice step x_1 = 1/36 shifts every index m by one, up to the
    # phase exp(-i xi_n x_1) = exp(-2 i n); the wrap m = 35 -> 0 adds exp(i xi_n)
    n = 1024
    c = band_limited(rng, n, 150.0)
    k = np.arange(-(n // 2), n - n // 2)
    shifted = c * np.exp(-2j * np.pi * k / 36)
    a = frame.analyze_modes(c)
    b = frame.analyze_modes(shifted)
    phase = np.exp(-2j * frame.n_range)
    assert np.allclose(a[:-1] * phase, b[1:], atol=1e-12)
    assert np.allclose(a[-1] * phase * np.exp(1j * frame.xi_center(frame.n_range)), b[0], atol=1e-12)


def test_distinct_frequency_gram_bracket(frame, rng):
    for _ in range(100):
        ns = rng.choice(frame.n_range, size=5, replace=False)
        co = {(int(rng.integers(36)), int(n)): complex(rng.standard_normal(), rng.standard_normal()) for n in ns}
        # oracle: direct Gram matrix of the chosen elements
        els = np.array([frame.element(m, n) for (m, n) in co])
        b = np.array(list(co.values()))
        G = (els.conj() @ els.T) / 1024  # G[i, j] = <phi_i, phi_j>
        direct = np.real(b.conj() @ G @ b) / np.sum(np.abs(b) ** 2)
        r = gram_ratio(frame, co)
        assert r == pytest.approx(direct, rel=1e-10)
        assert 0.25 <= r <= 4


def test_coefficient_csv(tmp_path, frame):
    co = {(3, 1): 0.5 + 0.25j, (0, -1): 1.0}
    p = tmp_path / "c.csv"
    coefficients_to_csv(p, co, slab=2)
    lines = p.read_text().splitlines()
    assert lines[0] == "l,m,n,re,im"
    assert lines[1] == "2,0,-1,1.0,0.0"
    assert lines[2] == "2,3,1,0.5,0.25"


def test_grid_too_coarse():
    with pytest.raises(ValueError):
        GaborFrame(216, 64)
