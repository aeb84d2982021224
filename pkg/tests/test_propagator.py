import numpy as np
import pytest

from clusterlab.errors import StepSizeError
from clusterlab.gabor import GaborFrame
from clusterlab.metric_symbols import ZOO, build_symbols, make_metric
from clusterlab.propagator import (
    BushProjector,
    Propagator,
    almost_orthogonality,
    almost_orthogonality_bound,
    bicharacteristic_center,
    check_unitarity,
    evolve,
    flat_evolution_oracle,
    frequency_localization_ratio,
)
from clusterlab.weyl import centered_modes, to_samples

from conftest import band_limited


def exact_flat(lam, c, t, n):
    # oracle for |xi| <= 5 lam / 8, where the extended flat symbol is sqrt(lam^2 - xi^2)
    xi = 2 * np.pi * centered_modes(n)
    assert np.all(np.abs(xi[np.abs(c) > 0]) <= 0.625 * lam)
    return np.exp(1j * t * np.sqrt(np.clip(lam ** 2 - xi ** 2, 0, None))) * c


def test_plane_wave_is_eigenfunction(flat64):
    n = 128
    x = np.arange(n) / n
    xi0 = 2 * np.pi * 5
    u = evolve(flat64.a_lam, np.exp(1j * xi0 * x), 0.0, 0.2)
    expect = np.exp(1j * 0.2 * np.sqrt(64.0 ** 2 - xi0 ** 2)) * np.exp(1j * xi0 * x)
    assert np.abs(u.final() - expect).max() <= 1e-8


def test_random_field_matches_multiplier(flat64, rng):
    n, lam = 128, 64.0
    c = band_limited(rng, n, 0.6 * lam)
    t = lam ** (-1 / 3)
    u = evolve(flat64.a_lam, c, 0.0, t, spectral=True)
    err = np.sqrt(np.sum(np.abs(u.spectrum[-1] - exact_flat(lam, c, t, n)) ** 2))
    assert err <= 1e-6


def test_flat_oracle_full_band_unit_time(rng):
    lam, n = 128.0, 512
    s = build_symbols(make_metric("flat", 32, 32), lam)
    c = band_limited(rng, n, 0.74 * lam)
    u = evolve(s.a_lam, c, 0.0, 1.0, spectral=True, record_every=10 ** 6)
    rel = np.linalg.norm(u.spectrum[-1] - flat_evolution_oracle(lam, c, 1.0)) / np.linalg.norm(c)
    assert rel <= 1e-6


def test_zero_stays_zero(flat64):
    u = evolve(flat64.a_lam, np.zeros(64), 0.0, 0.05)
    assert np.all(u.values == 0)


def test_group_law(sawtooth64, rng):
    c = band_limited(rng, 128, 40.0)
    p = Propagator(sawtooth64.a_lam, 128)
    dt = 0.25 / 64
    a, _ = p.run(c, 0.0, 0.1, dt)
    b, _ = p.run(a, 0.1, 0.25, dt)
    d, _ = p.run(c, 0.0, 0.25, dt)
    assert np.linalg.norm(b - d) <= 1e-6 * np.linalg.norm(c)


@pytest.mark.parametrize("name", sorted(ZOO))
def test_unitarity_and_band(name, rng):
    lam = 64
    s = build_symbols(make_metric(name, 64, 64), lam)
    c = band_limited(rng, 256, 0.7 * lam)
    u = evolve(s.a_lam, c, 0.0, lam ** (-1 / 3), spectral=True)
    tr = u.l2_trace
    assert np.abs(tr / tr[0] - 1).max() <= 1e-6
    assert u.band_leakage() <= 1e-8


def test_step_size_guard():
    with pytest.raises(StepSizeError) as e:
        check_unitarity(1.0, 1.01, 0.1, 64.0, 0.01)
    assert e.value.suggested_dt < 0.01
    assert check_unitarity(1.0, 1.0 + 1e-9, 0.1, 64.0, 0.01) == pytest.approx(1e-9)


def test_dt_ceiling(flat64):
    with pytest.raises(ValueError):
        evolve(flat64.a_lam, np.ones(64), 0.0, 0.1, dt=1.0 / 64)


# ------------------------------------------------------------ bicharacteristics


def test_bicharacteristic_center():
    s = build_symbols(make_metric("flat", 16, 16), 100)
    a = s.a_lam
    assert bicharacteristic_center(a, 0.3, 60.0, 0.0) == pytest.approx(0.3)
    assert bicharacteristic_center(a, 0.3, 0.0, 0.5) == pytest.approx(0.3, abs=1e-12)
    # group velocity d_xi sqrt(lam^2 - xi^2) = -xi / sqrt(lam^2 - xi^2) = -0.75
    assert bicharacteristic_center(a, 0.3, 60.0, 0.01) == pytest.approx(0.3075, abs=2e-5)


# ------------------------------------------------------ frequency localization


def packet(lam, n_x, n):
    frame = GaborFrame(lam, n_x)
    return frame, frame.element_modes(frame.n_positions // 2, n)


@pytest.mark.parametrize("order", [0, 1, 2, 3])
def test_frequency_localization_ratio(order):
    ratios = []
    for lam in (64, 128, 256):
        s = build_symbols(make_metric("flat", 32, 32), lam)
        frame, c = packet(lam, 512, 2)
        xi0 = float(frame.xi_center(2))
        I = (0.0, lam ** (-1 / 3))
        r = frequency_localization_ratio(s.a_lam, c, xi0, 0, order, I, spectral=True)
        if order == 0:
            assert r == pytest.approx(1.0, abs=1e-6)
        assert r <= 2
        ratios.append(r)
    assert max(ratios) / min(ratios) <= 2


def test_frequency_localization_shift_agnostic():
    lam = 128
    s = build_symbols(make_metric("flat", 32, 32), lam)
    frame, c = packet(lam, 512, 3)
    r = frequency_localization_ratio(s.a_lam, c, float(frame.xi_center(-2)), 0, 2, (0.0, lam ** (-1 / 3)), spectral=True)
    assert r <= 2


# --------------------------------------------------------- almost orthogonality


def bush(frame, ns, t, m, pos=0):
    w = sum(frame.element_modes(pos, n) for n in ns)
    return BushProjector((t, float(frame.x_center(pos))), [(0, pos, n) for n in ns],
                         np.array([frame.xi_center(n) for n in ns], dtype=float), w, m, True, frame.period)


def test_rank_one_identity(flat64):
    frame = GaborFrame(64, 256, n_max=4)
    b = bush(frame, range(-4, 4), 0.0, 3)
    val = almost_orthogonality(b, b, flat64.a_lam)
    # ||P P|| = ||P||^2 for the self-adjoint rank-one P = 2^(-m) <w, .> w
    assert val == pytest.approx(b.operator_norm ** 2, rel=1e-14)
    assert b.operator_norm == pytest.approx(2.0 ** -3 * b.norm_sq, rel=1e-14)
    assert 0.25 <= b.operator_norm <= 4
    assert b.distinct_frequencies() and b.norm_in_bracket()


def test_disjoint_frequencies_orthogonal(flat64):
    frame = GaborFrame(64, 256, n_max=4)
    b0 = bush(frame, [-4, -2], 0.0, 1)
    b1 = bush(frame, [2, 4], 0.0, 1)
    assert almost_orthogonality(b0, b1, flat64.a_lam) <= 1e-10


def test_almost_orthogonality_bound_values():
    lam, m = 4096.0, 3
    # alpha = lam^(-1/3)/sep for short separations: sep = lam^(-1/3) gives alpha = 1
    r = 2.0 ** -m
    assert almost_orthogonality_bound(lam, m, lam ** (-1 / 3)) == pytest.approx(4 * r * np.sqrt(1 + np.log(r) ** 2))
    assert almost_orthogonality_bound(lam, m, lam ** (-1 / 3) / 4) == pytest.approx(
        4 * 4 * r * np.sqrt(1 + np.log(4 * r) ** 2))
