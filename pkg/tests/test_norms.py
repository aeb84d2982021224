import math
import warnings

import numpy as np
import pytest

from clusterlab.norms import (
    EmptyRegionWarning,
    angular_identity_error,
    angular_split,
    bilinear_ratio,
    exponent_table,
    fit_scaling_exponent,
    highdim_exponent,
    lipschitz_conjecture_exponent,
    log_power,
    lp_norm,
    overlap_constant,
    quadrature_weights,
    short_time_bound,
    sogge_exponent,
    theorem_exponent,
    tube_overlap_measure,
    weighted_group_norms,
)
from clusterlab.weyl import centered_modes, to_modes, to_samples


# ---------------------------------------------------------------- L^p norms


def test_quadrature_weights_sum_to_volume():
    t = np.linspace(0.0, 0.5, 33)
    assert quadrature_weights(33, 64, t, period=2.0).sum() == pytest.approx(1.0)


@pytest.mark.parametrize("p", [2, 3, 6, 8, np.inf])
def test_unit_field_has_unit_norm(p):
    assert lp_norm(np.ones((17, 32)), p) == pytest.approx(1.0)


@pytest.mark.parametrize("p", [2, 4, 7])
def test_plane_wave_norm(p):
    x = np.arange(128) / 128
    u = np.exp(2j * np.pi * 5 * x)[None, :] * np.ones((9, 1))
    assert lp_norm(u, p) == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("p", [2, 4, 6, 10])
def test_gaussian_norm_closed_form(p):
    sigma = 0.04
    x = np.arange(4096) / 4096
    g = np.exp(-(x - 0.5) ** 2 / (2 * sigma ** 2))
    exact = (sigma * math.sqrt(2 * math.pi / p)) ** (1 / p)
    assert lp_norm(g, p) == pytest.approx(exact, rel=1e-10)
    assert lp_norm(g, np.inf) == pytest.approx(1.0)


def test_masked_norm_and_empty_region():
    u = np.ones((5, 8))
    mask = np.zeros_like(u, dtype=bool)
    mask[:, :4] = True
    # trapezoid weights in t sum to 1, half of x is kept
    assert lp_norm(u, 2, mask) == pytest.approx(math.sqrt(0.5))
    with pytest.warns(EmptyRegionWarning):
        assert lp_norm(u, 2, np.zeros_like(mask)) == 0.0
    with pytest.raises(ValueError):
        lp_norm(u, 2, mask[:, :3])
    with pytest.raises(ValueError):
        lp_norm(u, 0.5)


# ------------------------------------------------------------ angular split


def random_fields(rng, k, shape=(6, 64)):
    f = rng.standard_normal((k,) + shape) + 1j * rng.standard_normal((k,) + shape)
    c = rng.standard_normal(k) + 1j * rng.standard_normal(k)
    return c, f


def test_split_of_coincident_frequencies():
    rng = np.random.default_rng(0)
    c, f = random_fields(rng, 3)
    split = angular_split([10.0, 10.0, 10.0], 0.5, 216, c, f)
    assert len(split.groups) == 1 and split.groups[0].sign == 1 and split.far_pairs == []
    assert angular_identity_error(split, c, f) <= 1e-13


def test_threshold_pairs_are_far():
    lam = 216.0
    theta = 2 * lam ** (-1 / 3)
    xis = np.array([0.0, 0.999 * lam * theta, lam * theta, 1.7 * lam * theta])
    split = angular_split(xis, theta, lam)
    far = set(split.far_pairs)
    for i in range(4):
        for j in range(i + 1, 4):
            if abs(xis[i] - xis[j]) / lam >= theta:
                assert (i, j) in far
    with pytest.raises(ValueError):
        angular_split(xis, 0.5 * theta, lam)


@pytest.mark.parametrize("seed", range(5))
def test_signed_identity(seed):
    rng = np.random.default_rng(seed)
    lam = 216.0
    k = 24
    xis = 72.0 * rng.integers(-6, 7, k)
    c, f = random_fields(rng, k)
    theta = float(rng.choice([2, 3, 4])) * lam ** (-1 / 3)
    split = angular_split(xis, theta, lam, c, f)
    assert angular_identity_error(split, c, f) <= 1e-10
    # a middle cell sits in its two + groups and its own - group
    assert split.max_overlap(xis) <= 3
    # stored group fields are the partial sums
    for g in split.groups:
        assert np.allclose(g.field, np.tensordot(c[g.members], f[g.members], axes=(0, 0)))


def test_bilinear_ratio_closed_form():
    t = np.linspace(0, 1, 5)
    ones = np.ones((5, 16))
    assert bilinear_ratio([], {}, {}, {}, 0.5, t) == 0.0
    r = bilinear_ratio([("T", "S")], {"T": 1.0}, {"S": 1.0}, {"T": ones, "S": ones}, 0.25, t)
    assert r == pytest.approx(0.5)


# ------------------------------------------------------------- tube overlap


@pytest.mark.parametrize("N", [4, 8])
def test_overlap_long_tubes_closed_form(N):
    lam, theta = 216.0, 0.5
    s = lam ** (2 / 3)
    # crossing time scale is 1/(s theta); integrate far past it
    I = tube_overlap_measure(lam, theta, N, nt=4001, nx=32001, t_extent=50 / (s * theta))
    assert lam ** (4 / 3) * theta * I == pytest.approx(overlap_constant(N), rel=1e-3)


def test_overlap_scales_inversely_with_angle():
    lam = 512.0
    theta = 8 * lam ** (-1 / 3)
    ratio = tube_overlap_measure(lam, theta / 2) / tube_overlap_measure(lam, theta)
    assert ratio == pytest.approx(2.0, rel=0.25)


# ------------------------------------------------------------------- fits


def test_fit_recovers_power_law():
    fit = fit_scaling_exponent([(lam, 3.0 * lam ** 0.375) for lam in (8, 16, 32, 64)])
    assert fit.slope == pytest.approx(0.375, abs=1e-12)
    assert math.exp(fit.intercept) == pytest.approx(3.0)
    assert fit.residual <= 1e-12
    assert fit_scaling_exponent([(8, 2.0), (20, 2.0), (40, 2.0)]).slope == pytest.approx(0.0, abs=1e-12)


def test_fit_rejects_bad_samples():
    with pytest.raises(ValueError):
        fit_scaling_exponent([(8, 1.0), (64, 2.0)])
    with pytest.raises(ValueError):
        fit_scaling_exponent([(8, 1.0), (12, 2.0), (16, 3.0)])
    with pytest.raises(ValueError):
        fit_scaling_exponent([(8, 1.0), (16, 0.0), (64, 3.0)])


# --------------------------------------------------------------- exponents


def test_two_dimensional_exponents():
    assert theorem_exponent(np.inf) == 0.5
    assert theorem_exponent(8) == pytest.approx(0.25)
    assert (2 / 3) * (0.5 - 1 / 8) == pytest.approx(0.25)  # both branches meet at p = 8
    assert theorem_exponent(6) == pytest.approx(2 / 9)
    assert theorem_exponent(2) == 0.0
    with pytest.raises(ValueError):
        theorem_exponent(1.5)
    assert (log_power(6), log_power(8), log_power(7), log_power(12)) == (0.0, 1.5, 1.5, 0.0)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_branches_are_continuous(d):
    pd = 2 * (d + 1) / (d - 1)
    pc = 2 * (d + 2) / (d - 1)
    assert sogge_exponent(pd, d) == pytest.approx((d - 1) / 2 * (0.5 - 1 / pd))
    assert lipschitz_conjecture_exponent(pc, d) == pytest.approx(2 * (d - 1) / 3 * (0.5 - 1 / pc))
    assert sogge_exponent(np.inf, d) == lipschitz_conjecture_exponent(np.inf, d) == (d - 1) / 2
    for p in (2.5, 4, 9, 20):
        assert lipschitz_conjecture_exponent(p, d) >= sogge_exponent(p, d) - 1e-15


def test_highdim_validity():
    assert highdim_exponent(10, 3) == pytest.approx(3 * 0.4 - 0.5)
    with pytest.raises(ValueError):
        highdim_exponent(8, 3)
    with pytest.raises(ValueError):
        highdim_exponent(12, 2)


def test_exponent_table_lookup():
    tab = exponent_table()
    assert tab.lookup(8, 2, "theorem_d2") == pytest.approx(0.25)
    assert tab.lookup(6, 2, "sogge") == pytest.approx(1 / 6)
    assert tab.lookup(10, 3, "theorem_highdim") == pytest.approx(0.7)
    with pytest.raises(KeyError):
        tab.lookup(6, 3, "theorem_highdim")


def test_short_time_bound():
    assert short_time_bound(4096, 2, 0.25, 4) == pytest.approx(4096 ** (5 / 24) * 2 ** 0.75 * 0.5 * 0.5)


def test_weighted_group_norms():
    n = 128
    lam, m = 216.0, 1
    x = np.arange(n) / n
    t = np.linspace(0, 0.1, 4)
    k0 = 20
    wave = np.tile(np.exp(2j * np.pi * k0 * x), (4, 1))
    modes = to_modes(wave)
    res = weighted_group_norms(modes, 2 * np.pi * k0, lam, m, t)
    vol = 0.1 ** (1 / 6)  # unit modulus over a slab of length 0.1, p = 6
    assert res[0] == pytest.approx(vol, rel=1e-12)
    assert res[1] <= 1e-12 and res[2] <= 1e-12
    off = weighted_group_norms(modes, 2 * np.pi * (k0 - 3), lam, m, t)
    w = lam ** (-2 / 3) * 2.0 ** (-m) * 2 * np.pi * 3
    assert off[1] == pytest.approx(w * vol, rel=1e-12) and off[2] == pytest.approx(w * w * vol, rel=1e-12)
