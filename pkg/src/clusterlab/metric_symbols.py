"""Lipschitz coefficient fields, frequency truncation and half-wave symbols.

Coordinates are (t, x) on a doubly periodic cell of side ``period``.  A
metric is the pair (gamma, rho) where gamma is the inverse metric written as
a symmetric 2x2 field (g00, g01, g11) and rho a positive density.  The
frozen second-order symbol is

    q(tau, xi) = -(g00 tau^2 + 2 g01 tau xi + g11 xi^2) + lam^2 rho,

and for |xi| <= (3/4) lam it factors as -g00 (tau + a_tilde)(tau - a).

Symbols are sampled on the half-integer frequency lattice xi = (pi/period) j,
which contains both the field lattice (2 pi / period) k and every Weyl
midpoint (k + k') pi / period.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import FactorizationError, ResolutionError, SymbolClassError

log = logging.getLogger(__name__)

TRUNCATION_C = 1.0 / 8.0
EXTENSION_C = 1.0 / 16.0
TAPER_START = 0.9

# Brackets standing in for a ~ lam and d^2_xi a ~ -1/lam.
CLASS_LOWER = 0.25
CLASS_UPPER = 4.0


def grid(n: int, period: float = 1.0) -> np.ndarray:
    return period * np.arange(n) / n


def lipschitz_seminorm(f: np.ndarray, spacings) -> float:
    """Largest difference quotient between periodic grid neighbours."""
    f = np.asarray(f)
    best = 0.0
    for axis, h in enumerate(spacings):
        d = np.abs(np.roll(f, -1, axis=axis) - f) / h
        best = max(best, float(d.max()))
    return best


@dataclass(frozen=True, eq=False)
class MetricField:
    """Coefficients (gamma, rho) sampled on an (nt, nx) periodic grid.

    ``gamma`` has shape (nt, nx, 2, 2) and is symmetric.  Perturbation size
    and Lipschitz seminorm are computed on construction.
    """

    gamma: np.ndarray
    rho: np.ndarray
    period: float = 1.0
    name: str = "custom"
    params: dict = field(default_factory=dict)
    lip_seminorm: float = field(init=False)
    perturbation_size: float = field(init=False)

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        r = np.asarray(self.rho, dtype=float)
        if g.ndim != 4 or g.shape[2:] != (2, 2) or r.shape != g.shape[:2]:
            raise ValueError("gamma must be (nt, nx, 2, 2) and rho (nt, nx)")
        if not np.allclose(g[..., 0, 1], g[..., 1, 0], rtol=0, atol=1e-14):
            raise ValueError("gamma must be symmetric")
        if np.any(r <= 0):
            raise ValueError("rho must be positive")
        det = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] ** 2
        if np.any(g[..., 0, 0] <= 0) or np.any(det <= 0):
            raise ValueError("gamma must be positive definite")
        g.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "rho", r)
        h = self.spacings
        lip_g = max(lipschitz_seminorm(g[..., i, j], h) for i, j in ((0, 0), (0, 1), (1, 1)))
        object.__setattr__(self, "lip_seminorm", lip_g + lipschitz_seminorm(r, h))
        dev = np.abs(g - np.eye(2)).max() + np.abs(r - 1.0).max()
        object.__setattr__(self, "perturbation_size", float(dev))

    @property
    def shape(self):
        return self.rho.shape

    @property
    def spacings(self):
        nt, nx = self.rho.shape
        return (self.period / nt, self.period / nx)

    @property
    def t(self):
        return grid(self.shape[0], self.period)

    @property
    def x(self):
        return grid(self.shape[1], self.period)

    @property
    def g00(self):
        return self.gamma[..., 0, 0]

    @property
    def g01(self):
        return self.gamma[..., 0, 1]

    @property
    def g11(self):
        return self.gamma[..., 1, 1]

    def is_flat(self) -> bool:
        return self.perturbation_size == 0.0

    def with_fields(self, gamma, rho, suffix=""):
        return MetricField(gamma, rho, self.period, self.name + suffix, dict(self.params))


def metric_from_components(g00, g01, g11, rho, period=1.0, name="custom", params=None):
    g00, g01, g11, rho = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (g00, g01, g11, rho)))
    gamma = np.empty(g00.shape + (2, 2))
    gamma[..., 0, 0] = g00
    gamma[..., 0, 1] = g01
    gamma[..., 1, 0] = g01
    gamma[..., 1, 1] = g11
    return MetricField(gamma, rho.copy(), period, name, dict(params or {}))


# ---------------------------------------------------------------- metric zoo


def _dist_z(u):
    return np.abs(u - np.round(u))


def _flat(T, X, **_):
    one = np.ones_like(T)
    return one, 0 * one, one, one


def _bump(T, X, amplitude=0.15, **_):
    # Smooth periodic bump in unit coordinates, maximum 1 at (1/2, 1/2).
    psi = np.exp(np.cos(2 * np.pi * (X - 0.5)) + np.cos(2 * np.pi * (T - 0.5)) - 2.0)
    one = np.ones_like(T)
    return one, 0.25 * amplitude * psi, one + amplitude * psi, one + 0.5 * amplitude * psi


def _sawtooth(T, X, amplitude=0.2, **_):
    one = np.ones_like(T)
    return one, 0 * one, one + amplitude * _dist_z(X), one


def _smith_sogge(T, X, amplitude=0.3, **_):
    # Crease profile (1 - |y|)^2 on y in [-1/2, 1/2), scaled into the perturbative regime.
    y = X - 0.5
    one = np.ones_like(T)
    return one, 0 * one, one + amplitude * ((1 - np.abs(y)) ** 2 - 1), one


def _checkerboard(T, X, amplitude=0.5, **_):
    s = (2 * _dist_z(T) - 0.5) * (2 * _dist_z(X) - 0.5)
    one = np.ones_like(T)
    return one + 0.5 * amplitude * s, 0 * one, one + amplitude * s, one - 0.5 * amplitude * s


ZOO: dict[str, Callable] = {
    "flat": _flat,
    "bump": _bump,
    "sawtooth": _sawtooth,
    "smith_sogge": _smith_sogge,
    "checkerboard": _checkerboard,
}

MAX_PERTURBATION = 0.25


def make_metric(name: str, nt: int = 64, nx: int = 64, period: float = 1.0, **params) -> MetricField:
    """Sample a zoo metric on an (nt, nx) grid of a square cell of side ``period``.

    Profiles are defined in unit coordinates and stretched to the period, so
    the Lipschitz seminorm scales like 1/period.
    """
    if name not in ZOO:
        raise KeyError(f"unknown metric {name!r}; choose from {sorted(ZOO)}")
    T, X = np.meshgrid(np.arange(nt) / nt, np.arange(nx) / nx, indexing="ij")
    g00, g01, g11, rho = ZOO[name](T, X, **params)
    m = metric_from_components(g00, g01, g11, rho, period, name, params)
    if m.perturbation_size > MAX_PERTURBATION + 1e-12:
        raise ValueError(f"{name}: perturbation {m.perturbation_size:.3f} exceeds {MAX_PERTURBATION}")
    return m


# --------------------------------------------------------- frequency cutoff


def spectral_window(omega: np.ndarray, cutoff: float) -> np.ndarray:
    """Raised-cosine low-pass weight: 1 below 0.9 cutoff, 0 above cutoff."""
    r = np.abs(omega)
    w = np.zeros_like(r, dtype=float)
    lo = TAPER_START * cutoff
    w[r <= lo] = 1.0
    mid = (r > lo) & (r < cutoff)
    w[mid] = np.cos(0.5 * np.pi * (r[mid] - lo) / (cutoff - lo)) ** 2
    return w


def _radial_frequency(shape, period):
    axes = [2 * np.pi * np.fft.fftfreq(n, d=period / n) for n in shape]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.sqrt(sum(m ** 2 for m in mesh))


def truncate_frequency(field_: np.ndarray, cutoff: float, period: float = 1.0, grid_ndim: Optional[int] = None) -> np.ndarray:
    """Smoothly remove (angular) frequencies above ``cutoff`` from a periodic field.

    The leading ``grid_ndim`` axes (default: all) are the periodic grid; any
    trailing axes (matrix entries, xi samples) are carried along.  A cutoff
    at or above the grid Nyquist frequency returns the field unchanged.
    """
    f = np.asarray(field_)
    gd = f.ndim if grid_ndim is None else grid_ndim
    shape = f.shape[:gd]
    nyquist = min(np.pi * n / period for n in shape)
    if cutoff >= nyquist:
        return f.copy()
    if nyquist < 2 * cutoff:
        raise ResolutionError(f"grid Nyquist {nyquist:.3g} below twice the cutoff {cutoff:.3g}")
    w = spectral_window(_radial_frequency(shape, period), cutoff)
    w = w.reshape(shape + (1,) * (f.ndim - gd))
    axes = tuple(range(gd))
    out = np.fft.ifftn(np.fft.fftn(f, axes=axes) * w, axes=axes)
    return out.real if np.isrealobj(f) else out


def truncation_constant(original, truncated, lip: float, cutoff: float) -> float:
    """C in ||f - f_cut||_inf <= C lip / cutoff."""
    dev = float(np.abs(np.asarray(original) - np.asarray(truncated)).max())
    return dev * cutoff / lip if lip > 0 else (0.0 if dev == 0 else np.inf)


def truncate_metric(metric: MetricField, cutoff: float) -> MetricField:
    g = truncate_frequency(metric.gamma, cutoff, metric.period, grid_ndim=2)
    g = 0.5 * (g + np.swapaxes(g, -1, -2))
    r = truncate_frequency(metric.rho, cutoff, metric.period)
    return metric.with_fields(g, r, suffix=f"@{cutoff:g}")


# ------------------------------------------------------------------ symbols


def xi_lattice(lam: float, period: float = 1.0, fraction: float = 0.75) -> np.ndarray:
    """Half-integer lattice (pi/period) j with |xi| <= fraction * lam."""
    jmax = int(np.floor(fraction * lam * period / np.pi + 1e-12))
    return np.pi / period * np.arange(-jmax, jmax + 1)


@dataclass(frozen=True, eq=False)
class SymbolGrid:
    """Real symbol a(t, x, xi) sampled on (t grid) x (x grid) x (xi samples).

    ``bandwidth`` is the (angular) radius of the (t, x)-spectrum, or None when
    no truncation has been applied.  Once ``extended`` is set the symbol is
    understood to equal ``extension_value`` (``lam`` unless ``ext_value``
    says otherwise) for every xi beyond the stored samples.
    """

    values: np.ndarray
    xi: np.ndarray
    lam: float
    delta: float = 1.0
    period: float = 1.0
    extended: bool = False
    c_ext: float = EXTENSION_C
    bandwidth: Optional[float] = None
    label: str = ""
    ext_value: Optional[float] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[2] != len(self.xi):
            raise ValueError("values must have shape (nt, nx, len(xi))")
        if not np.all(np.isfinite(v)):
            raise ValueError("symbol values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))

    @property
    def shape(self):
        return self.values.shape

    @property
    def t(self):
        return grid(self.shape[0], self.period)

    @property
    def x(self):
        return grid(self.shape[1], self.period)

    @property
    def extension_value(self) -> float:
        return self.lam if self.ext_value is None else self.ext_value

    @property
    def xi_range(self):
        if self.extended:
            return (-np.inf, np.inf)
        return (float(self.xi.min()), float(self.xi.max()))

    @property
    def lattice_index(self) -> np.ndarray:
        """Integer j with xi = (pi/period) j; raises if xi is off-lattice."""
        j = self.xi * self.period / np.pi
        jr = np.round(j)
        if not np.allclose(j, jr, atol=1e-9) or np.any(np.diff(jr) != 1):
            raise ValueError("xi samples are not a contiguous half-integer lattice")
        return jr.astype(int)

    def replace(self, **kw) -> "SymbolGrid":
        return replace(self, **kw)

    @classmethod
    def from_function(cls, func, lam, nt=8, nx=64, jmax=None, period=1.0, delta=1.0, label=""):
        """Sample ``func(t, x, xi)`` (broadcasting) on a grid and full lattice."""
        if jmax is None:
            jmax = nx
        xi = np.pi / period * np.arange(-jmax, jmax + 1)
        T, X, XI = np.meshgrid(grid(nt, period), grid(nx, period), xi, indexing="ij")
        vals = np.broadcast_to(np.asarray(func(T, X, XI), dtype=float), T.shape)
        return cls(np.array(vals), xi, lam, delta, period, label=label)


def _roots(g00, g01, g11, rho, xi, lam):
    disc = (g01 ** 2 - g00 * g11) * xi ** 2 + g00 * lam ** 2 * rho
    if np.any(disc <= 0):
        bad = np.argwhere(disc <= 0)[0]
        raise FactorizationError(f"discriminant nonpositive at node {tuple(bad)}")
    sq = np.sqrt(disc)
    b = g01 * xi
    prod = (lam ** 2 * rho - g11 * xi ** 2) / g00  # a * a_tilde
    big_tilde = b >= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        at_direct = (b + sq) / g00
        a_direct = (-b + sq) / g00
        a = np.where(big_tilde, prod / at_direct, a_direct)
        at = np.where(big_tilde, at_direct, prod / a_direct)
    return a, at


def factor_halfwave(metric: MetricField, lam: float, xi=None):
    """Positive roots (a, a_tilde) of the frozen quadratic in tau.

    ``xi`` defaults to the half-integer lattice on |xi| <= (3/4) lam.
    """
    if xi is None:
        xi = xi_lattice(lam, metric.period)
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if np.abs(xi).max() > 0.75 * lam + 1e-9:
        raise ValueError("factorization is only defined for |xi| <= (3/4) lam")
    g00, g01, g11, rho = (f[..., None] for f in (metric.g00, metric.g01, metric.g11, metric.rho))
    a, at = _roots(g00, g01, g11, rho, xi[None, None, :], lam)
    if np.any(a <= 0) or np.any(at <= 0):
        raise FactorizationError("a non-positive root: metric not elliptic on the xi range")
    a_sym = SymbolGrid(a, xi, lam, 1.0, metric.period, label=f"a[{metric.name}]")
    at_sym = SymbolGrid(at, xi, lam, 1.0, metric.period, label=f"a_tilde[{metric.name}]")
    return a_sym, at_sym


def factorization_residual(metric: MetricField, a: SymbolGrid, a_tilde: SymbolGrid) -> float:
    """max |q(tau) + g00 (tau + a_tilde)(tau - a)| over nodes, at tau = a and tau = -a_tilde.

    The quadratic is re-expanded in its monomial form so that the residual
    exercises the factorization rather than restating it.
    """
    lam = a.lam
    xi = a.xi[None, None, :]
    g00, g01, g11, rho = (f[..., None] for f in (metric.g00, metric.g01, metric.g11, metric.rho))
    worst = 0.0
    for tau in (a.values, -a_tilde.values):
        q = -(g00 * tau ** 2 + 2 * g01 * tau * xi + g11 * xi ** 2) + lam ** 2 * rho
        fac = -g00 * (tau + a_tilde.values) * (tau - a.values)
        worst = max(worst, float(np.abs(q - fac).max()))
    return worst


def _blend_weight(absxi, lam, c_ext):
    lo, hi = 0.625 * lam, (0.75 - c_ext) * lam
    if hi <= lo:
        raise ValueError("extension interval is empty; need c_ext < 1/8")
    s = np.clip((absxi - lo) / (hi - lo), 0.0, 1.0)
    return np.cos(0.5 * np.pi * s) ** 2


def extend_symbol(a: SymbolGrid, c_ext: float = EXTENSION_C) -> SymbolGrid:
    """Cosine-blend ``a`` into the constant ``lam`` over |xi| in [5/8, 3/4 - c_ext] lam.

    Idempotent: an already extended symbol is returned as is.
    """
    if a.extended:
        return a
    w = _blend_weight(np.abs(a.xi), a.lam, c_ext)
    vals = w * a.values + (1 - w) * a.lam
    return a.replace(values=vals, extended=True, c_ext=c_ext, label=a.label + "+ext")


def check_symbol_class(a: SymbolGrid, lower=CLASS_LOWER, upper=CLASS_UPPER):
    """Verify a in [lam/4, 4 lam] and d^2_xi a in [-4/lam, -1/(4 lam)] on |xi| <= 5/8 lam.

    Raises SymbolClassError naming the first failing (t, x, xi) node.
    """
    lam = a.lam
    inside = np.abs(a.xi) <= 0.625 * lam + 1e-12
    v = a.values[:, :, inside]
    bad = np.argwhere((v < lower * lam) | (v > upper * lam))
    if bad.size:
        i, k, j = bad[0]
        raise SymbolClassError(f"a = {v[i, k, j]:.4g} outside [{lower}, {upper}] lam", (int(i), int(k), float(a.xi[inside][j])))
    if inside.sum() >= 3:
        h = np.diff(a.xi).mean()
        d2 = (v[:, :, 2:] - 2 * v[:, :, 1:-1] + v[:, :, :-2]) / h ** 2
        bad = np.argwhere((d2 < -upper / lam) | (d2 > -lower / lam))
        if bad.size:
            i, k, j = bad[0]
            raise SymbolClassError(
                f"d2_xi a = {d2[i, k, j]:.4g} outside [-{upper}, -{lower}]/lam", (int(i), int(k), float(a.xi[inside][j + 1]))
            )


def mollify_symbol(a: SymbolGrid, cutoff: float, delta: Optional[float] = None, check: bool = True) -> SymbolGrid:
    """Truncate the (t, x)-spectrum of every xi slice at angular frequency ``cutoff``."""
    vals = truncate_frequency(a.values, cutoff, a.period, grid_ndim=2)
    bw = cutoff if a.bandwidth is None else min(cutoff, a.bandwidth)
    out = a.replace(values=vals, bandwidth=bw, delta=a.delta if delta is None else delta, label=a.label + f"~{cutoff:.3g}")
    if check:
        check_symbol_class(out)
    return out


@dataclass(frozen=True, eq=False)
class HalfWaveSymbols:
    """The symbol chain for one metric and frequency: raw roots, a_lam, a_{lam^(2/3)}."""

    metric: MetricField
    a: SymbolGrid
    a_tilde: SymbolGrid
    a_lam: SymbolGrid
    a_moll: SymbolGrid
    c: float


def build_symbols(metric: MetricField, lam: float, c: float = TRUNCATION_C, c_ext: float = EXTENSION_C) -> HalfWaveSymbols:
    """Truncate the metric at c lam, factor, truncate a at c lam, extend, and
    mollify again at c lam^(2/3)."""
    tm = truncate_metric(metric, c * lam)
    a, at = factor_halfwave(tm, lam)
    a_lam = extend_symbol(mollify_symbol(a, c * lam, delta=1.0), c_ext)
    check_symbol_class(a_lam)
    a_moll = mollify_symbol(a_lam, c * lam ** (2 / 3), delta=2 / 3)
    return HalfWaveSymbols(tm, a, at, a_lam, a_moll, c)


# ---------------------------------------------------------------- seminorms


def _diff(f, axis, h, order, periodic):
    """Order-n centered difference: (second difference)^(n//2) times a first difference."""
    out = f
    for _ in range(order // 2):
        if periodic:
            out = (np.roll(out, -1, axis) - 2 * out + np.roll(out, 1, axis)) / h ** 2
        else:
            sl = [slice(None)] * out.ndim
            a_, b_, c_ = list(sl), list(sl), list(sl)
            a_[axis], b_[axis], c_[axis] = slice(2, None), slice(1, -1), slice(None, -2)
            out = (out[tuple(a_)] - 2 * out[tuple(b_)] + out[tuple(c_)]) / h ** 2
    if order % 2:
        if periodic:
            out = (np.roll(out, -1, axis) - np.roll(out, 1, axis)) / (2 * h)
        else:
            sl = [slice(None)] * out.ndim
            a_, c_ = list(sl), list(sl)
            a_[axis], c_[axis] = slice(2, None), slice(None, -2)
            out = (out[tuple(a_)] - out[tuple(c_)]) / (2 * h)
    return out


@dataclass
class SeminormTable:
    constants: dict  # (|alpha|, beta) -> C
    delta: float
    budget: float
    member: bool

    def __getitem__(self, key):
        return self.constants[key]


def symbol_seminorms(a: SymbolGrid, delta: Optional[float] = None, max_order: int = 2, budget: float = 16.0) -> SeminormTable:
    """C1-variant seminorms of ``a`` by centered differences.

    C[(|alpha|, beta)] = sup |d^alpha_{t,x} d^beta_xi a| lam^(beta - delta max(0, |alpha| - 1)) / lam,
    where |alpha| derivatives are split between t and x in every way and the
    sup runs over the periodic (t, x) grid and the xi nodes with
    |xi| <= (5/8) lam whose stencil stays inside the stored samples.
    """
    delta = a.delta if delta is None else delta
    lam = a.lam
    ht, hx = a.period / a.shape[0], a.period / a.shape[1]
    hxi = float(np.diff(a.xi).mean()) if len(a.xi) > 1 else 1.0
    valid_xi = np.abs(a.xi) <= 0.625 * lam + 1e-12
    consts = {}
    for alpha in range(max_order + 1):
        for beta in range(max_order + 1 - alpha):
            best = 0.0
            for at_ in range(alpha + 1):
                d = _diff(a.values, 0, ht, at_, True)
                d = _diff(d, 1, hx, alpha - at_, True)
                d = _diff(d, 2, hxi, beta, False) if beta else d
                off = (beta + 1) // 2 if beta else 0
                mask = valid_xi[off: len(a.xi) - off] if off else valid_xi
                if d.shape[2] == 0 or not mask.any():
                    continue
                best = max(best, float(np.abs(d[:, :, mask]).max()))
            consts[(alpha, beta)] = best * lam ** (beta - delta * max(0, alpha - 1)) / lam
    member = all(v <= budget for v in consts.values())
    return SeminormTable(consts, delta, budget, member)
