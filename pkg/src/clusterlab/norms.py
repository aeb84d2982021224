"""Space-time L^p norms, bilinear angular decomposition, tube overlaps and exponent fits."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .propagator import WaveField


class EmptyRegionWarning(UserWarning):
    pass


# -------------------------------------------------------------- L^p norms


def quadrature_weights(nt: int, nx: int, t: Optional[np.ndarray] = None, period: float = 1.0) -> np.ndarray:
    """Trapezoid weights in t (closed grid) times uniform periodic weights in x."""
    if t is None:
        t = np.linspace(0.0, 1.0, nt) if nt > 1 else np.zeros(1)
    t = np.asarray(t, dtype=float)
    if nt == 1:
        wt = np.ones(1)
    else:
        h = np.diff(t)
        wt = np.zeros(nt)
        wt[:-1] += h / 2
        wt[1:] += h / 2
    return wt[:, None] * np.full(nx, period / nx)[None, :]


def lp_norm(field_, p: float, mask: Optional[np.ndarray] = None, t: Optional[np.ndarray] = None,
            period: float = 1.0) -> float:
    """Discrete L^p norm over the (masked) space-time grid; p = inf gives max modulus.

    ``field_`` is a WaveField or an (nt, nx) array; a 1-d array is treated as
    a single time slice with unit time weight.
    """
    if isinstance(field_, WaveField):
        vals, t, period = field_.values, field_.t, field_.period
    else:
        vals = np.asarray(field_)
        if vals.ndim == 1:
            vals = vals[None, :]
    absu = np.abs(vals)
    if mask is None:
        mask = np.ones(absu.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != absu.shape:
        raise ValueError("mask does not conform to the grid")
    if not mask.any():
        warnings.warn("empty region; L^p norm set to 0", EmptyRegionWarning, stacklevel=2)
        return 0.0
    if np.isinf(p):
        return float(absu[mask].max())
    if p < 1:
        raise ValueError("p must be >= 1")
    w = quadrature_weights(absu.shape[0], absu.shape[1], t, period)
    return float(np.sum(w[mask] * absu[mask] ** p) ** (1.0 / p))


# ----------------------------------------------------------- angular split


@dataclass(eq=False)
class AngularGroup:
    """Tubes with xi_T in K_l = [cell l, cell l + width) where width is one or two cells."""

    center_index: int
    cells: tuple
    K: tuple
    members: list
    sign: int
    field: Optional[np.ndarray] = None


@dataclass
class AngularSplit:
    groups: list
    far_pairs: list
    cell_width: float

    def max_overlap(self, probe: np.ndarray) -> int:
        """Largest number of K_l containing a probe frequency."""
        return int(max(sum(g.K[0] <= x < g.K[1] for g in self.groups) for x in probe)) if self.groups else 0


def angular_split(xis: Sequence[float], theta: float, lam: float, coeffs: Optional[np.ndarray] = None,
                  fields: Optional[np.ndarray] = None) -> AngularSplit:
    """Signed angular decomposition v^2 = sum_l +- v_l^2 + sum_far 2 b_T b_S v_T v_S.

    Frequencies are binned into cells of width lam theta / 2.  For each pair
    of adjacent cells (l, l+1) a group with sign + is formed and every cell
    with two neighbours inside the occupied range gets a group with sign -.
    Far pairs are the unordered pairs whose cells differ by at least 2; any
    pair with lam^(-1) |xi_T - xi_S| >= theta is far.
    """
    if theta < 2 * lam ** (-1 / 3) - 1e-12:
        raise ValueError("theta must be at least 2 lam^(-1/3)")
    xis = np.asarray(xis, dtype=float)
    w = lam * theta / 2
    cell = np.floor(xis / w + 1e-9).astype(int)
    lo, hi = int(cell.min()), int(cell.max())
    members = {c: [i for i in range(len(xis)) if cell[i] == c] for c in range(lo, hi + 1)}

    def make(cells, sign, idx):
        K = (cells[0] * w, (cells[-1] + 1) * w)
        f = None
        if fields is not None and coeffs is not None:
            f = np.tensordot(coeffs[idx], fields[idx], axes=(0, 0)) if idx else np.zeros(fields.shape[1:], dtype=complex)
        return AngularGroup(cells[0], tuple(cells), K, idx, sign, f)

    groups = []
    if lo == hi:
        groups.append(make((lo,), +1, members[lo]))
    else:
        for c in range(lo, hi):
            idx = members[c] + members[c + 1]
            if idx:
                groups.append(make((c, c + 1), +1, idx))
        for c in range(lo + 1, hi):
            if members[c]:
                groups.append(make((c,), -1, members[c]))
    far = [(i, j) for i in range(len(xis)) for j in range(i + 1, len(xis)) if abs(cell[i] - cell[j]) >= 2]
    return AngularSplit(groups, far, w)


def angular_identity_error(split: AngularSplit, coeffs: np.ndarray, fields: np.ndarray) -> float:
    """Relative max error between v^2 and the signed reconstruction."""
    v = np.tensordot(coeffs, fields, axes=(0, 0))
    rec = np.zeros_like(v)
    for g in split.groups:
        vl = np.tensordot(coeffs[g.members], fields[g.members], axes=(0, 0))
        rec += g.sign * vl * vl
    for i, j in split.far_pairs:
        rec += 2 * coeffs[i] * coeffs[j] * fields[i] * fields[j]
    ref = np.abs(v * v).max()
    return float(np.abs(rec - v * v).max() / ref) if ref > 0 else float(np.abs(rec).max())


# ------------------------------------------------------------ bilinear ratio


def bilinear_ratio(pairs: Sequence[tuple], b: dict, d: dict, fields: dict, theta: float,
                   t: np.ndarray, period: float = 1.0) -> float:
    """||sum_{(T,S)} b_T v_T d_S v_S||_{L^2} / (theta^(-1/2) (sum|b_T|^2)^(1/2) (sum|d_S|^2)^(1/2)).

    ``fields[T]`` are x-samples of v_T on the slab grid ``t`` (shape
    (nt, nx)); the sums of |b|^2 and |d|^2 run over the tubes that appear.
    """
    if not pairs:
        return 0.0
    acc = None
    for T, S in pairs:
        term = (b[T] * d[S]) * fields[T] * fields[S]
        acc = term if acc is None else acc + term
    num = lp_norm(acc, 2, t=t, period=period)
    Ts = {T for T, _ in pairs}
    Ss = {S for _, S in pairs}
    den = theta ** -0.5 * math.sqrt(sum(abs(b[T]) ** 2 for T in Ts)) * math.sqrt(sum(abs(d[S]) ** 2 for S in Ss))
    return float(num / den)


def tube_angle(xi_t: float, xi_s: float, lam: float) -> float:
    return abs(xi_t - xi_s) / lam


# ------------------------------------------------------------ tube overlap


def tube_overlap_measure(lam: float, theta: float, exponent: int = 8, nt: int = 2001, nx: int = 8001,
                         t_extent: Optional[float] = None) -> float:
    """int int (chi_T chi_S)^2 dt dx for straight tubes crossing at the slab center.

    chi_T = (1 + lam^(2/3) |x - x_T(t)|)^(-exponent) with x_T = theta t / 2
    and x_S = -theta t / 2 (relative speed theta), t over one slab of length
    lam^(-1/3) (``t_extent`` overrides) and x over the whole line.
    """
    s = lam ** (2 / 3)
    T = lam ** (-1 / 3) if t_extent is None else t_extent
    t = np.linspace(-T / 2, T / 2, nt)
    # x range: both centers plus ample decay margin
    half = theta * T / 4 + 60.0 / s
    x = np.linspace(-half, half, nx)
    out = np.empty(nt)
    for i, ti in enumerate(t):
        a = (1 + s * np.abs(x - theta * ti / 2)) ** (-2 * exponent)
        b = (1 + s * np.abs(x + theta * ti / 2)) ** (-2 * exponent)
        out[i] = np.trapezoid(a * b, x)
    return float(np.trapezoid(out, t))


def overlap_constant(exponent: int) -> float:
    """lam^(4/3) theta times the overlap for infinitely long crossing tubes: (2/(2N-1))^2."""
    return (2.0 / (2 * exponent - 1)) ** 2


# ----------------------------------------------------------- exponent fits


@dataclass
class ScalingFit:
    slope: float
    intercept: float
    residual: float


def fit_scaling_exponent(samples: Sequence[tuple]) -> ScalingFit:
    """Least-squares line through (log lam, log value)."""
    lam = np.array([s[0] for s in samples], dtype=float)
    val = np.array([s[1] for s in samples], dtype=float)
    if len(samples) < 3:
        raise ValueError("need at least 3 samples")
    if np.any(val <= 0) or np.any(lam <= 0):
        raise ValueError("log-log fit needs positive lambda and values")
    if lam.max() / lam.min() < 4 - 1e-12:
        raise ValueError("lambda values must span at least a factor 4")
    X, Y = np.log(lam), np.log(val)
    slope, intercept = np.polyfit(X, Y, 1)
    res = float(np.abs(Y - (slope * X + intercept)).max())
    return ScalingFit(float(slope), float(intercept), res)


# ----------------------------------------------------------- exponent table


def critical_sogge(d: int) -> float:
    return 2 * (d + 1) / (d - 1)


def theorem_exponent(p: float) -> float:
    """d = 2 Lipschitz exponent: 1/2 - 2/p for p >= 8, (2/3)(1/2 - 1/p) for 2 <= p <= 8.

    Below p = 6 the second form is the earlier log-free bound.
    """
    if p >= 8:
        return 0.5 - 2.0 / p if np.isfinite(p) else 0.5
    if p >= 2:
        return (2.0 / 3.0) * (0.5 - 1.0 / p)
    raise ValueError("exponent defined for p >= 2")


def log_power(p: float) -> float:
    """Power of log lam allowed with the d = 2 exponent: 3/2 at p = 8, 0 at p = 6."""
    if p == 8:
        return 1.5
    if p == 6:
        return 0.0
    if 6 < p < 8:
        return 1.5  # not fixed between the endpoints; the larger value is used
    return 0.0


def sogge_exponent(p: float, d: int) -> float:
    """Smooth-metric cluster exponent."""
    pd = critical_sogge(d)
    if not np.isfinite(p):
        return (d - 1) / 2.0
    if p >= pd:
        return d * (0.5 - 1.0 / p) - 0.5
    return (d - 1) / 2.0 * (0.5 - 1.0 / p)


def lipschitz_conjecture_exponent(p: float, d: int) -> float:
    pc = 2 * (d + 2) / (d - 1)
    if not np.isfinite(p):
        return (d - 1) / 2.0
    if p >= pc:
        return d * (0.5 - 1.0 / p) - 0.5
    return 2 * (d - 1) / 3.0 * (0.5 - 1.0 / p)


def highdim_exponent(p: float, d: int) -> float:
    """d >= 3 Lipschitz result, valid for p > (6d - 2)/(d - 1)."""
    if d < 3:
        raise ValueError("d >= 3")
    if p <= (6 * d - 2) / (d - 1):
        raise ValueError("valid only for p > (6d - 2)/(d - 1)")
    if not np.isfinite(p):
        return (d - 1) / 2.0
    return d * (0.5 - 1.0 / p) - 0.5


@dataclass
class ExponentTable:
    rows: list = field(default_factory=list)  # (p, d, exponent, regime)

    def lookup(self, p, d, regime):
        for row in self.rows:
            if row[0] == p and row[1] == d and row[3] == regime:
                return row[2]
        raise KeyError((p, d, regime))


def exponent_table(p_values=(2, 4, 6, 7, 8, 10, 12, 16, np.inf), dims=(2, 3, 4)) -> ExponentTable:
    rows = []
    for p in p_values:
        if p >= 2:
            rows.append((p, 2, theorem_exponent(p), "theorem_d2"))
        for d in dims:
            rows.append((p, d, sogge_exponent(p, d), "sogge"))
            rows.append((p, d, lipschitz_conjecture_exponent(p, d), "lipschitz_conjecture"))
            if d >= 3 and p > (6 * d - 2) / (d - 1):
                rows.append((p, d, highdim_exponent(p, d), "theorem_highdim"))
    return ExponentTable(rows)


def short_time_bound(lam: float, m: int, a: float, k: int) -> float:
    """lam^(5/24) 2^(3m/8) a^(1/2) 2^(-k/4)."""
    return lam ** (5 / 24) * 2 ** (3 * m / 8) * a ** 0.5 * 2 ** (-k / 4)


# ----------------------------------------------------- weighted group norms


def weighted_group_norms(group_field_modes: np.ndarray, xi_l: float, lam: float, m: int, t: np.ndarray,
                         period: float = 1.0, orders=(0, 1, 2), p: float = 6) -> dict:
    """||(lam^(-2/3) 2^(-m) (D - xi_l))^n v_l||_{L^p} for n in ``orders``.

    ``group_field_modes`` holds centered Fourier coefficients of v_l on the
    time grid ``t`` (shape (nt, N)).
    """
    from .weyl import centered_modes, to_samples

    n_x = group_field_modes.shape[-1]
    xi = 2 * np.pi * centered_modes(n_x) / period
    w = lam ** (-2 / 3) * 2.0 ** (-m) * (xi - xi_l)
    return {n: lp_norm(to_samples(group_field_modes * w ** n), p, t=t, period=period) for n in orders}
