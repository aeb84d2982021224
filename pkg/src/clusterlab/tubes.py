"""Tube solutions, coefficient traces, dyadic partitions, packet buckets and bushes.

The unit time interval is cut into L = round(lam^(1/3)) slabs.  On slab l
every frame element phi_T is evolved under the mollified symbol to give the
tube solution v_T, whose inner product with the full solution u is the
coefficient trace c_T(t).  Each trace is partitioned into dyadic intervals
by the bisection test

    ||c||_{L^inf(J)}^2 >= 4 |J| ||c'||_{L^2(J)}^2    or    ||c||_{L^inf(J)} < eps,

and the resulting pieces are bucketed by amplitude a and length 2^-k.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ResolutionError
from .gabor import GaborFrame
from .metric_symbols import SymbolGrid
from .propagator import (
    BushProjector,
    Propagator,
    SymbolEvaluator,
    WaveField,
    default_dt,
)
from .weyl import BandedWeyl, to_samples

log = logging.getLogger(__name__)

LOCALIZATION_RADIUS = 3.0
LOCALIZATION_MASS = 0.99
CLAUSE_RTOL = 1e-12
MIN_SAMPLES = 8


# ------------------------------------------------------------------- slabs


@dataclass(frozen=True)
class SlabGrid:
    """L slabs of length 1/L, each with 2^r RK4 steps."""

    lam: float
    n_slabs: int
    steps: int

    @property
    def length(self) -> float:
        return 1.0 / self.n_slabs

    @property
    def dt(self) -> float:
        return self.length / self.steps

    def bounds(self, l: int):
        return l * self.length, (l + 1) * self.length

    def times(self, l: int) -> np.ndarray:
        lo = l * self.length
        return lo + self.dt * np.arange(self.steps + 1)

    @property
    def global_times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_slabs * self.steps + 1)


def slab_grid(lam: float, dt_max: Optional[float] = None, n_slabs: Optional[int] = None) -> SlabGrid:
    L = n_slabs or max(1, int(round(lam ** (1 / 3))))
    dt_max = default_dt(lam) if dt_max is None else dt_max
    steps = 2 ** max(3, math.ceil(math.log2(1.0 / (L * dt_max)) - 1e-12))
    return SlabGrid(lam, L, steps)


def periodic_distance(x, y, period=1.0):
    d = np.abs(np.asarray(x) - np.asarray(y)) % period
    return np.minimum(d, period - d)


# ------------------------------------------------------------ tube packets


@dataclass(eq=False)
class TubePacket:
    """One tube T = (l, m, n) on its slab."""

    index: tuple
    x0: float
    xi: float
    t: np.ndarray
    center_path: np.ndarray
    field: Optional[np.ndarray] = None  # (nt, N) centered coefficients
    localization: float = 1.0
    norm_drift: float = 0.0
    coeff_trace: Optional[np.ndarray] = None
    coeff_derivative: Optional[np.ndarray] = None
    partition: Optional["DyadicPartition"] = None

    @property
    def l(self):
        return self.index[0]

    @property
    def n(self):
        return self.index[2]


@dataclass(eq=False)
class TubeSet:
    frame: GaborFrame
    slab: int
    grid: SlabGrid
    t: np.ndarray
    packets: list
    radius: float
    flagged: list = field(default_factory=list)
    field_stride: int = 1

    @property
    def field_times(self) -> np.ndarray:
        return self.t[::self.field_stride]

    def __iter__(self):
        return iter(self.packets)

    def __len__(self):
        return len(self.packets)

    def __getitem__(self, i):
        return self.packets[i]

    def by_index(self) -> dict:
        return {p.index: p for p in self.packets}

    @property
    def min_localization(self) -> float:
        return min(p.localization for p in self.packets) if self.packets else 1.0


def group_velocity(a: SymbolGrid, t_ref: float, x0: np.ndarray, xi0: np.ndarray) -> np.ndarray:
    """d_xi a(t_ref, x0, xi0) by centered differences on the interpolated symbol."""
    ev = SymbolEvaluator(a)
    h = 1e-3 * np.pi / a.period
    out = np.empty(len(x0))
    for i, (x, xi) in enumerate(zip(x0, xi0)):
        v = ev(t_ref, x, [xi - h, xi + h])
        out[i] = (v[1] - v[0]) / (2 * h)
    return out


def tube_solutions(frame: GaborFrame, a_moll: SymbolGrid, slab: int, grid: Optional[SlabGrid] = None,
                   n_values: Optional[Sequence[int]] = None, store_fields: bool = True,
                   check_every: int = 8, radius_factor: float = LOCALIZATION_RADIUS,
                   batch: int = 256, store_stride: int = 1) -> TubeSet:
    """Evolve phi_T for T = (slab, m, n) across the slab under ``a_moll``.

    Localization (mass fraction within radius_factor * lam^(-2/3) of the
    bicharacteristic center) is measured every ``check_every`` steps and at
    the slab ends; packets below 99% are listed in ``flagged``.  Fields are
    kept at every ``store_stride``-th step (``TubeSet.field_times``).
    """
    lam = frame.lam
    grid = grid or slab_grid(lam)
    if not 0 <= slab < grid.n_slabs:
        raise ValueError(f"slab {slab} outside 0..{grid.n_slabs - 1}")
    t0, t1 = grid.bounds(slab)
    idx = frame.indices(n_values)
    x0 = np.array([frame.x_center(m) for m, _ in idx], dtype=float)
    xi0 = np.array([frame.xi_center(n) for _, n in idx], dtype=float)
    vel = group_velocity(a_moll, t0, x0, xi0)
    times = grid.times(slab)
    centers = np.mod(x0[:, None] - (times[None, :] - t0) * vel[:, None], frame.period)
    radius = radius_factor * lam ** (-2 / 3)
    prop = Propagator(a_moll, frame.n_x)
    x = frame.period * np.arange(frame.n_x) / frame.n_x
    if grid.steps % store_stride:
        raise ValueError("store_stride must divide the steps per slab")
    n_store = grid.steps // store_stride + 1
    fields = np.empty((len(idx), n_store, frame.n_x), dtype=complex) if store_fields else None
    loc = np.ones(len(idx))
    norms0 = np.empty(len(idx))
    drift = np.zeros(len(idx))

    for b0 in range(0, len(idx), batch):
        sl = slice(b0, min(b0 + batch, len(idx)))
        c0 = np.array([frame.element_modes(m, n) for m, n in idx[sl]])
        norms0[sl] = np.sqrt(frame.period * np.sum(np.abs(c0) ** 2, axis=1))
        def cb(i, t, c, sl=sl):
            if store_fields and i % store_stride == 0:
                fields[sl, i // store_stride] = c
            if i % check_every == 0 or i == grid.steps:
                vals = to_samples(c)
                mass = np.abs(vals) ** 2
                near = periodic_distance(x[None, :], centers[sl, i][:, None], frame.period) <= radius
                frac = np.sum(mass * near, axis=1) / np.sum(mass, axis=1)
                loc[sl] = np.minimum(loc[sl], frac)
            if i == grid.steps:
                nr = np.sqrt(frame.period * np.sum(np.abs(c) ** 2, axis=1))
                drift[sl] = np.abs(nr / norms0[sl] - 1)

        prop.run(c0, t0, t1, grid.dt, cb)

    packets = []
    flagged = []
    for i, (m, n) in enumerate(idx):
        p = TubePacket(
            index=(slab, m, n), x0=float(x0[i]), xi=float(xi0[i]), t=times, center_path=centers[i],
            field=fields[i] if store_fields else None, localization=float(loc[i]), norm_drift=float(drift[i]),
        )
        packets.append(p)
        if loc[i] < LOCALIZATION_MASS:
            flagged.append(p.index)
    if flagged:
        log.info("slab %d: %d of %d packets below %.0f%% localization", slab, len(flagged), len(idx), 100 * LOCALIZATION_MASS)
    return TubeSet(frame, slab, grid, times, packets, radius, flagged, store_stride)


# -------------------------------------------------------- coefficient traces


@dataclass
class TraceReport:
    """Per-slab summary of the coefficient traces."""

    sum_sup_sq: float
    sum_deriv_l2: float
    bound_constant: float
    fd_relative_error: float


def trapezoid_l2sq(v: np.ndarray, dt: float, axis=-1) -> np.ndarray:
    w = np.abs(v) ** 2
    return dt * (np.sum(w, axis=axis) - 0.5 * (np.take(w, 0, axis=axis) + np.take(w, -1, axis=axis)))


def coefficient_traces(u: WaveField, tubes: TubeSet, a_lam: SymbolGrid, a_moll: SymbolGrid) -> TraceReport:
    """Attach c_T(t) = <v_T(t), u(t)> and c_T'(t) = i <v_T, (a_lam^w - a_moll^w) u> to every tube.

    ``u`` must be recorded on the tube time grid (same dt, aligned start).
    """
    t = tubes.t
    pos = np.searchsorted(u.t, t - 1e-12)
    if np.any(pos >= len(u.t)) or not np.allclose(u.t[np.minimum(pos, len(u.t) - 1)], t, atol=1e-12):
        raise ValueError("u is not recorded on the tube time grid")
    U = u.spectrum[pos]  # (nt, N)
    if any(p.field is None for p in tubes) or tubes.field_stride != 1:
        raise ValueError("tube fields were not stored at every step")
    V = np.stack([p.field for p in tubes])  # (B, nt, N)
    P = u.period
    C = P * np.einsum("btk,tk->bt", np.conj(V), U)
    opl = BandedWeyl(a_lam, u.n)
    opm = BandedWeyl(a_moll, u.n)
    DU = np.array([opl(ti, U[i]) - opm(ti, U[i]) for i, ti in enumerate(t)])
    Cp = 1j * P * np.einsum("btk,tk->bt", np.conj(V), DU)
    for i, p in enumerate(tubes):
        p.coeff_trace = C[i]
        p.coeff_derivative = Cp[i]
    dt = t[1] - t[0]
    fd = np.gradient(C, dt, axis=1, edge_order=2)
    num = np.sqrt(np.sum(trapezoid_l2sq(fd - Cp, dt)))
    den = np.sqrt(np.sum(trapezoid_l2sq(Cp, dt)))
    sup = float(np.sum(np.max(np.abs(C), axis=1) ** 2))
    dl2 = float(np.sum(trapezoid_l2sq(Cp, dt)))
    L = t[-1] - t[0]
    return TraceReport(sup, dl2, sup + L * dl2, float(num / den) if den > 0 else 0.0)


# ------------------------------------------------------------ dyadic lemma


@dataclass(frozen=True)
class DyadicInterval:
    lo: float
    hi: float
    i0: int
    i1: int
    level: int
    sup: float
    deriv_l2sq: float
    clause: int  # 1: derivative test, 2: eps-small

    @property
    def length(self) -> float:
        return self.hi - self.lo


def clause_holds(sup: float, length: float, deriv_l2sq: float, eps: float) -> int:
    """1 or 2 when the selection test passes on an interval, else 0."""
    if sup * sup >= 4.0 * length * deriv_l2sq * (1 - CLAUSE_RTOL):
        return 1
    if sup < eps:
        return 2
    return 0


@dataclass
class DyadicPartition:
    intervals: list
    epsilon: float
    B: float
    lo: float
    hi: float

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def tiles(self) -> bool:
        iv = sorted(self.intervals, key=lambda d: d.lo)
        if not iv or iv[0].i0 != 0 or abs(iv[0].lo - self.lo) > 1e-15 * max(1, abs(self.lo)):
            return False
        return all(a.i1 == b.i0 for a, b in zip(iv, iv[1:])) and abs(iv[-1].hi - self.hi) <= 1e-12

    def all_selected(self) -> bool:
        return all(clause_holds(d.sup, d.length, d.deriv_l2sq, self.epsilon) for d in self.intervals)

    @property
    def sum_lhs(self) -> float:
        return float(sum(d.sup ** 2 / d.length for d in self.intervals))

    @property
    def sum_rhs(self) -> float:
        return 16.0 * self.B / self.length

    def sum_bound_holds(self) -> bool:
        return self.sum_lhs <= self.sum_rhs * (1 + CLAUSE_RTOL)


def dyadic_partition(c: np.ndarray, cprime: np.ndarray, epsilon: float, interval=(0.0, 1.0),
                     min_samples: int = MIN_SAMPLES) -> DyadicPartition:
    """Bisect ``interval`` until every piece passes the selection test.

    ``c`` and ``cprime`` are samples at 2^r + 1 equally spaced points
    including both endpoints.  Sup norms are taken over the samples of a
    closed sub-interval and L^2 norms use trapezoid weights, which are
    additive under bisection.
    """
    c = np.asarray(c)
    cp = np.asarray(cprime)
    S = len(c) - 1
    if S < 1 or S & (S - 1) or len(cp) != len(c):
        raise ValueError("need 2^r + 1 samples of c and c'")
    lo, hi = map(float, interval)
    h = (hi - lo) / S
    absc = np.abs(c)
    w = np.abs(cp) ** 2
    cum = np.concatenate([[0.0], np.cumsum(w)])

    def l2(i0, i1):
        return h * (cum[i1 + 1] - cum[i0] - 0.5 * (w[i0] + w[i1]))

    B = float(absc.max() ** 2 + (hi - lo) * l2(0, S))
    out = []
    stack = [(0, S, 0)]
    while stack:
        i0, i1, lev = stack.pop()
        sup = float(absc[i0:i1 + 1].max())
        d2 = float(l2(i0, i1))
        a_, b_ = lo + i0 * h, lo + i1 * h
        cl = clause_holds(sup, b_ - a_, d2, epsilon)
        if cl:
            out.append(DyadicInterval(a_, b_, i0, i1, lev, sup, d2, cl))
            continue
        if (i1 - i0) // 2 < min_samples:
            needed = epsilon ** 2 * (hi - lo) / (4 * B) if B > 0 else hi - lo
            raise ResolutionError(
                f"interval [{a_:.4g}, {b_:.4g}] still fails with {i1 - i0} samples; "
                f"worst-case terminal width {needed:.3g} needs {int(np.ceil(min_samples * (hi - lo) / needed))} samples"
            )
        mid = (i0 + i1) // 2
        stack.append((mid, i1, lev + 1))
        stack.append((i0, mid, lev + 1))
    out.sort(key=lambda d: d.lo)
    return DyadicPartition(out, float(epsilon), B, lo, hi)


# --------------------------------------------------------------- buckets


def dyadic_amplitude(sup: float) -> float:
    """Dyadic a with sup in (a, 2a]."""
    return 2.0 ** (math.ceil(math.log2(sup)) - 1)


@dataclass(frozen=True)
class PacketEntry:
    tube: tuple  # (l, m, n)
    j: int
    lo: float
    hi: float
    sup: float
    clause: int
    a: float
    k: int
    l2sq: float
    i0: int
    i1: int


@dataclass(eq=False)
class PacketAtlas:
    lam: float
    epsilon: float
    slab_length: float
    buckets: dict
    residual: list
    lower_bound_violations: int
    tubes: dict
    frame: Optional[GaborFrame] = None

    @property
    def entries(self):
        return [e for v in self.buckets.values() for e in v]

    def bucket_energy(self, key) -> float:
        return float(sum(e.l2sq for e in self.buckets.get(key, [])))

    def energy_constant(self) -> float:
        """Smallest C with bucket energy <= C 2^(-2k) for every bucket."""
        vals = [self.bucket_energy(key) * 4.0 ** key[1] for key in self.buckets]
        return max(vals) if vals else 0.0

    def rows(self):
        for (a, k), es in sorted(self.buckets.items()):
            for e in sorted(es, key=lambda e: (e.tube, e.j)):
                l, m, n = e.tube
                yield dict(a=a, k=k, l=l, m=m, n=n, j=e.j, interval_lo=e.lo, interval_hi=e.hi, sup_c=e.sup, clause=e.clause)


def partition_tubes(tubes: TubeSet, epsilon: Optional[float] = None) -> None:
    """Run the dyadic lemma on every tube trace with eps = lam^(-1/3) by default."""
    eps = tubes.frame.lam ** (-1 / 3) if epsilon is None else epsilon
    for p in tubes:
        p.partition = dyadic_partition(p.coeff_trace, p.coeff_derivative, eps, (p.t[0], p.t[-1]))


def classify_packets(tube_sets: Sequence[TubeSet], lam: float, epsilon: Optional[float] = None) -> PacketAtlas:
    """Bucket every partition interval with sup >= eps by (a, k)."""
    eps = lam ** (-1 / 3) if epsilon is None else epsilon
    buckets: dict = {}
    residual = []
    violations = 0
    tubes = {}
    slab_len = None
    frame = tube_sets[0].frame if tube_sets else None
    for ts in tube_sets:
        slab_len = ts.grid.length
        for p in ts:
            if p.partition is None:
                raise ValueError("partition the tubes first")
            tubes[p.index] = p
            dt = p.t[1] - p.t[0]
            for j, d in enumerate(p.partition.intervals):
                seg = p.coeff_trace[d.i0:d.i1 + 1]
                l2 = float(trapezoid_l2sq(seg, dt)) if d.i1 > d.i0 else 0.0
                if d.sup < eps:
                    residual.append((p.index, j))
                    continue
                a = dyadic_amplitude(d.sup)
                k = int(round(math.log2(slab_len / d.length)))
                if d.clause == 1 and np.abs(seg).min() < a / 4:
                    violations += 1
                e = PacketEntry(p.index, j, d.lo, d.hi, d.sup, d.clause, a, k, l2, d.i0, d.i1)
                buckets.setdefault((a, k), []).append(e)
    return PacketAtlas(lam, eps, slab_len or 1.0, buckets, residual, violations, tubes, frame)


# --------------------------------------------------------------- densities


@dataclass(eq=False)
class DensityField:
    t: np.ndarray
    x: np.ndarray
    chi: dict  # (a, k) -> (nt, nx)
    scale: float
    exponent: int

    def mask(self, key, m: int) -> np.ndarray:
        c = self.chi.get(key)
        if c is None:
            return np.zeros((len(self.t), len(self.x)), dtype=bool)
        return (c > 2.0 ** (m - 1)) & (c <= 2.0 ** m)

    def levels(self, key):
        c = self.chi.get(key)
        if c is None or c.max() <= 0.5:
            return []
        return list(range(0, int(math.ceil(math.log2(c.max()))) + 1))

    def constraint_report(self):
        """(a, k, m, 2^m a^2) for every nonempty level set."""
        rows = []
        for key in sorted(self.chi):
            for m in self.levels(key):
                if self.mask(key, m).any():
                    rows.append((key[0], key[1], m, 2.0 ** m * key[0] ** 2))
        return rows


def chi_profile(x, center, scale, period=1.0, exponent=2):
    return (1.0 + scale * periodic_distance(x, center, period)) ** (-exponent)


def density_fields(atlas: PacketAtlas, tube_sets: Sequence[TubeSet], t_stride: int = 1, exponent: int = 2) -> DensityField:
    """chi_{a,k}(t, x) = sum over bucket entries of 1_{I_{T,j}}(t) (1 + lam^(2/3)|x - x_T(t)|)^(-exponent).

    Times are the union of the slab grids (half-open slabs, the final time
    included), thinned by ``t_stride``.
    """
    frame = tube_sets[0].frame
    grid = tube_sets[0].grid
    x = frame.period * np.arange(frame.n_x) / frame.n_x
    tg = grid.global_times[::t_stride]
    chi = {}
    for key, entries in atlas.buckets.items():
        acc = np.zeros((len(tg), len(x)))
        for e in entries:
            p = atlas.tubes[e.tube]
            last = e.hi >= 1.0 - 1e-12
            sel = (tg >= e.lo - 1e-12) & ((tg < e.hi - 1e-12) | (last & (tg <= e.hi + 1e-12)))
            if not sel.any():
                continue
            ti = np.nonzero(sel)[0]
            local = np.rint((tg[ti] - p.t[0]) / (p.t[1] - p.t[0])).astype(int)
            centers = p.center_path[local]
            acc[ti] += chi_profile(x[None, :], centers[:, None], frame.scale, frame.period, exponent)
        chi[key] = acc
    return DensityField(tg, x, chi, frame.scale, exponent)


def interval_grid(lam: float, m: int):
    """Partition of [0, 1] into intervals of length 2^-m lam^(-1/3) (rounded to slabs)."""
    L = max(1, int(round(lam ** (1 / 3))))
    n = L * 2 ** m
    return np.linspace(0.0, 1.0, n + 1)


def bush_interval_count(density: DensityField, key, m: int, lam: float) -> int:
    """Number of intervals of the 2^-m lam^(-1/3) grid whose slab meets A_{a,k,m}."""
    edges = interval_grid(lam, m)
    rows = density.mask(key, m).any(axis=1)
    if not rows.any():
        return 0
    if len(density.t) < len(edges) - 1:
        raise ResolutionError("density time grid coarser than the interval grid")
    hit = np.clip(np.searchsorted(edges, density.t[rows], side="right") - 1, 0, len(edges) - 2)
    return int(len(np.unique(hit)))


def bush_count_bound(lam: float, a: float, m: int) -> float:
    """lam^(1/3) 2^(-3m) a^(-4) <log(2^m a^2)>^3."""
    r = 2.0 ** m * a * a
    return lam ** (1 / 3) * 2.0 ** (-3 * m) * a ** (-4) * (1 + math.log(r) ** 2) ** 1.5


# ------------------------------------------------------------------ bushes


def extract_bushes(atlas: PacketAtlas, key, m: int, t: float, density: Optional[DensityField] = None,
                   min_fraction: float = 1 / 8) -> list:
    """Bushes of the (a, k) bucket at time t.

    N(y) counts tubes of the bucket active at t whose center lies within
    lam^(-2/3) of y.  The maximizing y is taken, up to 2^m members with
    pairwise-distinct xi_T are chosen greedily (larger |c_T(t)| first, then
    smaller |n|), and the bush is kept when it has at least 2^m/8 members.
    Members are removed and the search repeats.
    """
    a, _ = key
    if density is not None:
        ti = int(np.argmin(np.abs(density.t - t)))
        if not density.mask(key, m)[ti].any():
            log.info("A_{a,k,m} empty at t=%.4g; no bushes", t)
            return []
    cands = []
    for e in atlas.buckets.get(key, []):
        p = atlas.tubes[e.tube]
        last = e.hi >= 1.0 - 1e-12
        if not (e.lo - 1e-12 <= t < e.hi - 1e-12 or (last and abs(t - e.hi) <= 1e-12)):
            continue
        i = int(np.rint((t - p.t[0]) / (p.t[1] - p.t[0])))
        if p.field is None:
            raise ValueError("tube fields were not stored")
        cands.append((p, i))
    if not cands:
        return []
    period = atlas.frame.period
    n_x = atlas.frame.n_x
    r = 1.0 / atlas.frame.scale
    y = period * np.arange(n_x) / n_x
    bushes = []
    pool = list(cands)
    need = 2 ** m
    while pool:
        centers = np.array([p.center_path[i] for p, i in pool])
        counts = (periodic_distance(y[:, None], centers[None, :], period) <= r).sum(axis=1)
        iy = int(np.argmax(counts))
        if counts[iy] < need * min_fraction:
            break
        members = [(p, i) for (p, i), cx in zip(pool, centers) if periodic_distance(cx, y[iy], period) <= r]
        members.sort(key=lambda pi: (-abs(pi[0].coeff_trace[pi[1]]), abs(pi[0].n), pi[0].index))
        chosen, seen = [], set()
        for p, i in members:
            if p.n in seen:
                continue
            seen.add(p.n)
            chosen.append((p, i))
            if len(chosen) == need:
                break
        member_ids = {id(p) for p, _ in members}
        pool = [(p, i) for p, i in pool if id(p) not in member_ids]
        if len(chosen) < need * min_fraction:
            continue
        w = np.zeros(n_x, dtype=complex)
        for p, i in chosen:
            w += a / np.conj(p.coeff_trace[i]) * p.field[i]
        bushes.append(BushProjector(
            center=(float(t), float(y[iy])), packets=[p.index for p, _ in chosen],
            xis=np.array([p.xi for p, _ in chosen]), w=w, m=m, complete=len(chosen) == need, period=period,
        ))
    return bushes
