"""Spectral clusters of -div(gamma grad) = lam^2 rho on the 2-torus [0, 2 pi)^2.

Two discretizations are offered:

* ``"fd"``: conservative second-order finite differences in flux form.  With
  forward differences D1, D2, face averages of the transverse centered
  differences E1, E2 and diagonal face coefficients,

      K = D1' G11 D1 + D2' G22 D2 + (D1' G12 E2 + E2' G12 D1)/2 + (D2' G12 E1 + E1' G12 D2)/2,
      M = diag(rho).

  K is symmetric, annihilates constants, and for the flat metric reduces to
  the 5-point Laplacian.
* ``"spectral"``: exact plane-wave eigenpairs for constant coefficients,
  used where integer-lattice exactness matters.

Norms use the probability measure rho dx / int rho dx, so ||u||_p / ||u||_2
is at least 1 for p >= 2 and equals 1 at p = 2.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh, splu, LinearOperator

from .metric_symbols import MetricField, make_metric

log = logging.getLogger(__name__)

TWO_PI = 2 * np.pi
WINDOW_TOL = 1e-8
SLICE_TARGET = 48


@dataclass(eq=False)
class ClusterSystem:
    K: sp.csr_matrix
    M: sp.dia_matrix
    n: int
    rho: np.ndarray  # (n, n) node density
    metric_name: str
    scheme: str = "fd"
    constant_metric: Optional[tuple] = None  # (g11, g12, g22, rho) for the spectral scheme

    @property
    def h(self) -> float:
        return TWO_PI / self.n

    @property
    def trust_limit(self) -> float:
        return self.n / 4.0


def _shift(n, axis, k):
    """Sparse periodic shift on the flattened (n, n) grid: (S u)[i] = u[i + k e_axis]."""
    idx = np.arange(n * n).reshape(n, n)
    tgt = np.roll(idx, -k, axis=axis).ravel()
    return sp.csr_matrix((np.ones(n * n), (np.arange(n * n), tgt)), shape=(n * n, n * n))


def _face_samples(metric: MetricField, n: int):
    """Coefficients at x1-faces (i+1/2, j), x2-faces (i, j+1/2) and nodes."""
    shape = metric.shape
    g = metric.gamma
    r = metric.rho
    if shape == (2 * n, 2 * n):
        node = (slice(0, None, 2), slice(0, None, 2))
        f1 = (slice(1, None, 2), slice(0, None, 2))
        f2 = (slice(0, None, 2), slice(1, None, 2))
        return g[f1], g[f2], r[node]
    if shape == (n, n):
        g1 = 0.5 * (g + np.roll(g, -1, axis=0))
        g2 = 0.5 * (g + np.roll(g, -1, axis=1))
        return g1, g2, r
    raise ValueError(f"metric grid {shape} must be (n, n) or (2n, 2n) for n = {n}")


def assemble_operator(metric: MetricField, n: int) -> ClusterSystem:
    """Finite-difference pair (K, M) on an n x n grid of the 2 pi torus."""
    if n > 128:
        raise ValueError("desk-scale grids only (n <= 128)")
    if abs(metric.period - TWO_PI) > 1e-12:
        raise ValueError("cluster metrics live on the 2 pi torus")
    g1, g2, rho = _face_samples(metric, n)
    if np.any(rho <= 0):
        raise ValueError("rho must be positive")
    h = TWO_PI / n
    I = sp.identity(n * n, format="csr")
    D1 = (_shift(n, 0, 1) - I) / h
    D2 = (_shift(n, 1, 1) - I) / h
    # centered transverse differences averaged onto the faces
    C2 = (_shift(n, 1, 1) - _shift(n, 1, -1)) / (2 * h)
    C1 = (_shift(n, 0, 1) - _shift(n, 0, -1)) / (2 * h)
    E2 = 0.5 * (C2 + _shift(n, 0, 1) @ C2)  # at (i+1/2, j)
    E1 = 0.5 * (C1 + _shift(n, 1, 1) @ C1)  # at (i, j+1/2)
    G11 = sp.diags(g1[..., 0, 0].ravel())
    G12a = sp.diags(g1[..., 0, 1].ravel())
    G22 = sp.diags(g2[..., 1, 1].ravel())
    G12b = sp.diags(g2[..., 0, 1].ravel())
    K = D1.T @ G11 @ D1 + D2.T @ G22 @ D2
    K = K + 0.5 * (D1.T @ G12a @ E2 + E2.T @ G12a @ D1) + 0.5 * (D2.T @ G12b @ E1 + E1.T @ G12b @ D2)
    K = sp.csr_matrix(0.5 * (K + K.T))
    M = sp.diags(rho.ravel())
    const = None
    if np.ptp(metric.gamma[..., 0, 0]) == 0 and np.ptp(metric.gamma[..., 0, 1]) == 0 and np.ptp(metric.gamma[..., 1, 1]) == 0 and np.ptp(metric.rho) == 0:
        gg = metric.gamma[0, 0]
        const = (float(gg[0, 0]), float(gg[0, 1]), float(gg[1, 1]), float(metric.rho[0, 0]))
    return ClusterSystem(K, M, n, rho, metric.name, "fd", const)


def spectral_system(metric: MetricField, n: int) -> ClusterSystem:
    """Exact plane-wave scheme for constant-coefficient metrics."""
    sysm = assemble_operator(metric, n) if metric.shape in ((n, n), (2 * n, 2 * n)) else None
    g = metric.gamma[0, 0]
    if not (np.allclose(metric.gamma, g) and np.allclose(metric.rho, metric.rho.flat[0])):
        raise ValueError("spectral scheme needs constant coefficients")
    const = (float(g[0, 0]), float(g[0, 1]), float(g[1, 1]), float(metric.rho.flat[0]))
    rho = np.full((n, n), const[3])
    K = sysm.K if sysm is not None else None
    return ClusterSystem(K, sp.diags(rho.ravel()), n, rho, metric.name, "spectral", const)


def cluster_metric(name: str, n: int, **params) -> MetricField:
    """Zoo metric on the 2 pi torus sampled at nodes and midpoints (2n x 2n)."""
    return make_metric(name, 2 * n, 2 * n, period=TWO_PI, **params)


@dataclass(eq=False)
class SpectralCluster:
    lam: float
    window: tuple
    eigenvalues: np.ndarray  # lambda_j
    modes: np.ndarray  # (n*n, D), orthonormal for the measure rho dx / int rho
    weights: np.ndarray  # (n*n,) probability weights
    n: int
    metric_name: str = ""
    coefficients: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    @property
    def empty(self) -> bool:
        return self.dim == 0

    def field(self, c: np.ndarray) -> np.ndarray:
        return self.modes @ c

    def gram(self) -> np.ndarray:
        return self.modes.T @ (self.weights[:, None] * self.modes)


def _normalize_modes(Phi, weights):
    G = Phi.T @ (weights[:, None] * Phi)
    L = np.linalg.cholesky(0.5 * (G + G.T))
    return np.linalg.solve(L, Phi.T).T


def _plane_wave_cluster(system: ClusterSystem, lam: float, width: float):
    g11, g12, g22, rho = system.constant_metric
    kmax = int(math.ceil((lam + width + 1) * 2 / math.sqrt(min(g11, g22)))) + 1
    if kmax >= system.n // 2:
        raise ValueError("grid cannot represent the requested plane waves")
    lo, hi = lam, lam + width
    pts = []
    for k1, k2 in itertools.product(range(-kmax, kmax + 1), repeat=2):
        e = math.sqrt((g11 * k1 * k1 + 2 * g12 * k1 * k2 + g22 * k2 * k2) / rho)
        if lo - WINDOW_TOL <= e <= hi + WINDOW_TOL:
            pts.append((e, k1, k2))
    n = system.n
    x = TWO_PI * np.arange(n) / n
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    cols, vals = [], []
    seen = set()
    for e, k1, k2 in sorted(pts):
        key = (k1, k2) if (k1, k2) > (-k1, -k2) else (-k1, -k2)
        if key in seen:
            continue
        seen.add(key)
        ph = key[0] * X1 + key[1] * X2
        if key == (0, 0):
            cols.append(np.ones(n * n)); vals.append(e)
            continue
        cols.append(math.sqrt(2) * np.cos(ph).ravel()); vals.append(e)
        cols.append(math.sqrt(2) * np.sin(ph).ravel()); vals.append(e)
    Phi = np.array(cols).T if cols else np.zeros((n * n, 0))
    return np.array(vals), Phi


def _slice_eigs(system: ClusterSystem, lo2: float, hi2: float, est: float):
    """Eigenpairs of (K, M) around [lo2, hi2], with k grown until the slice is covered."""
    sigma = 0.5 * (lo2 + hi2)
    lu = splu((system.K - sigma * system.M).tocsc())
    OPinv = LinearOperator(system.K.shape, matvec=lu.solve, dtype=float)
    k = int(2 * est) + 16
    size = system.K.shape[0]
    # a fixed start vector pins the basis chosen inside degenerate eigenspaces
    v0 = np.random.default_rng(0).standard_normal(size)
    while True:
        k = min(k, size - 2)
        ev, vec = eigsh(system.K, k=k, M=system.M, sigma=sigma, which="LM", OPinv=OPinv, v0=v0)
        if (ev.min() < lo2 and ev.max() > hi2) or k >= size - 2:
            return ev, vec
        k *= 2


def solve_cluster(system: ClusterSystem, lam: float, width: float = 1.0, enforce_trust: bool = True) -> SpectralCluster:
    """All eigenpairs with lambda_j in [lam, lam + width] (inclusive to 1e-8)."""
    n = system.n
    w = system.rho.ravel() / system.rho.sum()
    if enforce_trust and lam > system.trust_limit + 1e-12 and system.scheme == "fd":
        raise ValueError(f"lam = {lam} beyond the grid-trust limit n/4 = {system.trust_limit}")
    if system.scheme == "spectral":
        vals, Phi = _plane_wave_cluster(system, lam, width)
    else:
        lo2, hi2 = lam ** 2, (lam + width) ** 2
        vol = TWO_PI ** 2
        rho_mean = float(system.rho.mean())
        est = vol * rho_mean / (4 * np.pi) * (hi2 - lo2)
        if hi2 > float(system.K.diagonal().max()) * 8 / system.M.diagonal().min():
            return SpectralCluster(lam, (lam, lam + width), np.zeros(0), np.zeros((n * n, 0)), w, n, system.metric_name)
        # slice the window so each shift-invert solve stays small
        n_slices = max(1, int(math.ceil(est / SLICE_TARGET)))
        edges = np.linspace(lo2 - 2 * lam * WINDOW_TOL, hi2 + 2 * (lam + width) * WINDOW_TOL, n_slices + 1)
        evs, vecs = [], []
        for s_lo, s_hi in zip(edges[:-1], edges[1:]):
            ev, vec = _slice_eigs(system, s_lo, s_hi, est / n_slices)
            last = s_hi == edges[-1]
            keep = (ev >= s_lo) & ((ev <= s_hi) if last else (ev < s_hi))
            evs.append(ev[keep]); vecs.append(vec[:, keep])
        ev, vec = np.concatenate(evs), np.concatenate(vecs, axis=1)
        lam_j = np.sqrt(np.clip(ev, 0, None))
        sel = (lam_j >= lam - WINDOW_TOL) & (lam_j <= lam + width + WINDOW_TOL)
        order = np.argsort(lam_j[sel])
        vals, Phi = lam_j[sel][order], vec[:, sel][:, order]
    if Phi.shape[1]:
        Phi = _normalize_modes(Phi, w)
    return SpectralCluster(lam, (lam, lam + width), vals, Phi, w, n, system.metric_name)


def rayleigh_defect(system: ClusterSystem, cluster: SpectralCluster) -> float:
    """max_j |phi' K phi / phi' M phi - lambda_j^2| / lambda_j^2."""
    if cluster.empty or system.K is None:
        return 0.0
    P = cluster.modes
    num = np.einsum("ij,ij->j", P, system.K @ P)
    den = np.einsum("ij,ij->j", P, system.M @ P)
    return float(np.max(np.abs(num / den - cluster.eigenvalues ** 2) / cluster.eigenvalues ** 2))


def cluster_norm(u: np.ndarray, p: float, weights: np.ndarray) -> float:
    a = np.abs(u)
    if np.isinf(p):
        return float(a.max())
    return float(np.sum(weights * a ** p) ** (1 / p))


def lp_ratio(cluster: SpectralCluster, c: np.ndarray, p: float) -> float:
    u = cluster.field(c)
    return cluster_norm(u, p, cluster.weights) / cluster_norm(u, 2, cluster.weights)


def sup_seek(cluster: SpectralCluster, p: float, rng: np.random.Generator, iterations: int = 50,
             restarts: int = 4) -> tuple:
    """Maximize ||u||_p over unit coefficient vectors.

    p = inf is solved exactly: the maximum of |u(x)| over unit c is
    ||Phi(x, :)||, attained at c = Phi(x, :) / ||Phi(x, :)||.  Finite p uses
    the fixed-point ascent c <- normalize(Phi' W |u|^(p-2) u), started from
    the focusing vector at the best point and from random vectors.
    """
    Phi = cluster.modes
    D = Phi.shape[1]
    if D == 0:
        return 0.0, np.zeros(0)
    rownorm = np.sqrt(np.sum(Phi ** 2, axis=1))
    i0 = int(np.argmax(rownorm))
    focus = Phi[i0] / rownorm[i0]
    if np.isinf(p):
        return float(rownorm[i0]), focus
    W = cluster.weights
    best, best_c = -1.0, None
    starts = [focus] + [rng.standard_normal(D) for _ in range(restarts - 1)]
    for c in starts:
        c = c / np.linalg.norm(c)
        for _ in range(iterations):
            u = Phi @ c
            g = Phi.T @ (W * np.abs(u) ** (p - 2) * u)
            nrm = np.linalg.norm(g)
            if nrm == 0:
                break
            c = g / nrm
        r = lp_ratio(cluster, c, p)
        if r > best:
            best, best_c = r, c
    return best, best_c


def cluster_ratio_sweep(metric_name: str, lambdas: Sequence[float], p_list: Sequence[float], draws: int = 4,
                        n: int = 128, seed=None, params: Optional[dict] = None, scheme: str = "fd",
                        iterations: int = 50, restarts: int = 4) -> list:
    """Rows (metric, n, lambda, dim_cluster, p, draw_type, ratio) for random and sup-seeking draws."""
    from .rng import stream

    metric = cluster_metric(metric_name, n, **(params or {}))
    system = assemble_operator(metric, n) if scheme == "fd" else spectral_system(metric, n)
    rows = []
    for lam in lambdas:
        cl = solve_cluster(system, lam)
        for p in p_list:
            rng = stream(seed, "cluster", metric_name, int(lam * 1000), str(p))
            for d in range(draws):
                if cl.empty:
                    r = 0.0
                else:
                    c = rng.standard_normal(cl.dim)
                    c /= np.linalg.norm(c)
                    r = lp_ratio(cl, c, p)
                rows.append(dict(metric=metric_name, n=n, **{"lambda": lam}, dim_cluster=cl.dim, p=p, draw_type=f"random{d}", ratio=r))
            r, _ = sup_seek(cl, p, rng, iterations, restarts) if not cl.empty else (0.0, None)
            rows.append(dict(metric=metric_name, n=n, **{"lambda": lam}, dim_cluster=cl.dim, p=p, draw_type="sup_seek", ratio=r))
    return rows


def lattice_annulus(lam: float, width: float = 1.0) -> list:
    """Integer vectors k with |k| in [lam, lam + width] (flat 2 pi torus)."""
    r = int(math.ceil(lam + width)) + 1
    return sorted((k1 * k1 + k2 * k2, k1, k2) for k1 in range(-r, r + 1) for k2 in range(-r, r + 1)
                  if lam - WINDOW_TOL <= math.hypot(k1, k2) <= lam + width + WINDOW_TOL)


def discrete_flat_eigenvalues(n: int) -> np.ndarray:
    """lambda for the 5-point stencil on the 2 pi torus: (n/pi) sqrt(sin^2(pi k1/n) + sin^2(pi k2/n))."""
    k = np.arange(n)
    s = np.sin(np.pi * k / n) ** 2
    return np.sort((n / np.pi * np.sqrt(s[:, None] + s[None, :])).ravel())
