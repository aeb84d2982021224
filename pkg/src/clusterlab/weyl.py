"""Discrete Weyl quantization on the periodic cell.

Fields are trigonometric polynomials f(x) = sum_k f_k exp(i xi_k x) with
xi_k = 2 pi k / period.  For a symbol with x-Fourier coefficients
a_q(t, xi) the Weyl rule reads, in the Fourier basis,

    (a^w f)_k' = sum_k a_{k'-k}(t, (xi_k + xi_k') / 2) f_k,

so only the half-integer lattice xi = (pi/period)(k + k') is ever needed.
Real symbols give Hermitian matrices, xi-independent symbols give exact
multiplication and x-independent symbols give exact Fourier multipliers.
The difference index k' - k is taken modulo N, matching circular
convolution on the sample grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .metric_symbols import SymbolGrid


def centered_modes(n: int) -> np.ndarray:
    """Mode numbers -n/2 .. n/2 - 1."""
    return np.arange(-(n // 2), n - n // 2)


def to_modes(f: np.ndarray) -> np.ndarray:
    """Samples on the grid (last axis) -> centered Fourier coefficients."""
    n = f.shape[-1]
    return np.fft.fftshift(np.fft.fft(f, axis=-1), axes=-1) / n


def to_samples(c: np.ndarray) -> np.ndarray:
    n = c.shape[-1]
    return np.fft.ifft(np.fft.ifftshift(c, axes=-1), axis=-1) * n


class SymbolSpectrum:
    """x-Fourier coefficients of a symbol, interpolated trigonometrically in t.

    ``coeff(t)`` returns an array of shape (2Q+1, nxi) holding a_q(t, xi_j)
    for q = -Q..Q, where Q is set by the symbol's bandwidth.
    """

    def __init__(self, a: SymbolGrid):
        self.symbol = a
        self.j = a.lattice_index
        nt, nx, _ = a.shape
        P = a.period
        qmax_grid = (nx - 1) // 2
        pmax_grid = (nt - 1) // 2
        if a.bandwidth is None:
            qmax, pmax = qmax_grid, pmax_grid
        else:
            qmax = min(qmax_grid, int(np.floor(a.bandwidth * P / (2 * np.pi) + 1e-9)))
            pmax = min(pmax_grid, qmax)
        self.qmax, self.pmax = qmax, pmax
        F = np.fft.fft2(a.values, axes=(0, 1)) / (nt * nx)
        p_idx = np.arange(-pmax, pmax + 1) % nt
        q_idx = np.arange(-qmax, qmax + 1) % nx
        self._tx = F[np.ix_(p_idx, q_idx)]  # (2P+1, 2Q+1, nxi)
        self._p = np.arange(-pmax, pmax + 1)
        self.t_independent = pmax == 0 or np.allclose(self._tx[self._p != 0], 0, atol=1e-15 * a.lam)

    def coeff(self, t: float) -> np.ndarray:
        if self.pmax == 0:
            return self._tx[0]
        ph = np.exp(2j * np.pi * self._p * t / self.symbol.period)
        return np.tensordot(ph, self._tx, axes=(0, 0))

    def lookup(self, coeff: np.ndarray, q, j) -> np.ndarray:
        """a_q(xi_j); beyond the stored xi range the extension value applies."""
        a = self.symbol
        q, j = np.broadcast_arrays(np.asarray(q), np.asarray(j))
        idx = j - self.j[0]
        inside = (idx >= 0) & (idx < len(self.j))
        qi = q + self.qmax
        ok = inside & (qi >= 0) & (qi <= 2 * self.qmax)
        out = np.zeros(q.shape, dtype=complex)
        out[ok] = coeff[qi[ok], idx[ok]]
        if np.any(~inside):
            if not a.extended:
                raise ValueError("field band exceeds the xi range of a non-extended symbol")
            out[~inside & (q == 0)] = a.extension_value
        return out


@dataclass(frozen=True, eq=False)
class WeylOperator:
    """Dense N x N Weyl matrix acting on grid samples, frozen at ``time``."""

    matrix: np.ndarray
    time: float
    lam: float
    fourier: np.ndarray

    @cached_property
    def hermitian_defect(self) -> float:
        A = self.fourier
        nrm = np.linalg.norm(A)
        return float(np.linalg.norm(A - A.conj().T) / nrm) if nrm > 0 else 0.0

    @cached_property
    def norm_bound(self) -> float:
        """Spectral norm (L2 -> L2); equals that of the Fourier matrix."""
        return float(np.linalg.norm(self.fourier, 2))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def weyl_fourier_matrix(a: SymbolGrid, t: float, n: int, spectrum: SymbolSpectrum | None = None) -> np.ndarray:
    """Weyl matrix in the centered Fourier basis for an n-point grid."""
    sp = spectrum or SymbolSpectrum(a)
    co = sp.coeff(t)
    k = centered_modes(n)
    kp, kk = np.meshgrid(k, k, indexing="ij")
    q = (kp - kk + n // 2) % n - n // 2
    j = kp + kk
    return sp.lookup(co, q, j)


def build_weyl(a: SymbolGrid, t: float, n: int | None = None) -> WeylOperator:
    """Dense Weyl quantization of ``a(t, ., .)`` on an n-point grid.

    The symbol's xi samples must be the half-integer lattice; ``n`` defaults to
    the symbol's x resolution.
    """
    n = a.shape[1] if n is None else n
    A = weyl_fourier_matrix(a, t, n)
    # x-space matrix: ifft . A . fft with the centered ordering
    perm = np.fft.ifftshift(np.arange(n))
    Ao = A[np.ix_(perm, perm)]
    F = np.fft.fft(np.eye(n), axis=0)
    M = np.fft.ifft(Ao @ F, axis=0)
    return WeylOperator(M, float(t), a.lam, A)


def apply(op: WeylOperator, f: np.ndarray) -> np.ndarray:
    """Apply a Weyl operator to grid samples (last axis of length N)."""
    f = np.asarray(f)
    if f.shape[-1] != op.n:
        raise ValueError(f"expected length {op.n}, got {f.shape[-1]}")
    return f @ op.matrix.T


def product_symbol(a: SymbolGrid, b: SymbolGrid) -> SymbolGrid:
    if a.values.shape != b.values.shape or not np.allclose(a.xi, b.xi):
        raise ValueError("symbols must share a lattice")
    bw = None if a.bandwidth is None or b.bandwidth is None else a.bandwidth + b.bandwidth
    ext = a.extended and b.extended
    return a.replace(values=a.values * b.values, bandwidth=bw, extended=ext,
                     ext_value=a.extension_value * b.extension_value if ext else None, label=f"({a.label})({b.label})")


def composition_defect(a: SymbolGrid, b: SymbolGrid, t: float, n: int | None = None) -> float:
    """lam * || a^w b^w - (ab)^w ||_{L2 -> L2} at time t."""
    n = a.shape[1] if n is None else n
    A = weyl_fourier_matrix(a, t, n)
    B = weyl_fourier_matrix(b, t, n)
    AB = weyl_fourier_matrix(product_symbol(a, b), t, n)
    return float(a.lam * np.linalg.norm(A @ B - AB, 2))


class BandedWeyl:
    """Fast application of a^w(t) to coefficient vectors in the centered basis.

    Cost is O(N (2Q+1)) per application with Q the symbol's x-bandwidth in
    mode units.  Works on batches: ``f`` has shape (..., N).
    """

    def __init__(self, a: SymbolGrid, n: int):
        self.symbol = a
        self.n = n
        self.spectrum = SymbolSpectrum(a)
        k = centered_modes(n)
        self.k = k
        Q = self.spectrum.qmax
        if 2 * Q + 1 > n:
            raise ValueError("symbol bandwidth exceeds the field grid")
        self.q = np.arange(-Q, Q + 1)
        # j = k' + k with k = k' - q (circular wrap of k handled by roll)
        kk = ((k[None, :] - self.q[:, None] + n // 2) % n) - n // 2
        self._j = k[None, :] + kk
        self._cache_t = None
        self._cache = None

    def table(self, t: float) -> np.ndarray:
        if self.spectrum.t_independent and self._cache is not None:
            return self._cache
        if self._cache_t == t:
            return self._cache
        co = self.spectrum.coeff(t)
        tab = self.spectrum.lookup(co, self.q[:, None], self._j)
        self._cache_t, self._cache = t, tab
        return tab

    def __call__(self, t: float, f: np.ndarray) -> np.ndarray:
        tab = self.table(t)
        out = np.zeros_like(f, dtype=complex)
        for i, q in enumerate(self.q):
            out += tab[i] * np.roll(f, q, axis=-1)
        return out

    def value_range(self):
        """(min, max) of the symbol including the constant extension value."""
        v = self.symbol.values
        lo, hi = float(v.min()), float(v.max())
        if self.symbol.extended:
            ev = self.symbol.extension_value
            lo, hi = min(lo, ev), max(hi, ev)
        return lo, hi
