"""The lam^(2/3)-scaled tight Gabor frame on the periodic cell.

Frame elements are phi_T(x) = s^(1/2) exp(i x xi_n) phi(s (x - x_m)) with
x_m = m / s (m = 0..M-1, M = s * period an integer) and xi_n = 2 s n.  The
unit-scale window has hat(phi) = sqrt(b) with b a raised-cosine partition,
so sum_n |hat(phi)(zeta - 2n)|^2 = 1 identically and the frame is exactly
tight (frame bound 1) on the periodic cell.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import BandError
from .weyl import centered_modes, to_modes, to_samples

SUPPORT = 9.0 / 8.0
FLAT = 7.0 / 8.0
COEFF_FLOOR = 1e-14


@dataclass(frozen=True)
class RaisedCosineWindow:
    """Unit-scale window with hat(phi)(zeta) = sqrt(b(zeta)), supported in |zeta| <= 9/8.

    Fourier convention: hat(phi)(zeta) = int phi(x) exp(-i x zeta) dx.
    """

    support: float = SUPPORT

    def b(self, zeta):
        z = np.abs(np.asarray(zeta, dtype=float))
        out = np.where(z <= FLAT, 1.0, 0.0)
        mid = (z > FLAT) & (z < SUPPORT)
        return np.where(mid, np.cos(2 * np.pi * (z - FLAT)) ** 2, out)

    def hat(self, zeta):
        z = np.abs(np.asarray(zeta, dtype=float))
        out = np.where(z <= FLAT, 1.0, 0.0)
        mid = (z > FLAT) & (z < SUPPORT)
        return np.where(mid, np.cos(2 * np.pi * (z - FLAT)), out)

    def partition_defect(self, zeta) -> np.ndarray:
        """|sum_n |hat(phi)(zeta - 2n)|^2 - 1| pointwise."""
        z = np.asarray(zeta, dtype=float)
        nmax = int(np.ceil(np.abs(z).max() / 2)) + 2
        tot = sum(self.b(z - 2 * n) for n in range(-nmax, nmax + 1))
        return np.abs(tot - 1.0)

    def profile(self, x, nq: int = 4097):
        """phi(x) = (1/2pi) int hat(phi)(zeta) exp(i x zeta) d zeta by quadrature."""
        zeta = np.linspace(-SUPPORT, SUPPORT, nq)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        integrand = self.hat(zeta)[None, :] * np.cos(x[:, None] * zeta[None, :])
        return np.trapezoid(integrand, zeta, axis=1) / (2 * np.pi)

    @property
    def l2_norm_sq(self) -> float:
        """||phi||_2^2 = (1/2pi) int |hat(phi)|^2 = (1/2pi) * 2 = 1/pi."""
        return 1.0 / np.pi

    @property
    def hat_l2_norm_sq(self) -> float:
        """int |hat(phi)|^2 d zeta = 2 (one period of the partition)."""
        return 2.0


def build_window() -> RaisedCosineWindow:
    return RaisedCosineWindow()


CoefficientMap = dict  # {(m, n): complex}


@dataclass(frozen=True)
class GaborFrame:
    """Tight frame at frequency ``lam`` for fields on an ``n_x``-point grid.

    ``scale`` s = M / period where M = round(lam^(2/3) period) is the number
    of positions per period; the rounding is kept in ``scale_rounding``.
    """

    lam: float
    n_x: int
    period: float = 1.0
    n_max: int | None = None
    window: RaisedCosineWindow = RaisedCosineWindow()

    def __post_init__(self):
        if self.n_max is None:
            object.__setattr__(self, "n_max", int(np.ceil(self.lam ** (1 / 3) - 1e-9)))
        if self.coverage + SUPPORT * self.scale > np.pi * self.n_x / self.period:
            raise ValueError("field grid too coarse for the frame's frequency coverage")

    @property
    def n_positions(self) -> int:
        return max(1, int(round(self.lam ** (2 / 3) * self.period)))

    @property
    def scale(self) -> float:
        return self.n_positions / self.period

    @property
    def scale_rounding(self) -> float:
        return self.scale / self.lam ** (2 / 3)

    @property
    def x_spacing(self) -> float:
        return 1.0 / self.scale

    @property
    def xi_spacing(self) -> float:
        return 2.0 * self.scale

    @property
    def n_range(self) -> np.ndarray:
        return np.arange(-self.n_max, self.n_max + 1)

    @property
    def m_range(self) -> np.ndarray:
        return np.arange(self.n_positions)

    @property
    def coverage(self) -> float:
        """Largest |xi| at which the square-sum identity is complete."""
        return (2 * self.n_max + FLAT) * self.scale

    def x_center(self, m):
        return np.asarray(m) * self.x_spacing

    def xi_center(self, n):
        return np.asarray(n) * self.xi_spacing

    @property
    def modes(self) -> np.ndarray:
        return centered_modes(self.n_x)

    @property
    def xi_grid(self) -> np.ndarray:
        return 2 * np.pi * self.modes / self.period

    def hat_weights(self, n) -> np.ndarray:
        """s^(-1/2) hat(phi)((xi_k - xi_n)/s) over the field modes."""
        return self.scale ** -0.5 * self.window.hat((self.xi_grid - self.xi_center(n)) / self.scale)

    def element_modes(self, m: int, n: int) -> np.ndarray:
        """Centered Fourier coefficients of phi_T, T = (m, n)."""
        xi = self.xi_grid
        phase = np.exp(-1j * (xi - self.xi_center(n)) * self.x_center(m))
        return phase * self.hat_weights(n) / self.period

    def element(self, m: int, n: int) -> np.ndarray:
        return to_samples(self.element_modes(m, n))

    def indices(self, n_values: Iterable[int] | None = None):
        ns = self.n_range if n_values is None else n_values
        return [(int(m), int(n)) for n in ns for m in self.m_range]

    def active_n(self, band: float) -> np.ndarray:
        """Frequency indices whose window meets |xi| <= band."""
        return np.array([n for n in self.n_range if abs(self.xi_center(n)) - SUPPORT * self.scale < band])

    # ------------------------------------------------------------ transforms

    def _fold(self, g: np.ndarray) -> np.ndarray:
        """Fold centered-mode data (..., N) into residues k mod M (..., M)."""
        M = self.n_positions
        out = np.zeros(g.shape[:-1] + (M,), dtype=complex)
        np.add.at(out, (..., self.modes % M), g) if g.ndim > 1 else np.add.at(out, self.modes % M, g)
        return out

    def analyze_modes(self, c: np.ndarray, check_band: bool = True) -> np.ndarray:
        """Dense coefficient array (M, 2 n_max + 1) from centered coefficients."""
        xi = self.xi_grid
        if check_band:
            tot = np.sum(np.abs(c) ** 2)
            out = np.sum(np.abs(c[np.abs(xi) > self.coverage]) ** 2)
            if tot > 0 and out > 1e-20 * tot:
                raise BandError(f"spectral energy fraction {out / tot:.2e} outside |xi| <= {self.coverage:.1f}")
        M = self.n_positions
        res = np.empty((M, len(self.n_range)), dtype=complex)
        xm = self.x_center(self.m_range)
        for i, n in enumerate(self.n_range):
            g = self.hat_weights(n) * c
            folded = self._fold(g)
            # sum_k g_k exp(2 pi i k m / M) = M ifft(folded)
            res[:, i] = np.exp(-1j * self.xi_center(n) * xm) * M * np.fft.ifft(folded)
        return res

    def synthesize_dense(self, coeffs: np.ndarray) -> np.ndarray:
        """Centered coefficients of sum_T c_T phi_T from a dense (M, 2 n_max + 1) array."""
        M = self.n_positions
        xm = self.x_center(self.m_range)
        out = np.zeros(self.n_x, dtype=complex)
        idx = self.modes % M
        for i, n in enumerate(self.n_range):
            col = coeffs[:, i] * np.exp(1j * self.xi_center(n) * xm)
            F = np.fft.fft(col)  # sum_m col_m exp(-2 pi i k m / M)
            out += self.hat_weights(n) * F[idx]
        return out / self.period

    def to_map(self, dense: np.ndarray, floor: float = COEFF_FLOOR) -> CoefficientMap:
        out = {}
        for i, n in enumerate(self.n_range):
            for m in np.nonzero(np.abs(dense[:, i]) >= floor)[0]:
                out[(int(m), int(n))] = complex(dense[m, i])
        return out

    def from_map(self, coeffs: Mapping) -> np.ndarray:
        dense = np.zeros((self.n_positions, len(self.n_range)), dtype=complex)
        for (m, n), v in coeffs.items():
            if abs(n) > self.n_max:
                raise KeyError(f"frequency index {n} outside the frame")
            dense[m % self.n_positions, n + self.n_max] = v
        return dense


def analyze(f: np.ndarray, frame: GaborFrame) -> CoefficientMap:
    """c_T = int conj(phi_T) f dx for grid samples ``f``; sparse (m, n) map."""
    return frame.to_map(frame.analyze_modes(to_modes(np.asarray(f, dtype=complex))))


def synthesize(coeffs: Mapping, frame: GaborFrame) -> np.ndarray:
    """Grid samples of sum_T c_T phi_T."""
    return to_samples(frame.synthesize_dense(frame.from_map(coeffs)))


def coefficients_to_csv(path, coeffs: Mapping, slab: int = 0):
    rows = sorted(coeffs.items(), key=lambda kv: (kv[0][1], kv[0][0]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["l", "m", "n", "re", "im"])
        for (m, n), v in rows:
            w.writerow([slab, m, n, repr(float(v.real)), repr(float(v.imag))])


def gram_ratio(frame: GaborFrame, coeffs: Mapping) -> float:
    """||sum b_T phi_T||^2 / sum |b_T|^2."""
    c = frame.synthesize_dense(frame.from_map(coeffs))
    num = frame.period * np.sum(np.abs(c) ** 2)
    den = sum(abs(v) ** 2 for v in coeffs.values())
    return float(num / den)
