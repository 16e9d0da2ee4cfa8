"""Wigner transform of pure states and density matrices.

W(q, p) = (1/pi hbar) Int dy psi*(q+y) psi(q-y) exp(2 i p y / hbar)

evaluated by the shifted-autocorrelation + Fourier method: the state is
band-limited-upsampled onto a half-step grid, products psi*(q+y) psi(q-y) are
formed with zero padding outside the box (no periodic wrap), and the y
integral becomes an FFT.  The resulting momentum axis spans +-pi hbar / dq at
the FFT-conjugate resolution pi hbar / (n dq).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import GridSpec, WaveFunction

__all__ = [
    "WignerGrid",
    "wigner_of_state",
    "wigner_of_density",
    "conjugate_momentum_axis",
    "dump_wigner_csv",
]

_CENTER_BLOCK = 512  # rows per chunk; bounds the transform workspace


@dataclass
class WignerGrid:
    q: np.ndarray
    p: np.ndarray
    values: np.ndarray = field(repr=False)  # shape (len(q), len(p))
    hbar: float = 1.0

    @property
    def dq(self) -> float:
        return float(self.q[1] - self.q[0])

    @property
    def dp(self) -> float:
        return float(self.p[1] - self.p[0])

    def integral(self) -> float:
        return float(self.values.sum() * self.dq * self.dp)

    def marginal_q(self) -> np.ndarray:
        """Integrates over p; equals |psi(q)|^2 for a pure-state input."""
        return self.values.sum(axis=1) * self.dp

    def marginal_p(self) -> np.ndarray:
        return self.values.sum(axis=0) * self.dq

    def purity(self) -> float:
        """(2 pi hbar) Int W^2 dq dp; 1 for pure states, < 1 for mixtures."""
        return float(2.0 * np.pi * self.hbar * np.sum(self.values**2) * self.dq * self.dp)


def _upsample2(arr: np.ndarray, axis: int = -1) -> np.ndarray:
    """Band-limited interpolation onto the doubled grid; out[2i] = arr[i].

    The padding stencil is symmetric under k -> -k (Nyquist bin split evenly),
    so it commutes with complex conjugation of the data.
    """
    arr = np.asarray(arr, dtype=complex)
    n = arr.shape[axis]
    spec = np.fft.fft(arr, axis=axis)
    shape = list(arr.shape)
    shape[axis] = 2 * n
    padded = np.zeros(shape, dtype=complex)

    def sl(s):
        out = [slice(None)] * arr.ndim
        out[axis] = s
        return tuple(out)

    padded[sl(slice(None, n // 2))] = spec[sl(slice(None, n // 2))]
    padded[sl(slice(-(n // 2) + 1, None))] = spec[sl(slice(n // 2 + 1, None))]
    padded[sl(n // 2)] = 0.5 * spec[sl(n // 2)]
    padded[sl(-(n // 2))] = 0.5 * spec[sl(n // 2)]
    return 2.0 * np.fft.ifft(padded, axis=axis)


def conjugate_momentum_axis(grid: GridSpec, hbar: float) -> np.ndarray:
    """Momentum axis of the Wigner grid: extent pi hbar / dq, 2n points."""
    n = grid.n
    return (np.pi * hbar / (n * grid.dq)) * np.arange(-n, n)


_p_axis = conjugate_momentum_axis


def _transform_rows(rows: np.ndarray, grid: GridSpec, hbar: float) -> np.ndarray:
    """FFT anti-diagonal product rows (offsets in linear order -n..n-1)."""
    n = grid.n
    rows = np.fft.ifftshift(rows, axes=1)
    spectrum = np.fft.ifft(rows, axis=1) * (2 * n)
    w = np.fft.fftshift(spectrum, axes=1).real
    return w * (0.5 * grid.dq / (np.pi * hbar))


def _antidiagonal_wigner(fine_lookup, grid: GridSpec, hbar: float) -> np.ndarray:
    """Assemble W from fine-grid products c[i, j] = fine(2i - j, 2i + j)."""
    n = grid.n
    centers = 2 * np.arange(n)
    offsets = np.arange(-n, n)
    out = np.empty((n, 2 * n))
    for lo in range(0, n, _CENTER_BLOCK):
        hi = min(lo + _CENTER_BLOCK, n)
        ip = centers[lo:hi, None] + offsets[None, :]
        im = centers[lo:hi, None] - offsets[None, :]
        valid = (ip >= 0) & (ip < 2 * n) & (im >= 0) & (im < 2 * n)
        rows = np.where(valid, fine_lookup(np.clip(im, 0, 2 * n - 1), np.clip(ip, 0, 2 * n - 1)), 0.0)
        out[lo:hi] = _transform_rows(rows, grid, hbar)
    return out


def wigner_of_state(psi: WaveFunction, hbar: float) -> WignerGrid:
    """Wigner function of a normalized pure state on its grid."""
    grid = psi.grid
    fine = _upsample2(psi.amps)
    values = _antidiagonal_wigner(lambda a, b: fine[a] * np.conj(fine[b]), grid, hbar)
    return WignerGrid(q=grid.q, p=_p_axis(grid, hbar), values=values, hbar=hbar)


def wigner_of_density(rho: np.ndarray, grid: GridSpec, hbar: float) -> WignerGrid:
    """Same transform applied to a density matrix rho[a, b] = <q_a|rho|q_b>.

    The input must be Hermitian to 1e-8 (relative).  The discretization
    matches :func:`wigner_of_state` exactly, so by linearity the transform of
    an accumulated mixture equals the average of the per-state transforms to
    rounding precision.
    """
    rho = np.asarray(rho, dtype=complex)
    n = grid.n
    if rho.shape != (n, n):
        raise ValueError("density matrix does not match grid")
    scale = np.abs(rho).max() or 1.0
    if np.abs(rho - rho.conj().T).max() > 1e-8 * scale:
        raise ValueError("density matrix input is not Hermitian (tolerance 1e-8)")
    fine = _upsample2(_upsample2(rho, axis=0), axis=1)
    values = _antidiagonal_wigner(lambda a, b: fine[a, b], grid, hbar)
    return WignerGrid(q=grid.q, p=_p_axis(grid, hbar), values=values, hbar=hbar)


def dump_wigner_csv(path, grid: WignerGrid) -> None:
    """Flat CSV rows (q, p, W); intended for small grids only."""
    qq, pp = np.meshgrid(grid.q, grid.p, indexing="ij")
    data = np.column_stack([qq.ravel(), pp.ravel(), grid.values.ravel()])
    np.savetxt(path, data, delimiter=",", header="q,p,w", comments="")
