"""Physical parameters, potentials, grids, states and elementary operator actions.

Everything downstream (the stochastic steppers, the ensemble reduction, the
Wigner transform) works on a pure state sampled on a uniform position grid.
Position operators act as diagonal multiplications; momentum operators act
spectrally through the FFT.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PhysicalParams",
    "PotentialSpec",
    "GridSpec",
    "WaveFunction",
    "Observables",
    "GridOverflowError",
    "make_coherent_state",
    "observables",
    "apply_kinetic_half",
    "apply_potential",
]


class GridOverflowError(ValueError):
    """Initial state does not fit the position grid (tails or momentum extent)."""


@dataclass(frozen=True)
class PhysicalParams:
    """Bath and system constants.

    ``noise_shift_mode`` selects how the colored noise enters the nonlinear
    stepper: ``"raw"`` uses the sampled process as-is, ``"shifted"`` adds the
    mean-field displacement 2*Re[int_0^t alpha*(t,s) <q>_s ds]/hbar.
    ``include_re_g1`` restores the (small) real part of the first memory
    moment, which is dropped by default.
    """

    hbar: float = 0.01
    mass: float = 1.0
    gamma: float = 0.25
    kT: float = 0.3
    Lambda: float = 5.0
    noise_shift_mode: str = "raw"
    include_re_g1: bool = False

    def __post_init__(self):
        if self.hbar <= 0 or self.mass <= 0 or self.Lambda <= 0:
            raise ValueError("hbar, mass and Lambda must be positive")
        if self.gamma < 0 or self.kT < 0:
            raise ValueError("gamma and kT must be non-negative")
        if self.noise_shift_mode not in ("raw", "shifted"):
            raise ValueError(f"unknown noise_shift_mode {self.noise_shift_mode!r}")

    def check_regime(self, omega_typical: float = 1.0) -> None:
        """Warn when outside the high-temperature window kT >= hbar*Lambda >= hbar*max(omega, gamma)."""
        if self.kT < self.hbar * self.Lambda:
            warnings.warn(
                f"kT={self.kT} below hbar*Lambda={self.hbar * self.Lambda}: "
                "outside the high-temperature regime, kernel discretization "
                "will be clamped more aggressively",
                stacklevel=2,
            )
        if self.Lambda < max(omega_typical, self.gamma):
            warnings.warn(
                f"Lambda={self.Lambda} below system scale "
                f"max(omega={omega_typical}, gamma={self.gamma}): memory "
                "expansion in the time delay is inaccurate",
                stacklevel=2,
            )


@dataclass(frozen=True)
class PotentialSpec:
    """Time-dependent scalar potential V(q, t).

    Variants:
      * ``duffing``: q^4/4 - q^2/2 + g*q*cos(drive_freq*t)
      * ``harmonic``: m*omega^2*q^2/2
      * ``polynomial``: sum_k coeffs[k] * q^k (time independent)
    """

    variant: str = "duffing"
    g: float = 0.3
    drive_freq: float = 1.0
    omega: float = 1.0
    coeffs: tuple = ()

    def __post_init__(self):
        if self.variant not in ("duffing", "harmonic", "polynomial"):
            raise ValueError(f"unknown potential variant {self.variant!r}")

    def evaluate(self, q, t: float, mass: float = 1.0):
        if self.variant == "duffing":
            return 0.25 * q**4 - 0.5 * q**2 + self.g * q * np.cos(self.drive_freq * t)
        if self.variant == "harmonic":
            return 0.5 * mass * self.omega**2 * q**2
        return sum(c * q**k for k, c in enumerate(self.coeffs))

    def matrix(self, q_mat: np.ndarray, t: float, mass: float = 1.0) -> np.ndarray:
        """Same potential as a polynomial of a position operator matrix."""
        eye = np.eye(q_mat.shape[0], dtype=complex)
        q2 = q_mat @ q_mat
        if self.variant == "duffing":
            return (
                0.25 * q2 @ q2
                - 0.5 * q2
                + self.g * np.cos(self.drive_freq * t) * q_mat
            )
        if self.variant == "harmonic":
            return 0.5 * mass * self.omega**2 * q2
        out = np.zeros_like(eye)
        power = eye
        for c in self.coeffs:
            out = out + c * power
            power = power @ q_mat
        return out


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic position grid with its FFT-conjugate momentum grid."""

    q_min: float
    q_max: float
    n: int

    def __post_init__(self):
        if self.n < 2 or (self.n & (self.n - 1)) != 0:
            raise ValueError(f"n must be a power of two, got {self.n}")
        if self.q_max <= self.q_min:
            raise ValueError("q_max must exceed q_min")

    @property
    def dq(self) -> float:
        return (self.q_max - self.q_min) / self.n

    @property
    def q(self) -> np.ndarray:
        return self.q_min + self.dq * np.arange(self.n)

    def wavenumbers(self) -> np.ndarray:
        """Signed FFT wavenumbers 2*pi*j/(n*dq) in FFT storage order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, self.dq)

    def momenta(self, hbar: float) -> np.ndarray:
        return hbar * self.wavenumbers()

    def p_max(self, hbar: float) -> float:
        return hbar * np.pi / self.dq


@dataclass
class WaveFunction:
    """Complex amplitudes of a pure state on a :class:`GridSpec`.

    Amplitudes are owned by exactly one trajectory; all other model types are
    immutable and freely shareable.
    """

    grid: GridSpec
    amps: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.amps = np.asarray(self.amps, dtype=complex)
        if self.amps.shape != (self.grid.n,):
            raise ValueError("amplitude array does not match grid")

    def norm_squared(self) -> float:
        return float(self.grid.dq * np.sum(np.abs(self.amps) ** 2))

    def normalized(self) -> "WaveFunction":
        return WaveFunction(self.grid, self.amps / np.sqrt(self.norm_squared()))

    def copy(self) -> "WaveFunction":
        return WaveFunction(self.grid, self.amps.copy())

    def boundary_leak(self) -> float:
        """max(|psi(q_min)|, |psi(q_max)|) / max|psi| -- leakage indicator."""
        peak = np.abs(self.amps).max()
        if peak == 0.0:
            return 0.0
        return float(max(abs(self.amps[0]), abs(self.amps[-1])) / peak)


@dataclass(frozen=True)
class Observables:
    mean_q: float
    mean_p: float
    mean_qp: complex
    var_q: float
    var_p: float
    norm: float

    @property
    def uncertainty_product(self) -> float:
        return float(np.sqrt(max(self.var_q, 0.0) * max(self.var_p, 0.0)))


def make_coherent_state(
    q0: float,
    p0: float,
    params: PhysicalParams,
    grid: GridSpec,
    sigma_q: float | None = None,
) -> WaveFunction:
    """Normalized Gaussian psi(q) ~ exp(-(q-q0)^2/(4 sigma_q^2) + i p0 q / hbar).

    The default width sigma_q = sqrt(hbar/(2 m)) is the m*omega = 1 coherent
    width.  Raises :class:`GridOverflowError` when the tails at the box edges
    exceed 1e-8 of the peak or the carrier momentum approaches the grid's
    momentum extent.
    """
    if sigma_q is None:
        sigma_q = float(np.sqrt(params.hbar / (2.0 * params.mass)))
    if sigma_q <= 0:
        raise ValueError("sigma_q must be positive")
    q = grid.q
    psi = np.exp(-((q - q0) ** 2) / (4.0 * sigma_q**2) + 1j * p0 * q / params.hbar)
    tail = max(abs(psi[0]), abs(psi[-1]))
    if tail > 1e-8:
        raise GridOverflowError(
            f"coherent state (q0={q0}, sigma_q={sigma_q}) has boundary tail "
            f"{tail:.2e} > 1e-8 on grid [{grid.q_min}, {grid.q_max}]"
        )
    # momentum support: carrier plus a few width-conjugate standard deviations
    sigma_p = params.hbar / (2.0 * sigma_q)
    if abs(p0) + 6.0 * sigma_p > grid.p_max(params.hbar):
        raise GridOverflowError(
            f"momentum extent |p0|+6*sigma_p = {abs(p0) + 6 * sigma_p:.3g} "
            f"exceeds grid maximum {grid.p_max(params.hbar):.3g}"
        )
    wf = WaveFunction(grid, psi)
    return wf.normalized()


def observables(psi: WaveFunction, hbar: float, symmetrized_qp: bool = False) -> Observables:
    """Grid/spectral expectation values of a (not necessarily normalized) state.

    ``mean_qp`` is the plain operator product <q p>, complex in general;
    ``symmetrized_qp=True`` returns <qp+pq>/2 instead.
    """
    grid = psi.grid
    dq = grid.dq
    q = grid.q
    dens = np.abs(psi.amps) ** 2
    norm2 = dq * dens.sum()
    if not np.isfinite(norm2) or norm2 <= 0.0:
        raise FloatingPointError(f"state norm^2 = {norm2!r}; propagation diverged")
    mean_q = dq * np.sum(q * dens) / norm2
    mean_q2 = dq * np.sum(q**2 * dens) / norm2

    phi = np.fft.fft(psi.amps)
    wp = np.abs(phi) ** 2
    wp_sum = wp.sum()
    p = grid.momenta(hbar)
    mean_p = np.sum(p * wp) / wp_sum
    mean_p2 = np.sum(p**2 * wp) / wp_sum

    p_psi = np.fft.ifft(p * phi)  # (p psi) on the position grid
    mean_qp = dq * np.sum(np.conj(psi.amps) * q * p_psi) / norm2
    if symmetrized_qp:
        # <qp+pq>/2 = Re<qp> since (qp)^dagger = pq
        mean_qp = complex(mean_qp.real)
    var_q = max(mean_q2 - mean_q**2, 0.0)
    var_p = max(mean_p2 - mean_p**2, 0.0)
    out = Observables(float(mean_q), float(mean_p), complex(mean_qp), float(var_q), float(var_p), float(np.sqrt(norm2)))
    if not np.isfinite(out.mean_q) or not np.isfinite(out.mean_p):
        raise FloatingPointError("non-finite expectation value; propagation diverged")
    return out


def apply_kinetic_half(psi: WaveFunction, dt: float, params: PhysicalParams) -> WaveFunction:
    """Multiply momentum-space amplitudes by exp(-i p^2 dt / (2 m hbar)).

    Callers pass dt/2 of the full step for the symmetric splitting halves.
    Unitary to machine precision; dt may be negative (inverse step).
    """
    p = psi.grid.momenta(params.hbar)
    phase = np.exp(-1j * p**2 * dt / (2.0 * params.mass * params.hbar))
    return WaveFunction(psi.grid, np.fft.ifft(phase * np.fft.fft(psi.amps)))


def apply_potential(
    psi: WaveFunction,
    dt: float,
    t: float,
    potential: PotentialSpec,
    params: PhysicalParams,
    extra_q2_coeff: float = 0.0,
) -> WaveFunction:
    """Multiply position-space amplitudes by exp(-i (V(q,t) + extra_q2_coeff q^2) dt / hbar)."""
    q = psi.grid.q
    v = potential.evaluate(q, t, params.mass) + extra_q2_coeff * q**2
    return WaveFunction(psi.grid, psi.amps * np.exp(-1j * v * dt / params.hbar))
