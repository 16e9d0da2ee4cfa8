"""Bath correlation kernel, memory coefficients, and colored-noise sampling.

The high-temperature kernel is

    alpha(t, s) = 2 m gamma kT Delta(t-s) + i hbar m gamma dDelta/dt (t-s)

with Delta(t) = (Lambda/2) exp(-Lambda |t|).  Its derivative is odd with a
jump at zero; Hermiticity of alpha forces the symmetric convention
dDelta(0) = 0.  Both memory moments have closed forms:

    g0(t) = (m gamma / hbar) (kT - i hbar Lambda / 2) (1 - exp(-Lambda t))
    g1(t) = (gamma / (hbar Lambda)) (kT - i hbar Lambda / 2)
            (1 - (1 + Lambda t) exp(-Lambda t))

Noise paths are drawn as z = L xi where L L^dagger is a PSD repair of the
Hermitian Toeplitz matrix C[j,k] = alpha(t_j, t_k) and xi is a vector of
independent standard circular complex Gaussians.  The quantum part of the
kernel makes C indefinite whenever the step grid resolves frequencies beyond
2 kT / hbar, so negative eigenvalues are clamped to zero; the clamp is benign
for the reduced dynamics as long as the time-integrated (memory-filtered)
defect of the repaired kernel stays small, which is what the sampler checks.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import toeplitz

from .model import PhysicalParams

__all__ = [
    "BathKernel",
    "MemoryCoefficients",
    "NoisePath",
    "NoiseFactorizationError",
    "covariance_matrix",
    "covariance_factor",
    "sample_noise",
    "trajectory_rng",
    "dump_noise_csv",
]

log = logging.getLogger(__name__)

# Hard failure threshold on the relative defect of the memory-filtered
# clamped kernel (max_t |Re gtilde0(t) - Re g0(t)| / Re g0_inf).  Entrywise
# negativity alone does not make sampling unusable; a large filtered defect
# does, because it distorts the diffusion sector of the recovered dynamics.
MAX_FILTERED_DEFECT = 0.2
# Spec-level clamp warning threshold (relative to the largest diagonal).
CLAMP_WARN_TOL = 1e-8


@dataclass(frozen=True)
class BathKernel:
    """Delta(t), its derivative, and the complex correlation alpha(t, s)."""

    params: PhysicalParams

    def delta(self, t):
        lam = self.params.Lambda
        return 0.5 * lam * np.exp(-lam * np.abs(t))

    def delta_dot(self, t):
        """Odd derivative of the delta sequence, with delta_dot(0) = 0."""
        lam = self.params.Lambda
        t = np.asarray(t, dtype=float)
        out = -np.sign(t) * 0.5 * lam**2 * np.exp(-lam * np.abs(t))
        return out if out.shape else float(out)

    def alpha(self, t, s):
        p = self.params
        tau = np.asarray(t, dtype=float) - np.asarray(s, dtype=float)
        val = (
            2.0 * p.mass * p.gamma * p.kT * self.delta(tau)
            + 1j * p.hbar * p.mass * p.gamma * self.delta_dot(tau)
        )
        return val if np.ndim(val) else complex(val)


def alpha(t, s, params: PhysicalParams):
    """Bath correlation alpha(t, s); convenience wrapper over :class:`BathKernel`."""
    return BathKernel(params).alpha(t, s)


@dataclass(frozen=True)
class MemoryCoefficients:
    """Closed-form memory moments g0(t), g1(t) and their asymptotes."""

    params: PhysicalParams

    @property
    def _amp(self) -> complex:
        p = self.params
        return p.kT - 0.5j * p.hbar * p.Lambda

    def g0(self, t):
        p = self.params
        return (p.mass * p.gamma / p.hbar) * self._amp * (1.0 - np.exp(-p.Lambda * np.asarray(t, dtype=float)))

    def g1(self, t):
        p = self.params
        lt = p.Lambda * np.asarray(t, dtype=float)
        return (p.gamma / (p.hbar * p.Lambda)) * self._amp * (1.0 - (1.0 + lt) * np.exp(-lt))

    @property
    def g0_inf(self) -> complex:
        p = self.params
        return (p.mass * p.gamma / p.hbar) * self._amp

    @property
    def g1_inf(self) -> complex:
        p = self.params
        return (p.gamma / (p.hbar * p.Lambda)) * self._amp

    def q2_coefficient(self, t):
        """Coefficient of the q^2 phase term, m gamma Lambda/2 + Im g0(t).

        Equals (m gamma Lambda / 2) exp(-Lambda t) in closed form: the bare
        counter-term is cancelled by the memory integral as it saturates.
        """
        p = self.params
        return 0.5 * p.mass * p.gamma * p.Lambda * np.exp(-p.Lambda * np.asarray(t, dtype=float))


@dataclass
class NoisePath:
    """One discretized realization of the complex Gaussian process."""

    dt: float
    z: np.ndarray = field(repr=False)
    stream_id: tuple = ()

    @property
    def n_steps(self) -> int:
        return len(self.z)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps)


class NoiseFactorizationError(RuntimeError):
    """The discretized kernel cannot be usefully repaired to a covariance."""


def covariance_matrix(n_steps: int, dt: float, params: PhysicalParams) -> np.ndarray:
    """Hermitian Toeplitz C[j,k] = alpha(t_j, t_k) on the step grid."""
    kernel = BathKernel(params)
    col = kernel.alpha(dt * np.arange(n_steps), 0.0)
    return toeplitz(col, np.conj(col))


def _filtered_defect(C_repaired: np.ndarray, dt: float, params: PhysicalParams) -> float:
    """Relative error of Re gtilde0(t) = Re[(dt/hbar) sum_s C+(t,s)] vs Re g0(t)."""
    coeffs = MemoryCoefficients(params)
    n = C_repaired.shape[0]
    t = dt * np.arange(n)
    cum = np.cumsum(C_repaired, axis=1)
    gtilde0_re = (dt / params.hbar) * np.real(cum[np.arange(n), np.arange(n)])
    g0_re = np.real(coeffs.g0(t))
    scale = float(np.real(coeffs.g0_inf)) or 1.0
    return float(np.max(np.abs(gtilde0_re - g0_re)) / scale)


def covariance_factor(n_steps: int, dt: float, params: PhysicalParams):
    """Factor L with L L^dagger = PSD repair of the step-grid covariance.

    Tries Cholesky first; on indefiniteness falls back to an eigendecomposition
    with negative eigenvalues clamped to zero.  Raises
    :class:`NoiseFactorizationError` when the memory-filtered defect of the
    repaired kernel exceeds ``MAX_FILTERED_DEFECT`` (the repaired process would
    visibly distort the reduced dynamics).
    """
    C = covariance_matrix(n_steps, dt, params)
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        pass
    evals, evecs = np.linalg.eigh(C)
    max_diag = float(C.diagonal().real.max())
    min_eval = float(evals[0])
    clamped = np.clip(evals, 0.0, None)
    if min_eval < -CLAMP_WARN_TOL * max_diag:
        neg_fraction = -evals[evals < 0].sum() / clamped.sum()
        L = evecs * np.sqrt(clamped)
        defect = _filtered_defect(L @ L.conj().T, dt, params)
        msg = (
            f"noise covariance indefinite (min eigenvalue {min_eval:.3g}, "
            f"{neg_fraction:.1%} of spectral mass clamped, filtered defect "
            f"{defect:.2%} of Re g0_inf)"
        )
        if defect > MAX_FILTERED_DEFECT:
            raise NoiseFactorizationError(msg)
        warnings.warn(msg, stacklevel=2)
        log.warning(msg)
        return L
    return evecs * np.sqrt(clamped)


# factor cache: the same (params, dt, n_steps) is reused by every trajectory
_FACTOR_CACHE: dict = {}


def _cached_factor(n_steps: int, dt: float, params: PhysicalParams) -> np.ndarray:
    key = (n_steps, dt, params.hbar, params.mass, params.gamma, params.kT, params.Lambda)
    got = _FACTOR_CACHE.get(key)
    if got is None:
        if len(_FACTOR_CACHE) > 4:
            _FACTOR_CACHE.clear()
        got = covariance_factor(n_steps, dt, params)
        _FACTOR_CACHE[key] = got
    return got


def trajectory_rng(master_seed: int, trajectory_index: int) -> np.random.Generator:
    """Independent counter-based stream for one trajectory.

    Streams depend only on (master_seed, trajectory_index), so ensembles are
    reproducible independent of execution order and parallelism width.
    """
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(trajectory_index,))
    return np.random.Generator(np.random.Philox(ss))


def sample_noise(
    n_steps: int,
    dt: float,
    params: PhysicalParams,
    rng: np.random.Generator,
    stream_id: tuple = (),
    factor: np.ndarray | None = None,
) -> NoisePath:
    """Draw one noise path z with sample covariance M[z* z] = alpha(t_j, t_k).

    ``factor`` short-circuits the covariance factorization when the caller
    already holds L for this (n_steps, dt, params).
    """
    if factor is None:
        factor = _cached_factor(n_steps, dt, params)
    xi = rng.standard_normal(2 * n_steps)
    xi = (xi[:n_steps] + 1j * xi[n_steps:]) / np.sqrt(2.0)
    # with z = conj(L) xi the sample covariance M[z*_j z_k] equals
    # (L L^dagger)[j,k]; the unconjugated product would transpose it
    return NoisePath(dt=dt, z=np.conj(factor) @ xi, stream_id=stream_id)


def dump_noise_csv(path, noise: NoisePath) -> None:
    """Debug dump of one path as CSV rows (t, Re z, Im z)."""
    data = np.column_stack([noise.times, noise.z.real, noise.z.imag])
    np.savetxt(path, data, delimiter=",", header="t,re_z,im_z", comments="")
