"""Density-matrix oracles: master-equation generators, RK4 evolution, moment ODEs.

Two generators validate the trajectory ensemble independently:

  * the constant-coefficient Markov generator
        hbar drho = -i[H,rho] - i(gamma/2)[q,{p,rho}] - (m gamma kT/hbar)[q,[q,rho]]
    (not of Lindblad form: it can transiently break positivity), and
  * its time-dependent refinement built from the memory coefficients
        hbar drho = -i[H,rho] - i c2(t) [q^2,rho] + i Im g1(t) [q,{p,rho}]
                    - Re g0(t) [q,[q,rho]]
    which reduces to the former once t >> 1/Lambda.

Everything runs in a truncated harmonic-oscillator number basis at a
configurable basis frequency.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import PhysicalParams, PotentialSpec
from .noise import MemoryCoefficients

__all__ = [
    "OscillatorBasis",
    "DensityMatrix",
    "liouvillian_qbm",
    "liouvillian_timedep",
    "evolve_density",
    "moment_ode_harmonic",
    "moment_ode_timedep",
    "coherent_density",
    "squeezed_vacuum_density",
    "squeezed_basis",
    "find_positivity_violation",
    "superoperator_matrix",
    "TruncationError",
]


class TruncationError(RuntimeError):
    pass


@dataclass(frozen=True)
class OscillatorBasis:
    """Truncated number basis: ladder, position and momentum matrices."""

    dim: int
    omega_b: float
    hbar: float
    mass: float = 1.0

    @property
    def lowering(self) -> np.ndarray:
        return np.diag(np.sqrt(np.arange(1, self.dim, dtype=float)), k=1).astype(complex)

    @property
    def q(self) -> np.ndarray:
        a = self.lowering
        return np.sqrt(self.hbar / (2.0 * self.mass * self.omega_b)) * (a + a.conj().T)

    @property
    def p(self) -> np.ndarray:
        a = self.lowering
        return 1j * np.sqrt(self.hbar * self.mass * self.omega_b / 2.0) * (a.conj().T - a)

    def hamiltonian(self, potential: PotentialSpec, t: float) -> np.ndarray:
        p = self.p
        return p @ p / (2.0 * self.mass) + potential.matrix(self.q, t, self.mass)


@dataclass
class DensityMatrix:
    """Truncated-basis density operator with its basis metadata."""

    basis: OscillatorBasis
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.shape != (self.basis.dim, self.basis.dim):
            raise ValueError("matrix does not match basis dimension")

    def trace(self) -> float:
        return float(np.trace(self.data).real)

    def hermitize(self) -> None:
        self.data = 0.5 * (self.data + self.data.conj().T)

    def hermiticity_defect(self) -> float:
        return float(np.abs(self.data - self.data.conj().T).max())

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.data + self.data.conj().T))[0])

    def populations(self) -> np.ndarray:
        return self.data.diagonal().real

    def truncation_health(self) -> float:
        """Total population of the top 10% of basis states; < 1e-6 is healthy."""
        top = max(1, self.basis.dim // 10)
        return float(self.populations()[-top:].sum())

    def check_truncation(self, tol: float = 1e-6) -> None:
        top = self.truncation_health()
        if top > tol:
            warnings.warn(
                f"truncation suspect: top-decile population {top:.2e} > {tol:.0e} "
                f"(dim={self.basis.dim})",
                stacklevel=2,
            )

    def expectation(self, op: np.ndarray) -> complex:
        return complex(np.trace(op @ self.data))

    def copy(self) -> "DensityMatrix":
        return DensityMatrix(self.basis, self.data.copy())


def _comm(a, b):
    return a @ b - b @ a


def liouvillian_qbm(
    rho: DensityMatrix, t: float, params: PhysicalParams, potential: PotentialSpec
) -> np.ndarray:
    """Time derivative of rho under the constant-coefficient Markov generator."""
    b = rho.basis
    q, p = b.q, b.p
    h = b.hamiltonian(potential, t)
    r = rho.data
    anti = p @ r + r @ p
    out = (
        -1j * _comm(h, r)
        - 0.5j * params.gamma * _comm(q, anti)
        - (params.mass * params.gamma * params.kT / params.hbar) * _comm(q, _comm(q, r))
    )
    return out / params.hbar


def liouvillian_timedep(
    rho: DensityMatrix,
    t: float,
    params: PhysicalParams,
    potential: PotentialSpec,
    coeffs: MemoryCoefficients,
) -> np.ndarray:
    """Time derivative under the time-dependent-coefficient refinement."""
    b = rho.basis
    q, p = b.q, b.p
    h = b.hamiltonian(potential, t)
    r = rho.data
    c2 = float(coeffs.q2_coefficient(t))
    g0 = complex(coeffs.g0(t))
    g1 = complex(coeffs.g1(t))
    anti = p @ r + r @ p
    out = (
        -1j * _comm(h, r)
        - 1j * c2 * _comm(q @ q, r)
        + 1j * g1.imag * _comm(q, anti)
        - g0.real * _comm(q, _comm(q, r))
    )
    return out / params.hbar


def evolve_density(
    rho0: DensityMatrix,
    generator,
    horizon: float,
    dt: float,
    sample_times=None,
    trace_tol: float = 1e-6,
    max_halvings: int = 3,
    t0: float = 0.0,
):
    """RK4 integration of ``generator(rho, t) -> drho/dt`` from t0 to t0+horizon.

    Hermiticity is restored each step; on trace drift beyond ``trace_tol`` the
    step size is halved and the evolution restarted, up to ``max_halvings``
    times.  Returns the list of (t, DensityMatrix) at the absolute
    ``sample_times`` (default: just the final time).
    """
    if sample_times is None:
        sample_times = [t0 + horizon]
    sample_times = list(np.atleast_1d(np.asarray(sample_times, dtype=float)))
    for attempt in range(max_halvings + 1):
        n_steps = max(1, int(round(horizon / dt))) if horizon > 0 else 0
        h = horizon / n_steps if n_steps else dt
        rho = rho0.copy()
        trace0 = rho.trace()
        out = []
        targets = {int(round((ts - t0) / h)) if h else 0: ts for ts in sample_times}
        if horizon == 0:
            return [(t0, rho0.copy())]
        ok = True
        if 0 in targets:
            out.append((t0, rho.copy()))
        for i in range(n_steps):
            t = t0 + i * h
            m = rho.copy()

            def f(mat, ti):
                m.data = mat
                return generator(m, ti)

            y = rho.data
            k1 = f(y, t)
            k2 = f(y + 0.5 * h * k1, t + 0.5 * h)
            k3 = f(y + 0.5 * h * k2, t + 0.5 * h)
            k4 = f(y + h * k3, t + h)
            rho = DensityMatrix(rho0.basis, y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))
            rho.hermitize()
            tr = rho.trace()
            # the generators are trace-free for any input, so a blow-up shows
            # up in the magnitudes long before the trace drifts
            peak = np.abs(rho.data).max()
            if not np.isfinite(tr) or abs(tr - trace0) > trace_tol or peak > 1e3 * abs(trace0):
                ok = False
                break
            if (i + 1) in targets:
                out.append((targets[i + 1], rho.copy()))
        if ok:
            rho.check_truncation()
            return out
        dt = 0.5 * h
    raise RuntimeError(
        f"density evolution trace drift exceeded {trace_tol} after {max_halvings} halvings"
    )


def _rk4_moments(f, y0, horizon: float, dt: float, sample_times):
    """RK4 with segment boundaries placed exactly on every sample time."""
    sample_times = np.atleast_1d(np.asarray(sample_times, dtype=float))
    y = np.asarray(y0, dtype=float)
    out_t, out_y = [], []
    t = 0.0
    for ts in sample_times:
        if ts < t - 1e-12:
            raise ValueError("sample_times must be non-decreasing")
        span = ts - t
        n_sub = max(1, int(np.ceil(span / dt))) if span > 0 else 0
        h = span / n_sub if n_sub else 0.0
        for _ in range(n_sub):
            k1 = f(t, y)
            k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
            k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
            k4 = f(t + h, y + h * k3)
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        t = float(ts)
        out_t.append(t)
        out_y.append(y.copy())
    return np.array(out_t), np.array(out_y)


MOMENT_KEYS = ("mean_q", "mean_p", "mean_q2", "mean_p2", "mean_qp_sym")


def moment_ode_harmonic(
    params: PhysicalParams,
    omega: float,
    initial_moments,
    horizon: float,
    sample_times,
    dt: float = 1e-4,
):
    """First/second-moment system of the Markov generator for harmonic H.

    ``initial_moments`` is (<q>, <p>, <q^2>, <p^2>, <qp+pq>/2).  Returns a
    dict of time series keyed by ``MOMENT_KEYS`` plus "t".  The stationary
    point is classical equipartition <p^2> -> m kT, <q^2> -> kT/(m omega^2).
    """
    m, g, kT = params.mass, params.gamma, params.kT

    def f(t, y):
        q, p, q2, p2, qp = y
        return np.array(
            [
                p / m,
                -m * omega**2 * q - g * p,
                2.0 * qp / m,
                -2.0 * m * omega**2 * qp - 2.0 * g * p2 + 2.0 * m * g * kT,
                p2 / m - m * omega**2 * q2 - g * qp,
            ]
        )

    t, y = _rk4_moments(f, initial_moments, horizon, dt, sample_times)
    return {"t": t, **{k: y[:, i] for i, k in enumerate(MOMENT_KEYS)}}


def moment_ode_timedep(
    params: PhysicalParams,
    omega: float,
    initial_moments,
    horizon: float,
    sample_times,
    dt: float = 1e-4,
):
    """Same moment system for the time-dependent-coefficient generator."""
    m = params.mass
    coeffs = MemoryCoefficients(params)

    def f(t, y):
        q, p, q2, p2, qp = y
        w2 = m * omega**2 + 2.0 * float(coeffs.q2_coefficient(t))
        kap = complex(coeffs.g1(t)).imag
        r = complex(coeffs.g0(t)).real
        return np.array(
            [
                p / m,
                -w2 * q + 2.0 * kap * p,
                2.0 * qp / m,
                -2.0 * w2 * qp + 4.0 * kap * p2 + 2.0 * params.hbar * r,
                p2 / m - w2 * q2 + 2.0 * kap * qp,
            ]
        )

    t, y = _rk4_moments(f, initial_moments, horizon, dt, sample_times)
    return {"t": t, **{k: y[:, i] for i, k in enumerate(MOMENT_KEYS)}}


def coherent_density(basis: OscillatorBasis, q0: float, p0: float) -> DensityMatrix:
    """|alpha><alpha| in the number basis for the basis oscillator."""
    scale_q = math.sqrt(basis.mass * basis.omega_b / (2.0 * basis.hbar))
    alpha = scale_q * q0 + 1j * p0 / (2.0 * basis.hbar * scale_q)
    n = np.arange(basis.dim)
    log_fact = np.concatenate([[0.0], np.cumsum(np.log(np.arange(1, basis.dim)))])
    with np.errstate(divide="ignore"):
        amps = np.exp(-0.5 * abs(alpha) ** 2 + n * np.log(alpha if alpha != 0 else 1.0) - 0.5 * log_fact)
    if alpha == 0:
        amps = np.zeros(basis.dim, dtype=complex)
        amps[0] = 1.0
    amps = amps.astype(complex)
    amps /= np.linalg.norm(amps)
    return DensityMatrix(basis, np.outer(amps, amps.conj()))


def squeezed_vacuum_density(basis: OscillatorBasis, squeeze_factor: float) -> DensityMatrix:
    """Position-squeezed vacuum: Delta q = sqrt(hbar/2 m omega_b)/squeeze_factor."""
    r = math.log(squeeze_factor)
    th = math.tanh(r)
    amps = np.zeros(basis.dim, dtype=complex)
    k = np.arange(basis.dim // 2)
    log_fact = np.concatenate([[0.0], np.cumsum(np.log(np.arange(1, basis.dim)))])
    # |sq> = cosh(r)^{-1/2} sum_k (-tanh r)^k sqrt((2k)!)/(2^k k!) |2k>
    log_coef = 0.5 * log_fact[2 * k] - k * math.log(2.0) - log_fact[k]
    amps[2 * k] = ((-th) ** k) * np.exp(log_coef)
    amps /= math.sqrt(math.cosh(r))
    norm = np.linalg.norm(amps)
    if abs(1.0 - norm**2) > 1e-5:
        raise TruncationError(
            f"squeezed state squeeze_factor={squeeze_factor} loses norm "
            f"{1 - norm**2:.2e} in dim={basis.dim}"
        )
    amps /= norm
    return DensityMatrix(basis, np.outer(amps, amps.conj()))


def squeezed_basis(squeeze_factor: float, dim: int, hbar: float, mass: float = 1.0, omega: float = 1.0) -> OscillatorBasis:
    """Basis whose vacuum is the position-squeezed state Delta q = sqrt(hbar/2 m omega)/s.

    Representing the squeezed state as the exact ground state of a stiffer
    oscillator avoids the slow number-basis tails of the squeeze expansion.
    """
    return OscillatorBasis(dim=dim, omega_b=squeeze_factor**2 * omega, hbar=hbar, mass=mass)


def find_positivity_violation(
    params: PhysicalParams,
    potential: PotentialSpec,
    dim: int = 60,
    squeeze_factors=(4, 8, 16, 32),
    horizon: float | None = None,
    dt: float = 2e-4,
    threshold: float = -1e-6,
):
    """Scripted search for a squeezed state that breaks positivity under the
    Markov generator within the memory time.

    Each squeeze factor is tried as the vacuum of its own stiffer basis.
    Returns (squeeze_factor, times, min_eigenvalues) for the first factor
    whose minimum eigenvalue dips below ``threshold``, or None.
    """
    if horizon is None:
        horizon = 1.0 / params.Lambda
    times = np.linspace(0.0, horizon, 21)[1:]
    for s in squeeze_factors:
        basis = squeezed_basis(s, dim, params.hbar, params.mass)
        rho0 = DensityMatrix(basis, np.zeros((dim, dim), dtype=complex))
        rho0.data[0, 0] = 1.0
        series = evolve_density(
            rho0,
            lambda r, t: liouvillian_qbm(r, t, params, potential),
            horizon,
            dt,
            sample_times=times,
        )
        mins = np.array([dm.min_eigenvalue() for _, dm in series])
        if mins.min() < threshold:
            return s, np.array([t for t, _ in series]), mins
    return None


def superoperator_matrix(params: PhysicalParams, potential: PotentialSpec, basis: OscillatorBasis, t: float = 0.0) -> np.ndarray:
    """Markov generator as a dim^2 x dim^2 matrix acting on vec(rho) (test utility)."""
    d = basis.dim
    eye = np.eye(d, dtype=complex)
    q, p = basis.q, basis.p
    h = basis.hamiltonian(potential, t)

    # row-major vec: vec(A X B) = kron(A, B.T) vec(X)
    def lmul(a):
        return np.kron(a, eye)

    def rmul(a):
        return np.kron(eye, a.T)

    comm_q = lmul(q) - rmul(q)
    anti_p = lmul(p) + rmul(p)
    out = (
        -1j * (lmul(h) - rmul(h))
        - 0.5j * params.gamma * comm_q @ anti_p
        - (params.mass * params.gamma * params.kT / params.hbar) * comm_q @ comm_q
    )
    return out / params.hbar
