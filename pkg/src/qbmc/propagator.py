"""Time stepping of a single quantum trajectory.

Per step the evolution is split as

    (a) half kinetic      exp(-i p^2 dt / (4 m hbar))
    (b) full potential    exp(-i (V(q, t+dt/2) + c2(t) q^2) dt / hbar)
    (c) stochastic+damping substep
    (d) half kinetic

Every non-Hamiltonian term is polynomial in q and linear in p, so substep (c)
is a diagonal exponential in position space sandwiched around a first-order
Euler update of the p-linear (spectrally applied) part.  The colored noise is
a smooth pathwise signal on the memory scale 1/Lambda, so each trajectory is
an ordinary PDE integrated with deterministic-stepper semantics.

Schemes:
  * ``nonlinear_full``       time-dependent coefficients, renormalized
  * ``nonlinear_asymptotic`` coefficients frozen at their limits, no q^2 term
  * ``linear``               unnormalized; the squared norm is the ensemble weight
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (
    GridSpec,
    Observables,
    PhysicalParams,
    PotentialSpec,
    WaveFunction,
    apply_kinetic_half,
    apply_potential,
    observables,
)
from .noise import MemoryCoefficients, NoisePath

__all__ = [
    "StepperConfig",
    "TrajectoryRecord",
    "TrajectoryError",
    "AsymptoticCoefficients",
    "step_nonlinear",
    "step_linear",
    "run_trajectory",
]

SCHEMES = ("nonlinear_full", "nonlinear_asymptotic", "linear")
LEAK_TOL = 1e-6
LINEAR_NORM2_WINDOW = (1e-4, 1e4)


class TrajectoryError(RuntimeError):
    def __init__(self, message: str, step: int = -1, t: float = np.nan, norm_history=()):
        super().__init__(message)
        self.step = step
        self.t = t
        self.norm_history = tuple(norm_history)


@dataclass(frozen=True)
class StepperConfig:
    dt: float
    scheme: str = "nonlinear_full"
    mean_q_dot_mode: str = "p_over_m"
    renormalize: bool | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.mean_q_dot_mode not in ("p_over_m", "finite_difference"):
            raise ValueError(f"unknown mean_q_dot_mode {self.mean_q_dot_mode!r}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        # renormalization is not a free choice: forced on for the nonlinear
        # schemes and off for the linear one
        forced = self.scheme != "linear"
        if self.renormalize is None:
            object.__setattr__(self, "renormalize", forced)
        elif self.renormalize != forced:
            raise ValueError(f"scheme {self.scheme} requires renormalize={forced}")

    def validate_dt(self, params: PhysicalParams) -> None:
        bound = 0.1 / params.Lambda
        if self.dt > bound:
            raise ValueError(
                f"dt={self.dt} exceeds the memory resolution bound 0.1/Lambda={bound:.3g}"
            )


class AsymptoticCoefficients:
    """Memory coefficients frozen at their large-time limits (post-slip form)."""

    def __init__(self, params: PhysicalParams):
        self._inner = MemoryCoefficients(params)

    def g0(self, t):
        return np.broadcast_to(self._inner.g0_inf, np.shape(t)) if np.ndim(t) else self._inner.g0_inf

    def g1(self, t):
        return np.broadcast_to(self._inner.g1_inf, np.shape(t)) if np.ndim(t) else self._inner.g1_inf

    def q2_coefficient(self, t):
        return np.zeros(np.shape(t)) if np.ndim(t) else 0.0

    @property
    def g0_inf(self):
        return self._inner.g0_inf

    @property
    def g1_inf(self):
        return self._inner.g1_inf


def _spectral_ddq(amps: np.ndarray, grid: GridSpec) -> np.ndarray:
    k = grid.wavenumbers()
    return np.fft.ifft(1j * k * np.fft.fft(amps))


def _stochastic_substep(
    psi: WaveFunction,
    z_value: complex,
    dt: float,
    g0_t: complex,
    g1_t: complex,
    params: PhysicalParams,
    obs: Observables,
    mean_q_dot: float,
) -> WaveFunction:
    """Substep (c) for the nonlinear schemes: centered noise, localization and damping."""
    hbar = params.hbar
    q = psi.grid.q
    qc = q - obs.mean_q
    img1 = g1_t.imag
    diag = (
        qc * z_value
        - g0_t.real * (qc**2 - obs.var_q)
        + 1j * img1 * (params.mass * mean_q_dot * q - obs.mean_qp)
    ) / hbar
    drift_coeff = img1 * qc
    if params.include_re_g1:
        # restored first-moment real part, in normalized-linear form
        diag = diag + g1_t.real * (-obs.mean_qp.real) / hbar
        drift_coeff = drift_coeff - 1j * g1_t.real * q
    half = np.exp(0.5 * dt * diag)
    amps = half * psi.amps
    amps = amps + dt * drift_coeff * _spectral_ddq(amps, psi.grid)
    amps = half * amps
    return WaveFunction(psi.grid, amps)


def step_nonlinear(
    psi: WaveFunction,
    z_value: complex,
    t: float,
    dt: float,
    coeffs,
    potential: PotentialSpec,
    params: PhysicalParams,
    mean_q_dot: float | None = None,
) -> WaveFunction:
    """One step of the normalized stochastic equation.

    ``z_value`` is the (optionally shifted) noise sample for this step.
    ``mean_q_dot`` overrides the default replacement d<q>/dt -> <p>/m.
    ``coeffs`` provides g0(t), g1(t), q2_coefficient(t); pass
    :class:`AsymptoticCoefficients` for the post-slip frozen form.
    """
    psi = apply_kinetic_half(psi, 0.5 * dt, params)
    tm = t + 0.5 * dt
    psi = apply_potential(psi, dt, tm, potential, params, extra_q2_coeff=float(coeffs.q2_coefficient(tm)))
    obs = observables(psi, params.hbar)
    if mean_q_dot is None:
        mean_q_dot = obs.mean_p / params.mass
    psi = _stochastic_substep(psi, z_value, dt, complex(coeffs.g0(tm)), complex(coeffs.g1(tm)), params, obs, mean_q_dot)
    psi = psi.normalized()
    return apply_kinetic_half(psi, 0.5 * dt, params)


def step_linear(
    psi: WaveFunction,
    z_value: complex,
    t: float,
    dt: float,
    coeffs,
    potential: PotentialSpec,
    params: PhysicalParams,
) -> WaveFunction:
    """One step of the linear (unnormalized) equation.

    The Hamiltonian carries the counter-term m gamma Lambda q^2 / 2; the memory
    integral contributes -(g0(t) q - g1(t) p) q-prefactored, i.e.
    -g0 q^2 + g1 q p.  The squared norm is the trajectory's statistical weight
    and is left untouched.
    """
    hbar = params.hbar
    psi = apply_kinetic_half(psi, 0.5 * dt, params)
    tm = t + 0.5 * dt
    counter = 0.5 * params.mass * params.gamma * params.Lambda
    psi = apply_potential(psi, dt, tm, potential, params, extra_q2_coeff=counter)
    q = psi.grid.q
    g0_t = complex(coeffs.g0(tm))
    g1_t = complex(coeffs.g1(tm))
    if not params.include_re_g1:
        g1_t = 1j * g1_t.imag
    diag = (q * z_value - g0_t * q**2) / hbar
    drift_coeff = -1j * g1_t * q  # from + g1 q p / hbar with p applied spectrally
    half = np.exp(0.5 * dt * diag)
    amps = half * psi.amps
    amps = amps + dt * drift_coeff * _spectral_ddq(amps, psi.grid)
    amps = half * amps
    psi = WaveFunction(psi.grid, amps)
    return apply_kinetic_half(psi, 0.5 * dt, params)


@dataclass
class TrajectoryRecord:
    """Sampled time series of one trajectory plus optional state snapshots."""

    times: np.ndarray
    mean_q: np.ndarray
    mean_p: np.ndarray
    var_q: np.ndarray
    var_p: np.ndarray
    norm: np.ndarray
    weight: np.ndarray
    mean_qp: np.ndarray
    stream_id: tuple = ()
    snapshots: dict = field(default_factory=dict)  # t -> (WaveFunction, weight)
    n_leak_warnings: int = 0
    n_weight_warnings: int = 0
    hbar: float = 1.0

    @property
    def delta_q(self) -> np.ndarray:
        return np.sqrt(self.var_q)

    @property
    def delta_p(self) -> np.ndarray:
        return np.sqrt(self.var_p)

    @property
    def uncertainty(self) -> np.ndarray:
        """Delta q * Delta p / hbar."""
        return self.delta_q * self.delta_p / self.hbar

    @property
    def mean_q2(self) -> np.ndarray:
        return self.var_q + self.mean_q**2

    @property
    def mean_p2(self) -> np.ndarray:
        return self.var_p + self.mean_p**2


def _as_step_indices(times, dt: float, n_steps: int, what: str) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    idx = np.round(times / dt).astype(int)
    if np.any(np.abs(idx * dt - times) > 1e-9 * max(dt, 1.0)):
        raise ValueError(f"{what} must lie on the step grid (dt={dt})")
    if np.any(idx < 0) or np.any(idx > n_steps):
        raise ValueError(f"{what} outside the propagated horizon")
    if np.any(np.diff(idx) <= 0) and len(idx) > 1:
        raise ValueError(f"{what} must be strictly increasing")
    return idx


def run_trajectory(
    initial: WaveFunction,
    noise: NoisePath,
    config: StepperConfig,
    coeffs,
    potential: PotentialSpec,
    params: PhysicalParams,
    sample_times,
    snapshot_times=(),
    trajectory_index: int | None = None,
) -> TrajectoryRecord:
    """Propagate one trajectory and record observables at ``sample_times``.

    Deterministic for fixed inputs.  The noise path must cover every step up
    to the last sample time.
    """
    dt = config.dt
    sample_idx = _as_step_indices(sample_times, dt, noise.n_steps, "sample_times")
    snap_idx = _as_step_indices(snapshot_times, dt, noise.n_steps, "snapshot_times") if len(snapshot_times) else np.array([], dtype=int)
    n_steps = int(sample_idx.max()) if len(sample_idx) else 0
    if len(snap_idx):
        n_steps = max(n_steps, int(snap_idx.max()))
    if n_steps > noise.n_steps:
        raise ValueError("noise path does not cover the trajectory horizon")

    linear = config.scheme == "linear"
    if config.scheme == "nonlinear_asymptotic":
        coeffs = AsymptoticCoefficients(params)
    hbar = params.hbar
    lam = params.Lambda
    # alpha*(tau -> 0+) for the exponential-kernel shift recursion
    alpha_conj_peak = params.mass * params.gamma * lam * (params.kT + 0.5j * hbar * lam)
    decay = np.exp(-lam * dt)

    psi = initial.copy()
    rec: dict[str, list] = {k: [] for k in ("t", "q", "p", "vq", "vp", "norm", "w", "qp")}
    snapshots: dict[float, tuple[WaveFunction, float]] = {}
    norm_tail: list[float] = []
    n_leak = 0
    prev_mean_q = None
    shift_integral = 0.0 + 0.0j

    def record(i_step: int, obs: Observables):
        rec["t"].append(i_step * dt)
        rec["q"].append(obs.mean_q)
        rec["p"].append(obs.mean_p)
        rec["vq"].append(obs.var_q)
        rec["vp"].append(obs.var_p)
        rec["norm"].append(obs.norm)
        rec["w"].append(obs.norm**2 if linear else 1.0)
        rec["qp"].append(obs.mean_qp)

    sample_set = set(int(i) for i in sample_idx)
    snap_set = set(int(i) for i in snap_idx)
    shifted = params.noise_shift_mode == "shifted" and not linear
    finite_diff = config.mean_q_dot_mode == "finite_difference" and not linear
    # the shift recursion and the backward difference both need <q> every step
    track_every_step = shifted or finite_diff
    n_weight_warnings = 0

    def inspect(i_step: int):
        nonlocal n_leak, n_weight_warnings
        needed = track_every_step or i_step in sample_set or i_step in snap_set
        obs = observables(psi, hbar) if needed else None
        if i_step in sample_set:
            record(i_step, obs)
            if psi.boundary_leak() > LEAK_TOL:
                n_leak += 1
            if linear and not (LINEAR_NORM2_WINDOW[0] < obs.norm**2 < LINEAR_NORM2_WINDOW[1]):
                n_weight_warnings += 1
        if i_step in snap_set:
            # linear-scheme snapshots carry their squared norm as the weight
            w = psi.norm_squared() if linear else 1.0
            snapshots[i_step * dt] = (psi.normalized() if linear else psi.copy(), w)
        return obs

    obs = inspect(0)
    prev_mean_q = obs.mean_q if obs is not None else None
    for i in range(n_steps):
        t_i = i * dt
        z_eff = noise.z[i]
        if shifted:
            z_eff = z_eff + 2.0 * shift_integral.real / hbar
        try:
            if linear:
                psi = step_linear(psi, z_eff, t_i, dt, coeffs, potential, params)
            else:
                mean_q_dot = None
                if finite_diff and i > 0:
                    mean_q_dot = (obs.mean_q - prev_mean_q) / dt
                if obs is not None:
                    prev_mean_q = obs.mean_q
                psi = step_nonlinear(psi, z_eff, t_i, dt, coeffs, potential, params, mean_q_dot=mean_q_dot)
        except FloatingPointError as exc:
            prefix = "" if trajectory_index is None else f"trajectory {trajectory_index}: "
            raise TrajectoryError(
                f"{prefix}{exc} at step {i + 1} (t={t_i + dt:.6g})",
                step=i + 1,
                t=t_i + dt,
                norm_history=norm_tail[-10:],
            ) from exc
        obs_new = inspect(i + 1)
        if obs_new is not None:
            norm_tail.append(obs_new.norm)
            if len(norm_tail) > 16:
                del norm_tail[0]
        if shifted:
            # I(t) = int_0^t alpha*(t,s) <q>_s ds: trapezoid on the exact
            # exponential decay of the kernel
            shift_integral = decay * shift_integral + 0.5 * dt * alpha_conj_peak * (
                decay * obs.mean_q + obs_new.mean_q
            )
        obs = obs_new

    return TrajectoryRecord(
        times=np.array(rec["t"]),
        mean_q=np.array(rec["q"]),
        mean_p=np.array(rec["p"]),
        var_q=np.array(rec["vq"]),
        var_p=np.array(rec["vp"]),
        norm=np.array(rec["norm"]),
        weight=np.array(rec["w"]),
        mean_qp=np.array(rec["qp"]),
        stream_id=noise.stream_id,
        snapshots=snapshots,
        n_leak_warnings=n_leak,
        n_weight_warnings=n_weight_warnings,
        hbar=hbar,
    )
