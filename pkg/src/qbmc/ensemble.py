"""Parallel trajectory ensembles and reconstruction of the reduced state.

Trajectories are embarrassingly parallel.  Work is split into fixed-size
chunks of consecutive trajectory indices; each chunk is computed with
per-trajectory counter-based noise streams and reduced internally in index
order, and the parent combines chunk partials with a fixed-order pairwise
tree.  Chunk boundaries depend only on (n_trajectories, chunk_size), never on
the worker count, so results are bit-identical regardless of parallelism
width.

Nonlinear-scheme ensembles average normalized projectors with unit weight;
linear-scheme ensembles weight each projector by its squared norm without
renormalizing the mean.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .model import GridSpec, PhysicalParams, PotentialSpec, WaveFunction, make_coherent_state
from .noise import MemoryCoefficients, covariance_factor, sample_noise, trajectory_rng
from .propagator import StepperConfig, TrajectoryError, run_trajectory
from .wigner import WignerGrid, conjugate_momentum_axis, wigner_of_state

__all__ = [
    "ExperimentSpec",
    "EnsembleConfig",
    "EnsembleStats",
    "CoarseDensity",
    "EnsembleError",
    "run_ensemble",
    "localization_metrics",
    "pairwise_tree_sum",
    "grouped_jackknife_se",
]

OBSERVABLE_FIELDS = ("mean_q", "mean_p", "mean_q2", "mean_p2", "delta_q", "delta_p", "uncert", "norm")


class EnsembleError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything a single trajectory needs, minus the noise realization."""

    params: PhysicalParams
    potential: PotentialSpec
    grid: GridSpec
    stepper: StepperConfig
    q0: float
    p0: float
    horizon: float
    sigma_q: float | None = None

    def initial_state(self) -> WaveFunction:
        return make_coherent_state(self.q0, self.p0, self.params, self.grid, self.sigma_q)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.stepper.dt))

    def typical_omega(self) -> float:
        return self.potential.omega if self.potential.variant == "harmonic" else 1.0


@dataclass(frozen=True)
class EnsembleConfig:
    n_trajectories: int
    master_seed: int = 0
    sample_times: tuple = ()
    accumulate_observables: bool = True
    accumulate_density: bool = False
    accumulate_wigner: bool = False
    snapshot_times: tuple = ()
    snapshot_trajectories: int = 0
    parallelism: int | None = None
    density_stride: int = 4
    chunk_size: int = 32
    keep_trajectory_observables: bool = False

    def __post_init__(self):
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")


@dataclass
class CoarseDensity:
    """Accumulated rho(q, q') on a coarsened grid."""

    grid: GridSpec
    matrix: np.ndarray = field(repr=False)
    hbar: float = 1.0

    def trace(self) -> float:
        return float(np.trace(self.matrix).real * self.grid.dq)

    def hermiticity_defect(self) -> float:
        return float(np.abs(self.matrix - self.matrix.conj().T).max())

    def min_eigenvalue(self) -> float:
        """Smallest eigenvalue of the trace-normalized discrete density."""
        m = 0.5 * (self.matrix + self.matrix.conj().T) * self.grid.dq
        return float(np.linalg.eigvalsh(m)[0])


@dataclass
class EnsembleStats:
    times: np.ndarray
    n_trajectories: int
    n_failed: int
    failures: tuple
    mean: dict
    se: dict
    weight_sum: np.ndarray
    weight_ess: np.ndarray
    n_leak_warnings: int
    n_weight_warnings: int
    rho: dict = field(default_factory=dict)
    wigner: dict = field(default_factory=dict)
    trajectory_snapshots: dict = field(default_factory=dict)
    per_trajectory: dict = field(default_factory=dict)


def pairwise_tree_sum(items):
    """Fixed-order pairwise reduction; deterministic and numerically stable."""
    items = list(items)
    if not items:
        raise ValueError("nothing to reduce")
    while len(items) > 1:
        merged = []
        for i in range(0, len(items) - 1, 2):
            merged.append(items[i] + items[i + 1])
        if len(items) % 2:
            merged.append(items[-1])
        items = merged
    return items[0]


def _coarsen(psi: WaveFunction, stride: int) -> WaveFunction:
    if stride == 1:
        return psi.normalized()
    grid = psi.grid
    coarse = GridSpec(grid.q_min, grid.q_max, grid.n // stride)
    return WaveFunction(coarse, psi.amps[::stride]).normalized()


# ---------------------------------------------------------------------------
# chunk worker

_CTX: dict = {}


def _init_worker(experiment, config, factor):
    _CTX["experiment"] = experiment
    _CTX["config"] = config
    _CTX["factor"] = factor
    _CTX["psi0"] = experiment.initial_state()


def _compute_chunk(bounds):
    start, stop = bounds
    exp: ExperimentSpec = _CTX["experiment"]
    cfg: EnsembleConfig = _CTX["config"]
    factor = _CTX["factor"]
    psi0 = _CTX["psi0"]
    n_steps = exp.n_steps
    want_grids = cfg.accumulate_density or cfg.accumulate_wigner
    grid_times = tuple(cfg.snapshot_times) if cfg.snapshot_times else ((exp.horizon,) if want_grids or cfg.snapshot_trajectories else ())

    series = {k: [] for k in OBSERVABLE_FIELDS}
    weights = []
    failures = []
    n_leak = 0
    n_weight = 0
    rho_sum: dict = {}
    wig_sum: dict = {}
    snapshots: dict = {}
    coeffs = MemoryCoefficients(exp.params)
    for idx in range(start, stop):
        rng = trajectory_rng(cfg.master_seed, idx)
        noise = sample_noise(n_steps, exp.stepper.dt, exp.params, rng, stream_id=(cfg.master_seed, idx), factor=factor)
        try:
            rec = run_trajectory(
                psi0,
                noise,
                exp.stepper,
                coeffs,
                exp.potential,
                exp.params,
                cfg.sample_times,
                snapshot_times=grid_times,
                trajectory_index=idx,
            )
        except TrajectoryError as err:
            failures.append((idx, str(err)))
            continue
        series["mean_q"].append(rec.mean_q)
        series["mean_p"].append(rec.mean_p)
        series["mean_q2"].append(rec.mean_q2)
        series["mean_p2"].append(rec.mean_p2)
        series["delta_q"].append(rec.delta_q)
        series["delta_p"].append(rec.delta_p)
        series["uncert"].append(rec.uncertainty)
        series["norm"].append(rec.norm)
        weights.append(rec.weight)
        n_leak += rec.n_leak_warnings
        n_weight += rec.n_weight_warnings
        if grid_times:
            for t_snap, (psi, w_snap) in rec.snapshots.items():
                psi_c = _coarsen(psi, cfg.density_stride)
                if cfg.accumulate_density:
                    contrib = w_snap * np.outer(psi_c.amps, np.conj(psi_c.amps))
                    if t_snap in rho_sum:
                        rho_sum[t_snap] += contrib
                    else:
                        rho_sum[t_snap] = contrib
                if cfg.accumulate_wigner:
                    wg = wigner_of_state(psi_c, exp.params.hbar)
                    if t_snap in wig_sum:
                        wig_sum[t_snap] += w_snap * wg.values
                    else:
                        wig_sum[t_snap] = w_snap * wg.values
                if idx < cfg.snapshot_trajectories:
                    snapshots.setdefault(idx, {})[t_snap] = psi_c
    return {
        "start": start,
        "count": stop - start,
        "series": {k: np.array(v) for k, v in series.items()},
        "weights": np.array(weights),
        "failures": failures,
        "n_leak": n_leak,
        "n_weight": n_weight,
        "rho_sum": rho_sum,
        "wig_sum": wig_sum,
        "snapshots": snapshots,
    }


def _weighted_stats(x: np.ndarray, w: np.ndarray):
    """Weighted mean and its standard error (ratio-estimator variance)."""
    wsum = w.sum(axis=0)
    mean = (w * x).sum(axis=0) / wsum
    if x.shape[0] < 2:
        return mean, np.full_like(mean, np.nan)
    resid = x - mean[None, :]
    var_ratio = (w**2 * resid**2).sum(axis=0) / wsum**2
    ess = wsum**2 / (w**2).sum(axis=0)
    se = np.sqrt(var_ratio * ess / np.maximum(ess - 1.0, 1e-300))
    return mean, se


def grouped_jackknife_se(x: np.ndarray, w: np.ndarray, n_groups: int = 50):
    """Delete-group jackknife for the weighted ratio estimator sum(w x)/sum(w).

    The linearized (delta-method) standard error underestimates badly once the
    importance weights degenerate (heavy-tailed w); the jackknife tracks the
    estimator's actual sampling spread.  Groups are contiguous trajectory-index
    blocks, so the result is deterministic.  Returns (mean, se) per column.
    """
    n = x.shape[0]
    b = min(n_groups, n)
    tot_wx = (w * x).sum(axis=0)
    tot_w = w.sum(axis=0)
    theta = tot_wx / tot_w
    if n < 2:
        return theta, np.full_like(theta, np.nan)
    thetas = []
    for group in np.array_split(np.arange(n), b):
        wx_g = (w[group] * x[group]).sum(axis=0)
        w_g = w[group].sum(axis=0)
        thetas.append((tot_wx - wx_g) / (tot_w - w_g))
    thetas = np.array(thetas)
    se = np.sqrt((b - 1) / b * ((thetas - thetas.mean(axis=0)) ** 2).sum(axis=0))
    return theta, se


def run_ensemble(config: EnsembleConfig, experiment: ExperimentSpec) -> EnsembleStats:
    """Run ``config.n_trajectories`` independent trajectories and reduce them.

    Fails with :class:`EnsembleError` when more than 1% of trajectories abort.
    """
    experiment.stepper.validate_dt(experiment.params)
    experiment.params.check_regime(experiment.typical_omega())
    n = config.n_trajectories
    sample_times = tuple(config.sample_times) if len(config.sample_times) else (experiment.horizon,)
    config = replace(config, sample_times=sample_times)
    factor = covariance_factor(experiment.n_steps, experiment.stepper.dt, experiment.params) if experiment.n_steps else np.zeros((0, 0))

    chunks = [(s, min(s + config.chunk_size, n)) for s in range(0, n, config.chunk_size)]
    width = config.parallelism if config.parallelism is not None else (os.cpu_count() or 1)
    if width > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(
            max_workers=min(width, len(chunks)),
            initializer=_init_worker,
            initargs=(experiment, config, factor),
        ) as pool:
            results = list(pool.map(_compute_chunk, chunks))
    else:
        _init_worker(experiment, config, factor)
        results = [_compute_chunk(c) for c in chunks]

    results.sort(key=lambda r: r["start"])
    failures = [f for r in results for f in r["failures"]]
    n_failed = len(failures)
    if n_failed > 0.01 * n:
        detail = "; ".join(msg for _, msg in failures[:5])
        raise EnsembleError(f"{n_failed}/{n} trajectories aborted: {detail}")

    kept = [r for r in results if r["series"]["mean_q"].size]
    series = {k: np.concatenate([r["series"][k] for r in kept], axis=0) for k in OBSERVABLE_FIELDS}
    weights = np.concatenate([r["weights"] for r in kept], axis=0)
    times = np.asarray(sample_times, dtype=float)

    mean, se = {}, {}
    for k in OBSERVABLE_FIELDS:
        mean[k], se[k] = _weighted_stats(series[k], weights)
    wsum = weights.sum(axis=0)
    ess = wsum**2 / (weights**2).sum(axis=0)

    stats = EnsembleStats(
        times=times,
        n_trajectories=n - n_failed,
        n_failed=n_failed,
        failures=tuple(failures),
        mean=mean,
        se=se,
        weight_sum=wsum,
        weight_ess=ess,
        n_leak_warnings=sum(r["n_leak"] for r in results),
        n_weight_warnings=sum(r["n_weight"] for r in results),
    )

    n_kept = n - n_failed
    if config.accumulate_density or config.accumulate_wigner:
        coarse = GridSpec(experiment.grid.q_min, experiment.grid.q_max, experiment.grid.n // config.density_stride)
        grid_times = sorted({t for r in results for t in list(r["rho_sum"]) + list(r["wig_sum"])})
        for t_snap in grid_times:
            if config.accumulate_density:
                parts = [r["rho_sum"][t_snap] for r in results if t_snap in r["rho_sum"]]
                rho = pairwise_tree_sum(parts) / n_kept
                stats.rho[t_snap] = CoarseDensity(coarse, 0.5 * (rho + rho.conj().T), experiment.params.hbar)
            if config.accumulate_wigner:
                parts = [r["wig_sum"][t_snap] for r in results if t_snap in r["wig_sum"]]
                values = pairwise_tree_sum(parts) / n_kept
                stats.wigner[t_snap] = WignerGrid(
                    q=coarse.q,
                    p=conjugate_momentum_axis(coarse, experiment.params.hbar),
                    values=values,
                    hbar=experiment.params.hbar,
                )

    for r in results:
        stats.trajectory_snapshots.update(r["snapshots"])
    if config.keep_trajectory_observables:
        stats.per_trajectory = {**series, "weight": weights}
    return stats


def localization_metrics(stats: EnsembleStats) -> dict:
    """Trajectory-level localization series: M[Delta q], M[Delta p], M[Dq Dp / hbar].

    These are means of square roots (not square roots of means): they are
    properties of individual trajectories with no density-operator
    counterpart.
    """
    return {
        "t": stats.times,
        "m_dq": stats.mean["delta_q"],
        "se_m_dq": stats.se["delta_q"],
        "m_dp": stats.mean["delta_p"],
        "se_m_dp": stats.se["delta_p"],
        "m_uncert": stats.mean["uncert"],
        "se_m_uncert": stats.se["uncert"],
    }
