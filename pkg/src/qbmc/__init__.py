"""Quantum trajectory Monte Carlo for high-temperature quantum Brownian motion.

A particle coupled to a thermal oscillator bath through its position is
propagated as an ensemble of stochastic pure-state trajectories driven by
colored complex Gaussian noise; the reduced density operator is the ensemble
mean of the trajectory projectors.  Built-in master-equation oracles validate
the reconstruction.
"""

__version__ = "0.1.0"

from .model import (
    GridOverflowError,
    GridSpec,
    PhysicalParams,
    PotentialSpec,
    WaveFunction,
    apply_kinetic_half,
    apply_potential,
    make_coherent_state,
    observables,
)
from .noise import (
    BathKernel,
    MemoryCoefficients,
    NoiseFactorizationError,
    NoisePath,
    covariance_factor,
    covariance_matrix,
    sample_noise,
    trajectory_rng,
)
from .propagator import (
    AsymptoticCoefficients,
    StepperConfig,
    TrajectoryError,
    TrajectoryRecord,
    run_trajectory,
    step_linear,
    step_nonlinear,
)
from .ensemble import (
    CoarseDensity,
    EnsembleConfig,
    EnsembleError,
    EnsembleStats,
    ExperimentSpec,
    localization_metrics,
    run_ensemble,
)
from .wigner import WignerGrid, conjugate_momentum_axis, wigner_of_density, wigner_of_state
from .oracle import (
    DensityMatrix,
    OscillatorBasis,
    evolve_density,
    find_positivity_violation,
    liouvillian_qbm,
    liouvillian_timedep,
    moment_ode_harmonic,
    moment_ode_timedep,
    squeezed_basis,
    squeezed_vacuum_density,
)

__all__ = [name for name in dir() if not name.startswith("_")]
