"""relaylab: analogue-relay forecasting lab for forced 2D turbulence.

Pseudo-spectral vorticity solver, state encoders, transition-database
relay rollouts with oracle probes, spectral diagnostics, and a CLI
harness for the evaluation and ablation grids.
"""

from .grid import Grid
from .solver import SolverConfig, Trajectory, generate_trajectory
from .encoders import EncoderSpec, PcaModel, cosine_distance, encode, fit_pca
from .relay import (RelayDatabase, RolloutConfig, RolloutResult,
                    build_database, nearest, persistence_rollout,
                    relay_rollout)
from .diagnostics import (bootstrap_ci, dynamics_cosine, enstrophy_spectrum,
                          relative_l2, spectral_relative_error)

__version__ = "0.1.0"

__all__ = [
    "Grid", "SolverConfig", "Trajectory", "generate_trajectory",
    "EncoderSpec", "PcaModel", "cosine_distance", "encode", "fit_pca",
    "RelayDatabase", "RolloutConfig", "RolloutResult", "build_database",
    "nearest", "persistence_rollout", "relay_rollout",
    "bootstrap_ci", "dynamics_cosine", "enstrophy_spectrum", "relative_l2",
    "spectral_relative_error", "__version__",
]
