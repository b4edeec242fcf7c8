"""tordiff: ergodic diffusions on the torus.

Simulation and approximate maximum-likelihood fitting of the
wrapped-normal (WN) process, three transition-density approximations
(Euler, Shoji-Ozaki, WOU), a Fokker-Planck ground-truth oracle with a
KL benchmark harness, and a pairwise evolutionary HMM that emits the
WN process per hidden state.
"""

from .diffusion import (
    WNParams,
    build_drift_matrix,
    gamma_t,
    langevin_drift,
    mat_exp_2x2,
    stationary_cov,
    vm_drift,
    wn_drift,
    wn_drift_jacobian,
)
from .exceptions import ConfigError, NumericError
from .torus import (
    angular_distance,
    default_truncation,
    lattice,
    winding_weights,
    wn_density,
    wn_log_density,
    wrap,
)
from .tpd import (
    TpdKind,
    Trajectory,
    euler_tpd,
    sample_stationary,
    sample_wou,
    shoji_ozaki_tpd,
    simulate_euler,
    so_moments,
    wou_tpd,
)

__version__ = "0.1.0"

__all__ = [
    "WNParams",
    "build_drift_matrix",
    "stationary_cov",
    "langevin_drift",
    "wn_drift",
    "wn_drift_jacobian",
    "vm_drift",
    "mat_exp_2x2",
    "gamma_t",
    "wrap",
    "angular_distance",
    "lattice",
    "default_truncation",
    "wn_density",
    "wn_log_density",
    "winding_weights",
    "TpdKind",
    "Trajectory",
    "euler_tpd",
    "shoji_ozaki_tpd",
    "wou_tpd",
    "so_moments",
    "simulate_euler",
    "sample_wou",
    "sample_stationary",
    "ConfigError",
    "NumericError",
]
