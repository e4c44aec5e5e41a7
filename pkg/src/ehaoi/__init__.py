"""Age of Information under energy harvesting over an erasure channel."""

from .analysis import lower_bound
from .core import (
    AoiAccumulator,
    AttemptLog,
    BatteryState,
    DeliveryLog,
    EnergyCausalityError,
    EnergyTrace,
    aoi_brute_force,
    energy_step,
    finalize_aoi,
    record_delivery,
)
from .engine import ExperimentConfig, ExperimentResult, SimRecord, derive_stream, run_experiment, run_path
from .policies import PolicyDecision, PolicyView, bu_er_next, bu_next, greedy_next, make_policy

__version__ = "0.1.0"
