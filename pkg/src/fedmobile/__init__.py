"""Discrete-time simulator for mobility-assisted asynchronous federated learning."""
from .analysis import C, D, BoundParams, prop1_scan, q_analytic_fixed_interval, q_meet_monte_carlo, theorem1_bound
from .config import ExperimentConfig
from .learning import SyntheticTask, gen_synthetic, minibatch_grad
from .mobility import (
    MeetingSchedule,
    PeerContactTrace,
    gen_fixed_interval_schedule,
    gen_peer_contacts,
    gen_random_interval_schedule,
)
from .simulator import RunMetrics, VariantKind, VariantSpec, run

__version__ = "0.1.0"
