"""Energy-aware leader election, census and approximate counting on a single-hop radio channel."""
from __future__ import annotations

from .channel import Channel, ModelKind, Transcript, derive_rng
from .circuit import Circuit, eval_circuit, parse_circuit, simulate_circuit
from .dense import DenseConfig, dense_census, dense_leader_election
from .deterministic import det_census, det_leader_election
from .errors import (ConfigError, EmptyInput, InvalidCircuit, InvalidSchedule, ModelUnsupported,
                     PreconditionViolated, RadioNetError)
from .harness import Scenario, aggregate, run_scenario
from .randomized import (assign_ids, estimate_network_size, exponential_search, make_schedule,
                         test_network_size, trivial_algorithm)

__all__ = [
    "Channel", "ModelKind", "Transcript", "derive_rng",
    "Circuit", "eval_circuit", "parse_circuit", "simulate_circuit",
    "DenseConfig", "dense_census", "dense_leader_election",
    "det_census", "det_leader_election",
    "ConfigError", "EmptyInput", "InvalidCircuit", "InvalidSchedule", "ModelUnsupported",
    "PreconditionViolated", "RadioNetError",
    "Scenario", "aggregate", "run_scenario",
    "assign_ids", "estimate_network_size", "exponential_search", "make_schedule",
    "test_network_size", "trivial_algorithm",
]
