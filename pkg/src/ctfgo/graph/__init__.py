"""Time-centric graph: timeline, routing, fixed-lag smoother and online helpers."""

from .config import ConfigError, EstimatorConfig, PriorSigmas, SolverConfig
from .gate import ZeroVelocityGate, majority_stationary
from .ingest import IngestQueue
from .publisher import Publisher
from .smoother import (
    BufferOverflow,
    IllConditioned,
    LinearPrior,
    OptimizationReport,
    Smoother,
    SolverDiverged,
)
from .timeline import (
    DEFAULT_SPACING,
    DEFAULT_T_SYNC,
    NotInitialized,
    RoutingDecision,
    RoutingKind,
    StateTimeline,
    route_measurement,
)

__all__ = [
    "DEFAULT_SPACING",
    "DEFAULT_T_SYNC",
    "BufferOverflow",
    "ConfigError",
    "EstimatorConfig",
    "IllConditioned",
    "IngestQueue",
    "LinearPrior",
    "NotInitialized",
    "OptimizationReport",
    "PriorSigmas",
    "Publisher",
    "RoutingDecision",
    "RoutingKind",
    "Smoother",
    "SolverConfig",
    "SolverDiverged",
    "StateTimeline",
    "ZeroVelocityGate",
    "majority_stationary",
    "route_measurement",
]
