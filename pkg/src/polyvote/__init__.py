"""Poly(alpha) stake voting: chain simulation, exact oracles, asymptotics and trading."""

from .chain import (
    InvalidStateError,
    ProtocolParams,
    StepOutcome,
    SystemState,
    Trajectory,
    shares,
    simulate_trajectory,
    step,
    transition,
    voting_powers,
)

__version__ = "0.1.0"

__all__ = [
    "InvalidStateError",
    "ProtocolParams",
    "StepOutcome",
    "SystemState",
    "Trajectory",
    "shares",
    "simulate_trajectory",
    "step",
    "transition",
    "voting_powers",
]
