"""Stake-evolution Markov chain under the Poly(alpha) voting rule.

Each round a single unit of stake is handed out. Bidder ``k`` receives it
with probability ``n_k / N**(1 + alpha)`` (its *voting power*) and nobody
receives it with probability ``1 - N**(-alpha)``. With ``alpha = 0`` this is
the classical Polya urn.

Sampling uses exactly one uniform variate per round, compared against the
cumulative outcome vector ``(winner 0, ..., winner K-1, none)``. The scalar
:func:`step` and the compiled trajectory kernel share the same selection
routine, so a trajectory replayed round by round with :func:`step` is
bit-identical to :func:`simulate_trajectory` on the same stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

__all__ = [
    "InvalidStateError",
    "ProtocolParams",
    "SystemState",
    "StepOutcome",
    "Trajectory",
    "shares",
    "voting_powers",
    "transition",
    "step",
    "simulate_trajectory",
    "record_times",
    "run_kernel",
]


class InvalidStateError(ValueError):
    """Raised for parameter sets or states that violate the chain invariants."""


@dataclass(frozen=True)
class ProtocolParams:
    """Exponent, bidder count and initial stakes defining the chain."""

    alpha: float
    initial_stakes: tuple[float, ...]

    def __init__(self, alpha: float, initial_stakes: Sequence[float]):
        stakes = tuple(float(s) for s in initial_stakes)
        object.__setattr__(self, "alpha", float(alpha))
        object.__setattr__(self, "initial_stakes", stakes)
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise InvalidStateError(f"alpha must be >= 0, got {alpha}")
        if len(stakes) < 1:
            raise InvalidStateError("need at least one bidder")
        if any(not np.isfinite(s) or s <= 0 for s in stakes):
            raise InvalidStateError(f"initial stakes must be > 0, got {stakes}")
        # N0 >= 1 keeps the increment probability N**(-alpha) <= 1
        if sum(stakes) < 1:
            raise InvalidStateError(f"total initial stake must be >= 1, got {sum(stakes)}")

    @property
    def num_bidders(self) -> int:
        return len(self.initial_stakes)

    @property
    def initial_volume(self) -> float:
        return float(sum(self.initial_stakes))

    def initial_state(self) -> "SystemState":
        return SystemState(0, np.array(self.initial_stakes), self.initial_volume)


@dataclass
class SystemState:
    """Round index, per-bidder stakes and total volume ``N_t``."""

    t: int
    stakes: np.ndarray
    volume: float

    def __post_init__(self):
        self.stakes = np.asarray(self.stakes, dtype=np.float64)

    def validate(self) -> None:
        if self.volume <= 0:
            raise InvalidStateError("volume must be positive")
        if np.any(self.stakes < 0):
            raise InvalidStateError("stakes must be nonnegative")
        total = float(self.stakes.sum())
        if abs(total - self.volume) > 1e-12 * max(1.0, self.volume):
            raise InvalidStateError(f"volume {self.volume} != sum of stakes {total}")

    def copy(self) -> "SystemState":
        return SystemState(self.t, self.stakes.copy(), self.volume)


@dataclass(frozen=True)
class StepOutcome:
    """Result of one round; ``winner is None`` means nobody was rewarded."""

    winner: int | None


@dataclass
class Trajectory:
    """Recorded states of one simulated path.

    ``times``, ``volumes`` and ``stakes`` are parallel arrays; ``stakes`` has
    shape ``(len(times), K)``.
    """

    params: ProtocolParams
    seed: int
    times: np.ndarray
    volumes: np.ndarray
    stakes: np.ndarray
    stride: int = 1
    wins: np.ndarray = field(default=None, repr=False)

    @property
    def final_state(self) -> SystemState:
        return SystemState(int(self.times[-1]), self.stakes[-1].copy(), float(self.volumes[-1]))

    def records(self):
        """Yield ``(t, volume, stakes)`` tuples in time order."""
        for t, v, s in zip(self.times, self.volumes, self.stakes):
            yield int(t), float(v), s


def shares(state: SystemState) -> np.ndarray:
    """Bidder shares ``pi_k = n_k / N``."""
    if state.volume <= 0:
        raise InvalidStateError("volume must be positive to form shares")
    return state.stakes / state.volume


def voting_powers(state: SystemState, alpha: float) -> np.ndarray:
    """Per-round win probabilities ``theta_k = n_k / N**(1 + alpha)``."""
    if alpha < 0:
        raise InvalidStateError(f"alpha must be >= 0, got {alpha}")
    if state.volume <= 0:
        raise InvalidStateError("volume must be positive")
    return state.stakes / state.volume ** (1.0 + alpha)


@njit(nogil=True, cache=True)
def _select(stakes, inc, scale, u):
    # inc = N**(-alpha), scale = N**(1+alpha); the "none" mass sits on top
    if u >= inc:
        return -1
    scaled = u * scale
    acc = 0.0
    last = -1
    for k in range(stakes.shape[0]):
        if stakes[k] > 0.0:
            acc += stakes[k]
            last = k
            if scaled < acc:
                return k
    # rounding drift between sum(stakes) and N: fall back to last live bidder
    return last


def transition(state: SystemState, params: ProtocolParams, u: float) -> tuple[SystemState, StepOutcome]:
    """Deterministic transition driven by a given uniform ``u`` in [0, 1)."""
    alpha = params.alpha
    inc = state.volume ** (-alpha)
    scale = state.volume ** (1.0 + alpha)
    w = int(_select(state.stakes, inc, scale, u))
    nxt = SystemState(state.t + 1, state.stakes.copy(), state.volume)
    if w < 0:
        return nxt, StepOutcome(None)
    nxt.stakes[w] += 1.0
    nxt.volume += 1.0
    return nxt, StepOutcome(w)


def step(state: SystemState, params: ProtocolParams, rng: np.random.Generator) -> tuple[SystemState, StepOutcome]:
    """Advance one round, consuming exactly one uniform from ``rng``."""
    return transition(state, params, rng.random())


@njit(nogil=True, cache=True)
def run_kernel(stakes, volume, alpha, horizon, times, rng, out_vol, out_stakes, out_wins):
    """Run ``horizon`` rounds in place, recording at the sorted ``times``.

    ``stakes`` is mutated. ``out_wins[k]`` counts rounds won by bidder ``k``.
    Returns the final volume.
    """
    n_rec = times.shape[0]
    r = 0
    if n_rec > 0 and times[0] == 0:
        out_vol[0] = volume
        out_stakes[0, :] = stakes
        r = 1
    inc = volume ** (-alpha)
    scale = volume ** (1.0 + alpha)
    for t in range(1, horizon + 1):
        u = rng.random()
        w = _select(stakes, inc, scale, u)
        if w >= 0:
            stakes[w] += 1.0
            volume += 1.0
            out_wins[w] += 1
            inc = volume ** (-alpha)
            scale = volume ** (1.0 + alpha)
        if r < n_rec and times[r] == t:
            out_vol[r] = volume
            out_stakes[r, :] = stakes
            r += 1
    return volume


def record_times(horizon: int, stride: int) -> np.ndarray:
    """Every ``stride``-th round from 0, plus the final round."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    times = np.arange(0, horizon + 1, stride, dtype=np.int64)
    if times[-1] != horizon:
        times = np.append(times, np.int64(horizon))
    return times


def simulate_trajectory(
    params: ProtocolParams,
    horizon: int,
    seed: int | np.random.Generator,
    stride: int = 1,
    times: Sequence[int] | None = None,
) -> Trajectory:
    """Simulate ``horizon`` rounds from the initial state.

    Args:
        params: chain definition.
        horizon: number of rounds to run.
        seed: integer seed, or an existing generator (consumed in place).
        stride: recording stride; the final state is always recorded.
        times: explicit sorted record times overriding ``stride``.
    """
    if isinstance(seed, np.random.Generator):
        rng, seed_val = seed, -1
    else:
        rng, seed_val = np.random.default_rng(seed), int(seed)
    if times is None:
        rec = record_times(horizon, stride)
    else:
        rec = np.asarray(sorted(set(int(t) for t in times)), dtype=np.int64)
        if rec.size == 0 or rec[0] < 0 or rec[-1] > horizon:
            raise ValueError("record times must lie in [0, horizon]")
    K = params.num_bidders
    stakes = np.array(params.initial_stakes, dtype=np.float64)
    out_vol = np.empty(rec.size)
    out_stakes = np.empty((rec.size, K))
    wins = np.zeros(K, dtype=np.int64)
    run_kernel(stakes, params.initial_volume, params.alpha, int(horizon), rec, rng, out_vol, out_stakes, wins)
    return Trajectory(params, seed_val, rec, out_vol, out_stakes, stride, wins)
