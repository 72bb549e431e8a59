"""Exact laws and moment identities for small instances of the chain.

Everything here is computed by forward dynamic programming over the exact
transition probabilities, never by sampling. Oracles either return an exact
(double precision) answer or raise :class:`ResourceLimitError`.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass
from typing import Hashable

import numpy as np

from .chain import ProtocolParams, SystemState, voting_powers

__all__ = [
    "ResourceLimitError",
    "InternalConsistencyError",
    "DiscreteDistribution",
    "MomentReport",
    "volume_distribution",
    "joint_distribution",
    "enumerate_step",
    "conditional_share_mean",
    "conditional_power_mean",
    "exact_central_moments",
    "moment_recursion",
    "total_variation",
]

DEFAULT_HORIZON_LIMIT = 10_000
DEFAULT_STATE_LIMIT = 1_000_000


class ResourceLimitError(RuntimeError):
    """The exact computation would exceed its configured size limit."""


class InternalConsistencyError(AssertionError):
    """Two exact routes to the same quantity disagree."""


@dataclass
class DiscreteDistribution:
    """Finite probability table. ``support`` entries are unique."""

    support: list
    probabilities: np.ndarray

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        if len(self.support) != self.probabilities.size:
            raise ValueError("support and probabilities differ in length")

    def as_dict(self) -> dict:
        return dict(zip(self.support, self.probabilities.tolist()))

    def prob(self, state: Hashable) -> float:
        return self.as_dict().get(state, 0.0)

    def total(self) -> float:
        return float(self.probabilities.sum())

    def marginal_volume(self) -> "DiscreteDistribution":
        """Collapse stake-vector states onto their volume."""
        acc: dict[float, float] = defaultdict(float)
        for s, p in zip(self.support, self.probabilities):
            acc[float(sum(s))] += p
        keys = sorted(acc)
        return DiscreteDistribution(keys, [acc[k] for k in keys])

    def expect(self, fn) -> float:
        return float(sum(p * fn(s) for s, p in zip(self.support, self.probabilities)))

    def to_csv(self, fh=None) -> str:
        """Write ``state,probability`` rows; stake vectors are ``;``-joined."""
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf)
        w.writerow(["state", "probability"])
        for s, p in zip(self.support, self.probabilities):
            label = ";".join(f"{x:g}" for x in s) if isinstance(s, tuple) else f"{s:g}"
            w.writerow([label, repr(float(p))])
        return buf.getvalue() if fh is None else ""


@dataclass(frozen=True)
class MomentReport:
    """Moments of ``pi_{k,t}``; the central ones are taken about ``pi_{k,0}``."""

    t: int
    bidder: int
    mean: float
    variance: float
    mu3: float
    mu4: float


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def volume_distribution(N0: float, alpha: float, t: int, limit: int = DEFAULT_HORIZON_LIMIT) -> DiscreteDistribution:
    """Exact law of ``N_t`` started from ``N0``; support ``N0, ..., N0 + t``."""
    if N0 < 1:
        raise ValueError(f"N0 must be >= 1, got {N0}")
    if t < 0:
        raise ValueError("t must be >= 0")
    if t > limit:
        raise ResourceLimitError(f"t={t} exceeds horizon limit {limit}")
    levels = N0 + np.arange(t + 1, dtype=np.float64)
    up = levels ** (-alpha)
    mass = np.zeros(t + 1)
    mass[0] = 1.0
    for s in range(t):
        # after s rounds only levels 0..s are reachable
        moved = mass[: s + 1] * up[: s + 1]
        mass[: s + 1] -= moved
        mass[1 : s + 2] += moved
    keep = mass > 0
    return DiscreteDistribution(levels[keep].tolist(), mass[keep])


def enumerate_step(state: SystemState, alpha: float) -> list[tuple[float, SystemState]]:
    """All ``K + 1`` one-round outcomes with their probabilities.

    Zero-probability outcomes (dead bidders) are dropped.
    """
    theta = voting_powers(state, alpha)
    out = []
    stay = 1.0 - state.volume ** (-alpha)
    if stay > 0:
        out.append((stay, SystemState(state.t + 1, state.stakes.copy(), state.volume)))
    for k, th in enumerate(theta):
        if th > 0:
            s = state.stakes.copy()
            s[k] += 1.0
            out.append((float(th), SystemState(state.t + 1, s, state.volume + 1.0)))
    return out


def _joint_step(table: dict, alpha: float) -> dict:
    nxt: dict[tuple, float] = defaultdict(float)
    for stakes, p in table.items():
        N = float(sum(stakes))
        inc = N ** (-alpha)
        if inc < 1.0:
            nxt[stakes] += p * (1.0 - inc)
        scale = N ** (1.0 + alpha)
        for k, n in enumerate(stakes):
            if n > 0:
                moved = stakes[:k] + (n + 1,) + stakes[k + 1 :]
                nxt[moved] += p * n / scale
    return nxt


def _check_integer_stakes(params: ProtocolParams) -> tuple[int, ...]:
    stakes = params.initial_stakes
    if any(float(s) != int(s) for s in stakes):
        raise ValueError("joint law requires integer initial stakes")
    return tuple(int(s) for s in stakes)


def _joint_tables(params: ProtocolParams, t: int, limit: int):
    table = {_check_integer_stakes(params): 1.0}
    yield table
    for _ in range(t):
        table = _joint_step(table, params.alpha)
        if len(table) > limit:
            raise ResourceLimitError(f"joint law has {len(table)} states, limit is {limit}")
        yield table


def _as_distribution(table: dict) -> DiscreteDistribution:
    keys = sorted(table)
    return DiscreteDistribution(keys, [table[k] for k in keys])


def joint_distribution(params: ProtocolParams, t: int, limit: int = DEFAULT_STATE_LIMIT) -> DiscreteDistribution:
    """Exact law of the stake vector after ``t`` rounds (integer stakes only)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    table = None
    for table in _joint_tables(params, t, limit):
        pass
    return _as_distribution(table)


def conditional_share_mean(state: SystemState, k: int, alpha: float) -> float:
    """``E[pi_{k,t+1} | state]`` from the three-outcome decomposition.

    Outcomes: no reward, another bidder rewarded, bidder ``k`` rewarded.
    """
    N = state.volume
    n = float(state.stakes[k])
    if n == 0:
        return 0.0
    scale = N ** (1.0 + alpha)
    return (
        n / N * (1.0 - N ** (-alpha))
        + n / (N + 1.0) * (N - n) / scale
        + (n + 1.0) / (N + 1.0) * n / scale
    )


def conditional_power_mean(state: SystemState, k: int, alpha: float) -> float:
    """``E[theta_{k,t+1} | state] = theta_k (1 - N**-alpha + (N+1)**-alpha)``."""
    N = state.volume
    theta = float(state.stakes[k]) / N ** (1.0 + alpha)
    return theta * (1.0 - N ** (-alpha) + (N + 1.0) ** (-alpha))


def _recursion_increments(table: dict, k: int, alpha: float, pi0: float) -> tuple[float, float, float]:
    dv = d3 = d4 = 0.0
    for stakes, p in table.items():
        N = float(sum(stakes))
        x = stakes[k] / N
        q = 1.0 - x
        d = x - pi0
        w = p / N**alpha
        a1 = N + 1.0
        dv += w * x * q / a1**2
        # one-round increment of pi is -x/(N+1) w.p. q/N^a and q/(N+1) w.p. x/N^a
        d3 += w * (x * q * (1.0 - 2.0 * x) / a1**3 + 3.0 * d * x * q / a1**2)
        d4 += w * (
            (x**4 * q + x * q**4) / a1**4
            + 6.0 * d * d * (x * x * q + x * q * q) / a1**2
            + 4.0 * d * (x * q**3 - x**3 * q) / a1**3
        )
    return dv, d3, d4


def moment_recursion(params: ProtocolParams, t: int, k: int, limit: int = DEFAULT_STATE_LIMIT) -> tuple[float, float, float]:
    """Variance, third and fourth central moments of ``pi_{k,t}`` by recursion.

    Each round's increment is an expectation under the exact joint law at
    that round.
    """
    pi0 = params.initial_stakes[k] / params.initial_volume
    var = mu3 = mu4 = 0.0
    tables = _joint_tables(params, t, limit)
    table = next(tables)
    for nxt in tables:
        dv, d3, d4 = _recursion_increments(table, k, params.alpha, pi0)
        var += dv
        mu3 += d3
        mu4 += d4
        table = nxt
    return var, mu3, mu4


def exact_central_moments(
    params: ProtocolParams,
    t: int,
    k: int,
    limit: int = DEFAULT_STATE_LIMIT,
    tol: float = 1e-10,
) -> MomentReport:
    """Moments of ``pi_{k,t}`` from the joint law, cross-checked by recursion."""
    pi0 = params.initial_stakes[k] / params.initial_volume
    dist = joint_distribution(params, t, limit)
    mean = dist.expect(lambda s: s[k] / sum(s))
    direct = [dist.expect(lambda s, m=m: (s[k] / sum(s) - pi0) ** m) for m in (2, 3, 4)]
    recursive = moment_recursion(params, t, k, limit)
    for m, a, b in zip((2, 3, 4), direct, recursive):
        if abs(a - b) > tol:
            raise InternalConsistencyError(f"moment {m} at t={t}: direct {a!r} vs recursion {b!r}")
    return MomentReport(t, k, mean, *direct)
