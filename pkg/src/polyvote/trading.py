"""Stake trading on top of the voting chain.

A focal bidder trades stakes against the rest of the market, which is
aggregated into a single counterparty holding ``N - n``. Trading never
changes the total volume, so the chain dynamics are untouched.

Timeline of round ``t >= 1`` for the focal bidder:

1. the voting round runs on the post-trade stakes of ``t - 1``, giving the
   pre-trade holding ``n'_t`` and volume ``N_t``;
2. the unit price moves from ``P_{t-1}`` to ``P_t``;
3. if the bidder exits at ``t`` it liquidates (``c_t = (1+r_free) b_{t-1} +
   n'_t P_t``), otherwise it picks ``(nu_t, b_t)`` and receives
   ``c_t = (1+r_free) b_{t-1} - b_t - nu_t P_t``.

Utility is the discounted cash flow ``sum_t delta**t c_t``. Non-participation
sells everything at time 0 for ``n_0 P_0``.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field

import numpy as np

from .chain import ProtocolParams, SystemState, transition
from .harness.streams import replication_rng

__all__ = [
    "ContractError",
    "PriceModel",
    "NoiseSpec",
    "MarketParams",
    "Strategy",
    "StopRule",
    "BidderPolicy",
    "Violation",
    "Observation",
    "LedgerRecord",
    "PortfolioLedger",
    "StrategyOutcome",
    "TradingDraws",
    "TradingBatch",
    "price_step",
    "validate_decision",
    "clamp_decision",
    "apply_trading_step",
    "liquidate",
    "exit_immediately",
    "pi_value",
    "utility",
    "cash_term",
    "builtin_strategy",
    "draw_trading_streams",
    "run_ledger",
    "simulate_batch",
]

FEAS_RTOL = 1e-12


class ContractError(RuntimeError):
    """A ledger operation was called outside its contract."""


class PriceModel(str, enum.Enum):
    CALIBRATED = "calibrated"
    INDEPENDENT_GEOMETRIC = "independent-geometric"


@dataclass(frozen=True)
class NoiseSpec:
    """Positive, mean-one price innovations.

    ``lognormal`` uses ``exp(sigma Z - sigma**2 / 2)``; ``degenerate`` is
    identically one.
    """

    kind: str = "lognormal"
    sigma: float = 0.05

    def __post_init__(self):
        if self.kind not in ("lognormal", "degenerate"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    def from_normal(self, z):
        if self.kind == "degenerate" or self.sigma == 0:
            return np.ones_like(np.asarray(z, dtype=np.float64))
        return np.exp(self.sigma * np.asarray(z) - 0.5 * self.sigma**2)

    def sample(self, rng: np.random.Generator, size=None):
        return self.from_normal(rng.standard_normal(size))

    def mean(self) -> float:
        return 1.0


@dataclass(frozen=True)
class MarketParams:
    r_free: float = 0.05
    r_cryp: float = 0.05
    p0: float = 1.0
    price_model: PriceModel = PriceModel.CALIBRATED
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self):
        object.__setattr__(self, "price_model", PriceModel(self.price_model))
        if self.r_free < 0 or self.r_cryp < 0:
            raise ValueError("rates must be >= 0")
        if self.p0 <= 0:
            raise ValueError("initial price must be positive")


def _advance_price(market: MarketParams, volume, price, alpha: float, xi):
    g = 1.0 + market.r_cryp
    if market.price_model is PriceModel.CALIBRATED:
        # E[N_{t+1} | N_t] = N_t + N_t**-alpha, so M = N P drifts by exactly g
        return g * volume * price / (volume + volume ** (-alpha)) * xi
    return price * g * xi


def price_step(market: MarketParams, volume, price, alpha: float, rng: np.random.Generator | None = None, *, xi=None):
    """Next unit price given the current volume and price.

    Pass either a generator (one innovation is drawn) or the innovation
    ``xi`` itself. Works elementwise on arrays.
    """
    if np.any(np.asarray(price) <= 0) or np.any(np.asarray(volume) < 1):
        raise ValueError("price must be positive and volume >= 1")
    if xi is None:
        if rng is None:
            raise ValueError("need rng or xi")
        xi = market.noise.sample(rng, np.shape(price) or None)
    out = _advance_price(market, volume, price, alpha, xi)
    if np.any(np.asarray(out) <= 0):
        raise ArithmeticError("price model produced a non-positive price")
    return out


class Violation(str, enum.Enum):
    NEGATIVE_CASH = "risk-free holding is negative"
    NEGATIVE_HOLDINGS = "negative holdings (shorting)"
    EXCEEDS_VOLUME = "holdings exceed total volume"
    NONZERO_AT_EXIT = "trade or risk-free holding at exit"


def validate_decision(pre_trade: float, volume: float, nu: float, b: float, at_exit: bool = False) -> Violation | None:
    """Check a decision against the no-shorting box; ``None`` means feasible."""
    if at_exit:
        return None if (nu == 0 and b == 0) else Violation.NONZERO_AT_EXIT
    if b < 0:
        return Violation.NEGATIVE_CASH
    held = pre_trade + nu
    slack = FEAS_RTOL * max(1.0, volume)
    if held < -slack:
        return Violation.NEGATIVE_HOLDINGS
    if held > volume + slack:
        return Violation.EXCEEDS_VOLUME
    return None


def clamp_decision(pre_trade, volume, nu, b, integer: bool = False):
    """Project ``(nu, b)`` into the feasible box. Elementwise on arrays."""
    nu = np.clip(nu, -np.asarray(pre_trade), np.asarray(volume) - pre_trade)
    if integer:
        # truncation toward zero keeps n' + nu between n' and a feasible target
        nu = np.trunc(nu)
    return nu, np.maximum(b, 0.0)


@dataclass
class LedgerRecord:
    t: int
    nu: float
    b: float
    price: float
    cash_flow: float
    pre_trade: float
    volume: float


@dataclass
class PortfolioLedger:
    """Per-round trading record of one bidder; record ``t`` sits at index ``t``."""

    initial_stake: float
    initial_volume: float
    p0: float
    r_free: float
    records: list[LedgerRecord] = field(default_factory=list)
    exit_time: int | None = None

    def __post_init__(self):
        if not self.records:
            self.records.append(LedgerRecord(0, 0.0, 0.0, self.p0, 0.0, self.initial_stake, self.initial_volume))

    @property
    def t(self) -> int:
        return self.records[-1].t

    @property
    def closed(self) -> bool:
        return self.exit_time is not None

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf)
        w.writerow(["t", "nu", "b", "price", "cash_flow", "stakes", "volume"])
        for r in self.records:
            w.writerow([r.t, repr(r.nu), repr(r.b), repr(r.price), repr(r.cash_flow), repr(r.pre_trade), repr(r.volume)])
        return buf.getvalue() if fh is None else ""


def apply_trading_step(ledger: PortfolioLedger, pre_trade: float, volume: float, nu: float, b: float, price: float) -> PortfolioLedger:
    """Append round ``t + 1`` with decision ``(nu, b)`` at ``price``."""
    if ledger.closed:
        raise ContractError("ledger already liquidated")
    v = validate_decision(pre_trade, volume, nu, b)
    if v is not None:
        raise ContractError(f"infeasible decision: {v.value}")
    b_prev = ledger.records[-1].b
    cash = (1.0 + ledger.r_free) * b_prev - b - nu * price
    ledger.records.append(LedgerRecord(ledger.t + 1, float(nu), float(b), float(price), float(cash), float(pre_trade), float(volume)))
    return ledger


def liquidate(ledger: PortfolioLedger, pre_trade: float, volume: float, price: float) -> float:
    """Exit at round ``t + 1``: sell all stakes and redeem the risk-free holding."""
    if ledger.closed:
        raise ContractError("ledger already liquidated")
    b_prev = ledger.records[-1].b
    cash = (1.0 + ledger.r_free) * b_prev + pre_trade * price
    t = ledger.t + 1
    ledger.records.append(LedgerRecord(t, 0.0, 0.0, float(price), float(cash), float(pre_trade), float(volume)))
    ledger.exit_time = t
    return cash


def exit_immediately(ledger: PortfolioLedger) -> float:
    """Non-participation: sell the initial stake at ``P_0`` and leave at time 0."""
    if ledger.closed or len(ledger.records) != 1:
        raise ContractError("non-participation must exit before any round")
    rec = ledger.records[0]
    rec.cash_flow = rec.pre_trade * rec.price
    ledger.exit_time = 0
    return rec.cash_flow


def pi_value(ledger: PortfolioLedger, t: int, delta: float) -> float:
    """Discounted value of pre-trade stakes at ``t`` minus discounted past trades."""
    if t < 0 or t > ledger.t or (ledger.closed and t > ledger.exit_time):
        raise ContractError(f"t={t} outside the recorded range")
    if t == 0:
        return ledger.initial_stake * ledger.p0
    rec = ledger.records
    past = sum(delta**j * rec[j].nu * rec[j].price for j in range(1, t))
    return delta**t * rec[t].pre_trade * rec[t].price - past


def utility(ledger: PortfolioLedger, delta: float) -> float:
    """Realised discounted cash flow through the exit time."""
    if not ledger.closed:
        raise ContractError("utility needs a liquidated ledger")
    return sum(delta**r.t * r.cash_flow for r in ledger.records[: ledger.exit_time + 1])


def cash_term(ledger: PortfolioLedger, delta: float) -> float:
    """``sum_{t < tau} delta**t ((1 + r_free) delta - 1) b_t``; zero when b never used."""
    if not ledger.closed:
        raise ContractError("needs a liquidated ledger")
    coef = (1.0 + ledger.r_free) * delta - 1.0
    return sum(delta**r.t * coef * r.b for r in ledger.records[1 : ledger.exit_time])


STRATEGY_KINDS = ("non-participation", "no-trading", "proportional-sell", "periodic-buy", "random-feasible")


@dataclass(frozen=True)
class Strategy:
    """Built-in trading rule.

    ``rate`` is the fraction sold per round (proportional-sell), ``amount`` and
    ``period`` the purchase size and spacing (periodic-buy), ``intensity`` the
    step size toward a random target holding (random-feasible).
    """

    kind: str = "no-trading"
    rate: float = 0.0
    amount: float = 0.0
    period: int = 1
    intensity: float = 0.0
    integer: bool = False

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy {self.kind!r}; choose from {STRATEGY_KINDS}")
        if not 0 <= self.rate <= 1:
            raise ValueError("rate must lie in [0, 1]")
        if self.period < 1:
            raise ValueError("period must be >= 1")
        if not 0 <= self.intensity <= 1:
            raise ValueError("intensity must lie in [0, 1]")

    @property
    def label(self) -> str:
        params = {
            "proportional-sell": f"({self.rate:g})",
            "periodic-buy": f"({self.amount:g})",
            "random-feasible": f"({self.intensity:g})",
        }
        return self.kind + params.get(self.kind, "")


@dataclass
class Observation:
    """What the bidder sees before deciding at round ``t`` (scalars or arrays)."""

    t: int
    pre_trade: object
    volume: object
    price: object
    b_prev: object


def builtin_strategy(strategy: Strategy, obs: Observation, draws=None):
    """Decision ``(nu, b)`` for one round, already clamped to the feasible box.

    ``draws`` holds two uniforms (last axis) from the strategy's own stream and
    is only read by ``random-feasible``.
    """
    n, N, P = obs.pre_trade, obs.volume, obs.price
    zeros = np.zeros_like(np.asarray(n, dtype=np.float64))
    kind = strategy.kind
    if kind in ("no-trading", "non-participation"):
        nu, b = zeros, zeros
    elif kind == "proportional-sell":
        nu, b = -strategy.rate * np.asarray(n), zeros
    elif kind == "periodic-buy":
        nu = zeros + (strategy.amount if obs.t % strategy.period == 0 else 0.0)
        b = zeros
    else:
        d = np.asarray(draws, dtype=np.float64)
        target = d[..., 0] * N
        nu = strategy.intensity * (target - n)
        b = strategy.intensity * d[..., 1] * n * P
    nu, b = clamp_decision(n, N, nu, b, strategy.integer)
    if np.ndim(nu) == 0:
        return float(nu), float(b)
    return nu, b


@dataclass(frozen=True)
class StopRule:
    """Exit rule; ``fixed`` waits for the terminal time, ``threshold`` exits early
    once the pre-trade share or the price crosses any configured level."""

    kind: str = "fixed"
    share_above: float | None = None
    share_below: float | None = None
    price_above: float | None = None
    price_below: float | None = None

    def __post_init__(self):
        if self.kind not in ("fixed", "threshold"):
            raise ValueError(f"unknown stop rule {self.kind!r}")

    def triggered(self, share, price):
        hit = np.zeros(np.shape(share), dtype=bool)
        if self.kind == "fixed":
            return hit
        if self.share_above is not None:
            hit |= np.asarray(share) >= self.share_above
        if self.share_below is not None:
            hit |= np.asarray(share) <= self.share_below
        if self.price_above is not None:
            hit |= np.asarray(price) >= self.price_above
        if self.price_below is not None:
            hit |= np.asarray(price) <= self.price_below
        return hit


@dataclass(frozen=True)
class BidderPolicy:
    delta: float
    terminal_time: int
    strategy: Strategy = field(default_factory=Strategy)
    stop: StopRule = field(default_factory=StopRule)
    name: str | None = None

    def __post_init__(self):
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        if self.terminal_time < 1:
            raise ValueError("terminal time must be >= 1")

    @property
    def label(self) -> str:
        return self.name or self.strategy.label


@dataclass
class StrategyOutcome:
    utility: float
    pi_terminal: float
    cash_term: float
    exit_time: int
    ledger: PortfolioLedger | None = None


@dataclass
class TradingDraws:
    """Per-replication random inputs for ``T`` rounds.

    ``u`` drives the vote, ``z`` the price innovation (standard normal) and
    ``s`` (last axis 2) the strategy. Row ``r`` comes from replication ``r``'s
    own stream, so every strategy sees the same numbers.
    """

    u: np.ndarray
    z: np.ndarray
    s: np.ndarray

    @property
    def reps(self) -> int:
        return self.u.shape[0]

    def row(self, r: int) -> "TradingDraws":
        return TradingDraws(self.u[r : r + 1], self.z[r : r + 1], self.s[r : r + 1])


def draw_trading_streams(seed: int, reps: int, horizon: int, first_rep: int = 0) -> TradingDraws:
    u = np.empty((reps, horizon))
    z = np.empty((reps, horizon))
    s = np.empty((reps, horizon, 2))
    for i in range(reps):
        rng = replication_rng(seed, first_rep + i)
        u[i] = rng.random(horizon)
        z[i] = rng.standard_normal(horizon)
        s[i] = rng.random((horizon, 2))
    return TradingDraws(u, z, s)


def _focal_view(params: ProtocolParams, focal: int) -> tuple[float, float]:
    if not 0 <= focal < params.num_bidders:
        raise IndexError(f"focal bidder {focal} out of range")
    return params.initial_stakes[focal], params.initial_volume


def run_ledger(
    params: ProtocolParams,
    market: MarketParams,
    policy: BidderPolicy,
    draws: TradingDraws,
    focal: int = 0,
) -> StrategyOutcome:
    """Single trajectory through the ledger API, driven by one row of draws."""
    n0, N0 = _focal_view(params, focal)
    T = policy.terminal_time
    if draws.u.shape[-1] < T:
        raise ValueError("not enough draws for the terminal time")
    u, z, s = draws.u.reshape(-1), draws.z.reshape(-1), draws.s.reshape(-1, 2)
    ledger = PortfolioLedger(n0, N0, market.p0, market.r_free)
    delta = policy.delta
    if policy.strategy.kind == "non-participation":
        exit_immediately(ledger)
        return StrategyOutcome(utility(ledger, delta), pi_value(ledger, 0, delta), 0.0, 0, ledger)

    two = ProtocolParams(params.alpha, (1.0, 1.0))  # only alpha is read by transition
    state = SystemState(0, np.array([n0, N0 - n0]), N0)
    price = market.p0
    for t in range(1, T + 1):
        prev_volume = state.volume
        state, _ = transition(state, two, u[t - 1])
        price = float(price_step(market, prev_volume, price, params.alpha, xi=market.noise.from_normal(z[t - 1])))
        n_pre = float(state.stakes[0])
        share = n_pre / state.volume
        if t == T or policy.stop.triggered(share, price):
            liquidate(ledger, n_pre, state.volume, price)
            break
        obs = Observation(t, n_pre, state.volume, price, ledger.records[-1].b)
        nu, b = builtin_strategy(policy.strategy, obs, s[t - 1])
        apply_trading_step(ledger, n_pre, state.volume, nu, b, price)
        state.stakes[0] = n_pre + nu
        state.stakes[1] = state.volume - state.stakes[0]
    tau = ledger.exit_time
    return StrategyOutcome(utility(ledger, delta), pi_value(ledger, tau, delta), cash_term(ledger, delta), tau, ledger)


@dataclass
class TradingBatch:
    """Vectorised outcomes, one entry per replication."""

    utility: np.ndarray
    pi_terminal: np.ndarray
    cash_term: np.ndarray
    exit_time: np.ndarray
    benchmark: float


def simulate_batch(
    params: ProtocolParams,
    market: MarketParams,
    policy: BidderPolicy,
    draws: TradingDraws,
    focal: int = 0,
) -> TradingBatch:
    """All replications of one policy at once, on shared draws.

    Follows the same arithmetic as :func:`run_ledger` round for round.
    """
    n0, N0 = _focal_view(params, focal)
    R, T = draws.reps, policy.terminal_time
    if draws.u.shape[1] < T:
        raise ValueError("not enough draws for the terminal time")
    delta, alpha, rf = policy.delta, params.alpha, market.r_free
    bench = n0 * market.p0
    if policy.strategy.kind == "non-participation":
        full = np.full(R, bench)
        return TradingBatch(full, full.copy(), np.zeros(R), np.zeros(R, dtype=np.int64), bench)

    n = np.full(R, n0)
    N = np.full(R, N0)
    P = np.full(R, market.p0)
    b_prev = np.zeros(R)
    active = np.ones(R, dtype=bool)
    util = np.zeros(R)
    trade_pv = np.zeros(R)
    cterm = np.zeros(R)
    pi_T = np.zeros(R)
    tau = np.zeros(R, dtype=np.int64)
    coef = (1.0 + rf) * delta - 1.0
    for t in range(1, T + 1):
        u = draws.u[:, t - 1]
        inc = N ** (-alpha)
        scaled = u * N ** (1.0 + alpha)
        rest = N - n
        hit = u < inc
        focal_win = hit & (n > 0) & ((scaled < n) | (rest <= 0))
        P = _advance_price(market, N, P, alpha, market.noise.from_normal(draws.z[:, t - 1]))
        N = N + hit
        n_pre = n + focal_win
        disc = delta**t
        leave = active & ((t == T) | policy.stop.triggered(n_pre / N, P))
        if leave.any():
            cash = (1.0 + rf) * b_prev + n_pre * P
            util = np.where(leave, util + disc * cash, util)
            pi_T = np.where(leave, disc * n_pre * P - trade_pv, pi_T)
            tau = np.where(leave, t, tau)
            active &= ~leave
        if not active.any():
            break
        obs = Observation(t, n_pre, N, P, b_prev)
        nu, b = builtin_strategy(policy.strategy, obs, draws.s[:, t - 1])
        nu = np.where(active, nu, 0.0)
        b = np.where(active, b, 0.0)
        cash = (1.0 + rf) * b_prev - b - nu * P
        util = util + np.where(active, disc * cash, 0.0)
        trade_pv = trade_pv + disc * nu * P
        cterm = cterm + disc * coef * b
        n = np.where(active, n_pre + nu, n_pre)
        b_prev = b
    return TradingBatch(util, pi_T, cterm, tau, bench)
