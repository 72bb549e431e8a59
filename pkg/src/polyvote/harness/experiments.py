"""Experiment presets: tails, roots, phase sweep, trading, fluid limit, oracles."""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from .. import asymptotics, oracle
from ..chain import ProtocolParams
from ..trading import BidderPolicy, MarketParams, TradingDraws, draw_trading_streams, simulate_batch
from . import estimators
from .montecarlo import ExperimentResult, run_chunks, simulate_replications
from .streams import replication_rng


class NumericalFailure(ArithmeticError):
    """An experiment's built-in consistency check failed."""


def _finish(res: ExperimentResult, start: float) -> ExperimentResult:
    res.wall_clock = time.perf_counter() - start
    for r in res.reports:
        r.wall_clock = res.wall_clock
    return res


# ---------------------------------------------------------------- tails


def estimate_tails(
    params: ProtocolParams,
    times,
    lambdas,
    reps: int,
    seed: int,
    epsilon: float = 0.1,
    threads: int = 1,
    confidence: float = 0.95,
    config: dict | None = None,
) -> ExperimentResult:
    """Empirical tail probabilities of ``N_t`` at levels ``lam * t**(1/(1+alpha))``.

    Levels above the growth constant use the exceedance event, levels at or
    below it the shortfall event. The normalised rate is
    ``-log(p_hat) / t**(1/(1+alpha))``; with no observed events the entry is
    flagged censored and the rate is reported as a lower bound built from
    ``p_hat < 1/R``.
    """
    lambdas = [float(x) for x in lambdas]
    times = sorted(int(t) for t in times)
    if not lambdas or not times:
        raise ValueError("need at least one lambda and one time")
    if times[0] < 1:
        raise ValueError("tail times must be >= 1")
    start = time.perf_counter()
    a = params.alpha
    gc = asymptotics.growth_constant(a)
    batch = simulate_replications(params, times[-1], reps, seed, times, threads)
    res = ExperimentResult("tails", seed, reps, config or {})
    res.columns = ["t", "lambda", "side", "events", "p_hat", "ci_low", "ci_high", "rate", "censored", "rate_function", "bound_rate"]
    for t in times:
        vol = batch.volumes[:, batch.column(t)]
        scale = t ** (1.0 / (1.0 + a))
        for lam in lambdas:
            upper = lam > gc
            hits = int(np.count_nonzero(vol > lam * scale if upper else vol < lam * scale))
            p = hits / reps
            lo, hi = estimators.wilson_interval(hits, reps, confidence)
            censored = hits == 0
            rate = -math.log(1.0 / reps if censored else p) / scale
            f = asymptotics.rate_function(lam, a) if lam > 0 else float("inf")
            bound = asymptotics.tail_bound(lam, a, t, epsilon) if lam > 0 else None
            res.table.append([t, lam, "upper" if upper else "lower", hits, p, lo, hi, rate, censored, f, None if bound is None else (1.0 - epsilon) * f])
            res.add(f"p_hat[t={t},lambda={lam:g}]", p, math.sqrt(p * (1.0 - p) / reps))
    return _finish(res, start)


# ---------------------------------------------------------------- roots


def roots_report(alpha: float, config: dict | None = None) -> ExperimentResult:
    start = time.perf_counter()
    rep = asymptotics.rate_report(alpha)
    res = ExperimentResult("roots", 0, 1, config or {})
    lm, lp = rep.lambda_minus, rep.lambda_plus
    res.add("lambda_minus", lm)
    res.add("lambda_plus", lp)
    res.add("growth_constant", rep.growth_constant)
    res.add("residual_minus", asymptotics.rate_function(lm, alpha))
    res.add("residual_plus", asymptotics.rate_function(lp, alpha))
    res.columns = ["quantity", "value"]
    res.table = [["alpha", alpha], ["lambda_minus", lm], ["lambda_plus", lp], ["growth_constant", rep.growth_constant]]
    res.extra["rate"] = rep.to_dict()
    if alpha == 1:
        imp = asymptotics.improved_bounds_alpha1()
        res.extra["improved"] = imp.to_dict()
        for k, v in imp.to_dict().items():
            res.add(k, v)
            res.table.append([k, v])
    return _finish(res, start)


# ---------------------------------------------------------------- phase sweep
#
# Only the number of stake increments J by time T matters for the final
# shares: given J increments the winners follow a Polya urn, so the stake
# gains are Dirichlet-multinomial. J is a renewal count whose holding time at
# volume m is Geometric(m**-alpha).


def jump_rates(N0: float, alpha: float, count: int) -> np.ndarray:
    """``-log(1 - m**-alpha)`` for ``m = N0, N0 + 1, ...`` (inf when the jump is sure)."""
    m = N0 + np.arange(count, dtype=np.float64)
    p = m ** (-alpha)
    with np.errstate(divide="ignore"):
        return -np.log1p(-p)


@njit(nogil=True, cache=True)
def count_jumps(rates, horizon, rng):
    """Number of increments in ``horizon`` rounds; -1 if ``rates`` ran out."""
    elapsed = 0
    for j in range(rates.shape[0]):
        # Geometric(p) on {1, 2, ...} as 1 + floor(E / -log(1-p))
        g = 1.0 + math.floor(rng.standard_exponential() / rates[j])
        if elapsed + g > horizon:
            return j
        elapsed += int(g)
    return -1


def _rate_table_size(N0: float, alpha: float, horizon: int) -> int:
    fluid = ((1.0 + alpha) * horizon + N0 ** (1.0 + alpha)) ** (1.0 / (1.0 + alpha))
    return int(2.0 * (fluid - N0) + 64)


def sample_final_stakes(params: ProtocolParams, horizon: int, rng: np.random.Generator, rates: np.ndarray | None = None) -> np.ndarray:
    """Stakes after ``horizon`` rounds, sampled exactly through the jump count.

    Draw order: Dirichlet shares, holding times, multinomial split.
    """
    stakes = np.array(params.initial_stakes)
    weights = rng.dirichlet(stakes) if stakes.size > 1 else np.ones(1)
    a = params.alpha
    if a == 0:
        J = int(horizon)
    else:
        if rates is None:
            rates = jump_rates(params.initial_volume, a, _rate_table_size(params.initial_volume, a, horizon))
        J = count_jumps(rates, int(horizon), rng)
        while J < 0:
            rates = jump_rates(params.initial_volume, a, 2 * rates.size)
            J = count_jumps(rates, int(horizon), rng)
    return stakes + rng.multinomial(J, weights)


PHASE_CLASSES = ("large", "medium", "small")


@dataclass(frozen=True)
class BidderClasses:
    """Initial stakes of the tracked bidders as functions of the volume ``N``."""

    large_fraction: float = 0.1
    medium_stake: float = 2.0
    small_exponent: float = 0.5

    def stakes(self, N: float) -> np.ndarray:
        tracked = np.array([self.large_fraction * N, self.medium_stake, N ** (-self.small_exponent)])
        rest = N - tracked.sum()
        if rest <= 0 or np.any(tracked <= 0):
            raise ValueError(f"bidder classes do not fit in volume {N}")
        return np.append(tracked, rest)


def phase_sweep(
    alphas,
    ladder,
    reps: int,
    seed: int,
    classes: BidderClasses = BidderClasses(),
    horizon_factor: float = 50.0,
    epsilon: float = 0.1,
    threads: int = 1,
    doubling_check: bool = False,
    config: dict | None = None,
) -> ExperimentResult:
    """Variance of ``pi_T / pi_0`` per bidder class along a ladder of volumes.

    Each system holds one large, one medium and one small bidder plus an
    aggregated remainder; the horizon is ``horizon_factor * N**(1+alpha)``.
    With ``doubling_check`` the estimates are repeated at twice the horizon
    on the same streams and the change is reported in SE units.
    """
    start = time.perf_counter()
    res = ExperimentResult("phase", seed, reps, config or {})
    res.columns = ["alpha", "N", "class", "n0", "horizon", "var_ratio", "var_se", "var_times_n0", "deviation_freq", "deviation_se", "mean_ratio", "doubling_shift_se"]
    for alpha in alphas:
        for N in ladder:
            N = float(N)
            init = classes.stakes(N)
            params = ProtocolParams(alpha, init)
            T = int(math.ceil(horizon_factor * N ** (1.0 + alpha)))
            ratios = _phase_ratios(params, T, reps, seed, threads)
            shifted = _phase_ratios(params, 2 * T, reps, seed, threads) if doubling_check else None
            for c, name in enumerate(PHASE_CLASSES):
                x = ratios[:, c]
                var, vse = estimators.variance_se(x)
                dev = np.abs(x - 1.0) > epsilon
                freq, fse = estimators.mean_se(dev)
                mean, _ = estimators.mean_se(x)
                shift = None
                if shifted is not None:
                    v2, _ = estimators.variance_se(shifted[:, c])
                    shift = (v2 - var) / vse if vse > 0 else 0.0
                res.table.append([alpha, N, name, init[c], T, var, vse, var * init[c], freq, fse, mean, shift])
                tag = f"alpha={alpha:g},N={N:g},{name}"
                res.add(f"var_ratio[{tag}]", var, vse)
                res.add(f"deviation_freq[{tag}]", freq, fse)
    return _finish(res, start)


def _phase_ratios(params: ProtocolParams, horizon: int, reps: int, seed: int, threads: int) -> np.ndarray:
    init = np.array(params.initial_stakes)
    N0 = params.initial_volume
    tracked = len(PHASE_CLASSES)
    out = np.empty((reps, tracked))
    rates = None
    if params.alpha > 0:
        rates = jump_rates(N0, params.alpha, _rate_table_size(N0, params.alpha, horizon))

    def work(lo, hi):
        for r in range(lo, hi):
            final = sample_final_stakes(params, horizon, replication_rng(seed, r), rates)
            out[r] = (final[:tracked] / final.sum()) / (init[:tracked] / N0)

    run_chunks(work, reps, threads)
    return out


# ---------------------------------------------------------------- trading


def trade_compare(
    params: ProtocolParams,
    market: MarketParams,
    policies: list[BidderPolicy],
    reps: int,
    seed: int,
    focal: int = 0,
    threads: int = 1,
    config: dict | None = None,
) -> ExperimentResult:
    """Mean utility per policy on common random numbers, plus pairwise differences."""
    if not policies:
        raise ValueError("need at least one policy")
    start = time.perf_counter()
    horizon = max(p.terminal_time for p in policies)
    u = np.empty((reps, horizon))
    z = np.empty((reps, horizon))
    s = np.empty((reps, horizon, 2))

    def work(lo, hi):
        d = draw_trading_streams(seed, hi - lo, horizon, first_rep=lo)
        u[lo:hi], z[lo:hi], s[lo:hi] = d.u, d.z, d.s

    run_chunks(work, reps, threads)
    draws = TradingDraws(u, z, s)
    res = ExperimentResult("trade", seed, reps, config or {})
    res.columns = ["policy", "delta", "terminal_time", "mean_utility", "se", "benchmark", "excess_over_benchmark_se", "mean_pi_gain", "pi_gain_se", "mean_exit_time"]
    utils = {}
    for pol in policies:
        out = simulate_batch(params, market, pol, draws, focal)
        m, se = estimators.mean_se(out.utility)
        g, gse = estimators.mean_se(out.pi_terminal - out.benchmark)
        z_excess = (m - out.benchmark) / se if se > 0 else 0.0
        res.table.append([pol.label, pol.delta, pol.terminal_time, m, se, out.benchmark, z_excess, g, gse, float(out.exit_time.mean())])
        res.add(f"utility[{pol.label}]", m, se)
        res.add(f"pi_gain[{pol.label}]", g, gse)
        utils[pol.label] = out.utility
    res.extra["benchmark"] = float(params.initial_stakes[focal] * market.p0)
    pairs = []
    for a, b in itertools.combinations(utils, 2):
        d, dse = estimators.mean_se(utils[a] - utils[b])
        pairs.append({"first": a, "second": b, "difference": d, "se": dse})
    res.extra["pairwise"] = pairs
    return _finish(res, start)


# ---------------------------------------------------------------- fluid limit


def sup_distance(path: np.ndarray, n: int, alpha: float, refine: int = 8) -> float:
    """``sup_u |N_{nu} / n**(1/(1+alpha)) - X_u|`` over ``u`` in [0, 1].

    ``path[i]`` is the volume after round ``i``; the path is interpolated
    linearly and compared on ``refine`` points per round.
    """
    u = np.linspace(0.0, 1.0, n * refine + 1)
    scaled = np.interp(u * n, np.arange(path.size, dtype=np.float64), path) / n ** (1.0 / (1.0 + alpha))
    return float(np.max(np.abs(scaled - asymptotics.fluid_path(u, alpha))))


def fluid_check(
    alphas,
    ladder,
    reps: int,
    seed: int,
    N0: float = 1.0,
    refine: int = 8,
    threads: int = 1,
    config: dict | None = None,
) -> ExperimentResult:
    """Mean sup-distance between the rescaled volume and the fluid path."""
    start = time.perf_counter()
    res = ExperimentResult("fluid", seed, reps, config or {})
    res.columns = ["alpha", "n", "mean_sup_distance", "se", "mean_endpoint"]
    for alpha in alphas:
        for n in ladder:
            n = int(n)
            params = ProtocolParams(alpha, (N0,))
            batch = simulate_replications(params, n, reps, seed, range(n + 1), threads)
            dist = np.array([sup_distance(batch.volumes[r], n, alpha, refine) for r in range(reps)])
            end = batch.volumes[:, -1] / n ** (1.0 / (1.0 + alpha))
            m, se = estimators.mean_se(dist)
            res.table.append([alpha, n, m, se, float(end.mean())])
            res.add(f"sup_distance[alpha={alpha:g},n={n}]", m, se)
    return _finish(res, start)


# ---------------------------------------------------------------- oracle check


def oracle_check(alpha: float, N0: float, horizon: int, reps: int, seed: int, tv_tol: float = 0.01, threads: int = 1, config: dict | None = None) -> ExperimentResult:
    """Exact small-case identities and a DP-vs-MC total-variation check.

    Raises :class:`NumericalFailure` when the TV distance exceeds ``tv_tol``.
    """
    start = time.perf_counter()
    res = ExperimentResult("oracle-check", seed, reps, config or {})
    exact = oracle.volume_distribution(N0, alpha, horizon)
    batch = simulate_replications(ProtocolParams(alpha, (N0,)), horizon, reps, seed, None, threads)
    tv = estimators.tv_to_exact(batch.volumes[:, -1], exact)
    res.add("tv_distance", tv)
    unit = ProtocolParams(1.0, (1.0, 1.0))
    res.add("var_share_two_unit_bidders_t1", oracle.exact_central_moments(unit, 1, 0).variance)
    res.add("power_mean_two_unit_bidders", oracle.conditional_power_mean(unit.initial_state(), 0, 1.0))
    small = oracle.volume_distribution(1.0, 1.0, 3)
    for v, p in zip(small.support, small.probabilities):
        res.add(f"P(N_3={v:g})", p)
    res.columns = ["volume", "exact", "empirical"]
    emp = estimators.empirical_distribution(batch.volumes[:, -1])
    for v in sorted(set(exact.support) | set(emp)):
        res.table.append([v, exact.prob(v), emp.get(v, 0.0)])
    res = _finish(res, start)
    if tv > tv_tol:
        raise NumericalFailure(f"TV distance {tv:.4g} exceeds {tv_tol}")
    return res


__all__ = [
    "NumericalFailure",
    "BidderClasses",
    "estimate_tails",
    "roots_report",
    "jump_rates",
    "count_jumps",
    "sample_final_stakes",
    "phase_sweep",
    "trade_compare",
    "sup_distance",
    "fluid_check",
    "oracle_check",
]
