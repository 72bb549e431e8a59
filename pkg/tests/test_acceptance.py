"""End-to-end acceptance checks at their stated sample sizes and tolerances.

Each test prints one PASS/FAIL line; the lines are repeated in the terminal
summary under "acceptance criteria".
"""


import numpy as np
import pytest

from conftest import record
from polyvote.asymptotics import fluid_path, improved_bounds_alpha1, rate_function, rate_roots
from polyvote.chain import ProtocolParams
from polyvote.harness import estimators
from polyvote.harness.experiments import fluid_check, phase_sweep, trade_compare
from polyvote.harness.montecarlo import run_monte_carlo, simulate_replications
from polyvote.oracle import conditional_power_mean, exact_central_moments, volume_distribution
from polyvote.trading import (
    BidderPolicy,
    MarketParams,
    NoiseSpec,
    PriceModel,
    StopRule,
    Strategy,
    TradingDraws,
    run_ledger,
)

THREADS = 4
pytestmark = pytest.mark.slow


def test_volume_histogram_at_8000():
    params = ProtocolParams(1.0, (5.0,))
    res, batch = run_monte_carlo(params, 8000, 20_000, seed=2024, threads=THREADS, bins=40)
    final = batch.volumes[:, -1]
    scaled = res.estimate("mean_scaled_volume@8000")
    center = fluid_path(8000, 1.0)
    edges, counts = estimators.histogram(final, 40, lattice=0.0)
    mode = int(np.argmax(counts))
    width = edges[1] - edges[0]
    mode_center = 0.5 * (edges[mode] + edges[mode + 1])
    unimodal = estimators.is_unimodal(counts)
    near = abs(mode_center - center) <= 2 * width
    ok = 0.98 <= scaled <= 1.02 and unimodal and near
    record(1, ok, f"mean N_t/sqrt(2t) = {scaled:.4f}, unimodal = {unimodal}, mode bin center {mode_center:.1f} vs {center:.2f} (bin width {width:.2f})")
    assert ok


def test_rate_roots_alpha_one():
    lm, lp = rate_roots(1.0)
    rm, rp = abs(rate_function(lm, 1.0)), abs(rate_function(lp, 1.0))
    ok = abs(lm - 0.56) <= 0.01 and abs(lp - 2.51) <= 0.01 and rm < 1e-10 and rp < 1e-10
    record(2, ok, f"roots ({lm:.5f}, {lp:.5f}), residuals ({rm:.1e}, {rp:.1e})")
    assert ok


def test_two_scale_refinement():
    r = improved_bounds_alpha1()
    ok = abs(r.theta_lower - 0.1575) <= 0.001 and abs(r.lambda_minus_improved - 0.60) <= 0.01 and abs(r.lambda_plus_improved - 2.44) <= 0.01
    record(3, ok, f"theta1 = {r.theta_lower:.5f}, lambda- = {r.lambda_minus_improved:.4f}, lambda+ = {r.lambda_plus_improved:.4f} (theta2 = {r.theta_upper:.5f})")
    assert ok


def test_exact_small_case_values():
    d = volume_distribution(1, 1.0, 3)
    probs = dict(zip(d.support, d.probabilities))
    target = {2.0: 1 / 4, 3.0: 7 / 12, 4.0: 1 / 6}
    eps = 4 * np.finfo(float).eps
    p_ok = set(probs) == set(target) and all(abs(probs[k] - v) <= eps for k, v in target.items())
    unit = ProtocolParams(1.0, (1.0, 1.0))
    var = exact_central_moments(unit, 1, 0).variance
    pm = conditional_power_mean(unit.initial_state(), 0, 1.0)
    ok = p_ok and abs(var - 1 / 72) <= eps and abs(pm - 5 / 24) <= eps
    record(4, ok, f"P(N_3) = {[float(probs[k]) for k in (2.0, 3.0, 4.0)]}, Var = {var!r} (1/72 = {1/72!r}), power mean = {pm!r} (5/24 = {5/24!r})")
    assert ok


def test_dp_against_monte_carlo():
    batch = simulate_replications(ProtocolParams(1.0, (1.0,)), 20, 100_000, seed=55, threads=THREADS)
    tv = estimators.tv_to_exact(batch.volumes[:, -1], volume_distribution(1, 1.0, 20))
    ok = tv < 0.01
    record(5, ok, f"TV(exact, empirical) = {tv:.5f} over 1e5 trajectories")
    assert ok


def test_share_martingale_and_power_decay():
    params = ProtocolParams(1.0, (1.0, 2.0, 3.0))
    ladder = [100, 1000, 10_000]
    res, _ = run_monte_carlo(params, ladder[-1], 100_000, seed=77, times=ladder, threads=THREADS)
    worst = 0.0
    for t in ladder:
        for k in range(3):
            r = res.report(f"mean_share[{k}]@{t}")
            worst = max(worst, abs(r.estimate - params.initial_stakes[k] / 6.0) / r.se)
    decreasing = all(
        res.estimate(f"mean_power[{k}]@{a}") > res.estimate(f"mean_power[{k}]@{b}")
        for k in range(3)
        for a, b in zip(ladder, ladder[1:])
    )
    ok = worst < 4 and decreasing
    thetas = [res.estimate(f"mean_power[0]@{t}") for t in ladder]
    record(6, ok, f"max |mean share - initial| = {worst:.2f} SE, mean power of bidder 0 along ladder {['%.3g' % x for x in thetas]}, decreasing = {decreasing}")
    assert ok


def test_phase_transition_classes():
    ladder = [200, 800, 3200]
    res = phase_sweep([0.0, 1.0], ladder, reps=40_000, seed=31, threads=THREADS)
    lines, ok = [], True
    for alpha in (0.0, 1.0):
        rows = {(r[1], r[2]): r for r in res.table if r[0] == alpha}
        dev = [rows[(float(N), "large")][8] for N in ladder]
        med = [rows[(float(N), "medium")][5] for N in ladder]
        small = [rows[(float(N), "small")][5] for N in ladder]
        a_ok = (
            all(x > y for x, y in zip(dev, dev[1:]))
            and max(med) / min(med) < 2
            and all(x < y for x, y in zip(small, small[1:]))
        )
        ok &= a_ok
        lines.append(f"alpha={alpha:g}: large dev {['%.3f' % x for x in dev]}, medium var {['%.3f' % x for x in med]}, small var {['%.1f' % x for x in small]}")
    record(7, ok, "; ".join(lines))
    assert ok


def test_trading_regimes():
    params = ProtocolParams(1.0, (10.0, 90.0))
    market = MarketParams(0.05, 0.05, 1.0, PriceModel.CALIBRATED, NoiseSpec("lognormal", 0.05))
    strategies = [
        Strategy("non-participation"),
        Strategy("no-trading"),
        Strategy("proportional-sell", rate=0.1),
        Strategy("periodic-buy", amount=1.0, period=3),
        Strategy("random-feasible", intensity=0.5),
    ]
    bench = 10.0
    summary, ok = [], True
    for ratio, case in ((1.0, "iii"), (0.98, "i"), (1.02, "ii")):
        pols = [BidderPolicy(ratio / 1.05, 20, s) for s in strategies]
        res = trade_compare(params, market, pols, reps=100_000, seed=101, threads=THREADS)
        rows = {r[0]: r for r in res.table}
        if case == "iii":
            c_ok = all(abs(r[3] - bench) <= 4 * r[4] for r in rows.values())
        elif case == "i":
            c_ok = all(r[3] <= bench + 4 * r[4] for r in rows.values())
        else:
            r = rows["no-trading"]
            c_ok = r[3] >= bench - 4 * r[4]
        ok &= c_ok
        summary.append(f"({case}) " + ", ".join(f"{k} {r[3]:.3f}+-{r[4]:.3f}" for k, r in rows.items()))
    record(8, ok, " | ".join(summary))
    assert ok


def test_ledger_identity_fuzz():
    rng = np.random.default_rng(909)
    worst, count = 0.0, 10_000
    kinds = ["no-trading", "proportional-sell", "periodic-buy", "random-feasible"]
    for i in range(count):
        K = int(rng.integers(2, 5))
        params = ProtocolParams(float(rng.uniform(0, 2)), rng.uniform(0.2, 20, K) + 1.0 / K)
        market = MarketParams(
            float(rng.uniform(0, 0.1)),
            float(rng.uniform(0, 0.1)),
            float(rng.uniform(0.1, 10)),
            PriceModel.CALIBRATED if rng.random() < 0.5 else PriceModel.INDEPENDENT_GEOMETRIC,
            NoiseSpec("lognormal", float(rng.uniform(0, 0.5))),
        )
        kind = kinds[int(rng.integers(0, 4))]
        strat = Strategy(
            kind,
            rate=float(rng.random()),
            amount=float(rng.uniform(0, 5)),
            period=int(rng.integers(1, 5)),
            intensity=float(rng.random()),
            integer=bool(rng.random() < 0.3),
        )
        stop = StopRule("threshold", share_above=float(rng.uniform(0.3, 1.0)), price_below=float(rng.uniform(0, 0.9)) * market.p0) if rng.random() < 0.5 else StopRule()
        T = int(rng.integers(1, 30))
        policy = BidderPolicy(float(rng.uniform(0.5, 1.0)), T, strat, stop)
        draws = TradingDraws(rng.random((1, T)), rng.standard_normal((1, T)), rng.random((1, T, 2)))
        out = run_ledger(params, market, policy, draws, focal=int(rng.integers(0, K)))
        worst = max(worst, abs(out.utility - (out.pi_terminal + out.cash_term)))
    ok = worst <= 1e-10
    record(9, ok, f"max |utility - (Pi_tau + cash term)| = {worst:.2e} over {count} fuzzed trajectories")
    assert ok


def test_fluid_limit_convergence():
    ladder = [100, 1000, 10_000]
    res = fluid_check([0.5, 1.0, 2.0], ladder, reps=200, seed=4242, threads=THREADS)
    ok, parts = True, []
    for alpha in (0.5, 1.0, 2.0):
        d = [r[2] for r in res.table if r[0] == alpha]
        ok &= all(x > y for x, y in zip(d, d[1:]))
        parts.append(f"alpha={alpha:g}: {['%.4f' % x for x in d]}")
    record(10, ok, "mean sup-distance along n = 1e2, 1e3, 1e4; " + "; ".join(parts))
    assert ok
