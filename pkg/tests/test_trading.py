import numpy as np
import pytest

from polyvote.chain import ProtocolParams, SystemState
from polyvote.oracle import enumerate_step
from polyvote.trading import (
    BidderPolicy,
    ContractError,
    MarketParams,
    NoiseSpec,
    Observation,
    PortfolioLedger,
    PriceModel,
    StopRule,
    Strategy,
    Violation,
    apply_trading_step,
    builtin_strategy,
    cash_term,
    draw_trading_streams,
    exit_immediately,
    liquidate,
    pi_value,
    price_step,
    run_ledger,
    simulate_batch,
    utility,
    validate_decision,
)

FLAT = NoiseSpec("degenerate")


def test_price_step_examples():
    m = MarketParams(r_free=0, r_cryp=0.01, noise=FLAT)
    assert price_step(m, 100.0, 1.0, 1.0, xi=1.0) == pytest.approx(1.01 * 100 / 100.01)
    g = MarketParams(r_cryp=0.0, price_model=PriceModel.INDEPENDENT_GEOMETRIC, noise=FLAT)
    assert price_step(g, 7.0, 3.0, 1.0, np.random.default_rng(0)) == 3.0
    with pytest.raises(ValueError):
        price_step(m, 0.5, 1.0, 1.0, xi=1.0)
    with pytest.raises(ValueError):
        price_step(m, 2.0, 1.0, 1.0)


def test_calibrated_market_value_drift_is_exact():
    m = MarketParams(r_cryp=0.03, noise=FLAT)
    for N, alpha, P in [(1.0, 1.0, 2.0), (3.5, 0.5, 0.7), (40.0, 2.0, 1.3)]:
        p_next = price_step(m, N, P, alpha, xi=1.0)
        up = N ** (-alpha)
        mean_next = (N + 1) * p_next * up + N * p_next * (1 - up)
        assert mean_next == pytest.approx(1.03 * N * P, rel=1e-14)


def test_lognormal_noise_has_unit_mean():
    xi = NoiseSpec("lognormal", 0.3).sample(np.random.default_rng(1), 400_000)
    assert xi.min() > 0
    assert abs(xi.mean() - 1) < 4 * xi.std() / np.sqrt(xi.size)
    with pytest.raises(ValueError):
        NoiseSpec("cauchy")


def test_validate_decision_examples():
    assert validate_decision(5, 20, -5, 0) is None
    assert validate_decision(5, 20, -6, 0) is Violation.NEGATIVE_HOLDINGS
    assert validate_decision(5, 20, 20 - 5 + 1, 0) is Violation.EXCEEDS_VOLUME
    assert validate_decision(5, 20, 0, -0.1) is Violation.NEGATIVE_CASH
    assert validate_decision(5, 20, 1, 0, at_exit=True) is Violation.NONZERO_AT_EXIT
    assert validate_decision(5, 20, 0, 0, at_exit=True) is None


def test_validate_decision_fuzz():
    rng = np.random.default_rng(11)
    M = 1_000_000
    N = rng.uniform(1, 100, M)
    n = rng.uniform(0, 1, M) * N
    nu = rng.uniform(-1.2, 1.2, M) * N
    b = rng.uniform(-1, 3, M)
    bad = (b < 0) | (n + nu < 0) | (n + nu > N)
    ok = np.array([validate_decision(n[i], N[i], nu[i], b[i]) is None for i in range(M)])
    assert not np.any(ok & bad)
    assert np.array_equal(ok, ~bad)


def test_ledger_cash_flows():
    led = PortfolioLedger(3.0, 10.0, 2.0, 0.0)
    apply_trading_step(led, 3.0, 10.0, -1.0, 0.0, 2.0)
    assert led.records[-1].cash_flow == 2.0
    apply_trading_step(led, 2.0, 10.0, 1.0, 0.0, 2.0)
    assert led.records[-1].cash_flow == -2.0
    assert liquidate(led, 3.0, 11.0, 2.0) == 6.0
    with pytest.raises(ContractError):
        liquidate(led, 3.0, 11.0, 2.0)
    with pytest.raises(ContractError):
        apply_trading_step(led, 3.0, 11.0, 0.0, 0.0, 2.0)


def test_ledger_contract_errors():
    led = PortfolioLedger(3.0, 10.0, 1.0, 0.05)
    with pytest.raises(ContractError):
        apply_trading_step(led, 3.0, 10.0, -4.0, 0.0, 1.0)
    with pytest.raises(ContractError):
        utility(led, 0.9)
    with pytest.raises(ContractError):
        pi_value(led, 3, 0.9)


def test_risk_free_accrual_and_identity():
    led = PortfolioLedger(4.0, 10.0, 1.0, 0.1)
    apply_trading_step(led, 4.0, 10.0, -2.0, 1.5, 1.2)
    assert led.records[-1].cash_flow == pytest.approx(-1.5 + 2.4)
    apply_trading_step(led, 2.0, 11.0, 0.0, 0.5, 1.3)
    assert led.records[-1].cash_flow == pytest.approx(1.1 * 1.5 - 0.5)
    liquidate(led, 2.0, 11.0, 1.4)
    assert led.records[-1].cash_flow == pytest.approx(1.1 * 0.5 + 2.8)
    for delta in (0.8, 1 / 1.1, 1.0):
        assert utility(led, delta) == pytest.approx(pi_value(led, 3, delta) + cash_term(led, delta), abs=1e-12)
    assert cash_term(led, 1 / 1.1) == pytest.approx(0.0, abs=1e-15)


def test_non_participation_and_pi_at_zero():
    led = PortfolioLedger(5.0, 20.0, 1.5, 0.05)
    assert pi_value(led, 0, 0.9) == 7.5
    assert exit_immediately(led) == 7.5
    assert utility(led, 0.5) == 7.5
    with pytest.raises(ContractError):
        exit_immediately(led)


def test_no_trading_flat_price_utility():
    led = PortfolioLedger(2.0, 5.0, 3.0, 0.05)
    for t in range(1, 4):
        apply_trading_step(led, 2.0, 5.0, 0.0, 0.0, 3.0)
        assert led.records[-1].cash_flow == 0.0
    liquidate(led, 2.5, 6.0, 3.0)
    assert utility(led, 1.0) == 7.5
    assert pi_value(led, 2, 0.9) == pytest.approx(0.81 * 2.0 * 3.0)


def test_ledger_csv():
    led = PortfolioLedger(1.0, 2.0, 1.0, 0.0)
    liquidate(led, 1.0, 2.0, 1.0)
    text = led.to_csv()
    assert text.splitlines()[0] == "t,nu,b,price,cash_flow,stakes,volume"
    assert len(text.splitlines()) == 3


def test_builtin_strategies():
    obs = Observation(3, 4.0, 10.0, 2.0, 0.0)
    assert builtin_strategy(Strategy("no-trading"), obs) == (0.0, 0.0)
    assert builtin_strategy(Strategy("proportional-sell", rate=0.5), obs) == (-2.0, 0.0)
    assert builtin_strategy(Strategy("periodic-buy", amount=1.0, period=3), obs) == (1.0, 0.0)
    assert builtin_strategy(Strategy("periodic-buy", amount=1.0, period=2), obs) == (0.0, 0.0)
    assert builtin_strategy(Strategy("periodic-buy", amount=100.0, period=1), obs) == (6.0, 0.0)
    assert builtin_strategy(Strategy("proportional-sell", rate=0.3, integer=True), obs) == (-1.0, 0.0)
    with pytest.raises(ValueError):
        Strategy("martingale")


def test_random_feasible_always_feasible():
    rng = np.random.default_rng(3)
    M = 100_000
    N = rng.uniform(1, 1000, M)
    n = rng.uniform(0, 1, M) * N
    obs = Observation(1, n, N, rng.uniform(0.1, 10, M), np.zeros(M))
    strat = Strategy("random-feasible", intensity=1.0)
    nu, b = builtin_strategy(strat, obs, rng.random((M, 2)))
    assert all(validate_decision(n[i], N[i], nu[i], b[i]) is None for i in range(M))


def test_stop_rule():
    rule = StopRule("threshold", share_above=0.5, price_below=0.8)
    np.testing.assert_array_equal(rule.triggered(np.array([0.1, 0.6, 0.1]), np.array([1.0, 1.0, 0.7])), [False, True, True])
    assert not StopRule().triggered(np.array([0.99]), np.array([100.0])).any()
    with pytest.raises(ValueError):
        StopRule("trailing")


def test_policy_validation():
    with pytest.raises(ValueError):
        BidderPolicy(0.0, 5)
    with pytest.raises(ValueError):
        BidderPolicy(0.9, 0)


def test_pi_increment_identity_by_enumeration():
    # E[Pi_{t+1} | G_t] - Pi_t = delta^{t+1} pi_t E[M_{t+1} | G_t] - delta^t pi_t M_t, xi == 1
    rng = np.random.default_rng(8)
    for _ in range(200):
        alpha = rng.uniform(0, 2)
        N = rng.uniform(1, 50)
        n = rng.uniform(0, 1) * N
        P = rng.uniform(0.2, 5)
        t, delta = int(rng.integers(0, 30)), rng.uniform(0.8, 1.0)
        m = MarketParams(r_cryp=rng.uniform(0, 0.1), noise=FLAT)
        p_next = price_step(m, N, P, alpha, xi=1.0)
        s = SystemState(t, np.array([n, N - n]), N)
        gain = sum(p * delta ** (t + 1) * o.stakes[0] * p_next for p, o in enumerate_step(s, alpha)) - delta**t * n * P
        m_next = sum(p * o.volume * p_next for p, o in enumerate_step(s, alpha))
        rhs = delta ** (t + 1) * (n / N) * m_next - delta**t * (n / N) * N * P
        assert gain == pytest.approx(rhs, rel=1e-12, abs=1e-12)


STRATS = [
    Strategy("no-trading"),
    Strategy("proportional-sell", rate=0.2),
    Strategy("periodic-buy", amount=2.0, period=2),
    Strategy("random-feasible", intensity=0.7),
    Strategy("random-feasible", intensity=0.4, integer=True),
]


@pytest.mark.parametrize("strategy", STRATS, ids=lambda s: s.label)
@pytest.mark.parametrize("model", list(PriceModel))
def test_batch_matches_ledger(strategy, model):
    params = ProtocolParams(1.0, (3.0, 7.0, 10.0))
    market = MarketParams(0.04, 0.05, 1.0, model, NoiseSpec("lognormal", 0.2))
    stop = StopRule("threshold", share_above=0.4, price_below=0.7)
    policy = BidderPolicy(0.97, 15, strategy, stop)
    draws = draw_trading_streams(5, 300, 15)
    batch = simulate_batch(params, market, policy, draws)
    for r in range(300):
        out = run_ledger(params, market, policy, draws.row(r))
        assert out.exit_time == batch.exit_time[r]
        assert out.utility == pytest.approx(batch.utility[r], rel=1e-12, abs=1e-12)
        assert out.pi_terminal == pytest.approx(batch.pi_terminal[r], rel=1e-12, abs=1e-12)
        assert abs(out.utility - out.pi_terminal - out.cash_term) < 1e-10


def test_non_participation_batch():
    params = ProtocolParams(1.0, (4.0, 6.0))
    policy = BidderPolicy(0.9, 10, Strategy("non-participation"))
    out = simulate_batch(params, MarketParams(p0=2.0), policy, draw_trading_streams(0, 5, 10))
    assert np.all(out.utility == 8.0) and np.all(out.exit_time == 0)
    led = run_ledger(params, MarketParams(p0=2.0), policy, draw_trading_streams(0, 1, 10))
    assert led.utility == 8.0


def test_focal_index_selects_bidder():
    params = ProtocolParams(1.0, (4.0, 6.0))
    policy = BidderPolicy(1.0, 1, Strategy("no-trading"))
    out = simulate_batch(params, MarketParams(noise=FLAT), policy, draw_trading_streams(0, 4, 1), focal=1)
    assert out.benchmark == 6.0
    with pytest.raises(IndexError):
        simulate_batch(params, MarketParams(), policy, draw_trading_streams(0, 4, 1), focal=2)
