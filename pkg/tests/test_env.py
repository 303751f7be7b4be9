from datetime import date

import numpy as np
import pytest

from cdxhedge.calendar import TradingGrid, build_episode_grid
from cdxhedge.env import (
    HedgingEnv,
    MarketTape,
    delta_hedge_policy,
    make_config,
    rollout,
    run_policy,
    zero_policy,
)
from cdxhedge.market_data import transaction_cost
from cdxhedge.market_sim import GbmParams, simulate_gbm
from cdxhedge.pricing import MarketState, hedge_ratio, option_price


@pytest.fixture(scope="module")
def paths(short_grid):
    return simulate_gbm(GbmParams(), short_grid, 123, 16).spreads


def test_reset_default_configuration(config):
    env = HedgingEnv(config, np.full((1, len(config.grid)), 0.01))
    s = env.reset()
    assert s.step == 0
    assert s.pay[0] == pytest.approx(option_price("payer", MarketState(config.grid.start, 0.01), config.option, config.index))
    assert 0.9 * 530e3 < s.pay[0] < 1.1 * 530e3
    n_h = hedge_ratio(MarketState(config.grid.start, 0.01), config.option, config.index)
    assert s.hedge_ratio[0] == pytest.approx(n_h, abs=1e-9)
    assert 0 < n_h < 1
    assert s.prev_action[0] == pytest.approx(n_h, abs=1e-9)


def test_flat_start(short_grid, paths):
    cfg = make_config(short_grid, initial_hedge="flat")
    s = HedgingEnv(cfg, paths).reset()
    assert np.all(s.prev_action == 0)
    assert s.observation().shape == (16, 4)


def test_reset_rejects_bad_lengths(short_config):
    with pytest.raises(ValueError):
        HedgingEnv(short_config, np.full((2, 10), 0.01))
    with pytest.raises(ValueError):
        HedgingEnv(short_config, np.full((2, len(short_config.grid)), 0.01), bidask=np.ones(7))
    with pytest.raises(ValueError):
        make_config(build_episode_grid(date(2021, 3, 22), 2, 17)).__class__(
            short_config.index, short_config.option, build_episode_grid(date(2021, 3, 22), 2, 17)
        )


def test_reward_identity_is_exact(short_config, paths):
    env = HedgingEnv(short_config, paths)
    s = env.reset()
    rng = np.random.default_rng(0)
    for _ in range(30):
        r = env.step(s, rng.uniform(-0.2, 1.2, len(env)))
        assert np.array_equal(r.reward, r.option_pnl - r.hedge_pnl - r.cost)
        assert np.all(r.cost >= 0)
        assert np.all((0 <= r.state.prev_action) & (r.state.prev_action <= 1))
        s = r.state


def test_no_move_no_trade_step(short_config):
    env = HedgingEnv(short_config, np.full((1, len(short_config.grid)), 0.0123))
    s = env.reset()
    r = env.step(s, s.prev_action)
    assert r.cost[0] == 0.0
    # only the passage of time moves the option and the index upfront
    t = env.tape
    assert r.option_pnl[0] == -(t.pay[0, 1] - t.pay[0, 0])
    assert r.option_pnl[0] > 0  # short option earns time decay


def test_trade_cost_matches_cost_functional(short_grid, paths):
    cfg = make_config(short_grid, ba_bp=1.0, initial_hedge="flat")
    env = HedgingEnv(cfg, paths[:1])
    s = env.reset()
    r = env.step(s, 0.10)
    expected = transaction_cost(10e6, paths[0, 0], short_grid.timestamps[0], 1.0, "buy_protection", cfg.index)
    assert r.cost[0] == pytest.approx(expected, rel=1e-12)
    r2 = env.step(r.state, 0.05)
    expected = transaction_cost(5e6, paths[0, 1], short_grid.timestamps[1], 1.0, "sell_protection", cfg.index)
    assert r2.cost[0] == pytest.approx(expected, rel=1e-12)


def test_step_is_pure(short_config, paths):
    env = HedgingEnv(short_config, paths)
    s = env.reset()
    a, b = env.step(s, 0.3), env.step(s, 0.3)
    assert np.array_equal(a.reward, b.reward) and a.state.step == b.state.step == 1


def test_nan_action_rejected(short_config, paths):
    env = HedgingEnv(short_config, paths)
    with pytest.raises(ValueError):
        env.step(env.reset(), np.nan)


def test_done_flag_and_episode_end(short_config, paths):
    env = HedgingEnv(short_config, paths[:2])
    s = env.reset()
    for k in range(len(short_config.grid) - 1):
        r = env.step(s, 0.5)
        assert r.done == (k == len(short_config.grid) - 2)
        s = r.state
    with pytest.raises(RuntimeError):
        env.step(s, 0.5)


def test_zero_policy_is_unhedged_option(short_grid, paths):
    cfg = make_config(short_grid, ba_bp=1.0, initial_hedge="flat")
    rec = run_policy(zero_policy, cfg, paths)
    tape = MarketTape.build(cfg, paths)
    premium, terminal = tape.pay[:, 0], tape.pay[:, -1]
    intrinsic = np.maximum(paths[:, -1] - cfg.option.strike, 0) > 0
    assert np.all((terminal > 0) == intrinsic)
    assert np.allclose(rec.total_pnl, -(terminal - premium), rtol=0, atol=1e-6)
    assert np.all(rec.costs == 0)


def test_episode_accounting_identity(short_config, paths):
    rec = run_policy(delta_hedge_policy, short_config, paths)
    tape = MarketTape.build(short_config, paths)
    option_leg = short_config.sign * (tape.pay[:, -1] - tape.pay[:, 0])
    expected = option_leg - rec.hedge_pnl.sum(axis=1) - rec.costs.sum(axis=1)
    assert np.allclose(rec.total_pnl, expected, rtol=0, atol=1e-6)


def test_costs_zero_iff_no_trading_or_no_width(short_grid, paths):
    free = run_policy(delta_hedge_policy, make_config(short_grid, ba_bp=0.0), paths)
    assert np.all(free.costs == 0)
    costly = run_policy(delta_hedge_policy, make_config(short_grid, ba_bp=1.0), paths)
    trades = np.abs(np.diff(np.concatenate([free.observations[:, :1, 3], costly.actions], axis=1), axis=1))
    assert np.all((costly.costs > 0) == (trades > 0))
    hold = run_policy(lambda s: s.prev_action, make_config(short_grid, ba_bp=1.0), paths)
    assert np.all(hold.costs == 0)


def test_long_position_mirrors_short(short_grid, paths):
    short = run_policy(delta_hedge_policy, make_config(short_grid, position="short_option"), paths)
    long_ = run_policy(delta_hedge_policy, make_config(short_grid, position="long_option"), paths)
    assert np.allclose(short.rewards, -long_.rewards, atol=1e-8)


def test_unwind_at_expiry_charges_the_final_hedge(short_grid, paths):
    base = run_policy(delta_hedge_policy, make_config(short_grid, ba_bp=1.0), paths)
    unwind = run_policy(delta_hedge_policy, make_config(short_grid, ba_bp=1.0, unwind_at_expiry=True), paths)
    extra = unwind.costs[:, -1] - base.costs[:, -1]
    tape = MarketTape.build(make_config(short_grid, ba_bp=1.0), paths)
    expected = base.actions[:, -1] * 100e6 * tape.cost_sell[:, -1]
    assert np.allclose(extra, expected, rtol=1e-9, atol=1e-9)
    assert np.any(extra > 1e4)


def test_delta_policy_limits(short_grid):
    cfg = make_config(short_grid)
    n = len(short_grid)
    high = run_policy(delta_hedge_policy, cfg, np.full((1, n), 0.03))
    low = run_policy(delta_hedge_policy, cfg, np.full((1, n), 0.003))
    assert high.actions[0, -1] == pytest.approx(1.0, abs=1e-6)
    assert low.actions[0, -1] == pytest.approx(0.0, abs=1e-6)
    mid = run_policy(delta_hedge_policy, cfg, np.full((1, n), 0.01))
    assert 0 < mid.actions[0, 0] < 1


def test_episode_csv(tmp_path, short_config, paths):
    rec = run_policy(delta_hedge_policy, short_config, paths[:2])
    f = tmp_path / "ep.csv"
    rec.write_csv(f, episode=1)
    lines = f.read_text().splitlines()
    assert lines[0] == "step,timestamp,spread_bp,action,reward_eur,cost_eur"
    assert len(lines) == len(short_config.grid)
    assert lines[1].startswith("0,2021-03-22T09:30,")


def test_delta_hedge_error_shrinks_with_finer_grid():
    n_days, n_paths = 10, 1000
    grids = {k: build_episode_grid(date(2021, 3, 22), n_days, k) for k in (4, 17, 68)}
    union = sorted(set().union(*(g.timestamps for g in grids.values())))
    fine = TradingGrid.from_timestamps(union, 1)
    spreads = simulate_gbm(GbmParams(), fine, 77, n_paths).spreads
    where = {t: i for i, t in enumerate(union)}
    stds = []
    for k, g in grids.items():
        cols = [where[t] for t in g.timestamps]
        rec = run_policy(delta_hedge_policy, make_config(g, ba_bp=0.0), spreads[:, cols])
        stds.append(rec.total_pnl.std())
    assert stds[0] > stds[1] > stds[2]
