# tests/test_acceptance.py
"""Full-size Monte Carlo checks against the closed forms. Run with `pytest -m slow`."""
from __future__ import annotations

import numpy as np
import pytest

from calibrate_coupon import independent_example_params
from dynamics import FiveFactorSystem, ModeFlags, ShortRateMode, StockMode
from engine import (
    SimulationConfig,
    asymptotic_moments,
    portfolio_histogram,
    price_cb_mc,
    price_put_mc,
    price_zcb_mc,
    run_blocks,
    weak_order_study,
)
from schemes import SchemeKind, TimeGrid

from conftest import ZCB_PRICE, make_params

pytestmark = pytest.mark.slow

N = 100_000


def _config(scheme=SchemeKind.MILSTEIN2, n=N, T=1.0, dt=0.01, seed=20240917, **kw) -> SimulationConfig:
    return SimulationConfig(TimeGrid.from_dt(T, dt), n, scheme, seed=seed, **kw)


@pytest.mark.parametrize("scheme", list(SchemeKind))
def test_zero_bond_per_scheme(base_params, scheme):
    est = price_zcb_mc(_config(scheme), base_params)
    for res in (est.deflator, est.deflated_bond):
        assert res.within(ZCB_PRICE)
        assert abs(res.estimate - ZCB_PRICE) <= 5e-3
    if scheme is SchemeKind.MILSTEIN2:
        assert abs(est.deflated_bond.estimate - est.deflator.estimate) <= 1e-3


def test_coupon_bond_against_closed_form(bond_mode):
    params = independent_example_params()
    est = price_cb_mc(_config(mode=bond_mode), params, c=0.05, omega=0.5)
    ref = est.price.analytic_reference
    assert ref is not None
    assert abs(est.price.estimate - ref) <= 0.01 * ref


def test_stock_is_a_deflated_martingale(martingale_params):
    cfg = _config(mode=ModeFlags(stock_mode=StockMode.MARTINGALE))
    est = price_put_mc(cfg, martingale_params, K=1.0)
    assert est.martingale.within(1.0)
    assert not est.warnings or all("Kim" in w for w in est.warnings)


def test_theta_long_run_moments(base_params):
    cfg = _config(SchemeKind.MILSTEIN, n=10_000, T=500.0, dt=0.05)
    report = asymptotic_moments(cfg, base_params)
    theta = report.row("theta")
    assert theta.empirical_mean == pytest.approx(5.0, rel=0.05)
    assert theta.empirical_variance == pytest.approx(0.025, rel=0.10)
    assert not report.warnings


def test_weak_order_slopes(base_spec):
    params = make_params(base_spec, r0=0.5, a_r=0.5, b_r=1.0, sigma_r=0.01)
    dts = [0.04, 0.02, 0.01]
    report = weak_order_study(params, [SchemeKind.EULER, SchemeKind.MILSTEIN2], dts, n_paths=N, seed=7)
    assert report.slopes[SchemeKind.MILSTEIN2] >= 1.5
    assert report.slopes[SchemeKind.EULER] <= 1.3
    for dt in dts:
        assert abs(report.bias(SchemeKind.MILSTEIN2, dt)) < abs(report.bias(SchemeKind.EULER, dt))


def test_worker_count_does_not_change_results(base_params):
    cfg = _config(n=8192, dt=0.05, block_size=512)
    system = FiveFactorSystem(base_params, ModeFlags(ShortRateMode.COMPOSITE), strict=False)
    runs = [run_blocks(system, cfg, workers=w) for w in (1, 2, 8)]
    for other in runs[1:]:
        np.testing.assert_array_equal(runs[0].terminal, other.terminal)
        np.testing.assert_array_equal(runs[0].int_chiD, other.int_chiD)


def test_antithetic_lowers_estimator_variance(base_params):
    wins = 0
    for seed in range(20):
        cfg = _config(SchemeKind.EULER, n=2000, dt=0.05, seed=seed)
        hist = portfolio_histogram(cfg, base_params, 0.15, 0.65, 0.2, workers=1)
        wins += hist.var_antithetic <= hist.var_plain
    assert wins >= 18


def test_antithetic_estimator_is_unbiased(base_params):
    misses = 0
    for seed in range(20):
        plain = price_zcb_mc(_config(SchemeKind.EULER, n=2000, dt=0.05, seed=seed, antithetic=False),
                             base_params, workers=1).deflator
        anti = price_zcb_mc(_config(SchemeKind.EULER, n=2000, dt=0.05, seed=seed), base_params, workers=1).deflator
        combined = (plain.standard_error ** 2 + anti.standard_error ** 2) ** 0.5
        misses += abs(plain.estimate - anti.estimate) > 3 * combined
    assert misses <= 1


@pytest.mark.parametrize("scheme", list(SchemeKind))
def test_bond_gap_shrinks_with_step(base_params, scheme):
    dts = (0.04, 0.02, 0.01)
    for seed in range(5):
        gaps = []
        for dt in dts:
            est = price_zcb_mc(_config(scheme, dt=dt, seed=seed), base_params)
            gaps.append(abs(est.deflated_bond.estimate - est.deflator.estimate))
        shrinking = sum(gaps[j] < gaps[i] for i, j in ((0, 1), (1, 2), (0, 2)))
        assert shrinking >= 2, (seed, gaps)
