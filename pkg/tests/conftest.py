# tests/conftest.py
from __future__ import annotations

import pytest

from correlation import CorrelationSpec
from dynamics import ModeFlags, ModelParams, ShortRateMode, StockMode

BASE_CONFIG = """\
# base example: T = 1, dt = 0.01
a_r = 0.02
b_r = 0.04
sigma_r = 0.01
a_theta = 0.05
b_theta = 0.01
sigma_theta = 0.01
sigma_S = 0.2
sigma_chi = 0.01
r0 = 0.02
theta0 = 0.3
S0 = 1
chi0 = 0.05
gamma0 = 0.01
rho_rS = 0.6
rho_rChi = 0.7
rho_rGamma = 0.5
rho_SChi = 0.1
rho_SGamma = 0.3
rho_ChiGamma = 0.1
n_paths = 2500
seed = 20240917
"""

ZCB_PRICE = 0.970957220487724


def make_params(spec: CorrelationSpec, **overrides) -> ModelParams:
    values = dict(
        a_r=0.02, b_r=0.04, sigma_r=0.01,
        a_theta=0.05, b_theta=0.01, sigma_theta=0.01,
        sigma_S=0.2, sigma_chi=0.01,
        r0=0.02, theta0=0.3, S0=1.0, chi0=0.05, gamma0=0.01,
        f=0.1, bond_maturity=1.0,
    )
    values.update(overrides)
    return ModelParams(spec=spec, **values)


@pytest.fixture
def base_spec() -> CorrelationSpec:
    return CorrelationSpec(0.6, 0.7, 0.5, 0.1, 0.3, 0.1)


@pytest.fixture
def base_params(base_spec) -> ModelParams:
    return make_params(base_spec)


@pytest.fixture
def martingale_params(base_spec) -> ModelParams:
    return make_params(base_spec.martingale_consistent())


@pytest.fixture
def independent_params() -> ModelParams:
    return make_params(CorrelationSpec(0.6, 0.0, 0.0, 0.0, 0.0, 0.0))


@pytest.fixture
def simple_mode() -> ModeFlags:
    return ModeFlags()


@pytest.fixture
def martingale_mode() -> ModeFlags:
    return ModeFlags(stock_mode=StockMode.MARTINGALE)


@pytest.fixture
def bond_mode() -> ModeFlags:
    return ModeFlags(ShortRateMode.COMPOSITE, longstaff_independent=True)


@pytest.fixture
def config_file(tmp_path):
    def write(extra: str = "", base: str = BASE_CONFIG):
        p = tmp_path / "run.cfg"
        p.write_text(base + extra, encoding="utf-8")
        return p
    return write
