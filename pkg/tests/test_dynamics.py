# tests/test_dynamics.py
from __future__ import annotations

import numpy as np
import pytest

from correlation import CorrelationSpec
from dynamics import (
    FiveFactorSystem,
    ModeFlags,
    PROCESSES,
    ShortRateMode,
    StateVector,
    StockMode,
    feller_check,
    loadings_for,
    regularity_drifts,
    residual_K_terms,
)
from errors import ThetaUnderflow, UnsupportedCoefficient, ZeroRhoRGamma
from schemes import l0_apply, lk_apply

from conftest import ZCB_PRICE, make_params

IR, ITH, IB, IP, IS, ICHI, IG, ID = range(8)


def _state(t=0.0, **values) -> StateVector:
    base = dict(r=0.02, theta=0.3, B=1.0, P=1.0, S=1.0, chi=0.05, gamma=0.01, D=1.0)
    base.update(values)
    return StateVector(t, *(np.asarray(base[k], dtype=float) for k in PROCESSES))


def _random_states(n: int, seed: int) -> StateVector:
    rng = np.random.default_rng(seed)
    return StateVector(
        0.25,
        r=rng.uniform(1e-4, 0.1, n),
        theta=rng.uniform(0.01, 1.0, n),
        B=rng.uniform(0.5, 2.0, n),
        P=rng.uniform(0.5, 2.0, n),
        S=rng.uniform(0.5, 2.0, n),
        chi=rng.uniform(0.0, 0.2, n),
        gamma=rng.uniform(-0.05, 0.05, n),
        D=rng.uniform(0.5, 2.0, n),
    )


# -----------------------------------------------------------------------------
# Regularity conditions
# -----------------------------------------------------------------------------
def test_stock_drift_regularity(base_params, simple_mode):
    reg = regularity_drifts(_state(), base_params, simple_mode)
    assert float(reg.mu_S) == pytest.approx(0.02 + 0.3 * 0.2 * 0.6, abs=1e-15)
    assert float(reg.mu_S) == pytest.approx(0.056)


def test_eta_zero_without_gamma(base_params, simple_mode):
    reg = regularity_drifts(_state(gamma=0.0, theta=0.7, r=0.05), base_params, simple_mode)
    assert float(reg.eta) == 0.0


def test_eta_value(base_params, simple_mode):
    reg = regularity_drifts(_state(), base_params, simple_mode)
    assert float(reg.eta) == pytest.approx(-0.01 * 0.02 / (0.5 * 0.3))


def test_composite_reduces_to_simple(base_params):
    state = _state(chi=0.0, gamma=0.0)
    simple = FiveFactorSystem(base_params, ModeFlags()).drift_diffusion(state)
    comp = FiveFactorSystem(base_params, ModeFlags(ShortRateMode.COMPOSITE)).drift_diffusion(state)
    np.testing.assert_array_equal(simple.drift, comp.drift)
    np.testing.assert_array_equal(simple.diffusion, comp.diffusion)


def test_composite_short_rate(base_params):
    reg = regularity_drifts(_state(), base_params, ModeFlags(ShortRateMode.COMPOSITE))
    assert float(reg.mu_S) == pytest.approx(0.02 + 0.05 + 0.01 + 0.3 * 0.2 * 0.6)


def test_theta_underflow(base_params, simple_mode):
    with pytest.raises(ThetaUnderflow):
        regularity_drifts(_state(theta=1e-9), base_params, simple_mode)
    # not strict: flagged instead
    system = FiveFactorSystem(base_params, simple_mode, strict=False)
    dd = system.drift_diffusion(_state(theta=np.array([1e-9, 0.3]), gamma=np.array([0.01, 0.01])))
    np.testing.assert_array_equal(dd.failed, [True, False])


def test_zero_rho_r_gamma(base_params, simple_mode):
    spec = CorrelationSpec(0.6, 0.0, 0.0, 0.0, 0.0, 0.0)
    params = make_params(spec)
    with pytest.raises(ZeroRhoRGamma):
        FiveFactorSystem(params, simple_mode)
    with pytest.raises(ZeroRhoRGamma):
        regularity_drifts(_state(), params, simple_mode)
    # gamma at zero leaves eta defined
    reg = regularity_drifts(_state(gamma=0.0), params, simple_mode)
    assert float(reg.eta) == 0.0


def test_longstaff_mode_uses_constant_eta(bond_mode):
    params = make_params(CorrelationSpec(0.6, 0.0, 0.0, 0.0, 0.0, 0.0), eta=0.02)
    system = FiveFactorSystem(params, bond_mode)
    dd = system.drift_diffusion(system.initial_state())
    L = system.loadings.entries
    np.testing.assert_allclose(dd.diffusion[IG, :4], 0.02 * L[3])


def test_model_params_validation(base_spec):
    with pytest.raises(ValueError, match="a_r"):
        make_params(base_spec, a_r=0.0)
    with pytest.raises(ValueError, match="chi0"):
        make_params(base_spec, chi0=-0.1)
    with pytest.raises(ValueError, match="theta0"):
        make_params(base_spec, theta0=0.0)


# -----------------------------------------------------------------------------
# Drift vector & diffusion matrix
# -----------------------------------------------------------------------------
def test_system_at_origin(base_params, simple_mode):
    system = FiveFactorSystem(base_params, simple_mode)
    state = _state(r=0.0, theta=0.0, chi=0.0, gamma=0.0)
    dd = system.drift_diffusion(state)
    expected = np.zeros(8)
    expected[IR] = base_params.a_r
    expected[ITH] = base_params.a_theta
    np.testing.assert_allclose(dd.drift, expected, atol=1e-18)
    np.testing.assert_array_equal(dd.diffusion[ID], 0.0)
    np.testing.assert_array_equal(dd.diffusion[IB], 0.0)


def test_deflator_row_at_start(base_params, simple_mode):
    system = FiveFactorSystem(base_params, simple_mode)
    dd = system.drift_diffusion(system.initial_state())
    assert dd.drift[ID] == pytest.approx(-0.02, abs=1e-15)
    assert dd.diffusion[ID, 0] == pytest.approx(-0.3, abs=1e-15)
    assert dd.diffusion.shape == (8, 5)
    assert dd.drivers == ("W_0", "W_1", "W_2", "W_3", "W_theta")


def test_martingale_stock_rows(martingale_params, martingale_mode):
    system = FiveFactorSystem(martingale_params, martingale_mode)
    state = _state(S=1.3, theta=0.4)
    dd = system.drift_diffusion(state)
    assert dd.drift[IS] == pytest.approx(1.3 * (0.02 + 0.4 ** 2))
    assert dd.diffusion[IS, 0] == pytest.approx(1.3 * 0.4)
    np.testing.assert_array_equal(dd.diffusion[IS, 1:], 0.0)
    assert system.drivers == ("W_0", "W_2", "W_3", "W_theta")


def test_martingale_offset_identity(martingale_params, martingale_mode):
    system = FiveFactorSystem(martingale_params, martingale_mode)
    state = _random_states(50, seed=3)
    dd = system.drift_diffusion(state)
    S, D = state.S, state.D
    vol_S = dd.diffusion[IS] / S
    vol_D = dd.diffusion[ID] / D
    drift_lnS = dd.drift[IS] / S - 0.5 * (vol_S ** 2).sum(axis=0)
    drift_lnD = dd.drift[ID] / D - 0.5 * (vol_D ** 2).sum(axis=0)
    np.testing.assert_allclose(drift_lnS + drift_lnD, 0.0, atol=1e-14)
    np.testing.assert_allclose(vol_S + vol_D, 0.0, atol=1e-14)


def test_instantaneous_correlations(base_params, base_spec, simple_mode):
    system = FiveFactorSystem(base_params, simple_mode)
    dd = system.drift_diffusion(system.initial_state())
    cov = dd.diffusion @ dd.diffusion.T

    def corr(i, j):
        return cov[i, j] / np.sqrt(cov[i, i] * cov[j, j])

    pairs = {
        (IR, IS): base_spec.rho_rS,
        (IR, ICHI): base_spec.rho_rChi,
        (IR, IG): base_spec.rho_rGamma,
        (IS, ICHI): base_spec.rho_SChi,
        (IS, IG): base_spec.rho_SGamma,
        (ICHI, IG): base_spec.rho_ChiGamma,
    }
    # eta < 0 here, so gamma's shock enters with the opposite sign
    sign = {IR: 1.0, IS: 1.0, ICHI: 1.0, IG: -1.0}
    for (i, j), rho in pairs.items():
        assert corr(i, j) == pytest.approx(sign[i] * sign[j] * rho, abs=1e-12)
    assert corr(IR, IP) == pytest.approx(-1.0, abs=1e-12)
    assert corr(IR, ID) == pytest.approx(-1.0, abs=1e-12)
    for i in (IR, IS, ICHI, IG, ID):
        assert cov[i, ITH] == 0.0


def test_truncation_counts(base_params, simple_mode):
    system = FiveFactorSystem(base_params, simple_mode, strict=False)
    dd = system.drift_diffusion(_state(r=np.array([-0.01, 0.01]), chi=np.array([-0.001, 0.0])))
    np.testing.assert_array_equal(dd.truncations, [2, 0])
    assert dd.diffusion[IR, 0, 0] == 0.0


# -----------------------------------------------------------------------------
# General-deflator residuals
# -----------------------------------------------------------------------------
@pytest.mark.parametrize("mode", [
    ModeFlags(),
    ModeFlags(ShortRateMode.COMPOSITE),
    ModeFlags(stock_mode=StockMode.MARTINGALE),
    ModeFlags(ShortRateMode.COMPOSITE, StockMode.MARTINGALE),
])
def test_residuals_vanish_under_regularity(base_spec, mode):
    spec = base_spec.martingale_consistent() if mode.martingale else base_spec
    params = make_params(spec)
    state = _random_states(10_000, seed=11)
    res = residual_K_terms(state, params, mode)
    for k in res:
        np.testing.assert_allclose(k, 0.0, atol=1e-12)


def test_perturbed_stock_drift(base_params, simple_mode):
    state = _state()
    reg = regularity_drifts(state, base_params, simple_mode)
    res = residual_K_terms(state, base_params, simple_mode, drifts=reg._replace(mu_S=reg.mu_S + 0.01))
    assert float(res.K_Psi) == pytest.approx(-0.01 / (0.2 * np.sqrt(1 - 0.36)), rel=1e-12)
    # the chi condition absorbs the extra W_1 exposure
    L = system_loadings(base_params)
    assert float(res.K_Psi) * L[2, 1] + float(res.K_Gamma) * L[2, 2] == pytest.approx(0.0, abs=1e-12)
    assert sum(float(k) * L[3, i + 1] for i, k in enumerate(res)) == pytest.approx(0.0, abs=1e-12)


def test_residuals_without_gamma(base_params, simple_mode):
    state = _random_states(10, seed=5)
    state = StateVector(state.t, state.r, state.theta, state.B, state.P, state.S, state.chi,
                        np.zeros(10), state.D)
    np.testing.assert_allclose(residual_K_terms(state, base_params, simple_mode).K_I, 0.0, atol=1e-12)


# -----------------------------------------------------------------------------
# Feller conditions
# -----------------------------------------------------------------------------
def test_feller_base_example(base_params, simple_mode):
    report = {c.factor: c for c in feller_check(base_params, simple_mode)}
    assert report["theta"].holds and report["theta"].lhs == pytest.approx(0.1)
    assert report["theta"].rhs == pytest.approx(1e-4)
    assert report["r"].holds and report["r"].lhs == pytest.approx(0.04)
    assert report["chi"].state_dependent


def test_feller_chi_fails_for_large_vol(base_spec, simple_mode):
    params = make_params(base_spec, sigma_chi=1.0)
    report = {c.factor: c for c in feller_check(params, simple_mode)}
    assert not report["chi"].holds


# -----------------------------------------------------------------------------
# Coefficient jets against central differences
# -----------------------------------------------------------------------------
def _values(system, state):
    drift, diff = system.jets(state)
    out = {("a", i): j for i, j in drift.items()}
    out.update({("b", i, k): j for (i, k), j in diff.items()})
    return out


def _shift(state, i, h):
    X = state.to_array().astype(float)
    X[i] += h
    return state.with_values(X, state.t)


@pytest.mark.parametrize("mode", [
    ModeFlags(),
    ModeFlags(ShortRateMode.COMPOSITE),
    ModeFlags(stock_mode=StockMode.MARTINGALE),
])
def test_jets_match_differences(base_spec, mode):
    spec = base_spec.martingale_consistent() if mode.martingale else base_spec
    system = FiveFactorSystem(make_params(spec), mode)
    state = _state(t=0.2, r=0.03, theta=0.4, B=1.1, P=0.98, S=1.2, chi=0.06, gamma=0.02, D=0.9)
    base = _values(system, state)
    dd = system.drift_diffusion(state)
    h = 1e-6
    for cid, jet in base.items():
        value = dd.drift[cid[1]] if cid[0] == "a" else dd.diffusion[cid[1], cid[2]]
        assert float(jet.value) == pytest.approx(float(value), rel=1e-13, abs=1e-16), cid
        for i in range(8):
            up = _values(system, _shift(state, i, h))[cid]
            down = _values(system, _shift(state, i, -h))[cid]
            fd = (float(up.value) - float(down.value)) / (2 * h)
            assert float(jet.grad.get(i, 0.0)) == pytest.approx(fd, rel=1e-5, abs=1e-8), (cid, i)
            for j in range(8):
                fd2 = (float(up.grad.get(j, 0.0)) - float(down.grad.get(j, 0.0))) / (2 * h)
                key = (min(i, j), max(i, j))
                assert float(jet.hess.get(key, 0.0)) == pytest.approx(fd2, rel=1e-5, abs=1e-6), (cid, i, j)
        later = _values(system, StateVector(state.t + h, *state.to_array()))[cid]
        earlier = _values(system, StateVector(state.t - h, *state.to_array()))[cid]
        fd_t = (float(later.value) - float(earlier.value)) / (2 * h)
        assert float(jet.d_t) == pytest.approx(fd_t, rel=1e-5, abs=1e-8), cid


def _interior_states(n: int, seed: int) -> StateVector:
    """Random states kept clear of the square-root kinks at r = 0 and chi = 0."""
    state = _random_states(n, seed)
    X = state.to_array().copy()
    X[IR] += 0.005
    X[ITH] += 0.05
    X[ICHI] += 0.01
    return state.with_values(X, state.t)


@pytest.mark.parametrize("mode", [
    ModeFlags(),
    ModeFlags(ShortRateMode.COMPOSITE),
    ModeFlags(stock_mode=StockMode.MARTINGALE),
])
def test_jets_match_differences_on_random_states(base_spec, mode):
    spec = base_spec.martingale_consistent() if mode.martingale else base_spec
    system = FiveFactorSystem(make_params(spec), mode)
    state = _interior_states(1000, seed=23)
    n = state.r.size
    base = _values(system, state)
    h = 1e-6
    for i in range(8):
        up = _values(system, _shift(state, i, h))
        down = _values(system, _shift(state, i, -h))
        for cid, jet in base.items():
            fd = (np.broadcast_to(up[cid].value, n) - np.broadcast_to(down[cid].value, n)) / (2 * h)
            np.testing.assert_allclose(np.broadcast_to(jet.grad.get(i, 0.0), n), fd,
                                       rtol=1e-5, atol=1e-8, err_msg=f"{cid} d/d{PROCESSES[i]}")
            for j in range(8):
                g_up = np.broadcast_to(up[cid].grad.get(j, 0.0), n)
                g_down = np.broadcast_to(down[cid].grad.get(j, 0.0), n)
                key = (min(i, j), max(i, j))
                np.testing.assert_allclose(np.broadcast_to(jet.hess.get(key, 0.0), n), (g_up - g_down) / (2 * h),
                                           rtol=1e-5, atol=1e-6, err_msg=f"{cid} {key}")


def test_unknown_coefficient(base_params, simple_mode):
    system = FiveFactorSystem(base_params, simple_mode)
    m = len(system.drivers)
    for cid in (("b", 8, 0), ("b", IB, m), ("a", 8), ("c", 0)):
        with pytest.raises(UnsupportedCoefficient):
            system.coefficient_jet(cid, system.initial_state())


def test_every_entry_inside_the_system_has_a_jet(base_params, simple_mode):
    # rho_SGamma - rho_rS rho_rGamma = 0 at these correlations, so W_S carries no gamma loading
    system = FiveFactorSystem(base_params, simple_mode)
    state = _interior_states(5, seed=2)
    dd = system.drift_diffusion(state)
    for i in range(8):
        for k in range(len(system.drivers)):
            jet = system.coefficient_jet(("b", i, k), state)
            np.testing.assert_allclose(np.broadcast_to(jet.value, (5,)), dd.diffusion[i, k], rtol=1e-13, atol=1e-15)
    np.testing.assert_array_equal(system.coefficient_jet(("b", IB, 0), state).value, 0.0)
    np.testing.assert_allclose(l0_apply(("b", IG, 1), state, system), 0.0)
    np.testing.assert_allclose(lk_apply(("b", IG, 1), 0, state, system), 0.0)


def test_initial_state(base_params):
    s = StateVector.initial(base_params, 3)
    assert s.to_array().shape == (8, 3)
    np.testing.assert_allclose(s.P, ZCB_PRICE, atol=1e-12)
    scalar = StateVector.initial(base_params)
    assert scalar.r == 0.02 and scalar.D == 1.0


def system_loadings(params):
    return loadings_for(params, ModeFlags()).entries
