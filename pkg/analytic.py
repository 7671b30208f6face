# analytic.py
from __future__ import annotations

import math
import logging
from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np
from scipy import integrate, special
from scipy.stats import norm

from errors import FormulaInapplicable

# ------------ Logging ------------
logger = logging.getLogger("esg.analytic")


# -----------------------------------------------------------------------------
# CIR zero-coupon bond
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class CirBond:
    a_r: float
    b_r: float
    sigma_r: float

    def __post_init__(self) -> None:
        if self.sigma_r < 0:
            raise ValueError("sigma_r must be non-negative")
        if not self.gamma > 0:
            raise ValueError("gamma_CIR must be positive (b_r and sigma_r both zero?)")

    @property
    def gamma(self) -> float:
        return 0.5 * math.sqrt(self.b_r ** 2 + 2.0 * self.sigma_r ** 2)


def _c_and_a(bond: CirBond, tau) -> Tuple[np.ndarray, np.ndarray]:
    tau = np.asarray(tau, dtype=float)
    g = bond.gamma
    sh, ch = np.sinh(g * tau), np.cosh(g * tau)
    den = g * ch + 0.5 * bond.b_r * sh
    c = sh / den
    if bond.sigma_r == 0.0:
        # deterministic-rate limit: C = (1 - e^{-b tau}) / b, A = a * int C
        b = bond.b_r
        a = bond.a_r * (tau - c) / b
    else:
        a = -(2.0 * bond.a_r / bond.sigma_r ** 2) * np.log(g * np.exp(0.5 * bond.b_r * tau) / den)
    return c, a


def zcb_price(bond: CirBond, t, T, r):
    """P(t, T, r) = exp(-r C_p - A_p) under the risk-neutral CIR dynamics a_r - b_r r."""
    tau = np.asarray(T, dtype=float) - np.asarray(t, dtype=float)
    if np.any(tau < 0):
        raise ValueError("zcb_price needs T >= t")
    c, a = _c_and_a(bond, tau)
    out = np.exp(-np.asarray(r, dtype=float) * c - a)
    return float(out) if out.ndim == 0 else out


def zcb_dr(bond: CirBond, t, T, r):
    tau = np.asarray(T, dtype=float) - np.asarray(t, dtype=float)
    c, a = _c_and_a(bond, tau)
    out = -c * np.exp(-np.asarray(r, dtype=float) * c - a)
    return float(out) if out.ndim == 0 else out


class BondSensitivity(NamedTuple):
    value: np.ndarray   # P_r
    d_r: np.ndarray
    d_rr: np.ndarray
    d_t: np.ndarray


def bond_sensitivity(bond: CirBond, t: float, T: float, r) -> BondSensitivity:
    """
    P_r and the partials the operator calculus needs. C_p and A_p solve
    dC/dt = b C + sigma^2 C^2 / 2 - 1 and dA/dt = -a C.
    """
    r = np.asarray(r, dtype=float)
    c, a = _c_and_a(bond, max(T - t, 0.0))
    price = np.exp(-r * c - a)
    c_t = bond.b_r * c + 0.5 * bond.sigma_r ** 2 * c * c - 1.0
    a_t = -bond.a_r * c
    price_t = price * (-r * c_t - a_t)
    return BondSensitivity(
        value=-c * price,
        d_r=c * c * price,
        d_rr=-(c ** 3) * price,
        d_t=-c_t * price - c * price_t,
    )


# -----------------------------------------------------------------------------
# CIR moments (finite horizon and long run)
# -----------------------------------------------------------------------------
def cir_mean(x0: float, a: float, b: float, t: float) -> float:
    e = math.exp(-b * t)
    return e * x0 + (a / b) * (1.0 - e)


def cir_variance(x0: float, a: float, b: float, sigma: float, t: float) -> float:
    e1, e2 = math.exp(-b * t), math.exp(-2.0 * b * t)
    return (sigma ** 2 / b) * x0 * (e1 - e2) + (a * sigma ** 2 / (2.0 * b * b)) * (1.0 - 2.0 * e1 + e2)


def cir_long_run(a: float, b: float, sigma: float) -> Tuple[float, float]:
    return a / b, a * sigma ** 2 / (2.0 * b * b)


# -----------------------------------------------------------------------------
# Stock option (small-volatility expansion around Black-Scholes)
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class KimInputs:
    S0: float
    K: float
    T: float
    sigma_S: float
    rho_rS: float
    r0: float
    a_r: float
    b_r: float
    sigma_r: float

    @property
    def delta(self) -> float:
        return self.sigma_r

    @property
    def kappa(self) -> float:
        return self.b_r - self.sigma_r

    @property
    def theta(self) -> float:
        return self.a_r / self.kappa

    @property
    def bond(self) -> CirBond:
        return CirBond(self.a_r, self.b_r, self.sigma_r)


def black_scholes_call(S0: float, K: float, T: float, sigma: float, discount: float) -> float:
    st = sigma * math.sqrt(T)
    d1 = (math.log(S0 / (K * discount)) + 0.5 * st * st) / st
    d2 = d1 - st
    return S0 * special.ndtr(d1) - K * discount * special.ndtr(d2)


def kim_call(inputs: KimInputs) -> float:
    S0, K, T, sig = inputs.S0, inputs.K, inputs.T, inputs.sigma_S
    r0 = inputs.r0
    if inputs.kappa == 0.0:
        raise FormulaInapplicable("kappa = b_r - sigma_r is zero")
    kappa, th = inputs.kappa, inputs.theta
    if th <= 0.0 or r0 <= 0.0:
        raise FormulaInapplicable(f"need theta_Kim > 0 and r0 > 0, got {th!r}, {r0!r}")

    ek = math.exp(kappa * T)
    emk = 1.0 / ek
    half = math.exp(0.5 * kappa * T)

    int_r = (r0 - th) * (1.0 - emk) / kappa + th * T
    disc = math.exp(-int_r)
    st = sig * math.sqrt(T)
    d1 = (math.log(S0 / K) + int_r + 0.5 * sig * sig * T) / st
    d2 = d1 - st

    c0 = ((r0 - th) * ((1.0 - emk) / kappa - T * emk) + th * T * (1.0 - (1.0 - emk) / kappa)) / (kappa * st)

    radicand = r0 - th * (1.0 - emk)
    if radicand < 0.0:
        raise FormulaInapplicable(
            f"C_11 radicand r0 - theta(1 - e^(-kappa T)) = {radicand:.3e} < 0 at T={T}"
        )
    psi = math.log(
        (th * (2.0 * ek - 1.0) + r0 + 2.0 * half * math.sqrt(th * th * (ek - 1.0) + th * r0))
        / (math.sqrt(r0) + math.sqrt(th)) ** 2
    )
    c11 = (
        2.0 * math.sqrt(th) * ((1.0 + 2.0 * ek) * math.sqrt(r0) - 3.0 * half * math.sqrt(radicand))
        + psi * (th * (1.0 + 2.0 * ek) - r0)
    ) / (2.0 * ek * kappa ** 2 * math.sqrt(th))
    c1 = -inputs.rho_rS * c11 / (sig * T)

    N1, N2 = special.ndtr(d1), special.ndtr(d2)
    n1, n2 = norm.pdf(d1), norm.pdf(d2)
    lead = S0 * N1 - K * disc * N2
    first = inputs.delta * c0 * (S0 * n1 - K * disc * (n2 - st * N2))
    second = inputs.delta * c1 * (d2 * S0 * n1 - d1 * K * disc * n2)
    return float(lead + first + second)


def kim_put(inputs: KimInputs) -> float:
    p0 = zcb_price(inputs.bond, 0.0, inputs.T, inputs.r0)
    return kim_call(inputs) + inputs.K * p0 - inputs.S0


# -----------------------------------------------------------------------------
# Defaultable coupon bond (reduced-form, independent factors)
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class LongstaffInputs:
    c: float
    omega: float
    e_chi: float
    f_chi: float
    sigma_chi: float
    chi0: float
    gamma0: float
    eta: float
    r0: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError(f"omega must lie in [0, 1], got {self.omega!r}")
        if self.sigma_chi <= 0.0:
            raise ValueError("sigma_chi must be positive")
        if self.f_chi == self.phi:
            raise ValueError("f_chi equals phi")

    @property
    def phi(self) -> float:
        return math.sqrt(2.0 * self.sigma_chi ** 2 + self.f_chi ** 2)

    @property
    def kappa(self) -> float:
        return (self.f_chi + self.phi) / (self.f_chi - self.phi)


class LongstaffTerms(NamedTuple):
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    G: np.ndarray
    H: np.ndarray


def longstaff_terms(inputs: LongstaffInputs, t) -> LongstaffTerms:
    t = np.asarray(t, dtype=float)
    e, f, s2 = inputs.e_chi, inputs.f_chi, inputs.sigma_chi ** 2
    phi, kappa = inputs.phi, inputs.kappa
    ept = np.exp(phi * t)
    ratio = (1.0 - kappa) / (1.0 - kappa * ept)
    power = 2.0 * e / s2
    base = np.exp(e * (f + phi) * t / s2)
    with np.errstate(over="ignore"):
        C = np.exp(inputs.eta ** 2 * t ** 3 / 6.0)
    return LongstaffTerms(
        A=base * ratio ** power,
        B=(f - phi) / s2 + 2.0 * phi / (s2 * (1.0 - kappa * ept)),
        C=C,
        G=(e / phi) * (ept - 1.0) * base * ratio ** (power + 1.0),
        H=np.exp((e * (f + phi) + phi * s2) * t / s2) * ratio ** (power + 2.0),
    )


def longstaff_cb(inputs: LongstaffInputs, bond: CirBond, T: float, dt: float = 0.01) -> float:
    """
    Coupon annuity + principal + recovery, integrals by composite Simpson on a
    grid of spacing dt (rounded to an even interval count).
    """
    n = max(2, int(round(T / dt)))
    if n % 2:
        n += 1
    t = np.linspace(0.0, T, n + 1)
    terms = longstaff_terms(inputs, t)
    if not np.all(np.isfinite(terms.C)):
        raise FormulaInapplicable(f"C_CB = exp(eta^2 t^3 / 6) overflows before T={T}")

    p = zcb_price(bond, 0.0, t, inputs.r0)
    common = np.exp(terms.B * inputs.chi0) * terms.C * p * np.exp(-inputs.gamma0 * t)
    coupon = inputs.c * integrate.simpson(terms.A * common, x=t)
    principal = terms.A[-1] * common[-1]
    recovery = (1.0 - inputs.omega) * integrate.simpson(common * (terms.G + terms.H * inputs.chi0), x=t)
    price = float(coupon + principal + recovery)
    if not math.isfinite(price):
        raise FormulaInapplicable("coupon-bond integrand is not finite")
    logger.debug("[analytic] longstaff_cb T=%g: coupon=%.10g principal=%.10g recovery=%.10g", T, coupon, principal, recovery)
    return price
