# dynamics.py
from __future__ import annotations

import math
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from analytic import CirBond, bond_sensitivity, zcb_price
from config import THETA_FLOOR
from correlation import CorrelationSpec, LoadingMatrix, cholesky_loadings, reduced_loadings
from errors import NonFiniteState, ThetaUnderflow, UnsupportedCoefficient, ZeroRhoRGamma

# ------------ Logging ------------
logger = logging.getLogger("esg.dynamics")

PROCESSES: Tuple[str, ...] = ("r", "theta", "B", "P", "S", "chi", "gamma", "D")
IR, ITH, IB, IP, IS, ICHI, IG, ID = range(len(PROCESSES))


class ShortRateMode(str, Enum):
    SIMPLE = "simple"
    COMPOSITE = "composite"


class StockMode(str, Enum):
    FREE = "free"
    MARTINGALE = "martingale"


@dataclass(frozen=True)
class ModeFlags:
    short_rate_mode: ShortRateMode = ShortRateMode.SIMPLE
    stock_mode: StockMode = StockMode.FREE
    # eta is a free constant instead of the regularity value
    longstaff_independent: bool = False

    @property
    def composite(self) -> bool:
        return self.short_rate_mode is ShortRateMode.COMPOSITE

    @property
    def martingale(self) -> bool:
        return self.stock_mode is StockMode.MARTINGALE


# -----------------------------------------------------------------------------
# Parameters & state
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class ModelParams:
    a_r: float
    b_r: float
    sigma_r: float
    a_theta: float
    b_theta: float
    sigma_theta: float
    sigma_S: float
    sigma_chi: float
    r0: float
    theta0: float
    S0: float
    chi0: float
    gamma0: float
    spec: CorrelationSpec
    f: float = 0.1
    eta: float = 0.0
    bond_maturity: float = 1.0
    B0: float = 1.0
    D0: float = 1.0

    def __post_init__(self) -> None:
        for name in ("a_r", "b_r", "a_theta", "b_theta", "r0", "theta0", "S0", "bond_maturity"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v!r}")
        # zero volatility is the deterministic limit
        for name in ("sigma_r", "sigma_theta", "sigma_S", "sigma_chi", "chi0"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be non-negative, got {v!r}")
        for name in ("f", "eta", "gamma0"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def bond(self) -> CirBond:
        return CirBond(self.a_r, self.b_r, self.sigma_r)


@dataclass(frozen=True)
class StateVector:
    """Joint state at one grid time. Fields are floats or arrays over paths."""
    t: float
    r: np.ndarray
    theta: np.ndarray
    B: np.ndarray
    P: np.ndarray
    S: np.ndarray
    chi: np.ndarray
    gamma: np.ndarray
    D: np.ndarray

    names = PROCESSES

    @classmethod
    def initial(cls, params: ModelParams, n: Optional[int] = None) -> "StateVector":
        p0 = zcb_price(params.bond, 0.0, params.bond_maturity, params.r0)
        values = (params.r0, params.theta0, params.B0, p0, params.S0, params.chi0, params.gamma0, params.D0)
        if n is None:
            return cls(0.0, *(float(v) for v in values))
        return cls(0.0, *(np.full(n, float(v)) for v in values))

    def to_array(self) -> np.ndarray:
        return np.stack(np.broadcast_arrays(*(np.asarray(getattr(self, k), dtype=float) for k in PROCESSES)))

    def with_values(self, values: np.ndarray, t: float) -> "StateVector":
        return StateVector(t, *values)

    def is_finite(self) -> np.ndarray:
        return np.all(np.isfinite(self.to_array()), axis=0)


@dataclass
class DriftDiffusion:
    drift: np.ndarray                 # (d, ...)
    diffusion: np.ndarray             # (d, m, ...)
    drivers: Tuple[str, ...]
    failed: Optional[np.ndarray] = None
    truncations: Optional[np.ndarray] = None


class RegularityDrifts(NamedTuple):
    mu_S: np.ndarray
    e: np.ndarray
    eta: np.ndarray


class ResidualTerms(NamedTuple):
    K_Psi: np.ndarray
    K_Gamma: np.ndarray
    K_I: np.ndarray


# -----------------------------------------------------------------------------
# Regularity conditions
# -----------------------------------------------------------------------------
def _root(x):
    """Full-truncation square root with first and second derivatives (0 where x <= 0)."""
    x = np.asarray(x, dtype=float)
    pos = x > 0
    s = np.sqrt(np.where(pos, x, 0.0))
    inv = np.divide(1.0, s, out=np.zeros_like(s), where=pos)
    return s, 0.5 * inv, -0.25 * inv ** 3


def short_rate(state: StateVector, mode: ModeFlags):
    r = np.asarray(state.r, dtype=float)
    if mode.composite:
        return r + state.chi + state.gamma
    return r


def _short_rate_grad(mode: ModeFlags) -> Dict[int, float]:
    if mode.composite:
        return {IR: 1.0, ICHI: 1.0, IG: 1.0}
    return {IR: 1.0}


def _stock_vol(state: StateVector, params: ModelParams, mode: ModeFlags):
    return np.asarray(state.theta, dtype=float) if mode.martingale else params.sigma_S


def _eta_blocked(state: StateVector, params: ModelParams, mode: ModeFlags) -> np.ndarray:
    """Paths where the regularity eta is undefined: theta under the floor with gamma != 0."""
    if mode.longstaff_independent:
        return np.zeros(np.shape(state.theta), dtype=bool)
    gamma = np.asarray(state.gamma, dtype=float)
    return (np.asarray(state.theta) <= THETA_FLOOR) & (gamma != 0.0)


def regularity_drifts(state: StateVector, params: ModelParams, mode: ModeFlags,
                      strict: bool = True) -> RegularityDrifts:
    theta = np.asarray(state.theta, dtype=float)
    chi = np.asarray(state.chi, dtype=float)
    gamma = np.asarray(state.gamma, dtype=float)
    spec = params.spec
    R = short_rate(state, mode)

    if mode.martingale:
        mu_S = R + theta * theta
    else:
        mu_S = R + theta * params.sigma_S * spec.rho_rS
    e = R * chi + params.f * chi + params.sigma_chi * spec.rho_rChi * theta * _root(chi)[0]

    if mode.longstaff_independent:
        eta = np.full(np.shape(gamma), params.eta)
        return RegularityDrifts(mu_S, e, eta)

    if spec.rho_rGamma == 0.0:
        if strict and np.any(gamma != 0.0):
            raise ZeroRhoRGamma("rho_rGamma = 0 leaves eta undefined for gamma != 0")
        return RegularityDrifts(mu_S, e, np.zeros(np.shape(gamma)))

    blocked = _eta_blocked(state, params, mode)
    if strict and np.any(blocked):
        raise ThetaUnderflow(f"theta <= {THETA_FLOOR} with gamma != 0")
    theta_safe = np.maximum(theta, THETA_FLOOR)
    eta = np.where(gamma == 0.0, 0.0, -gamma * R / (spec.rho_rGamma * theta_safe))
    return RegularityDrifts(mu_S, e, eta)


def loadings_for(params: ModelParams, mode: ModeFlags) -> LoadingMatrix:
    if mode.martingale:
        return reduced_loadings(params.spec)
    return cholesky_loadings(params.spec)


# -----------------------------------------------------------------------------
# Drift vector & diffusion matrix
# -----------------------------------------------------------------------------
def assemble_system(state: StateVector, params: ModelParams, mode: ModeFlags,
                    loadings: LoadingMatrix, bond_sensitivity, strict: bool = True) -> DriftDiffusion:
    if strict and not np.all(state.is_finite()):
        raise NonFiniteState(f"non-finite state at t={state.t}")

    r = np.asarray(state.r, dtype=float)
    theta = np.asarray(state.theta, dtype=float)
    B, P, S, chi, gamma, D = (np.asarray(getattr(state, k), dtype=float) for k in ("B", "P", "S", "chi", "gamma", "D"))
    shape = np.broadcast_shapes(*(np.shape(x) for x in (r, theta, B, P, S, chi, gamma, D)))

    reg = regularity_drifts(state, params, mode, strict=strict)
    R = short_rate(state, mode)
    sr, _, _ = _root(r)
    sth, _, _ = _root(theta)
    L = loadings.entries
    m = loadings.n_drivers
    sig_S = _stock_vol(state, params, mode)

    drift = np.zeros((len(PROCESSES),) + shape)
    diffusion = np.zeros((len(PROCESSES), m + 1) + shape)

    drift[IR] = params.a_r - params.b_r * r + theta * params.sigma_r * sr
    drift[ITH] = params.a_theta - params.b_theta * theta
    drift[IB] = B * R
    drift[IP] = P * R + bond_sensitivity * params.sigma_r * sr * theta
    drift[IS] = S * reg.mu_S
    drift[ICHI] = reg.e - params.f * chi
    drift[ID] = -D * R

    diffusion[IR, 0] = params.sigma_r * sr
    diffusion[ITH, m] = params.sigma_theta * sth
    diffusion[IP, 0] = bond_sensitivity * params.sigma_r * sr
    sc = _root(chi)[0]
    for k in range(m):
        diffusion[IS, k] = S * sig_S * L[1, k]
        diffusion[ICHI, k] = params.sigma_chi * sc * L[2, k]
        diffusion[IG, k] = reg.eta * L[3, k]
    diffusion[ID, 0] = -D * theta

    failed = None
    if not strict:
        failed = _eta_blocked(state, params, mode) | ~np.broadcast_to(state.is_finite(), shape)
    truncations = (r < 0).astype(int) + (theta < 0) + (chi < 0)
    return DriftDiffusion(drift, diffusion, loadings.drivers + ("W_theta",), failed, truncations)


# -----------------------------------------------------------------------------
# General-deflator residuals
# -----------------------------------------------------------------------------
def _safe_ratio(num, den, limit):
    den = np.asarray(den, dtype=float)
    ok = den != 0
    return np.where(ok, np.asarray(num, dtype=float) / np.where(ok, den, 1.0), limit)


def residual_K_terms(state: StateVector, params: ModelParams, mode: ModeFlags,
                     drifts: Optional[RegularityDrifts] = None,
                     loadings: Optional[LoadingMatrix] = None) -> ResidualTerms:
    """
    Solve the drift-zero conditions of D*S, D*chi and D*gamma for the deflator
    loadings on the drivers each factor introduces. D's own W_0 loading is -theta.
    Under the regularity drifts every solved loading is zero.
    """
    if drifts is None:
        drifts = regularity_drifts(state, params, mode)
    if loadings is None:
        loadings = loadings_for(params, mode)
    L = loadings.entries
    theta = np.asarray(state.theta, dtype=float)
    chi = np.asarray(state.chi, dtype=float)
    gamma = np.asarray(state.gamma, dtype=float)
    R = short_rate(state, mode)
    sig_S = _stock_vol(state, params, mode)
    sc = _root(chi)[0]

    K = {0: -theta}
    col = {d: j for j, d in enumerate(loadings.drivers)}

    def _solve(row, pivot, lead):
        acc = lead
        for k in range(pivot):
            acc = acc - K[k] * L[row, k]
        return acc / L[row, pivot]

    # S: per unit of S, (R - mu_S)/sigma_S on the loading scale
    if "W_1" in col:
        s_lead = _safe_ratio(R - drifts.mu_S, sig_S + 0.0 * theta, -params.spec.rho_rS * theta)
        K[col["W_1"]] = _solve(1, col["W_1"], s_lead)

    # chi: (R chi - e + f chi) / (sigma_chi sqrt(chi)); limit -rho_rChi theta at chi = 0
    num = R * chi - drifts.e + params.f * chi
    chi_lead = _safe_ratio(num, params.sigma_chi * sc, -params.spec.rho_rChi * theta)
    K[col["W_2"]] = _solve(2, col["W_2"], chi_lead)

    # gamma: R gamma / eta; regularity limit -rho_rGamma theta at eta = 0
    eta = np.asarray(drifts.eta, dtype=float)
    gamma_lead = _safe_ratio(R * gamma, eta, -params.spec.rho_rGamma * theta)
    K[col["W_3"]] = _solve(3, col["W_3"], gamma_lead)

    zero = np.zeros(np.shape(theta))
    return ResidualTerms(
        K_Psi=K.get(col.get("W_1", -1), zero),
        K_Gamma=K[col["W_2"]],
        K_I=K[col["W_3"]],
    )


# -----------------------------------------------------------------------------
# Feller conditions
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class FellerCondition:
    factor: str
    lhs: float
    rhs: float
    state_dependent: bool = False

    @property
    def holds(self) -> bool:
        return self.lhs > self.rhs


def feller_check(params: ModelParams, mode: ModeFlags) -> List[FellerCondition]:
    s0 = StateVector.initial(params)
    R0 = float(short_rate(s0, mode))
    e0 = R0 * params.chi0 + params.f * params.chi0 + params.sigma_chi * params.spec.rho_rChi * params.theta0 * math.sqrt(params.chi0)
    return [
        FellerCondition("r", 2.0 * params.a_r, params.sigma_r ** 2),
        FellerCondition("theta", 2.0 * params.a_theta, params.sigma_theta ** 2),
        FellerCondition("chi", e0, 0.5 * params.sigma_chi ** 2, state_dependent=True),
    ]


# -----------------------------------------------------------------------------
# Coefficient jets: value, gradient, Hessian (i <= j keys) and time derivative
# -----------------------------------------------------------------------------
@dataclass
class Jet:
    value: np.ndarray
    grad: Dict[int, np.ndarray] = field(default_factory=dict)
    hess: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    d_t: np.ndarray = 0.0

    def add_grad(self, i: int, v) -> "Jet":
        self.grad[i] = self.grad.get(i, 0.0) + v
        return self

    def add_hess(self, i: int, j: int, v) -> "Jet":
        key = (i, j) if i <= j else (j, i)
        self.hess[key] = self.hess.get(key, 0.0) + v
        return self


def _cir_jets(x, a, b, sigma, ix):
    s, s1, s2 = _root(x)
    drift = Jet(a - b * x, {ix: -b + 0.0 * x})
    diff = Jet(sigma * s, {ix: sigma * s1}, {(ix, ix): sigma * s2})
    return drift, diff


def _rate_drift_jet(r, theta, p: ModelParams, ir: int, ith: int) -> Jet:
    """Physical drift a_r - b_r r + sigma_r theta sqrt(r)."""
    s, s1, s2 = _root(r)
    jet = Jet(p.a_r - p.b_r * r + p.sigma_r * theta * s)
    jet.add_grad(ir, -p.b_r + p.sigma_r * theta * s1).add_grad(ith, p.sigma_r * s)
    jet.add_hess(ir, ir, p.sigma_r * theta * s2).add_hess(ir, ith, p.sigma_r * s1)
    return jet


class FiveFactorSystem:
    """
    The coupled (r, theta, B, P, S, chi, gamma, D) system in one operating mode.
    Drivers are the loading-matrix columns followed by W_theta.
    """

    names = PROCESSES

    def __init__(self, params: ModelParams, mode: ModeFlags,
                 loadings: Optional[LoadingMatrix] = None, strict: bool = True):
        self.params = params
        self.mode = mode
        self.loadings = loadings if loadings is not None else loadings_for(params, mode)
        self.strict = strict
        if (not mode.longstaff_independent and params.spec.rho_rGamma == 0.0
                and params.gamma0 != 0.0):
            raise ZeroRhoRGamma("rho_rGamma = 0 needs gamma0 = 0 or the Longstaff sub-mode")
        if mode.longstaff_independent:
            logger.info("[dynamics] Longstaff-independent sub-mode: eta = %g (free constant)", params.eta)

    @property
    def drivers(self) -> Tuple[str, ...]:
        return self.loadings.drivers + ("W_theta",)

    def initial_state(self, n: Optional[int] = None) -> StateVector:
        return StateVector.initial(self.params, n)

    def _sensitivity(self, state: StateVector):
        return bond_sensitivity(self.params.bond, state.t, self.params.bond_maturity, state.r)

    def drift_diffusion(self, state: StateVector) -> DriftDiffusion:
        sens = self._sensitivity(state).value
        return assemble_system(state, self.params, self.mode, self.loadings, sens, strict=self.strict)

    def milstein_terms(self, state: StateVector) -> np.ndarray:
        """
        Diagonal Milstein coefficients c_ik multiplying (dW_k^2 - dt):
        1/2 b_ik d(b_ik)/dx_i, with P and S treated as geometric in their own level.
        """
        p, mode = self.params, self.mode
        L = self.loadings.entries
        m = self.loadings.n_drivers
        theta = np.asarray(state.theta, dtype=float)
        shape = np.shape(state.to_array()[0])
        out = np.zeros((len(PROCESSES), m + 1) + shape)

        out[IR, 0] = 0.25 * p.sigma_r ** 2
        out[ITH, m] = 0.25 * p.sigma_theta ** 2

        sens = self._sensitivity(state).value
        b_p = sens * p.sigma_r * _root(state.r)[0]
        P = np.asarray(state.P, dtype=float)
        out[IP, 0] = np.divide(0.5 * b_p * b_p, P, out=np.zeros(shape), where=P != 0)

        sig_S = _stock_vol(state, p, mode)
        S = np.asarray(state.S, dtype=float)
        gamma = np.asarray(state.gamma, dtype=float)
        R = short_rate(state, mode)
        dR_gamma = 1.0 if mode.composite else 0.0
        with_eta = not mode.longstaff_independent and p.spec.rho_rGamma != 0.0
        theta_safe = np.maximum(theta, THETA_FLOOR)
        for k in range(m):
            out[IS, k] = 0.5 * S * sig_S ** 2 * L[1, k] ** 2
            out[ICHI, k] = 0.25 * p.sigma_chi ** 2 * L[2, k] ** 2
            if with_eta:
                scale = L[3, k] / (p.spec.rho_rGamma * theta_safe)
                out[IG, k] = 0.5 * gamma * R * (R + gamma * dR_gamma) * scale ** 2
        out[ID, 0] = 0.5 * np.asarray(state.D, dtype=float) * theta ** 2
        return out

    def jets(self, state: StateVector) -> Tuple[Dict[int, Jet], Dict[Tuple[int, int], Jet]]:
        p, mode = self.params, self.mode
        L = self.loadings.entries
        m = self.loadings.n_drivers
        r, theta, B, P, S, chi, gamma, D = (np.asarray(getattr(state, k), dtype=float) for k in PROCESSES)
        R = short_rate(state, mode)
        dR = _short_rate_grad(mode)

        drift: Dict[int, Jet] = {}
        diff: Dict[Tuple[int, int], Jet] = {}

        drift[IR] = _rate_drift_jet(r, theta, p, IR, ITH)
        drift[ITH], diff[(ITH, m)] = _cir_jets(theta, p.a_theta, p.b_theta, p.sigma_theta, ITH)
        sr, sr1, sr2 = _root(r)
        diff[(IR, 0)] = Jet(p.sigma_r * sr, {IR: p.sigma_r * sr1}, {(IR, IR): p.sigma_r * sr2})

        # B = B R
        jet = Jet(B * R).add_grad(IB, R)
        for i, di in dR.items():
            jet.add_grad(i, B * di).add_hess(IB, i, di)
        drift[IB] = jet

        # P: P R + sigma_r theta h(t, r), h = P_r sqrt(r)
        sens = self._sensitivity(state)
        h = sens.value * sr
        h_r = sens.d_r * sr + sens.value * sr1
        h_rr = sens.d_rr * sr + 2.0 * sens.d_r * sr1 + sens.value * sr2
        h_t = sens.d_t * sr
        jet = Jet(P * R + p.sigma_r * theta * h, d_t=p.sigma_r * theta * h_t)
        jet.add_grad(IP, R).add_grad(IR, p.sigma_r * theta * h_r).add_grad(ITH, p.sigma_r * h)
        jet.add_hess(IR, IR, p.sigma_r * theta * h_rr).add_hess(IR, ITH, p.sigma_r * h_r)
        for i, di in dR.items():
            jet.add_grad(i, P * di).add_hess(IP, i, di)
        drift[IP] = jet
        diff[(IP, 0)] = Jet(p.sigma_r * h, {IR: p.sigma_r * h_r}, {(IR, IR): p.sigma_r * h_rr},
                            d_t=p.sigma_r * h_t)

        # S: S (R + q(theta)), q = theta sigma_S rho_rS or theta^2
        if mode.martingale:
            q, q1, q2 = theta * theta, 2.0 * theta, 2.0
        else:
            c = p.sigma_S * p.spec.rho_rS
            q, q1, q2 = c * theta, c, 0.0
        jet = Jet(S * (R + q)).add_grad(IS, R + q).add_grad(ITH, S * q1)
        jet.add_hess(ITH, IS, q1 + 0.0 * theta)
        if mode.martingale:
            jet.add_hess(ITH, ITH, S * q2)
        for i, di in dR.items():
            jet.add_grad(i, S * di).add_hess(IS, i, di)
        drift[IS] = jet
        for k in range(m):
            if L[1, k] == 0.0:
                continue
            if mode.martingale:
                diff[(IS, k)] = (Jet(S * theta * L[1, k])
                                 .add_grad(IS, theta * L[1, k]).add_grad(ITH, S * L[1, k])
                                 .add_hess(ITH, IS, L[1, k] + 0.0 * theta))
            else:
                diff[(IS, k)] = Jet(S * p.sigma_S * L[1, k], {IS: p.sigma_S * L[1, k] + 0.0 * S})

        # chi: R chi + c theta sqrt(chi), c = sigma_chi rho_rChi
        sc, sc1, sc2 = _root(chi)
        c = p.sigma_chi * p.spec.rho_rChi
        jet = Jet(R * chi + c * theta * sc)
        jet.add_grad(ICHI, R + c * theta * sc1).add_grad(ITH, c * sc)
        jet.add_hess(ICHI, ICHI, c * theta * sc2).add_hess(ITH, ICHI, c * sc1)
        for i, di in dR.items():
            jet.add_grad(i, chi * di).add_hess(i, ICHI, 2.0 * di if i == ICHI else di)
        drift[ICHI] = jet
        for k in range(m):
            if L[2, k] == 0.0:
                continue
            v = p.sigma_chi * L[2, k]
            diff[(ICHI, k)] = Jet(v * sc, {ICHI: v * sc1}, {(ICHI, ICHI): v * sc2})

        # gamma: eta L_k with eta = -gamma R / (rho_rGamma theta)
        for k in range(m):
            if L[3, k] == 0.0:
                continue
            if mode.longstaff_independent:
                diff[(IG, k)] = Jet(p.eta * L[3, k] + 0.0 * gamma)
            elif p.spec.rho_rGamma != 0.0:
                diff[(IG, k)] = self._gamma_jet(gamma, R, dR, theta, -L[3, k] / p.spec.rho_rGamma)

        # D: -D R, diffusion -D theta
        jet = Jet(-D * R).add_grad(ID, -R)
        for i, di in dR.items():
            jet.add_grad(i, -D * di).add_hess(i, ID, -di)
        drift[ID] = jet
        diff[(ID, 0)] = Jet(-D * theta).add_grad(ID, -theta).add_grad(ITH, -D).add_hess(ITH, ID, -1.0 + 0.0 * theta)
        return drift, diff

    @staticmethod
    def _gamma_jet(gamma, R, dR, theta, scale) -> Jet:
        """scale * gamma R / theta with theta held at or above the floor."""
        inv = 1.0 / np.maximum(theta, THETA_FLOOR)
        q = gamma * R * inv
        jet = Jet(scale * q)
        first = {i: gamma * di for i, di in dR.items()}
        first[IG] = first.get(IG, 0.0) + R
        for i, v in first.items():
            jet.add_grad(i, scale * v * inv)
            jet.add_hess(i, ITH, -scale * v * inv ** 2)
        jet.add_grad(ITH, -scale * q * inv)
        jet.add_hess(ITH, ITH, 2.0 * scale * q * inv ** 2)
        for i, di in dR.items():
            jet.add_hess(IG, i, scale * di * inv * (2.0 if i == IG else 1.0))
        return jet

    def coefficient_jet(self, coeff_id: Tuple, state: StateVector) -> Jet:
        drift, diff = self.jets(state)
        return _pick(coeff_id, drift, diff, len(PROCESSES), len(self.drivers), np.asarray(state.r))


def _pick(coeff_id: Tuple, drift: Dict[int, Jet], diff: Dict[Tuple[int, int], Jet],
          n_rows: int, n_cols: int, like) -> Jet:
    """Registered jet, or an identically zero one for an entry inside the system's shape."""
    kind, *where = coeff_id
    if kind == "a" and len(where) == 1:
        if where[0] in drift:
            return drift[where[0]]
        if 0 <= where[0] < n_rows:
            return Jet(np.zeros(np.shape(like)))
    if kind == "b" and len(where) == 2:
        key = tuple(where)
        if key in diff:
            return diff[key]
        if 0 <= key[0] < n_rows and 0 <= key[1] < n_cols:
            return Jet(np.zeros(np.shape(like)))
    raise UnsupportedCoefficient(f"no registered partials for coefficient {coeff_id!r}")


# -----------------------------------------------------------------------------
# Reduced systems
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class PathState:
    t: float
    values: np.ndarray
    names: Tuple[str, ...]

    def to_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def with_values(self, values: np.ndarray, t: float) -> "PathState":
        return PathState(t, values, self.names)

    def __getattr__(self, name: str):
        names = object.__getattribute__(self, "names")
        if name in names:
            return object.__getattribute__(self, "values")[names.index(name)]
        raise AttributeError(name)


class ShortRateBondSystem:
    """r under the risk-neutral CIR dynamics with its discount factor D = exp(-int r)."""

    names = ("r", "D")
    drivers = ("W_0",)

    def __init__(self, params: ModelParams):
        self.params = params

    def initial_state(self, n: Optional[int] = None) -> PathState:
        shape = () if n is None else (n,)
        return PathState(0.0, np.stack([np.full(shape, self.params.r0), np.full(shape, 1.0)]), self.names)

    def drift_diffusion(self, state: PathState) -> DriftDiffusion:
        p = self.params
        r, D = state.values
        sr = _root(r)[0]
        drift = np.stack([p.a_r - p.b_r * r, -r * D])
        diffusion = np.stack([np.stack([p.sigma_r * sr]), np.stack([0.0 * D])])
        return DriftDiffusion(drift, diffusion, self.drivers, None, (r < 0).astype(int))

    def milstein_terms(self, state: PathState) -> np.ndarray:
        r = state.values[0]
        out = np.zeros((2, 1) + np.shape(r))
        out[0, 0] = 0.25 * self.params.sigma_r ** 2
        return out

    def jets(self, state: PathState):
        p = self.params
        r, D = state.values
        a_r, b_r = _cir_jets(r, p.a_r, p.b_r, p.sigma_r, 0)
        a_D = Jet(-r * D).add_grad(0, -D).add_grad(1, -r).add_hess(0, 1, -1.0 + 0.0 * r)
        return {0: a_r, 1: a_D}, {(0, 0): b_r}

    def coefficient_jet(self, coeff_id: Tuple, state: PathState) -> Jet:
        return _pick(coeff_id, *self.jets(state), len(self.names), len(self.drivers), state.values[0])


class RateThetaSystem:
    """(r, theta) under the physical measure, for long-horizon moment diagnostics."""

    names = ("r", "theta")
    drivers = ("W_0", "W_theta")

    def __init__(self, params: ModelParams):
        self.params = params

    def initial_state(self, n: Optional[int] = None) -> PathState:
        shape = () if n is None else (n,)
        p = self.params
        return PathState(0.0, np.stack([np.full(shape, p.r0), np.full(shape, p.theta0)]), self.names)

    def drift_diffusion(self, state: PathState) -> DriftDiffusion:
        p = self.params
        r, theta = state.values
        sr, sth = _root(r)[0], _root(theta)[0]
        drift = np.stack([p.a_r - p.b_r * r + p.sigma_r * theta * sr, p.a_theta - p.b_theta * theta])
        zero = 0.0 * r
        diffusion = np.stack([np.stack([p.sigma_r * sr, zero]), np.stack([zero, p.sigma_theta * sth])])
        return DriftDiffusion(drift, diffusion, self.drivers, None, (r < 0).astype(int) + (theta < 0))

    def milstein_terms(self, state: PathState) -> np.ndarray:
        r = state.values[0]
        out = np.zeros((2, 2) + np.shape(r))
        out[0, 0] = 0.25 * self.params.sigma_r ** 2
        out[1, 1] = 0.25 * self.params.sigma_theta ** 2
        return out

    def jets(self, state: PathState):
        p = self.params
        r, theta = state.values
        sr, sr1, sr2 = _root(r)
        a_th, b_th = _cir_jets(theta, p.a_theta, p.b_theta, p.sigma_theta, 1)
        drift = {0: _rate_drift_jet(r, theta, p, 0, 1), 1: a_th}
        diff = {(0, 0): Jet(p.sigma_r * sr, {0: p.sigma_r * sr1}, {(0, 0): p.sigma_r * sr2}), (1, 1): b_th}
        return drift, diff

    def coefficient_jet(self, coeff_id: Tuple, state: PathState) -> Jet:
        return _pick(coeff_id, *self.jets(state), len(self.names), len(self.drivers), state.values[0])
