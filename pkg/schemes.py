# schemes.py
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from dynamics import DriftDiffusion, Jet
from errors import NonFiniteState


class SchemeKind(str, Enum):
    EULER = "euler"
    MILSTEIN = "milstein"
    MILSTEIN2 = "milstein2"


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError(f"need at least one step, got {self.steps!r}")
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be positive, got {self.horizon!r}")

    @classmethod
    def from_dt(cls, horizon: float, dt: float) -> "TimeGrid":
        steps = int(round(horizon / dt))
        if steps < 1 or abs(steps * dt - horizon) > 1e-9 * max(1.0, horizon):
            raise ValueError(f"dt={dt!r} does not divide T={horizon!r}")
        return cls(horizon, steps)

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def time(self, i: int) -> float:
        return i * self.dt

    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt


@dataclass(frozen=True)
class IncrementBundle:
    """dW has drivers on axis 0 (paths after); V is (m, m, ...) or None."""
    dW: np.ndarray
    V: Optional[np.ndarray] = None


def sample_V(driver_count: int, dt: float, rng: np.random.Generator, n: Optional[int] = None) -> np.ndarray:
    """V_jj = dt, V_jk = +-dt with equal probability for j < k, V_kj = -V_jk."""
    tail = () if n is None else (n,)
    V = np.zeros((driver_count, driver_count) + tail)
    iu, ju = np.triu_indices(driver_count, 1)
    if len(iu):
        signs = 2.0 * rng.integers(0, 2, size=(len(iu),) + tail) - 1.0
        V[iu, ju] = signs * dt
        V[ju, iu] = -signs * dt
    idx = np.arange(driver_count)
    V[idx, idx] = dt
    return V


# -----------------------------------------------------------------------------
# Operator calculus
# -----------------------------------------------------------------------------
def _covariance(diffusion: np.ndarray) -> np.ndarray:
    return np.einsum("ik...,jk...->ij...", diffusion, diffusion)


def _l0(jet: Jet, drift: np.ndarray, cov: np.ndarray):
    out = jet.d_t
    for i, g in jet.grad.items():
        out = out + drift[i] * g
    for (i, j), h in jet.hess.items():
        w = 0.5 if i == j else 1.0
        out = out + w * cov[i, j] * h
    return out


def _lk(jet: Jet, diffusion: np.ndarray, k: int):
    out = 0.0
    for i, g in jet.grad.items():
        out = out + diffusion[i, k] * g
    return out


def l0_apply(coeff_id, state, system, dd: Optional[DriftDiffusion] = None):
    """L0 f = f_t + sum_i a_i f_i + 1/2 sum_ij (b b^T)_ij f_ij for one registered coefficient."""
    dd = dd if dd is not None else system.drift_diffusion(state)
    return _l0(system.coefficient_jet(coeff_id, state), dd.drift, _covariance(dd.diffusion))


def lk_apply(coeff_id, k: int, state, system, dd: Optional[DriftDiffusion] = None):
    """Lk f = sum_i b_ik f_i."""
    dd = dd if dd is not None else system.drift_diffusion(state)
    return _lk(system.coefficient_jet(coeff_id, state), dd.diffusion, k)


# -----------------------------------------------------------------------------
# Steps
# -----------------------------------------------------------------------------
def _finish(state, X: np.ndarray, dt: float, on_nonfinite: str, t_next: Optional[float]):
    if on_nonfinite == "raise" and not np.all(np.isfinite(X)):
        raise NonFiniteState(f"step from t={state.t} produced a non-finite state")
    return state.with_values(X, state.t + dt if t_next is None else t_next)


def _euler_values(state, dd: DriftDiffusion, inc: IncrementBundle, dt: float) -> np.ndarray:
    X = state.to_array()
    return X + dd.drift * dt + np.einsum("ik...,k...->i...", dd.diffusion, inc.dW)


def euler_step(state, dd: DriftDiffusion, inc: IncrementBundle, dt: float,
               on_nonfinite: str = "raise", t_next: Optional[float] = None):
    with np.errstate(over="ignore", invalid="ignore"):
        X = _euler_values(state, dd, inc, dt)
    return _finish(state, X, dt, on_nonfinite, t_next)


def milstein_step(state, dd: DriftDiffusion, inc: IncrementBundle, dt: float, system,
                  on_nonfinite: str = "raise", t_next: Optional[float] = None):
    """Euler plus the own-variable corrections c_ik ((dW_k)^2 - dt)."""
    with np.errstate(over="ignore", invalid="ignore"):
        X = _euler_values(state, dd, inc, dt)
        v = inc.dW * inc.dW - dt
        X = X + np.einsum("ik...,k...->i...", system.milstein_terms(state), v)
    return _finish(state, X, dt, on_nonfinite, t_next)


def milstein2_step(state, dd: DriftDiffusion, inc: IncrementBundle, dt: float, system,
                   on_nonfinite: str = "raise", t_next: Optional[float] = None):
    """
    Simplified second Milstein step:
        X + a dt + b dW + 1/2 L0 a dt^2 + 1/2 sum_k (Lk a + L0 b_k) dW_k dt
          + 1/2 sum_jk Lj b_k (dW_j dW_k - V_jk)
    """
    if inc.V is None:
        raise ValueError("milstein2_step needs the V variables")
    drift_jets, diff_jets = system.jets(state)
    drift, diffusion = dd.drift, dd.diffusion
    m = diffusion.shape[1]
    with np.errstate(over="ignore", invalid="ignore"):
        X = _euler_values(state, dd, inc, dt)
        cov = _covariance(diffusion)
        M = np.einsum("j...,k...->jk...", inc.dW, inc.dW) - inc.V

        for i, jet in drift_jets.items():
            corr = 0.5 * _l0(jet, drift, cov) * dt * dt
            for k in range(m):
                corr = corr + 0.5 * _lk(jet, diffusion, k) * inc.dW[k] * dt
            X[i] = X[i] + corr

        for (i, k), jet in diff_jets.items():
            corr = 0.5 * _l0(jet, drift, cov) * inc.dW[k] * dt
            for j in range(m):
                corr = corr + 0.5 * _lk(jet, diffusion, j) * M[j, k]
            X[i] = X[i] + corr
    return _finish(state, X, dt, on_nonfinite, t_next)


def advance(kind: SchemeKind, state, system, inc: IncrementBundle, dt: float,
            on_nonfinite: str = "raise", t_next: Optional[float] = None):
    dd = system.drift_diffusion(state)
    if kind is SchemeKind.EULER:
        new = euler_step(state, dd, inc, dt, on_nonfinite, t_next)
    elif kind is SchemeKind.MILSTEIN:
        new = milstein_step(state, dd, inc, dt, system, on_nonfinite, t_next)
    else:
        new = milstein2_step(state, dd, inc, dt, system, on_nonfinite, t_next)
    return new, dd
