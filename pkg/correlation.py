# correlation.py
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Tuple

import numpy as np

from config import CORRELATION_TOL
from errors import DegenerateCorrelation, DimensionMismatch, NotPositiveDefinite

FACTORS: Tuple[str, ...] = ("W_r", "W_S", "W_chi", "W_gamma")
FULL_DRIVERS: Tuple[str, ...] = ("W_0", "W_1", "W_2", "W_3")
REDUCED_DRIVERS: Tuple[str, ...] = ("W_0", "W_2", "W_3")


@dataclass(frozen=True)
class CorrelationSpec:
    """
    Pairwise correlations of the four factor Brownians, ordered (r, S, chi, gamma).
    Construction rejects out-of-range entries and matrices that are not
    positive semi-definite.
    """
    rho_rS: float
    rho_rChi: float
    rho_rGamma: float
    rho_SChi: float
    rho_SGamma: float
    rho_ChiGamma: float

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or not math.isfinite(v) or not -1.0 <= v <= 1.0:
                raise ValueError(f"{f.name} must lie in [-1, 1], got {v!r}")
        c = self.matrix()
        try:
            np.linalg.cholesky(c + CORRELATION_TOL * np.eye(4))
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite(
                "correlation matrix is not positive semi-definite"
            ) from None

    @classmethod
    def independent(cls) -> "CorrelationSpec":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0, self.rho_rS, self.rho_rChi, self.rho_rGamma],
                [self.rho_rS, 1.0, self.rho_SChi, self.rho_SGamma],
                [self.rho_rChi, self.rho_SChi, 1.0, self.rho_ChiGamma],
                [self.rho_rGamma, self.rho_SGamma, self.rho_ChiGamma, 1.0],
            ]
        )

    def martingale_consistent(self) -> "CorrelationSpec":
        """Correlations with W_S = W_r: the only completion that stays PSD when rho_rS = 1."""
        return replace(self, rho_rS=1.0, rho_SChi=self.rho_rChi, rho_SGamma=self.rho_rGamma)


@dataclass(frozen=True)
class LoadingMatrix:
    """Rows are factor Brownians (W_r, W_S, W_chi, W_gamma); columns independent drivers."""
    entries: np.ndarray
    drivers: Tuple[str, ...]
    rows: Tuple[str, ...] = FACTORS

    def __post_init__(self) -> None:
        arr = np.array(self.entries, dtype=float)
        if arr.shape != (len(self.rows), len(self.drivers)):
            raise DimensionMismatch(
                f"loading matrix shape {arr.shape} does not match "
                f"{len(self.rows)} rows x {len(self.drivers)} drivers"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def n_drivers(self) -> int:
        return len(self.drivers)

    def covariance(self) -> np.ndarray:
        return self.entries @ self.entries.T


def _radicand_sqrt(value: float, what: str) -> float:
    if not value > 0.0:
        raise DegenerateCorrelation(f"{what} radicand is {value!r}; need > 0")
    return math.sqrt(value)


def recursive_loadings(spec: CorrelationSpec) -> LoadingMatrix:
    """
    Closed-form loadings, built factor by factor: each new Brownian is its
    projection on the earlier drivers plus one fresh driver.
    """
    a, b, g = spec.rho_rS, spec.rho_rChi, spec.rho_rGamma
    c, d, h = spec.rho_SChi, spec.rho_SGamma, spec.rho_ChiGamma

    one_minus_a2 = 1.0 - a * a
    s_ss = _radicand_sqrt(one_minus_a2, "1 - rho_rS^2")

    rho_s_chi = (c - a * b) / s_ss
    chi_rad = (1.0 - a * a - b * b - c * c + 2.0 * a * b * c) / one_minus_a2
    rho_chi_chi = _radicand_sqrt(chi_rad, "rho'_chichi")

    rho_s_gamma = (d - a * g) / s_ss
    num = h - b * g - c * d - a * a * h + a * b * d + a * g * c
    den_rad = 1.0 + a ** 4 - 2.0 * a ** 3 * b * c - 2.0 * a * a + a * a * b * b + a * a * c * c - b * b - c * c + 2.0 * a * b * c
    rho_chi_gamma = num / _radicand_sqrt(den_rad, "rho''_chigamma denominator")
    gamma_rad = 1.0 - g * g - rho_s_gamma ** 2 - rho_chi_gamma ** 2
    rho_gamma_gamma = _radicand_sqrt(gamma_rad, "rho''_gammagamma")

    entries = [
        [1.0, 0.0, 0.0, 0.0],
        [a, s_ss, 0.0, 0.0],
        [b, rho_s_chi, rho_chi_chi, 0.0],
        [g, rho_s_gamma, rho_chi_gamma, rho_gamma_gamma],
    ]
    return LoadingMatrix(np.array(entries), FULL_DRIVERS)


def cholesky_loadings(spec: CorrelationSpec) -> LoadingMatrix:
    c = spec.matrix()
    try:
        lower = np.linalg.cholesky(c)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("Cholesky factorisation hit a non-positive pivot") from None
    pivots = np.diag(lower) ** 2
    if np.any(pivots <= CORRELATION_TOL):
        raise NotPositiveDefinite(f"smallest Cholesky pivot {pivots.min():.3e} is not positive")
    return LoadingMatrix(lower, FULL_DRIVERS)


def reduced_loadings(spec: CorrelationSpec) -> LoadingMatrix:
    """4x3 loadings over (W_0, W_2, W_3) for the stock row sharing W_r."""
    if abs(spec.rho_rS - 1.0) > CORRELATION_TOL:
        raise DegenerateCorrelation(f"reduced loadings need rho_rS = 1, got {spec.rho_rS!r}")
    b, g, h = spec.rho_rChi, spec.rho_rGamma, spec.rho_ChiGamma
    chi_chi = _radicand_sqrt(1.0 - b * b, "1 - rho_rChi^2")
    chi_gamma = (h - b * g) / chi_chi
    gamma_gamma = _radicand_sqrt(1.0 - g * g - chi_gamma ** 2, "rho'_gammagamma")
    entries = [
        [1.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [b, chi_chi, 0.0],
        [g, chi_gamma, gamma_gamma],
    ]
    return LoadingMatrix(np.array(entries), REDUCED_DRIVERS)


def correlate(loadings: LoadingMatrix, dz) -> np.ndarray:
    """Map independent increments (drivers on axis 0) to correlated factor increments."""
    dz = np.asarray(dz, dtype=float)
    if dz.ndim == 0 or dz.shape[0] != loadings.n_drivers:
        raise DimensionMismatch(
            f"expected {loadings.n_drivers} driver increments, got shape {dz.shape}"
        )
    return np.tensordot(loadings.entries, dz, axes=(1, 0))
