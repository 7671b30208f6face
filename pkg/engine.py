# engine.py
from __future__ import annotations

import math
import time
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from analytic import (
    KimInputs,
    LongstaffInputs,
    cir_long_run,
    cir_mean,
    cir_variance,
    kim_put,
    longstaff_cb,
    zcb_price,
)
from config import ESG_BLOCK_SIZE, ESG_MAX_FAILURE_RATE, THETA_FLOOR, threads_from_env
from dynamics import (
    FiveFactorSystem,
    ModeFlags,
    ModelParams,
    RateThetaSystem,
    ShortRateBondSystem,
    StateVector,
    regularity_drifts,
)
from errors import FailureRateExceeded, FormulaInapplicable
from random_streams import BlockStream
from schemes import SchemeKind, TimeGrid, advance

# ------------ Logging ------------
logger = logging.getLogger("esg.engine")


class StorePaths(str, Enum):
    TERMINAL = "terminal"
    FULL = "full"


@dataclass(frozen=True)
class SimulationConfig:
    grid: TimeGrid
    n_paths: int
    scheme: SchemeKind = SchemeKind.MILSTEIN2
    antithetic: bool = True
    seed: int = 0
    mode: ModeFlags = field(default_factory=ModeFlags)
    store_paths: StorePaths = StorePaths.TERMINAL
    block_size: int = ESG_BLOCK_SIZE
    max_failure_rate: float = ESG_MAX_FAILURE_RATE

    def __post_init__(self) -> None:
        if self.n_paths < 2:
            raise ValueError(f"n_paths must be at least 2, got {self.n_paths!r}")
        if self.antithetic and self.n_paths % 2:
            raise ValueError(f"antithetic sampling needs an even n_paths, got {self.n_paths!r}")
        if self.block_size < 2 or self.block_size % 2:
            raise ValueError(f"block_size must be even and at least 2, got {self.block_size!r}")
        if not 0.0 <= self.max_failure_rate <= 1.0:
            raise ValueError(f"max_failure_rate must lie in [0, 1], got {self.max_failure_rate!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a non-negative 64-bit integer")

    @property
    def n_blocks(self) -> int:
        return -(-self.n_paths // self.block_size)


# -----------------------------------------------------------------------------
# Per-path results
# -----------------------------------------------------------------------------
@dataclass
class PathFunctionals:
    """Struct of arrays over paths; path p sits at index p everywhere."""
    names: Tuple[str, ...]
    terminal: np.ndarray                  # (d, n)
    truncations: np.ndarray               # (n,) int
    floor_hits: np.ndarray
    nonfinite: np.ndarray                 # (n,) bool
    failed: np.ndarray
    negative_D: np.ndarray
    first_negative_D: np.ndarray          # time of first D < 0, nan if never
    chi_negative: np.ndarray
    int_D: Optional[np.ndarray] = None
    int_chiD: Optional[np.ndarray] = None
    paths: Optional[np.ndarray] = None    # (steps + 1, d, n)

    @property
    def n_paths(self) -> int:
        return self.terminal.shape[1]

    @property
    def ok(self) -> np.ndarray:
        return ~self.failed

    def column(self, name: str) -> np.ndarray:
        return self.terminal[self.names.index(name)]

    def head(self, n: int) -> "PathFunctionals":
        """The first n paths (a prefix of the same run)."""
        def cut(x):
            if x is None:
                return None
            return x[..., :n]
        return PathFunctionals(
            self.names, cut(self.terminal), cut(self.truncations), cut(self.floor_hits),
            cut(self.nonfinite), cut(self.failed), cut(self.negative_D),
            cut(self.first_negative_D), cut(self.chi_negative),
            cut(self.int_D), cut(self.int_chiD), cut(self.paths),
        )

    @classmethod
    def concat(cls, parts: Sequence["PathFunctionals"]) -> "PathFunctionals":
        first = parts[0]

        def join(attr):
            vals = [getattr(p, attr) for p in parts]
            if vals[0] is None:
                return None
            return np.concatenate(vals, axis=-1)

        return cls(first.names, *(join(a) for a in (
            "terminal", "truncations", "floor_hits", "nonfinite", "failed", "negative_D",
            "first_negative_D", "chi_negative", "int_D", "int_chiD", "paths")))

    def diagnostics(self) -> Dict[str, float]:
        n = self.n_paths
        return {
            "n_paths": n,
            "failed": int(self.failed.sum()),
            "failure_fraction": float(self.failed.sum()) / n,
            "truncations": int(self.truncations.sum()),
            "floor_hits": int(self.floor_hits.sum()),
            "nonfinite": int(self.nonfinite.sum()),
            "negative_D_paths": int(self.negative_D.sum()),
            "chi_negative_paths": int(self.chi_negative.sum()),
        }


class BlockTask(NamedTuple):
    system: object
    config: SimulationConfig
    block: int
    n: int


def _simulate_block(task: BlockTask) -> PathFunctionals:
    system, cfg, block, n = task
    names = tuple(system.names)
    grid = cfg.grid
    dt = grid.dt
    stream = BlockStream(cfg.seed, block, cfg.block_size, len(system.drivers),
                         antithetic=cfg.antithetic, with_V=cfg.scheme is SchemeKind.MILSTEIN2)

    state = system.initial_state(n)
    X = state.to_array()
    iD = names.index("D") if "D" in names else None
    iChi = names.index("chi") if "chi" in names else None
    iTh = names.index("theta") if "theta" in names else None

    truncations = np.zeros(n, dtype=np.int64)
    floor_hits = np.zeros(n, dtype=np.int64)
    nonfinite = np.zeros(n, dtype=bool)
    failed = np.zeros(n, dtype=bool)
    first_neg = np.full(n, np.nan)
    chi_neg = np.zeros(n, dtype=bool)
    int_D = np.zeros(n) if iD is not None else None
    int_chiD = np.zeros(n) if (iD is not None and iChi is not None) else None
    paths = None
    if cfg.store_paths is StorePaths.FULL:
        paths = np.empty((grid.steps + 1,) + X.shape)
        paths[0] = X

    for i in range(grid.steps):
        inc = stream.next(dt, n)
        new, dd = advance(cfg.scheme, state, system, inc, dt, on_nonfinite="keep", t_next=grid.time(i + 1))
        X_new = new.to_array()

        if dd.truncations is not None:
            truncations += dd.truncations
        if iTh is not None:
            floor_hits += X[iTh] <= THETA_FLOOR
        bad = ~np.all(np.isfinite(X_new), axis=0)
        nonfinite |= bad & ~failed
        if dd.failed is not None:
            bad |= dd.failed
        failed |= bad
        # failed paths are frozen at their last good state
        X_new[:, failed] = X[:, failed]

        if iD is not None:
            int_D += 0.5 * (X[iD] + X_new[iD]) * dt
            if int_chiD is not None:
                int_chiD += 0.5 * (X[iChi] * X[iD] + X_new[iChi] * X_new[iD]) * dt
            hit = (X_new[iD] < 0) & np.isnan(first_neg)
            first_neg[hit] = grid.time(i + 1)
        if iChi is not None:
            chi_neg |= X_new[iChi] < 0

        X = X_new
        state = new.with_values(X, grid.time(i + 1))
        if paths is not None:
            paths[i + 1] = X

    return PathFunctionals(
        names=names,
        terminal=X,
        truncations=truncations,
        floor_hits=floor_hits,
        nonfinite=nonfinite,
        failed=failed,
        negative_D=~np.isnan(first_neg),
        first_negative_D=first_neg,
        chi_negative=chi_neg,
        int_D=int_D,
        int_chiD=int_chiD,
        paths=paths,
    )


def _tasks(system, config: SimulationConfig) -> List[BlockTask]:
    out = []
    for b in range(config.n_blocks):
        n = min(config.block_size, config.n_paths - b * config.block_size)
        out.append(BlockTask(system, config, b, n))
    return out


def run_blocks(system, config: SimulationConfig, workers: Optional[int] = None) -> PathFunctionals:
    """Simulate every block; results are concatenated in block order, whatever the worker count."""
    tasks = _tasks(system, config)
    workers = workers if workers is not None else threads_from_env()
    workers = max(1, min(workers, len(tasks)))
    t0 = time.perf_counter()
    if workers == 1:
        parts = [_simulate_block(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            parts = list(executor.map(_simulate_block, tasks))
    logger.info("[engine] %d paths in %d blocks on %d worker(s): %.2fs",
                config.n_paths, len(tasks), workers, time.perf_counter() - t0)
    return PathFunctionals.concat(parts)


def check_failure_rate(functionals: PathFunctionals, limit: float) -> None:
    failed = int(functionals.failed.sum())
    if failed:
        logger.warning("[engine] %d of %d paths failed", failed, functionals.n_paths)
    if failed / functionals.n_paths > limit:
        raise FailureRateExceeded(failed, functionals.n_paths, limit)


def simulate(config: SimulationConfig, params: ModelParams, workers: Optional[int] = None,
             system=None) -> PathFunctionals:
    if system is None:
        system = FiveFactorSystem(params, config.mode, strict=False)
    functionals = run_blocks(system, config, workers)
    check_failure_rate(functionals, config.max_failure_rate)
    return functionals


# -----------------------------------------------------------------------------
# Estimators and intervals
# -----------------------------------------------------------------------------
class LognormalInterval(NamedTuple):
    ci_low: float
    ci_high: float
    clt_low: float
    clt_high: float
    log_low: float
    log_high: float


def _t_interval(center: float, v: float, n: int) -> Tuple[float, float]:
    q = stats.t.ppf(0.975, n - 1)
    half = q * math.sqrt(v / n + v * v / (2.0 * (n - 1)))
    return center - half, center + half


def lognormal_ci(samples) -> LognormalInterval:
    """
    ci_*: E + Var(E)/2 -+ t_{n-1} sqrt(Var(E)/n + Var(E)^2 / (2(n-1))) with Var(E) = s^2/n,
    taken literally. clt_*: mean -+ 1.96 SE. log_*: the same t formula on the logs of
    the samples, mapped back by exp (nan unless every sample is positive).
    """
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise ValueError("lognormal_ci needs at least two samples")
    m = float(x.mean())
    s2 = float(x.var(ddof=1))
    v = s2 / n
    ci_low, ci_high = _t_interval(m + 0.5 * v, v, n)
    se = math.sqrt(v)
    z = stats.norm.ppf(0.975)
    if np.all(x > 0):
        y = np.log(x)
        ys2 = float(y.var(ddof=1))
        lo, hi = _t_interval(float(y.mean()) + 0.5 * ys2, ys2, n)
        log_low, log_high = math.exp(lo), math.exp(hi)
    else:
        log_low = log_high = math.nan
    return LognormalInterval(ci_low, ci_high, m - z * se, m + z * se, log_low, log_high)


@dataclass(frozen=True)
class PricingResult:
    estimate: float
    standard_error: float
    ci_low: float
    ci_high: float
    clt_low: float
    clt_high: float
    n_effective: int
    analytic_reference: Optional[float] = None

    @property
    def discrepancy(self) -> Optional[float]:
        if self.analytic_reference is None:
            return None
        return self.estimate - self.analytic_reference

    def within(self, target: float, n_se: float = 3.0) -> bool:
        return abs(self.estimate - target) <= n_se * self.standard_error


def estimator_units(samples: np.ndarray, ok: np.ndarray, antithetic: bool) -> Tuple[np.ndarray, int]:
    """Independent units for the estimator: pair means when antithetic (pairs with a failed member dropped)."""
    samples = np.asarray(samples, dtype=float)
    if antithetic:
        pairs = samples.reshape(-1, 2)
        keep = ok.reshape(-1, 2).all(axis=1)
        units = pairs[keep].mean(axis=1)
        return units, 2 * int(keep.sum())
    units = samples[ok]
    return units, int(units.size)


def price_from_samples(samples, ok, antithetic: bool, analytic: Optional[float] = None) -> PricingResult:
    units, n_eff = estimator_units(samples, ok, antithetic)
    if units.size < 2:
        raise FailureRateExceeded(int((~np.asarray(ok)).sum()), np.asarray(samples).size, 0.0)
    ci = lognormal_ci(units)
    se = float(units.std(ddof=1) / math.sqrt(units.size))
    return PricingResult(
        estimate=float(units.mean()),
        standard_error=se,
        ci_low=ci.ci_low,
        ci_high=ci.ci_high,
        clt_low=ci.clt_low,
        clt_high=ci.clt_high,
        n_effective=n_eff,
        analytic_reference=analytic,
    )


# -----------------------------------------------------------------------------
# Analytic inputs from model parameters
# -----------------------------------------------------------------------------
def kim_inputs(params: ModelParams, K: float, T: float) -> KimInputs:
    return KimInputs(
        S0=params.S0, K=K, T=T, sigma_S=params.sigma_S, rho_rS=params.spec.rho_rS,
        r0=params.r0, a_r=params.a_r, b_r=params.b_r, sigma_r=params.sigma_r,
    )


def longstaff_inputs(params: ModelParams, c: float, omega: float, mode: ModeFlags) -> LongstaffInputs:
    """Coefficients of the independent-factor bond formula frozen at the initial state."""
    s0 = StateVector.initial(params)
    reg = regularity_drifts(s0, params, mode, strict=False)
    e_chi = float(reg.e)
    return LongstaffInputs(
        c=c, omega=omega, e_chi=e_chi, f_chi=params.f, sigma_chi=params.sigma_chi,
        chi0=params.chi0, gamma0=params.gamma0, eta=float(reg.eta), r0=params.r0,
    )


# -----------------------------------------------------------------------------
# Pricing
# -----------------------------------------------------------------------------
@dataclass
class ZcbEstimate:
    deflator: PricingResult          # E[D_T]
    deflated_bond: PricingResult     # E[D_T P_T]
    analytic: float                  # P(0, T, r0)
    functionals: PathFunctionals
    warnings: List[str] = field(default_factory=list)


def zcb_from_functionals(f: PathFunctionals, config: SimulationConfig, params: ModelParams) -> ZcbEstimate:
    T = config.grid.horizon
    analytic = zcb_price(params.bond, 0.0, T, params.r0)
    analytic_bond = zcb_price(params.bond, 0.0, params.bond_maturity, params.r0)
    D = f.column("D")
    return ZcbEstimate(
        deflator=price_from_samples(D, f.ok, config.antithetic, analytic),
        deflated_bond=price_from_samples(D * f.column("P"), f.ok, config.antithetic, analytic_bond),
        analytic=analytic,
        functionals=f,
    )


def price_zcb_mc(config: SimulationConfig, params: ModelParams, workers: Optional[int] = None) -> ZcbEstimate:
    f = simulate(config, params, workers)
    out = zcb_from_functionals(f, config, params)
    logger.info("[price] E[D_T]=%.15g E[D_T P_T]=%.15g analytic=%.15g",
                out.deflator.estimate, out.deflated_bond.estimate, out.analytic)
    return out


@dataclass
class PutEstimate:
    put: PricingResult
    martingale: PricingResult        # E[D_T S_T] against S0
    functionals: PathFunctionals
    warnings: List[str] = field(default_factory=list)


def _warn(warnings: List[str], msg: str) -> None:
    logger.warning("[price] %s", msg)
    warnings.append(msg)


def price_put_mc(config: SimulationConfig, params: ModelParams, K: float,
                 workers: Optional[int] = None) -> PutEstimate:
    if K < 0:
        raise ValueError(f"strike must be non-negative, got {K!r}")
    warnings: List[str] = []
    T = config.grid.horizon
    reference = None
    if K > 0:
        try:
            reference = kim_put(kim_inputs(params, K, T))
        except FormulaInapplicable as e:
            _warn(warnings, f"Kim approximation not computable: {e}")
    f = simulate(config, params, workers)
    D, S = f.column("D"), f.column("S")
    put = price_from_samples(D * np.maximum(K - S, 0.0), f.ok, config.antithetic, reference)
    mart = price_from_samples(D * S, f.ok, config.antithetic, params.S0)
    if config.mode.martingale and not mart.within(params.S0):
        _warn(warnings, f"E[D_T S_T]={mart.estimate:.6g} is more than 3 SE from S0={params.S0:g}")
    return PutEstimate(put, mart, f, warnings)


def cb_samples(f: PathFunctionals, c: float, omega: float) -> np.ndarray:
    """D_T + c int D dt + (1 - omega) int chi D dt per path."""
    return f.column("D") + c * f.int_D + (1.0 - omega) * f.int_chiD


@dataclass
class CouponBondEstimate:
    price: PricingResult
    functionals: PathFunctionals
    warnings: List[str] = field(default_factory=list)


def cb_from_functionals(f: PathFunctionals, config: SimulationConfig, params: ModelParams,
                        c: float, omega: float) -> CouponBondEstimate:
    warnings: List[str] = []
    if not config.mode.composite:
        _warn(warnings, "coupon bond priced with simple short-rate discounting")
    if config.mode.longstaff_independent:
        _warn(warnings, f"Longstaff-independent sub-mode: eta={params.eta:g} is a free constant")
    reference = None
    try:
        reference = longstaff_cb(longstaff_inputs(params, c, omega, config.mode), params.bond, config.grid.horizon)
    except (FormulaInapplicable, ValueError) as e:
        _warn(warnings, f"closed-form coupon bond not computable: {e}")
    n_neg = int(f.chi_negative.sum())
    if n_neg:
        _warn(warnings, f"chi went negative on {n_neg} paths")
    price = price_from_samples(cb_samples(f, c, omega), f.ok, config.antithetic, reference)
    return CouponBondEstimate(price, f, warnings)


def price_cb_mc(config: SimulationConfig, params: ModelParams, c: float, omega: float,
                workers: Optional[int] = None) -> CouponBondEstimate:
    if not 0.0 <= omega <= 1.0:
        raise ValueError(f"loss fraction omega must lie in [0, 1], got {omega!r}")
    f = simulate(config, params, workers)
    return cb_from_functionals(f, config, params, c, omega)


# -----------------------------------------------------------------------------
# Portfolio
# -----------------------------------------------------------------------------
def portfolio_components(f: PathFunctionals, c: float, omega: float) -> np.ndarray:
    """Rows (D S, D P, CB functional) at the horizon."""
    D = f.column("D")
    return np.stack([D * f.column("S"), D * f.column("P"), cb_samples(f, c, omega)])


def _check_weights(weights: Sequence[float]) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (3,) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"portfolio weights must be three numbers summing to 1, got {tuple(w)}")
    return w


@dataclass
class PortfolioHistogram:
    edges: np.ndarray
    counts_plain: np.ndarray
    counts_antithetic: np.ndarray
    mean_plain: float
    mean_antithetic: float
    # variance of the portfolio-mean estimator per sampling mode
    var_plain: float
    var_antithetic: float
    covariance: "TerminalCovariance"
    warnings: List[str] = field(default_factory=list)


def histogram_counts(plain: np.ndarray, antithetic: np.ndarray):
    pooled = np.concatenate([plain, antithetic])
    if pooled.size == 0:
        raise ValueError("no samples to bin")
    edges = np.histogram_bin_edges(pooled, bins="fd")
    return edges, np.histogram(plain, edges)[0], np.histogram(antithetic, edges)[0]


def portfolio_histogram(config: SimulationConfig, params: ModelParams, w_S: float, w_P: float,
                        w_CB: float, c: float = 0.0, omega: float = 1.0,
                        workers: Optional[int] = None) -> PortfolioHistogram:
    w = _check_weights((w_S, w_P, w_CB))
    values, var_of_mean, means, covariance = {}, {}, {}, None
    for anti in (False, True):
        cfg = replace(config, antithetic=anti)
        f = simulate(cfg, params, workers)
        comps = portfolio_components(f, c, omega)
        v = w @ comps
        values[anti] = v[f.ok]
        units, _ = estimator_units(v, f.ok, anti)
        means[anti] = float(units.mean())
        var_of_mean[anti] = float(units.var(ddof=1) / units.size)
        if anti:
            covariance = terminal_covariance(f, w, c, omega)
    edges, cp, ca = histogram_counts(values[False], values[True])
    logger.info("[portfolio] estimator variance plain=%.3e antithetic=%.3e",
                var_of_mean[False], var_of_mean[True])
    return PortfolioHistogram(edges, cp, ca, means[False], means[True],
                              var_of_mean[False], var_of_mean[True], covariance)


@dataclass
class TerminalCovariance:
    labels: Tuple[str, ...]
    matrix: np.ndarray
    weights: np.ndarray
    portfolio_variance: float


def terminal_covariance(f: PathFunctionals, weights: Sequence[float], c: float = 0.0,
                        omega: float = 1.0) -> TerminalCovariance:
    w = _check_weights(weights)
    comps = portfolio_components(f, c, omega)[:, f.ok]
    cov = np.cov(comps)
    return TerminalCovariance(("DS", "DP", "CB"), cov, w, float(w @ cov @ w))


@dataclass(frozen=True)
class NegativeDeflatorReport:
    n_paths: int
    n_hit: int
    fraction: float
    first_hit_min: float
    first_hit_mean: float


def negative_deflator_report(f: PathFunctionals) -> NegativeDeflatorReport:
    hits = f.first_negative_D[f.negative_D]
    n_hit = int(hits.size)
    return NegativeDeflatorReport(
        n_paths=f.n_paths,
        n_hit=n_hit,
        fraction=n_hit / f.n_paths,
        first_hit_min=float(hits.min()) if n_hit else math.nan,
        first_hit_mean=float(hits.mean()) if n_hit else math.nan,
    )


# -----------------------------------------------------------------------------
# Diagnostics: long-horizon moments, weak order
# -----------------------------------------------------------------------------
class MomentRow(NamedTuple):
    factor: str
    empirical_mean: float
    empirical_variance: float
    mean_se: float
    long_run_mean: float
    long_run_variance: float
    finite_t_mean: float
    finite_t_variance: float


@dataclass
class AsymptoticReport:
    horizon: float
    rows: List[MomentRow]
    swapped_theta_drift: bool
    warnings: List[str] = field(default_factory=list)

    def row(self, factor: str) -> MomentRow:
        return next(r for r in self.rows if r.factor == factor)


def asymptotic_moments(config: SimulationConfig, params: ModelParams, horizon: Optional[float] = None,
                       swap_theta_drift: bool = False, workers: Optional[int] = None) -> AsymptoticReport:
    warnings: List[str] = []
    if horizon is not None and horizon != config.grid.horizon:
        config = replace(config, grid=TimeGrid.from_dt(horizon, config.grid.dt))
    if swap_theta_drift:
        params = replace(params, a_theta=params.b_theta, b_theta=params.a_theta)
    T = config.grid.horizon
    if T < 5.0 / params.b_theta:
        _warn(warnings, f"horizon {T:g} is under five mean-reversion times of theta ({5.0 / params.b_theta:g})")

    f = simulate(config, params, workers, system=RateThetaSystem(params))
    rows = []
    for name, x0, a, b, sigma, finite in (
        ("theta", params.theta0, params.a_theta, params.b_theta, params.sigma_theta, True),
        ("r", params.r0, params.a_r, params.b_r, params.sigma_r, False),
    ):
        x = f.column(name)[f.ok]
        lr_mean, lr_var = cir_long_run(a, b, sigma)
        rows.append(MomentRow(
            factor=name,
            empirical_mean=float(x.mean()),
            empirical_variance=float(x.var(ddof=1)),
            mean_se=float(x.std(ddof=1) / math.sqrt(x.size)),
            long_run_mean=lr_mean,
            long_run_variance=lr_var,
            finite_t_mean=cir_mean(x0, a, b, T) if finite else math.nan,
            finite_t_variance=cir_variance(x0, a, b, sigma, T) if finite else math.nan,
        ))
    return AsymptoticReport(T, rows, swap_theta_drift, warnings)


class WeakOrderRow(NamedTuple):
    scheme: SchemeKind
    dt: float
    estimate: float
    standard_error: float
    bias: float


@dataclass
class WeakOrderReport:
    reference: float
    rows: List[WeakOrderRow]
    slopes: Dict[SchemeKind, float]

    def bias(self, scheme: SchemeKind, dt: float) -> float:
        return next(r.bias for r in self.rows if r.scheme is scheme and r.dt == dt)


def weak_order_study(params: ModelParams, schemes: Iterable[SchemeKind], dts: Sequence[float],
                     n_paths: int, seed: int, horizon: float = 1.0,
                     workers: Optional[int] = None) -> WeakOrderReport:
    """E[exp(-int r)] on the risk-neutral CIR rate against the closed form, per scheme and step."""
    reference = zcb_price(params.bond, 0.0, horizon, params.r0)
    system = ShortRateBondSystem(params)
    rows, slopes = [], {}
    for kind in schemes:
        kind = SchemeKind(kind)
        for dt in dts:
            cfg = SimulationConfig(TimeGrid.from_dt(horizon, dt), n_paths, kind, True, seed)
            f = run_blocks(system, cfg, workers)
            est = price_from_samples(f.column("D"), f.ok, True, reference)
            rows.append(WeakOrderRow(kind, dt, est.estimate, est.standard_error, est.discrepancy))
            logger.info("[weak-order] %s dt=%g bias=%.3e (se %.1e)", kind.value, dt, est.discrepancy, est.standard_error)
        biases = np.maximum([abs(r.bias) for r in rows if r.scheme is kind], np.finfo(float).tiny)
        slopes[kind] = float(np.polyfit(np.log(dts), np.log(biases), 1)[0])
    return WeakOrderReport(reference, rows, slopes)
