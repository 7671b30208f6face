# run_config.py
from __future__ import annotations

import math
import logging
import pathlib
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union

from config import ESG_BLOCK_SIZE, ESG_MAX_FAILURE_RATE, ESG_OUT_DIR
from correlation import CorrelationSpec
from dynamics import ModeFlags, ModelParams, ShortRateMode, StockMode
from engine import SimulationConfig, StorePaths
from errors import ConfigError, ConfigIssue
from schemes import SchemeKind, TimeGrid

# ------------ Logging ------------
logger = logging.getLogger("esg.config")

PathLike = Union[str, pathlib.Path]

_TRUE = {"on", "true", "yes", "1"}
_FALSE = {"off", "false", "no", "0"}

MODEL_KEYS = ("a_r", "b_r", "sigma_r", "a_theta", "b_theta", "sigma_theta", "sigma_S", "sigma_chi",
              "r0", "theta0", "S0", "chi0", "gamma0")
RHO_KEYS = ("rho_rS", "rho_rChi", "rho_rGamma", "rho_SChi", "rho_SGamma", "rho_ChiGamma")
REQUIRED = MODEL_KEYS + RHO_KEYS + ("n_paths", "seed")
WEIGHT_KEYS = ("w_S", "w_P", "w_CB")


def _float(raw: str) -> float:
    v = float(raw)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _int(raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        v = float(raw)
        if not v.is_integer():
            raise ValueError("must be an integer") from None
        return int(v)


def _bool(raw: str) -> bool:
    low = raw.lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError("must be on/off")


def _choice(enum):
    def conv(raw: str):
        try:
            return enum(raw.lower())
        except ValueError:
            allowed = ", ".join(e.value for e in enum)
            raise ValueError(f"must be one of {allowed}") from None
    return conv


# key -> (converter, default); keys absent here are unknown
KEYS: Dict[str, Tuple[Callable[[str], object], object]] = {
    **{k: (_float, None) for k in MODEL_KEYS + RHO_KEYS},
    "n_paths": (_int, None),
    "seed": (_int, None),
    "f": (_float, 0.1),
    "eta": (_float, 0.0),
    "bond_maturity": (_float, None),
    "T": (_float, 1.0),
    "dt": (_float, 0.01),
    "scheme": (_choice(SchemeKind), SchemeKind.MILSTEIN2),
    "antithetic": (_bool, True),
    "short_rate_mode": (_choice(ShortRateMode), ShortRateMode.SIMPLE),
    "stock_mode": (_choice(StockMode), StockMode.FREE),
    "longstaff_independent": (_bool, False),
    "store_paths": (_choice(StorePaths), StorePaths.TERMINAL),
    "block_size": (_int, ESG_BLOCK_SIZE),
    "max_failure_rate": (_float, ESG_MAX_FAILURE_RATE),
    "strike": (_float, 2.0),
    "coupon": (_float, None),
    "loss": (_float, None),
    "w_S": (_float, 0.15),
    "w_P": (_float, 0.65),
    "w_CB": (_float, 0.2),
    "out_dir": (str, None),
}


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams
    simulation: SimulationConfig
    strike: float = 2.0
    coupon: Optional[float] = None
    loss: Optional[float] = None
    weights: Tuple[float, float, float] = (0.15, 0.65, 0.2)
    out_dir: pathlib.Path = ESG_OUT_DIR
    warnings: Tuple[str, ...] = field(default=(), compare=False)

    @property
    def mode(self) -> ModeFlags:
        return self.simulation.mode


# -----------------------------------------------------------------------------
# Parsing
# -----------------------------------------------------------------------------
def _scan(text: str) -> Tuple[Dict[str, Tuple[str, int]], List[ConfigIssue]]:
    found: Dict[str, Tuple[str, int]] = {}
    issues: List[ConfigIssue] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            issues.append(ConfigIssue(lineno, body, "expected key = value"))
            continue
        key, value = (p.strip() for p in body.split("=", 1))
        if key not in KEYS:
            issues.append(ConfigIssue(lineno, key, "unknown key"))
        elif key in found:
            issues.append(ConfigIssue(lineno, key, f"duplicate key (first set on line {found[key][1]})"))
        else:
            found[key] = (value, lineno)
    return found, issues


def _issue_from(exc: Exception, lines: Dict[str, int], fallback: str) -> ConfigIssue:
    """Attribute a record-validation error to the key it names."""
    msg = str(exc)
    key = msg.split(" ", 1)[0]
    if key not in lines:
        key = fallback
    return ConfigIssue(lines.get(key), key, msg)


def parse_config_text(text: str) -> RunConfig:
    found, issues = _scan(text)
    lines = {k: ln for k, (_, ln) in found.items()}
    values: Dict[str, object] = {}
    for key, (conv, default) in KEYS.items():
        if key not in found:
            values[key] = default
            continue
        raw, lineno = found[key]
        try:
            values[key] = conv(raw)
        except ValueError as e:
            issues.append(ConfigIssue(lineno, key, f"{raw!r}: {e}"))
    for key in REQUIRED:
        if key not in found:
            issues.append(ConfigIssue(None, key, "missing required key"))
    if issues:
        raise ConfigError(issues)

    warnings: List[str] = []
    if values["stock_mode"] is StockMode.MARTINGALE:
        forced = {"rho_rS": 1.0, "rho_SChi": values["rho_rChi"], "rho_SGamma": values["rho_rGamma"]}
        for key, v in forced.items():
            if values[key] != v:
                msg = f"martingale stock mode sets {key} = {v!r} (was {values[key]!r})"
                logger.warning("[config] %s", msg)
                warnings.append(msg)
                values[key] = v

    try:
        spec = CorrelationSpec(*(values[k] for k in RHO_KEYS))
    except ValueError as e:
        raise ConfigError([_issue_from(e, lines, "rho_rS")]) from None

    T = values["T"]
    try:
        params = ModelParams(
            **{k: values[k] for k in MODEL_KEYS},
            spec=spec,
            f=values["f"],
            eta=values["eta"],
            bond_maturity=values["bond_maturity"] if values["bond_maturity"] is not None else T,
        )
    except ValueError as e:
        raise ConfigError([_issue_from(e, lines, "a_r")]) from None

    mode = ModeFlags(values["short_rate_mode"], values["stock_mode"], values["longstaff_independent"])
    try:
        grid = TimeGrid.from_dt(T, values["dt"])
    except ValueError as e:
        raise ConfigError([ConfigIssue(lines.get("dt"), "dt", str(e))]) from None
    try:
        sim = SimulationConfig(
            grid=grid,
            n_paths=values["n_paths"],
            scheme=values["scheme"],
            antithetic=values["antithetic"],
            seed=values["seed"],
            mode=mode,
            store_paths=values["store_paths"],
            block_size=values["block_size"],
            max_failure_rate=values["max_failure_rate"],
        )
    except ValueError as e:
        raise ConfigError([_issue_from(e, lines, "n_paths")]) from None

    if mode.longstaff_independent:
        warnings.append(f"Longstaff-independent sub-mode active (eta = {params.eta!r})")
    loss = values["loss"]
    if loss is not None and not 0.0 <= loss <= 1.0:
        issues.append(ConfigIssue(lines.get("loss"), "loss", "must lie in [0, 1]"))
    if values["strike"] < 0:
        issues.append(ConfigIssue(lines.get("strike"), "strike", "must be non-negative"))
    weights = (values["w_S"], values["w_P"], values["w_CB"])
    if abs(sum(weights) - 1.0) > 1e-9:
        key = next((k for k in WEIGHT_KEYS if k in lines), "w_S")
        issues.append(ConfigIssue(lines.get(key), key, f"portfolio weights must sum to 1, got {sum(weights)!r}"))
    if issues:
        raise ConfigError(issues)

    return RunConfig(
        params=params,
        simulation=sim,
        strike=values["strike"],
        coupon=values["coupon"],
        loss=loss,
        weights=weights,
        out_dir=pathlib.Path(values["out_dir"]) if values["out_dir"] else ESG_OUT_DIR,
        warnings=tuple(warnings),
    )


def parse_config(path: PathLike) -> RunConfig:
    p = pathlib.Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError([ConfigIssue(None, str(p), f"cannot read config: {e.strerror}")]) from None
    rc = parse_config_text(text)
    logger.debug("[config] parsed %s", p)
    return rc


# -----------------------------------------------------------------------------
# Writing
# -----------------------------------------------------------------------------
def config_items(rc: RunConfig) -> Dict[str, object]:
    p, sim = rc.params, rc.simulation
    items: Dict[str, object] = {k: getattr(p, k) for k in MODEL_KEYS}
    items.update({k: getattr(p.spec, k) for k in RHO_KEYS})
    items.update(
        n_paths=sim.n_paths,
        seed=sim.seed,
        f=p.f,
        eta=p.eta,
        bond_maturity=p.bond_maturity,
        T=sim.grid.horizon,
        dt=sim.grid.dt,
        scheme=sim.scheme.value,
        antithetic=sim.antithetic,
        short_rate_mode=sim.mode.short_rate_mode.value,
        stock_mode=sim.mode.stock_mode.value,
        longstaff_independent=sim.mode.longstaff_independent,
        store_paths=sim.store_paths.value,
        block_size=sim.block_size,
        max_failure_rate=sim.max_failure_rate,
        strike=rc.strike,
        coupon=rc.coupon,
        loss=rc.loss,
        w_S=rc.weights[0],
        w_P=rc.weights[1],
        w_CB=rc.weights[2],
        out_dir=str(rc.out_dir),
    )
    return items


def _format(v: object) -> str:
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_config(rc: RunConfig) -> str:
    lines = [f"{k} = {_format(v)}" for k, v in config_items(rc).items() if v is not None]
    return "\n".join(lines) + "\n"
