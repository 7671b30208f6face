# calibrate_coupon.py
from __future__ import annotations

import sys
import logging
import argparse
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from analytic import longstaff_cb
from config import ESG_LOG_LEVEL
from correlation import CorrelationSpec
from dynamics import ModeFlags, ModelParams, ShortRateMode
from engine import longstaff_inputs
from errors import FormulaInapplicable

# ------------ Logging ------------
logger = logging.getLogger("esg.calibrate")

# reported closed-form coupon-bond price for the independent-factor example
TARGET_PRICE = 1.03313616115971


def independent_example_params() -> ModelParams:
    spec = CorrelationSpec(0.6, 0.0, 0.0, 0.0, 0.0, 0.0)
    return ModelParams(
        a_r=0.02, b_r=0.04, sigma_r=0.01,
        a_theta=0.05, b_theta=0.01, sigma_theta=0.01,
        sigma_S=0.2, sigma_chi=0.01,
        r0=0.02, theta0=0.3, S0=1.0, chi0=0.05, gamma0=0.01,
        spec=spec, f=0.1, eta=0.0, bond_maturity=1.0,
    )


def solve_coupon(params: ModelParams, omega: float, T: float = 1.0, target: float = TARGET_PRICE,
                 bracket: Tuple[float, float] = (-1.0, 1.0)) -> Optional[float]:
    mode = ModeFlags(ShortRateMode.COMPOSITE, longstaff_independent=True)

    def gap(c: float) -> float:
        return longstaff_cb(longstaff_inputs(params, c, omega, mode), params.bond, T) - target

    lo, hi = bracket
    try:
        if gap(lo) * gap(hi) > 0:
            return None
        return optimize.brentq(gap, lo, hi, xtol=1e-14)
    except FormulaInapplicable as e:
        logger.warning("[calibrate] omega=%g: %s", omega, e)
        return None


def calibrate(omegas: Sequence[float], T: float = 1.0) -> List[Tuple[float, Optional[float]]]:
    params = independent_example_params()
    return [(float(w), solve_coupon(params, float(w), T)) for w in omegas]


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=getattr(logging, ESG_LOG_LEVEL, logging.INFO))
    p = argparse.ArgumentParser(description="Coupon c per loss fraction omega hitting the reported coupon-bond price.")
    p.add_argument("--omega-min", type=float, default=0.0)
    p.add_argument("--omega-max", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=11)
    p.add_argument("--T", type=float, default=1.0)
    args = p.parse_args(argv)
    print("omega,coupon")
    for omega, c in calibrate(np.linspace(args.omega_min, args.omega_max, args.steps), args.T):
        print(f"{omega:.6g},{'' if c is None else repr(c)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
