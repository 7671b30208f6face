# errors.py
from __future__ import annotations

import logging
import functools
from dataclasses import dataclass
from typing import Callable, List, Optional

# ------------ Logging ------------
logger = logging.getLogger("esg.errors")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class EsgError(Exception):
    pass


# -----------------------------------------------------------------------------
# Configuration
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class ConfigIssue:
    line: Optional[int]
    key: str
    message: str

    def __str__(self) -> str:
        where = f"line {self.line}: " if self.line is not None else ""
        return f"{where}{self.key}: {self.message}"


class ConfigError(EsgError):
    def __init__(self, issues: List[ConfigIssue]):
        self.issues = list(issues)
        super().__init__("\n".join(str(i) for i in self.issues) or "invalid configuration")


# -----------------------------------------------------------------------------
# Numerical failures
# -----------------------------------------------------------------------------
class NumericalError(EsgError):
    pass


class DegenerateCorrelation(NumericalError, ValueError):
    """A radicand or divisor of the recursive loading formulas is not positive."""


class NotPositiveDefinite(NumericalError, ValueError):
    pass


class DimensionMismatch(NumericalError, ValueError):
    pass


class ThetaUnderflow(NumericalError):
    """theta fell to or below the floor while eta still has a non-zero numerator."""


class ZeroRhoRGamma(NumericalError, ValueError):
    pass


class NonFiniteState(NumericalError):
    pass


class UnsupportedCoefficient(NumericalError, KeyError):
    pass


class FormulaInapplicable(NumericalError):
    pass


class FailureRateExceeded(NumericalError):
    def __init__(self, failed: int, total: int, limit: float):
        self.failed = failed
        self.total = total
        self.limit = limit
        super().__init__(
            f"{failed}/{total} paths failed ({failed / max(total, 1):.4%}), above the {limit:.4%} limit"
        )


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    raise exc


def register_error_handlers(run: Callable[..., int]) -> Callable[..., int]:
    """Wrap a subcommand so library errors become exit codes, logged once."""

    @functools.wraps(run)
    def wrapper(*args, **kwargs) -> int:
        try:
            return run(*args, **kwargs)
        except ConfigError as e:
            logger.error("[config] invalid configuration:\n%s", e)
            return exit_code_for(e)
        except NumericalError as e:
            logger.error("[ERROR] %s: %s", type(e).__name__, e)
            return exit_code_for(e)

    return wrapper
