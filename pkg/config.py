# config.py
from __future__ import annotations

import os
import logging
import pathlib

# ------------ Logging ------------
logger = logging.getLogger("esg.config")


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name, "")
    if not raw.strip():
        return default
    try:
        value = int(raw)
    except ValueError:
        logger.warning("[config] ignoring %s=%r (not an integer)", name, raw)
        return default
    return value if value > 0 else default


def _env_float(name: str, default: float) -> float:
    raw = os.environ.get(name, "")
    if not raw.strip():
        return default
    try:
        return float(raw)
    except ValueError:
        logger.warning("[config] ignoring %s=%r (not a number)", name, raw)
        return default


# -----------------------------------------------------------------------------
# Project paths
# -----------------------------------------------------------------------------
PROJECT_ROOT = pathlib.Path(__file__).resolve().parent
ARTIFACT_VERSION = "1.0.0"

# -----------------------------------------------------------------------------
# Runtime settings (environment)
# -----------------------------------------------------------------------------
# Worker processes for path-parallel runs; estimates never depend on it.
ESG_THREADS = _env_int("ESG_THREADS", os.cpu_count() or 1)
ESG_LOG_LEVEL = os.environ.get("ESG_LOG_LEVEL", "INFO").upper()
ESG_OUT_DIR = pathlib.Path(os.environ.get("ESG_OUT_DIR", "out"))

# Paths per random-stream block. Part of the reproducibility key.
ESG_BLOCK_SIZE = _env_int("ESG_BLOCK_SIZE", 2048)
ESG_MAX_FAILURE_RATE = _env_float("ESG_MAX_FAILURE_RATE", 0.001)

# -----------------------------------------------------------------------------
# Numerical constants
# -----------------------------------------------------------------------------
THETA_FLOOR = 1e-8
CORRELATION_TOL = 1e-12


def threads_from_env() -> int:
    """Re-read ESG_THREADS (the module constant is fixed at import)."""
    return _env_int("ESG_THREADS", ESG_THREADS)


logger.debug("[config] PROJECT_ROOT=%s", PROJECT_ROOT)
logger.debug("[config] ESG_THREADS=%s ESG_BLOCK_SIZE=%s", ESG_THREADS, ESG_BLOCK_SIZE)
