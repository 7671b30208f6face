# outputs.py
from __future__ import annotations

import os
import json
import time
import logging
import pathlib
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from config import ARTIFACT_VERSION

# ------------ Logging ------------
logger = logging.getLogger("esg.outputs")

PathLike = Union[str, pathlib.Path]

FLOAT_FORMAT = "%.17g"


def _utc_stamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


# -----------------------------------------------------------------------------
# CSV
# -----------------------------------------------------------------------------
def write_csv(rows: Union[pd.DataFrame, Sequence[Mapping[str, Any]]], path: PathLike,
              columns: Optional[Sequence[str]] = None) -> pathlib.Path:
    df = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows), columns=columns)
    p = pathlib.Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(p, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("[out] wrote %s (%d rows)", p, len(df))
    return p


def read_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def emit_histogram(edges, counts_plain, counts_antithetic, path: PathLike) -> pathlib.Path:
    """bin_low, bin_high, count_plain, count_antithetic; edges from Freedman-Diaconis on the pooled sample."""
    edges = np.asarray(edges, dtype=float)
    if edges.size < 2:
        raise ValueError("histogram needs at least one bin")
    df = pd.DataFrame({
        "bin_low": edges[:-1],
        "bin_high": edges[1:],
        "count_plain": np.asarray(counts_plain, dtype=np.int64),
        "count_antithetic": np.asarray(counts_antithetic, dtype=np.int64),
    })
    return write_csv(df, path)


def matrix_frame(matrix: np.ndarray, rows: Sequence[str], columns: Sequence[str], index_name: str) -> pd.DataFrame:
    df = pd.DataFrame(np.asarray(matrix, dtype=float), columns=list(columns))
    df.insert(0, index_name, list(rows))
    return df


# -----------------------------------------------------------------------------
# Run manifest
# -----------------------------------------------------------------------------
@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any]
    seed: int
    version: str = ARTIFACT_VERSION
    created_at: str = field(default_factory=_utc_stamp)
    timings: Dict[str, float] = field(default_factory=dict)
    n_effective: Optional[int] = None
    failure_fraction: Optional[float] = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = round(time.perf_counter() - t0, 6)

    def warn(self, messages) -> None:
        for m in messages:
            if m not in self.warnings:
                self.warnings.append(m)

    def as_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "version": self.version,
            "created_at": self.created_at,
            "timings": self.timings,
            "n_effective": self.n_effective,
            "failure_fraction": self.failure_fraction,
            "diagnostics": self.diagnostics,
            "warnings": self.warnings,
            "outputs": self.outputs,
        }


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (pathlib.Path,)):
        return str(obj)
    if hasattr(obj, "value"):
        return obj.value
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def write_manifest(manifest: RunManifest, out_dir: PathLike) -> pathlib.Path:
    """manifest.json, replaced atomically."""
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "manifest.json"
    tmp = out / ".manifest.json.tmp"
    tmp.write_text(json.dumps(manifest.as_dict(), indent=2, sort_keys=True, default=_jsonable), encoding="utf-8")
    os.replace(tmp, target)
    logger.info("[out] wrote %s", target)
    return target
