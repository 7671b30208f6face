# cli.py
from __future__ import annotations

import sys
import logging
import argparse
import pathlib
from dataclasses import replace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from config import ESG_LOG_LEVEL
from correlation import cholesky_loadings, recursive_loadings, reduced_loadings
from dynamics import feller_check
from engine import (
    SimulationConfig,
    asymptotic_moments,
    cb_from_functionals,
    negative_deflator_report,
    portfolio_histogram,
    price_cb_mc,
    price_put_mc,
    price_zcb_mc,
    simulate,
    weak_order_study,
    zcb_from_functionals,
)
from errors import EXIT_OK, ConfigError, ConfigIssue, register_error_handlers
from outputs import RunManifest, emit_histogram, matrix_frame, write_csv, write_manifest
from run_config import RunConfig, config_items, parse_config
from schemes import SchemeKind, TimeGrid

# ------------ Logging ------------
logger = logging.getLogger("esg.cli")

COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {}


def command(name: str):
    def deco(fn):
        COMMANDS[name] = register_error_handlers(fn)
        return fn
    return deco


def _schemes(raw: str) -> List[SchemeKind]:
    try:
        return [SchemeKind(s.strip().lower()) for s in raw.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown scheme in {raw!r}") from None


def _floats(raw: str) -> List[float]:
    try:
        return [float(s) for s in raw.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {raw!r}") from None


# -----------------------------------------------------------------------------
# Shared plumbing
# -----------------------------------------------------------------------------
class Run:
    """One subcommand invocation: parsed config, output dir and manifest."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.rc: RunConfig = parse_config(args.config)
        self.out = pathlib.Path(args.out_dir) if args.out_dir else self.rc.out_dir
        self.workers: Optional[int] = args.workers
        self.manifest = RunManifest(args.command, config_items(self.rc), self.rc.simulation.seed)
        self.manifest.warn(self.rc.warnings)

    def csv(self, rows, name: str, columns: Optional[Sequence[str]] = None) -> None:
        path = write_csv(rows, self.out / name, columns)
        self.manifest.outputs.append(path.name)

    def record(self, functionals, warnings=()) -> None:
        diag = functionals.diagnostics()
        self.manifest.diagnostics.update(diag)
        self.manifest.n_effective = int((~functionals.failed).sum())
        self.manifest.failure_fraction = diag["failure_fraction"]
        self.manifest.warn(warnings)

    def finish(self) -> int:
        write_manifest(self.manifest, self.out)
        logger.info("[cli] %s wrote %d file(s) to %s", self.args.command, len(self.manifest.outputs), self.out)
        return EXIT_OK


def _need(rc: RunConfig, *keys: str) -> None:
    missing = [k for k in keys if getattr(rc, k) is None]
    if missing:
        raise ConfigError([ConfigIssue(None, k, "required by this subcommand") for k in missing])


def _result_cols(prefix: str, res) -> Dict[str, float]:
    return {
        prefix: res.estimate,
        f"{prefix}_se": res.standard_error,
        f"{prefix}_ci_low": res.ci_low,
        f"{prefix}_ci_high": res.ci_high,
    }


# -----------------------------------------------------------------------------
# Subcommands
# -----------------------------------------------------------------------------
@command("validate")
def cmd_validate(args: argparse.Namespace) -> int:
    run = Run(args)
    rows = []
    for c in feller_check(run.rc.params, run.rc.mode):
        rows.append({"factor": c.factor, "lhs": c.lhs, "rhs": c.rhs, "holds": c.holds,
                     "state_dependent": c.state_dependent})
        tag = "holds" if c.holds else "FAILS"
        print(f"Feller {c.factor:<6} {c.lhs:.6g} > {c.rhs:.6g}: {tag}{' (initial state only)' if c.state_dependent else ''}")
        if not c.holds:
            run.manifest.warn([f"Feller condition for {c.factor} does not hold"])
    run.csv(rows, "feller.csv")
    print(f"config OK: {args.config}")
    return run.finish()


@command("simulate")
def cmd_simulate(args: argparse.Namespace) -> int:
    run = Run(args)
    rc = run.rc
    with run.manifest.phase("simulate"):
        f = simulate(rc.simulation, rc.params, run.workers)
    run.record(f)
    with run.manifest.phase("write"):
        cols = {"path": np.arange(f.n_paths)}
        cols.update({name: f.terminal[i] for i, name in enumerate(f.names)})
        cols.update(int_D=f.int_D, int_chiD=f.int_chiD, truncations=f.truncations,
                    floor_hits=f.floor_hits, negative_D=f.negative_D, failed=f.failed)
        run.csv(pd.DataFrame(cols), "terminal.csv")
        if f.paths is not None:
            steps, d, n = f.paths.shape
            times = rc.simulation.grid.times()
            long = pd.DataFrame({
                "step": np.repeat(np.arange(steps), n),
                "t": np.repeat(times, n),
                "path": np.tile(np.arange(n), steps),
                **{name: f.paths[:, i, :].ravel() for i, name in enumerate(f.names)},
            })
            run.csv(long, "paths.csv")
    neg = negative_deflator_report(f)
    if neg.n_hit:
        run.manifest.warn([f"D went negative on {neg.n_hit} paths (first at t={neg.first_hit_min:g})"])
    print(f"simulated {f.n_paths} paths, {int(f.failed.sum())} failed")
    return run.finish()


def _zcb_row(n: int, est) -> Dict[str, float]:
    return {
        "n_paths": n,
        "E_D": est.deflator.estimate,
        "E_DP": est.deflated_bond.estimate,
        "analytic": est.analytic,
        "diff_D": est.deflator.estimate - est.analytic,
        "diff_DP": est.deflated_bond.discrepancy,
        "se": est.deflator.standard_error,
        "ci_low": est.deflator.ci_low,
        "ci_high": est.deflator.ci_high,
    }


@command("price-zcb")
def cmd_price_zcb(args: argparse.Namespace) -> int:
    run = Run(args)
    rc = run.rc
    with run.manifest.phase("simulate"):
        est = price_zcb_mc(rc.simulation, rc.params, run.workers)
    run.record(est.functionals, est.warnings)
    run.csv([_zcb_row(rc.simulation.n_paths, est)], "price_zcb.csv")
    print(f"E[D_T]={est.deflator.estimate:.15g}  E[D_T P_T]={est.deflated_bond.estimate:.15g}  "
          f"P(0,T,r0)={est.analytic:.15g}")
    return run.finish()


@command("price-put")
def cmd_price_put(args: argparse.Namespace) -> int:
    run = Run(args)
    rc = run.rc
    with run.manifest.phase("simulate"):
        est = price_put_mc(rc.simulation, rc.params, rc.strike, run.workers)
    run.record(est.functionals, est.warnings)
    row = {"strike": rc.strike, **_result_cols("put", est.put),
           "kim_reference": est.put.analytic_reference,
           **_result_cols("E_DS", est.martingale), "S0": rc.params.S0}
    run.csv([row], "price_put.csv")
    print(f"put={est.put.estimate:.10g} (se {est.put.standard_error:.2g})  E[D_T S_T]={est.martingale.estimate:.10g}")
    return run.finish()


@command("price-cb")
def cmd_price_cb(args: argparse.Namespace) -> int:
    run = Run(args)
    rc = run.rc
    _need(rc, "coupon", "loss")
    with run.manifest.phase("simulate"):
        est = price_cb_mc(rc.simulation, rc.params, rc.coupon, rc.loss, run.workers)
    run.record(est.functionals, est.warnings)
    res = est.price
    row = {"coupon": rc.coupon, "loss": rc.loss, "estimate": res.estimate, "se": res.standard_error,
           "ci_low": res.ci_low, "ci_high": res.ci_high, "clt_low": res.clt_low, "clt_high": res.clt_high,
           "longstaff": res.analytic_reference, "discrepancy": res.discrepancy, "n_effective": res.n_effective}
    run.csv([row], "price_cb.csv")
    print(f"coupon bond={res.estimate:.10g} (se {res.standard_error:.2g})  closed form={res.analytic_reference}")
    return run.finish()


def ladder(max_paths: int, start: int = 2500) -> List[int]:
    out, n = [], start
    while n <= max_paths:
        out.append(n)
        n *= 2
    return out or [max_paths]


@command("converge")
def cmd_converge(args: argparse.Namespace) -> int:
    run = Run(args)
    rc = run.rc
    max_paths = args.max_paths or rc.simulation.n_paths
    if args.instrument == "cb":
        _need(rc, "coupon", "loss")
    sizes = ladder(max_paths)
    try:
        configs = [replace(rc.simulation, scheme=kind, n_paths=sizes[-1]) for kind in args.schemes]
    except ValueError as e:
        raise ConfigError([ConfigIssue(None, "--max-paths", str(e))]) from None
    rows = []
    for kind, cfg in zip(args.schemes, configs):
        with run.manifest.phase(f"simulate_{kind.value}"):
            f = simulate(cfg, rc.params, run.workers)
        run.record(f)
        for n in sizes:
            head = f.head(n)
            if args.instrument == "zcb":
                rows.append({"scheme": kind.value, **_zcb_row(n, zcb_from_functionals(head, cfg, rc.params))})
            else:
                est = cb_from_functionals(head, cfg, rc.params, rc.coupon, rc.loss)
                run.manifest.warn(est.warnings)
                res = est.price
                rows.append({"scheme": kind.value, "n_paths": n, "estimate": res.estimate,
                             "longstaff": res.analytic_reference, "diff": res.discrepancy,
                             "se": res.standard_error, "ci_low": res.ci_low, "ci_high": res.ci_high})
    run.csv(rows, f"converge_{args.instrument}.csv")
    return run.finish()


@command("asymptotics")
def cmd_asymptotics(args: argparse.Namespace) -> int:
    run = Run(args)
    rc = run.rc
    with run.manifest.phase("simulate"):
        rep = asymptotic_moments(rc.simulation, rc.params, args.horizon,
                                 swap_theta_drift=args.swap_theta_drift, workers=run.workers)
    run.manifest.warn(rep.warnings)
    rows = [{"horizon": rep.horizon, "swapped_theta_drift": rep.swapped_theta_drift, **r._asdict()} for r in rep.rows]
    run.csv(rows, "asymptotics.csv")
    for r in rep.rows:
        print(f"{r.factor}: mean {r.empirical_mean:.6g} (long run {r.long_run_mean:.6g}), "
              f"variance {r.empirical_variance:.6g} (long run {r.long_run_variance:.6g})")
    return run.finish()


@command("portfolio")
def cmd_portfolio(args: argparse.Namespace) -> int:
    run = Run(args)
    rc = run.rc
    c = rc.coupon if rc.coupon is not None else 0.0
    omega = rc.loss if rc.loss is not None else 1.0
    if rc.coupon is None or rc.loss is None:
        run.manifest.warn([f"coupon/loss not set: CB leg uses c={c:g}, omega={omega:g}"])
    with run.manifest.phase("simulate"):
        hist = portfolio_histogram(rc.simulation, rc.params, *rc.weights, c=c, omega=omega, workers=run.workers)
    run.manifest.warn(hist.warnings)
    emit_histogram(hist.edges, hist.counts_plain, hist.counts_antithetic, run.out / "portfolio_histogram.csv")
    run.manifest.outputs.append("portfolio_histogram.csv")
    cov = hist.covariance
    run.csv(matrix_frame(cov.matrix, cov.labels, cov.labels, "component"), "portfolio_covariance.csv")
    run.csv([
        {"sampling": "plain", "mean": hist.mean_plain, "estimator_variance": hist.var_plain},
        {"sampling": "antithetic", "mean": hist.mean_antithetic, "estimator_variance": hist.var_antithetic},
    ], "portfolio_summary.csv")
    return run.finish()


@command("weak-order")
def cmd_weak_order(args: argparse.Namespace) -> int:
    run = Run(args)
    rc = run.rc
    n = args.paths or rc.simulation.n_paths
    try:
        for dt in args.dts:
            SimulationConfig(TimeGrid.from_dt(rc.simulation.grid.horizon, dt), n, seed=rc.simulation.seed)
    except ValueError as e:
        raise ConfigError([ConfigIssue(None, "--paths/--dts", str(e))]) from None
    with run.manifest.phase("simulate"):
        rep = weak_order_study(rc.params, args.schemes, args.dts, n, rc.simulation.seed,
                               horizon=rc.simulation.grid.horizon, workers=run.workers)
    rows = [{"scheme": r.scheme.value, "dt": r.dt, "estimate": r.estimate, "se": r.standard_error,
             "bias": r.bias, "reference": rep.reference} for r in rep.rows]
    run.csv(rows, "weak_order.csv")
    run.csv([{"scheme": k.value, "slope": v} for k, v in rep.slopes.items()], "weak_order_slopes.csv")
    for k, v in rep.slopes.items():
        print(f"{k.value}: log-log bias slope {v:.3f}")
    return run.finish()


@command("loadings")
def cmd_loadings(args: argparse.Namespace) -> int:
    run = Run(args)
    spec = run.rc.params.spec
    builders = [("recursive", recursive_loadings), ("cholesky", cholesky_loadings)]
    if run.rc.mode.martingale:
        builders.append(("reduced", reduced_loadings))
    for label, build in builders:
        L = build(spec)
        run.csv(matrix_frame(L.entries, L.rows, L.drivers, "factor"), f"loadings_{label}.csv")
    return run.finish()


# -----------------------------------------------------------------------------
# Entry
# -----------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="esg", description="Five-factor deflator scenario generator.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("config", help="flat key = value run configuration")
        sp.add_argument("--out-dir", default=None, help="output directory (overrides out_dir)")
        sp.add_argument("--workers", type=int, default=None, help="worker processes (default ESG_THREADS)")
        return sp

    add("validate", "check a config and report Feller conditions")
    add("simulate", "simulate paths and write terminal functionals")
    add("price-zcb", "E[D_T], E[D_T P_T] against the CIR bond price")
    add("price-put", "put on S_T and the E[D_T S_T] martingale check")
    add("price-cb", "defaultable coupon bond against the closed form")
    sp = add("converge", "estimates over a doubling ladder of path counts")
    sp.add_argument("--max-paths", type=int, default=None)
    sp.add_argument("--schemes", type=_schemes, default=list(SchemeKind))
    sp.add_argument("--instrument", choices=("zcb", "cb"), default="zcb")
    sp = add("asymptotics", "long-horizon moments of theta and r")
    sp.add_argument("--horizon", type=float, default=None)
    sp.add_argument("--swap-theta-drift", action="store_true", help="swap a_theta and b_theta")
    add("portfolio", "portfolio histograms with and without antithetic sampling")
    sp = add("weak-order", "bias per scheme and step on the CIR bond problem")
    sp.add_argument("--dts", type=_floats, default=[0.04, 0.02, 0.01])
    sp.add_argument("--schemes", type=_schemes, default=[SchemeKind.EULER, SchemeKind.MILSTEIN2])
    sp.add_argument("--paths", type=int, default=None)
    add("loadings", "dump recursive and Cholesky loading matrices")
    return p


def run_subcommand(argv: Sequence[str]) -> int:
    args = build_parser().parse_args(list(argv))
    return COMMANDS[args.command](args)


def main() -> None:
    logging.basicConfig(level=getattr(logging, ESG_LOG_LEVEL, logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s %(message)s")
    sys.exit(run_subcommand(sys.argv[1:]))


if __name__ == "__main__":
    main()
