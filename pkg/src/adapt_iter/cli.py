"""``solve`` command: run configured experiments and write CSV traces."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

from . import biot, surfactant, twophase
from .config import ConfigError, RunConfig, parse_configs
from .engine import (AdaptiveFixedStressController, AdaptiveLController, Controller, IterationRecord, RunResult,
                     StoppingRule, SwitchingController, TimestepController, run as run_engine)

log = logging.getLogger("adapt_iter")

TRACE_COLUMNS = ("step", "time", "iter", "scheme", "L", "tau", "eta_inc", "eta_1to2", "eta_2to2", "eta_1to1",
                 "eta_3to4", "eta_4to4", "eta_5to5", "eff_index", "action")
ESTIMATOR_COLUMNS = TRACE_COLUMNS[7:13]
SUMMARY_COLUMNS = ("run_id", "problem", "algorithm", "parameters", "total_iterations", "average_iterations",
                   "scheme_split", "accepted_steps", "failed_steps", "converged", "message")


def fmt(x) -> str:
    """Numbers with 9 significant digits; None as an empty cell."""
    if x is None:
        return ""
    if isinstance(x, (tuple, list)):
        return ";".join(fmt(v) for v in x)
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return format(x, ".9g")
    return str(x)


@dataclass(frozen=True)
class SummaryRow:
    run_id: str
    problem: str
    algorithm: str
    parameters: str
    total_iterations: int
    average_iterations: float
    scheme_split: dict[str, int]
    accepted_steps: int
    failed_steps: int
    converged: bool
    message: str = ""

    def cells(self) -> list[str]:
        split = ";".join(f"{k}:{v}" for k, v in sorted(self.scheme_split.items()))
        return [self.run_id, self.problem, self.algorithm, self.parameters, fmt(self.total_iterations),
                fmt(self.average_iterations), split, fmt(self.accepted_steps), fmt(self.failed_steps),
                fmt(self.converged), self.message]


def trace_row(r: IterationRecord) -> list[str]:
    return ([fmt(r.step), fmt(r.time), fmt(r.k), r.scheme.value, fmt(r.L), fmt(r.tau), fmt(r.eta_inc)]
            + [fmt(r.estimators.get(name)) for name in ESTIMATOR_COLUMNS] + [fmt(r.eff_index), r.action])


# ---------------------------------------------------------------------- experiment setup
def build(cfg: RunConfig):
    """(problem, controller, stopping, T, tau, adaptive_tau, tau_min) for a run."""
    pc = cfg.problem_config()
    algo = cfg.algorithm
    if cfg.problem == "twophase":
        pb = twophase.TwoPhaseProblem(pc)
        L = pc.L
        ctl = {
            "lscheme": lambda: Controller(twophase.L_SCHEME, L),
            "newton": lambda: Controller(twophase.NEWTON, L),
            "switching": lambda: SwitchingController(twophase.L_SCHEME, twophase.NEWTON, L, pc.C_tol,
                                                     "eta_1to2", "eta_2to2"),
            "adaptive_L": lambda: AdaptiveLController(twophase.L_SCHEME, L, "eta_1to1"),
        }[algo]()
        stop = StoppingRule(absolute={"Theta": cfg.tol, "P": cfg.tol}, max_iter=cfg.max_iter)
        return pb, ctl, stop, pc.T, pc.tau, False, 0.0
    if cfg.problem == "surfactant":
        pb = surfactant.SurfactantProblem(pc)
        L = (pc.L1, pc.L2)
        ctl = {
            "lscheme": lambda: Controller(surfactant.L_SCHEME, L),
            "newton": lambda: Controller(surfactant.NEWTON, L),
            "switching": lambda: SwitchingController(surfactant.L_SCHEME, surfactant.NEWTON, L, pc.C_tol,
                                                     "eta_3to4", "eta_4to4"),
            "adaptive_tau": lambda: TimestepController(surfactant.NEWTON, L, "eta_4to4", n_fast=pc.n_fast,
                                                       tau_min=pc.tau_min),
        }[algo]()
        stop = StoppingRule(absolute={"psi": cfg.tol, "c": cfg.tol}, max_iter=cfg.max_iter)
        return pb, ctl, stop, pc.T, pc.tau, algo == "adaptive_tau", pc.tau_min
    pb = biot.BiotProblem(pc)
    fam = biot.StabilizationFamily.of(pc)
    choice = cfg.params.get("L", "L_min")
    L = fam.named(choice, pc.nu) if isinstance(choice, str) else float(choice)
    if algo == "fixed_stress":
        ctl = Controller(biot.FIXED_STRESS, L)
    else:
        ctl = AdaptiveFixedStressController(biot.FIXED_STRESS, L, fam.L_min, fam.L_phys, pc.C_inc)
    stop = StoppingRule(relative={"p": pc.rel_tol}, max_iter=cfg.max_iter, min_iter=2)
    return pb, ctl, stop, pc.T, pc.tau, False, 0.0


def describe(cfg: RunConfig) -> str:
    items = [f"mesh_n={cfg.mesh_n}"]
    if cfg.tau is not None:
        items.append(f"tau={fmt(cfg.tau)}")
    if cfg.T is not None:
        items.append(f"T={fmt(cfg.T)}")
    items += [f"{k}={fmt(v)}" for k, v in sorted(cfg.params.items())]
    return ";".join(items)


def execute(cfg: RunConfig) -> tuple[SummaryRow, list[IterationRecord]]:
    """Run one configuration in memory.  Solver failures become ``converged=false`` rows."""
    records: list[IterationRecord] = []
    try:
        pb, ctl, stop, T, tau, adaptive, tau_min = build(cfg)
        res: RunResult = run_engine(pb, ctl, stop, T, tau, adaptive_tau=adaptive, tau_min=tau_min)
        records = res.records
        split = {k.value: v for k, v in res.iterations_by_scheme().items()}
        row = SummaryRow(cfg.label, cfg.problem, cfg.algorithm, describe(cfg), res.total_iterations,
                         res.average_iterations, split, res.steps, res.failed_steps, res.converged, res.message)
    except (ArithmeticError, ValueError, AssertionError, FloatingPointError, MemoryError) as exc:
        log.warning("%s failed: %s", cfg.label, exc)
        row = SummaryRow(cfg.label, cfg.problem, cfg.algorithm, describe(cfg), 0, math.nan, {}, 0, 0,
                         False, f"{type(exc).__name__}: {exc}")
    return row, records


def write_outputs(out: Path, row: SummaryRow, records: list[IterationRecord]) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / f"{row.run_id}.csv"
    with trace_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        if row.total_iterations:
            w.writerows(trace_row(r) for r in records)
    append_summary(out / "summary.csv", row)
    return trace_path


def run(cfg: RunConfig, out_dir: str | Path | None = None) -> tuple[SummaryRow, Path]:
    """Run one configuration, write ``<run_id>.csv`` and append to ``summary.csv``."""
    row, records = execute(cfg)
    path = write_outputs(Path(out_dir if out_dir is not None else cfg.output_dir), row, records)
    return row, path


def append_summary(path: Path, row: SummaryRow) -> None:
    new = not path.exists()
    with path.open("a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(SUMMARY_COLUMNS)
        w.writerow(row.cells())


def read_trace(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------- entry point
def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="solve", description="Adaptive linearization experiments.")
    p.add_argument("config", nargs="?", help="key=value config file")
    p.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    p.add_argument("--table", choices=("twophase_table", "biot_table", "surfactant_figure"),
                   help="reproduce a reference table instead of running a config")
    p.add_argument("--mesh-n", type=int, default=None, help="override the mesh resolution")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")
    return p


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    if args.table:
        from .tables import reproduce_table

        path, ok = reproduce_table(args.table, out_dir=args.out or "out", mesh_n=args.mesh_n)
        log.info("wrote %s", path)
        return 0 if ok else 2
    if args.config is None:
        print("solve: a config file or --table is required", file=sys.stderr)
        return 1
    overrides = {"mesh_n": str(args.mesh_n)} if args.mesh_n is not None else None
    try:
        configs = parse_configs(args.config, overrides)
    except ConfigError as exc:
        print(f"solve: {exc}", file=sys.stderr)
        return 1
    all_ok = True
    for cfg in configs:
        out = args.out or cfg.output_dir
        row, path = run(cfg, out)
        all_ok &= row.converged
        log.info("%s: %s, %d iterations, avg %s -> %s", row.run_id, "converged" if row.converged else "DIVERGED",
                 row.total_iterations, fmt(row.average_iterations), path)
    if not configs:
        out = Path(args.out or "out")
        out.mkdir(parents=True, exist_ok=True)
        summary = out / "summary.csv"
        if not summary.exists():
            with summary.open("w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(SUMMARY_COLUMNS)
    return 0 if all_ok else 2


if __name__ == "__main__":
    sys.exit(main())
