"""Reproduce the reference comparison tables from a grid of runs."""

from __future__ import annotations

import logging
from pathlib import Path

from .cli import execute, write_outputs
from .config import RunConfig
from .engine import Action, IterationRecord

log = logging.getLogger("adapt_iter")

DIVERGED = "-"

GAMMAS = (0.9, 0.8, 0.7, 0.6, 0.5)
# row label -> (algorithm, L)
TWOPHASE_ROWS = {
    "L_1": ("lscheme", 1.0),
    "L_2": ("lscheme", 10.0),
    "Newton": ("newton", 1.0),
    "L_1-A": ("adaptive_L", 1.0),
    "L_2-A": ("adaptive_L", 10.0),
    "L_1-N": ("switching", 1.0),
    "L_2-N": ("switching", 10.0),
}
TWOPHASE_REFERENCE = {
    "L_1": ("3.7", "5.1", "9.3", "-", "-"),
    "L_2": ("20.7", "20.2", "18.6", "15.6", "11.8"),
    "Newton": ("3.3", "3.3", "3.3", "3.5", "-"),
    "L_1-A": ("3.7", "5.1", "6.8", "5", "7.6"),
    "L_2-A": ("13.3", "12.8", "13.4", "13.3", "11.8"),
    "L_1-N": ("3.0(1)", "3.1(1)", "3.2(1)", "-", "-"),
    "L_2-N": ("3.3(1)", "3.4(1)", "3.4(1)", "3.5(1)", "3.6(1)"),
}

NUS = (0.01, 0.2, 0.4)
# row label -> (algorithm, starting L, C_inc)
BIOT_ROWS = {
    "L_min": ("fixed_stress", "L_min", None),
    "L_MW": ("fixed_stress", "L_MW", None),
    "L_phys": ("fixed_stress", "L_phys", None),
    "L_1D": ("fixed_stress", "L_1D", None),
    "L_A(1.25)": ("adaptive_fs", "L_min", 1.25),
    "L_A(1.3)": ("adaptive_fs", "L_min", 1.3),
    "L_A(1.4)": ("adaptive_fs", "L_min", 1.4),
    "L_opt": ("fixed_stress", "opt", None),
}
BIOT_REFERENCE = {
    "L_min": (2413, 812, 438),
    "L_MW": (576, 488, 399),
    "L_phys": (593, 476, 320),
    "L_1D": (568, 386, 247),
    "L_A(1.25)": (589, 398, 438),
    "L_A(1.3)": (501, 353, 438),
    "L_A(1.4)": (491, 349, 438),
    "L_opt": (465, 341, 247),
}

SURFACTANT_MESHES = (20, 40, 60)
# column label -> (algorithm, n_fast)
SURFACTANT_COLUMNS = {"L/N": ("switching", None), "N/tau(5)": ("adaptive_tau", 5), "N/tau(10)": ("adaptive_tau", 10)}


def _markdown(header: list[str], rows: list[list[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def newton_split(records: list[IterationRecord]) -> tuple[int, int]:
    """(iterations in accepted steps, iterations in abandoned attempts)."""
    by_step: dict[int, list[IterationRecord]] = {}
    for r in records:
        by_step.setdefault(r.step, []).append(r)
    good = bad = 0
    for recs in by_step.values():
        if Action.STOP_CONVERGED in recs[-1].actions:
            good += len(recs)
        else:
            bad += len(recs)
    return good, bad


def _twophase(out: Path, mesh_n: int) -> tuple[str, bool]:
    ok = True
    rows = []
    for label, (algo, L) in TWOPHASE_ROWS.items():
        cells = []
        for j, g in enumerate(GAMMAS):
            cfg = RunConfig("twophase", algo, mesh_n=mesh_n, params={"gamma": g, "L": L},
                            run_id=f"twophase_{label}_gamma={g}")
            row, recs = execute(cfg)
            write_outputs(out, row, recs)
            ok &= row.converged
            if not row.converged:
                cell = DIVERGED
            elif algo == "switching":
                cell = f"{row.average_iterations:.1f}({row.scheme_split.get('TWOPHASE_L', 0)})"
            else:
                cell = f"{row.average_iterations:.1f}"
            cells.append(f"{cell} [{TWOPHASE_REFERENCE[label][j]}]")
            log.info("twophase %s gamma=%s: %s", label, g, cell)
        rows.append([label] + cells)
    text = (f"Two-phase flow, average iterations per time step (mesh_n={mesh_n}); "
            f"reference values in brackets, {DIVERGED} marks divergence\n\n")
    return text + _markdown(["scheme"] + [f"gamma={g}" for g in GAMMAS], rows), ok


def _biot(out: Path, mesh_n: int) -> tuple[str, bool]:
    ok = True
    rows = []
    for label, (algo, L, C_inc) in BIOT_ROWS.items():
        cells = []
        for j, nu in enumerate(NUS):
            params = {"nu": nu, "L": L}
            if C_inc is not None:
                params["C_inc"] = C_inc
            cfg = RunConfig("biot", algo, mesh_n=mesh_n, params=params, max_iter=500,
                            run_id=f"biot_{label}_nu={nu}")
            row, recs = execute(cfg)
            write_outputs(out, row, recs)
            ok &= row.converged
            cell = str(row.total_iterations) if row.converged else DIVERGED
            cells.append(f"{cell} [{BIOT_REFERENCE[label][j]}]")
            log.info("biot %s nu=%s: %s", label, nu, cell)
        rows.append([label] + cells)
    text = (f"Biot, total fixed-stress iterations (mesh_n={mesh_n}); "
            f"reference values in brackets, {DIVERGED} marks divergence\n\n")
    return text + _markdown(["scheme"] + [f"nu={nu}" for nu in NUS], rows), ok


def _surfactant(out: Path, meshes: tuple[int, ...]) -> tuple[str, bool]:
    ok = True
    rows = []
    for n in meshes:
        cells = []
        for label, (algo, n_fast) in SURFACTANT_COLUMNS.items():
            params = {} if n_fast is None else {"n_fast": n_fast}
            cfg = RunConfig("surfactant", algo, mesh_n=n, params=params, run_id=f"surfactant_{label}_n={n}"
                            .replace("/", "-").replace("(", "").replace(")", ""))
            row, recs = execute(cfg)
            write_outputs(out, row, recs)
            ok &= row.converged
            if not row.converged:
                cell = DIVERGED
            elif algo == "switching":
                cell = (f"{row.total_iterations} ({row.scheme_split.get('SURF_L', 0)}/"
                        f"{row.scheme_split.get('SURF_NEWTON', 0)})")
            else:
                good, bad = newton_split(recs)
                cell = f"{row.total_iterations} ({good}/{bad})"
            cells.append(cell)
            log.info("surfactant %s n=%s: %s", label, n, cell)
        rows.append([str(n)] + cells)
    text = ("Surfactant transport, total iterations over [0, 1]; L/N shows (L-scheme/Newton) iterations, "
            f"N/tau shows (accepted/abandoned) Newton iterations, {DIVERGED} marks divergence\n\n")
    return text + _markdown(["mesh_n"] + list(SURFACTANT_COLUMNS), rows), ok


def reproduce_table(name: str, out_dir: str | Path = "out", mesh_n: int | None = None) -> tuple[Path, bool]:
    """Run the grid behind a reference table and write ``<out_dir>/<name>/<name>.md``.

    Returns the table path and whether every cell converged.
    """
    out = Path(out_dir) / name
    out.mkdir(parents=True, exist_ok=True)
    summary = out / "summary.csv"
    if summary.exists():
        summary.unlink()
    if name == "twophase_table":
        text, ok = _twophase(out, mesh_n or 40)
    elif name == "biot_table":
        text, ok = _biot(out, mesh_n or 40)
    elif name == "surfactant_figure":
        text, ok = _surfactant(out, (mesh_n,) if mesh_n else SURFACTANT_MESHES)
    else:
        raise ValueError(f"unknown table {name!r}")
    path = out / f"{name}.md"
    path.write_text(text)
    return path, ok

