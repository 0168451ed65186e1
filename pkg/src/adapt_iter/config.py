"""Run configuration: flat ``key=value`` files with dotted sections.

Example::

    problem = twophase
    algorithm = switching
    mesh_n = 40
    twophase.gamma = 0.9
    sweep.twophase.gamma = [0.5..0.9 step 0.1]

Lines starting with ``#`` are comments.  ``sweep.<key>`` expands to one run
per value; several sweep keys form a cartesian product in file order.
"""

from __future__ import annotations

import dataclasses
import itertools
import re
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Any

from .biot import BiotConfig
from .surfactant import SurfactantConfig
from .twophase import TwoPhaseConfig

PROBLEMS = ("twophase", "surfactant", "biot")
ALGORITHMS = {
    "twophase": ("lscheme", "newton", "switching", "adaptive_L"),
    "surfactant": ("lscheme", "newton", "switching", "adaptive_tau"),
    "biot": ("fixed_stress", "adaptive_fs"),
}
PROBLEM_CONFIG = {"twophase": TwoPhaseConfig, "surfactant": SurfactantConfig, "biot": BiotConfig}
# handled at top level, not inside the problem section
_TOP_LEVEL_FIELDS = {"n", "tau", "T"}
BIOT_L_NAMES = ("L_min", "L_MW", "L_1D", "L_phys", "opt")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    problem: str
    algorithm: str
    mesh_n: int = 40
    tau: float | None = None  # None: problem default
    T: float | None = None
    params: dict[str, Any] = field(default_factory=dict)
    output_dir: str = "out"
    run_id: str = ""
    max_iter: int = 200
    tol: float = 1e-6

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; expected one of {PROBLEMS}")
        if self.algorithm not in ALGORITHMS[self.problem]:
            raise ConfigError(f"algorithm {self.algorithm!r} is not available for {self.problem}; "
                              f"expected one of {ALGORITHMS[self.problem]}")
        if self.mesh_n < 1:
            raise ConfigError("mesh_n must be positive")
        if self.max_iter < 2:
            raise ConfigError("max_iter must be at least 2")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        for name in ("tau", "T"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ConfigError(f"{name} must be positive")
        self.problem_config()  # validates the parameter block

    def problem_config(self):
        cls = PROBLEM_CONFIG[self.problem]
        kw = dict(self.params)
        if self.problem == "biot":
            kw.pop("L", None)  # resolved by name at run time
        kw["n"] = self.mesh_n
        if self.tau is not None:
            kw["tau"] = self.tau
        if self.T is not None:
            kw["T"] = self.T
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @property
    def label(self) -> str:
        return self.run_id or f"{self.problem}_{self.algorithm}"


# ---------------------------------------------------------------------- value parsing
def _section_types(problem: str) -> dict[str, type]:
    out = {}
    for f in dataclasses.fields(PROBLEM_CONFIG[problem]):
        if f.name in _TOP_LEVEL_FIELDS:
            continue
        t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
        out[f.name] = int if t == "int" else float
    if problem == "biot":
        out["L"] = str  # name or number
    return out


_TOP_TYPES = {"problem": str, "algorithm": str, "mesh_n": int, "tau": float, "T": float, "output_dir": str,
              "run_id": str, "max_iter": int, "tol": float}


def _convert(key: str, raw: str, typ: type):
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None
    return raw


def _biot_L(raw: str):
    if raw in BIOT_L_NAMES:
        return raw
    try:
        v = float(raw)
    except ValueError:
        raise ConfigError(f"biot.L must be one of {BIOT_L_NAMES} or a number, got {raw!r}") from None
    if v <= 0:
        raise ConfigError("biot.L must be positive")
    return v


_RANGE = re.compile(r"^\s*(\S+)\s*\.\.\s*(\S+)\s+step\s+(\S+)\s*$")


def parse_list(raw: str) -> list[str]:
    """``[a, b, c]`` or ``[start..stop step h]`` (inclusive, exact decimal arithmetic)."""
    s = raw.strip()
    if not (s.startswith("[") and s.endswith("]")):
        raise ConfigError(f"sweep values must be a bracketed list, got {raw!r}")
    body = s[1:-1].strip()
    if not body:
        return []
    m = _RANGE.match(body)
    if m:
        try:
            a, b, h = (Decimal(x) for x in m.groups())
        except ArithmeticError:
            raise ConfigError(f"bad range {raw!r}") from None
        if h == 0 or (b - a) * h < 0:
            raise ConfigError(f"range {raw!r} does not reach its end")
        count = int((b - a) / h) + 1
        return [str(a + i * h) for i in range(count)]
    return [v.strip() for v in body.split(",") if v.strip()]


# ---------------------------------------------------------------------- files
def read_pairs(text: str) -> list[tuple[str, str]]:
    pairs = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        pairs.append((key, value))
    return pairs


def _assign(key: str, raw: str, problem: str, top: dict, params: dict) -> None:
    if "." in key:
        section, name = key.split(".", 1)
        if section not in PROBLEMS:
            raise ConfigError(f"unknown section {section!r} in key {key!r}")
        if section != problem:
            raise ConfigError(f"key {key!r} does not belong to problem {problem!r}")
        types = _section_types(problem)
        if name not in types:
            raise ConfigError(f"unknown key {key!r}")
        params[name] = _biot_L(raw) if (problem == "biot" and name == "L") else _convert(key, raw, types[name])
    else:
        if key not in _TOP_TYPES:
            raise ConfigError(f"unknown key {key!r}")
        top[key] = _convert(key, raw, _TOP_TYPES[key])


def configs_from_text(text: str, overrides: dict[str, str] | None = None) -> list[RunConfig]:
    pairs = read_pairs(text)
    base = [(k, v) for k, v in pairs if not k.startswith("sweep.")]
    sweeps = [(k[len("sweep."):], parse_list(v)) for k, v in pairs if k.startswith("sweep.")]
    base += list((overrides or {}).items())
    plain = dict(base)
    for key in ("problem", "algorithm"):
        if key not in plain:
            raise ConfigError(f"missing required key {key!r}")
    problem = plain["problem"]
    if problem not in PROBLEMS:
        raise ConfigError(f"unknown problem {problem!r}; expected one of {PROBLEMS}")
    for key, _ in sweeps:
        if key in ("problem", "algorithm"):
            raise ConfigError(f"cannot sweep {key!r}")

    out = []
    for combo in itertools.product(*(vals for _, vals in sweeps)):
        top: dict[str, Any] = {}
        params: dict[str, Any] = {}
        for k, v in base:
            _assign(k, v, problem, top, params)
        tags = []
        for (k, _), v in zip(sweeps, combo):
            _assign(k, v, problem, top, params)
            tags.append(f"{k.split('.')[-1]}={v}")
        run_id = top.pop("run_id", "") or f"{problem}_{plain['algorithm']}"
        if tags:
            run_id += "_" + "_".join(tags)
        out.append(RunConfig(params=params, run_id=run_id, **top))
    return out


def parse_configs(path: str | Path, overrides: dict[str, str] | None = None) -> list[RunConfig]:
    """All runs described by a config file (one per sweep point)."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {str(p)!r} does not exist")
    return configs_from_text(p.read_text(), overrides)


def parse_config(path: str | Path) -> RunConfig:
    """A single run; a file expanding to several sweep points is an error here."""
    runs = parse_configs(path)
    if len(runs) != 1:
        raise ConfigError(f"expected exactly one run, the sweep expands to {len(runs)}")
    return runs[0]
