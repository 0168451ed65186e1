"""Quasi-static linear Biot poroelasticity with fixed-stress splitting.

Pressure is P1 and displacement P2 (Taylor-Hood) on the L-shaped domain
(0,1)^2 minus [0.5,1]^2.  Each fixed-stress iteration solves the flow
equation with the stabilized mass (c0 + L) and the previous displacement,
then the mechanics equation with the new pressure.  The monolithic solve of
the coupled system serves as the reference solution.

The pressure enters the momentum balance as -<alpha p, div v>, so the
traction-free lower-right edge carries zero total stress.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .engine import LinearStep, SchemeId
from .fem import (FeSpace, Tag, Term, TriMesh, assemble, assemble_boundary_functional, build_lshape_mesh,
                  constrain)
from .sparse_solve import LuFactor, factor, solve

FIXED_STRESS = SchemeId.BIOT_FIXED_STRESS
DIM = 2


def lame_from_E_nu(E: float, nu: float) -> tuple[float, float, float]:
    """(mu, lambda, K_dr) with K_dr = 2 mu / d + lambda, d = 2."""
    if not 0 < nu < 0.5:
        raise ValueError("Poisson ratio must lie in (0, 0.5)")
    if E <= 0:
        raise ValueError("Young's modulus must be positive")
    mu = E / (2.0 * (1.0 + nu))
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    return mu, lam, 2.0 * mu / DIM + lam


@dataclass(frozen=True)
class BiotConfig:
    E: float = 1e11
    nu: float = 0.2
    alpha: float = 0.9
    c0: float = 1e-11
    kappa: float = 1e-13
    mu_f: float = 1.0
    tau: float = 0.01
    T: float = 0.5
    L: float | None = None  # None: L_min
    C_inc: float = 1.4
    h_max: float = 1e10
    rel_tol: float = 1e-6
    n: int = 40

    def __post_init__(self):
        lame_from_E_nu(self.E, self.nu)
        for name in ("alpha", "c0", "kappa", "mu_f", "tau", "T", "h_max", "rel_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.L is not None and self.L <= 0:
            raise ValueError("L must be positive")
        if self.C_inc <= 1:
            raise ValueError("C_inc must exceed 1")

    @property
    def lame(self) -> tuple[float, float, float]:
        return lame_from_E_nu(self.E, self.nu)

    @property
    def mobility(self) -> float:
        return self.kappa / self.mu_f


@dataclass(frozen=True)
class StabilizationFamily:
    L_min: float
    L_MW: float
    L_1D: float
    L_phys: float

    @classmethod
    def of(cls, cfg: BiotConfig) -> "StabilizationFamily":
        mu, lam, K_dr = cfg.lame
        a2 = cfg.alpha ** 2
        return cls(a2 / (4 * mu + 2 * lam), a2 / (2 * K_dr), a2 / (2 * mu + lam), a2 / K_dr)

    def named(self, name: str, nu: float | None = None) -> float:
        """Look up a parameter by name; "opt" uses the coarse-mesh optimum for nu in {0.01, 0.2, 0.4}."""
        if name == "opt":
            table = {0.01: 2.5 * self.L_min, 0.2: 2.3 * self.L_min, 0.4: self.L_1D}
            for key, val in table.items():
                if nu is not None and abs(nu - key) < 1e-12:
                    return val
            raise ValueError(f"no optimized L for nu={nu}")
        try:
            return getattr(self, name)
        except AttributeError:
            raise ValueError(f"unknown stabilization {name!r}") from None


def contraction_factor(cfg: BiotConfig) -> float:
    """alpha c0^-1 / (alpha c0^-1 + 2 K_dr), the assumed pressure contraction of fixed stress."""
    a = cfg.alpha / cfg.c0
    return a / (a + 2.0 * cfg.lame[2])


def traction(t: float, h_max: float) -> float:
    """Vertical traction on the top edge (negative: pushes down)."""
    return -256.0 * h_max * t ** 2 * (t - 0.5) ** 2


def assemble_traction(space: FeSpace, t: float, h_max: float) -> np.ndarray:
    g = traction(t, h_max)

    def fn(x, _t):
        out = np.zeros((len(x), 2))
        out[:, 1] = g
        return out

    return assemble_boundary_functional(space, [Tag.TOP], fn, t)


@dataclass
class BiotState:
    p: np.ndarray
    u: np.ndarray

    def copy(self) -> "BiotState":
        return BiotState(self.p.copy(), self.u.copy())


class BiotProblem:
    fields = ("p",)

    def __init__(self, config: BiotConfig, mesh: TriMesh | None = None):
        self.cfg = config
        self.mesh = mesh or build_lshape_mesh(config.n)
        self.mu, self.lam, self.K_dr = config.lame
        self.Q = FeSpace(self.mesh, 1)
        self.Q.add_dirichlet(Tag.TOP, 0.0)
        self.V = FeSpace(self.mesh, 2, components=2)
        self.V.add_dirichlet((Tag.LEFT, Tag.REENTRANT_V), 0.0, component=0)
        self.V.add_dirichlet((Tag.BOTTOM, Tag.REENTRANT_H), 0.0, component=1)
        a = config.alpha
        self.Mp = assemble([Term(1.0)], self.Q)
        self.Kp = assemble([Term(1.0, "grad", "grad")], self.Q)
        self.Au = assemble([Term(2.0 * self.mu, "eps", "eps"), Term(self.lam, "div", "div")], self.V)
        self.G = assemble([Term(-a, "val", "div")], self.Q, self.V)  # -<alpha p, div v>
        self.Dv = assemble([Term(a, "div", "val")], self.V, self.Q)  # <alpha div u, q>
        self.Mu = assemble([Term(1.0)], self.V)
        self.np, self.nu_ = self.Q.n_dofs, self.V.n_dofs
        self.tau = config.tau
        self.p_old = self.u_old = self.f6 = None
        self._flow: dict[float, LuFactor] = {}

    @cached_property
    def mech_factor(self) -> LuFactor:
        A, _ = constrain(self.Au, np.zeros(self.nu_), self.V.dirichlet_mask, np.zeros(self.nu_))
        return factor(A)

    def flow_matrix(self, L: float) -> sp.csr_matrix:
        return ((self.cfg.c0 + L) * self.Mp + self.tau * self.cfg.mobility * self.Kp).tocsr()

    def flow_factor(self, L: float) -> LuFactor:
        key = (float(L), float(self.tau))
        if key not in self._flow:
            A, _ = constrain(self.flow_matrix(L), np.zeros(self.np), self.Q.dirichlet_mask, np.zeros(self.np))
            self._flow[key] = factor(A)
        return self._flow[key]

    # -------------------------------------------------------------- problem protocol
    def initial_state(self) -> BiotState:
        return BiotState(np.zeros(self.np), np.zeros(self.nu_))

    def begin_step(self, prev: BiotState, t: float, tau: float) -> BiotState:
        self.tau = tau
        self.p_old, self.u_old = prev.p.copy(), prev.u.copy()
        self.f6 = assemble_traction(self.V, t, self.cfg.h_max)
        return prev.copy()

    def end_step(self, state: BiotState) -> BiotState:
        return state

    def flow_residual(self, p: np.ndarray, u: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        return (cfg.c0 * (self.Mp @ (p - self.p_old)) + self.tau * cfg.mobility * (self.Kp @ p)
                + self.Dv @ (u - self.u_old))

    def mech_residual(self, p: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.Au @ u + self.G @ p - self.f6

    def linear_step(self, scheme: SchemeId, state: BiotState, L: float) -> LinearStep:
        if scheme != FIXED_STRESS:
            raise ValueError(f"unknown scheme {scheme}")
        qmask, vmask = self.Q.dirichlet_mask, self.V.dirichlet_mask
        rf = self.flow_residual(state.p, state.u)
        dp = self.flow_factor(L).solve(np.where(qmask, 0.0, -rf))
        p = state.p + dp
        rm = self.mech_residual(p, state.u)
        du = self.mech_factor.solve(np.where(vmask, 0.0, -rm))
        energy = float(dp @ (self.flow_matrix(L) @ dp) + du @ (self.Au @ du))
        work = float(-(rf @ dp) - (rm @ du))
        new = BiotState(p, state.u + du)
        return LinearStep(new, self.flow_norm(dp, L) + self.mech_norm(du), energy, work)

    def flow_norm(self, dp: np.ndarray, L: float) -> float:
        return float(np.sqrt(max(dp @ (self.flow_matrix(L) @ dp), 0.0)))

    def mech_norm(self, du: np.ndarray) -> float:
        return float(np.sqrt(max(du @ (self.Au @ du), 0.0)))

    def l2(self, x: np.ndarray, which: str = "p") -> float:
        M = self.Mp if which == "p" else self.Mu
        return float(np.sqrt(max(x @ (M @ x), 0.0)))

    def estimators(self, scheme: SchemeId, state: BiotState, prev: BiotState, L: float):
        dp, du = state.p - prev.p, state.u - prev.u
        flow, mech = eta_fixed_stress(self, dp, du, L)
        est = {"eta_flow": flow, "eta_mech": mech, "eta_5to5": flow + mech}
        return est, {"inc_self": self.flow_norm(dp, L) + self.mech_norm(du)}

    def increment_norms(self, state: BiotState, prev: BiotState):
        return {"p": self.l2(state.p - prev.p)}, {"p": self.l2(state.p)}

    def residual_norm(self, state: BiotState) -> float:
        rf = np.where(self.Q.dirichlet_mask, 0.0, self.flow_residual(state.p, state.u))
        rm = np.where(self.V.dirichlet_mask, 0.0, self.mech_residual(state.p, state.u))
        return float(np.hypot(np.linalg.norm(rf), np.linalg.norm(rm)))

    # -------------------------------------------------------------- reference solution
    def monolithic_matrix(self) -> sp.csr_matrix:
        return sp.bmat([[self.flow_matrix(0.0), self.Dv], [self.G, self.Au]], format="csr")

    def monolithic_solve(self, prev: BiotState, t: float, tau: float) -> BiotState:
        """One backward Euler step of the coupled system by a single direct solve."""
        self.begin_step(prev, t, tau)
        cfg = self.cfg
        rhs = np.concatenate([cfg.c0 * (self.Mp @ self.p_old) + self.Dv @ self.u_old, self.f6])
        mask = np.concatenate([self.Q.dirichlet_mask, self.V.dirichlet_mask])
        A, b = constrain(self.monolithic_matrix(), rhs, mask, np.zeros(len(rhs)))
        x = solve(factor(A, equilibrate=True), b)
        return BiotState(x[: self.np], x[self.np:])


def eta_fixed_stress(problem: BiotProblem, dp: np.ndarray, du: np.ndarray, L: float) -> tuple[float, float]:
    """(eta_flow, eta_mech) bounding the next fixed-stress increment."""
    cfg = problem.cfg
    a = cfg.alpha
    dp_l2 = problem.l2(dp, "p")
    du_l2 = problem.l2(du, "u")
    flow = float(np.hypot(L / np.sqrt(L + cfg.c0) * dp_l2, a / np.sqrt(problem.tau * cfg.mobility) * du_l2))
    mech = float(a * np.sqrt(contraction_factor(cfg) / problem.lam) * dp_l2)
    return flow, mech
