"""Two-phase flow in global/complementary pressure form.

Unknowns are the complementary pressure Theta and the global pressure P,
both continuous P1.  With s(Theta) = Theta**gamma, lambda_t(s) = s**gamma +
(1 - s)**gamma and f_w = s**gamma / lambda_t, one backward Euler step reads

    <s(Theta) - s(Theta_old), q> + tau <grad Theta, grad q>
        + tau <f_w kappa lambda_t grad P, grad q> = 0
    tau <kappa lambda_t grad P, grad r> = 0

and is linearized either by the L-scheme or by Newton's method.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .engine import LinearStep, SchemeId
from .fem import FeSpace, Tag, Term, TriMesh, assemble, build_rect_mesh, constrain, quad_norm
from .sparse_solve import factor, solve

L_SCHEME = SchemeId.TWOPHASE_L
NEWTON = SchemeId.TWOPHASE_NEWTON


@dataclass(frozen=True)
class TwoPhaseConfig:
    gamma: float = 0.9
    kappa: float = 1e-5
    L: float = 1.0
    tau: float = 0.1
    T: float = 1.0
    C_tol: float = 1.0
    eps_deg: float = 1e-12
    n: int = 40

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.L <= 0:
            raise ValueError("L must be positive")
        if self.C_tol < 1:
            raise ValueError("C_tol must be >= 1")
        if self.tau <= 0 or self.T <= 0 or self.kappa <= 0:
            raise ValueError("tau, T and kappa must be positive")


@dataclass
class TwoPhaseState:
    Theta: np.ndarray
    P: np.ndarray

    def copy(self) -> "TwoPhaseState":
        return TwoPhaseState(self.Theta.copy(), self.P.copy())


@dataclass(frozen=True)
class Constitutive:
    s: np.ndarray
    ds: np.ndarray  # s'(Theta)
    lam: np.ndarray  # lambda_t(s(Theta))
    dlam: np.ndarray  # (lambda_t o s)'(Theta)
    fw: np.ndarray
    dfw: np.ndarray  # (f_w o s)'(Theta)


def constitutive(gamma: float, theta, eps_deg: float = 1e-12) -> Constitutive:
    """Pointwise constitutive values; singular derivatives are set to 0 near Theta=0 or s=1."""
    th = np.asarray(theta, dtype=float)
    if np.any(th < 0):
        raise ValueError("Theta must be nonnegative")
    s = th ** gamma
    if np.any(s > 1.0 + 1e-12):
        raise ValueError("saturation outside [0, 1]")
    s = np.minimum(s, 1.0)
    sg = s ** gamma
    rg = (1.0 - s) ** gamma
    lam = sg + rg
    fw = sg / lam
    with np.errstate(divide="ignore", invalid="ignore"):
        if gamma < 1.0:
            ok = th >= eps_deg
            ds = np.where(ok, gamma * th ** (gamma - 1.0), 0.0)
            # d(s^gamma)/dTheta = gamma^2 Theta^(gamma^2 - 1)
            dsg = np.where(ok, gamma * gamma * th ** (gamma * gamma - 1.0), 0.0)
            ok_r = 1.0 - s >= eps_deg
            drg = np.where(ok & ok_r, -gamma * (1.0 - s) ** (gamma - 1.0) * ds, 0.0)
        else:
            ds = np.ones_like(th)
            dsg = ds.copy()
            drg = -ds
    dlam = dsg + drg
    dfw = (dsg * lam - sg * dlam) / lam ** 2
    return Constitutive(s, ds, lam, dlam, fw, dfw)


def initial_saturation(points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """0.2 overall, 0.6 on the bottom edge nodes, 0 inside the central disc."""
    x, y = points[:, 0], points[:, 1]
    s = np.full(len(points), 0.2)
    s[y < tol] = 0.6
    s[(x - 0.5) ** 2 + (y - 0.5) ** 2 <= 0.1 + tol] = 0.0
    return s


@dataclass
class _Frozen:
    """Quadrature-point data at one iterate."""

    theta: np.ndarray
    c: Constitutive
    gradP: np.ndarray
    kappa: float

    @property
    def klam(self) -> np.ndarray:
        return self.kappa * self.c.lam

    @property
    def A(self) -> np.ndarray:  # f_w kappa lambda_t
        return self.c.fw * self.kappa * self.c.lam

    @property
    def dA(self) -> np.ndarray:  # (f_w o s)' kappa lambda_t + f_w kappa (lambda_t o s)'
        return self.kappa * (self.c.dfw * self.c.lam + self.c.fw * self.c.dlam)


class TwoPhaseProblem:
    fields = ("Theta", "P")

    def __init__(self, config: TwoPhaseConfig, mesh: TriMesh | None = None):
        self.cfg = config
        self.mesh = mesh or build_rect_mesh(config.n, config.n)
        self.V = FeSpace(self.mesh, 1)
        self.N = self.V.n_dofs
        self.Vp = FeSpace(self.mesh, 1)
        self.Vp.add_dirichlet(Tag.BOTTOM, 1.0)
        self.Vp.add_dirichlet(Tag.TOP, 0.0)
        self.mask = np.concatenate([np.zeros(self.N, dtype=bool), self.Vp.dirichlet_mask])
        self.geom = self.V.geom
        self.M = assemble([Term(1.0)], self.V)
        self.K = assemble([Term(1.0, "grad", "grad")], self.V)
        self.tau = config.tau
        self.s_old: np.ndarray | None = None

    # -------------------------------------------------------------- helpers
    def frozen(self, state: TwoPhaseState) -> _Frozen:
        th = self.V.values(state.Theta)
        return _Frozen(th, constitutive(self.cfg.gamma, th, self.cfg.eps_deg), self.V.gradients(state.P),
                       self.cfg.kappa)

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return x[: self.N], x[self.N:]

    def clamp(self, theta: np.ndarray) -> np.ndarray:
        return np.clip(theta, 0.0, 1.0)  # s(1) = 1 for every gamma

    # -------------------------------------------------------------- problem protocol
    def initial_state(self) -> TwoPhaseState:
        s0 = initial_saturation(self.V.dof_coords)
        theta = s0 ** (1.0 / self.cfg.gamma)
        P = self.solve_pressure(theta)
        return TwoPhaseState(theta, P)

    def solve_pressure(self, theta: np.ndarray) -> np.ndarray:
        """Pressure compatible with the saturation: tau <kappa lambda_t grad P, grad r> = 0."""
        c = constitutive(self.cfg.gamma, self.V.values(theta), self.cfg.eps_deg)
        A = assemble([Term(self.cfg.kappa * c.lam, "grad", "grad")], self.V)
        Ac, b = constrain(A, np.zeros(self.N), self.Vp.dirichlet_mask, self.Vp.dirichlet_values())
        return solve(factor(Ac), b)

    def begin_step(self, prev: TwoPhaseState, t: float, tau: float) -> TwoPhaseState:
        self.tau = tau
        self.s_old = constitutive(self.cfg.gamma, self.V.values(prev.Theta), self.cfg.eps_deg).s
        state = prev.copy()
        g = self.Vp.dirichlet_values(t)
        state.P[self.Vp.dirichlet_mask] = g[self.Vp.dirichlet_mask]
        return state

    def end_step(self, state: TwoPhaseState) -> TwoPhaseState:
        return state

    def residual(self, state: TwoPhaseState) -> np.ndarray:
        f = self.frozen(state)
        tau = self.tau
        V = self.V
        dx = self.geom.dx
        phi = V.op("val")[..., 0]
        dphi = V.op("grad")
        r_theta = np.einsum("eq,eq,eqi->ei", dx, f.c.s - self.s_old, phi)
        flux_theta = self.V.gradients(state.Theta) + f.A[..., None] * f.gradP
        r_theta += tau * np.einsum("eq,eqa,eqia->ei", dx, flux_theta, dphi)
        r_p = tau * np.einsum("eq,eqa,eqia->ei", dx, f.klam[..., None] * f.gradP, dphi)
        rt = np.bincount(V.elem_dofs.ravel(), weights=r_theta.ravel(), minlength=self.N)
        rp = np.bincount(V.elem_dofs.ravel(), weights=r_p.ravel(), minlength=self.N)
        return np.concatenate([rt, rp])

    def matrix(self, scheme: SchemeId, state: TwoPhaseState, L: float) -> sp.csr_matrix:
        f = self.frozen(state)
        tau, V = self.tau, self.V
        KA = assemble([Term(tau * f.A, "grad", "grad")], V)
        Kl = assemble([Term(tau * f.klam, "grad", "grad")], V)
        if scheme == L_SCHEME:
            tt = L * self.M + tau * self.K
            pt = None
        elif scheme == NEWTON:
            tt = assemble([Term(f.c.ds), Term(tau * f.dA[..., None] * f.gradP, "val", "grad")], V) + tau * self.K
            pt = assemble([Term(tau * self.cfg.kappa * f.c.dlam[..., None] * f.gradP, "val", "grad")], V)
        else:
            raise ValueError(f"unknown scheme {scheme}")
        return sp.bmat([[tt, KA], [pt, Kl]], format="csr")

    def linear_step(self, scheme: SchemeId, state: TwoPhaseState, L: float) -> LinearStep:
        A = self.matrix(scheme, state, L)
        r = self.residual(state)
        Ac, b = constrain(A, -r, self.mask, np.zeros(2 * self.N))
        d = solve(factor(Ac), b)
        energy = float(d @ (A @ d))
        work = float(-(r @ d))
        dth, dp = self.split(d)
        new = TwoPhaseState(self.clamp(state.Theta + dth), state.P + dp)
        f = self.frozen(state)
        inc = self.scheme_norm(scheme, f, new.Theta - state.Theta, new.P - state.P, L)
        return LinearStep(new, inc, energy, work)

    def scheme_norm(self, scheme: SchemeId, f: _Frozen, dth: np.ndarray, dp: np.ndarray, L: float) -> float:
        """Iteration-dependent norm with weights frozen in ``f``."""
        v = self.V.values(dth)
        w0 = L if scheme == L_SCHEME else f.c.ds
        sq = (quad_norm(self.geom, v, w0) ** 2
              + self.tau * quad_norm(self.geom, self.V.gradients(dth)) ** 2
              + self.tau * quad_norm(self.geom, self.V.gradients(dp), f.klam) ** 2)
        return float(np.sqrt(sq))

    def estimators(self, scheme: SchemeId, state: TwoPhaseState, prev: TwoPhaseState, L: float):
        fk, fm = self.frozen(state), self.frozen(prev)
        dth = state.Theta - prev.Theta
        dp = state.P - prev.P
        est = {}
        if scheme == L_SCHEME:
            est["eta_1to2"] = eta_L_to_N(self, fk, fm, dth, L)
            est["eta_1to1"] = eta_L_to_L(self, fk, fm, dth, L)
        else:
            est["eta_2to2"] = eta_N_to_N(self, fk, fm, dth)
        inputs = {
            "inc_fast": self.scheme_norm(NEWTON, fk, dth, dp, L),
            "inc_self": self.scheme_norm(scheme, fk, dth, dp, L),
        }
        return est, inputs

    def increment_norms(self, state: TwoPhaseState, prev: TwoPhaseState):
        def l2(u):
            return float(np.sqrt(max(u @ (self.M @ u), 0.0)))

        incs = {"Theta": l2(state.Theta - prev.Theta), "P": l2(state.P - prev.P)}
        norms = {"Theta": l2(state.Theta), "P": l2(state.P)}
        return incs, norms

    def residual_norm(self, state: TwoPhaseState) -> float:
        r = self.residual(state)
        return float(np.linalg.norm(r[~self.mask]))


# ---------------------------------------------------------------------- estimators
def _combine(problem: TwoPhaseProblem, eta_s: float, eta_theta: float, eta_lam: float) -> float:
    # assumption constants are not computed, so the prefactor is 1
    tau = problem.tau
    out = float(np.sqrt(eta_s ** 2 + tau * eta_theta ** 2 + tau * eta_lam ** 2))
    if not np.isfinite(out):
        raise FloatingPointError("non-finite estimator")
    return out


def _inv_weight(w: np.ndarray, eps: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(w >= eps, 1.0 / np.where(w >= eps, w, 1.0), 0.0)


def _split_terms(problem, fk: _Frozen, fm: _Frozen):
    geom = problem.geom
    eta_theta = quad_norm(geom, (fk.A - fm.A)[..., None] * fk.gradP)
    eta_lam = quad_norm(geom, (fk.klam - fm.klam)[..., None] * fk.gradP, _inv_weight(fk.klam, problem.cfg.eps_deg))
    return eta_theta, eta_lam


def eta_L_to_N(problem: TwoPhaseProblem, fk: _Frozen, fm: _Frozen, dth: np.ndarray, L: float) -> float:
    """Bound on the next increment if Newton follows L-scheme iterates."""
    eps = problem.cfg.eps_deg
    dth_q = problem.V.values(dth)
    eta_s = quad_norm(problem.geom, L * dth_q - (fk.c.s - fm.c.s), _inv_weight(fk.c.ds, eps))
    eta_theta, eta_lam = _split_terms(problem, fk, fm)
    return _combine(problem, eta_s, eta_theta, eta_lam)


def eta_L_to_L(problem: TwoPhaseProblem, fk: _Frozen, fm: _Frozen, dth: np.ndarray, L: float) -> float:
    """Bound on the next increment if the L-scheme continues."""
    dth_q = problem.V.values(dth)
    eta_s = quad_norm(problem.geom, L * dth_q - (fk.c.s - fm.c.s), 1.0 / L)
    eta_theta, eta_lam = _split_terms(problem, fk, fm)
    return _combine(problem, eta_s, eta_theta, eta_lam)


def eta_N_to_N(problem: TwoPhaseProblem, fk: _Frozen, fm: _Frozen, dth: np.ndarray) -> float:
    """Bound on the next increment if Newton continues: Taylor remainders of each nonlinearity."""
    eps = problem.cfg.eps_deg
    geom = problem.geom
    dth_q = problem.V.values(dth)
    eta_s = quad_norm(geom, fm.c.ds * dth_q - (fk.c.s - fm.c.s), _inv_weight(fk.c.ds, eps))
    rem_theta = (fk.A - fm.A)[..., None] * fk.gradP - (fm.dA * dth_q)[..., None] * fm.gradP
    eta_theta = quad_norm(geom, rem_theta)
    rem_lam = (fk.klam - fm.klam)[..., None] * fk.gradP - (fm.kappa * fm.c.dlam * dth_q)[..., None] * fm.gradP
    eta_lam = quad_norm(geom, rem_lam, _inv_weight(fk.klam, eps))
    return _combine(problem, eta_s, eta_theta, eta_lam)
