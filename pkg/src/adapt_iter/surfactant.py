"""Richards' equation coupled to surfactant transport.

Unknowns: pressure head psi and concentration c (both P1).  The water
content theta(psi, c) follows a van Genuchten-Mualem law whose scaling
depends on c through the surface tension factor gamma(c).  Gravity acts in
-y, so the flux is -K grad(psi + y).  The convective water flux in the
transport equation is frozen at the previous time step (elementwise
constant).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .engine import LinearStep, SchemeId
from .fem import FeSpace, Tag, Term, TriMesh, assemble, build_rect_mesh, constrain, quad_norm
from .sparse_solve import factor, solve

L_SCHEME = SchemeId.SURF_L
NEWTON = SchemeId.SURF_NEWTON
E_Y = np.array([0.0, 1.0])


@dataclass(frozen=True)
class SurfactantConfig:
    D: float = 1e-3
    a: float = 0.44
    b: float = 0.0046
    theta_r: float = 0.026
    theta_s: float = 0.42
    K_s: float = 0.12
    n_vg: float = 2.9
    alpha_vg: float = 0.551
    L1: float = 0.1
    L2: float = 128.0
    tau: float = 0.1
    T: float = 1.0
    C_tol: float = 1.5
    tau_min: float = 1e-5
    n_fast: int = 5
    eps_deg: float = 1e-12
    n: int = 40

    def __post_init__(self):
        if not 0 <= self.theta_r < self.theta_s:
            raise ValueError("need 0 <= theta_r < theta_s")
        if self.n_vg <= 1:
            raise ValueError("n_vg must exceed 1")
        for name in ("D", "a", "b", "K_s", "alpha_vg", "L1", "L2", "tau", "T", "tau_min"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.C_tol < 1:
            raise ValueError("C_tol must be >= 1")


@dataclass
class SurfactantState:
    psi: np.ndarray
    c: np.ndarray
    u_w: np.ndarray | None = None  # (E, 2) water flux of the previous time step

    def copy(self) -> "SurfactantState":
        return SurfactantState(self.psi.copy(), self.c.copy(), None if self.u_w is None else self.u_w.copy())


@dataclass(frozen=True)
class VgmValues:
    theta: np.ndarray
    dtheta_dpsi: np.ndarray
    dtheta_dc: np.ndarray
    K: np.ndarray
    dK: np.ndarray  # dK/dtheta


def surface_tension(c, a: float, b: float) -> np.ndarray:
    """gamma(c) = 1 / (1 - b log(c/a + 1))."""
    c = np.asarray(c, dtype=float)
    if np.any(c < 0):
        raise ValueError("concentration must be nonnegative")
    den = 1.0 - b * np.log(c / a + 1.0)
    if np.any(den <= 0):
        raise ValueError("surface tension factor undefined: 1 - b log(c/a + 1) <= 0")
    return 1.0 / den


def vgm(psi, c, cfg: SurfactantConfig) -> VgmValues:
    """Water content, conductivity and their derivatives at (psi, c)."""
    psi = np.asarray(psi, dtype=float)
    c = np.broadcast_to(np.asarray(c, dtype=float), psi.shape)
    g = surface_tension(c, cfg.a, cfg.b)
    dg = g * g * cfg.b / (c + cfg.a)
    n, m = cfg.n_vg, 1.0 - 1.0 / cfg.n_vg
    span = cfg.theta_s - cfg.theta_r
    unsat = psi <= 0
    y = cfg.alpha_vg * g * np.where(unsat, -psi, 0.0)  # alpha gamma |psi|
    X = y ** n
    Se = (1.0 + X) ** (-m)
    common = span * m * (1.0 + X) ** (-m - 1.0)
    dth_dpsi = np.where(unsat, common * n * cfg.alpha_vg * g * y ** (n - 1.0), 0.0)
    dth_dc = np.where(unsat, -common * n * X / g * dg, 0.0)
    theta = np.where(unsat, cfg.theta_r + span * Se, cfg.theta_s)

    A = np.clip(1.0 - Se ** (1.0 / m), 0.0, 1.0)
    B = 1.0 - A ** m
    K = np.minimum(cfg.K_s * np.sqrt(Se) * B * B, cfg.K_s)
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = unsat & (A > cfg.eps_deg) & (Se > cfg.eps_deg)
        dB = A ** (m - 1.0) * Se ** (1.0 / m - 1.0)
        dK_dSe = cfg.K_s * (0.5 / np.sqrt(Se) * B * B + 2.0 * np.sqrt(Se) * B * dB)
        dK = np.where(ok, dK_dSe / span, 0.0)
    K = np.where(unsat, K, cfg.K_s)
    return VgmValues(theta, dth_dpsi, dth_dc, K, dK)


def initial_head(points: np.ndarray) -> np.ndarray:
    y = points[:, 1]
    return np.where(y >= 0.25, -2.0, -y - 0.25)


def top_concentration(points: np.ndarray, t: float = 0.0) -> np.ndarray:
    x = points[:, 0]
    return np.where((x >= 0.25 - 1e-12) & (x <= 0.75 + 1e-12), 4.0, 1.0)


def water_source(x: np.ndarray) -> np.ndarray:
    """f3 at points (..., 2): active only for y >= 1/4."""
    px, py = x[..., 0], x[..., 1]
    return np.where(py >= 0.25, 0.06 * np.cos(4.0 * np.pi * py / 3.0) * np.sin(px), 0.0)


@dataclass
class _Frozen:
    v: VgmValues
    c: np.ndarray
    g: np.ndarray  # grad(psi + y)
    gc: np.ndarray  # grad c


class SurfactantProblem:
    fields = ("psi", "c")

    def __init__(self, config: SurfactantConfig, mesh: TriMesh | None = None):
        self.cfg = config
        self.mesh = mesh or build_rect_mesh(config.n, config.n)
        self.V = FeSpace(self.mesh, 1)
        self.N = self.V.n_dofs
        self.Vpsi = FeSpace(self.mesh, 1)
        self.Vpsi.add_dirichlet(Tag.TOP, -2.0)
        self.Vc = FeSpace(self.mesh, 1)
        self.Vc.add_dirichlet(Tag.TOP, top_concentration)
        self.mask = np.concatenate([self.Vpsi.dirichlet_mask, self.Vc.dirichlet_mask])
        self.geom = self.V.geom
        self.M = assemble([Term(1.0)], self.V)
        self.K = assemble([Term(1.0, "grad", "grad")], self.V)
        self.f3 = water_source(self.geom.x)
        self.tau = config.tau
        self.theta_old: np.ndarray | None = None
        self.mass_c_old: np.ndarray | None = None
        self.u_w: np.ndarray | None = None  # (E, Q, 2)

    # -------------------------------------------------------------- helpers
    def frozen(self, state: SurfactantState) -> _Frozen:
        psi_q = self.V.values(state.psi)
        c_q = self.V.values(state.c)
        return _Frozen(vgm(psi_q, c_q, self.cfg), c_q, self.V.gradients(state.psi) + E_Y,
                       self.V.gradients(state.c))

    def water_flux(self, state: SurfactantState) -> np.ndarray:
        """Elementwise mean of -K grad(psi + y)."""
        f = self.frozen(state)
        w = self.geom.dx
        Kbar = np.sum(w * f.v.K, axis=1) / np.sum(w, axis=1)
        return -Kbar[:, None] * f.g[:, 0, :]  # P1 gradients are elementwise constant

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return x[: self.N], x[self.N:]

    def _rows(self, local: np.ndarray) -> np.ndarray:
        return np.bincount(self.V.elem_dofs.ravel(), weights=local.ravel(), minlength=self.N)

    # -------------------------------------------------------------- problem protocol
    def initial_state(self) -> SurfactantState:
        psi = initial_head(self.V.dof_coords)
        c = np.ones(self.N)
        st = SurfactantState(psi, c)
        st.u_w = self.water_flux(st)
        return st

    def begin_step(self, prev: SurfactantState, t: float, tau: float) -> SurfactantState:
        self.tau = tau
        f = self.frozen(prev)
        self.theta_old = f.v.theta
        self.mass_c_old = f.v.theta * f.c
        u = prev.u_w if prev.u_w is not None else self.water_flux(prev)
        self.u_w = np.broadcast_to(u[:, None, :], f.g.shape).copy()
        state = prev.copy()
        for space, arr in ((self.Vpsi, state.psi), (self.Vc, state.c)):
            g = space.dirichlet_values(t)
            arr[space.dirichlet_mask] = g[space.dirichlet_mask]
        return state

    def end_step(self, state: SurfactantState) -> SurfactantState:
        out = state.copy()
        out.u_w = self.water_flux(state)
        return out

    def residual(self, state: SurfactantState) -> np.ndarray:
        f = self.frozen(state)
        tau, dx = self.tau, self.geom.dx
        phi = self.V.op("val")[..., 0]
        dphi = self.V.op("grad")
        r_psi = np.einsum("eq,eq,eqi->ei", dx, f.v.theta - self.theta_old - tau * self.f3, phi)
        r_psi += tau * np.einsum("eq,eqa,eqia->ei", dx, f.v.K[..., None] * f.g, dphi)
        r_c = np.einsum("eq,eq,eqi->ei", dx, f.v.theta * f.c - self.mass_c_old, phi)
        r_c += tau * np.einsum("eq,eqa,eqia->ei", dx, self.cfg.D * f.gc - self.u_w * f.c[..., None], dphi)
        return np.concatenate([self._rows(r_psi), self._rows(r_c)])

    def matrix(self, scheme: SchemeId, state: SurfactantState, L) -> sp.csr_matrix:
        L1, L2 = L
        f = self.frozen(state)
        tau, V, cfg = self.tau, self.V, self.cfg
        transport = tau * cfg.D * self.K + assemble([Term(-tau * self.u_w, "val", "grad")], V)
        if scheme == L_SCHEME:
            pp = L1 * self.M + assemble([Term(tau * f.v.K, "grad", "grad")], V)
            cc = L2 * self.M + assemble([Term(f.v.theta)], V) + transport
        elif scheme == NEWTON:
            conv = (tau * f.v.dK * f.v.dtheta_dpsi)[..., None] * f.g
            pp = assemble([Term(f.v.dtheta_dpsi), Term(tau * f.v.K, "grad", "grad"), Term(conv, "val", "grad")], V)
            cc = assemble([Term(f.v.dtheta_dc + f.v.theta)], V) + transport
        else:
            raise ValueError(f"unknown scheme {scheme}")
        return sp.bmat([[pp, None], [None, cc]], format="csr")

    def linear_step(self, scheme: SchemeId, state: SurfactantState, L) -> LinearStep:
        A = self.matrix(scheme, state, L)
        r = self.residual(state)
        Ac, b = constrain(A, -r, self.mask, np.zeros(2 * self.N))
        d = solve(factor(Ac), b)
        energy = float(d @ (A @ d))
        work = float(-(r @ d))
        dpsi, dc = self.split(d)
        new = SurfactantState(state.psi + dpsi, np.maximum(state.c + dc, 0.0), state.u_w)
        inc = self.scheme_norm(scheme, self.frozen(state), new.psi - state.psi, new.c - state.c, L)
        return LinearStep(new, inc, energy, work)

    def scheme_norm(self, scheme: SchemeId, f: _Frozen, dpsi: np.ndarray, dc: np.ndarray, L) -> float:
        L1, L2 = L
        if scheme == L_SCHEME:
            w1, w2 = L1, L2 + f.v.theta
        else:
            w1, w2 = f.v.dtheta_dpsi, f.v.dtheta_dc + f.v.theta
        if np.any(np.asarray(w2) < 0):
            raise FloatingPointError("negative concentration weight in the iteration norm")
        geom, tau = self.geom, self.tau
        sq = (quad_norm(geom, self.V.values(dpsi), w1) ** 2
              + quad_norm(geom, self.V.values(dc), w2) ** 2
              + tau * quad_norm(geom, self.V.gradients(dpsi), f.v.K) ** 2
              + tau * self.cfg.D * quad_norm(geom, self.V.gradients(dc)) ** 2)
        return float(np.sqrt(sq))

    def estimators(self, scheme: SchemeId, state: SurfactantState, prev: SurfactantState, L):
        fk, fm = self.frozen(state), self.frozen(prev)
        dpsi, dc = state.psi - prev.psi, state.c - prev.c
        if scheme == L_SCHEME:
            est = {"eta_3to4": eta_L_to_N(self, fk, fm, dpsi, dc, L)}
        else:
            est = {"eta_4to4": eta_N_to_N(self, fk, fm, dpsi, dc)}
        inputs = {
            "inc_fast": self.scheme_norm(NEWTON, fk, dpsi, dc, L),
            "inc_self": self.scheme_norm(scheme, fk, dpsi, dc, L),
        }
        return est, inputs

    def increment_norms(self, state: SurfactantState, prev: SurfactantState):
        def l2(u):
            return float(np.sqrt(max(u @ (self.M @ u), 0.0)))

        incs = {"psi": l2(state.psi - prev.psi), "c": l2(state.c - prev.c)}
        norms = {"psi": l2(state.psi), "c": l2(state.c)}
        return incs, norms

    def residual_norm(self, state: SurfactantState) -> float:
        r = self.residual(state)
        return float(np.linalg.norm(r[~self.mask]))


# ---------------------------------------------------------------------- estimators
def _inv(w: np.ndarray, eps: float) -> np.ndarray:
    # inverse weight restricted to where the weight is positive
    return np.where(w >= eps, 1.0 / np.where(w >= eps, w, 1.0), 0.0)


def _combine(tau: float, eta_psi: float, eta_c: float, eta_D: float, eta_K: float) -> float:
    out = float(np.sqrt(eta_psi ** 2 + eta_c ** 2 + tau * eta_D ** 2 + tau * eta_K ** 2))
    if not np.isfinite(out):
        raise FloatingPointError("non-finite estimator")
    return out


def _eta_D(pb: SurfactantProblem, dc: np.ndarray) -> float:
    D = pb.cfg.D
    flux = D * pb.V.gradients(dc) - pb.u_w * pb.V.values(dc)[..., None]
    return quad_norm(pb.geom, flux, 1.0 / D)


def eta_L_to_N(pb: SurfactantProblem, fk: _Frozen, fm: _Frozen, dpsi: np.ndarray, dc: np.ndarray, L) -> float:
    L1, L2 = L
    eps, geom = pb.cfg.eps_deg, pb.geom
    dth = fk.v.theta - fm.v.theta
    eta_psi = quad_norm(geom, L1 * pb.V.values(dpsi) - dth, _inv(fk.v.dtheta_dpsi, eps))
    eta_c = quad_norm(geom, L2 * pb.V.values(dc) - dth * fk.c, _inv(fk.v.dtheta_dc, eps))
    eta_K = quad_norm(geom, (fk.v.K - fm.v.K)[..., None] * fk.g, _inv(fk.v.K, eps))
    return _combine(pb.tau, eta_psi, eta_c, _eta_D(pb, dc), eta_K)


def eta_N_to_N(pb: SurfactantProblem, fk: _Frozen, fm: _Frozen, dpsi: np.ndarray, dc: np.ndarray) -> float:
    eps, geom = pb.cfg.eps_deg, pb.geom
    dth = fk.v.theta - fm.v.theta
    dpsi_q, dc_q = pb.V.values(dpsi), pb.V.values(dc)
    eta_psi = quad_norm(geom, fm.v.dtheta_dpsi * dpsi_q - dth, _inv(fk.v.dtheta_dpsi, eps))
    eta_c = quad_norm(geom, fm.v.dtheta_dc * dc_q - dth * fk.c, _inv(fk.v.dtheta_dc, eps))
    rem = (fk.v.K - fm.v.K)[..., None] * fk.g - (fm.v.dK * fm.v.dtheta_dpsi * dpsi_q)[..., None] * fm.g
    eta_K = quad_norm(geom, rem, _inv(fk.v.K, eps))
    return _combine(pb.tau, eta_psi, eta_c, _eta_D(pb, dc), eta_K)
