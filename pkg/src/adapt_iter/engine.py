"""Generic adaptive iteration loop.

A problem supplies one linearized step (``B(delta, .) = -R(a^k)(.)``) for each
of its schemes plus the a posteriori estimators computed from the last two
iterates.  A controller inspects the estimators after every iteration and may
switch scheme, retune the stabilization parameter or change the time step.
The loop records everything in :class:`IterationRecord` objects.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Any, Protocol

import numpy as np

from .sparse_solve import SingularMatrixError


class SchemeId(str, enum.Enum):
    TWOPHASE_L = "TWOPHASE_L"
    TWOPHASE_NEWTON = "TWOPHASE_NEWTON"
    SURF_L = "SURF_L"
    SURF_NEWTON = "SURF_NEWTON"
    BIOT_FIXED_STRESS = "BIOT_FIXED_STRESS"


class Action(str, enum.Enum):
    NONE = "NONE"
    SWITCH_TO = "SWITCH_TO"
    L_UP = "L_UP"
    L_DOWN = "L_DOWN"
    TAU_HALVE = "TAU_HALVE"
    TAU_DOUBLE = "TAU_DOUBLE"
    STOP_CONVERGED = "STOP_CONVERGED"
    STOP_DIVERGED = "STOP_DIVERGED"


@dataclass(frozen=True)
class IterationRecord:
    step: int
    time: float
    k: int
    scheme: SchemeId
    L: Any
    tau: float
    eta_inc: float
    estimators: dict[str, float] = field(default_factory=dict)
    eff_index: float | None = None
    actions: tuple[Action, ...] = (Action.NONE,)
    inputs: dict[str, float] = field(default_factory=dict)

    @property
    def action(self) -> str:
        return ";".join(a.value for a in self.actions)


@dataclass(frozen=True)
class StoppingRule:
    """Per-field thresholds on the L2 norm of the increment.

    A relative threshold compares against the L2 norm of the new iterate.
    ``min_iter`` guards splittings whose first iterate can leave a field
    unchanged (the comparison with the initial guess is then vacuous).
    """

    absolute: dict[str, float] = field(default_factory=dict)
    relative: dict[str, float] = field(default_factory=dict)
    max_iter: int = 200
    min_iter: int = 1

    def __post_init__(self):
        if any(v <= 0 for v in (*self.absolute.values(), *self.relative.values())):
            raise ValueError("stopping thresholds must be positive")
        if not 1 <= self.min_iter <= self.max_iter:
            raise ValueError("need 1 <= min_iter <= max_iter")


def check_stopping(increments: dict[str, float], norms: dict[str, float], rule: StoppingRule) -> bool:
    """True when every field meets its threshold; ``increments``/``norms`` are L2 norms."""
    for name, tol in rule.absolute.items():
        if not increments[name] <= tol:
            return False
    for name, tol in rule.relative.items():
        if not increments[name] <= tol * norms[name]:
            return False
    return True


def effectivity_index(prev_estimator: float | None, eta_inc_now: float) -> float | None:
    if prev_estimator is None or not eta_inc_now > 0:
        return None
    return prev_estimator / eta_inc_now


# ---------------------------------------------------------------------- problem protocol
@dataclass
class LinearStep:
    """Outcome of one linear solve from iterate k-1 to k."""

    state: Any
    eta_inc: float  # increment in the scheme's own norm, weights at iterate k-1
    energy: float  # B(delta, delta)
    work: float  # -R(a^{k-1})(delta)


class Problem(Protocol):
    fields: tuple[str, ...]

    def initial_state(self) -> Any: ...

    def begin_step(self, prev: Any, t: float, tau: float) -> Any:
        """Prepare a time step; returns the initial iterate (Dirichlet data applied)."""

    def linear_step(self, scheme: SchemeId, state: Any, L: Any) -> LinearStep: ...

    def estimators(self, scheme: SchemeId, state: Any, prev: Any, L: Any) -> tuple[dict[str, float], dict[str, float]]:
        """(estimators, controller inputs) for iterate ``state`` produced from ``prev`` by ``scheme``."""

    def increment_norms(self, state: Any, prev: Any) -> tuple[dict[str, float], dict[str, float]]:
        """L2 norms of the per-field increments and of the new iterate."""

    def end_step(self, state: Any) -> Any:
        """Post-process a converged state (e.g. store fluxes for the next step)."""


# Estimator predicting the increment of an iteration of ``scheme`` that follows
# an iteration of ``prev_scheme``; used for effectivity indices.
ESTIMATOR_FOR: dict[tuple[SchemeId, SchemeId], str] = {
    (SchemeId.TWOPHASE_L, SchemeId.TWOPHASE_NEWTON): "eta_1to2",
    (SchemeId.TWOPHASE_NEWTON, SchemeId.TWOPHASE_NEWTON): "eta_2to2",
    (SchemeId.TWOPHASE_L, SchemeId.TWOPHASE_L): "eta_1to1",
    (SchemeId.SURF_L, SchemeId.SURF_NEWTON): "eta_3to4",
    (SchemeId.SURF_NEWTON, SchemeId.SURF_NEWTON): "eta_4to4",
    (SchemeId.BIOT_FIXED_STRESS, SchemeId.BIOT_FIXED_STRESS): "eta_5to5",
}


# ---------------------------------------------------------------------- controllers
@dataclass
class Decision:
    actions: list[Action] = field(default_factory=list)
    restart: bool = False  # abandon the time step (halve tau)


class Controller:
    """Fixed scheme and parameter; base class for the adaptive controllers."""

    def __init__(self, scheme: SchemeId, L: Any = None):
        self.scheme = scheme
        self.L = L

    def start_step(self) -> None:
        pass

    def after_iteration(self, k: int, est: dict[str, float], inputs: dict[str, float],
                        eff: float | None) -> Decision:
        return Decision()

    def matching_estimator(self, prev_scheme: SchemeId, scheme: SchemeId) -> str | None:
        return ESTIMATOR_FOR.get((prev_scheme, scheme))


class SwitchingController(Controller):
    """Robust scheme until the estimator predicts the fast scheme contracts, and back.

    Inputs ``inc_fast`` hold the increment measured in the fast scheme's norm.
    The active scheme carries over between time steps.
    """

    def __init__(self, robust: SchemeId, fast: SchemeId, L: Any, C_tol: float, est_robust_to_fast: str,
                 est_fast_to_fast: str):
        super().__init__(robust, L)
        if C_tol < 1:
            raise ValueError("C_tol must be >= 1")
        self.robust, self.fast = robust, fast
        self.C_tol = C_tol
        self.est_rf, self.est_ff = est_robust_to_fast, est_fast_to_fast

    def after_iteration(self, k, est, inputs, eff):
        d = Decision()
        inc = inputs.get("inc_fast")
        if inc is None:
            return d
        if self.scheme == self.robust and self.est_rf in est and est[self.est_rf] <= self.C_tol * inc:
            self.scheme = self.fast
            d.actions.append(Action.SWITCH_TO)
        elif self.scheme == self.fast and self.est_ff in est and est[self.est_ff] > inc:
            self.scheme = self.robust
            d.actions.append(Action.SWITCH_TO)
        return d


class AdaptiveLController(Controller):
    """Shrink L by ``down`` when the self-estimator sits in [band*inc, inc], grow by ``up`` above inc."""

    def __init__(self, scheme: SchemeId, L: float, estimator: str, band: float = 0.8, down: float = 0.8,
                 up: float = math.sqrt(2.0)):
        super().__init__(scheme, L)
        self.est = estimator
        self.band, self.down, self.up = band, down, up

    def after_iteration(self, k, est, inputs, eff):
        d = Decision()
        inc = inputs.get("inc_self")
        if inc is None or self.est not in est:
            return d
        eta = est[self.est]
        if inc >= eta >= self.band * inc:
            self.L = self.down * self.L
            d.actions.append(Action.L_DOWN)
        elif eta > inc:
            self.L = self.up * self.L
            d.actions.append(Action.L_UP)
        return d


class TimestepController(Controller):
    """Halve tau when the self-estimator exceeds ``threshold``; double after fast steps."""

    def __init__(self, scheme: SchemeId, L: Any, estimator: str, n_fast: int = 5, threshold: float = 1.0,
                 tau_min: float = 1e-5):
        super().__init__(scheme, L)
        self.est = estimator
        self.n_fast = n_fast
        self.threshold = threshold
        self.tau_min = tau_min

    def after_iteration(self, k, est, inputs, eff):
        d = Decision()
        if self.est in est and est[self.est] > self.threshold:
            d.actions.append(Action.TAU_HALVE)
            d.restart = True
        return d

    def next_tau(self, tau: float, last_iterations: int | None) -> tuple[float, bool]:
        if last_iterations is not None and last_iterations < self.n_fast:
            return 2.0 * tau, True
        return tau, False


class AdaptiveFixedStressController(Controller):
    """Alternating increase/decrease of the fixed-stress parameter.

    In a time step that starts in increase mode, L grows to min(L_max, C_inc L)
    each time the estimator is at least ``ratio`` times the increment while the
    effectivity index is below ``eff_cap``; otherwise L shrinks towards L_min.
    """

    def __init__(self, scheme: SchemeId, L: float, L_min: float, L_max: float, C_inc: float, ratio: float = 10.0,
                 eff_cap: float = 100.0, decrease: float = 0.9, estimator: str = "eta_5to5"):
        super().__init__(scheme, L)
        self.L_min, self.L_max = L_min, L_max
        self.C_inc = C_inc
        self.ratio, self.eff_cap, self.decrease = ratio, eff_cap, decrease
        self.est = estimator
        self.has_increased = False
        self.increase = True

    def start_step(self):
        self.increase = not self.has_increased

    def after_iteration(self, k, est, inputs, eff):
        d = Decision()
        inc = inputs.get("inc_self")
        if inc is None or self.est not in est or eff is None:
            return d
        if est[self.est] >= self.ratio * inc and eff < self.eff_cap:
            if self.increase:
                new = min(self.L_max, self.C_inc * self.L)
                self.has_increased = True
            else:
                new = max(self.L_min, self.decrease * self.L)
                self.has_increased = False
            if new > self.L:
                d.actions.append(Action.L_UP)
            elif new < self.L:
                d.actions.append(Action.L_DOWN)
            self.L = new
        return d


# ---------------------------------------------------------------------- loop
@dataclass
class StepResult:
    state: Any
    records: list[IterationRecord]
    converged: bool
    restart: bool = False  # abandoned by the controller (tau halving)

    @property
    def iterations(self) -> int:
        return len(self.records)


class StepIdentityError(AssertionError):
    pass


def run_time_step(problem: Problem, controller: Controller, stopping: StoppingRule, state_prev: Any, t: float,
                  tau: float, step: int = 1, check_identity: bool = True, blowup: float = 1e12) -> StepResult:
    """Iterate one time step until the stopping rule holds, max_iter, or a restart request."""
    controller.start_step()
    state = problem.begin_step(state_prev, t, tau)
    records: list[IterationRecord] = []
    prev_est: dict[str, float] | None = None
    prev_scheme: SchemeId | None = None
    prev_state = None
    for k in range(1, stopping.max_iter + 1):
        scheme, L = controller.scheme, controller.L
        L_rec = tuple(L) if isinstance(L, (list, tuple)) else L
        try:
            ls = problem.linear_step(scheme, state, L)
        except (SingularMatrixError, FloatingPointError, ArithmeticError):
            records.append(IterationRecord(step, t, k, scheme, L_rec, tau, math.nan,
                                           actions=(Action.STOP_DIVERGED,)))
            return StepResult(state, records, False)
        if check_identity and np.isfinite(ls.energy) and np.isfinite(ls.work):
            scale = max(abs(ls.energy), abs(ls.work), 1e-300)
            if abs(ls.energy - ls.work) > 1e-8 * scale + 1e-14 * max(ls.eta_inc ** 2, 0.0):
                raise StepIdentityError(f"B(d,d)={ls.energy!r} but -R(d)={ls.work!r} at step {step}, k={k}")
        new_state = ls.state
        incs, norms = problem.increment_norms(new_state, state)
        finite = np.isfinite(ls.eta_inc) and all(np.isfinite(v) for v in incs.values())
        if not finite or ls.eta_inc > blowup:
            records.append(IterationRecord(step, t, k, scheme, L_rec, tau, ls.eta_inc,
                                           actions=(Action.STOP_DIVERGED,)))
            return StepResult(new_state, records, False)

        eff = None
        if prev_est is not None and prev_scheme is not None:
            name = controller.matching_estimator(prev_scheme, scheme)
            if name is not None and name in prev_est:
                eff = effectivity_index(prev_est[name], ls.eta_inc)

        est, inputs = problem.estimators(scheme, new_state, state, L)
        inputs = dict(inputs)

        if k >= stopping.min_iter and check_stopping(incs, norms, stopping):
            records.append(IterationRecord(step, t, k, scheme, L_rec, tau, ls.eta_inc, est, eff,
                                           (Action.STOP_CONVERGED,), inputs))
            return StepResult(problem.end_step(new_state), records, True)

        decision = controller.after_iteration(k, est, inputs, eff)
        actions = tuple(decision.actions) or (Action.NONE,)
        if k == stopping.max_iter:
            actions = tuple(a for a in actions if a != Action.NONE) + (Action.STOP_DIVERGED,)
        records.append(IterationRecord(step, t, k, scheme, L_rec, tau, ls.eta_inc, est, eff, actions, inputs))
        if decision.restart:
            return StepResult(state_prev, records, False, restart=True)
        prev_est, prev_scheme, prev_state = est, scheme, state
        state = new_state
    return StepResult(state, records, False)


@dataclass
class RunResult:
    state: Any
    records: list[IterationRecord]
    converged: bool
    steps: int  # accepted time steps
    failed_steps: int
    times: list[float]
    message: str = ""

    @property
    def total_iterations(self) -> int:
        return len(self.records)

    @property
    def average_iterations(self) -> float:
        return self.total_iterations / self.steps if self.steps else math.nan

    def iterations_by_scheme(self) -> dict[SchemeId, int]:
        out: dict[SchemeId, int] = {}
        for r in self.records:
            out[r.scheme] = out.get(r.scheme, 0) + 1
        return out


def run(problem: Problem, controller: Controller, stopping: StoppingRule, T: float, tau: float,
        adaptive_tau: bool = False, tau_min: float = 1e-5, time_tol: float = 1e-12,
        max_steps: int = 100000) -> RunResult:
    """Integrate from t=0 to T with backward Euler steps of size tau.

    With ``adaptive_tau`` the controller must be a :class:`TimestepController`;
    a restart request halves tau and repeats the step from the last accepted
    state, and a step converging in fewer than ``n_fast`` iterations doubles
    tau for the next one.  Steps never overshoot T.
    """
    state = problem.initial_state()
    t = 0.0
    records: list[IterationRecord] = []
    times: list[float] = []
    steps = failed = 0
    last_iters: int | None = None
    step_no = 0
    while t < T - time_tol * max(T, 1.0):
        if step_no >= max_steps:
            return RunResult(state, records, False, steps, failed, times, "too many steps")
        doubled = False
        if adaptive_tau:
            tau, doubled = controller.next_tau(tau, last_iters)
        dt = min(tau, T - t)
        step_no += 1
        res = run_time_step(problem, controller, stopping, state, t + dt, dt, step=step_no)
        if doubled and res.records:
            first = res.records[0]
            res.records[0] = replace(first, actions=(Action.TAU_DOUBLE,) + tuple(
                a for a in first.actions if a != Action.NONE))
        records.extend(res.records)
        if res.converged:
            state = res.state
            t = t + dt
            times.append(t)
            steps += 1
            last_iters = res.iterations
            continue
        failed += 1
        if adaptive_tau:
            if not res.restart:
                # divergence without a prediction: treat like a predicted failure
                last = records[-1]
                records[-1] = replace(last, actions=tuple(a for a in last.actions if a != Action.NONE)
                                      + (Action.TAU_HALVE,))
            tau = dt / 2.0
            last_iters = None
            if tau < tau_min:
                return RunResult(state, records, False, steps, failed, times, f"tau below {tau_min:g}")
            continue
        return RunResult(state, records, False, steps, failed, times, f"diverged at t={t + dt:.6g}")
    return RunResult(state, records, True, steps, failed, times)
