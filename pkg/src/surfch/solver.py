"""Time stepping of the regularised Cahn-Hilliard system on an evolving surface.

Each step moves the mesh, assembles on the new mesh and solves

    M_L' u' + dt K w' = M_L u + dt M_L' f
    M_L' w' = eps A' u' + (1/eps) M_L' [F1d'(u') + F2'(u)]

for the new pair (u', w'), where ``K`` is the stiffness weighted by the
mobility lagged at ``u``.  The chemical potential is eliminated through the
diagonal lumped mass and the remaining equation for ``u'`` is solved by
damped Newton iteration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .assembly import FormSet, NodalField, assemble_forms, assemble_weighted_stiffness
from .linalg import ConvergenceError, SparseMatrix, bicgstab_solve
from .materials import RegularizedMaterial
from .mesh import TriSurfaceMesh, VelocityField, advance_mesh

logger = logging.getLogger(__name__)


class NewtonError(RuntimeError):
    def __init__(self, message: str, history: Sequence[float]):
        super().__init__(f"{message}; residual history {[f'{r:.3e}' for r in history]}")
        self.history = list(history)


class StepError(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step} failed: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-3
    epsilon: float = 0.1
    newton_tol: float = 1e-10
    newton_maxit: int = 30
    linear_tol: float = 1e-11
    linear_maxit: int = 2000

    def __post_init__(self):
        for name in ("dt", "epsilon", "newton_tol", "linear_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.newton_maxit < 1 or self.linear_maxit < 1:
            raise ValueError("iteration limits must be positive")


@dataclass(frozen=True, eq=False)
class SimState:
    u: NodalField
    w: NodalField
    mesh: TriSurfaceMesh
    step: int = 0
    newton_history: tuple = field(default=(), compare=False)

    @property
    def time(self) -> float:
        return self.mesh.time


def initial_state(mesh: TriSurfaceMesh, u0, mat: RegularizedMaterial, cfg: SolverConfig,
                  vel: Optional[VelocityField] = None) -> SimState:
    """State at step 0, with ``w`` computed from ``u0`` on the initial mesh."""
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (mesh.n_vertices,):
        raise ValueError("initial data length does not match mesh")
    forms = assemble_forms(mesh, vel or VelocityField.stationary())
    w = chemical_potential(forms, u0, u0, mat, cfg.epsilon)
    return SimState(NodalField(u0, mesh.time), NodalField(w, mesh.time), mesh, 0)


def chemical_potential(forms: FormSet, u, u_old, mat: RegularizedMaterial, eps: float) -> np.ndarray:
    """Nodal w with the convex part implicit in ``u`` and the concave part at ``u_old``."""
    return eps * (forms.A @ u) / forms.lumped + (mat.dF1(u) + mat.potential.dF2(u_old)) / eps


def mobility_stiffness(mesh: TriSurfaceMesh, u, mat: RegularizedMaterial) -> SparseMatrix:
    return assemble_weighted_stiffness(mesh, u, mat.M)


class StepSystem:
    """Nonlinear residual and Jacobian of one time step in the unknown ``u'``."""

    def __init__(self, forms_old: FormSet, forms_new: FormSet, u_old, mat: RegularizedMaterial,
                 cfg: SolverConfig, forcing=None):
        self.forms = forms_new
        self.mat = mat
        self.cfg = cfg
        self.u_old = np.asarray(u_old, dtype=float)
        self.K = mobility_stiffness(forms_new.mesh, self.u_old, mat)
        self.rhs = forms_old.lumped * self.u_old
        if forcing is not None:
            self.rhs = self.rhs + cfg.dt * forms_new.lumped * np.asarray(forcing, dtype=float)
        # dt K M_L^{-1} eps A is independent of u'
        self._linear = (self.K @ forms_new.A.scale_rows(1.0 / forms_new.lumped)) * (cfg.dt * cfg.epsilon)

    def w(self, u) -> np.ndarray:
        return chemical_potential(self.forms, u, self.u_old, self.mat, self.cfg.epsilon)

    def residual(self, u) -> np.ndarray:
        return self.forms.lumped * u + self.cfg.dt * (self.K @ self.w(u)) - self.rhs

    def jacobian(self, u) -> SparseMatrix:
        d2 = self.mat.d2F1(u) * (self.cfg.dt / self.cfg.epsilon)
        return self._linear + self.K @ SparseMatrix.diagonal_matrix(d2) + SparseMatrix.diagonal_matrix(self.forms.lumped)


def newton_solve(system: StepSystem, u_guess) -> tuple[np.ndarray, list]:
    cfg = system.cfg
    u = np.array(u_guess, dtype=float)
    r = system.residual(u)
    rnorm = np.max(np.abs(r))
    history = [rnorm]
    it = 0
    while rnorm > cfg.newton_tol:
        if it >= cfg.newton_maxit:
            raise NewtonError(f"Newton did not converge in {cfg.newton_maxit} iterations", history)
        J = system.jacobian(u)
        du = bicgstab_solve(J, -r, tol=cfg.linear_tol, maxit=cfg.linear_maxit, diag_precond=True)
        # halve the step (at most 8 times) while the residual grows
        lam = 1.0
        for _ in range(9):
            trial = u + lam * du
            r_trial = system.residual(trial)
            trial_norm = np.max(np.abs(r_trial))
            if trial_norm < rnorm:
                break
            lam *= 0.5
        u, r, rnorm = trial, r_trial, trial_norm
        history.append(rnorm)
        it += 1
        if not np.isfinite(rnorm):
            raise NewtonError("Newton iterate became non-finite", history)
    return u, history


def step(state: SimState, mat: RegularizedMaterial, vel: VelocityField, cfg: SolverConfig,
         forcing=None, forms_old: Optional[FormSet] = None) -> SimState:
    """Advance ``state`` by one time step of length ``cfg.dt``.

    ``forcing`` is an optional nodal source on the new mesh, used for
    manufactured-solution tests.
    """
    if mat.mobility.degenerate and mat.delta <= 0:
        raise ValueError("degenerate mobility requires delta > 0 in the solver")
    if forms_old is None:
        forms_old = assemble_forms(state.mesh, vel)
    mesh_new = advance_mesh(state.mesh, vel, cfg.dt)
    forms_new = assemble_forms(mesh_new, vel)
    system = StepSystem(forms_old, forms_new, state.u, mat, cfg, forcing)
    u_new, history = newton_solve(system, state.u)
    w_new = system.w(u_new)
    t = mesh_new.time
    return SimState(NodalField(u_new, t), NodalField(w_new, t), mesh_new, state.step + 1, tuple(history))


@dataclass
class Trajectory:
    states: list
    records: list


def run(initial: SimState, mat: RegularizedMaterial, vel: VelocityField, cfg: SolverConfig, t_end: float,
        callbacks: Sequence[Callable] = (), diagnostics: bool = True, keep_states: bool = True,
        forcing: Optional[Callable] = None, test_bank=None) -> Trajectory:
    """Step from ``initial`` until ``t_end``.

    Each callback is called as ``cb(state, record)`` after every step (and
    once for the initial state).  ``forcing(mesh)`` may return a nodal source
    for the step ending on ``mesh``.  Errors are re-raised as
    :class:`StepError` carrying the failing step index.
    """
    from .diagnostics import make_record, default_test_bank

    if t_end <= 0:
        raise ValueError("t_end must be positive")
    n_steps = int(np.floor(t_end / cfg.dt + 1e-9))
    if test_bank is None and diagnostics:
        test_bank = default_test_bank
    state = initial
    forms = assemble_forms(state.mesh, vel)
    states = [state]
    records = []
    prev = None
    if diagnostics:
        rec = make_record(state, forms, mat, vel, cfg, prev_state=None, test_bank=test_bank)
        records.append(rec)
        for cb in callbacks:
            cb(state, rec)
    for n in range(n_steps):
        try:
            f = None
            if forcing is not None:
                f = forcing(advance_mesh(state.mesh, vel, cfg.dt))
            new = step(state, mat, vel, cfg, forcing=f, forms_old=forms)
        except Exception as exc:  # noqa: BLE001 - re-raised with step context
            raise StepError(n + 1, exc) from exc
        prev, prev_forms = state, forms
        state = new
        forms = assemble_forms(state.mesh, vel)
        logger.debug("step %d t=%.6g newton=%d", state.step, state.time, len(state.newton_history) - 1)
        if keep_states:
            states.append(state)
        if diagnostics:
            rec = make_record(state, forms, mat, vel, cfg, prev_state=prev, prev_forms=prev_forms,
                              test_bank=test_bank)
            records.append(rec)
            for cb in callbacks:
                cb(state, rec)
        elif callbacks:
            for cb in callbacks:
                cb(state, None)
    if not keep_states:
        states = [initial, state]
    return Trajectory(states, records)
