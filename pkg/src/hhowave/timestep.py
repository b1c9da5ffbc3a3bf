"""Runge-Kutta time integration of the semi-discrete block system.

Explicit schemes eliminate the face unknowns per stage: the face-face
stiffness is block-diagonal per face, so each stage performs one facewise
solve followed by one cellwise mass solve. Implicit (singly diagonal) schemes
condense the cell unknowns instead: the per-cell matrices M + a* dt K_TT are
factored once, a face-coupled Schur complement is assembled and factored
once, and both factorizations are reused across stages and steps while
(a*, dt) is unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class TimestepError(Exception):
    pass


class InstabilityError(TimestepError):
    """Non-finite state detected during time integration."""

    def __init__(self, step_index, message=None):
        self.step_index = step_index
        super().__init__(message or f"instability detected at step {step_index}")


class SolverError(TimestepError):
    pass


# ---------------------------------------------------------------------------
# Butcher tableaux

@dataclass(frozen=True)
class ButcherTableau:
    """Runge-Kutta coefficients with the final-combination row appended.

    `a` has shape (s+1, s): rows 1..s are the stage rows, row s+1 holds the
    weights b (the update is treated as one extra explicit stage).
    """

    kind: str
    s: int
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    order: int
    a_star: float | None = None

    @property
    def explicit(self) -> bool:
        return self.a_star is None

    def __post_init__(self):
        if abs(self.b.sum() - 1.0) > 1e-13:
            raise TimestepError("tableau weights must sum to 1")
        rowsum = self.a[:self.s].sum(axis=1)
        diag = 0.0 if self.a_star is None else self.a_star
        if np.max(np.abs(rowsum - self.c)) > 1e-13:
            raise TimestepError("tableau row sums must equal the nodes c")
        for i in range(self.s):
            if self.a_star is not None and abs(self.a[i, i] - diag) > 1e-14:
                raise TimestepError("singly diagonal tableau requires a constant diagonal")


_SQRT3 = math.sqrt(3.0)
_NU34 = math.cos(math.pi / 18.0) / _SQRT3 + 0.5
_XI34 = 1.0 / (6.0 * (2.0 * _NU34 - 1.0) ** 2)
_A23 = 0.5 + _SQRT3 / 6.0


def _full(kind, s, rows, b, c, order, a_star=None):
    a = np.zeros((s + 1, s))
    for i, row in enumerate(rows):
        a[i, :len(row)] = row
    a[s, :] = b
    return ButcherTableau(kind=kind, s=s, a=a, b=np.asarray(b, dtype=float),
                          c=np.asarray(c, dtype=float), order=order, a_star=a_star)


_TABLEAUX = {
    "ERK2": _full("ERK2", 2, [[0.0], [0.5, 0.0]], [0.0, 1.0], [0.0, 0.5], 2),
    "ERK3": _full("ERK3", 3, [[0.0], [0.5, 0.0], [-1.0, 2.0, 0.0]],
                  [1 / 6, 2 / 3, 1 / 6], [0.0, 0.5, 1.0], 3),
    "ERK4": _full("ERK4", 4, [[0.0], [0.5, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 1.0, 0.0]],
                  [1 / 6, 1 / 3, 1 / 3, 1 / 6], [0.0, 0.5, 0.5, 1.0], 4),
    # two-stage, third-order, A-stable singly diagonal scheme
    "SDIRK23": _full("SDIRK23", 2, [[_A23], [1.0 - 2.0 * _A23, _A23]],
                     [0.5, 0.5], [_A23, 1.0 - _A23], 3, a_star=_A23),
    # two-stage, second-order variant (diagonal 1/4)
    "SDIRK22": _full("SDIRK22", 2, [[0.25], [0.5, 0.25]],
                     [0.5, 0.5], [0.25, 0.75], 2, a_star=0.25),
    # three-stage, fourth-order scheme with nu = cos(pi/18)/sqrt(3) + 1/2
    "SDIRK34": _full("SDIRK34", 3,
                     [[_NU34], [0.5 - _NU34, _NU34], [2.0 * _NU34, 1.0 - 4.0 * _NU34, _NU34]],
                     [_XI34, 1.0 - 2.0 * _XI34, _XI34],
                     [_NU34, 0.5, 1.0 - _NU34], 4, a_star=_NU34),
}


def tableau(kind: str) -> ButcherTableau:
    """Coefficients of a named scheme: ERK2/ERK3/ERK4, SDIRK23/SDIRK34 (SDIRK22)."""
    try:
        return _TABLEAUX[kind.upper()]
    except KeyError:
        raise TimestepError(f"unknown tableau kind {kind!r}") from None


# ---------------------------------------------------------------------------
# linear solvers

@dataclass(frozen=True)
class SolverConfig:
    kind: str = "direct-lu"      # 'direct-lu' | 'bicgstab-ilu0'
    tol: float = 1e-10
    maxiter: int = 2000

    def __post_init__(self):
        if self.kind not in ("direct-lu", "bicgstab-ilu0"):
            raise SolverError(f"unknown solver kind {self.kind!r}")
        if self.tol <= 0:
            raise SolverError("solver tolerance must be positive")


class FactorizedOperator:
    """Reusable factorization (direct LU or ILU-preconditioned BiCGStab)."""

    def __init__(self, matrix: sp.spmatrix, config: SolverConfig):
        self.config = config
        self.n = matrix.shape[0]
        matrix = matrix.tocsc()
        self._matrix = matrix
        if self.n == 0:
            self._lu = None
            return
        try:
            if config.kind == "direct-lu":
                self._lu = spla.splu(matrix)
            else:
                self._ilu = spla.spilu(matrix, drop_tol=1e-12, fill_factor=1.0)
                self._lu = None
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.n == 0:
            return np.zeros(0)
        if self.config.kind == "direct-lu":
            x = self._lu.solve(rhs)
            nrm = np.linalg.norm(rhs)
            if nrm > 0:
                res = np.linalg.norm(self._matrix @ x - rhs) / nrm
                if not np.isfinite(res) or res > 1e-8:
                    raise SolverError(f"direct solve residual {res:.2e}; "
                                      "operator singular or severely ill-conditioned")
            return x
        precond = spla.LinearOperator((self.n, self.n), matvec=self._ilu.solve)
        x, info = spla.bicgstab(self._matrix, rhs, rtol=self.config.tol, atol=0.0,
                                maxiter=self.config.maxiter, M=precond)
        if info > 0:
            raise SolverError(f"BiCGStab did not converge within {self.config.maxiter} "
                              "iterations")
        if info < 0:
            raise SolverError("BiCGStab breakdown")
        return x


def solve_linear(config: SolverConfig, operator, rhs: np.ndarray) -> np.ndarray:
    """One-off linear solve honoring the solver configuration."""
    matrix = sp.csc_matrix(operator)
    if matrix.shape[0] != matrix.shape[1]:
        raise SolverError("operator must be square")
    return FactorizedOperator(matrix, config).solve(np.asarray(rhs, dtype=float))


# ---------------------------------------------------------------------------
# block-diagonal helpers

def _block_diag_inverse(blocks, offsets, shape, what):
    """Sparse block-diagonal matrix holding the inverse of each block."""
    rows, cols, vals = [], [], []
    for block, off in zip(blocks, offsets):
        n = block.shape[0]
        if n == 0:
            continue
        try:
            inv = np.linalg.inv(block)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular {what} block at offset {off}") from exc
        r, c = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        rows.append((r + off).ravel())
        cols.append((c + off).ravel())
        vals.append(inv.ravel())
    if not vals:
        return sp.csr_matrix(shape)
    return sp.coo_matrix((np.concatenate(vals),
                          (np.concatenate(rows), np.concatenate(cols))),
                         shape=shape).tocsr()


def _mass_inverse(system):
    offs = [int(system.layout.cell_offset[ci]) for ci in range(system.mesh.n_cells)]
    n = system.n_cell_dofs
    return _block_diag_inverse(system.cell_mass_blocks, offs, (n, n), "cell mass")


def _face_inverse(system):
    layout = system.layout
    faces = sorted(system.face_kff_blocks)
    blocks = [system.face_kff_blocks[fi] for fi in faces]
    offs = [int(layout.face_offset[fi]) for fi in faces]
    n = system.n_face_dofs
    return _block_diag_inverse(blocks, offs, (n, n), "face stiffness")


def _check_finite(u, step_index):
    if not np.all(np.isfinite(u)):
        raise InstabilityError(step_index)


def _forcing_at(forcing, t):
    return None if forcing is None else forcing(t)


# ---------------------------------------------------------------------------
# explicit stepper (face elimination)

class ExplicitStepper:
    """Face-eliminated explicit Runge-Kutta integrator.

    Each stage solves the block-diagonal face system for the face unknowns
    induced by the current cell state, evaluates the cell stage derivative,
    and cellwise mass-solves the next stage state.
    """

    def __init__(self, system, tab: ButcherTableau):
        if not tab.explicit:
            raise TimestepError(f"{tab.kind} is not an explicit tableau")
        self.system = system
        self.tableau = tab
        self.minv = _mass_inverse(system)
        self.kff_inv = _face_inverse(system)  # raises if a face block is singular

    def face_values(self, u_t: np.ndarray) -> np.ndarray:
        """Face unknowns induced by cell unknowns (facewise elimination)."""
        if self.system.n_face_dofs == 0:
            return np.zeros(0)
        return -(self.kff_inv @ (self.system.k_ft @ u_t))

    def step(self, u_t: np.ndarray, t: float, dt: float, forcing=None,
             step_index: int = 0) -> np.ndarray:
        sysm = self.system
        tab = self.tableau
        stage_r = []
        u_i = u_t
        for i in range(tab.s + 1):
            if i > 0:
                acc = None
                for j in range(i):
                    aij = tab.a[i, j] if i <= tab.s else tab.b[j]
                    if aij == 0.0:
                        continue
                    acc = aij * stage_r[j] if acc is None else acc + aij * stage_r[j]
                u_i = u_t if acc is None else u_t + dt * (self.minv @ acc)
            if i == tab.s:
                break
            u_f = self.face_values(u_i)
            r = -(sysm.k_tt @ u_i)
            if sysm.n_face_dofs:
                r -= sysm.k_tf @ u_f
            f = _forcing_at(forcing, t + tab.c[i] * dt)
            if f is not None:
                r = r + f
            stage_r.append(r)
        _check_finite(u_i, step_index)
        return u_i


# ---------------------------------------------------------------------------
# implicit stepper (cell condensation)

class CondensedFactorization:
    """Per-cell factorizations of M + a* dt K_TT plus the face Schur complement.

    Valid for one (a*, dt) pair; reused across stages and steps.
    """

    def __init__(self, system, a_star: float, dt: float, solver: SolverConfig):
        if dt <= 0:
            raise TimestepError("time step must be positive")
        self.system = system
        self.a_star = float(a_star)
        self.dt = float(dt)
        self.solver = solver
        ad = self.a_star * self.dt
        layout = system.layout
        blocks = [m + ad * k for m, k in zip(system.cell_mass_blocks,
                                             system.cell_ktt_blocks)]
        offs = [int(layout.cell_offset[ci]) for ci in range(system.mesh.n_cells)]
        n_t = system.n_cell_dofs
        self.a_inv = _block_diag_inverse(blocks, offs, (n_t, n_t), "condensed cell")
        if system.n_face_dofs:
            schur = ad * (system.k_ff - ad * (system.k_ft @ (self.a_inv @ system.k_tf)))
            self.schur = schur.tocsr()
            self.schur_solver = FactorizedOperator(self.schur, solver)
        else:
            self.schur = sp.csr_matrix((0, 0))
            self.schur_solver = None

    def matches(self, a_star: float, dt: float) -> bool:
        return (abs(self.a_star - a_star) <= 1e-15 * max(1.0, abs(a_star))
                and abs(self.dt - dt) <= 1e-15 * max(1.0, dt))

    def stage_solve(self, b_t: np.ndarray, b_f: np.ndarray):
        """Solve one implicit stage: returns (cell unknowns, face unknowns)."""
        ad = self.a_star * self.dt
        z = self.a_inv @ b_t
        if self.system.n_face_dofs:
            rhs_f = b_f - ad * (self.system.k_ft @ z)
            u_f = self.schur_solver.solve(rhs_f)
            u_t = self.a_inv @ (b_t - ad * (self.system.k_tf @ u_f))
        else:
            u_f = np.zeros(0)
            u_t = z
        return u_t, u_f


def build_condensed(system, a_star: float, dt: float,
                    solver: SolverConfig | None = None) -> CondensedFactorization:
    return CondensedFactorization(system, a_star, dt, solver or SolverConfig())


class ImplicitStepper:
    """Cell-condensed singly diagonal implicit Runge-Kutta integrator."""

    def __init__(self, system, tab: ButcherTableau, dt: float,
                 solver: SolverConfig | None = None,
                 factorization: CondensedFactorization | None = None):
        if tab.explicit:
            raise TimestepError(f"{tab.kind} is not a singly diagonal implicit tableau")
        self.system = system
        self.tableau = tab
        self.solver = solver or SolverConfig()
        self.dt = float(dt)
        if factorization is None:
            factorization = build_condensed(system, tab.a_star, dt, self.solver)
        if not factorization.matches(tab.a_star, dt):
            raise TimestepError("stale condensed factorization: (a*, dt) mismatch")
        self.fact = factorization
        self.minv = _mass_inverse(system)
        self._kff_inv = None

    def face_values(self, u_t: np.ndarray) -> np.ndarray:
        """Face unknowns consistent with the semi-discrete face equations."""
        sysm = self.system
        if sysm.n_face_dofs == 0:
            return np.zeros(0)
        if self._kff_inv is None:
            self._kff_inv = _face_inverse(sysm)
        return -(self._kff_inv @ (sysm.k_ft @ u_t))

    def step(self, u_t: np.ndarray, t: float, dt: float, forcing=None,
             step_index: int = 0) -> np.ndarray:
        if abs(dt - self.dt) > 1e-15 * max(1.0, self.dt):
            raise TimestepError("stale condensed factorization: dt changed; rebuild")
        sysm = self.system
        tab = self.tableau
        ad = tab.a_star * dt
        m_u = sysm.mass @ u_t
        stage_r = []     # cell residuals F - K_TT u - K_TF u_f, per stage
        stage_w = []     # face residuals K_FT u + K_FF u_f, per stage
        forcings = []
        for i in range(tab.s):
            f_i = _forcing_at(forcing, t + tab.c[i] * dt)
            forcings.append(f_i)
            b_t = m_u.copy()
            if f_i is not None:
                b_t += ad * f_i
            b_f = np.zeros(sysm.n_face_dofs)
            for j in range(i):
                aij = tab.a[i, j]
                if aij == 0.0:
                    continue
                b_t += dt * aij * stage_r[j]
                b_f -= dt * aij * stage_w[j]
            u_i, u_fi = self.fact.stage_solve(b_t, b_f)
            r = -(sysm.k_tt @ u_i)
            w = sysm.k_ft @ u_i
            if sysm.n_face_dofs:
                r -= sysm.k_tf @ u_fi
                w = w + sysm.k_ff @ u_fi
            if f_i is not None:
                r = r + f_i
            stage_r.append(r)
            stage_w.append(w)
        acc = None
        for j in range(tab.s):
            bj = tab.b[j]
            if bj == 0.0:
                continue
            acc = bj * stage_r[j] if acc is None else acc + bj * stage_r[j]
        u_new = u_t if acc is None else u_t + dt * (self.minv @ acc)
        _check_finite(u_new, step_index)
        return u_new


# ---------------------------------------------------------------------------
# functional entry points

def erk_step(u_t, system, dt, tab: ButcherTableau, t=0.0, forcing=None,
             stepper: ExplicitStepper | None = None):
    """One explicit step; builds a throwaway stepper unless one is supplied."""
    stepper = stepper or ExplicitStepper(system, tab)
    return stepper.step(np.asarray(u_t, dtype=float), t, dt, forcing)


def sdirk_step(u_t, system, dt, tab: ButcherTableau,
               fact: CondensedFactorization, solver: SolverConfig | None = None,
               t=0.0, forcing=None):
    """One implicit step using a prebuilt condensed factorization."""
    stepper = ImplicitStepper(system, tab, dt, solver, factorization=fact)
    return stepper.step(np.asarray(u_t, dtype=float), t, dt, forcing)


def run_time_loop(stepper, u0, dt, n_steps, t0=0.0, forcing=None, observer=None):
    """Advance `n_steps` with constant dt; calls observer(step, t, u) after each."""
    u = np.asarray(u0, dtype=float)
    t = t0
    if observer is not None:
        observer(0, t, u)
    for n in range(1, n_steps + 1):
        u = stepper.step(u, t, dt, forcing, step_index=n)
        t = t0 + n * dt
        if observer is not None:
            observer(n, t, u)
    return u
