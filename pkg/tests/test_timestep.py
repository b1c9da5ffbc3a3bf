"""Tableaux, linear solvers, and static-condensation equivalence tests."""

import math

import numpy as np
import pytest
import scipy.sparse as sp

from hhowave import (ExplicitStepper, ImplicitStepper, InstabilityError,
                     MeshGenSpec, SolverConfig, StabilizationConfig, assemble,
                     build_condensed, builtin_materials, generate, solve_linear,
                     tableau)
from hhowave.scenarios import (ManufacturedCase, manufactured_forcing,
                               manufactured_initial_state)
from hhowave.timestep import SolverError, TimestepError, _block_diag_inverse

BILAYER = dict(fluid_rect=(0.0, 0.0, 1.0, 1.0), solid_rect=(-1.0, 0.0, 0.0, 1.0))
ACADEMIC = builtin_materials("academic")


def make_system(k=1, level=1, mode="explicit"):
    mesh = generate(MeshGenSpec("cartesian", level, **BILAYER))
    config = (StabilizationConfig.explicit() if mode == "explicit"
              else StabilizationConfig.implicit())
    return assemble(mesh, ACADEMIC, config, k=k)


def make_case_state(system, omega=2.0, theta=math.sqrt(2.0)):
    case = ManufacturedCase(omega, theta, ACADEMIC)
    u0 = manufactured_initial_state(system, case)
    forcing = manufactured_forcing(system, case)
    return case, u0, forcing


# ---------------------------------------------------------------------------
# dense reference steppers (independent of the blockwise elimination paths)

def dense_erk_step(system, tab, u_t, t, dt, forcing=None):
    mass = system.mass.toarray()
    k_tt = system.k_tt.toarray()
    k_tf = system.k_tf.toarray()
    k_ft = system.k_ft.toarray()
    k_ff = system.k_ff.toarray()
    n_f = system.n_face_dofs
    stage_r = []
    u = u_t.copy()
    for i in range(tab.s + 1):
        if i > 0:
            acc = sum(tab.a[i, j] * stage_r[j] for j in range(i))
            u = u_t + dt * np.linalg.solve(mass, acc)
        if i == tab.s:
            break
        u_f = np.linalg.solve(k_ff, -(k_ft @ u)) if n_f else np.zeros(0)
        r = -(k_tt @ u) - (k_tf @ u_f if n_f else 0.0)
        f = forcing(t + tab.c[i] * dt) if forcing is not None else None
        if f is not None:
            r = r + f
        stage_r.append(r)
    return u


def dense_sdirk_step(system, tab, u_t, t, dt, forcing=None):
    mass = system.mass.toarray()
    k_tt = system.k_tt.toarray()
    k_tf = system.k_tf.toarray()
    k_ft = system.k_ft.toarray()
    k_ff = system.k_ff.toarray()
    n_t, n_f = system.n_cell_dofs, system.n_face_dofs
    ad = tab.a_star * dt
    big = np.block([[mass + ad * k_tt, ad * k_tf],
                    [ad * k_ft, ad * k_ff]]) if n_f else mass + ad * k_tt
    stage_r, stage_w = [], []
    m_u = mass @ u_t
    for i in range(tab.s):
        f_i = forcing(t + tab.c[i] * dt) if forcing is not None else None
        b_t = m_u + (ad * f_i if f_i is not None else 0.0)
        b_f = np.zeros(n_f)
        for j in range(i):
            b_t = b_t + dt * tab.a[i, j] * stage_r[j]
            b_f = b_f - dt * tab.a[i, j] * stage_w[j]
        sol = np.linalg.solve(big, np.concatenate([b_t, b_f]) if n_f else b_t)
        u_i, u_fi = sol[:n_t], sol[n_t:]
        r = -(k_tt @ u_i) - (k_tf @ u_fi if n_f else 0.0)
        if f_i is not None:
            r = r + f_i
        stage_r.append(r)
        stage_w.append(k_ft @ u_i + (k_ff @ u_fi if n_f else 0.0))
    acc = sum(tab.b[j] * stage_r[j] for j in range(tab.s))
    return u_t + dt * np.linalg.solve(mass, acc)


# ---------------------------------------------------------------------------
# tableaux

ORDER_CONDITIONS = {
    1: [(lambda a, b, c: b.sum(), 1.0)],
    2: [(lambda a, b, c: b @ c, 0.5)],
    3: [(lambda a, b, c: b @ c**2, 1 / 3),
        (lambda a, b, c: b @ (a[:len(b), :] @ c), 1 / 6)],
    4: [(lambda a, b, c: b @ c**3, 0.25),
        (lambda a, b, c: (b * c) @ (a[:len(b), :] @ c), 1 / 8),
        (lambda a, b, c: b @ (a[:len(b), :] @ c**2), 1 / 12),
        (lambda a, b, c: b @ (a[:len(b), :] @ (a[:len(b), :] @ c)), 1 / 24)],
}


@pytest.mark.parametrize("kind,order", [("ERK2", 2), ("ERK3", 3), ("ERK4", 4),
                                        ("SDIRK22", 2), ("SDIRK23", 3), ("SDIRK34", 4)])
def test_order_conditions(kind, order):
    tab = tableau(kind)
    assert tab.order == order
    a = tab.a[:tab.s, :]
    for p in range(1, order + 1):
        for cond, val in ORDER_CONDITIONS[p]:
            assert abs(cond(a, tab.b, tab.c) - val) < 1e-13, (kind, p)


def test_erk4_coefficients():
    tab = tableau("ERK4")
    assert np.allclose(tab.b, [1 / 6, 1 / 3, 1 / 3, 1 / 6])
    assert np.allclose(tab.c, [0.0, 0.5, 0.5, 1.0])


def test_sdirk34_coefficients():
    tab = tableau("SDIRK34")
    nu = math.cos(math.pi / 18.0) / math.sqrt(3.0) + 0.5
    xi = 1.0 / (6.0 * (2.0 * nu - 1.0) ** 2)
    assert abs(nu - 1.06857902130163) < 1e-11
    assert abs(xi - 0.1288864005157204) < 1e-11
    assert abs(tab.a_star - nu) < 1e-15
    assert np.allclose(tab.b, [xi, 1 - 2 * xi, xi])
    assert np.allclose(tab.a[:3, :].sum(axis=1), tab.c)


def test_sdirk22_is_quarter_diagonal_variant():
    tab = tableau("SDIRK22")
    assert tab.a_star == 0.25
    assert tab.a[1, 0] == 0.5
    assert np.allclose(tab.b, [0.5, 0.5])
    # this variant fails the third-order conditions
    assert abs(tab.b @ tab.c**2 - 1 / 3) > 1e-3


def test_unknown_tableau():
    with pytest.raises(TimestepError):
        tableau("RK45")


# ---------------------------------------------------------------------------
# linear solvers

def test_solver_identity():
    rhs = np.arange(5.0)
    out = solve_linear(SolverConfig("direct-lu"), sp.eye(5).tocsc(), rhs)
    assert np.allclose(out, rhs)


def test_solvers_agree_on_random_spd():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((50, 50))
    spd = a @ a.T + 50 * np.eye(50)
    rhs = rng.standard_normal(50)
    x_direct = solve_linear(SolverConfig("direct-lu"), spd, rhs)
    x_iter = solve_linear(SolverConfig("bicgstab-ilu0", tol=1e-12), spd, rhs)
    assert np.linalg.norm(x_direct - x_iter) < 1e-8 * np.linalg.norm(x_direct)


def test_singular_operator_rejected():
    singular = np.zeros((4, 4))
    singular[0, 0] = 1.0
    with pytest.raises(SolverError):
        solve_linear(SolverConfig("direct-lu"), singular, np.ones(4))


def test_nonsquare_rejected():
    with pytest.raises(SolverError):
        solve_linear(SolverConfig("direct-lu"), np.ones((3, 4)), np.ones(3))


def test_block_diag_inverse_singular_block():
    with pytest.raises(SolverError):
        _block_diag_inverse([np.zeros((2, 2))], [0], (2, 2), "test")


# ---------------------------------------------------------------------------
# explicit stepping

def test_zero_state_stays_zero():
    system = make_system()
    tab = tableau("ERK2")
    stepper = ExplicitStepper(system, tab)
    u0 = np.zeros(system.n_cell_dofs)
    u1 = stepper.step(u0, 0.0, 0.01)
    assert np.allclose(u1, 0.0)


@pytest.mark.parametrize("kind", ["ERK2", "ERK3", "ERK4"])
def test_erk_matches_dense_oracle(kind):
    system = make_system(k=1, level=0)
    tab = tableau(kind)
    case, u0, forcing = make_case_state(system)
    stepper = ExplicitStepper(system, tab)
    dt = 0.01
    u_block = stepper.step(u0.copy(), 0.0, dt, forcing)
    u_dense = dense_erk_step(system, tab, u0.copy(), 0.0, dt, forcing)
    scale = np.linalg.norm(u_dense)
    assert np.linalg.norm(u_block - u_dense) < 1e-12 * scale


def test_erk_face_values_satisfy_face_equations():
    system = make_system(k=2, level=1)
    stepper = ExplicitStepper(system, tableau("ERK2"))
    rng = np.random.default_rng(3)
    u = rng.standard_normal(system.n_cell_dofs)
    u_f = stepper.face_values(u)
    res = system.k_ft @ u + system.k_ff @ u_f
    assert np.linalg.norm(res) < 1e-11 * max(1.0, np.linalg.norm(system.k_ft @ u))


def test_erk_instability_detection():
    system = make_system(k=1, level=2)
    tab = tableau("ERK2")
    stepper = ExplicitStepper(system, tab)
    case, u0, _ = make_case_state(system)
    u = u0.copy()
    # grossly unstable step size must blow up within a few hundred steps
    with pytest.raises(InstabilityError):
        for n in range(500):
            u = stepper.step(u, 0.0, 0.5, None, step_index=n)


def test_erk_taylor_first_order_shrinkage():
    system = make_system(k=1, level=1)
    tab = tableau("ERK2")
    stepper = ExplicitStepper(system, tab)
    case, u0, forcing = make_case_state(system)
    d1 = np.linalg.norm(stepper.step(u0.copy(), 0.0, 1e-3, forcing) - u0)
    d2 = np.linalg.norm(stepper.step(u0.copy(), 0.0, 5e-4, forcing) - u0)
    assert abs(d1 / d2 - 2.0) < 0.1


# ---------------------------------------------------------------------------
# implicit stepping and condensation

@pytest.mark.parametrize("kind", ["SDIRK23", "SDIRK34"])
def test_sdirk_matches_dense_oracle(kind):
    system = make_system(k=1, level=1, mode="implicit")
    tab = tableau(kind)
    case, u0, forcing = make_case_state(system)
    stepper = ImplicitStepper(system, tab, dt=0.02)
    u_cond = stepper.step(u0.copy(), 0.0, 0.02, forcing)
    u_dense = dense_sdirk_step(system, tab, u0.copy(), 0.0, 0.02, forcing)
    assert np.linalg.norm(u_cond - u_dense) < 1e-10 * np.linalg.norm(u_dense)


def test_condensed_stage_equals_monolithic():
    system = make_system(k=1, level=1, mode="implicit")
    tab = tableau("SDIRK23")
    dt = 0.05
    fact = build_condensed(system, tab.a_star, dt)
    rng = np.random.default_rng(8)
    n_t, n_f = system.n_cell_dofs, system.n_face_dofs
    ad = tab.a_star * dt
    big = np.block([[system.mass.toarray() + ad * system.k_tt.toarray(),
                     ad * system.k_tf.toarray()],
                    [ad * system.k_ft.toarray(), ad * system.k_ff.toarray()]])
    for _ in range(3):
        b_t = rng.standard_normal(n_t)
        b_f = rng.standard_normal(n_f)
        u_t, u_f = fact.stage_solve(b_t, b_f)
        ref = np.linalg.solve(big, np.concatenate([b_t, b_f]))
        got = np.concatenate([u_t, u_f])
        assert np.linalg.norm(got - ref) < 1e-9 * np.linalg.norm(ref)


def test_schur_matvec_matches_triple_product():
    system = make_system(k=2, level=1, mode="implicit")
    a_star, dt = 0.25, 0.03
    fact = build_condensed(system, a_star, dt)
    rng = np.random.default_rng(4)
    ad = a_star * dt
    a_dense = system.mass.toarray() + ad * system.k_tt.toarray()
    for _ in range(3):
        v = rng.standard_normal(system.n_face_dofs)
        got = fact.schur @ v
        inner = np.linalg.solve(a_dense, system.k_tf.toarray() @ v)
        ref = ad * (system.k_ff @ v - ad * (system.k_ft @ inner))
        assert np.linalg.norm(got - ref) < 1e-11 * max(1.0, np.linalg.norm(ref))


def test_sdirk_zero_rhs_zero_state():
    system = make_system(mode="implicit")
    tab = tableau("SDIRK23")
    stepper = ImplicitStepper(system, tab, dt=0.1)
    u1 = stepper.step(np.zeros(system.n_cell_dofs), 0.0, 0.1)
    assert np.allclose(u1, 0.0)


def test_sdirk_dt_halving_first_order_change():
    system = make_system(k=1, level=1, mode="implicit")
    tab = tableau("SDIRK34")
    case, u0, forcing = make_case_state(system)
    d1 = np.linalg.norm(ImplicitStepper(system, tab, 1e-3).step(u0.copy(), 0.0, 1e-3, forcing) - u0)
    d2 = np.linalg.norm(ImplicitStepper(system, tab, 5e-4).step(u0.copy(), 0.0, 5e-4, forcing) - u0)
    assert abs(d1 / d2 - 2.0) < 0.1


def test_stale_factorization_rejected():
    system = make_system(mode="implicit")
    tab = tableau("SDIRK23")
    fact = build_condensed(system, tab.a_star, 0.01)
    with pytest.raises(TimestepError, match="stale"):
        ImplicitStepper(system, tab, dt=0.02, factorization=fact)
    stepper = ImplicitStepper(system, tab, dt=0.01, factorization=fact)
    with pytest.raises(TimestepError, match="stale"):
        stepper.step(np.zeros(system.n_cell_dofs), 0.0, 0.02)


def test_iterative_schur_solver_matches_direct():
    system = make_system(k=1, level=2, mode="implicit")
    tab = tableau("SDIRK34")
    case, u0, forcing = make_case_state(system)
    dt = 0.02
    direct = ImplicitStepper(system, tab, dt, SolverConfig("direct-lu"))
    iterative = ImplicitStepper(system, tab, dt, SolverConfig("bicgstab-ilu0", tol=1e-12))
    u_d = direct.step(u0.copy(), 0.0, dt, forcing)
    u_i = iterative.step(u0.copy(), 0.0, dt, forcing)
    assert np.linalg.norm(u_d - u_i) < 1e-8 * np.linalg.norm(u_d)


def test_single_cell_mesh_reduces_to_cell_solve():
    import hhowave.mesh as msh

    verts = np.array([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)])
    mesh = msh.PolyMesh(verts, [np.arange(4)], [msh.FLUID])
    system = assemble(mesh, ACADEMIC, StabilizationConfig.implicit(), k=1)
    assert system.n_face_dofs == 0
    tab = tableau("SDIRK23")
    stepper = ImplicitStepper(system, tab, dt=0.01)
    rng = np.random.default_rng(0)
    u0 = rng.standard_normal(system.n_cell_dofs)
    u1 = stepper.step(u0, 0.0, 0.01)
    ref = dense_sdirk_step(system, tab, u0, 0.0, 0.01)
    assert np.linalg.norm(u1 - ref) < 1e-11 * np.linalg.norm(ref)
