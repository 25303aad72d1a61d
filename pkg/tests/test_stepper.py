import numpy as np
import pytest
import scipy.integrate
from hypothesis import given, settings, strategies as st

from viscofem.fespace import build_space, evaluate
from viscofem.mesh import unit_square_mesh
from viscofem.mms import ManufacturedSolution
from viscofem.stepper import (REFERENCE_MATERIAL, MaterialModel, ProblemData, SchemeCoefficients,
                              Simulation, SolverState, TimeGrid, energy_identity_residual,
                              init_state, monolithic_matrix, monolithic_step, system_matrix,
                              update_internal_displacement, update_internal_velocity,
                              velocity_history_load)

FORMS = ["displacement", "velocity"]


def scalar_material(phi_q, tau_q):
    return MaterialModel(1.0, 1.0, (1.0 - phi_q, phi_q), (tau_q,))


def test_material_validation():
    assert sum(REFERENCE_MATERIAL.phi) == 1.0
    with pytest.raises(ValueError, match="sum to 1"):
        MaterialModel(1.0, 1.0, (0.5, 0.1, 0.3), (0.5, 1.5))
    with pytest.raises(ValueError):
        MaterialModel(1.0, 1.0, (0.5, 0.5), (-1.0,))
    with pytest.raises(ValueError):
        MaterialModel(0.0, 1.0, (0.5, 0.5), (1.0,))
    with pytest.raises(ValueError):
        MaterialModel(1.0, 1.0, (0.5, 0.5), (1.0, 2.0))
    assert REFERENCE_MATERIAL.relaxation(0.0) == pytest.approx(1.0, abs=1e-15)


def test_time_grid():
    grid = TimeGrid(1.0, 8)
    assert grid.dt == 0.125 and grid.t(3) == 0.375
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_displacement_update_hand_value():
    c = SchemeCoefficients.build(scalar_material(0.1, 0.5), 0.5, "displacement")
    psi = update_internal_displacement(np.zeros(1), np.ones(1), np.ones(1), c, 0)
    assert psi[0] == pytest.approx(0.1 / 2 / 1.5 * 2, abs=1e-15)


def test_displacement_update_zero_phi():
    c = SchemeCoefficients.build(scalar_material(0.1, 0.5), 0.5, "displacement")
    c = SchemeCoefficients(c.form, c.dt, c.alpha, np.zeros(1), c.c_eff, c.phi0)
    psi = np.zeros(3)
    for _ in range(10):
        psi = update_internal_displacement(psi, np.ones(3), np.full(3, 2.0), c, 0)
    assert np.all(psi == 0)


def test_displacement_update_fixed_point():
    phi, zbar = 0.4, np.array([0.7, -1.3])
    c = SchemeCoefficients.build(scalar_material(phi, 1.5), 0.5, "displacement")
    psi = np.zeros(2)
    for _ in range(500):
        psi = update_internal_displacement(psi, zbar, zbar, c, 0)
    assert np.abs(psi - phi * zbar).max() < 1e-12


def test_velocity_update():
    c = SchemeCoefficients.build(scalar_material(0.4, 0.5), 0.5, "velocity")
    s = update_internal_velocity(np.zeros(1), np.zeros(1), np.ones(1), c, 0)
    assert s[0] == pytest.approx(0.5 * 0.4 / 0.5 / 1.5, abs=1e-15)
    s0 = np.array([0.3])
    assert update_internal_velocity(s0, np.ones(1), np.ones(1), c, 0)[0] == c.alpha[0] * 0.3
    fine = SchemeCoefficients.build(scalar_material(0.4, 0.5), 1e-6, "velocity")
    assert fine.gamma[0] == pytest.approx(0.4, abs=1e-5)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-6, 1e3), st.floats(1e-6, 1e3))
def test_alpha_in_unit_interval(dt, tau):
    for form in FORMS:
        c = SchemeCoefficients.build(scalar_material(0.3, tau), dt, form)
        assert abs(c.alpha[0]) < 1
        assert c.c_eff > 0


def test_alpha_grid():
    for dt in np.logspace(-4, 2, 10):
        for tau in np.logspace(-3, 3, 10):
            c = SchemeCoefficients.build(scalar_material(0.5, tau), dt, "displacement")
            assert abs(c.alpha[0]) < 1 and c.c_eff > 0


def test_history_load():
    space = build_space(unit_square_mesh(3), 1)
    sim = Simulation(space, REFERENCE_MATERIAL, ProblemData(), "velocity", 0.1)
    z0 = np.linspace(0, 1, space.num_free)
    az0 = sim.A @ z0
    assert np.allclose(velocity_history_load(sim.A, z0, REFERENCE_MATERIAL, 0.0), -0.5 * az0, atol=1e-15)
    assert np.all(velocity_history_load(sim.A, np.zeros(space.num_free), REFERENCE_MATERIAL, 0.3) == 0)
    assert np.abs(velocity_history_load(sim.A, z0, REFERENCE_MATERIAL, 200.0)).max() < 1e-40


def test_init_state_zero():
    space = build_space(unit_square_mesh(3), 2)
    st0 = init_state(space, REFERENCE_MATERIAL, ProblemData(), "displacement")
    assert not st0.z.any() and not st0.w.any() and not st0.iv.any()
    assert st0.iv.shape == (2, space.num_free)


def test_init_state_reproduces_p2_member():
    space = build_space(unit_square_mesh(4), 2)
    u = lambda x, y: 3 * x * y
    grad = lambda x, y: (3 * y, 3 * x)
    data = ProblemData(u0=u, u0_grad=grad, w0=u)
    st0 = init_state(space, REFERENCE_MATERIAL, data, "velocity")
    target = space.restrict(space.interpolate(u))
    assert np.abs(st0.z - target).max() < 1e-10
    assert np.abs(st0.w - target).max() < 1e-10
    # without an explicit gradient the central-difference fallback is used
    fd = init_state(space, REFERENCE_MATERIAL, ProblemData(u0=u), "velocity")
    assert np.abs(fd.z - st0.z).max() < 1e-8


def test_init_state_reproduces_p1_member():
    space = build_space(unit_square_mesh(4), 1)
    member = space.interpolate(lambda x, y: np.sin(x * y))
    centroid = space.physical_gradients(np.array([[1 / 3, 1 / 3]]))[:, 0]
    cell_grad = np.einsum("tkd,tk->td", centroid, member[space.cell_dofs])

    def point_grad(x, y):
        return cell_grad[space.locate((x, y))[0]]

    def grad(x, y):
        g = np.array([point_grad(a, b) for a, b in zip(np.ravel(x), np.ravel(y))])
        return g[:, 0].reshape(np.shape(x)), g[:, 1].reshape(np.shape(x))

    u = np.vectorize(lambda x, y: evaluate(space, member, (x, y)))
    st0 = init_state(space, REFERENCE_MATERIAL, ProblemData(u0=u, u0_grad=grad, w0=u), "displacement")
    assert np.abs(st0.z - space.restrict(member)).max() < 1e-10
    assert np.abs(st0.w - space.restrict(member)).max() < 1e-10


def test_projection_decreases_energy():
    space = build_space(unit_square_mesh(4), 2)
    ex = ManufacturedSolution(REFERENCE_MATERIAL)
    st0 = init_state(space, REFERENCE_MATERIAL, ex.problem_data(), "displacement")
    sim = Simulation(space, REFERENCE_MATERIAL, ProblemData(), "displacement", 0.1)
    discrete = st0.z @ (sim.A @ st0.z)

    def integrand(y, x):
        gx, gy = ex.grad_u(x, y, 0.0)
        return gx**2 + gy**2

    exact, _ = scipy.integrate.dblquad(integrand, 0, 1, 0, 1, epsabs=1e-13, epsrel=1e-13)
    assert discrete <= exact
    assert discrete == pytest.approx(exact, rel=1e-4)


@pytest.mark.parametrize("form", FORMS)
def test_zero_data_stays_zero(form):
    space = build_space(unit_square_mesh(4), 2)
    sim = Simulation(space, REFERENCE_MATERIAL, ProblemData(), form, 0.1)
    final, bal, traj = sim.run(10, record=True)
    for s in traj:
        assert not s.z.any() and not s.w.any() and not s.iv.any()
    assert bal.residual() == 0.0


@pytest.mark.parametrize("form", FORMS)
@pytest.mark.parametrize("degree", [1, 2])
@pytest.mark.parametrize("n", [2, 4])
def test_step_matches_monolithic(form, degree, n):
    mat = REFERENCE_MATERIAL
    space = build_space(unit_square_mesh(n), degree)
    dt = 0.05
    sim = Simulation(space, mat, ManufacturedSolution(mat).problem_data(), form, dt)
    state = sim.initial_state()
    mono = state.copy()
    for k in range(10):
        ln, l1 = sim.load(k * dt), sim.load((k + 1) * dt)
        state = sim.step(state, ln, l1)
        mono = monolithic_step(mono, sim.M, sim.A, ln, l1, mat, dt)
        for a, b in ((state.z, mono.z), (state.w, mono.w), (state.iv, mono.iv)):
            assert np.abs(a - b).max() <= 1e-9


def test_monolithic_zero_data():
    space = build_space(unit_square_mesh(2), 1)
    sim = Simulation(space, REFERENCE_MATERIAL, ProblemData(), "velocity", 0.1)
    s = sim.initial_state()
    zero = np.zeros(space.num_free)
    out = monolithic_step(s, sim.M, sim.A, zero, zero, REFERENCE_MATERIAL, 0.1)
    assert not out.z.any() and not out.w.any() and not out.iv.any()


@pytest.mark.parametrize("form", FORMS)
@pytest.mark.parametrize("dt", [1e-3, 0.1, 10.0])
def test_block_system_invertible(form, dt):
    space = build_space(unit_square_mesh(2), 1)
    sim = Simulation(space, REFERENCE_MATERIAL, ProblemData(), form, dt)
    K = monolithic_matrix(sim.M, sim.A, REFERENCE_MATERIAL, dt, form).toarray()
    assert np.linalg.matrix_rank(K) == K.shape[0]
    schur = system_matrix(sim.M, sim.A, SchemeCoefficients.build(REFERENCE_MATERIAL, dt, form)).toarray()
    np.linalg.cholesky(0.5 * (schur + schur.T))


@pytest.mark.parametrize("form", FORMS)
def test_energy_identity_free_vibration(form):
    space = build_space(unit_square_mesh(4), 2)
    sim = Simulation(space, REFERENCE_MATERIAL, ProblemData(), form, 0.01)
    w_init = space.restrict(space.interpolate(lambda x, y: np.sin(x * y)))
    _, bal, traj = sim.run(100, state=sim.initial_state(w_init=w_init), record=True)
    loads = [np.zeros(space.num_free)] * len(traj)
    res = energy_identity_residual(traj, sim.M, sim.A, REFERENCE_MATERIAL, 0.01, loads)
    assert res <= 1e-10
    assert res == pytest.approx(bal.residual(), abs=1e-14)
    assert bal.dissipation > 0


@pytest.mark.parametrize("form", FORMS)
def test_energy_identity_with_loads(form):
    mat = REFERENCE_MATERIAL
    space = build_space(unit_square_mesh(4), 1)
    sim = Simulation(space, mat, ManufacturedSolution(mat).problem_data(), form, 0.02)
    _, bal, traj = sim.run(50, record=True)
    loads = [sim.load(s.n * 0.02) for s in traj]
    assert energy_identity_residual(traj, sim.M, sim.A, mat, 0.02, loads) <= 1e-10
    assert abs(bal.work) > 1e-3


def test_energy_identity_detects_tampering():
    space = build_space(unit_square_mesh(4), 1)
    sim = Simulation(space, REFERENCE_MATERIAL, ProblemData(), "displacement", 0.01)
    w_init = space.restrict(space.interpolate(lambda x, y: np.sin(x * y)))
    _, _, traj = sim.run(20, state=sim.initial_state(w_init=w_init), record=True)
    traj[-1] = SolverState(traj[-1].n, traj[-1].z * 1.01, traj[-1].w, traj[-1].iv, "displacement")
    loads = [np.zeros(space.num_free)] * len(traj)
    assert energy_identity_residual(traj, sim.M, sim.A, REFERENCE_MATERIAL, 0.01, loads) > 1e-6


@pytest.mark.parametrize("form", FORMS)
def test_long_run_bounded(form):
    space = build_space(unit_square_mesh(4), 1)
    data = ProblemData(f=lambda x, y, t: np.sin(t) * x * y, g=lambda x, y, t: np.cos(2 * t) * 0.5,
                       w0=lambda x, y: np.sin(x * y))
    dt = 0.05
    sim = Simulation(space, REFERENCE_MATERIAL, data, form, dt)
    norms = []

    def track(state, _):
        norms.append(np.sqrt(state.w @ (sim.M @ state.w)) + np.sqrt(state.z @ (sim.A @ state.z)))

    sim.run(1000, callback=track)
    norms = np.array(norms)
    assert np.all(np.isfinite(norms))
    half = norms[: 501].max()
    assert norms.max() / half < 4


def test_unknown_form():
    with pytest.raises(ValueError):
        SchemeCoefficients.build(REFERENCE_MATERIAL, 0.1, "stress")
