import numpy as np
import pytest

from surfch.assembly import assemble_forms
from surfch.diagnostics import compute_energy, write_csv
from surfch.materials import MobilitySpec, PotentialSpec, RegularizedMaterial
from surfch.mesh import VelocityField, build_icosphere
from surfch.solver import SolverConfig, StepSystem, initial_state, run, step

STAT = VelocityField.stationary()


@pytest.fixture(scope="module")
def sphere2():
    return build_icosphere(2)


def noisy(mesh, c=0.0, amp=0.05, seed=3):
    return c + amp * np.random.default_rng(seed).uniform(-1, 1, mesh.n_vertices)


def test_constant_state_is_fixed_point(sphere2):
    mat = RegularizedMaterial(PotentialSpec(), MobilitySpec("degenerate", k=1), 0.1)
    cfg = SolverConfig(dt=1e-2, epsilon=0.1)
    st0 = initial_state(sphere2, np.full(sphere2.n_vertices, 0.3), mat, cfg)
    st1 = step(st0, mat, STAT, cfg)
    np.testing.assert_array_equal(st1.u, st0.u)
    assert st1.time == pytest.approx(1e-2)


def test_constant_and_pinned_degenerate_mobility_coincide(sphere2):
    c = 0.4
    deg = RegularizedMaterial(PotentialSpec(), MobilitySpec("degenerate", k=1), 0.1)
    const = RegularizedMaterial(PotentialSpec(), MobilitySpec("constant", c=1 - c**2), 0.1)
    cfg = SolverConfig(dt=1e-3, epsilon=0.1)
    forms = assemble_forms(sphere2, STAT)
    u_old = np.full(sphere2.n_vertices, c)
    s_deg = StepSystem(forms, forms, u_old, deg, cfg)
    s_const = StepSystem(forms, forms, u_old, const, cfg)
    np.testing.assert_allclose(s_deg.K.toarray(), s_const.K.toarray(), rtol=1e-14, atol=1e-15)
    u = noisy(sphere2, c)
    np.testing.assert_allclose(s_deg.jacobian(u).toarray(), s_const.jacobian(u).toarray(), rtol=1e-13, atol=1e-16)
    np.testing.assert_allclose(step(initial_state(sphere2, u_old, deg, cfg), deg, STAT, cfg).u,
                               step(initial_state(sphere2, u_old, const, cfg), const, STAT, cfg).u)


@pytest.mark.parametrize("pot", [PotentialSpec(), PotentialSpec("logarithmic", 0.5)])
def test_jacobian_matches_finite_differences(sphere2, pot):
    mat = RegularizedMaterial(pot, MobilitySpec("degenerate", k=2), 0.05)
    cfg = SolverConfig(dt=1e-3, epsilon=0.1)
    vel = VelocityField.radial_expansion(0.1)
    forms0 = assemble_forms(sphere2, vel)
    from surfch.mesh import advance_mesh

    forms1 = assemble_forms(advance_mesh(sphere2, vel, cfg.dt), vel)
    u_old = noisy(sphere2, 0.2, 0.6)
    system = StepSystem(forms0, forms1, u_old, mat, cfg)
    u = noisy(sphere2, 0.1, 0.8, seed=9)
    J = system.jacobian(u)
    rng = np.random.default_rng(0)
    for _ in range(3):
        d = rng.normal(size=len(u))
        h = 1e-6
        fd = (system.residual(u + h * d) - system.residual(u - h * d)) / (2 * h)
        assert np.linalg.norm(fd - J @ d) <= 1e-5 * np.linalg.norm(J @ d)


def test_newton_converges_quadratically(sphere2):
    mat = RegularizedMaterial(PotentialSpec("logarithmic", 0.3), MobilitySpec("degenerate", k=1), 0.01)
    cfg = SolverConfig(dt=2e-3, epsilon=0.05, newton_tol=1e-13)
    st = initial_state(sphere2, noisy(sphere2, 0.0, 0.5), mat, cfg)
    st = step(st, mat, STAT, cfg)
    h = np.array(st.newton_history)
    assert len(h) >= 3
    tail = h[-3:]
    # r_{k+1} <= C r_k^2 with a moderate constant, before rounding takes over
    assert tail[1] <= 1e3 * tail[0] ** 2 or tail[1] < 1e-12


def test_degenerate_without_delta_rejected(sphere2):
    mat = RegularizedMaterial(PotentialSpec(), MobilitySpec("degenerate", k=1), 0.0)
    cfg = SolverConfig()
    with pytest.raises(ValueError):
        step(initial_state(sphere2, noisy(sphere2), mat, cfg), mat, STAT, cfg)


def test_zero_steps_returns_initial(sphere2):
    mat = RegularizedMaterial(PotentialSpec(), MobilitySpec(), 0.0)
    cfg = SolverConfig(dt=0.1)
    st = initial_state(sphere2, noisy(sphere2), mat, cfg)
    traj = run(st, mat, STAT, cfg, 0.05)
    assert len(traj.states) == 1 and traj.states[0] is st
    assert len(traj.records) == 1


def test_mass_conserved_over_100_steps(sphere2):
    mat = RegularizedMaterial(PotentialSpec(), MobilitySpec("degenerate", k=1), 0.1)
    cfg = SolverConfig(dt=1e-3, epsilon=0.1)
    st = initial_state(sphere2, noisy(sphere2, 0.3), mat, cfg)
    traj = run(st, mat, STAT, cfg, 0.1, keep_states=False)
    mass = np.array([r.mass for r in traj.records])
    assert len(mass) == 101
    assert np.abs(mass - mass[0]).max() <= 1e-9 * abs(mass[0])


def test_energy_nonincreasing_short_run(sphere2):
    mat = RegularizedMaterial(PotentialSpec(), MobilitySpec("degenerate", k=2), 0.05)
    cfg = SolverConfig(dt=2e-3, epsilon=0.1)
    traj = run(initial_state(sphere2, noisy(sphere2, 0.0, 0.3), mat, cfg), mat, STAT, cfg, 0.1)
    energy = np.array([r.energy for r in traj.records])
    assert np.diff(energy).max() <= 1e-10


def test_run_is_deterministic(tmp_path, sphere2):
    mat = RegularizedMaterial(PotentialSpec(), MobilitySpec(), 0.0)
    cfg = SolverConfig(dt=2e-3, epsilon=0.1)
    paths = []
    for i in range(2):
        traj = run(initial_state(sphere2, noisy(sphere2), mat, cfg), mat, STAT, cfg, 0.02)
        p = tmp_path / f"d{i}.csv"
        write_csv(p, traj.records)
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_callbacks_invoked_each_step(sphere2):
    mat = RegularizedMaterial(PotentialSpec(), MobilitySpec(), 0.0)
    cfg = SolverConfig(dt=1e-2, epsilon=0.2)
    seen = []
    run(initial_state(sphere2, noisy(sphere2), mat, cfg), mat, STAT, cfg, 0.05,
        callbacks=[lambda s, r: seen.append((s.step, r.time))])
    assert [s for s, _ in seen] == [0, 1, 2, 3, 4, 5]


def test_manufactured_solution_first_order_in_time(sphere2):
    from surfch.experiments import manufactured_forcing

    mat = RegularizedMaterial(PotentialSpec(), MobilitySpec("degenerate", k=1), 0.1)

    def exact(x, t):
        u = 0.5 * np.exp(-t) * x[:, 2]
        return u, -u

    forms = assemble_forms(sphere2, STAT)
    errors = []
    for dt in (0.02, 0.01, 0.005):
        cfg = SolverConfig(dt=dt, epsilon=1.0)
        st = initial_state(sphere2, exact(sphere2.vertices, 0)[0], mat, cfg)
        traj = run(st, mat, STAT, cfg, 0.2, diagnostics=False, keep_states=False,
                   forcing=manufactured_forcing(sphere2, STAT, mat, 1.0, exact))
        e = traj.states[-1].u - exact(sphere2.vertices, traj.states[-1].time)[0]
        errors.append(np.sqrt(e @ (forms.M @ e)))
    ratios = np.array(errors[:-1]) / np.array(errors[1:])
    assert np.all(np.abs(ratios - 2) <= 0.3), ratios


def test_step_error_carries_index(sphere2):
    from surfch.solver import StepError

    mat = RegularizedMaterial(PotentialSpec(), MobilitySpec(), 0.0)
    cfg = SolverConfig(dt=1e-2, epsilon=0.1, newton_maxit=1, newton_tol=1e-30)
    with pytest.raises(StepError) as info:
        run(initial_state(sphere2, noisy(sphere2, 0, 0.5), mat, cfg), mat, STAT, cfg, 0.05)
    assert info.value.step == 1
