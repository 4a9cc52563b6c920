from __future__ import annotations

import io
import math

import numpy as np
import pytest

from multisymplectic.dedonder_weyl import hamiltonian_from_lagrangian
from multisymplectic.field_solver import (
    CSV_COLUMNS,
    DivergenceError,
    FieldState,
    GridSpec,
    diagnostics,
    euler_lagrange_oracle,
    evolve,
    lift_solution_tangent,
    plane_wave,
    solve_pi1,
    standing_wave,
    step,
)
from multisymplectic.theories import LagrangianDensity, free_scalar, oscillator, sine_gordon

TWO_PI = 2 * math.pi


def _plane_run(theory, Nx, T, amplitude=0.3, dt_over_dx=0.5):
    grid = GridSpec.periodic(Nx, TWO_PI, dt_over_dx, T)
    s0 = FieldState(0.0, *plane_wave(amplitude, 1.0, 1.0, grid.nodes, 0.0))
    return grid, s0


def test_zero_state_is_fixed_point():
    grid = GridSpec.periodic(16, TWO_PI, 0.5, 1.0)
    s = FieldState(0.0, np.zeros(16), np.zeros(16))
    s1 = step(free_scalar().hamiltonian, s, grid)
    assert np.all(s1.phi == 0) and np.all(s1.pi0 == 0)
    assert s1.t == pytest.approx(grid.dt)


@pytest.mark.parametrize("Nx", [32, 64, 128])
def test_single_step_matches_plane_wave(Nx):
    grid = GridSpec.periodic(Nx, TWO_PI, 0.5, 0.0)
    dt = grid.dt
    s1 = step(free_scalar().hamiltonian, FieldState(0.0, *plane_wave(0.3, 1.0, 1.0, grid.nodes, 0.0)), grid, dt)
    phi, pi0 = plane_wave(0.3, 1.0, 1.0, grid.nodes, dt)
    bound = dt**5 + dt * grid.dx**2
    assert np.max(np.abs(s1.phi - phi)) < bound
    assert np.max(np.abs(s1.pi0 - pi0)) < bound


def test_mechanics_step_is_rk4_rotation():
    H = oscillator().hamiltonian
    grid = GridSpec.for_mechanics(0.1, 0.1)
    s1 = step(H, FieldState(0.0, [1.0], [0.0]), grid)
    dt = 0.1
    # RK4 on a linear system is the degree-4 Taylor polynomial of the rotation
    assert s1.phi[0] == pytest.approx(1 - dt**2 / 2 + dt**4 / 24, abs=1e-15)
    assert s1.pi0[0] == pytest.approx(-dt + dt**3 / 6, abs=1e-15)
    assert abs(s1.phi[0] - math.cos(dt)) < 1e-7


def test_mechanics_evolution_and_oracle():
    th = oscillator()
    grid = GridSpec.for_mechanics(0.01, 10.0)
    s0 = FieldState(0.0, [1.0], [0.0])
    dw = evolve(th.hamiltonian, s0, grid)
    el = euler_lagrange_oracle(th.lagrangian, s0, grid)
    assert np.max(np.abs(dw.phi[:, 0] - np.cos(dw.times))) < 1e-8
    assert np.max(np.abs(el.phi[:, 0] - np.cos(el.times))) < 1e-3
    assert dw.energy_drift() < 1e-9


def test_plane_wave_to_T10_and_energy():
    grid, s0 = _plane_run(free_scalar(), 256, 10.0)
    traj = evolve(free_scalar().hamiltonian, s0, grid)
    exact = np.array([plane_wave(0.3, 1.0, 1.0, traj.x, t)[0] for t in traj.times])
    assert np.max(np.abs(traj.phi - exact)) < 1e-3
    assert traj.energy_drift() < 1e-6
    assert traj.times[-1] == pytest.approx(10.0, abs=1e-12)


def test_energy_matches_continuum_functional():
    grid, s0 = _plane_run(free_scalar(), 256, 0.0)
    _, dens, total = diagnostics(free_scalar().hamiltonian, grid, s0)
    # (pi0^2 + phi_x^2 + phi^2)/2 integrated over a period; w^2 = 2 for k = m = 1
    A = 0.3
    exact = 0.5 * A * A * math.pi * (2.0 + 1.0 + 1.0)
    assert total == pytest.approx(exact, rel=1e-4)
    assert dens.shape == (256,)


def test_sine_gordon_energy_drift():
    grid, s0 = _plane_run(sine_gordon(), 256, 10.0)
    assert evolve(sine_gordon().hamiltonian, s0, grid).energy_drift() < 1e-4


def test_convergence_order_two():
    errs = []
    for Nx in (32, 64, 128):
        grid, s0 = _plane_run(free_scalar(), Nx, 2.0)
        traj = evolve(free_scalar().hamiltonian, s0, grid)
        errs.append(np.max(np.abs(traj.phi[-1] - plane_wave(0.3, 1.0, 1.0, traj.x, traj.times[-1])[0])))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) >= 1.9


@pytest.mark.parametrize("th", [free_scalar(), sine_gordon()], ids=lambda t: t.name)
def test_dw_agrees_with_euler_lagrange_oracle(th):
    grid, s0 = _plane_run(th, 256, 5.0)
    dw = evolve(th.hamiltonian, s0, grid)
    el = euler_lagrange_oracle(th.lagrangian, s0, grid)
    assert np.array_equal(dw.times, el.times)
    assert np.max(np.abs(dw.phi - el.phi)) < 1e-3
    # momentum map: pi0 = dL/d(phi_t) = phi_t of the oracle solution
    assert np.max(np.abs(dw.pi0[1:] - el.pi0[1:])) < 2e-3


def test_oracle_zero_data():
    grid = GridSpec.periodic(16, TWO_PI, 0.5, 2.0)
    el = euler_lagrange_oracle(sine_gordon().lagrangian, FieldState(0.0, np.zeros(16), np.zeros(16)), grid)
    assert np.all(el.phi == 0) and np.all(el.pi0 == 0)


def test_oracle_standing_wave():
    grid = GridSpec.periodic(256, TWO_PI, 0.5, 5.0)
    s0 = FieldState(0.0, *standing_wave(0.3, 2.0, 1.0, grid.nodes, 0.0))
    el = euler_lagrange_oracle(free_scalar().lagrangian, s0, grid)
    exact = np.array([standing_wave(0.3, 2.0, 1.0, el.x, t)[0] for t in el.times])
    assert np.max(np.abs(el.phi - exact)) < 1e-3


def test_oracle_rejects_non_scalar_theories():
    from multisymplectic.theories import get_theory

    with pytest.raises(ValueError):
        euler_lagrange_oracle(free_scalar().lagrangian, FieldState(0, [0.0], [0.0]), GridSpec.for_mechanics(0.1, 1))
    assert get_theory("oscillator").spec.n == 1


def test_cfl_violation_diverges():
    grid = GridSpec.periodic(64, TWO_PI, 4.0, 20.0, enforce_cfl=False)
    s0 = FieldState(0.0, *plane_wave(0.3, 1.0, 1.0, grid.nodes, 0.0))
    with pytest.raises(DivergenceError) as info:
        evolve(free_scalar().hamiltonian, s0, grid)
    assert 0 < info.value.t < 20.0


def test_gridspec_validation():
    with pytest.raises(ValueError):
        GridSpec(Nx=4, dx=0.1, dt=0.05, T=1.0)
    with pytest.raises(ValueError):
        GridSpec(Nx=16, dx=0.1, dt=0.2, T=1.0)
    with pytest.raises(ValueError):
        GridSpec(Nx=16, dx=0.1, dt=0.05, T=1.0, cfl=1.5)
    with pytest.raises(ValueError):
        GridSpec(Nx=16, dx=0.1, dt=0.08, T=1.0, cfl=0.5)
    with pytest.raises(ValueError):
        GridSpec(Nx=16, dx=0.0, dt=0.05, T=1.0)
    with pytest.raises(ValueError):
        GridSpec(Nx=2, dx=1.0, dt=0.1, T=1.0, mechanics=True)
    g = GridSpec(Nx=16, dx=0.1, dt=0.03, T=1.0)
    assert g.steps == 34 and g.steps * g.step_size == pytest.approx(1.0)


def test_state_shape_checks():
    with pytest.raises(ValueError):
        FieldState(0.0, np.zeros(3), np.zeros(4))
    grid = GridSpec.periodic(16, TWO_PI, 0.5, 1.0)
    with pytest.raises(ValueError):
        evolve(free_scalar().hamiltonian, FieldState(0.0, np.zeros(8), np.zeros(8)), grid)
    assert not FieldState(0.0, [np.nan], [0.0]).is_finite()


def test_csv_layout_and_determinism():
    grid, s0 = _plane_run(free_scalar(), 16, 1.0)
    bufs = []
    for _ in range(2):
        buf = io.StringIO()
        evolve(free_scalar().hamiltonian, s0, grid, sample_every=4).write_csv(buf)
        bufs.append(buf.getvalue())
    assert bufs[0] == bufs[1]
    lines = bufs[0].splitlines()
    assert tuple(lines[0].split(",")) == CSV_COLUMNS
    samples = len(range(0, grid.steps + 1, 4)) + (grid.steps % 4 != 0)
    assert len(lines) == 1 + 16 * samples


def test_lift_residuals_small_at_interior():
    grid, s0 = _plane_run(free_scalar(), 256, 1.0)
    traj = evolve(free_scalar().hamiltonian, s0, grid, sample_every=1)
    worst = max(lift_solution_tangent(free_scalar().hamiltonian, traj, s, j).max_residual
                for s in (1, 10, traj.times.size - 2) for j in (0, 50, 255))
    assert worst < 5e-3


def test_lift_rejects_temporal_boundary():
    grid, s0 = _plane_run(free_scalar(), 16, 0.5)
    traj = evolve(free_scalar().hamiltonian, s0, grid, sample_every=1)
    with pytest.raises(ValueError):
        lift_solution_tangent(free_scalar().hamiltonian, traj, 0, 3)
    with pytest.raises(ValueError):
        lift_solution_tangent(free_scalar().hamiltonian, traj, traj.times.size - 1, 3)


def _stiff_gradient_lagrangian() -> LagrangianDensity:
    """L = v0^2/2 - v1^2/2 - v1^4/12 - q^2/2: the p^1 constraint needs Newton."""

    def value(x, q, v):
        v0, v1 = v[..., 0, 0], v[..., 1, 0]
        return 0.5 * v0**2 - 0.5 * v1**2 - v1**4 / 12 - 0.5 * q[..., 0] ** 2

    def grad_v(x, q, v):
        out = np.array(v, dtype=float)
        out[..., 1, 0] = -v[..., 1, 0] - v[..., 1, 0] ** 3 / 3
        return out

    return LagrangianDensity(2, 1, value=value, grad_q=lambda x, q, v: -np.asarray(q, dtype=float), grad_v=grad_v, name="stiff")


def test_newton_constraint_solve_and_conservation():
    H = hamiltonian_from_lagrangian(_stiff_gradient_lagrangian())
    xs = np.linspace(0, 1, 5)
    X = np.stack([np.zeros(5), xs], axis=-1)
    target = np.array([-1.0, -0.2, 0.0, 0.7, 1.5])
    pi1 = solve_pi1(H, X, np.zeros(5), np.zeros(5), target)
    # dH/dp^1 = d_x phi  with  p^1 = -(v + v^3/3)
    assert np.allclose(pi1, -(target + target**3 / 3), atol=1e-10)
    grid, s0 = _plane_run(None, 64, 2.0, amplitude=0.5)
    traj = evolve(H, s0, grid)
    assert traj.energy_drift() < 1e-5
