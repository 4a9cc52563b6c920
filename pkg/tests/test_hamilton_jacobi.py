from __future__ import annotations

import io

import numpy as np
import pytest

from multisymplectic.dedonder_weyl import random_gauge
from multisymplectic.hamilton_jacobi import (
    DomainBox,
    HJPotential,
    PhaseSection,
    check_theorem2_conditions,
    condition_residuals,
    foliation_integrability_check,
    geometric_form_check,
    hj_residual,
    project_distribution,
    section_from_potential,
    translate_fiber,
)
from multisymplectic.algebra import ChartSpec
from multisymplectic.phase_space import ConfigPoint
from multisymplectic.theories import free_scalar, oscillator

FREE_PARTICLE = oscillator(0.0).hamiltonian
MASSLESS = free_scalar(0.0).hamiltonian
MECH_BOX = DomainBox((0.5, -2.0), (3.0, 2.0), 1, 1, points=7)
FIELD_BOX = DomainBox((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0), 2, 1, points=4)


def free_particle_potential(fd_only: bool = False) -> HJPotential:
    """S = q^2 / (2t)."""

    def S(x, q):
        return np.array([q[0] ** 2 / (2 * x[0])])

    def grad(x, q):
        t, y = x[0], q[0]
        return np.array([[-y * y / (2 * t * t)]]), np.array([[y / t]])

    def hess(x, q):
        t, y = x[0], q[0]
        return np.array([[[y * y / t**3]]]), np.array([[[-y / t**2]]]), np.array([[[1 / t]]])

    if fd_only:
        return HJPotential(1, 1, S, name="free_particle_fd")
    return HJPotential(1, 1, S, grad, hess, name="free_particle")


def oscillator_potential() -> HJPotential:
    """S = -(q^2/2) tan t for the unit oscillator."""

    def S(x, q):
        return np.array([-0.5 * q[0] ** 2 * np.tan(x[0])])

    def grad(x, q):
        t, y = x[0], q[0]
        return np.array([[-0.5 * y * y / np.cos(t) ** 2]]), np.array([[-y * np.tan(t)]])

    def hess(x, q):
        t, y = x[0], q[0]
        sec2 = 1 / np.cos(t) ** 2
        return np.array([[[-y * y * sec2 * np.tan(t)]]]), np.array([[[-y * sec2]]]), np.array([[[-np.tan(t)]]])

    return HJPotential(1, 1, S, grad, hess, name="oscillator")


def nonintegrable_potential() -> HJPotential:
    """Massless scalar: S^0 = x2 q - x1 x2^2 / 2 + x1^3 / 6, S^1 = x1 q."""

    def S(x, q):
        x1, x2 = x
        return np.array([x2 * q[0] - 0.5 * x1 * x2**2 + x1**3 / 6, x1 * q[0]])

    def grad(x, q):
        x1, x2 = x
        sx = np.array([[-0.5 * x2**2 + 0.5 * x1**2, q[0] - x1 * x2], [q[0], 0.0]])
        return sx, np.array([[x2], [x1]])

    return HJPotential(2, 1, S, grad, name="nonintegrable")


def random_section(rng: np.random.Generator, n: int, N: int) -> PhaseSection:
    A = rng.normal(size=(n, N, n + N))
    B = rng.normal(size=(n + N,))
    c = rng.normal(size=(n, N))

    def tmom(x, q):
        z = np.concatenate([x, q])
        return np.sin(A @ z) + c

    def t0(x, q):
        z = np.concatenate([x, q])
        return float(np.cos(B @ z) + B @ z)

    return PhaseSection(n, N, tmom, t0, name="random")


def test_zero_potential_gives_zero_section():
    S = HJPotential(2, 2, lambda x, q: np.zeros(2))
    T = section_from_potential(S)
    at = ConfigPoint([0.3, 0.4], [1.0, -2.0])
    assert np.all(T.momenta(at) == 0) and T.energy_component(at) == 0


def test_free_particle_section_values():
    T = section_from_potential(free_particle_potential())
    at = ConfigPoint([2.0], [3.0])
    assert T.momenta(at)[0, 0] == pytest.approx(1.5)
    assert T.energy_component(at) == pytest.approx(-9 / 8)
    assert -T.energy_component(at) == pytest.approx(9 / 8)  # E = q^2 / (2 t^2)


def test_linear_n2_section():
    a = 1.7
    S = HJPotential(2, 1, lambda x, q: np.array([a * q[0] * x[0], 0.0]))
    T = section_from_potential(S)
    at = ConfigPoint([0.6, -0.2], [0.9])
    assert np.allclose(T.momenta(at), [[a * 0.6], [0.0]], atol=1e-9)
    assert T.energy_component(at) == pytest.approx(a * 0.9, abs=1e-9)


def test_hj_residual_examples():
    S = free_particle_potential()
    assert max(abs(hj_residual(FREE_PARTICLE, S, p)) for p in MECH_BOX.lattice()) < 1e-12
    zero = HJPotential(2, 1, lambda x, q: np.zeros(2))
    assert hj_residual(MASSLESS, zero, ConfigPoint([0.1, 0.2], [3.0])) == 0.0
    assert hj_residual(free_scalar().hamiltonian, zero, ConfigPoint([0.1, 0.2], [3.0])) == pytest.approx(4.5, abs=1e-9)


def test_mechanics_reduction_matches_classical_hj():
    S = oscillator_potential()
    H = oscillator().hamiltonian
    for p in DomainBox((0.0, -2.0), (1.2, 2.0), 1, 1, points=6).lattice():
        t, y = p.x[0], p.q[0]
        classical = -0.5 * y * y / np.cos(t) ** 2 + 0.5 * (y * np.tan(t)) ** 2 + 0.5 * y * y
        assert hj_residual(H, S, p) == pytest.approx(classical, abs=1e-15)
        assert abs(classical) < 1e-12


def test_free_particle_conditions():
    rep = check_theorem2_conditions(FREE_PARTICLE, section_from_potential(free_particle_potential()), MECH_BOX)
    assert rep.passed(1e-6)
    assert rep.max["T4"] > 0.1  # velocity q/t is generically nonzero


def test_fd_only_potential_still_passes():
    rep = check_theorem2_conditions(FREE_PARTICLE, section_from_potential(free_particle_potential(True)), MECH_BOX)
    assert rep.passed(1e-4)


def test_oscillator_conditions_and_projection():
    T = section_from_potential(oscillator_potential())
    H = oscillator().hamiltonian
    box = DomainBox((0.0, -2.0), (1.2, 2.0), 1, 1, points=5)
    rep = check_theorem2_conditions(H, T, box)
    assert max(rep.max[c] for c in ("T1", "T2", "T3")) < 1e-8
    assert rep.max["T4"] > 0.1
    at = ConfigPoint([0.7], [1.3])
    (Z,) = project_distribution(H, T, at)
    assert Z.coeffs[(0,)] == 1.0
    assert Z.coeffs[(1,)] == pytest.approx(-1.3 * np.tan(0.7), abs=1e-14)


def test_massless_zero_section_is_exact():
    T = PhaseSection(2, 1, lambda x, q: np.zeros((2, 1)), lambda x, q: 0.0)
    rep = check_theorem2_conditions(MASSLESS, T, FIELD_BOX)
    assert all(v == 0.0 for v in rep.max.values())
    Z = project_distribution(MASSLESS, T, ConfigPoint([0.2, 0.3], [0.5]))
    assert [dict(z.coeffs) for z in Z] == [{(0,): 1.0}, {(1,): 1.0}]
    fol = foliation_integrability_check(MASSLESS, T, FIELD_BOX)
    assert fol.max_out_of_span == 0.0
    geo = geometric_form_check(MASSLESS, T, FIELD_BOX)
    assert geo.dT == 0.0 and geo.dhT == 0.0


def test_random_section_fails():
    rng = np.random.default_rng(3)
    for n, N in [(1, 1), (2, 1), (2, 2)]:
        T = random_section(rng, n, N)
        box = DomainBox((-1.0,) * (n + N), (1.0,) * (n + N), n, N, points=3)
        rep = check_theorem2_conditions(free_scalar().hamiltonian if n == 2 and N == 1 else _generic_H(n, N), T, box)
        assert max(rep.max[c] for c in ("T1", "T2", "T3")) > 0.1


def _generic_H(n, N):
    from multisymplectic.theories import Potential, scalar_theory

    pot = Potential(value=lambda x, q: 0.5 * np.sum(q**2, axis=-1), grad_q=lambda x, q: np.asarray(q, dtype=float))
    return scalar_theory("generic", n, N, pot, [1.0] + [-1.0] * (n - 1)).hamiltonian


def test_potential_implies_t3_even_without_hj():
    rng = np.random.default_rng(5)
    M = rng.normal(size=(2, 4))
    S = HJPotential(2, 2, lambda x, q: np.sin(M @ np.concatenate([x, q])))
    T = section_from_potential(S)
    box = DomainBox((-1.0,) * 4, (1.0,) * 4, 2, 2, points=3)
    rep = check_theorem2_conditions(_generic_H(2, 2), T, box)
    assert rep.max["T3"] < 1e-6 and rep.max["sym"] < 1e-6
    assert rep.max["T1"] > 0.1  # not an HJ solution
    assert max(S.mixed_partial_asymmetry(p) for p in box.lattice()[:10]) < 1e-5


def test_n2_free_particle_potential_passes():
    # N = 2 free particle in mechanics: S = |q|^2 / (2t)
    from multisymplectic.theories import Potential, scalar_theory

    H = scalar_theory("free2", 1, 2, Potential(value=lambda x, q: 0 * q[..., 0], grad_q=lambda x, q: 0 * np.asarray(q)), [1.0]).hamiltonian
    S = HJPotential(1, 2, lambda x, q: np.array([q @ q / (2 * x[0])]))
    box = DomainBox((0.5, -1.0, -1.0), (2.0, 1.0, 1.0), 1, 2, points=3)
    assert max(abs(hj_residual(H, S, p)) for p in box.lattice()) < 1e-8
    assert check_theorem2_conditions(H, section_from_potential(S), box).passed(1e-4)


def test_projection_is_gauge_independent():
    T = section_from_potential(nonintegrable_potential())
    at = ConfigPoint([0.3, -0.4], [0.8])
    base = project_distribution(MASSLESS, T, at)
    rng = np.random.default_rng(7)
    for _ in range(5):
        g = random_gauge(ChartSpec(2, 1), rng)
        assert project_distribution(MASSLESS, T, at, g) == base


def test_nonintegrable_foliation_detected():
    S = nonintegrable_potential()
    assert max(abs(hj_residual(MASSLESS, S, p)) for p in FIELD_BOX.lattice()) < 1e-12
    T = section_from_potential(S)
    rep = check_theorem2_conditions(MASSLESS, T, FIELD_BOX)
    assert rep.passed(1e-6) and rep.max["T4"] > 0.5
    fol = foliation_integrability_check(MASSLESS, T, FIELD_BOX)
    assert fol.max_out_of_span > 0.5 and not fol.passed()


def test_mechanics_foliation_vacuous():
    fol = foliation_integrability_check(oscillator().hamiltonian, section_from_potential(oscillator_potential()),
                                        DomainBox((0.0, -1.0), (1.0, 1.0), 1, 1, points=3))
    assert fol.max_out_of_span == 0.0


def test_geometric_check_exact_potential():
    S = free_particle_potential()
    geo = geometric_form_check(FREE_PARTICLE, section_from_potential(S), DomainBox((0.5, -2.0), (3.0, 2.0), 1, 1, points=3), S=S)
    assert geo.dT < 1e-6 and geo.dhT < 1e-6 and geo.theta_dS < 1e-6
    assert geo.equivalent()
    assert geo.mapping_error < 1e-6


def test_geometric_check_random_section():
    rng = np.random.default_rng(11)
    T = random_section(rng, 2, 1)
    geo = geometric_form_check(free_scalar().hamiltonian, T, DomainBox((-1.0,) * 3, (1.0,) * 3, 2, 1, points=2))
    assert max(geo.dT, geo.dhT) > 0.1
    assert geo.equivalent() and geo.mapping_error < 1e-6


def test_fiber_translation_makes_wave_family_constant():
    def f(x):
        return np.array([np.sin(x[1] - x[0])])

    def df(x):
        c = np.cos(x[1] - x[0])
        return np.array([[-c, c]])

    def ddf(x):
        s = np.sin(x[1] - x[0])
        return np.array([[[-s, s], [s, -s]]])

    def tmom(x, q):
        c = np.cos(x[1] - x[0])
        return np.array([[-c], [-c]])

    T = PhaseSection(2, 1, tmom, lambda x, q: 0.0, name="wave_family")
    rep = check_theorem2_conditions(MASSLESS, T, FIELD_BOX)
    assert rep.passed(1e-6) and rep.max["T4"] > 0.1
    H2, T2 = translate_fiber(MASSLESS, T, f, df, ddf)
    rep2 = check_theorem2_conditions(H2, T2, FIELD_BOX)
    # T2 and T4 vanish identically; T1 and T3 carry the finite-difference error
    assert rep2.passed(1e-9, ("T1", "T2", "T3", "T4"))
    assert rep2.max["T2"] == 0.0 and rep2.max["T4"] == 0.0


def test_condition_residual_shapes_and_literal_t4():
    T = section_from_potential(nonintegrable_potential())
    res = condition_residuals(MASSLESS, T, ConfigPoint([0.1, 0.2], [0.3]))
    assert res["T1"].shape == (1,) and res["T2"].shape == (2,) and res["T4"].shape == (2, 1)
    assert np.all(res["T4_literal"] == 0)  # massless: dH/dq vanishes identically


def test_report_csv():
    rep = check_theorem2_conditions(FREE_PARTICLE, section_from_potential(free_particle_potential()),
                                    DomainBox((1.0, 0.0), (2.0, 1.0), 1, 1, points=2))
    buf = io.StringIO()
    rep.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "condition,x1,q1,residual"
    assert len(lines) == 1 + 4 * len(rep.residuals)


def test_domain_box_validation():
    with pytest.raises(ValueError):
        DomainBox((0.0,), (1.0, 1.0), 1, 1)
    with pytest.raises(ValueError):
        DomainBox((2.0, 0.0), (1.0, 1.0), 1, 1)
    assert len(DomainBox((0.0, 0.0), (1.0, 1.0), 1, 1, points=3).lattice()) == 9
