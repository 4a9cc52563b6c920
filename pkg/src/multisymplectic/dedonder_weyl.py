"""Covariant Legendre transform, De Donder-Weyl equations and Hamiltonian n-vectors.

Hamiltonian n-vectors X_h = Z_1 ^ ... ^ Z_n satisfy ``i_{X_h} omega = dh``
with ``h = -H - p``, where the n-vector is inserted into the trailing
slots of omega, ``omega(., Z_1, ..., Z_n)``.  With the sign conventions of
:mod:`multisymplectic.phase_space` this yields

    (Z_mu)^i       = dH/dp^mu_i
    (Z_mu)^nu_i    = -(1/n) delta^nu_mu dH/dq^i + Z'^nu_{mu,i},  sum_mu Z'^mu_{mu,i} = 0
    (Z_mu)_0       = dh/dx^mu + (Z_mu)^i dh/dq^i + (Z_mu)^nu_i dh/dp^nu_i

so that integral manifolds move forward along the De Donder-Weyl flow
``d_mu q^i = dH/dp^mu_i``, ``d_mu p^mu_i = -dH/dq^i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .algebra import ChartSpec, Form, Multivector, contract, wedge_all
from .phase_space import ChartPoint, omega_form
from .theories import DWHamiltonian, JetPoint, LagrangianDensity

NEWTON_MAX_ITER = 50
NEWTON_TOL = 1e-12
RELATION_TOL = 1e-8


class SingularityError(ArithmeticError):
    """Newton inversion of the polymomenta failed; the Lagrangian is not regular here."""


class GaugeError(ValueError):
    pass


# -- Legendre transform -----------------------------------------------------

def legendre_transform(L: LagrangianDensity, j: JetPoint) -> ChartPoint:
    """Covariant Legendre map (x, q, v) -> (x, q, p^mu_i = dL/dv^i_mu, p = L - p^mu_i v^i_mu)."""
    pmom = np.asarray(L.grad_v(j.x, j.q, j.v), dtype=float)
    p = float(L.value(j.x, j.q, j.v)) - float(np.sum(pmom * j.v))
    return ChartPoint(ChartSpec(L.n, L.N), j.x, j.q, pmom, p)


def _hess_v(L: LagrangianDensity, x, q, v) -> np.ndarray:
    if L.hess_v is not None:
        return np.asarray(L.hess_v(x, q, v), dtype=float)
    n, N = L.n, L.N
    h = 1e-6
    out = np.zeros(v.shape[:-2] + (n, N, n, N))
    for mu in range(n):
        for i in range(N):
            dv = np.zeros((n, N))
            dv[mu, i] = h
            out[..., mu, i] = (L.grad_v(x, q, v + dv) - L.grad_v(x, q, v - dv)) / (2 * h)
    # out[..., nu, j, mu, i] = d(dL/dv^nu_j)/dv^mu_i; the Hessian is symmetric
    return out


def _invert_batch(L: LagrangianDensity, x, q, pmom, seed=None) -> np.ndarray:
    n, N = L.n, L.N
    m = n * N
    pmom = np.asarray(pmom, dtype=float)
    batch = pmom.shape[:-2]
    x = np.broadcast_to(np.asarray(x, dtype=float), batch + (n,))
    q = np.broadcast_to(np.asarray(q, dtype=float), batch + (N,))
    v = np.zeros(batch + (n, N)) if seed is None else np.array(np.broadcast_to(seed, batch + (n, N)), dtype=float)
    scale = max(1.0, float(np.max(np.abs(pmom), initial=0.0)))
    for _ in range(NEWTON_MAX_ITER + 1):
        resid = L.grad_v(x, q, v) - pmom
        if float(np.max(np.abs(resid), initial=0.0)) < NEWTON_TOL * scale:
            return v
        jac = _hess_v(L, x, q, v).reshape(batch + (m, m))
        try:
            step = np.linalg.solve(jac, resid.reshape(batch + (m, 1)))[..., 0]
        except np.linalg.LinAlgError as exc:
            raise SingularityError(f"singular Hessian d2L/dv2 for {L.name}") from exc
        v = v - step.reshape(batch + (n, N))
        if not np.all(np.isfinite(v)):
            break
    raise SingularityError(
        f"polymomentum inversion for {L.name} did not converge in {NEWTON_MAX_ITER} iterations"
    )


def invert_polymomenta(L: LagrangianDensity, x, q, pmom, seed=None) -> JetPoint:
    """Solve dL/dv(x, q, v) = pmom for the jet velocities by Newton iteration."""
    v = _invert_batch(L, np.asarray(x, float), np.asarray(q, float), np.asarray(pmom, float), seed)
    return JetPoint(x, q, v)


def hamiltonian_from_lagrangian(L: LagrangianDensity) -> DWHamiltonian:
    """H = p^mu_i v^i_mu - L with v from the inverted Legendre map.

    Partials follow from the envelope identity: dH/dp = v, dH/dq = -dL/dq,
    dH/dx = -dL/dx, all at the inverted velocities.
    """
    if not L.regular:
        raise SingularityError(f"{L.name} is flagged as singular")

    def velocities(x, q, p):
        return _invert_batch(L, x, q, p)

    def value(x, q, p):
        v = velocities(x, q, p)
        return np.sum(p * v, axis=(-2, -1)) - L.value(x, q, v)

    return DWHamiltonian(
        n=L.n,
        N=L.N,
        value=value,
        grad_q=lambda x, q, p: -L.grad_q(x, q, velocities(x, q, p)),
        grad_p=velocities,
        grad_x=lambda x, q, p: -L.dx(x, q, velocities(x, q, p)),
        name=f"legendre({L.name})",
    )


def dw_rhs(H: DWHamiltonian, x, q, pmom) -> tuple[np.ndarray, np.ndarray]:
    """Right-hand sides of the De Donder-Weyl equations.

    Returns ``dq_dx[mu, i] = dH/dp^mu_i`` (the prescribed d_mu q^i) and
    ``div_p[i] = -dH/dq^i`` (the prescribed d_mu p^mu_i).
    """
    x, q, pmom = (np.asarray(a, dtype=float) for a in (x, q, pmom))
    return np.asarray(H.grad_p(x, q, pmom)), -np.asarray(H.grad_q(x, q, pmom))


# -- Hamiltonian n-vectors -------------------------------------------------

@dataclass(frozen=True)
class HamiltonianMultivector:
    """Separable Hamiltonian n-vector with its factor components.

    ``zq[mu, i] = (Z_mu)^i``, ``zmom[mu, nu, i] = (Z_mu)^nu_i``,
    ``z0[mu] = (Z_mu)_0``; the x-part of Z_mu is exactly d/dx^mu.
    """

    spec: ChartSpec
    zq: np.ndarray
    zmom: np.ndarray
    z0: np.ndarray
    gauge: np.ndarray

    def factor_components(self, mu: int) -> np.ndarray:
        s = self.spec
        comp = np.zeros(s.dim)
        comp[s.x_index(mu)] = 1.0
        comp[s.n : s.n + s.N] = self.zq[mu]
        comp[s.n + s.N : s.p_index] = self.zmom[mu].reshape(-1)
        comp[s.p_index] = self.z0[mu]
        return comp

    @property
    def Z(self) -> list[Multivector]:
        return [
            Multivector.from_components(self.spec.chart, self.factor_components(mu))
            for mu in range(self.spec.n)
        ]

    @property
    def assembled(self) -> Multivector:
        return wedge_all(self.Z)


def zero_gauge(spec: ChartSpec) -> np.ndarray:
    return np.zeros((spec.n, spec.n, spec.N))


def random_gauge(spec: ChartSpec, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Random Z'[mu, nu, i] with sum_mu Z'[mu, mu, i] = 0."""
    g = scale * rng.normal(size=(spec.n, spec.n, spec.N))
    trace = np.einsum("mmi->i", g)
    for mu in range(spec.n):
        g[mu, mu] -= trace / spec.n
    return g


def _check_gauge(spec: ChartSpec, gauge) -> np.ndarray:
    if gauge is None or (isinstance(gauge, str) and gauge == "zero"):
        return zero_gauge(spec)
    g = np.asarray(gauge, dtype=float)
    if g.shape != (spec.n, spec.n, spec.N):
        raise GaugeError(f"gauge must have shape {(spec.n, spec.n, spec.N)}, got {g.shape}")
    trace = np.einsum("mmi->i", g)
    if np.max(np.abs(trace)) > 1e-12 * max(1.0, float(np.max(np.abs(g)))):
        raise GaugeError(f"gauge is not trace-free: sum_mu Z'[mu, mu, :] = {trace}")
    return g


def hamiltonian_components(H: DWHamiltonian, x, q, pmom, gauge=None):
    """Component arrays (zq, zmom, z0) of X_h at (x, q, pmom); p does not enter."""
    spec = ChartSpec(H.n, H.N)
    g = _check_gauge(spec, gauge)
    Hq = np.asarray(H.grad_q(x, q, pmom), dtype=float)
    Hp = np.asarray(H.grad_p(x, q, pmom), dtype=float)
    Hx = np.asarray(H.dx(x, q, pmom), dtype=float)
    n = H.n
    zq = Hp
    zmom = g - np.einsum("mn,i->mni", np.eye(n), Hq) / n
    # h = -H - p: dh/dx = -Hx, dh/dq = -Hq, dh/dp^nu_i = -Hp
    z0 = -(Hx + zq @ Hq + np.einsum("mni,ni->m", zmom, Hp))
    return zq, zmom, z0, g


def build_hamiltonian_nvector(H: DWHamiltonian, at: ChartPoint, gauge=None) -> HamiltonianMultivector:
    """Separable Hamiltonian n-vector of h = -H - p at a point of P.

    ``gauge`` is ``None``/``"zero"`` or a trace-free array ``Z'[mu, nu, i]``.
    """
    zq, zmom, z0, g = hamiltonian_components(H, at.x, at.q, at.pmom, gauge)
    return HamiltonianMultivector(at.spec, zq, zmom, z0, g)


def dh_form(H: DWHamiltonian, at: ChartPoint, *, include_p: bool = True) -> Form:
    """Differential of h = -H - p; ``include_p=False`` uses h = -H instead."""
    spec = at.spec
    comp = np.zeros(spec.dim)
    comp[: spec.n] = -np.asarray(H.dx(at.x, at.q, at.pmom))
    comp[spec.n : spec.n + spec.N] = -np.asarray(H.grad_q(at.x, at.q, at.pmom))
    comp[spec.n + spec.N : spec.p_index] = -np.asarray(H.grad_p(at.x, at.q, at.pmom)).reshape(-1)
    comp[spec.p_index] = -1.0 if include_p else 0.0
    return Form.from_components(spec.chart, comp)


@dataclass(frozen=True)
class RelationReport:
    residual: float
    passed: bool
    lhs: Form
    rhs: Form


def defining_relation_residual(
    H: DWHamiltonian,
    X: HamiltonianMultivector | Multivector,
    at: ChartPoint,
    *,
    include_p: bool = True,
    omega: Form | None = None,
) -> RelationReport:
    if isinstance(X, HamiltonianMultivector):
        X = X.assembled
    spec = at.spec
    omega = omega_form(spec) if omega is None else omega
    lhs = contract(X, omega, slots="trailing")
    rhs = dh_form(H, at, include_p=include_p)
    residual = (lhs - rhs).max_abs()
    return RelationReport(residual, residual < RELATION_TOL, lhs, rhs)


def verify_defining_relation(
    H: DWHamiltonian, X: HamiltonianMultivector | Multivector, at: ChartPoint, *, include_p: bool = True
) -> RelationReport:
    """Residual of i_{X_h} omega = dh at a point, max over coefficients."""
    return defining_relation_residual(H, X, at, include_p=include_p)


def integrate_hamiltonian_flow(H: DWHamiltonian, start: ChartPoint, dt: float, steps: int) -> np.ndarray:
    """Integral curve of the n = 1 Hamiltonian vector field Z by classical RK4.

    Returns the trajectory of chart coordinates, shape ``(steps + 1, D)``.
    The curve is parametrized by x^1, whose Z-component is 1.
    """
    if H.n != 1:
        raise ValueError("integral curves are only parametrized for n = 1")
    spec = start.spec
    N = spec.N
    qs = slice(1, 1 + N)
    ps = slice(1 + N, 1 + 2 * N)

    # hamiltonian_components specialised to n = 1 and zero gauge, inlined for
    # speed; there the zq.Hq and zmom.Hp terms of z0 cancel, leaving -dH/dx
    grad_q, grad_p, grad_x = H.grad_q, H.grad_p, H.grad_x

    def field(y: np.ndarray) -> np.ndarray:
        x, q, pm = y[0:1], y[qs], y[ps].reshape(1, N)
        out = np.empty_like(y)
        out[0] = 1.0
        out[qs] = np.asarray(grad_p(x, q, pm), dtype=float)[0]
        out[ps] = -np.asarray(grad_q(x, q, pm), dtype=float)
        out[-1] = 0.0 if grad_x is None else -float(np.asarray(grad_x(x, q, pm))[0])
        return out

    y = start.to_array()
    traj = np.empty((steps + 1, y.size))
    traj[0] = y
    for k in range(steps):
        k1 = field(y)
        k2 = field(y + 0.5 * dt * k1)
        k3 = field(y + 0.5 * dt * k2)
        k4 = field(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        traj[k + 1] = y
    return traj


# -- lifting grid solutions --------------------------------------------------

@dataclass(frozen=True)
class LiftReport:
    """Residuals of a lifted solution tangent against the Hamiltonian n-vector."""

    point: ChartPoint
    tangent: HamiltonianMultivector
    velocity_residual: float
    trace_residual: float
    relation_residual: float

    @property
    def max_residual(self) -> float:
        return max(self.velocity_residual, self.trace_residual, self.relation_residual)


def lift_tangent_from_patch(
    H: DWHamiltonian,
    x0: Sequence[float],
    phi: np.ndarray,
    pmom: np.ndarray,
    spacing: Sequence[float],
) -> LiftReport:
    """Tangent n-plane of a lifted solution from a centered stencil.

    ``phi`` has shape ``(3,)*n + (N,)`` and ``pmom`` shape ``(3,)*n + (n, N)``
    holding the field and polymomenta on the 3^n stencil centred at ``x0``
    with grid spacings ``spacing``.  The lift takes p = -H along the
    solution, so the tangent's p-component is d_mu(-H).
    """
    n, N = H.n, H.N
    spec = ChartSpec(n, N)
    x0 = np.asarray(x0, dtype=float)
    h = np.asarray(spacing, dtype=float)
    phi = np.asarray(phi, dtype=float)
    pmom = np.asarray(pmom, dtype=float)
    if phi.shape != (3,) * n + (N,) or pmom.shape != (3,) * n + (n, N):
        raise ValueError("patch must be a 3^n stencil around the node")
    grids = np.meshgrid(*[x0[m] + h[m] * np.arange(-1, 2) for m in range(n)], indexing="ij")
    xs = np.stack(grids, axis=-1)
    pval = -np.asarray(H.value(xs, phi, pmom))

    centre = (1,) * n

    def d(arr: np.ndarray, mu: int) -> np.ndarray:
        plus = list(centre)
        minus = list(centre)
        plus[mu] = 2
        minus[mu] = 0
        return (arr[tuple(plus)] - arr[tuple(minus)]) / (2.0 * h[mu])

    zq = np.stack([d(phi, mu) for mu in range(n)])
    zmom = np.stack([d(pmom, mu) for mu in range(n)])
    z0 = np.array([d(pval, mu) for mu in range(n)])
    at = ChartPoint(spec, x0, phi[centre], pmom[centre], pval[centre])
    Hq = np.asarray(H.grad_q(at.x, at.q, at.pmom))
    gauge = zmom + np.einsum("mn,i->mni", np.eye(n), Hq) / n
    tangent = HamiltonianMultivector(spec, zq, zmom, z0, gauge)

    dq_dx, div_p = dw_rhs(H, at.x, at.q, at.pmom)
    velocity = float(np.max(np.abs(zq - dq_dx)))
    trace = float(np.max(np.abs(np.einsum("mmi->i", zmom) - div_p)))
    relation = verify_defining_relation(H, tangent, at).residual
    return LiftReport(at, tangent, velocity, trace, relation)
