"""Lagrangian densities, De Donder-Weyl Hamiltonians and the built-in theories.

Every evaluator is vectorized over leading batch axes: ``x`` has shape
``(..., n)``, ``q`` has ``(..., N)``, jet velocities ``v`` and polymomenta
``pmom`` have ``(..., n, N)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .algebra import ChartSpec

Array = np.ndarray


@dataclass(frozen=True)
class JetPoint:
    """A point (x^mu, q^i, q^i_mu) of the first jet bundle; ``v[mu, i] = q^i_mu``."""

    x: Array
    q: Array
    v: Array

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", np.array(self.x, dtype=float).reshape(-1))
        object.__setattr__(self, "q", np.array(self.q, dtype=float).reshape(-1))
        v = np.array(self.v, dtype=float)
        object.__setattr__(self, "v", v.reshape(self.x.size, self.q.size))


@dataclass(frozen=True)
class LagrangianDensity:
    """L(x, q, v) with analytic first partials.

    ``hess_v`` returns the Hessian d^2L / dv^mu_i dv^nu_j with shape
    ``(..., n, N, n, N)``; without it Newton steps use finite differences
    of ``grad_v``.
    """

    n: int
    N: int
    value: Callable[[Array, Array, Array], Array]
    grad_q: Callable[[Array, Array, Array], Array]
    grad_v: Callable[[Array, Array, Array], Array]
    grad_x: Optional[Callable[[Array, Array, Array], Array]] = None
    hess_v: Optional[Callable[[Array, Array, Array], Array]] = None
    regular: bool = True
    name: str = "lagrangian"

    def dx(self, x, q, v) -> Array:
        if self.grad_x is None:
            return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(q)[:-1] + (self.n,)))
        return self.grad_x(x, q, v)


@dataclass(frozen=True)
class DWHamiltonian:
    """De Donder-Weyl Hamiltonian H(x, q, pmom).

    It never depends on the chart coordinate p; the function on P is
    ``h = -H - p``.
    """

    n: int
    N: int
    value: Callable[[Array, Array, Array], Array]
    grad_q: Callable[[Array, Array, Array], Array]
    grad_p: Callable[[Array, Array, Array], Array]
    grad_x: Optional[Callable[[Array, Array, Array], Array]] = None
    hess_p: Optional[Callable[[Array, Array, Array], Array]] = None
    name: str = "hamiltonian"

    @property
    def spec(self) -> ChartSpec:
        return ChartSpec(self.n, self.N)

    def dx(self, x, q, pmom) -> Array:
        if self.grad_x is None:
            shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(q)[:-1], np.shape(pmom)[:-2])
            return np.zeros(shape + (self.n,))
        return self.grad_x(x, q, pmom)

    def h(self, x, q, pmom, p) -> Array:
        return -self.value(x, q, pmom) - p


@dataclass(frozen=True)
class Potential:
    """Scalar potential V(x, q) with partials in q (..., N) and x (..., n)."""

    value: Callable[[Array, Array], Array]
    grad_q: Callable[[Array, Array], Array]
    grad_x: Optional[Callable[[Array, Array], Array]] = None
    source: str = ""


@dataclass(frozen=True)
class Theory:
    """A field theory with standard quadratic kinetic term.

    ``L = 1/2 sum_mu eta_mu sum_i (v^i_mu)^2 - V(x, q)`` and its
    De Donder-Weyl Hamiltonian ``H = 1/2 sum_mu eta_mu sum_i (p^mu_i)^2 + V``.
    """

    name: str
    spec: ChartSpec
    signature: tuple[float, ...]
    potential: Potential
    lagrangian: LagrangianDensity
    hamiltonian: DWHamiltonian
    params: dict = field(default_factory=dict, compare=False)


def _eta(signature: Sequence[float], n: int) -> Array:
    eta = np.asarray(signature, dtype=float)
    if eta.shape != (n,) or not np.all(np.abs(eta) == 1.0):
        raise ValueError(f"signature must be {n} entries of +1/-1, got {signature}")
    return eta


def scalar_theory(
    name: str,
    n: int,
    N: int,
    potential: Potential,
    signature: Sequence[float] | None = None,
    params: dict | None = None,
) -> Theory:
    if signature is None:
        signature = [1.0] + [-1.0] * (n - 1)
    eta = _eta(signature, n)
    eta_b = eta[:, None]  # broadcast against (..., n, N)
    hess = np.einsum("mn,ij->minj", np.diag(eta), np.eye(N))

    vx = potential.grad_x
    # an x-free potential leaves grad_x unset; .dx() then returns zeros
    lag_x = None if vx is None else (lambda x, q, v: -vx(x, q) + 0.0 * v[..., :, 0])
    ham_x = None if vx is None else (lambda x, q, p: vx(x, q) + 0.0 * p[..., :, 0])

    lag = LagrangianDensity(
        n=n,
        N=N,
        value=lambda x, q, v: 0.5 * np.sum(eta_b * v * v, axis=(-2, -1)) - potential.value(x, q),
        grad_q=lambda x, q, v: -potential.grad_q(x, q) + 0.0 * v[..., 0, :],
        grad_v=lambda x, q, v: eta_b * v + 0.0 * q[..., None, :],
        grad_x=lag_x,
        hess_v=lambda x, q, v: np.broadcast_to(hess, np.shape(v)[:-2] + hess.shape),
        regular=True,
        name=name,
    )
    ham = DWHamiltonian(
        n=n,
        N=N,
        value=lambda x, q, p: 0.5 * np.sum(eta_b * p * p, axis=(-2, -1)) + potential.value(x, q),
        grad_q=lambda x, q, p: potential.grad_q(x, q) + 0.0 * p[..., 0, :],
        grad_p=lambda x, q, p: eta_b * p + 0.0 * q[..., None, :],
        grad_x=ham_x,
        hess_p=lambda x, q, p: np.broadcast_to(hess, np.shape(p)[:-2] + hess.shape),
        name=name,
    )
    return Theory(
        name=name,
        spec=ChartSpec(n, N),
        signature=tuple(float(e) for e in eta),
        potential=potential,
        lagrangian=lag,
        hamiltonian=ham,
        params=dict(params or {}),
    )


def quadratic_potential(mass: float) -> Potential:
    m2 = float(mass) ** 2
    return Potential(
        value=lambda x, q: 0.5 * m2 * np.sum(q * q, axis=-1),
        grad_q=lambda x, q: m2 * q,
        source=f"0.5*{m2!r}*q^2",
    )


def oscillator(omega: float = 1.0) -> Theory:
    """Harmonic oscillator, n = 1: H = p^2/2 + omega^2 q^2/2."""
    return scalar_theory("oscillator", 1, 1, quadratic_potential(omega), [1.0], {"omega": omega})


def free_scalar(mass: float = 1.0) -> Theory:
    """Klein-Gordon field in 1+1 dimensions, signature (+, -)."""
    return scalar_theory("free_scalar", 2, 1, quadratic_potential(mass), [1.0, -1.0], {"mass": mass})


def sine_gordon(coupling: float = 1.0) -> Theory:
    """Sine-Gordon field in 1+1 dimensions, V = coupling * (1 - cos q)."""
    c = float(coupling)
    pot = Potential(
        value=lambda x, q: c * np.sum(1.0 - np.cos(q), axis=-1),
        grad_q=lambda x, q: c * np.sin(q),
        source=f"{c!r}*(1 - cos(q1))",
    )
    return scalar_theory("sine_gordon", 2, 1, pot, [1.0, -1.0], {"coupling": coupling})


BUILTIN_THEORIES: dict[str, Callable[..., Theory]] = {
    "oscillator": oscillator,
    "free_scalar": free_scalar,
    "sine_gordon": sine_gordon,
}


def get_theory(name: str, **params) -> Theory:
    try:
        factory = BUILTIN_THEORIES[name]
    except KeyError:
        raise KeyError(f"unknown theory {name!r}; known: {sorted(BUILTIN_THEORIES)}") from None
    return factory(**params)
