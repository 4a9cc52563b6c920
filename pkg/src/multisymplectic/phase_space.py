"""Multisymplectic phase space P, its canonical forms and the projection to E.

Sign conventions: the Poincare-Cartan form is

    Theta = p^mu_i dq^i ^ d^n x_mu + p d^n x

with ``d^n x_mu = i_{d_mu} d^n x``, so that

    omega = -dTheta = dq^i ^ dp^mu_i ^ d^n x_mu - dp ^ d^n x.

For n = 1 this is ``p dq - E dt`` and ``dq ^ dp + dE ^ dt`` with the
mechanical energy ``E = -p``, which is also the value of ``p`` on the image
of the covariant Legendre transform.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .algebra import ChartSpec, Form, FormField, Multivector, contract, wedge


@dataclass(frozen=True)
class ChartPoint:
    """A point (x^mu, q^i, p^mu_i, p) of P."""

    spec: ChartSpec
    x: np.ndarray
    q: np.ndarray
    pmom: np.ndarray
    p: float

    def __post_init__(self) -> None:
        n, N = self.spec.n, self.spec.N
        x = np.array(self.x, dtype=float).reshape(-1)
        q = np.array(self.q, dtype=float).reshape(-1)
        pmom = np.array(self.pmom, dtype=float)
        if x.shape != (n,) or q.shape != (N,) or pmom.shape != (n, N):
            raise ValueError(
                f"shapes x{x.shape}, q{q.shape}, pmom{pmom.shape} do not match (n, N) = ({n}, {N})"
            )
        for arr in (x, q, pmom):
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "pmom", pmom)
        object.__setattr__(self, "p", float(self.p))

    @property
    def energy(self) -> float:
        """Mechanical energy E = -p."""
        return -self.p

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.x, self.q, self.pmom.reshape(-1), [self.p]])

    @classmethod
    def from_array(cls, spec: ChartSpec, coords) -> "ChartPoint":
        c = np.asarray(coords, dtype=float)
        if c.shape != (spec.dim,):
            raise ValueError(f"expected {spec.dim} coordinates, got shape {c.shape}")
        n, N = spec.n, spec.N
        return cls(spec, c[:n], c[n : n + N], c[n + N : n + N + n * N].reshape(n, N), c[-1])

    @classmethod
    def random(cls, spec: ChartSpec, rng: np.random.Generator, scale: float = 1.0) -> "ChartPoint":
        return cls.from_array(spec, scale * rng.uniform(-1.0, 1.0, spec.dim))


@dataclass(frozen=True)
class ConfigPoint:
    """A point (x^mu, q^i) of the extended configuration space E."""

    x: np.ndarray
    q: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", np.array(self.x, dtype=float).reshape(-1))
        object.__setattr__(self, "q", np.array(self.q, dtype=float).reshape(-1))

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.x, self.q])

    @classmethod
    def from_array(cls, n: int, coords) -> "ConfigPoint":
        c = np.asarray(coords, dtype=float)
        return cls(c[:n], c[n:])


def volume_form(spec: ChartSpec) -> Form:
    """d^n x = dx^1 ^ ... ^ dx^n on P."""
    return Form.basis(spec.chart, *range(spec.n))


def volume_form_mu(spec: ChartSpec, mu: int) -> Form:
    """d^n x_mu = i_{d_mu} d^n x."""
    return contract(Multivector.basis(spec.chart, spec.x_index(mu)), volume_form(spec))


def build_theta(spec: ChartSpec, at: ChartPoint) -> Form:
    """Poincare-Cartan n-form at a point of P."""
    chart = spec.chart
    theta = volume_form(spec) * at.p
    for mu in range(spec.n):
        dnx_mu = volume_form_mu(spec, mu)
        for i in range(spec.N):
            coeff = at.pmom[mu, i]
            if coeff != 0.0:
                theta = theta + wedge(Form.basis(chart, spec.q_index(i)), dnx_mu) * coeff
    return theta


def theta_field(spec: ChartSpec) -> FormField:
    """Theta as a FormField with exact coordinate partials.

    Theta is linear in the momentum coordinates, so the partial along
    ``p^mu_i`` is the basis form ``dq^i ^ d^n x_mu``, along ``p`` it is
    ``d^n x``, and all others vanish.
    """
    chart = spec.chart

    def evaluate(coords: np.ndarray) -> Form:
        return build_theta(spec, ChartPoint.from_array(spec, coords))

    @lru_cache(maxsize=None)
    def partial_k(k: int) -> Form:
        if k == spec.p_index:
            return volume_form(spec)
        first_p = spec.pmom_index(0, 0)
        if first_p <= k < spec.p_index:
            mu, i = divmod(k - first_p, spec.N)
            return wedge(Form.basis(chart, spec.q_index(i)), volume_form_mu(spec, mu))
        return Form.zero(chart, spec.n)

    return FormField(chart, spec.n, evaluate, lambda _coords, k: partial_k(k))


def omega_form(spec: ChartSpec, *, include_p_term: bool = True) -> Form:
    """dq^i ^ dp^mu_i ^ d^n x_mu - dp ^ d^n x as a constant form.

    ``include_p_term=False`` drops the ``dp ^ d^n x`` term, which destroys
    nondegeneracy; it exists for negative checks.
    """
    chart = spec.chart
    omega = Form.zero(chart, spec.n + 1)
    for mu in range(spec.n):
        dnx_mu = volume_form_mu(spec, mu)
        for i in range(spec.N):
            dq = Form.basis(chart, spec.q_index(i))
            dpm = Form.basis(chart, spec.pmom_index(mu, i))
            omega = omega + wedge(wedge(dq, dpm), dnx_mu)
    if include_p_term:
        omega = omega - wedge(Form.basis(chart, spec.p_index), volume_form(spec))
    return omega


def build_omega(spec: ChartSpec) -> FormField:
    """The multisymplectic (n+1)-form; constant coefficients in these coordinates."""
    return FormField.constant(omega_form(spec))


def project_to_E(pt: ChartPoint) -> ConfigPoint:
    return ConfigPoint(pt.x.copy(), pt.q.copy())


def embed_zero_momenta(spec: ChartSpec, e: ConfigPoint) -> ChartPoint:
    """Section of P -> E with all momenta and p set to zero."""
    return ChartPoint(spec, e.x, e.q, np.zeros((spec.n, spec.N)), 0.0)


@dataclass(frozen=True)
class NondegeneracyReport:
    passed: bool
    rank: int
    dim: int
    min_singular_value: float
    kernel_vector: np.ndarray | None
    random_min_norm: float
    kernel_labels: tuple[str, ...] = ()


def contraction_matrix(spec: ChartSpec, omega: Form) -> tuple[np.ndarray, list[tuple[int, ...]]]:
    """Matrix of v -> i_v omega from R^D to the n-forms appearing in the image."""
    chart = spec.chart
    images = [contract(Multivector.basis(chart, k), omega) for k in range(spec.dim)]
    rows = sorted({key for img in images for key in img.coeffs})
    index = {key: r for r, key in enumerate(rows)}
    mat = np.zeros((len(rows), spec.dim))
    for k, img in enumerate(images):
        for key, v in img.coeffs.items():
            mat[index[key], k] = v
    return mat, rows


def nondegeneracy_check(
    spec: ChartSpec,
    samples: int = 16,
    *,
    omega: Form | None = None,
    rng: np.random.Generator | None = None,
    tol: float = 1e-10,
) -> NondegeneracyReport:
    """Check that i_v omega = 0 forces v = 0 for tangent vectors v.

    The linear map is assembled on the coordinate basis; its rank and
    smallest singular value decide the result.  ``samples`` random vectors
    are additionally contracted directly as a cross-check.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    omega = omega_form(spec) if omega is None else omega
    rng = np.random.default_rng(0) if rng is None else rng
    mat, _rows = contraction_matrix(spec, omega)
    if mat.shape[0] == 0:
        sing = np.zeros(spec.dim)
        vt = np.eye(spec.dim)
    else:
        _u, sing, vt = np.linalg.svd(mat)
        if sing.size < spec.dim:
            sing = np.concatenate([sing, np.zeros(spec.dim - sing.size)])
    rank = int(np.sum(sing > tol))
    min_sv = float(sing.min())
    kernel = None
    if rank < spec.dim:
        kernel = vt[-1] if vt.shape[0] == spec.dim else np.eye(spec.dim)[0]
        kernel = np.where(np.abs(kernel) < 1e-12, 0.0, kernel)
    norms = []
    for _ in range(samples):
        v = rng.normal(size=spec.dim)
        v /= np.linalg.norm(v)
        img = contract(Multivector.from_components(spec.chart, v), omega)
        norms.append(np.sqrt(sum(c * c for c in img.coeffs.values())))
    return NondegeneracyReport(
        passed=rank == spec.dim,
        rank=rank,
        dim=spec.dim,
        min_singular_value=min_sv,
        kernel_vector=kernel,
        random_min_norm=float(min(norms)),
        kernel_labels=()
        if kernel is None
        else tuple(spec.labels[k] for k in np.flatnonzero(kernel)),
    )
