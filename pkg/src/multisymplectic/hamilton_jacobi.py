"""Covariant Hamilton-Jacobi theory: sections E -> P, potentials S^mu, foliation checks.

A section is ``T(x, q) = (x, q, T^mu_i(x, q), T_0(x, q))``.  The residuals of
the four foliation conditions are

    T1_i   = sum_mu d_mu T^mu_i + d/dq^i [H(x, q, T(x, q))]
    T2_mu  = d_mu T_0 + d/dx^mu [H(x, q, T(x, q))]
    T3_i   = sum_mu d_mu T^mu_i - d_i T_0
    T4     = dH/dp^mu_i (x, q, T)

where the derivatives of ``H o T`` are total derivatives of the composite.
T1-T3 vanish exactly when the form T^mu_i dq^i ^ d^n x_mu + T_0 d^n x and
the function h o T are both closed (for N = 1; for N >= 2 closedness also
requires d_j T^mu_i = d_i T^mu_j, reported as ``sym``).  T4 asks for
constant projected solutions; ``T4_literal`` is dH/dq^i o T.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .algebra import DEFAULT_FD_STEP, ChartSpec, Form, FormField, Multivector, contract, exterior_derivative, wedge
from .dedonder_weyl import build_hamiltonian_nvector
from .phase_space import ChartPoint, ConfigPoint, build_theta
from .theories import DWHamiltonian

CONDITIONS = ("T1", "T2", "T3", "T4")


def _xq(at) -> tuple[np.ndarray, np.ndarray]:
    return np.asarray(at.x, dtype=float), np.asarray(at.q, dtype=float)


def _central(fun: Callable[[np.ndarray], np.ndarray], z: np.ndarray, step: float) -> np.ndarray:
    """Jacobian of ``fun`` at ``z``; the derivative axis is appended last."""
    cols = []
    for k in range(z.size):
        h = step * max(1.0, abs(z[k]))
        zp = z.copy()
        zm = z.copy()
        zp[k] += h
        zm[k] -= h
        cols.append((np.asarray(fun(zp)) - np.asarray(fun(zm))) / (2.0 * h))
    return np.stack(cols, axis=-1)


class SectionJacobian(NamedTuple):
    dTm_dx: np.ndarray  # (n, N, n): d T^mu_i / d x^nu
    dTm_dq: np.ndarray  # (n, N, N): d T^mu_i / d q^j
    dT0_dx: np.ndarray  # (n,)
    dT0_dq: np.ndarray  # (N,)


@dataclass(frozen=True)
class PhaseSection:
    """A section T: E -> P given by its momentum components.

    ``Tmom(x, q)`` returns ``(n, N)``, ``T0(x, q)`` a float; ``jacobian``
    optionally returns a :class:`SectionJacobian`, otherwise central
    differences with relative step ``fd_step`` are used.
    """

    n: int
    N: int
    Tmom: Callable[[np.ndarray, np.ndarray], np.ndarray]
    T0: Callable[[np.ndarray, np.ndarray], float]
    jacobian: Optional[Callable[[np.ndarray, np.ndarray], SectionJacobian]] = None
    fd_step: float = DEFAULT_FD_STEP
    name: str = "section"

    def momenta(self, at) -> np.ndarray:
        x, q = _xq(at)
        return np.asarray(self.Tmom(x, q), dtype=float).reshape(self.n, self.N)

    def energy_component(self, at) -> float:
        x, q = _xq(at)
        return float(self.T0(x, q))

    def point(self, at) -> ChartPoint:
        x, q = _xq(at)
        return ChartPoint(ChartSpec(self.n, self.N), x, q, self.momenta(at), self.energy_component(at))

    def partials(self, at) -> SectionJacobian:
        x, q = _xq(at)
        if self.jacobian is not None:
            jac = self.jacobian(x, q)
            return SectionJacobian(*(np.asarray(a, dtype=float) for a in jac))
        n, N = self.n, self.N

        def tm(z):
            return np.asarray(self.Tmom(z[:n], z[n:]), dtype=float).reshape(n, N)

        def t0(z):
            return np.asarray(self.T0(z[:n], z[n:]), dtype=float)

        z = np.concatenate([x, q])
        jm = _central(tm, z, self.fd_step)
        j0 = _central(t0, z, self.fd_step)
        return SectionJacobian(jm[..., :n], jm[..., n:], j0[:n], j0[n:])


@dataclass(frozen=True)
class HJPotential:
    """Hamilton-Jacobi potentials S^mu(x, q), mu = 1..n.

    ``S(x, q)`` returns ``(n,)``.  ``grad(x, q)`` returns ``(S_x, S_q)``
    with shapes ``(n, n)`` (``[mu, nu] = dS^mu/dx^nu``) and ``(n, N)``.
    ``hess(x, q)`` returns ``(S_xx, S_xq, S_qq)`` of shapes ``(n, n, n)``,
    ``(n, n, N)`` and ``(n, N, N)``.  Missing derivatives fall back to
    central differences.
    """

    n: int
    N: int
    S: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad: Optional[Callable] = None
    hess: Optional[Callable] = None
    fd_step: float = DEFAULT_FD_STEP
    name: str = "potential"

    def value(self, at) -> np.ndarray:
        x, q = _xq(at)
        return np.asarray(self.S(x, q), dtype=float).reshape(self.n)

    def gradient(self, at) -> tuple[np.ndarray, np.ndarray]:
        x, q = _xq(at)
        if self.grad is not None:
            sx, sq = self.grad(x, q)
            return np.asarray(sx, dtype=float), np.asarray(sq, dtype=float)
        n = self.n
        jac = _central(lambda z: np.asarray(self.S(z[:n], z[n:]), dtype=float), np.concatenate([x, q]), self.fd_step)
        return jac[:, :n], jac[:, n:]

    def hessian(self, at) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x, q = _xq(at)
        if self.hess is not None:
            return tuple(np.asarray(a, dtype=float) for a in self.hess(x, q))
        n = self.n

        def g(z):
            sx, sq = self.gradient(ConfigPoint(z[:n], z[n:]))
            return np.concatenate([sx, sq], axis=1)

        jac = _central(g, np.concatenate([x, q]), self.fd_step)  # (n, n+N, n+N)
        return jac[:, :n, :n], jac[:, :n, n:], jac[:, n:, n:]

    def mixed_partial_asymmetry(self, at) -> float:
        """max |d^2 S/dq dx - d^2 S/dx dq| from differencing the gradient both ways."""
        n = self.n
        x, q = _xq(at)
        z = np.concatenate([x, q])
        dsq_dx = _central(lambda w: self.gradient(ConfigPoint(w[:n], w[n:]))[1], z, self.fd_step)[..., :n]
        dsx_dq = _central(lambda w: self.gradient(ConfigPoint(w[:n], w[n:]))[0], z, self.fd_step)[..., n:]
        return float(np.max(np.abs(dsq_dx - np.swapaxes(dsx_dq, 1, 2))))


def section_from_potential(S: HJPotential) -> PhaseSection:
    """T^mu_i = dS^mu/dq^i, T_0 = sum_mu dS^mu/dx^mu."""

    def tmom(x, q):
        return S.gradient(ConfigPoint(x, q))[1]

    def t0(x, q):
        return float(np.trace(S.gradient(ConfigPoint(x, q))[0]))

    def jacobian(x, q):
        sxx, sxq, sqq = S.hessian(ConfigPoint(x, q))
        return SectionJacobian(
            np.swapaxes(sxq, 1, 2),
            sqq,
            np.einsum("mmv->v", sxx),
            np.einsum("mmi->i", sxq),
        )

    return PhaseSection(S.n, S.N, tmom, t0, jacobian, S.fd_step, name=f"dS[{S.name}]")


def hj_residual(H: DWHamiltonian, S: HJPotential, at) -> float:
    """sum_mu dS^mu/dx^mu + H(x, q, dS/dq)."""
    x, q = _xq(at)
    sx, sq = S.gradient(at)
    return float(np.trace(sx) + H.value(x, q, sq))


# -- sample domains ----------------------------------------------------------

@dataclass(frozen=True)
class DomainBox:
    """Axis-aligned box in (x, q) with a uniform lattice of ``points`` per axis."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    n: int
    N: int
    points: int = 5

    def __post_init__(self) -> None:
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != self.n + self.N or len(hi) != self.n + self.N:
            raise ValueError(f"box bounds need {self.n + self.N} entries")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError("lower bound exceeds upper bound")
        if self.points < 1:
            raise ValueError("points must be >= 1")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def lattice(self) -> list[ConfigPoint]:
        axes = [np.linspace(a, b, self.points) if self.points > 1 else np.array([0.5 * (a + b)])
                for a, b in zip(self.lower, self.upper)]
        return [ConfigPoint(np.array(c[: self.n]), np.array(c[self.n :])) for c in itertools.product(*axes)]

    def random(self, rng: np.random.Generator, count: int) -> list[ConfigPoint]:
        z = rng.uniform(self.lower, self.upper, size=(count, self.n + self.N))
        return [ConfigPoint(r[: self.n], r[self.n :]) for r in z]


def _samples(domain) -> list[ConfigPoint]:
    if isinstance(domain, DomainBox):
        return domain.lattice()
    return [d if isinstance(d, ConfigPoint) else ConfigPoint(*d) for d in domain]


# -- Theorem 2 conditions ----------------------------------------------------

def condition_residuals(H: DWHamiltonian, T: PhaseSection, at) -> dict[str, np.ndarray]:
    """Residual arrays of T1-T4 (plus T4_literal, sym) at one point of E."""
    x, q = _xq(at)
    tm = T.momenta(at)
    jac = T.partials(at)
    Hq = np.asarray(H.grad_q(x, q, tm), dtype=float)
    Hp = np.asarray(H.grad_p(x, q, tm), dtype=float)
    Hx = np.asarray(H.dx(x, q, tm), dtype=float)
    div = np.einsum("mim->i", jac.dTm_dx)
    return {
        "T1": div + Hq + np.einsum("mj,mji->i", Hp, jac.dTm_dq),
        "T2": jac.dT0_dx + Hx + np.einsum("mj,mjv->v", Hp, jac.dTm_dx),
        "T3": div - jac.dT0_dq,
        "T4": Hp,
        "T4_literal": Hq,
        "sym": jac.dTm_dq - np.swapaxes(jac.dTm_dq, 1, 2),
    }


@dataclass
class Theorem2Report:
    samples: list[ConfigPoint]
    residuals: dict[str, np.ndarray]  # name -> (K,) max |residual| per sample
    meta: dict = field(default_factory=dict)

    @property
    def max(self) -> dict[str, float]:
        return {k: float(np.max(v, initial=0.0)) for k, v in self.residuals.items()}

    def passed(self, tol: float = 1e-6, conditions: Sequence[str] = ("T1", "T2", "T3")) -> bool:
        m = self.max
        return all(m[c] < tol for c in conditions)

    def write_csv(self, target) -> None:
        if isinstance(target, (str, Path)):
            with open(target, "w", newline="", encoding="utf-8") as fh:
                self.write_csv(fh)
            return
        n = self.samples[0].x.size if self.samples else 0
        N = self.samples[0].q.size if self.samples else 0
        writer = csv.writer(target, lineterminator="\n")
        writer.writerow(["condition"] + [f"x{m + 1}" for m in range(n)] + [f"q{i + 1}" for i in range(N)] + ["residual"])
        for name, vals in self.residuals.items():
            for pt, r in zip(self.samples, vals):
                writer.writerow([name] + [f"{v:.17g}" for v in (*pt.x, *pt.q, r)])


def check_theorem2_conditions(H: DWHamiltonian, T: PhaseSection, domain) -> Theorem2Report:
    """Evaluate T1-T4 on a DomainBox lattice or an explicit list of points."""
    pts = _samples(domain)
    acc: dict[str, list[float]] = {}
    for pt in pts:
        for name, arr in condition_residuals(H, T, pt).items():
            acc.setdefault(name, []).append(float(np.max(np.abs(arr), initial=0.0)))
    return Theorem2Report(pts, {k: np.array(v) for k, v in acc.items()}, {"section": T.name})


# -- projected distribution and integrability --------------------------------

def _projected_components(H: DWHamiltonian, T: PhaseSection, at, gauge=None) -> np.ndarray:
    """(n, n + N) components of the projected vectors Z~_mu on E."""
    X = build_hamiltonian_nvector(H, T.point(at), gauge)
    n = T.n
    return np.concatenate([np.eye(n), np.asarray(X.zq, dtype=float)], axis=1)


def project_distribution(H: DWHamiltonian, T: PhaseSection, at, gauge=None) -> list[Multivector]:
    """Z~_mu = d_{x^mu} + (dH/dp^mu_i o T) d_{q^i} as vectors on E."""
    chart = ChartSpec(T.n, T.N).config_chart
    comps = _projected_components(H, T, at, gauge)
    return [Multivector.from_components(chart, row) for row in comps]


@dataclass(frozen=True)
class FoliationReport:
    max_out_of_span: float
    per_sample: np.ndarray
    worst_commutator: np.ndarray | None

    def passed(self, tol: float = 1e-6) -> bool:
        return self.max_out_of_span < tol


def foliation_integrability_check(
    H: DWHamiltonian, T: PhaseSection, domain, step: float = DEFAULT_FD_STEP
) -> FoliationReport:
    """Frobenius test for the projected distribution.

    Commutators ``[Z~_a, Z~_b]`` use central differences of the component
    fields; their part outside span{Z~_lambda} is found by least squares.
    """
    pts = _samples(domain)
    n, N = T.n, T.N
    worst = None
    per = []
    for pt in pts:
        z = np.concatenate(_xq(pt))

        def comps(w):
            return _projected_components(H, T, ConfigPoint(w[:n], w[n:]))

        V = comps(z)
        dV = _central(comps, z, step)  # (n, n+N, n+N): [a, k, l] = d_l V_a^k
        out = 0.0
        for a, b in itertools.combinations(range(n), 2):
            br = dV[b] @ V[a] - dV[a] @ V[b]
            coef, *_ = np.linalg.lstsq(V.T, br, rcond=None)
            rest = br - V.T @ coef
            val = float(np.max(np.abs(rest)))
            if val > out:
                out = val
            if worst is None or val > float(np.max(np.abs(worst[1]))):
                worst = (br, rest)
        per.append(out)
    per_arr = np.array(per)
    return FoliationReport(
        float(np.max(per_arr, initial=0.0)),
        per_arr,
        None if worst is None else worst[0],
    )


# -- geometric formulation ---------------------------------------------------

def config_volume_forms(spec: ChartSpec) -> tuple[Form, list[Form]]:
    """d^n x and d^n x_mu on E."""
    chart = spec.config_chart
    vol = Form.basis(chart, *range(spec.n))
    return vol, [contract(Multivector.basis(chart, mu), vol) for mu in range(spec.n)]


def section_form(T: PhaseSection, at) -> Form:
    """T^mu_i dq^i ^ d^n x_mu + T_0 d^n x on E."""
    spec = ChartSpec(T.n, T.N)
    chart = spec.config_chart
    vol, vol_mu = config_volume_forms(spec)
    tm = T.momenta(at)
    out = vol * T.energy_component(at)
    for mu in range(T.n):
        for i in range(T.N):
            out = out + wedge(Form.basis(chart, T.n + i), vol_mu[mu]) * tm[mu, i]
    return out


def theta_pullback(T: PhaseSection, at) -> Form:
    """Theta at T(e) restricted to E (Theta has no momentum differentials)."""
    spec = ChartSpec(T.n, T.N)
    theta = build_theta(spec, T.point(at))
    chart = spec.config_chart
    dimE = spec.n + spec.N
    out = Form.zero(chart, spec.n)
    for key, v in theta.coeffs.items():
        if any(k >= dimE for k in key):
            raise AssertionError("Theta unexpectedly contains momentum differentials")
        out = out + Form.basis(chart, *key) * v
    return out


@dataclass(frozen=True)
class GeometricReport:
    dT: float
    dhT: float
    theta_dS: float | None
    coordinate_max: float
    mapping_error: float
    per_sample: np.ndarray  # (K, 2): geometric max, coordinate max

    def equivalent(self, tol: float = 1e-6) -> bool:
        geo = self.per_sample[:, 0] < tol
        coo = self.per_sample[:, 1] < tol
        return bool(np.all(geo == coo))


def geometric_form_check(
    H: DWHamiltonian,
    T: PhaseSection,
    domain,
    S: Optional[HJPotential] = None,
    step: float = DEFAULT_FD_STEP,
) -> GeometricReport:
    """Check dT = 0 and d(h o T) = 0 on E by finite differences.

    Also compares each coefficient against the coordinate residuals:
    the dq^i ^ d^n x coefficient of dT is ``-T3_i``, the dq^i and dx^mu
    coefficients of d(h o T) are ``-(T1_i - T3_i)`` and ``-T2_mu``, and
    for N >= 2 the dq^j ^ dq^i ^ d^n x_mu coefficients are the ``sym``
    residuals.  With ``S`` given, also checks Theta(dS) = d(S^mu d^n x_mu).
    """
    spec = ChartSpec(T.n, T.N)
    n, N = spec.n, spec.N
    chart = spec.config_chart
    vol, vol_mu = config_volume_forms(spec)

    def split(coords):
        return ConfigPoint(coords[:n], coords[n:])

    t_field = FormField(chart, n, lambda c: section_form(T, split(c)))

    def h_of_T(c):
        pt = split(c)
        return float(-H.value(pt.x, pt.q, T.momenta(pt)) - T.energy_component(pt))

    h_field = FormField(chart, 0, lambda c: Form.scalar(chart, h_of_T(c)))
    s_field = None
    if S is not None:
        def s_form(c):
            vals = S.value(split(c))
            out = Form.zero(chart, n - 1)
            for mu in range(n):
                out = out + vol_mu[mu] * vals[mu]
            return out

        s_field = FormField(chart, n - 1, s_form)

    rows = []
    g_dT = g_dh = g_th = 0.0
    coord_max = 0.0
    mapping = 0.0
    for pt in _samples(domain):
        c = np.concatenate(_xq(pt))
        dT = exterior_derivative(t_field, c, step, analytic=False)
        dh = exterior_derivative(h_field, c, step, analytic=False)
        res = condition_residuals(H, T, pt)

        predicted = Form.zero(chart, n + 1)
        for i in range(N):
            predicted = predicted + wedge(Form.basis(chart, n + i), vol) * (-res["T3"][i])
        for mu in range(n):
            for i in range(N):
                for j in range(i + 1, N):
                    # dq^j ^ dq^i ^ d^n x_mu carries d_j T^mu_i - d_i T^mu_j
                    term = wedge(wedge(Form.basis(chart, n + j), Form.basis(chart, n + i)), vol_mu[mu])
                    predicted = predicted + term * res["sym"][mu, i, j]
        pred_dh = np.concatenate([-res["T2"], -(res["T1"] - res["T3"])])
        dh_vec = np.array([dh[(k,)] for k in range(n + N)])
        mapping = max(mapping, (dT - predicted).max_abs(), float(np.max(np.abs(dh_vec - pred_dh))))

        geo = max(dT.max_abs(), float(np.max(np.abs(dh_vec))))
        coo = max(
            float(np.max(np.abs(res[k]), initial=0.0)) for k in ("T1", "T2", "T3", "sym")
        )
        g_dT = max(g_dT, dT.max_abs())
        g_dh = max(g_dh, float(np.max(np.abs(dh_vec))))
        coord_max = max(coord_max, coo)
        if s_field is not None:
            dS = exterior_derivative(s_field, c, step, analytic=False)
            g_th = max(g_th, (theta_pullback(T, pt) - dS).max_abs())
        rows.append((geo, coo))
    return GeometricReport(
        dT=g_dT,
        dhT=g_dh,
        theta_dS=g_th if s_field is not None else None,
        coordinate_max=coord_max,
        mapping_error=mapping,
        per_sample=np.array(rows).reshape(-1, 2),
    )


# -- adapted coordinates -----------------------------------------------------

def translate_fiber(
    H: DWHamiltonian,
    T: PhaseSection,
    f: Callable[[np.ndarray], np.ndarray],
    df: Callable[[np.ndarray], np.ndarray],
    ddf: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> tuple[DWHamiltonian, PhaseSection]:
    """Rewrite H and T in the fiber coordinates q' = q - f(x).

    ``f(x)`` has shape ``(N,)``, ``df(x)`` ``(N, n)`` with ``[i, mu] =
    d_mu f^i`` and ``ddf(x)`` ``(N, n, n)``.  Polymomenta are unchanged,
    ``H' = H(x, q' + f, p) - p^mu_i d_mu f^i`` and
    ``T_0' = T_0 + T^mu_i d_mu f^i``, so that h and Theta are preserved.
    Evaluators of the returned objects work on single points.
    """
    n, N = H.n, H.N

    def fx(x):
        return np.asarray(f(x), dtype=float).reshape(N)

    def dfx(x):
        return np.asarray(df(x), dtype=float).reshape(N, n)

    def ddfx(x):
        if ddf is not None:
            return np.asarray(ddf(x), dtype=float).reshape(N, n, n)
        return _central(dfx, np.asarray(x, dtype=float), T.fd_step)

    def value(x, q, p):
        return H.value(x, q + fx(x), p) - np.einsum("mi,im->", p, dfx(x))

    def grad_q(x, q, p):
        return H.grad_q(x, q + fx(x), p)

    def grad_p(x, q, p):
        return H.grad_p(x, q + fx(x), p) - dfx(x).T

    def grad_x(x, q, p):
        qq = q + fx(x)
        return (
            H.dx(x, qq, p)
            + np.einsum("i,iv->v", np.asarray(H.grad_q(x, qq, p)), dfx(x))
            - np.einsum("mi,imv->v", p, ddfx(x))
        )

    hess_p = None
    if H.hess_p is not None:
        hess_p = lambda x, q, p: H.hess_p(x, q + fx(x), p)  # noqa: E731
    Hn = DWHamiltonian(n, N, value, grad_q, grad_p, grad_x, hess_p, name=f"{H.name}'")

    def tmom(x, q):
        return T.momenta(ConfigPoint(x, q + fx(x)))

    def t0(x, q):
        pt = ConfigPoint(x, q + fx(x))
        return T.energy_component(pt) + float(np.einsum("mi,im->", T.momenta(pt), dfx(x)))

    def jacobian(x, q):
        pt = ConfigPoint(x, q + fx(x))
        j = T.partials(pt)
        tm = T.momenta(pt)
        d = dfx(x)
        dTm_dx = j.dTm_dx + np.einsum("mik,kv->miv", j.dTm_dq, d)
        dT0_dx = (
            j.dT0_dx
            + j.dT0_dq @ d
            + np.einsum("miv,im->v", dTm_dx, d)
            + np.einsum("mi,imv->v", tm, ddfx(x))
        )
        dT0_dq = j.dT0_dq + np.einsum("mij,im->j", j.dTm_dq, d)
        return SectionJacobian(dTm_dx, j.dTm_dq, dT0_dx, dT0_dq)

    Tn = PhaseSection(n, N, tmom, t0, jacobian, T.fd_step, name=f"{T.name}'")
    return Hn, Tn
