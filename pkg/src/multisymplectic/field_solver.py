"""Method-of-lines integration of the De Donder-Weyl equations in 1+1 dimensions.

The evolved unknowns are phi and pi^0 on a periodic grid.  The spatial
polymomentum pi^1 is not evolved: the spatial De Donder-Weyl equation
``dH/dp^1 = d_x phi`` is solved pointwise for it at the half nodes
``x_{j+1/2}``, where the one-sided difference of phi is a centered
difference.  Time stepping is classical RK4.

The mechanics mode (n = 1, one node, no spatial terms) integrates Hamilton's
equations through the same interface.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Optional

import numpy as np

from .dedonder_weyl import NEWTON_MAX_ITER, NEWTON_TOL, LiftReport, SingularityError, lift_tangent_from_patch
from .theories import DWHamiltonian, LagrangianDensity

CSV_COLUMNS = ("t", "x", "phi", "pi0", "pi1", "energy_density")


class DivergenceError(ArithmeticError):
    """Non-finite or exploding state; ``t`` is the time of the failing step."""

    def __init__(self, message: str, t: float) -> None:
        super().__init__(message)
        self.t = t


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid and time stepping parameters.

    ``mechanics=True`` describes the single-node n = 1 reduction; ``dx`` is
    then unused.  ``enforce_cfl=False`` skips the ``dt <= cfl * dx`` guard,
    which is only useful for provoking instabilities on purpose.
    """

    Nx: int
    dx: float
    dt: float
    T: float
    cfl: float = 1.0
    x0: float = 0.0
    mechanics: bool = False
    enforce_cfl: bool = True

    def __post_init__(self) -> None:
        if self.dt <= 0 or self.T < 0:
            raise ValueError("dt must be positive and T non-negative")
        if self.mechanics:
            if self.Nx != 1:
                raise ValueError("mechanics mode uses a single node")
            return
        if self.Nx < 8:
            raise ValueError(f"need at least 8 grid points, got {self.Nx}")
        if self.dx <= 0:
            raise ValueError("dx must be positive")
        if not 0 < self.cfl <= 1:
            raise ValueError(f"cfl must lie in (0, 1], got {self.cfl}")
        if self.enforce_cfl and self.dt > self.cfl * self.dx * (1 + 1e-12):
            raise ValueError(
                f"CFL guard: dt = {self.dt} exceeds cfl * dx = {self.cfl * self.dx}"
            )

    @classmethod
    def periodic(cls, Nx: int, length: float, dt_over_dx: float, T: float, **kw) -> "GridSpec":
        dx = length / Nx
        return cls(Nx=Nx, dx=dx, dt=dt_over_dx * dx, T=T, **kw)

    @classmethod
    def for_mechanics(cls, dt: float, T: float) -> "GridSpec":
        return cls(Nx=1, dx=1.0, dt=dt, T=T, mechanics=True)

    @property
    def length(self) -> float:
        return self.Nx * self.dx

    @property
    def nodes(self) -> np.ndarray:
        if self.mechanics:
            return np.zeros(1)
        return self.x0 + self.dx * np.arange(self.Nx)

    @property
    def steps(self) -> int:
        return max(0, math.ceil(self.T / self.dt - 1e-9))

    @property
    def step_size(self) -> float:
        """dt shrunk so that an integer number of steps lands exactly on T."""
        return self.T / self.steps if self.steps else self.dt


@dataclass(frozen=True)
class FieldState:
    t: float
    phi: np.ndarray
    pi0: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "phi", np.array(self.phi, dtype=float).reshape(-1))
        object.__setattr__(self, "pi0", np.array(self.pi0, dtype=float).reshape(-1))
        if self.phi.shape != self.pi0.shape:
            raise ValueError("phi and pi0 must have the same shape")

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.phi)) and np.all(np.isfinite(self.pi0)))


@dataclass
class Trajectory:
    """Sampled states and diagnostics of a run."""

    grid: GridSpec
    x: np.ndarray
    times: np.ndarray
    phi: np.ndarray
    pi0: np.ndarray
    pi1: np.ndarray
    energy: np.ndarray
    energy_density: np.ndarray
    dt: float
    sample_every: int
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> FieldState:
        return FieldState(self.times[-1], self.phi[-1], self.pi0[-1])

    def energy_drift(self) -> float:
        """max_t |E(t) - E(0)| / |E(0)|."""
        e0 = self.energy[0]
        return float(np.max(np.abs(self.energy - e0)) / max(abs(e0), 1e-300))

    def write_csv(self, target: str | Path | IO[str]) -> None:
        if isinstance(target, (str, Path)):
            with open(target, "w", newline="", encoding="utf-8") as fh:
                self.write_csv(fh)
            return
        writer = csv.writer(target, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for s, t in enumerate(self.times):
            for j, xj in enumerate(self.x):
                writer.writerow(
                    [
                        f"{v:.17g}"
                        for v in (
                            t,
                            xj,
                            self.phi[s, j],
                            self.pi0[s, j],
                            self.pi1[s, j],
                            self.energy_density[s, j],
                        )
                    ]
                )


# -- spatial operators -------------------------------------------------------

def _coords(t: float, xs: np.ndarray) -> np.ndarray:
    return np.stack([np.full_like(xs, t), xs], axis=-1)


def _pmom(pi0: np.ndarray, pi1: np.ndarray) -> np.ndarray:
    return np.stack([pi0, pi1], axis=-1)[..., None]


def solve_pi1(H: DWHamiltonian, X: np.ndarray, phi: np.ndarray, pi0: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Solve dH/dp^1(X, phi, pi0, pi1) = target for pi1 node by node (Newton)."""
    pi1 = np.zeros_like(target)
    q = phi[:, None]
    scale = max(1.0, float(np.max(np.abs(target), initial=0.0)))
    for _ in range(NEWTON_MAX_ITER + 1):
        pm = _pmom(pi0, pi1)
        resid = np.asarray(H.grad_p(X, q, pm))[:, 1, 0] - target
        if float(np.max(np.abs(resid), initial=0.0)) < NEWTON_TOL * scale:
            return pi1
        if H.hess_p is not None:
            slope = np.asarray(H.hess_p(X, q, pm))[:, 1, 0, 1, 0]
        else:
            eps = 1e-6 * np.maximum(1.0, np.abs(pi1))
            up = np.asarray(H.grad_p(X, q, _pmom(pi0, pi1 + eps)))[:, 1, 0]
            dn = np.asarray(H.grad_p(X, q, _pmom(pi0, pi1 - eps)))[:, 1, 0]
            slope = (up - dn) / (2 * eps)
        if np.any(slope == 0) or not np.all(np.isfinite(slope)):
            break
        pi1 = pi1 - resid / slope
    raise SingularityError("reconstruction of pi^1 from d_x phi did not converge")


@dataclass(frozen=True)
class _Stencil:
    """Half-node quantities shared by the right-hand side and the energy."""

    Xn: np.ndarray
    Xh: np.ndarray
    phi_h: np.ndarray
    pi0_h: np.ndarray
    pi1_h: np.ndarray


def _stencil(H: DWHamiltonian, t: float, xs: np.ndarray, dx: float, phi, pi0) -> _Stencil:
    up_phi = np.roll(phi, -1)
    grad = (up_phi - phi) / dx
    phi_h = 0.5 * (phi + up_phi)
    pi0_h = 0.5 * (pi0 + np.roll(pi0, -1))
    Xh = _coords(t, xs + 0.5 * dx)
    pi1_h = solve_pi1(H, Xh, phi_h, pi0_h, grad)
    return _Stencil(_coords(t, xs), Xh, phi_h, pi0_h, pi1_h)


def _field_rhs(H: DWHamiltonian, t: float, xs: np.ndarray, dx: float, phi, pi0):
    st = _stencil(H, t, xs, dx, phi, pi0)
    pi1_n = 0.5 * (st.pi1_h + np.roll(st.pi1_h, 1))
    div1 = (st.pi1_h - np.roll(st.pi1_h, 1)) / dx
    pm = _pmom(pi0, pi1_n)
    q = phi[:, None]
    dphi = np.asarray(H.grad_p(st.Xn, q, pm))[:, 0, 0]
    dpi0 = -np.asarray(H.grad_q(st.Xn, q, pm))[:, 0] - div1
    return dphi, dpi0


def _mechanics_rhs(H: DWHamiltonian, t: float, phi, pi0):
    X = np.array([[t]])
    q = phi[:, None]
    pm = pi0[:, None, None]
    dphi = np.asarray(H.grad_p(X, q, pm))[:, 0, 0]
    dpi0 = -np.asarray(H.grad_q(X, q, pm))[:, 0]
    return dphi, dpi0


def _check_hamiltonian(H: DWHamiltonian, grid: GridSpec) -> None:
    if H.N != 1:
        raise ValueError("the field solver handles a single scalar field (N = 1)")
    if grid.mechanics and H.n != 1:
        raise ValueError("mechanics mode needs an n = 1 Hamiltonian")
    if not grid.mechanics and H.n != 2:
        raise ValueError("field mode needs an n = 2 Hamiltonian (1+1 dimensions)")


def _rhs(H: DWHamiltonian, grid: GridSpec, t: float, phi, pi0):
    if grid.mechanics:
        return _mechanics_rhs(H, t, phi, pi0)
    return _field_rhs(H, t, grid.nodes, grid.dx, phi, pi0)


def _rk4(H: DWHamiltonian, grid: GridSpec, t: float, phi, pi0, dt: float):
    a1, b1 = _rhs(H, grid, t, phi, pi0)
    a2, b2 = _rhs(H, grid, t + 0.5 * dt, phi + 0.5 * dt * a1, pi0 + 0.5 * dt * b1)
    a3, b3 = _rhs(H, grid, t + 0.5 * dt, phi + 0.5 * dt * a2, pi0 + 0.5 * dt * b2)
    a4, b4 = _rhs(H, grid, t + dt, phi + dt * a3, pi0 + dt * b3)
    phi = phi + (dt / 6.0) * (a1 + 2 * a2 + 2 * a3 + a4)
    pi0 = pi0 + (dt / 6.0) * (b1 + 2 * b2 + 2 * b3 + b4)
    return phi, pi0


def step(H: DWHamiltonian, s: FieldState, grid: GridSpec, dt: Optional[float] = None) -> FieldState:
    """Advance one RK4 step of length ``dt`` (default ``grid.dt``)."""
    _check_hamiltonian(H, grid)
    if not s.is_finite():
        raise DivergenceError("state is not finite", s.t)
    dt = grid.dt if dt is None else dt
    phi, pi0 = _rk4(H, grid, s.t, s.phi, s.pi0, dt)
    new = FieldState(s.t + dt, phi, pi0)
    if not new.is_finite():
        raise DivergenceError(f"non-finite state after step at t = {new.t:.6g}", new.t)
    return new


def diagnostics(H: DWHamiltonian, grid: GridSpec, s: FieldState):
    """(pi1 at nodes, energy density at nodes, total energy) of a state.

    The energy density is ``H - p^1 dH/dp^1`` with ``p^1`` from the
    constraint; for L = (phi_t^2 - phi_x^2)/2 - V it is
    ``(pi0^2 + phi_x^2)/2 + V``.  The gradient part lives on half nodes
    and is split evenly onto the neighbouring nodes.
    """
    if grid.mechanics:
        X = np.array([[s.t]])
        e = np.asarray(H.value(X, s.phi[:, None], s.pi0[:, None, None]))
        return np.zeros_like(s.phi), e, float(e[0])
    xs = grid.nodes
    st = _stencil(H, s.t, xs, grid.dx, s.phi, s.pi0)
    zeros_n = np.zeros_like(s.phi)
    e_nodes = np.asarray(H.value(st.Xn, s.phi[:, None], _pmom(s.pi0, zeros_n)))
    qh = st.phi_h[:, None]
    pm_h = _pmom(st.pi0_h, st.pi1_h)
    k_half = (
        np.asarray(H.value(st.Xh, qh, pm_h))
        - np.asarray(H.value(st.Xh, qh, _pmom(st.pi0_h, zeros_n)))
        - st.pi1_h * np.asarray(H.grad_p(st.Xh, qh, pm_h))[:, 1, 0]
    )
    density = e_nodes + 0.5 * (k_half + np.roll(k_half, 1))
    pi1_n = 0.5 * (st.pi1_h + np.roll(st.pi1_h, 1))
    total = grid.dx * float(np.sum(e_nodes) + np.sum(k_half))
    return pi1_n, density, total


def evolve(
    H: DWHamiltonian,
    s0: FieldState,
    grid: GridSpec,
    sample_every: Optional[int] = None,
    blowup: float = 1e8,
) -> Trajectory:
    """Integrate from ``s0`` to ``s0.t + grid.T`` and record sampled states.

    ``sample_every`` defaults to roughly 100 samples per run; the final
    state is always recorded.  A state exceeding ``blowup`` times its
    initial magnitude is treated as divergent.
    """
    _check_hamiltonian(H, grid)
    if s0.phi.shape != (grid.Nx,):
        raise ValueError(f"state has {s0.phi.size} nodes, grid has {grid.Nx}")
    steps = grid.steps
    dt = grid.step_size
    if sample_every is None:
        sample_every = max(1, steps // 100)
    ref = max(1.0, float(np.max(np.abs(s0.phi))), float(np.max(np.abs(s0.pi0))))

    records: list[tuple[FieldState, tuple]] = []

    def record(state: FieldState) -> None:
        try:
            records.append((state, diagnostics(H, grid, state)))
        except SingularityError as exc:
            raise SingularityError(f"{exc} (t = {state.t:.6g})") from exc

    state = s0
    record(state)
    for k in range(1, steps + 1):
        try:
            state = step(H, state, grid, dt)
        except SingularityError as exc:
            raise SingularityError(f"{exc} (t = {state.t + dt:.6g})") from exc
        # t0 + k dt rather than repeated addition, so sample times do not drift
        state = FieldState(s0.t + k * dt, state.phi, state.pi0)
        if max(np.max(np.abs(state.phi)), np.max(np.abs(state.pi0))) > blowup * ref:
            raise DivergenceError(f"solution blew up at t = {state.t:.6g}", state.t)
        if k % sample_every == 0 or k == steps:
            record(state)

    return Trajectory(
        grid=grid,
        x=grid.nodes,
        times=np.array([s.t for s, _ in records]),
        phi=np.array([s.phi for s, _ in records]),
        pi0=np.array([s.pi0 for s, _ in records]),
        pi1=np.array([d[0] for _, d in records]),
        energy=np.array([d[2] for _, d in records]),
        energy_density=np.array([d[1] for _, d in records]),
        dt=dt,
        sample_every=sample_every,
        meta={"integrator": "dw-rk4", "hamiltonian": H.name},
    )


def lift_solution_tangent(H: DWHamiltonian, traj: Trajectory, sample: int, node: int) -> LiftReport:
    """Lift the sampled solution at (sample, node) to P and check its tangent plane.

    Time derivatives use the neighbouring samples, so ``sample`` must be an
    interior sample with uniform spacing on both sides; space is periodic.
    """
    if traj.grid.mechanics:
        raise ValueError("lift_solution_tangent needs a field trajectory")
    S, Nx = traj.phi.shape
    if not 0 < sample < S - 1:
        raise ValueError(f"sample {sample} is on the temporal boundary [0, {S - 1}]")
    ht = traj.times[sample] - traj.times[sample - 1]
    if not math.isclose(traj.times[sample + 1] - traj.times[sample], ht, rel_tol=1e-9):
        raise ValueError("non-uniform sample spacing around the requested sample")
    cols = [(node + d) % Nx for d in (-1, 0, 1)]
    rows = [sample - 1, sample, sample + 1]
    phi = traj.phi[np.ix_(rows, cols)][..., None]
    pmom = np.stack([traj.pi0[np.ix_(rows, cols)], traj.pi1[np.ix_(rows, cols)]], axis=-1)[..., None]
    x0 = (traj.times[sample], traj.x[node])
    return lift_tangent_from_patch(H, x0, phi, pmom, (ht, traj.grid.dx))


# -- independent Euler-Lagrange oracle ---------------------------------------

def euler_lagrange_oracle(
    L: LagrangianDensity,
    s0: FieldState,
    grid: GridSpec,
    sample_every: Optional[int] = None,
) -> Trajectory:
    """Leapfrog for phi_tt = phi_xx + dL/dq, assuming L = (phi_t^2 - phi_x^2)/2 - V.

    Shares no code with :func:`evolve`: it works on the second-order
    Euler-Lagrange equation and never forms polymomenta.  ``pi0`` in the
    result is the centered time difference of phi.
    """
    if L.N != 1 or L.n != (1 if grid.mechanics else 2):
        raise ValueError("the oracle handles one scalar field in 1+1 dimensions or mechanics")
    steps = grid.steps
    dt = grid.step_size
    if sample_every is None:
        sample_every = max(1, steps // 100)
    xs = grid.nodes
    dx = grid.dx
    zero_v = np.zeros((xs.size, L.n, 1))

    def accel(t: float, u: np.ndarray) -> np.ndarray:
        X = np.stack([np.full_like(xs, t)] + ([xs] if not grid.mechanics else []), axis=-1)
        force = np.asarray(L.grad_q(X, u[:, None], zero_v))[:, 0]
        if grid.mechanics:
            return force
        return (np.roll(u, -1) - 2.0 * u + np.roll(u, 1)) / (dx * dx) + force

    def potential(t: float, u: np.ndarray) -> np.ndarray:
        X = np.stack([np.full_like(xs, t)] + ([xs] if not grid.mechanics else []), axis=-1)
        return -np.asarray(L.value(X, u[:, None], zero_v))

    t0 = s0.t
    prev = s0.phi.copy()
    cur = prev + dt * s0.pi0 + 0.5 * dt * dt * accel(t0, prev)
    samples: list[tuple[float, np.ndarray, np.ndarray]] = [(t0, prev, s0.pi0.copy())]
    for k in range(1, steps + 1):
        nxt = 2.0 * cur - prev + dt * dt * accel(t0 + k * dt, cur)
        if not (np.all(np.isfinite(nxt))):
            raise DivergenceError(f"oracle diverged at t = {t0 + (k + 1) * dt:.6g}", t0 + (k + 1) * dt)
        if k % sample_every == 0 or k == steps:
            samples.append((t0 + k * dt, cur, (nxt - prev) / (2.0 * dt)))
        prev, cur = cur, nxt

    phis = np.array([s[1] for s in samples])
    vels = np.array([s[2] for s in samples])
    if grid.mechanics:
        pi1 = np.zeros_like(phis)
        dens = np.array([0.5 * v * v + potential(t, u) for t, u, v in samples])
        energy = dens[:, 0]
    else:
        pi1 = -(np.roll(phis, -1, axis=1) - np.roll(phis, 1, axis=1)) / (2 * dx)
        fwd = (np.roll(phis, -1, axis=1) - phis) / dx
        grad2 = 0.5 * fwd * fwd
        dens = np.array(
            [0.5 * v * v + potential(t, u) for t, u, v in samples]
        ) + 0.5 * (grad2 + np.roll(grad2, 1, axis=1))
        energy = dx * dens.sum(axis=1)
    return Trajectory(
        grid=grid,
        x=xs,
        times=np.array([s[0] for s in samples]),
        phi=phis,
        pi0=vels,
        pi1=pi1,
        energy=energy,
        energy_density=dens,
        dt=dt,
        sample_every=sample_every,
        meta={"integrator": "el-leapfrog", "lagrangian": L.name},
    )


# -- reference solutions -----------------------------------------------------

def plane_wave(amplitude: float, k: float, mass: float, x, t):
    """Exact Klein-Gordon solution phi = A cos(k x - w t), w^2 = k^2 + m^2, and pi0 = phi_t."""
    w = math.sqrt(k * k + mass * mass)
    arg = k * np.asarray(x) - w * t
    return amplitude * np.cos(arg), amplitude * w * np.sin(arg)


def standing_wave(amplitude: float, k: float, mass: float, x, t):
    """Exact Klein-Gordon solution phi = A cos(k x) cos(w t), and pi0 = phi_t."""
    w = math.sqrt(k * k + mass * mass)
    cx = np.cos(k * np.asarray(x))
    return amplitude * cx * math.cos(w * t), -amplitude * w * cx * math.sin(w * t)


def discrete_omega(k: float, mass: float, dx: float) -> float:
    """Frequency of a Fourier mode under the compact 3-point Laplacian."""
    kh = 2.0 * math.sin(0.5 * k * dx) / dx
    return math.sqrt(kh * kh + mass * mass)
