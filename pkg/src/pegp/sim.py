"""Synthetic ground truth: LWR and relaxation-ARZ finite volumes, exact
linear advection, and probe trajectories advected through a speed field.

Solvers run on a grid ``refine`` times finer than the evaluation grid in
space, with CFL-limited substeps in time.  Results are averaged onto cells
``refine`` times finer in both x and t (kept for trajectory emission) and
onto the evaluation cells (space-time cell averages).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .data import Field, SpaceTimeGrid, TrajectorySet, make_rng
from .physics import FundamentalDiagram, PressureLaw, default_pressure


@dataclass(frozen=True)
class SimScenario:
    grid: SpaceTimeGrid
    fd: FundamentalDiagram = field(default_factory=FundamentalDiagram)
    rho_base: float = 0.025
    # (x_start, x_end, rho) blocks laid over the base density
    plateaus: tuple = ((200.0, 350.0, 0.1),)
    boundary: str = "periodic"
    boundary_rho: tuple | None = None  # (upstream, downstream) for dirichlet
    tau: float = 3.0
    cfl: float = 0.9
    refine: int = 4
    dt_sim: float | None = None
    pressure: PressureLaw | None = None
    initial_profile: Callable | None = None  # rho(x) overriding the plateaus
    initial_speed: Callable | None = None  # ARZ only; equilibrium when None
    # (cycle_s, green_s): a signal at the downstream edge of a dirichlet road;
    # during red the downstream ghost cell sits at rho_jam (zero supply)
    signal: tuple | None = None

    def __post_init__(self):
        if self.boundary not in ("periodic", "dirichlet"):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        if not 0.0 < self.cfl <= 1.0:
            raise ValueError("cfl must lie in (0, 1]")
        if self.refine < 1:
            raise ValueError("refine must be >= 1")
        if self.signal is not None:
            if self.boundary != "dirichlet":
                raise ValueError("a downstream signal needs dirichlet boundaries")
            cycle, green = self.signal
            if not 0 < green <= cycle:
                raise ValueError("signal needs 0 < green <= cycle")
        rho = self.initial_density(self.fine_x())
        if np.any(rho < 0) or np.any(rho > self.fd.rho_jam):
            raise ValueError("initial density must lie in [0, rho_jam]")

    @property
    def pressure_law(self) -> PressureLaw:
        return self.pressure if self.pressure is not None else default_pressure(self.fd)

    @property
    def dx_sim(self) -> float:
        return self.grid.dx / self.refine

    def fine_x(self) -> np.ndarray:
        n = self.grid.nx * self.refine
        return self.grid.x_min + (np.arange(n) + 0.5) * self.dx_sim

    def initial_density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.initial_profile is not None:
            return np.asarray(self.initial_profile(x), dtype=float)
        rho = np.full_like(x, self.rho_base)
        for a, b, r in self.plateaus:
            rho[(x >= a) & (x < b)] = r
        return rho

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "fd": {"v_f": self.fd.v_f, "rho_jam": self.fd.rho_jam},
            "rho_base": self.rho_base,
            "plateaus": [list(p) for p in self.plateaus],
            "boundary": self.boundary,
            "tau": self.tau,
            "cfl": self.cfl,
            "refine": self.refine,
            "signal": list(self.signal) if self.signal is not None else None,
        }

    def downstream_red(self, t: float) -> bool:
        if self.signal is None:
            return False
        cycle, green = self.signal
        return (t - self.grid.t_min) % cycle >= green


def default_scenario(**overrides) -> SimScenario:
    """Stop-and-go road: 600 m x 300 s, dx = 10 m, dt = 5 s.

    Free inflow at 0.025 veh/m, two initial jam plateaus and a 60 s signal
    cycle (36 s green) at the downstream edge, so queues keep forming and
    discharging for the whole horizon.
    """
    grid = SpaceTimeGrid(0.0, 600.0, 0.0, 300.0, 10.0, 5.0)
    base = SimScenario(grid, rho_base=0.025, plateaus=((150.0, 250.0, 0.09), (400.0, 500.0, 0.1)),
                       boundary="dirichlet", boundary_rho=(0.025, 0.025), signal=(60.0, 36.0))
    return replace(base, **overrides)


def ring_scenario(**overrides) -> SimScenario:
    """Periodic 600 m ring with one jam plateau (mass-conservation checks)."""
    grid = SpaceTimeGrid(0.0, 600.0, 0.0, 300.0, 10.0, 5.0)
    return replace(SimScenario(grid), **overrides)


def _substeps(scenario: SimScenario, max_speed: float) -> tuple[float, int]:
    """Simulation step and substeps per evaluation step."""
    limit = scenario.cfl * scenario.dx_sim / max(max_speed, 1e-12)
    if scenario.dt_sim is not None:
        if scenario.dt_sim > limit * (1 + 1e-12):
            raise ValueError(
                f"CFL violated: dt_sim={scenario.dt_sim:g} s exceeds {limit:g} s; "
                f"use dt_sim <= {limit:g}"
            )
        n = max(1, int(round(scenario.grid.dt / scenario.dt_sim)))
        if n % scenario.refine:
            raise ValueError("grid.dt / dt_sim must be a multiple of refine")
    else:
        n = max(1, math.ceil(scenario.grid.dt / limit))
        n = scenario.refine * math.ceil(n / scenario.refine)
    return scenario.grid.dt / n, n


def _coarsen(fine: np.ndarray, refine: int) -> np.ndarray:
    """Average groups of ``refine`` fine cells along axis 0."""
    return fine.reshape(-1, refine, *fine.shape[1:]).mean(axis=1)


def godunov_flux(rho_l, rho_r, fd: FundamentalDiagram):
    """Godunov flux for the concave Greenshields flux.

    The exact Riemann solution for concave q gives
    F(rho_l, rho_r) = min(D(rho_l), S(rho_r)) with demand
    D(r) = q(min(r, rho_c)) and supply S(r) = q(max(r, rho_c)).
    """
    rc = fd.critical_density
    demand = fd.flux(np.minimum(rho_l, rc))
    supply = fd.flux(np.maximum(rho_r, rc))
    return np.minimum(demand, supply)


def _ghosts(u, scenario: SimScenario, left, right):
    if scenario.boundary == "periodic":
        return np.concatenate([u[-1:], u, u[:1]])
    return np.concatenate([[left], u, [right]])


def godunov_step(rho, dt, scenario: SimScenario, left=None, right=None):
    ext = _ghosts(rho, scenario, left, right)
    F = godunov_flux(ext[:-1], ext[1:], scenario.fd)
    return rho - dt / scenario.dx_sim * (F[1:] - F[:-1])


@dataclass
class SimResult:
    field: Field
    fine: Field  # refine-times finer in both x and t
    dt_sim: float
    mass: np.ndarray  # total mass after every substep (periodic diagnostics)


def godunov_lwr(scenario: SimScenario, return_result: bool = False):
    """First-order Godunov solution of d_t rho + d_x q(rho) = 0."""
    fd = scenario.fd
    dt, nsub = _substeps(scenario, fd.v_f)  # max |q'| = v_f for Greenshields
    rho = scenario.initial_density(scenario.fine_x())
    left, right = _dirichlet_values(scenario, rho)
    per = nsub // scenario.refine
    nt = scenario.grid.nt * scenario.refine
    rho_acc = np.zeros((len(rho), nt))
    q_acc = np.zeros((len(rho), nt))
    mass = [rho.sum() * scenario.dx_sim]
    t = scenario.grid.t_min
    for j in range(nt):
        for _ in range(per):
            # trapezoidal time average over each fine time cell
            r0 = rho
            r_bc = fd.rho_jam if scenario.downstream_red(t) else right
            rho = godunov_step(rho, dt, scenario, left, r_bc)
            t += dt
            rho_acc[:, j] += 0.5 * (r0 + rho) / per
            q_acc[:, j] += 0.5 * (fd.flux(r0) + fd.flux(rho)) / per
            mass.append(rho.sum() * scenario.dx_sim)
    out = _pack(scenario, rho_acc, q_acc)
    if return_result:
        return SimResult(out[0], out[1], dt, np.asarray(mass))
    return out[0]


def _dirichlet_values(scenario: SimScenario, rho0):
    if scenario.boundary != "dirichlet":
        return None, None
    if scenario.boundary_rho is not None:
        return tuple(float(r) for r in scenario.boundary_rho)
    return float(rho0[0]), float(rho0[-1])


def _pack(scenario: SimScenario, rho_acc, q_acc) -> tuple[Field, Field]:
    """Coarsen accumulated fine fields; speed is flow over density (Edie)."""
    g = scenario.grid
    r = scenario.refine
    fine_grid = SpaceTimeGrid(g.x_min, g.x_max, g.t_min, g.t_max, g.dx / r, g.dt / r)
    rho_c = _coarsen(_coarsen(rho_acc, r).T, r).T
    q_c = _coarsen(_coarsen(q_acc, r).T, r).T

    def speed(r, q):
        v = np.full_like(r, scenario.fd.v_f)
        ok = r > 1e-12
        v[ok] = q[ok] / r[ok]
        return np.maximum(v, 0.0)

    coarse = Field(g, np.maximum(rho_c, 0.0), speed(rho_c, q_c))
    fine = Field(fine_grid, np.maximum(rho_acc, 0.0), speed(rho_acc, q_acc))
    return coarse, fine


def linear_advection_field(grid: SpaceTimeGrid, lambda0: float, rho0: float,
                           amplitude: float, fd: FundamentalDiagram | None = None,
                           profile: Callable | None = None, n_waves: int = 1) -> Field:
    """Exact travelling wave rho = rho0 + d(x - lambda0 t), periodic in x.

    ``d`` defaults to a sine with ``n_waves`` periods over the domain.  The
    speed field is the linearized v = V(rho0) + V'(rho0) (rho - rho0).
    """
    fd = fd if fd is not None else FundamentalDiagram()
    L = grid.x_max - grid.x_min
    if profile is None:
        def profile(s):
            return amplitude * np.sin(2.0 * np.pi * n_waves * s / L)
    X, T = np.meshgrid(grid.x_centers, grid.t_centers, indexing="ij")
    s = np.mod(X - grid.x_min - lambda0 * (T - grid.t_min), L)
    d = profile(s)
    rho = rho0 + d
    v = float(fd.speed(rho0)) + float(fd.dspeed(rho0)) * d
    return Field(grid, rho, v)


# --------------------------------------------------------------------------
# Relaxation ARZ
# --------------------------------------------------------------------------

def relax_speed(v, v_eq, dt, tau):
    """Exact solution of dv/dt = (V - v) / tau over one step."""
    return v_eq + (v - v_eq) * np.exp(-dt / tau)


def _arz_flux(rho, y, pl: PressureLaw):
    w = np.where(rho > 1e-14, y / np.maximum(rho, 1e-14), 0.0)
    v = w - pl(rho)
    return rho * v, y * v, v


def arz_max_speed(rho, v, pl: PressureLaw) -> float:
    """Largest characteristic speed magnitude, max(|v|, |v - rho P'(rho)|)."""
    l2 = v - rho * pl.derivative(rho)
    return float(max(np.max(np.abs(v)), np.max(np.abs(l2))))


def arz_step(rho, y, dt, scenario: SimScenario, bc_rho=None, bc_y=None, wall=False):
    """One Rusanov step on the conserved pair (rho, rho w), w = v + P(rho).

    ``bc_rho``/``bc_y`` are (upstream, downstream) ghost values for open
    roads; ``wall`` closes the downstream interface (red signal).
    """
    pl = scenario.pressure_law
    rho_e = _ghosts(rho, scenario, *(bc_rho or (None, None)))
    y_e = _ghosts(y, scenario, *(bc_y or (None, None)))
    f1, f2, v = _arz_flux(rho_e, y_e, pl)
    lam = np.maximum(np.abs(v), np.abs(v - rho_e * pl.derivative(rho_e)))
    s = np.maximum(lam[:-1], lam[1:])
    F1 = 0.5 * (f1[:-1] + f1[1:]) - 0.5 * s * (rho_e[1:] - rho_e[:-1])
    F2 = 0.5 * (f2[:-1] + f2[1:]) - 0.5 * s * (y_e[1:] - y_e[:-1])
    if wall:
        F1[-1] = 0.0
        F2[-1] = 0.0
    k = dt / scenario.dx_sim
    return rho - k * (F1[1:] - F1[:-1]), y - k * (F2[1:] - F2[:-1])


def arz_relax(scenario: SimScenario, return_result: bool = False):
    """Operator splitting: Rusanov ARZ transport, then exact relaxation."""
    if scenario.tau <= 0:
        raise ValueError("tau must be positive")
    fd = scenario.fd
    pl = scenario.pressure_law
    x = scenario.fine_x()
    rho = scenario.initial_density(x)
    v = fd.speed(rho) if scenario.initial_speed is None else np.asarray(scenario.initial_speed(x), float)
    y = rho * (v + pl(rho))
    bc_rho = bc_y = None
    if scenario.boundary == "dirichlet":
        lr, rr = _dirichlet_values(scenario, rho)
        bc_rho = (lr, rr)
        bc_y = (lr * (fd.speed(lr) + pl(lr)), rr * (fd.speed(rr) + pl(rr)))
    # w = v + P(rho) is bounded by its initial/boundary maximum, so density
    # stays below P^{-1}(w_max) and the wave speeds below this a-priori bound
    w_max = float(np.max(v + pl(rho)))
    if bc_y is not None:
        w_max = max(w_max, *(yy / max(rr, 1e-14) for yy, rr in zip(bc_y, bc_rho)))
    rho_max = float(pl.inverse(w_max))
    max_speed = max(w_max, rho_max * float(pl.derivative(rho_max)), fd.v_f)
    dt, nsub = _substeps(scenario, 1.05 * max_speed)
    per = nsub // scenario.refine
    nt = scenario.grid.nt * scenario.refine
    rho_acc = np.zeros((len(rho), nt))
    q_acc = np.zeros((len(rho), nt))
    mass = [rho.sum() * scenario.dx_sim]
    t = scenario.grid.t_min
    for j in range(nt):
        for _ in range(per):
            r0, q0 = rho, rho * v
            rho, y = arz_step(rho, y, dt, scenario, bc_rho, bc_y, scenario.downstream_red(t))
            t += dt
            rho = np.maximum(rho, 0.0)
            w = np.where(rho > 1e-14, y / np.maximum(rho, 1e-14), 0.0)
            v = relax_speed(w - pl(rho), fd.speed(rho), dt, scenario.tau)
            y = rho * (v + pl(rho))
            if arz_max_speed(rho, v, pl) * dt > scenario.dx_sim * (1 + 1e-9):
                raise ValueError("CFL violated during ARZ integration; lower cfl or dt_sim")
            rho_acc[:, j] += 0.5 * (r0 + rho) / per
            q_acc[:, j] += 0.5 * (q0 + rho * v) / per
            mass.append(rho.sum() * scenario.dx_sim)
    out = _pack(scenario, rho_acc, q_acc)
    if return_result:
        return SimResult(out[0], out[1], dt, np.asarray(mass))
    return out[0]


# --------------------------------------------------------------------------
# Trajectories
# --------------------------------------------------------------------------

def _bilinear(f: Field, x, t, periodic: bool):
    """Bilinear speed at (x, t) from cell-centre values, clamped in t."""
    g = f.grid
    u = (np.asarray(x) - g.x_min) / g.dx - 0.5
    s = np.clip((np.asarray(t) - g.t_min) / g.dt - 0.5, 0, g.nt - 1)
    j0 = np.clip(np.floor(s).astype(int), 0, g.nt - 2)
    ft = s - j0
    if periodic:
        i0 = np.floor(u).astype(int)
        fx = u - i0
        i0 = np.mod(i0, g.nx)
        i1 = np.mod(i0 + 1, g.nx)
    else:
        u = np.clip(u, 0, g.nx - 1)
        i0 = np.clip(np.floor(u).astype(int), 0, g.nx - 2)
        fx = u - i0
        i1 = i0 + 1
    V = f.v
    return ((1 - fx) * (1 - ft) * V[i0, j0] + fx * (1 - ft) * V[i1, j0]
            + (1 - fx) * ft * V[i0, j0 + 1] + fx * ft * V[i1, j0 + 1])


def _inverse_cdf(grid_pts, density, edges, u):
    """Map uniforms in [0, total) through a piecewise-constant density."""
    cum = np.concatenate([[0.0], np.cumsum(density * np.diff(edges))])
    k = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, len(density) - 1)
    dens = np.where(density[k] > 0, density[k], 1.0)
    return edges[k] + (u - cum[k]) / dens


def emit_trajectories(f: Field, n_vehicles: int | None = None, seed: int = 0,
                      periodic: bool = True, h: float = 0.5) -> TrajectorySet:
    """Advect vehicles through the speed field of ``f`` with Heun (RK2) steps.

    Start points follow the vehicle measure: the initial density along x plus,
    for open boundaries, the inflow rate at the upstream edge over time.
    ``n_vehicles`` trajectories are drawn by stratified sampling of that
    measure; each then stands for ``total / n_vehicles`` real vehicles
    (``n_vehicles=None`` uses the rounded total, i.e. weight close to 1).
    Samples are taken every ``h`` seconds on a common clock.
    """
    g = f.grid
    x_edges = g.x_min + np.arange(g.nx + 1) * g.dx
    t_edges = g.t_min + np.arange(g.nt + 1) * g.dt
    rho0 = f.rho[:, 0]
    m_init = float(np.sum(rho0) * g.dx)
    if periodic:
        inflow = np.zeros(g.nt)
    else:
        inflow = f.rho[0, :] * f.v[0, :]
    m_in = float(np.sum(inflow) * g.dt)
    total = m_init + m_in
    n = int(round(total)) if n_vehicles is None else int(n_vehicles)
    if n < 1:
        raise ValueError("need at least one vehicle")
    rng = make_rng(seed)
    u = (np.arange(n) + rng.random(n)) / n * total
    from_init = u < m_init
    x0 = np.empty(n)
    t0 = np.empty(n)
    x0[from_init] = _inverse_cdf(None, rho0, x_edges, u[from_init])
    t0[from_init] = g.t_min
    if (~from_init).any():
        t0[~from_init] = _inverse_cdf(None, inflow, t_edges, u[~from_init] - m_init)
        x0[~from_init] = g.x_min
    # put late starters on the common clock
    k0 = np.ceil((t0 - g.t_min) / h - 1e-9).astype(int)
    tk = g.t_min + k0 * h
    late = tk > t0
    x0[late] = x0[late] + _bilinear(f, x0[late], t0[late], periodic) * (tk[late] - t0[late])
    n_steps = int(math.floor((g.t_max - g.t_min) / h + 1e-9))
    L = g.x_max - g.x_min

    ids, ts, xs, vs = [], [], [], []
    x = x0.copy()
    for k in range(n_steps):
        t = g.t_min + k * h
        active = (k >= k0)
        if not periodic:
            active &= x <= g.x_max
        if not active.any():
            continue
        a = np.flatnonzero(active)
        v1 = _bilinear(f, x[a], t, periodic)
        ids.append(a)
        ts.append(np.full(len(a), t))
        xs.append(np.mod(x[a] - g.x_min, L) + g.x_min if periodic else x[a].copy())
        vs.append(v1)
        xp = x[a] + h * v1
        v2 = _bilinear(f, xp, t + h, periodic)
        x[a] = x[a] + 0.5 * h * (v1 + v2)
    return TrajectorySet(np.concatenate(ids), np.concatenate(ts), np.concatenate(xs),
                         np.concatenate(vs), weight=total / n)
