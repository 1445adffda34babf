"""Finite-difference reference solver for 1D convection-diffusion-reaction.

Each time step is split into three stages:

1. first-order upwind advection (explicit),
2. diffusion, Crank-Nicolson by default (tridiagonal LAPACK solve), or
   explicit FTCS on request,
3. bimolecular reactions with Heun sub-steps.

Node 0 is a Dirichlet inlet; the last node has a zero-gradient condition
implemented with a mirrored ghost node.  The solver keeps a per-species
mass budget so that conservation can be audited after the run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, Union

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import lapack

from .errors import ConfigError, StabilityError
from .transport_core import FlowEnv, TimeSeries

Inlet = Union[float, Callable[[NDArray], NDArray], None]


@dataclass(frozen=True)
class OracleGrid:
    """Uniform grid with ``nx`` cells on ``[0, x_max]``."""

    x_max: float
    nx: int
    dt: float
    t_max: float
    dt_out: float | None = None
    diffusion: str = "cn"

    def __post_init__(self):
        if self.nx < 32:
            raise ConfigError(f"nx must be >= 32, got {self.nx}")
        if not (self.x_max > 0 and self.dt > 0 and self.t_max > 0):
            raise ConfigError("x_max, dt and t_max must be positive")
        if self.diffusion not in ("cn", "explicit"):
            raise ConfigError(f"unknown diffusion scheme {self.diffusion!r}")

    @property
    def dx(self) -> float:
        return self.x_max / self.nx

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_max / self.dt - 1e-9))

    @property
    def stride(self) -> int:
        if self.dt_out is None:
            return 1
        return max(1, int(round(self.dt_out / self.dt)))

    def check(self, env: FlowEnv, diffusivities: Iterable[float]) -> None:
        cfl = env.v_eff * self.dt / self.dx
        if cfl > 1 + 1e-12:
            raise ConfigError(f"CFL number {cfl:.3f} exceeds 1")
        if self.diffusion == "explicit":
            for D in diffusivities:
                r = D * self.dt / self.dx**2
                if r > 0.5 + 1e-12:
                    raise ConfigError(f"diffusion number {r:.3f} exceeds 0.5 for explicit scheme")


@dataclass(frozen=True)
class Species:
    """One transported species.

    ``inlet`` is a constant, a vectorised function of time, or ``None`` for
    a clean-carrier inlet.  ``D`` overrides the environment's D_eff.
    ``initial`` is a constant or a vectorised function of position.
    """

    name: str
    inlet: Inlet = None
    D: float | None = None
    initial: float | Callable[[NDArray], NDArray] = 0.0

    def initial_profile(self, x: NDArray) -> NDArray:
        if callable(self.initial):
            return np.asarray(self.initial(x), dtype=float).reshape(x.shape)
        return np.full_like(x, float(self.initial))

    def boundary(self, t: NDArray) -> NDArray:
        if self.inlet is None:
            return np.zeros_like(t)
        if callable(self.inlet):
            return np.asarray(self.inlet(t), dtype=float).reshape(t.shape)
        return np.full_like(t, float(self.inlet))


@dataclass(frozen=True)
class Reaction:
    """``reactant_i + reactant_j -> product`` at rate ``k * C_i * C_j``.

    When ``catalytic`` is set, ``reactant_i`` acts as a catalyst and is
    not consumed.
    """

    reactant_i: str
    reactant_j: str
    product: str | None
    k: float
    catalytic: bool = False

    def __post_init__(self):
        if self.k < 0:
            raise ConfigError(f"rate constant must be >= 0, got {self.k}")


@dataclass(frozen=True)
class SpeciesSystem:
    species: tuple[Species, ...]
    reactions: tuple[Reaction, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "reactions", tuple(self.reactions))
        names = [s.name for s in self.species]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate species names")
        for r in self.reactions:
            for nm in (r.reactant_i, r.reactant_j, r.product):
                if nm is not None and nm not in names:
                    raise ConfigError(f"reaction references unknown species {nm!r}")

    def index(self, name: str) -> int:
        return [s.name for s in self.species].index(name)


class OracleResult(dict):
    """Mapping ``station -> {species: TimeSeries}`` with a mass budget."""

    def __init__(self, *args, budget=None, **kwargs):
        super().__init__(*args, **kwargs)
        self.budget = budget or {}

    def trace(self, station: float, species: str) -> TimeSeries:
        return self[station][species]


@dataclass
class _Budget:
    inflow: float = 0.0
    outflow: float = 0.0
    reaction: float = 0.0
    initial: float = 0.0
    final: float = 0.0

    def as_dict(self) -> dict:
        residual = self.final - self.initial - self.inflow + self.outflow - self.reaction
        scale = max(abs(self.inflow), abs(self.initial), abs(self.final), 1e-300)
        return {"inflow": self.inflow, "outflow": self.outflow, "reaction": self.reaction,
                "initial": self.initial, "final": self.final,
                "residual": residual, "relative_error": abs(residual) / scale}


def default_grid(env: FlowEnv, probe_max: float, t_max: float, dx: float = 1e-6,
                 cfl: float = 0.25, dt_out: float | None = 1e-2,
                 D_max: float | None = None) -> OracleGrid:
    """Grid used for acceptance runs: wide enough that the outlet never
    contaminates the probes, ``dt = cfl * dx / v_eff``."""
    D = max(env.D_eff, D_max or 0.0)
    x_max = probe_max + 10.0 * math.sqrt(D * t_max)
    nx = max(32, int(math.ceil(x_max / dx)))
    x_max = nx * dx
    if env.v_eff > 0:
        dt = cfl * dx / env.v_eff
    else:
        dt = cfl * dx * dx / D
    if dt_out is not None:
        # keep the output interval an integer number of steps
        dt = dt_out / max(1, math.ceil(dt_out / dt))
    return OracleGrid(x_max=x_max, nx=nx, dt=dt, t_max=t_max, dt_out=dt_out)


class _CrankNicolson:
    """Prefactored ``(I - r/2 L)`` for one diffusivity."""

    def __init__(self, r: float, n: int):
        self.r = r
        main = np.full(n, 1.0 + r)
        lower = np.full(n - 1, -0.5 * r)
        upper = np.full(n - 1, -0.5 * r)
        lower[-1] = -r  # ghost node mirrors c[N-1]
        self.lu = lapack.dgttrf(lower, main, upper)
        if self.lu[-1] != 0:
            raise StabilityError("tridiagonal factorisation failed", operation="pde_solve")

    def solve(self, rhs: NDArray) -> NDArray:
        dl, d, du, du2, ipiv, _ = self.lu
        out, info = lapack.dgttrs(dl, d, du, du2, ipiv, rhs)[:2]
        return out


def _laplacian(c: NDArray) -> NDArray:
    """Second difference on nodes 1..N, rows are species."""
    lap = np.empty_like(c[:, 1:])
    lap[:, :-1] = c[:, :-2] - 2 * c[:, 1:-1] + c[:, 2:]
    lap[:, -1] = 2 * c[:, -2] - 2 * c[:, -1]
    return lap


def _react(c: NDArray, reactions: Sequence[tuple[int, int, int | None, float, bool]],
           dt: float, n_sub: int) -> None:
    h = dt / n_sub

    def rates(state):
        d = np.zeros_like(state)
        for i, j, p, k, cat in reactions:
            r = k * state[i] * state[j]
            if not cat:
                d[i] -= r
            d[j] -= r
            if p is not None:
                d[p] += r
        return d

    for _ in range(n_sub):
        k1 = rates(c)
        k2 = rates(c + h * k1)
        c += 0.5 * h * (k1 + k2)


def _weights(n: int, dx: float) -> NDArray:
    w = np.full(n, dx)
    w[0] = 0.0  # inlet node is boundary data, not stored mass
    w[-1] = 0.5 * dx
    return w


def solve(system: SpeciesSystem, env: FlowEnv, grid: OracleGrid,
          probes: Sequence[float]) -> OracleResult:
    """Integrate ``system`` on ``grid`` and sample every species at ``probes``."""
    names = [s.name for s in system.species]
    Ds = np.array([env.D_eff if s.D is None else s.D for s in system.species], dtype=float)
    if np.any(Ds < 0):
        raise ConfigError("diffusivities must be >= 0")
    grid.check(env, Ds)
    probes = [float(p) for p in probes]
    if any(p < 0 or p > grid.x_max for p in probes):
        raise ConfigError(f"probe outside [0, {grid.x_max}]")

    n_sp, nx, dx, dt = len(names), grid.nx, grid.dx, grid.dt
    n_steps, stride = grid.n_steps, grid.stride
    v = env.v_eff
    cfl = v * dt / dx

    t_all = dt * np.arange(n_steps + 1)
    bc = np.stack([s.boundary(t_all) for s in system.species])
    c = np.zeros((n_sp, nx + 1))
    x_nodes = dx * np.arange(nx + 1)
    for i, s in enumerate(system.species):
        c[i, 1:] = s.initial_profile(x_nodes[1:])
    c[:, 0] = bc[:, 0]
    c_scale = max(float(np.max(np.abs(bc))), float(np.max(np.abs(c))), 1e-300)

    rx = [(names.index(r.reactant_i), names.index(r.reactant_j),
           None if r.product is None else names.index(r.product), r.k, r.catalytic)
          for r in system.reactions if r.k > 0]
    k_max = max((r[3] for r in rx), default=0.0)
    n_sub = max(1, int(math.ceil(k_max * c_scale * dt / 0.1))) if rx else 0

    # group species by diffusivity so each distinct D is factored once
    groups: dict[float, list[int]] = {}
    for i, D in enumerate(Ds):
        if D > 0:
            groups.setdefault(float(D), []).append(i)
    solvers = {D: _CrankNicolson(D * dt / dx**2, nx) for D in groups} if grid.diffusion == "cn" else {}

    # linear interpolation weights for the probes
    pos = np.array(probes) / dx
    lo = np.minimum(np.floor(pos).astype(int), nx - 1)
    frac = pos - lo

    n_out = n_steps // stride + 1
    samples = np.empty((len(probes), n_sp, n_out))
    t_out = np.empty(n_out)

    def record(slot: int, t: float) -> None:
        samples[:, :, slot] = (c[:, lo] * (1 - frac) + c[:, lo + 1] * frac).T
        t_out[slot] = t

    w = _weights(nx + 1, dx)
    budgets = [_Budget() for _ in names]
    mass = c @ w
    for b, m in zip(budgets, mass):
        b.initial = float(m)
    inflow = np.zeros(n_sp)
    outflow = np.zeros(n_sp)
    reaction = np.zeros(n_sp)

    record(0, 0.0)
    slot = 1
    for n in range(n_steps):
        c0_old = c[:, 0].copy()
        c0_new = bc[:, n + 1]
        if v > 0:
            inflow += v * dt * c0_old
            outflow += v * dt * 0.5 * (c[:, -1] + c[:, -2])
            c[:, 1:] -= cfl * (c[:, 1:] - c[:, :-1])
        # diffusion
        if grid.diffusion == "cn":
            for D, idx in groups.items():
                sol = solvers[D]
                r = sol.r
                block = c[idx]
                c1_old = block[:, 1].copy()
                rhs = block[:, 1:] + 0.5 * r * _laplacian(block)
                rhs[:, 0] += 0.5 * r * c0_new[idx]
                new = sol.solve(rhs.T).T
                c[idx, 1:] = new
                inflow[idx] += D * dt / (2 * dx) * ((c0_new[idx] - new[:, 0]) + (c0_old[idx] - c1_old))
        else:
            for D, idx in groups.items():
                r = D * dt / dx**2
                block = c[idx]
                inflow[idx] += D * dt / dx * (block[:, 0] - block[:, 1])
                c[idx, 1:] = block[:, 1:] + r * _laplacian(block)
        c[:, 0] = c0_new
        if rx:
            before = c @ w
            _react(c[:, 1:], rx, dt, n_sub)
            reaction += c @ w - before
        if (n + 1) % stride == 0:
            if np.min(c) < -1e-9 * c_scale:
                where = np.unravel_index(np.argmin(c), c.shape)
                raise StabilityError(
                    f"negative concentration {c[where]:.3g} for {names[where[0]]} at "
                    f"x={where[1] * dx:.3g} m, t={(n + 1) * dt:.4g} s", operation="pde_solve")
            record(slot, (n + 1) * dt)
            slot += 1

    final = c @ w
    for i, b in enumerate(budgets):
        b.inflow, b.outflow, b.reaction, b.final = (float(inflow[i]), float(outflow[i]),
                                                    float(reaction[i]), float(final[i]))
    meta = {"dx": dx, "dt": dt, "n_sub": n_sub, "diffusion": grid.diffusion}
    result = OracleResult(budget={nm: b.as_dict() for nm, b in zip(names, budgets)})
    for p_i, x in enumerate(probes):
        result[x] = {nm: TimeSeries(t_out[:slot], samples[p_i, s_i, :slot], x, "oracle",
                                    species=nm, meta=meta)
                     for s_i, nm in enumerate(names)}
    return result


# ---------------------------------------------------------------------------
# convergence


@dataclass
class ConvergenceReport:
    dx: list[float]
    orders: dict[str, dict[float, list[float]]] = field(default_factory=dict)
    errors: dict[str, dict[float, list[float]]] = field(default_factory=dict)
    monotone: dict[str, dict[float, bool]] = field(default_factory=dict)

    def mean_order(self, species: str, station: float | None = None) -> float:
        per = self.orders[species]
        station = next(iter(per)) if station is None else station
        return float(np.mean(per[station]))


def convergence_report(system: SpeciesSystem, env: FlowEnv, probes: Sequence[float],
                       levels: Sequence[OracleGrid],
                       exact: Callable[[str, float, NDArray], NDArray] | None = None
                       ) -> ConvergenceReport:
    """Observed orders of accuracy over successively refined grids.

    With ``exact`` the errors are measured against it; otherwise the
    differences between consecutive levels are used (Richardson style),
    which needs one extra level.  Each level should halve both dx and dt
    and share the same output times.
    """
    levels = list(levels)
    if len(levels) < 3:
        raise ConfigError("convergence_report needs at least 3 refinement levels")
    runs = [solve(system, env, g, probes) for g in levels]
    report = ConvergenceReport(dx=[g.dx for g in levels])
    for sp in system.species:
        report.orders[sp.name] = {}
        report.errors[sp.name] = {}
        report.monotone[sp.name] = {}
        for x in probes:
            base_t = runs[0][float(x)][sp.name].t
            traces = [np.interp(base_t, r[float(x)][sp.name].t, r[float(x)][sp.name].c) for r in runs]
            if exact is not None:
                ref = exact(sp.name, float(x), base_t)
                errs = [float(np.max(np.abs(tr - ref))) for tr in traces]
            else:
                errs = [float(np.max(np.abs(a - b))) for a, b in zip(traces[:-1], traces[1:])]
            ratios = [report.dx[i] / report.dx[i + 1] for i in range(len(errs) - 1)]
            orders = [math.log(e0 / e1) / math.log(q) if e0 > 0 and e1 > 0 else float("nan")
                      for e0, e1, q in zip(errs[:-1], errs[1:], ratios)]
            report.errors[sp.name][float(x)] = errs
            report.orders[sp.name][float(x)] = orders
            report.monotone[sp.name][float(x)] = all(e1 < e0 for e0, e1 in zip(errs[:-1], errs[1:]))
    return report
