"""Splitting integrators with the stiff 1/eps^2 linear part solved exactly.

The linear flow is exp(-i t calA(eps xi) / eps^2) = sum_j exp(-i t lambda_j / eps^2) Pi_j
per Fourier mode; the nonlinear flow dU/dt = B(U, U) is exact whenever B never
reads the components it writes (true for Klein-Gordon).
"""
from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field as dc_field
from typing import List, Optional

import numpy as np

from .fourier import Field, Grid, sobolev_norm_array
from .model import HyperbolicSystem, SpectralDecomposition
from .wkb import WkbSolution, state_and_remainder

__all__ = [
    "SolverConfig",
    "Trajectory",
    "ConvergenceResult",
    "linear_flow",
    "linear_flow_table",
    "nonlinear_substep",
    "evolve",
    "evolve_perturbation",
    "self_convergence",
    "DEFAULT_C_DT",
]

DEFAULT_C_DT = 1.0 / 40.0
BLOWUP_FACTOR = 1e6


@dataclass(frozen=True)
class SolverConfig:
    t_final: float
    dt: Optional[float] = None
    c_dt: float = DEFAULT_C_DT
    scheme: str = "strang"
    dealias: bool = True
    record_every: int = 0  # 0: first and last state only
    sigma: float = 2.0

    def __post_init__(self):
        if self.t_final < 0:
            raise ValueError("t_final must be >= 0")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.c_dt <= 0.1:
            raise ValueError("c_dt must lie in (0, 1/10]")
        if self.scheme not in ("strang", "lie"):
            raise ValueError("scheme must be 'strang' or 'lie'")

    def steps(self, eps: float) -> tuple:
        """(number of steps, step size) so that the steps land exactly on t_final."""
        dt = self.dt if self.dt is not None else self.c_dt * eps**2
        if self.t_final == 0:
            return 0, dt
        n = max(1, math.ceil(self.t_final / dt - 1e-9))
        return n, self.t_final / n

    def with_(self, **kw) -> "SolverConfig":
        d = dict(self.__dict__)
        d.update(kw)
        return SolverConfig(**d)


@dataclass
class Trajectory:
    times: List[float] = dc_field(default_factory=list)
    snapshots: List[Field] = dc_field(default_factory=list)
    norm_series: List[float] = dc_field(default_factory=list)
    status: str = "ok"
    last_valid_time: float = 0.0
    steps: int = 0
    dt: float = 0.0
    runtime: float = 0.0

    @property
    def final(self) -> Field:
        return self.snapshots[-1]

    def record(self, t: float, grid: Grid, data: np.ndarray, sigma: float):
        if self.times and t <= self.times[-1]:
            raise ValueError("times must increase")
        self.times.append(float(t))
        self.snapshots.append(Field(grid, data.copy()))
        self.norm_series.append(sobolev_norm_array(grid, data, sigma))
        self.last_valid_time = float(t)


def linear_flow_table(decomp: SpectralDecomposition, grid: Grid, eps: float, t: float) -> np.ndarray:
    """Per-mode propagator sum_j exp(-i t lambda_j(eps xi)/eps^2) Pi_j(eps xi)."""
    xi = eps * grid.wavenumbers.reshape(-1, grid.d)
    lam = decomp.lambdas(xi)
    P = decomp.projector_stack(xi)
    E = np.einsum("jn,jnab->nab", np.exp(-1j * t * lam / eps**2), P)
    E = E.reshape(grid.shape + (decomp.N, decomp.N))
    E[grid.nyquist_mask] = 0.0
    return E


def _apply_modes(grid: Grid, table: np.ndarray, data: np.ndarray) -> np.ndarray:
    axes = tuple(range(1, grid.d + 1))
    c = np.fft.fftn(data, axes=axes)
    flat = c.reshape(c.shape[0], -1)
    out = np.einsum("pij,jp->ip", table.reshape(-1, *table.shape[-2:]), flat)
    return np.fft.ifftn(out.reshape(c.shape), axes=axes)


def linear_flow(system: HyperbolicSystem, decomp: SpectralDecomposition, eps: float, t: float, field: Field) -> Field:
    if field.components != system.N:
        raise ValueError("field does not match the system dimension")
    table = linear_flow_table(decomp, field.grid, eps, t)
    return Field(field.grid, _apply_modes(field.grid, table, field.data), field.real)


def _nonlinear_data(system: HyperbolicSystem, dt: float, data: np.ndarray) -> np.ndarray:
    if system.bilinear_nilpotent:
        return data + dt * system.bilinear(data, data)
    # generic fallback: classical RK4 with 8 substeps
    h = dt / 8
    f = lambda y: system.bilinear(y, y)
    y = data
    with np.errstate(over="ignore", invalid="ignore"):  # blow-up is reported by the caller
        for _ in range(8):
            k1 = f(y)
            k2 = f(y + 0.5 * h * k1)
            k3 = f(y + 0.5 * h * k2)
            k4 = f(y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def nonlinear_substep(system: HyperbolicSystem, dt: float, field: Field) -> Field:
    """Flow of dU/dt = B(U, U) over dt (exact for Klein-Gordon)."""
    return Field(field.grid, _nonlinear_data(system, dt, field.data), field.real)


def _run(
    grid: Grid,
    data: np.ndarray,
    cfg: SolverConfig,
    eps: float,
    decomp: SpectralDecomposition,
    nonlinear,
    real: bool,
) -> Trajectory:
    n, dt = cfg.steps(eps)
    traj = Trajectory(dt=dt)
    start = _time.perf_counter()
    E = linear_flow_table(decomp, grid, eps, dt)
    if cfg.dealias:
        E = E * grid.dealias_mask[..., None, None]
    traj.record(0.0, grid, data, cfg.sigma)
    ref = max(traj.norm_series[0], 1e-300)
    every = cfg.record_every if cfg.record_every > 0 else max(n, 1)
    taken = 0
    for k in range(n):
        taken = k + 1
        t0 = k * dt
        if cfg.scheme == "strang":
            data = nonlinear(data, t0, 0.5 * dt)
            data = _apply_modes(grid, E, data)
            data = nonlinear(data, t0 + 0.5 * dt, 0.5 * dt)
        else:
            data = nonlinear(data, t0, dt)
            data = _apply_modes(grid, E, data)
        if real:
            data = data.real.astype(complex)
        step = k + 1
        if step % every == 0 or step == n:
            if not np.all(np.isfinite(data)):
                traj.status = "blowup"
                break
            t = step * dt if step < n else cfg.t_final
            norm = sobolev_norm_array(grid, data, cfg.sigma)
            if not np.isfinite(norm) or norm > BLOWUP_FACTOR * ref:
                traj.status = "blowup"
                break
            traj.record(t, grid, data, cfg.sigma)
        elif step % 64 == 0 and not np.all(np.isfinite(data)):
            traj.status = "blowup"
            break
    traj.steps = taken
    traj.runtime = _time.perf_counter() - start
    return traj


def evolve(
    system: HyperbolicSystem,
    decomp: SpectralDecomposition,
    eps: float,
    U0: Field,
    cfg: SolverConfig,
    keep_real: bool = False,
) -> Trajectory:
    """Integrate dU/dt + A(dx)U/eps + A0 U/eps^2 = B(U, U) by operator splitting.

    With ``keep_real`` the imaginary round-off is dropped after every step; by
    default it is kept so that reality preservation stays observable.
    """
    if U0.components != system.N:
        raise ValueError("initial field does not match the system dimension")
    grid = U0.grid.with_eps(eps)

    def nonlinear(data, t, h):
        return _nonlinear_data(system, h, data)

    return _run(grid, U0.data.astype(complex), cfg, eps, decomp, nonlinear, keep_real)


def evolve_perturbation(
    system: HyperbolicSystem,
    decomp: SpectralDecomposition,
    eps: float,
    wkb: WkbSolution,
    psi_eps: Field,
    cfg: SolverConfig,
) -> Trajectory:
    """Integrate the equation for Udot = (U - U_a)/eps:

        dUdot/dt + A(dx)Udot/eps + A0 Udot/eps^2 = 2B(U_a, Udot) + eps B(Udot, Udot) + eps R^eps.

    The substep freezes U_a and R^eps at the substep midpoint and integrates the
    resulting pointwise ODE exactly (B is nilpotent for Klein-Gordon).
    """
    if not system.bilinear_nilpotent:
        raise NotImplementedError("perturbation substep requires a nilpotent bilinear form")
    grid = psi_eps.grid.with_eps(eps)

    def nonlinear(data, t, h):
        tm = t + 0.5 * h
        Ua, R = state_and_remainder(wkb, tm, eps)
        b = eps * R
        Bf = system.bilinear
        a = data
        incr = (
            2 * Bf(Ua, a) * h
            + Bf(Ua, b) * h**2
            + eps * (Bf(a, a) * h + Bf(a, b) * h**2 + Bf(b, b) * h**3 / 3)
        )
        return a + b * h + incr

    return _run(grid, psi_eps.data.astype(complex), cfg, eps, decomp, nonlinear, False)


@dataclass
class ConvergenceResult:
    order: Optional[float]
    differences: tuple
    status: str  # "ok" | "machine-noise" | "non-monotone"


def self_convergence(
    system: HyperbolicSystem,
    decomp: SpectralDecomposition,
    eps: float,
    U0: Field,
    cfg: SolverConfig,
    noise_floor: float = 1e-12,
) -> ConvergenceResult:
    """Richardson triplet dt, dt/2, dt/4: order = log2(|u1-u2| / |u2-u4|)."""
    _, dt = cfg.steps(eps)
    finals = []
    for k in range(3):
        run = evolve(system, decomp, eps, U0, cfg.with_(dt=dt / 2**k, record_every=0))
        if run.status != "ok":
            return ConvergenceResult(None, (), "blowup")
        finals.append(run.final.data)
    grid = U0.grid.with_eps(eps)
    ref = sobolev_norm_array(grid, finals[-1], cfg.sigma)
    d1 = sobolev_norm_array(grid, finals[0] - finals[1], cfg.sigma)
    d2 = sobolev_norm_array(grid, finals[1] - finals[2], cfg.sigma)
    if max(d1, d2) <= noise_floor * max(ref, 1.0):
        return ConvergenceResult(None, (d1, d2), "machine-noise")
    if not d2 < d1:
        return ConvergenceResult(None, (d1, d2), "non-monotone")
    return ConvergenceResult(math.log2(d1 / d2), (d1, d2), "ok")
