"""WKB approximate solution of the Klein-Gordon system.

The leading profile solves the free Schroedinger equation ``2i g_t + Lap g = 0``
with ``g0(0) = (phi0 + i psi0) / 2``.  The amplitudes (0 <= n <= 3, p >= 0; the
p < 0 ones are complex conjugates) are

    U01 = g0 (0, -i, 1)          U11 = (grad g0, 0, 0)
    U20 = -2 lam (0, 0, |g0|^2)  U21 = (0, dt g0, 0)
    U22 = (lam/3)(0, -2i g0^2, g0^2)
    U32 = (2 lam/3)(g0 grad g0, 0, 0)

and ``U_a = sum_n eps^n sum_p exp(-i p t / eps^2) U_{n,p}``.  Time derivatives
of g0 are exact Fourier multipliers, never finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .fourier import Field, Grid, forward_array, inverse_array, sobolev_norm_array
from .model import CASCADE_TO_UNIT, HyperbolicSystem, kg_system

__all__ = [
    "Envelope",
    "WkbSolution",
    "AmplitudeSet",
    "ResidualResult",
    "propagate_envelope",
    "build_amplitudes",
    "evaluate_Ua",
    "cascade_identities",
    "dt_Ua",
    "residual",
    "initial_defect",
    "kg_initial_state",
    "gaussian_data",
    "FAMILIES",
]

FAMILIES = ((0, 1), (1, 1), (2, 0), (2, 1), (2, 2), (3, 2))


def _spectral(grid: Grid, data: np.ndarray) -> np.ndarray:
    c = np.fft.fftn(data, axes=tuple(range(-grid.d, 0)))
    c[..., grid.nyquist_mask] = 0.0
    return c


def _physical(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(coeffs, axes=tuple(range(-grid.d, 0)))


@dataclass(frozen=True, eq=False)
class Envelope:
    """Exact Fourier flow of 2i g_t + Lap g = 0 from a scalar initial field."""

    g0_initial: Field

    def __post_init__(self):
        if self.g0_initial.components != 1:
            raise ValueError("the envelope is scalar")

    @classmethod
    def from_data(cls, phi0: Field, psi0: Field) -> "Envelope":
        return cls(Field(phi0.grid, 0.5 * (phi0.data + 1j * psi0.data)))

    @property
    def grid(self) -> Grid:
        return self.g0_initial.grid

    def _k2(self):
        return np.sum(self.grid.wavenumbers**2, axis=-1)

    def spectral(self, t: float, time_derivatives: int = 0) -> np.ndarray:
        """FFT coefficients of d^k g0 / dt^k at time t (Nyquist zeroed)."""
        c0 = _spectral(self.grid, self.g0_initial.data[0])
        factor = -0.5j * self._k2()
        return c0 * np.exp(factor * t) * factor**time_derivatives

    def at(self, t: float, time_derivatives: int = 0) -> np.ndarray:
        return _physical(self.grid, self.spectral(t, time_derivatives))

    def gradient(self, t: float, time_derivatives: int = 0) -> np.ndarray:
        """(d, M, ..., M) spatial gradient of d^k g0/dt^k."""
        c = self.spectral(t, time_derivatives)
        xi = np.moveaxis(self.grid.wavenumbers, -1, 0)
        return _physical(self.grid, 1j * xi * c[None])


def propagate_envelope(env: Envelope, t: float) -> Field:
    if t < 0:
        raise ValueError("t must be nonnegative")
    return Field(env.grid, env.at(t))


@dataclass(frozen=True, eq=False)
class AmplitudeSet:
    """U_{n,p}(t) for p >= 0 (and their time derivatives); p < 0 by conjugation."""

    t: float
    d: int
    values: Dict[Tuple[int, int], np.ndarray]
    derivatives: Dict[Tuple[int, int], np.ndarray]

    def get(self, n: int, p: int, derivative: bool = False) -> Optional[np.ndarray]:
        table = self.derivatives if derivative else self.values
        if p < 0:
            val = table.get((n, -p))
            return None if val is None else np.conj(val)
        return table.get((n, p))

    def keys(self):
        out = []
        for n, p in sorted(self.values):
            out.append((n, p))
            if p != 0:
                out.append((n, -p))
        return out


def build_amplitudes(env: Envelope, t: float, lambda_c: float) -> AmplitudeSet:
    grid = env.grid
    d = grid.d
    N = d + 2
    v, u = d, d + 1
    shape = (N,) + grid.shape
    g, gt, gtt = env.at(t), env.at(t, 1), env.at(t, 2)
    grad, gradt = env.gradient(t), env.gradient(t, 1)
    lam = float(lambda_c)

    vals, ders = {}, {}

    def new():
        return np.zeros(shape, dtype=complex)

    a, b = new(), new()
    a[v], a[u] = -1j * g, g
    b[v], b[u] = -1j * gt, gt
    vals[(0, 1)], ders[(0, 1)] = a, b

    a, b = new(), new()
    a[:d], b[:d] = grad, gradt
    vals[(1, 1)], ders[(1, 1)] = a, b

    a, b = new(), new()
    a[u] = -2 * lam * np.abs(g) ** 2
    b[u] = -2 * lam * 2 * np.real(np.conj(g) * gt)
    vals[(2, 0)], ders[(2, 0)] = a, b

    a, b = new(), new()
    a[v], b[v] = gt, gtt
    vals[(2, 1)], ders[(2, 1)] = a, b

    a, b = new(), new()
    a[v], a[u] = (lam / 3) * (-2j) * g**2, (lam / 3) * g**2
    b[v], b[u] = (lam / 3) * (-2j) * 2 * g * gt, (lam / 3) * 2 * g * gt
    vals[(2, 2)], ders[(2, 2)] = a, b

    a, b = new(), new()
    a[:d] = (2 * lam / 3) * g[None] * grad
    b[:d] = (2 * lam / 3) * (gt[None] * grad + g[None] * gradt)
    vals[(3, 2)], ders[(3, 2)] = a, b
    return AmplitudeSet(t, d, vals, ders)


@dataclass(frozen=True, eq=False)
class WkbSolution:
    envelope: Envelope
    lambda_c: float = 1.0
    K_a: int = 2
    K: int = 1

    @property
    def grid(self) -> Grid:
        return self.envelope.grid

    @property
    def system(self) -> HyperbolicSystem:
        return kg_system(self.grid.d, self.lambda_c)

    def amplitudes(self, t: float) -> AmplitudeSet:
        return build_amplitudes(self.envelope, t, self.lambda_c)

    def leading_profile(self, t: float, p: int = 1, time_derivative: bool = False) -> np.ndarray:
        """g_p with U_{0,p} = g_p e_p for the unit generator e_p (p = +-1)."""
        g = self.envelope.at(t, 1 if time_derivative else 0) * CASCADE_TO_UNIT
        if p == 1:
            return g
        if p == -1:
            return np.conj(g)
        raise ValueError("leading harmonics are p = +-1")

    def order_sums(self, t: float, eps: float, derivative: bool = False):
        """U_n = sum_p exp(-i p t/eps^2) U_{n,p} for n = 0..3 (list of arrays).

        With ``derivative`` also returns d/dt of each U_n, including the
        explicit phase derivatives.
        """
        amps = self.amplitudes(t)
        shape = (self.grid.d + 2,) + self.grid.shape
        U = [np.zeros(shape, dtype=complex) for _ in range(4)]
        dU = [np.zeros(shape, dtype=complex) for _ in range(4)]
        for n, p in amps.keys():
            phase = np.exp(-1j * p * t / eps**2)
            val = amps.get(n, p)
            U[n] += phase * val
            if derivative:
                dU[n] += phase * (amps.get(n, p, derivative=True) - 1j * p / eps**2 * val)
        return (U, dU) if derivative else U


def cascade_identities(wkb: WkbSolution, t: float, samples: int = 32, seed: int = 0) -> Dict[str, float]:
    """Relative residuals of the order-by-order WKB equations at time t.

    Each entry is ||lhs - rhs||_max / max(1, ||lhs||_max, ||rhs||_max).
    """
    sys = wkb.system
    grid = wkb.grid
    amps = wkb.amplitudes(t)
    A0 = sys.A0
    N = sys.N
    I = np.eye(N)

    def mat(m, x):
        return np.einsum("ab,b...->a...", m, x)

    def rel(lhs, rhs):
        scale = max(1.0, float(np.max(np.abs(lhs))), float(np.max(np.abs(rhs))))
        return float(np.max(np.abs(lhs - rhs))) / scale

    U = amps.get
    B = sys.bilinear
    zero = np.zeros((N,) + grid.shape, complex)
    out = {}
    out["envelope mass and H^s"] = max(
        abs(sobolev_norm_array(grid, wkb.envelope.at(t)[None], s) - sobolev_norm_array(grid, wkb.envelope.at(0.0)[None], s))
        / max(sobolev_norm_array(grid, wkb.envelope.at(0.0)[None], s), 1e-300)
        for s in (0.0, 2.0)
    )
    rng = np.random.default_rng(seed)
    worst = 0.0
    for tt, eps in zip(rng.uniform(0, 10, samples), rng.uniform(0.01, 1, samples)):
        Ua = evaluate_Ua(wkb, float(tt), float(eps)).data
        worst = max(worst, float(np.max(np.abs(Ua.imag))) / max(float(np.max(np.abs(Ua))), 1e-300))
    out["reality of U_a"] = worst
    out["order -2: (-ip + A0) U_0p = 0"] = max(rel(mat(-1j * p * I + A0, U(0, p)), zero) for p in (1, -1))
    out["order -1: A(dx) U_01 + (-i + A0) U_11 = 0"] = rel(apply_A_dx(sys, grid, U(0, 1)), -mat(-1j * I + A0, U(1, 1)))
    out["order 0, p=1: dt U_01 + A(dx) U_11 + (-i + A0) U_21 = 0"] = rel(
        U(0, 1, derivative=True) + apply_A_dx(sys, grid, U(1, 1)), -mat(-1j * I + A0, U(2, 1))
    )
    out["order 0, p=0: A0 U_20 = 2 B(U_01, U_0-1)"] = rel(mat(A0, U(2, 0)), 2 * B(U(0, 1), U(0, -1)))
    out["order 1, p=2: A(dx) U_22 + (-2i + A0) U_32 = 2 B(U_01, U_11)"] = rel(
        apply_A_dx(sys, grid, U(2, 2)) + mat(-2j * I + A0, U(3, 2)), 2 * B(U(0, 1), U(1, 1))
    )
    out["order 0, p=2: (-2i + A0) U_22 = B(U_01, U_01)"] = rel(mat(-2j * I + A0, U(2, 2)), B(U(0, 1), U(0, 1)))
    return out


def evaluate_Ua(wkb: WkbSolution, t: float, eps: float) -> Field:
    if t < 0 or not 0 < eps <= 1:
        raise ValueError("need t >= 0 and eps in (0, 1]")
    U = wkb.order_sums(t, eps)
    total = U[0] + eps * U[1] + eps**2 * U[2] + eps**3 * U[3]
    return Field(wkb.grid.with_eps(eps), total)


def dt_Ua(wkb: WkbSolution, t: float, eps: float) -> Field:
    """Analytic time derivative of U_a (envelope flow plus phase factors)."""
    _, dU = wkb.order_sums(t, eps, derivative=True)
    total = dU[0] + eps * dU[1] + eps**2 * dU[2] + eps**3 * dU[3]
    return Field(wkb.grid.with_eps(eps), total)


def apply_A_dx(system: HyperbolicSystem, grid: Grid, data: np.ndarray) -> np.ndarray:
    """A(dx) U = sum_j A_j d_j U, spectral derivatives."""
    c = _spectral(grid, data)
    xi = np.moveaxis(grid.wavenumbers, -1, 0)
    out = np.zeros_like(c)
    for j in range(grid.d):
        out += np.einsum("ab,b...->a...", system.A[j], 1j * xi[j] * c)
    return _physical(grid, out)


def _bil(system, x, y):
    return system.bilinear(x, y)


@dataclass(frozen=True, eq=False)
class ResidualResult:
    defect: Field
    norm: float
    R_eps: Field
    consistency: float

    def __iter__(self):
        yield self.defect
        yield self.norm


def R_eps_data(wkb: WkbSolution, t: float, eps: float) -> np.ndarray:
    return state_and_remainder(wkb, t, eps)[1]


def state_and_remainder(wkb: WkbSolution, t: float, eps: float) -> Tuple[np.ndarray, np.ndarray]:
    """U_a and R^eps = 2B(U0,U2) + B(U1,U1) + 2eps(B(U0,U3)+B(U1,U2)) + eps^2(B(U2,U2)
    + 2B(U1,U3)) + 2eps^3 B(U2,U3) + eps^4 B(U3,U3) - dU2/dt - eps dU3/dt - A(dx)U3.

    The time derivatives here are of the slow amplitudes only (the phases are
    fixed), since the fast derivatives have been balanced order by order.
    """
    sys = wkb.system
    amps = wkb.amplitudes(t)
    shape = (wkb.grid.d + 2,) + wkb.grid.shape
    U = [np.zeros(shape, dtype=complex) for _ in range(4)]
    slow = [np.zeros(shape, dtype=complex) for _ in range(4)]
    for n, p in amps.keys():
        phase = np.exp(-1j * p * t / eps**2)
        U[n] += phase * amps.get(n, p)
        slow[n] += phase * amps.get(n, p, derivative=True)
    B = lambda x, y: _bil(sys, x, y)
    R = (
        2 * B(U[0], U[2])
        + B(U[1], U[1])
        + 2 * eps * (B(U[0], U[3]) + B(U[1], U[2]))
        + eps**2 * (B(U[2], U[2]) + 2 * B(U[1], U[3]))
        + 2 * eps**3 * B(U[2], U[3])
        + eps**4 * B(U[3], U[3])
        - slow[2]
        - eps * slow[3]
        - apply_A_dx(sys, wkb.grid, U[3])
    )
    Ua = U[0] + eps * U[1] + eps**2 * U[2] + eps**3 * U[3]
    return Ua, R


def residual(wkb: WkbSolution, t: float, eps: float, sigma: float = 2.0) -> ResidualResult:
    """Defect dU_a/dt + A(dx)U_a/eps + A0 U_a/eps^2 - B(U_a, U_a) and R^eps.

    ``consistency`` is ||defect + eps^2 R^eps|| / ||defect|| (both in H^sigma).
    """
    sys = wkb.system
    grid = wkb.grid.with_eps(eps)
    Ua = evaluate_Ua(wkb, t, eps).data
    dUa = dt_Ua(wkb, t, eps).data
    defect = (
        dUa
        + apply_A_dx(sys, grid, Ua) / eps
        + np.einsum("ab,b...->a...", sys.A0, Ua) / eps**2
        - _bil(sys, Ua, Ua)
    )
    R = R_eps_data(wkb, t, eps)
    norm = sobolev_norm_array(grid, defect, sigma)
    gap = sobolev_norm_array(grid, defect + eps**2 * R, sigma)
    consistency = gap / norm if norm > 0 else gap
    return ResidualResult(Field(grid, defect), norm, Field(grid, R), consistency)


def kg_initial_state(
    grid: Grid,
    phi0: np.ndarray,
    psi0: np.ndarray,
    eps: float,
    phi_eps: Optional[np.ndarray] = None,
    psi_eps: Optional[np.ndarray] = None,
) -> Field:
    """U(0) = (eps grad u0, u1, u0) with u0 = phi0 + eps phi_eps, u1 = psi0 + eps psi_eps."""
    phi_eps = np.zeros(grid.shape) if phi_eps is None else phi_eps
    psi_eps = np.zeros(grid.shape) if psi_eps is None else psi_eps
    u0 = np.asarray(phi0) + eps * np.asarray(phi_eps)
    u1 = np.asarray(psi0) + eps * np.asarray(psi_eps)
    c = _spectral(grid, u0.astype(complex))
    xi = np.moveaxis(grid.wavenumbers, -1, 0)
    grad = _physical(grid, 1j * xi * c[None])
    if np.isrealobj(phi0) and np.isrealobj(phi_eps):
        grad = grad.real
    data = np.concatenate([eps * grad, u1[None], u0[None]]).astype(complex)
    return Field(grid.with_eps(eps), data, real=True)


def initial_defect(wkb: WkbSolution, U0_exact: Field, eps: float) -> Field:
    """psi^eps = (U(0) - U_a(0)) / eps^K."""
    Ua0 = evaluate_Ua(wkb, 0.0, eps)
    if U0_exact.grid.shape != Ua0.grid.shape or U0_exact.grid.L != Ua0.grid.L:
        raise ValueError("grid mismatch between exact data and WKB solution")
    if U0_exact.components != Ua0.components:
        raise ValueError("component mismatch")
    return Field(Ua0.grid, (U0_exact.data - Ua0.data) / eps**wkb.K)


def gaussian_data(grid: Grid, width: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """phi0 = exp(-|x - L/2|^2 / width^2), psi0 = phi0 / 2."""
    r2 = np.sum((grid.x - grid.L / 2) ** 2, axis=0)
    phi0 = np.exp(-r2 / width**2)
    return phi0, 0.5 * phi0
