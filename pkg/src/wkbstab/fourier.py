"""Periodic grids, fields and (semiclassical) Fourier multipliers.

Conventions
-----------
Fields live on the torus ``[0, L)^d`` sampled at ``M`` points per axis.
Spectral coefficients use the unitary DFT scaled by ``sqrt(dx^d)`` so that

    sum_k |c_k|^2 = dx^d * sum_x |u(x)|^2 = ||u||_{L^2}^2

and a constant ``c`` has norm ``|c| * sqrt(L^d)``.  Coefficients are stored in
FFT order.  The unmatched Nyquist mode is zeroed by every multiplier.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "Grid",
    "Field",
    "SpectralField",
    "MatrixSymbol",
    "forward",
    "inverse",
    "apply_multiplier",
    "sobolev_norm",
    "sobolev_norm_array",
    "commutator_apply",
    "operator_norm_probe",
    "symbol_table",
    "japanese_bracket",
]


def japanese_bracket(xi: np.ndarray) -> np.ndarray:
    """<xi> = (1 + |xi|^2)^(1/2) over the last axis."""
    return np.sqrt(1.0 + np.sum(np.asarray(xi) ** 2, axis=-1))


@dataclass(frozen=True)
class Grid:
    """Uniform periodic lattice on [0, L)^d together with the parameter eps."""

    d: int
    M: int
    L: float
    eps: float = 1.0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension d must be positive")
        if self.M < 2 or self.M % 2:
            raise ValueError("points_per_axis M must be a positive even integer")
        if not self.L > 0:
            raise ValueError("period L must be positive")
        if not 0 < self.eps <= 1:
            raise ValueError("eps must lie in (0, 1]")

    @property
    def shape(self) -> tuple:
        return (self.M,) * self.d

    @property
    def npoints(self) -> int:
        return self.M**self.d

    @property
    def dx(self) -> float:
        return self.L / self.M

    @property
    def cell_volume(self) -> float:
        return self.dx**self.d

    def with_eps(self, eps: float) -> "Grid":
        return Grid(self.d, self.M, self.L, eps)

    @functools.cached_property
    def x(self) -> np.ndarray:
        """Coordinates, shape (d, M, ..., M)."""
        axis = np.arange(self.M) * self.dx
        return np.stack(np.meshgrid(*([axis] * self.d), indexing="ij"))

    @functools.cached_property
    def wavenumbers(self) -> np.ndarray:
        """Dual frequencies 2 pi k / L in FFT order, shape (M, ..., M, d)."""
        axis = 2 * np.pi * np.fft.fftfreq(self.M, d=self.dx)
        mesh = np.meshgrid(*([axis] * self.d), indexing="ij")
        return np.stack(mesh, axis=-1)

    @functools.cached_property
    def mode_indices(self) -> np.ndarray:
        """Integer mode numbers k in FFT order, shape (M, ..., M, d)."""
        axis = np.fft.fftfreq(self.M, d=1.0 / self.M).round().astype(int)
        mesh = np.meshgrid(*([axis] * self.d), indexing="ij")
        return np.stack(mesh, axis=-1)

    @functools.cached_property
    def nyquist_mask(self) -> np.ndarray:
        """True at every mode that sits on the unmatched k = -M/2 plane."""
        return np.any(self.mode_indices == -self.M // 2, axis=-1)

    @functools.cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask: keep modes with |k_i| < M/3 on every axis."""
        return np.all(np.abs(self.mode_indices) < self.M / 3.0, axis=-1)

    def bracket(self, s: float = 1.0) -> np.ndarray:
        """<xi>^s on the classical frequency lattice."""
        return japanese_bracket(self.wavenumbers) ** s


@dataclass(frozen=True, eq=False)
class Field:
    """Complex C-component samples on a grid; ``data`` has shape (C, M, ..., M)."""

    grid: Grid
    data: np.ndarray
    real: bool = False

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        if data.ndim == self.grid.d:
            data = data[None]
        if data.shape[1:] != self.grid.shape:
            raise ValueError(
                f"field data shape {data.shape} does not match grid {self.grid.shape}"
            )
        object.__setattr__(self, "data", data)

    @property
    def components(self) -> int:
        return self.data.shape[0]

    def with_data(self, data: np.ndarray, real: Optional[bool] = None) -> "Field":
        return Field(self.grid, data, self.real if real is None else real)

    def component(self, i) -> "Field":
        return Field(self.grid, self.data[i : i + 1] if isinstance(i, int) else self.data[i])

    def imag_residue(self) -> float:
        """max |Im| / max(1, max |u|)."""
        scale = max(1.0, float(np.max(np.abs(self.data))))
        return float(np.max(np.abs(self.data.imag))) / scale

    def check_real(self, tol: float = 1e-10) -> bool:
        return self.imag_residue() <= tol

    def __add__(self, other: "Field") -> "Field":
        _same_grid(self, other)
        return Field(self.grid, self.data + other.data, self.real and other.real)

    def __sub__(self, other: "Field") -> "Field":
        _same_grid(self, other)
        return Field(self.grid, self.data - other.data, self.real and other.real)

    def __mul__(self, c) -> "Field":
        return Field(self.grid, self.data * c)

    __rmul__ = __mul__

    def norm(self, s: float = 0.0) -> float:
        return sobolev_norm(self, s)


def _same_grid(a: Field, b: Field):
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")
    if a.data.shape != b.data.shape:
        raise ValueError("component mismatch between fields")


@dataclass(frozen=True, eq=False)
class SpectralField:
    grid: Grid
    coefficients: np.ndarray

    @property
    def components(self) -> int:
        return self.coefficients.shape[0]


def _axes(grid: Grid) -> tuple:
    return tuple(range(1, grid.d + 1))


def forward_array(grid: Grid, data: np.ndarray) -> np.ndarray:
    return np.fft.fftn(data, axes=_axes(grid), norm="ortho") * np.sqrt(grid.cell_volume)


def inverse_array(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(coeffs, axes=_axes(grid), norm="ortho") / np.sqrt(grid.cell_volume)


def forward(field: Field) -> SpectralField:
    return SpectralField(field.grid, forward_array(field.grid, field.data))


def inverse(sf: SpectralField) -> Field:
    if sf.coefficients.shape[1:] != sf.grid.shape:
        raise ValueError("coefficient array does not match grid")
    return Field(sf.grid, inverse_array(sf.grid, sf.coefficients))


@dataclass(frozen=True, eq=False)
class MatrixSymbol:
    """A matrix valued symbol xi -> sigma(xi) of class S^order.

    ``fn`` is vectorised: it maps an array of frequencies of shape (n, d) to an
    array of shape (n, rows, cols).  Symbols compare and hash by identity, which
    is what the per-grid table cache keys on.
    """

    rows: int
    cols: int
    order: int
    fn: Callable[[np.ndarray], np.ndarray]
    hermitian: bool = False
    name: str = ""

    def __call__(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        single = xi.ndim <= 1
        pts = np.atleast_2d(xi.reshape(1, -1) if single else xi)
        out = np.asarray(self.fn(pts), dtype=complex)
        out = out.reshape(pts.shape[0], self.rows, self.cols)
        return out[0] if single else out

    @classmethod
    def scalar(cls, fn, order: int = 0, name: str = "") -> "MatrixSymbol":
        """1x1 symbol from a function of (n, d) frequencies returning (n,)."""
        return cls(1, 1, order, lambda xi: np.asarray(fn(xi))[:, None, None], True, name)

    @classmethod
    def constant(cls, matrix, name: str = "") -> "MatrixSymbol":
        matrix = np.atleast_2d(np.asarray(matrix, dtype=complex))
        r, c = matrix.shape
        herm = r == c and np.allclose(matrix, matrix.conj().T)
        return cls(r, c, 0, lambda xi: np.broadcast_to(matrix, (len(xi), r, c)), herm, name)

    @classmethod
    def from_table_fn(cls, rows, cols, order, fn, hermitian=False, name=""):
        return cls(rows, cols, order, fn, hermitian, name)


@functools.lru_cache(maxsize=512)
def symbol_table(sym: MatrixSymbol, grid: Grid, semiclassical: bool = True) -> np.ndarray:
    """Dense per-mode table sigma(eps xi) (or sigma(xi)), shape (M,...,M, rows, cols).

    The Nyquist plane is zeroed.  The returned array is read-only.
    """
    xi = grid.wavenumbers.reshape(-1, grid.d)
    if semiclassical:
        xi = grid.eps * xi
    table = np.array(sym(xi), dtype=complex).reshape(grid.shape + (sym.rows, sym.cols))
    if not np.all(np.isfinite(table)):
        raise ValueError(f"symbol {sym.name or sym!r} is not finite at some grid mode")
    table[grid.nyquist_mask] = 0.0
    table.setflags(write=False)
    return table


def apply_table(grid: Grid, table: np.ndarray, data: np.ndarray) -> np.ndarray:
    """Apply a per-mode matrix table to raw field data (C, M, ..., M)."""
    coeffs = np.fft.fftn(data, axes=_axes(grid))
    rows, cols = table.shape[-2:]
    flat = coeffs.reshape(coeffs.shape[0], -1)
    tab = table.reshape(-1, rows, cols)
    if rows == cols == 1 and flat.shape[0] != 1:
        out = flat * tab[:, 0, 0][None, :]
    else:
        if flat.shape[0] != cols:
            raise ValueError(f"symbol has {cols} columns but field has {flat.shape[0]} components")
        out = np.einsum("pij,jp->ip", tab, flat)
    out = out.reshape((out.shape[0],) + grid.shape)
    return np.fft.ifftn(out, axes=_axes(grid))


def apply_multiplier(sym: MatrixSymbol, semiclassical: bool, field: Field) -> Field:
    """sigma(eps D) u  (or sigma(D) u) computed mode by mode.

    A 1x1 symbol acts as sigma * Id on every component.
    """
    if not (sym.rows == sym.cols == 1) and sym.cols != field.components:
        raise ValueError(
            f"symbol has {sym.cols} columns but field has {field.components} components"
        )
    table = symbol_table(sym, field.grid, semiclassical)
    return Field(field.grid, apply_table(field.grid, table, field.data))


def sobolev_norm_array(grid: Grid, data: np.ndarray, s: float = 0.0) -> float:
    coeffs = forward_array(grid, data)
    weight = grid.bracket(2.0 * s)
    return float(np.sqrt(np.sum(weight * np.sum(np.abs(coeffs) ** 2, axis=0))))


def sobolev_norm(field: Field, s: float = 0.0) -> float:
    """Discrete H^s norm: <xi>^s weighted l^2 norm of the coefficients."""
    return sobolev_norm_array(field.grid, field.data, s)


def commutator_apply(sym: MatrixSymbol, g: Field, u: Field, semiclassical: bool = True) -> Field:
    """[sigma(eps D), g] u = sigma(eps D)(g u) - g sigma(eps D) u  for scalar g."""
    if g.grid != u.grid:
        raise ValueError("g and u live on different grids")
    if g.components != 1:
        raise ValueError("g must be scalar valued")
    gu = Field(u.grid, g.data * u.data)
    return apply_multiplier(sym, semiclassical, gu) - Field(
        u.grid, g.data * apply_multiplier(sym, semiclassical, u).data
    )


def random_band_limited(
    grid: Grid, components: int, rng: np.random.Generator, band: Optional[int] = None
) -> np.ndarray:
    """Random complex field data whose modes satisfy |k_i| <= band."""
    band = grid.M // 4 if band is None else band
    shape = (components,) + grid.shape
    coeffs = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    keep = np.all(np.abs(grid.mode_indices) <= band, axis=-1) & ~grid.nyquist_mask
    coeffs = coeffs * keep
    return np.fft.ifftn(coeffs, axes=_axes(grid))


def operator_norm_probe(
    op,
    s: float,
    trials: int,
    seed: int,
    *,
    grid: Optional[Grid] = None,
    components: Optional[int] = None,
    band: Optional[int] = None,
    power_iterations: int = 0,
) -> float:
    """Empirical H^s -> H^s norm of a linear map on fields.

    Without power iterations this is the max over ``trials`` seeded random
    band-limited probes of ||op u||_{H^s} / ||u||_{H^s}.  With
    ``power_iterations > 0`` each probe seeds a power iteration on K^* K,
    K = <D>^s op <D>^{-s} restricted to the probe band; this needs
    ``op.adjoint()`` and gives an increasing lower bound for the norm of op
    on band-limited fields.  Deterministic given ``seed``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    from .operators import LinearOp, Multiplier

    grid = grid if grid is not None else getattr(op, "grid", None)
    components = components if components is not None else getattr(op, "in_components", None)
    if grid is None or components is None:
        raise ValueError("grid and component count are required for a plain callable")
    rng = np.random.default_rng(seed)

    def as_data(result, expected_grid):
        if isinstance(result, Field):
            if result.grid != expected_grid:
                raise ValueError("operator returned a field on a different grid")
            return result.data
        return np.asarray(result)

    best = 0.0
    if power_iterations <= 0:
        for _ in range(trials):
            u = random_band_limited(grid, components, rng, band)
            out = as_data(op(Field(grid, u)), grid)
            if out.shape[1:] != grid.shape:
                raise ValueError("operator returned a mismatched field")
            nu = sobolev_norm_array(grid, u, s)
            best = max(best, sobolev_norm_array(grid, out, s) / nu)
        return best

    if not isinstance(op, LinearOp):
        raise TypeError("power iteration needs a LinearOp with an adjoint")
    out_c = op.out_components
    w_in_inv = Multiplier.scalar_weight(grid, components, -s)
    w_out = Multiplier.scalar_weight(grid, out_c, s)
    K = w_out @ op @ w_in_inv
    # restrict to the probe band so that grid products cannot wrap around
    # the Nyquist plane; l^2 adjoint of W op W^{-1} P is P W^{-1} op^* W
    band_proj = Multiplier.band_projector(grid, components, band)
    K = K @ band_proj
    Kstar = band_proj @ w_in_inv @ op.adjoint() @ w_out
    for _ in range(trials):
        v = random_band_limited(grid, components, rng, band)
        v /= np.linalg.norm(v)
        ratio = 0.0
        for _ in range(power_iterations):
            kv = K.apply(v)
            nk = np.linalg.norm(kv)
            ratio = nk / np.linalg.norm(v)
            if nk == 0.0:
                break
            v = Kstar.apply(kv)
            nv = np.linalg.norm(v)
            if nv == 0.0:
                break
            v = v / nv
        kv = K.apply(v)
        if np.linalg.norm(v) > 0:
            ratio = max(ratio, np.linalg.norm(kv) / np.linalg.norm(v))
        best = max(best, float(ratio))
    return best
