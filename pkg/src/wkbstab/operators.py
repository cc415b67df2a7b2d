"""Small algebra of linear maps on grid fields.

Every operator acts on raw arrays of shape (C, M, ..., M) through ``apply`` and
on :class:`Field` objects through ``__call__``.  Each one exposes an
``adjoint()`` with respect to the l^2 inner product of grid samples, which is
what the power iteration in :func:`operator_norm_probe` needs.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .fourier import Field, Grid, apply_table, symbol_table, MatrixSymbol

__all__ = ["LinearOp", "Multiplier", "Pointwise", "Compose", "Sum", "Scale", "Identity"]


class LinearOp:
    grid: Grid
    in_components: int
    out_components: int

    def apply(self, data: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def adjoint(self) -> "LinearOp":  # pragma: no cover - abstract
        raise NotImplementedError

    def __call__(self, u: Field) -> Field:
        if u.grid != self.grid:
            raise ValueError("field lives on a different grid than the operator")
        if u.components != self.in_components:
            raise ValueError(
                f"operator expects {self.in_components} components, got {u.components}"
            )
        return Field(self.grid, self.apply(u.data))

    def __matmul__(self, other: "LinearOp") -> "LinearOp":
        return Compose([self, other])

    def __add__(self, other: "LinearOp") -> "LinearOp":
        return Sum([self, other])

    def __sub__(self, other: "LinearOp") -> "LinearOp":
        return Sum([self, Scale(-1.0, other)])

    def __mul__(self, c) -> "LinearOp":
        return Scale(c, self)

    __rmul__ = __mul__

    def __neg__(self) -> "LinearOp":
        return Scale(-1.0, self)


class Multiplier(LinearOp):
    """Fourier multiplier given by a per-mode table of shape (M,...,M, r, c)."""

    def __init__(self, grid: Grid, table: np.ndarray):
        self.grid = grid
        self.table = table
        self.out_components, self.in_components = table.shape[-2:]

    @classmethod
    def from_symbol(cls, sym: MatrixSymbol, grid: Grid, semiclassical: bool = True):
        return cls(grid, symbol_table(sym, grid, semiclassical))

    @classmethod
    def scalar_weight(cls, grid: Grid, components: int, s: float) -> "Multiplier":
        """<D>^s acting on every component (classical frequencies)."""
        w = grid.bracket(s)
        table = w[..., None, None] * np.eye(components)
        table[grid.nyquist_mask] = 0.0
        return cls(grid, table)

    @classmethod
    def band_projector(cls, grid: Grid, components: int, band=None) -> "Multiplier":
        """Orthogonal projector onto modes with |k_i| <= band (default M/4)."""
        band = grid.M // 4 if band is None else band
        keep = np.all(np.abs(grid.mode_indices) <= band, axis=-1) & ~grid.nyquist_mask
        return cls(grid, keep[..., None, None] * np.eye(components))

    def apply(self, data):
        return apply_table(self.grid, self.table, data)

    def adjoint(self):
        return Multiplier(self.grid, np.conj(np.swapaxes(self.table, -1, -2)))


class Pointwise(LinearOp):
    """Multiplication by a matrix valued field G(x) of shape (r, c, M, ..., M)."""

    def __init__(self, grid: Grid, matrix_field: np.ndarray):
        matrix_field = np.asarray(matrix_field, dtype=complex)
        if matrix_field.shape[2:] != grid.shape:
            raise ValueError("matrix field shape does not match the grid")
        self.grid = grid
        self.matrix = matrix_field
        self.out_components, self.in_components = matrix_field.shape[:2]

    @classmethod
    def scalar(cls, grid: Grid, g: np.ndarray, components: int) -> "Pointwise":
        g = np.asarray(g).reshape(grid.shape)
        return cls(grid, np.einsum("ij,...->ij...", np.eye(components), g))

    def apply(self, data):
        return np.einsum("ij...,j...->i...", self.matrix, data)

    def adjoint(self):
        return Pointwise(self.grid, np.conj(np.swapaxes(self.matrix, 0, 1)))


class Compose(LinearOp):
    """ops[0] @ ops[1] @ ... (rightmost applied first)."""

    def __init__(self, ops: Sequence[LinearOp]):
        flat = []
        for op in ops:
            flat.extend(op.ops if isinstance(op, Compose) else [op])
        for left, right in zip(flat[:-1], flat[1:]):
            if left.in_components != right.out_components:
                raise ValueError("component mismatch in composition")
            if left.grid != right.grid:
                raise ValueError("grid mismatch in composition")
        self.ops = flat
        self.grid = flat[0].grid
        self.out_components = flat[0].out_components
        self.in_components = flat[-1].in_components

    def apply(self, data):
        for op in reversed(self.ops):
            data = op.apply(data)
        return data

    def adjoint(self):
        return Compose([op.adjoint() for op in reversed(self.ops)])


class Sum(LinearOp):
    def __init__(self, ops: Sequence[LinearOp]):
        flat = []
        for op in ops:
            flat.extend(op.ops if isinstance(op, Sum) else [op])
        if not flat:
            raise ValueError("empty sum")
        first = flat[0]
        for op in flat[1:]:
            if (op.in_components, op.out_components) != (first.in_components, first.out_components):
                raise ValueError("component mismatch in sum")
            if op.grid != first.grid:
                raise ValueError("grid mismatch in sum")
        self.ops = flat
        self.grid = first.grid
        self.in_components = first.in_components
        self.out_components = first.out_components

    def apply(self, data):
        out = self.ops[0].apply(data)
        for op in self.ops[1:]:
            out = out + op.apply(data)
        return out

    def adjoint(self):
        return Sum([op.adjoint() for op in self.ops])


class Scale(LinearOp):
    def __init__(self, c, op: LinearOp):
        self.c = complex(c)
        self.op = op
        self.grid = op.grid
        self.in_components = op.in_components
        self.out_components = op.out_components

    def apply(self, data):
        return self.c * self.op.apply(data)

    def adjoint(self):
        return Scale(np.conj(self.c), self.op.adjoint())


class Identity(LinearOp):
    def __init__(self, grid: Grid, components: int):
        self.grid = grid
        self.in_components = self.out_components = components

    def apply(self, data):
        return np.array(data, copy=True)

    def adjoint(self):
        return self
