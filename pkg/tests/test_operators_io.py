import numpy as np
import pytest
from hypothesis import given, strategies as st

from wkbstab.fieldio import read_field, write_field
from wkbstab.fourier import Field, Grid, MatrixSymbol, random_band_limited
from wkbstab.operators import Compose, Identity, Multiplier, Pointwise, Scale, Sum


def inner(a, b):
    return np.vdot(a.ravel(), b.ravel())


def random_ops(grid, rng):
    A = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
    sym = MatrixSymbol(2, 3, 0, lambda xi: np.cos(xi[:, 0])[:, None, None] * A)
    mult = Multiplier.from_symbol(sym, grid)
    pw = Pointwise(grid, rng.standard_normal((3, 3) + grid.shape) + 1j * rng.standard_normal((3, 3) + grid.shape))
    return mult, pw


@given(st.integers(0, 2**31))
def test_adjoint_identity(seed):
    rng = np.random.default_rng(seed)
    g = Grid(1, 16, 3.0, 0.5)
    mult, pw = random_ops(g, rng)
    op = Sum([Compose([mult, pw]), Scale(0.3 - 1j, mult)])
    u = rng.standard_normal((3, 16)) + 1j * rng.standard_normal((3, 16))
    v = rng.standard_normal((2, 16)) + 1j * rng.standard_normal((2, 16))
    lhs, rhs = inner(v, op.apply(u)), inner(op.adjoint().apply(v), u)
    assert abs(lhs - rhs) <= 1e-11 * max(1.0, abs(lhs))


def test_composition_order(rng):
    g = Grid(1, 8, 1.0)
    a = Pointwise.scalar(g, np.arange(8.0) + 1, 1)
    shift = Multiplier(g, np.exp(1j * g.wavenumbers[..., 0])[..., None, None] * np.ones((8, 1, 1)))
    u = random_band_limited(g, 1, rng, band=2)
    assert np.allclose((a @ shift).apply(u), a.apply(shift.apply(u)))
    assert np.allclose((a + shift - a).apply(u), shift.apply(u))
    assert np.allclose((-a).apply(u), -a.apply(u))


def test_call_checks_grid_and_components():
    g = Grid(1, 8, 1.0)
    op = Identity(g, 2)
    with pytest.raises(ValueError):
        op(Field(g, np.ones((3, 8))))
    with pytest.raises(ValueError):
        op(Field(Grid(1, 8, 2.0), np.ones((2, 8))))


def test_field_file_round_trip(tmp_path, rng):
    g = Grid(2, 8, 7.5, 0.125)
    data = (rng.standard_normal((3,) + g.shape) + 1j * rng.standard_normal((3,) + g.shape)).astype(np.complex64)
    path = write_field(tmp_path / "u.wkbf", Field(g, data), t=2.25, metadata={"label": "probe"})
    back, t = read_field(path)
    assert t == 2.25 and back.grid == g
    assert np.array_equal(back.data, data.astype(complex))
    side = (tmp_path / "u.wkbf.txt").read_text()
    assert "label = probe" in side and "M = 8" in side
    raw = path.read_bytes()
    assert raw[:4] == b"WKBF" and len(raw) == 4 + 4 * 4 + 3 * 8 + 8 * 3 * 64


def test_field_file_rejects_garbage(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"nope" + bytes(60))
    with pytest.raises(ValueError):
        read_field(p)
    p.write_bytes(b"WK")
    with pytest.raises(ValueError):
        read_field(p)
