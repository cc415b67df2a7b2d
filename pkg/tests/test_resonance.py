import numpy as np
import pytest
from hypothesis import given, strategies as st

from wkbstab.fourier import Field, Grid, random_band_limited, sobolev_norm_array
from wkbstab.model import kg_spectral_decomposition, kg_system
from wkbstab.operators import Identity, Pointwise, Scale
from wkbstab.resonance import (
    KG_NON_STRONG,
    CutoffSpec,
    LocalizedOperators,
    NeumannRefused,
    ResonanceIndex,
    ResonanceModel,
    all_indices,
    bump,
    fit_slope,
    neumann_inverse,
)
from wkbstab.wkb import Envelope, WkbSolution, gaussian_data

KG = ResonanceModel(kg_system(1, 1.0), kg_spectral_decomposition(1))
GRID = Grid(1, 128, 8 * np.pi)


def profiles(grid=GRID, t=0.5, zero=False, lam=1.0):
    phi0, psi0 = gaussian_data(grid)
    if zero:
        phi0, psi0 = 0 * phi0, 0 * psi0
    wkb = WkbSolution(Envelope.from_data(Field(grid, phi0), Field(grid, psi0)), lam)
    return ({p: wkb.leading_profile(t, p) for p in (1, -1)}, {p: wkb.leading_profile(t, p, True) for p in (1, -1)})


def ops_at(eps, zero=False, model=KG, grid=GRID):
    g, dg = profiles(grid, zero=zero)
    return LocalizedOperators(model, grid, eps, 0.5, g, dg)


def probe(ops, seed=0, band=None):
    return random_band_limited(ops.grid, ops.JN, np.random.default_rng(seed), band)


class TestIndices:
    def test_enumeration_and_validation(self):
        idx = all_indices(3)
        assert len(idx) == 18 and ResonanceIndex(1, 3, 1) in idx
        with pytest.raises(ValueError):
            ResonanceIndex(4, 1, 1).validate(3)
        with pytest.raises(ValueError):
            ResonanceIndex(1, 1, 0).validate(3)


class TestPhaseAndCoefficients:
    def test_phase_values(self):
        assert KG.phase((1, 3, 1), [0.0]) == 0.0
        assert KG.phase((1, 2, 1), [0.0]) == 1.0
        assert KG.phase((1, 3, 1), [1.0]) == pytest.approx(np.sqrt(2) - 1, abs=1e-15)

    @given(st.integers(1, 3), st.sampled_from([-1, 1]), st.floats(-20, 20))
    def test_third_branch_rows_vanish(self, jp, p, xi):
        assert np.max(np.abs(KG.interaction_coefficient((3, jp, p), [xi]))) == 0.0

    @pytest.mark.parametrize("xi", [1.0, -0.3, 2.7])
    def test_first_resonant_coefficient_closed_form(self, xi):
        lam = np.sqrt(1 + xi**2)
        left = np.array([-xi / lam, 1.0, 1j / lam])
        right = np.array([1j * xi, 0.0, xi**2])
        closed = -1.0 / (2 * np.sqrt(2) * lam**2) * np.outer(left, right)
        assert np.max(np.abs(KG.interaction_coefficient((1, 3, 1), [xi]) - closed)) <= 1e-12
        left2 = np.array([xi / lam, 1.0, -1j / lam])  # negative branch
        closed2 = -1.0 / (2 * np.sqrt(2) * lam**2) * np.outer(left2, right)
        assert np.max(np.abs(KG.interaction_coefficient((2, 3, -1), [xi]) - closed2)) <= 1e-12

    def test_zero_probe_vector(self):
        c = KG.interaction_coefficient((1, 3, 1), [0.7])
        v = np.array([0.0, 1.0, 0.0])  # Pi_3 kills the v slot
        assert np.max(np.abs(c @ v)) == 0.0


class TestTransparency:
    @pytest.mark.parametrize("idx", sorted(KG_NON_STRONG))
    def test_half_exponent_and_divergent_ratio(self, idx):
        est = KG.estimate_alpha(idx)
        assert est.kind == "fitted"
        assert abs(est.alpha - 0.5) <= 0.05
        assert abs(est.strong_ratio_slope + 0.5) <= 0.1
        assert not est.strongly_transparent

    def test_empty_resonance(self):
        est = KG.estimate_alpha((1, 2, 1))
        assert est.kind == "empty-resonance" and est.alpha == 1.0
        assert est.lower_bound_c == pytest.approx(1.0, abs=1e-12)

    def test_identically_zero(self):
        est = KG.estimate_alpha((3, 1, 1))
        assert est.kind == "identically-zero" and est.strongly_transparent

    def test_zero_coupling_everything_transparent(self):
        m = ResonanceModel(kg_system(1, 0.0), kg_spectral_decomposition(1))
        assert len(m.J1) == 18 and m.alpha() == 1.0

    def test_classification_matches_closed_form(self):
        non_strong = {tuple(i) for i in all_indices(3)} - {tuple(i) for i in KG.J1}
        assert non_strong == set(KG_NON_STRONG)
        assert abs(KG.alpha() - 0.5) <= 0.05

    def test_empty_shell_reported(self):
        est = KG.estimate_alpha((1, 3, 1), shells=[1e-3, 1e-2, 1e3])
        assert 1e3 in est.empty_shells

    def test_fit_slope_exact_power(self):
        x = np.logspace(-3, 0, 7)
        f = fit_slope(x, 3 * x**0.7)
        assert f["slope"] == pytest.approx(0.7, abs=1e-12) and f["rms_residual"] < 1e-12
        assert f["ci_low"] <= 0.7 <= f["ci_high"]


class TestCutoff:
    @given(st.floats(1e-6, 10), st.floats(-50, 50))
    def test_bounds_plateau_support(self, h, ph):
        chi = float(CutoffSpec(h).chi_of_phase(np.array([ph]))[0])
        assert 0.0 <= chi <= 1.0
        if abs(ph) <= h:
            assert chi == 1.0
        if abs(ph) >= 2 * h:
            assert chi == 0.0

    def test_bump_is_c2(self):
        r = np.linspace(0.5, 2.5, 40001)
        b = bump(r)
        d1 = np.gradient(b, r)
        d2 = np.gradient(d1, r)
        assert np.max(np.abs(np.diff(d2))) < 1e-2

    def test_examples(self):
        h = 0.01
        spec = CutoffSpec(h)
        xi_half = np.sqrt((1 + h / 2) ** 2 - 1)
        xi_3h = np.sqrt((1 + 3 * h) ** 2 - 1)
        assert KG.cutoff_chi((1, 3, 1), spec, [[xi_half]])[0] == 1.0
        assert KG.cutoff_chi((1, 3, 1), spec, [[xi_3h]])[0] == 0.0
        assert np.all(KG.cutoff_chi((1, 2, 1), spec, np.linspace(-1, 1, 11)[:, None]) == 0.0)

    def test_invalid_width(self):
        with pytest.raises(ValueError):
            CutoffSpec(0.0)


class TestNormalFormSymbol:
    def test_zero_on_plateau(self):
        spec = CutoffSpec(0.05)
        xi = np.linspace(-0.2, 0.2, 101)[:, None]
        on = np.abs(KG.phase((1, 3, 1), xi)) <= 0.05
        vals = KG.normal_form_values((1, 3, 1), spec, xi)
        assert np.all(vals[on] == 0)

    def test_empty_resonance_is_plain_division(self):
        xi = np.linspace(-3, 3, 13)[:, None]
        vals = KG.normal_form_values((1, 2, 1), CutoffSpec(0.1), xi)
        ref = -2j * KG.interaction_coefficient((1, 2, 1), xi) / KG.phase((1, 2, 1), xi)[:, None, None]
        assert np.max(np.abs(vals - ref)) <= 1e-14
        assert np.max(np.linalg.norm(vals, 2, axis=(1, 2))) <= 2 * np.max(np.linalg.norm(KG.interaction_coefficient((1, 2, 1), xi), 2, axis=(1, 2))) / 1.0

    @given(st.floats(1e-4, 1.0), st.integers(0, 17))
    def test_cancellation_identity(self, h, k):
        idx = all_indices(3)[k]
        xi = np.linspace(-2, 2, 401)[:, None]
        spec = CutoffSpec(h)
        lhs = KG.phase(idx, xi)[:, None, None] * KG.normal_form_values(idx, spec, xi)
        rhs = -2j * (1 - KG.cutoff_chi(idx, spec, xi))[:, None, None] * KG.interaction_coefficient(idx, xi)
        assert np.max(np.abs(lhs - rhs)) <= 1e-13

    def test_sup_norm_scaling(self):
        hs = np.logspace(-5, -2, 4)
        xi = np.linspace(-0.5, 0.5, 400001)[:, None]
        sups = [np.max(np.linalg.norm(KG.normal_form_values((1, 3, 1), CutoffSpec(h), xi), 2, axis=(1, 2))) for h in hs]
        assert abs(fit_slope(hs, sups)["slope"] + 0.5) <= 0.1

    def test_refined_placement(self):
        assert KG.refined_placement((1, 3, 1)) == "jp-const"
        assert KG.refined_placement((3, 2, -1)) == "j-const"
        with pytest.raises(ValueError):
            KG.refined_placement((1, 2, 1))


class TestLocalizedOperators:
    def test_zero_envelope_gives_zero_operators(self):
        ops = ops_at(0.1, zero=True)
        u = probe(ops)
        spec = CutoffSpec(0.1)
        for op in (ops.B1(), ops.build_M(spec), ops.build_Q(spec), ops.defect(spec, "M"), ops.defect(spec, "Q")):
            assert np.max(np.abs(op.apply(u))) == 0.0

    def test_third_branch_rows_vanish(self):
        ops = ops_at(0.1)
        out = ops.B1().apply(probe(ops))
        assert np.max(np.abs(out[6:9])) <= 1e-16 * np.max(np.abs(out))

    def test_dense_assembly_single_block(self):
        grid = Grid(1, 16, 4 * np.pi)
        eps = 0.3
        ops = ops_at(eps, grid=grid)
        gE = grid.with_eps(eps)
        M, N = 16, 3
        F = np.fft.fft(np.eye(M), axis=0)
        Finv = np.fft.ifft(np.eye(M), axis=0)
        xi = eps * gE.wavenumbers.reshape(-1, 1)
        P = KG.decomp.projector_stack(xi)  # (J, M, N, N)
        P[:, gE.nyquist_mask.reshape(-1)] = 0

        def mult(table):  # (M, N, N) -> dense (N M, N M), ordering (component, point)
            D = np.zeros((N * M, N * M), complex)
            for a in range(N):
                for b in range(N):
                    D[a * M:(a + 1) * M, b * M:(b + 1) * M] = Finv @ np.diag(table[:, a, b]) @ F
            return D

        rng = np.random.default_rng(3)
        for j, jp in ((1, 3), (2, 3), (1, 1)):
            dense = np.zeros((N * M, N * M), complex)
            for p in (1, -1):
                Bp = KG.Be[p]
                G = np.kron(Bp, np.diag(ops.g[p]))
                dense += 2 * ops.phase_factor[p] * mult(P[j - 1]) @ G @ mult(P[jp - 1])
            u = np.zeros((9, M), complex)
            blk = rng.standard_normal((3, M)) + 1j * rng.standard_normal((3, M))
            u[(jp - 1) * 3:jp * 3] = blk
            got = ops.B1().apply(u)[(j - 1) * 3:j * 3]
            ref = (dense @ blk.reshape(-1)).reshape(3, M)
            assert np.max(np.abs(got - ref)) <= 1e-11 * max(1.0, np.max(np.abs(ref)))

    @given(st.floats(1e-4, 3.0), st.sampled_from(["plain", "refined"]), st.integers(0, 1000))
    def test_split_is_exact(self, h, variant, seed):
        ops = ops_at(0.1)
        u = probe(ops, seed)
        Bin, Bout = ops.split_B1(CutoffSpec(h), variant)
        total = ops.B1().apply(u)
        assert np.linalg.norm(Bin.apply(u) + Bout.apply(u) - total) <= 1e-11 * np.linalg.norm(total)

    def test_tiny_width_leaves_only_exact_resonances(self):
        # xi = 0 is a grid mode and lies on the resonance set, so only that mode survives
        ops = ops_at(0.1)
        Bin, _ = ops.split_B1(CutoffSpec(1e-14))
        out = np.fft.fft(Bin.apply(probe(ops)), axis=1)
        assert np.max(np.abs(out[:, 1:])) <= 1e-13 * max(1.0, np.max(np.abs(out)))

    def test_huge_width_removes_resonant_blocks_from_outer_part(self):
        g, dg = profiles()
        g = {1: g[1], -1: 0 * g[-1]}
        ops = LocalizedOperators(KG, GRID, 0.1, 0.5, g, dg)
        u = np.zeros((9, 128), complex)
        u[6:9] = random_band_limited(ops.grid, 3, np.random.default_rng(0))
        _, Bout = ops.split_B1(CutoffSpec(1e3))
        out = Bout.apply(u)
        assert np.max(np.abs(out[0:3])) == 0.0  # (1,3,1) is fully inside
        assert np.max(np.abs(out[3:6])) > 0.0  # (2,3,1) is strongly transparent and stays

    def test_refined_split_refuses_without_constant_branch(self):
        model = ResonanceModel(kg_system(1), kg_spectral_decomposition(1), J1=[])
        ops = ops_at(0.1, model=model)
        with pytest.raises(ValueError):
            ops.split_B1(CutoffSpec(0.1), "refined")
        with pytest.raises(ValueError):
            ops.build_Q(CutoffSpec(0.1))

    def test_q_block_order(self):
        ops = ops_at(0.1)
        assert ops.q_order((1, 3, 1)) == "g-right"  # Mtilde(eps D) o g
        assert ops.q_order((3, 1, 1)) == "g-left"

    def test_constant_branch_commutators_vanish(self):
        ops = ops_at(0.05)
        assert ops.constant_branch_commutator_residual(CutoffSpec(0.05**2)) <= 1e-13

    def test_q_norm_shrinks_with_eps(self):
        norms = []
        for eps in (0.2, 0.1):
            ops = ops_at(eps)
            Q = Scale(eps**2, ops.build_Q(CutoffSpec(eps**2)))
            norms.append(ops.norm(Q, iterations=10))
        assert norms[1] <= 10 * norms[0] * (0.1 / 0.2)

    def test_defect_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            ops_at(0.1).defect(CutoffSpec(0.1), "X")


class TestNeumann:
    def field(self, grid=Grid(1, 32, 4.0), C=2, seed=0):
        return Field(grid, random_band_limited(grid, C, np.random.default_rng(seed)))

    def test_zero_operator(self):
        f = self.field()
        out = neumann_inverse(Scale(0.0, Identity(f.grid, 2)), f)
        assert np.array_equal(out.data, f.data)

    def test_scalar_geometric_series(self):
        f = self.field()
        out = neumann_inverse(Scale(0.1, Identity(f.grid, 2)), f, tol=1e-12)
        assert np.max(np.abs(out.data - f.data / 1.1)) <= 1e-12 * np.max(np.abs(f.data))

    @given(st.integers(0, 2**31))
    def test_random_contraction(self, seed):
        rng = np.random.default_rng(seed)
        g = Grid(1, 32, 4.0)
        mats = rng.standard_normal((2, 2) + g.shape) + 1j * rng.standard_normal((2, 2) + g.shape)
        scale = np.max(np.linalg.norm(np.moveaxis(mats, -1, 0), 2, axis=(1, 2)))
        op = Pointwise(g, 0.4 * mats / scale)
        f = self.field(g, seed=seed % 1000)
        out = neumann_inverse(op, f, tol=1e-10, norm_estimate=0.4)
        back = out.data + op.apply(out.data)
        assert np.linalg.norm(back - f.data) <= 1e-10 * np.linalg.norm(f.data)

    def test_refuses_large_operator(self):
        f = self.field()
        with pytest.raises(NeumannRefused):
            neumann_inverse(Scale(0.6, Identity(f.grid, 2)), f)

    def test_normal_form_inverse_on_kg(self):
        ops = ops_at(0.1)
        spec = CutoffSpec(0.01)
        op = Scale(0.01, ops.build_M(spec))
        f = Field(ops.grid, probe(ops))
        out = neumann_inverse(op, f, tol=1e-10, s=2.0)
        assert sobolev_norm_array(ops.grid, out.data + op.apply(out.data) - f.data, 2) <= 1e-10 * sobolev_norm_array(ops.grid, f.data, 2)
