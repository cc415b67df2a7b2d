import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from wkbstab.fourier import Field, Grid, random_band_limited, sobolev_norm, sobolev_norm_array
from wkbstab.model import HyperbolicSystem, kg_spectral_decomposition, kg_system, numeric_spectral_decomposition
from wkbstab.solver import (
    SolverConfig,
    evolve,
    evolve_perturbation,
    linear_flow,
    nonlinear_substep,
    self_convergence,
)
from wkbstab.wkb import Envelope, WkbSolution, evaluate_Ua, gaussian_data, initial_defect, kg_initial_state

DEC = kg_spectral_decomposition(1)


def gaussian_state(grid, eps):
    phi0, psi0 = gaussian_data(grid)
    return kg_initial_state(grid, phi0, psi0, eps)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(t_final=-1.0), dict(t_final=1.0, dt=0.0), dict(t_final=1.0, c_dt=0.2),
                                    dict(t_final=1.0, scheme="rk4")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SolverConfig(**kw)

    @given(st.floats(0.01, 10), st.floats(0.05, 1))
    def test_steps_land_on_final_time(self, T, eps):
        n, dt = SolverConfig(t_final=T).steps(eps)
        assert n * dt == pytest.approx(T, rel=1e-12)
        assert dt <= SolverConfig(t_final=T).c_dt * eps**2 * (1 + 1e-9)


class TestLinearFlow:
    def test_zero_time_identity(self, rng):
        g = Grid(1, 32, 8.0, 0.3)
        u = Field(g, random_band_limited(g, 3, rng))
        assert np.max(np.abs(linear_flow(kg_system(1), DEC, 0.3, 0.0, u).data - u.data)) < 1e-14

    @given(st.integers(1, 6), st.floats(0.01, 5.0))
    def test_single_mode_matches_expm(self, k, t):
        g = Grid(1, 16, 2 * np.pi)
        s = kg_system(1)
        v = np.array([0.3, -1.0 + 0.2j, 0.5j])
        u = Field(g, v[:, None] * np.exp(1j * k * g.x[0]))
        out = linear_flow(s, DEC, 1.0, t, u).data[:, 0]
        ref = expm(-1j * t * s.symbol(np.array([[k]]))[0]) @ v
        assert np.max(np.abs(out - ref)) < 1e-11

    @given(st.integers(0, 2**31), st.floats(0.05, 1), st.floats(0, 3), st.floats(0, 3))
    def test_unitary_and_group(self, seed, eps, t1, t2):
        g = Grid(1, 32, 8.0, eps)
        u = Field(g, random_band_limited(g, 3, np.random.default_rng(seed)))
        s = kg_system(1)
        a = linear_flow(s, DEC, eps, t1, linear_flow(s, DEC, eps, t2, u))
        b = linear_flow(s, DEC, eps, t1 + t2, u)
        assert abs(sobolev_norm(b) - sobolev_norm(u)) <= 1e-12 * sobolev_norm(u)
        assert np.max(np.abs(a.data - b.data)) <= 1e-11 * max(1.0, np.max(np.abs(b.data)))


class TestNonlinearSubstep:
    def test_zero_u(self, rng):
        g = Grid(1, 8, 1.0)
        data = rng.standard_normal((3, 8))
        data[2] = 0
        out = nonlinear_substep(kg_system(1, 3.0), 0.7, Field(g, data))
        assert np.array_equal(out.data, data.astype(complex))

    def test_exact_linear_in_time(self):
        g = Grid(1, 8, 1.0)
        data = np.zeros((3, 8))
        data[2] = 1.0
        out = nonlinear_substep(kg_system(1, 2.0), 0.5, Field(g, data)).data
        assert np.allclose(out[1], -1.0) and np.allclose(out[2], 1.0) and np.allclose(out[0], 0)

    @given(st.integers(0, 2**31), st.floats(-2, 2), st.floats(0.001, 0.5))
    def test_matches_fine_rk4(self, seed, lam, dt):
        rng = np.random.default_rng(seed)
        g = Grid(1, 8, 1.0)
        s = kg_system(1, lam)
        y = rng.standard_normal((3, 8)) + 0j
        out = nonlinear_substep(s, dt, Field(g, y)).data
        h = dt / 100
        f = lambda z: s.bilinear(z, z)
        for _ in range(100):
            k1 = f(y); k2 = f(y + h / 2 * k1); k3 = f(y + h / 2 * k2); k4 = f(y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        assert np.max(np.abs(out - y)) <= 1e-10

    def test_generic_fallback_quadratic_ode(self):
        # u' = u^2 from u = 0.5 over dt = 0.4: u = 0.5 / (1 - 0.2)
        s = HyperbolicSystem(np.zeros((1, 1, 1)), np.zeros((1, 1)), np.ones((1, 1, 1)), 0.0)
        out = nonlinear_substep(s, 0.4, Field(Grid(1, 4, 1.0), np.full((1, 4), 0.5))).data
        assert np.allclose(out, 0.625, atol=1e-8)


class TestEvolve:
    def test_linear_case_equals_flow(self):
        eps = 0.2
        g = Grid(1, 128, 16 * np.pi, eps)
        U0 = gaussian_state(g, eps)
        s = kg_system(1, 0.0)
        traj = evolve(s, DEC, eps, U0, SolverConfig(t_final=0.5, dealias=False))
        ref = linear_flow(s, DEC, eps, 0.5, U0)
        assert np.max(np.abs(traj.final.data - ref.data)) < 1e-11

    def test_linear_conservation_over_many_steps(self):
        eps = 0.2
        g = Grid(1, 128, 16 * np.pi, eps)
        U0 = gaussian_state(g, eps)
        cfg = SolverConfig(t_final=1000 * 0.001, dt=0.001, record_every=100, dealias=False)
        traj = evolve(kg_system(1, 0.0), DEC, eps, U0, cfg)
        assert traj.steps == 1000
        base = sobolev_norm(U0)
        assert all(abs(sobolev_norm(f) - base) <= 1e-10 * base for f in traj.snapshots)
        hs = traj.norm_series
        assert max(hs) - min(hs) <= 1e-10 * hs[0]

    def test_reality_and_trajectory_shape(self):
        eps = 0.2
        g = Grid(1, 256, 20 * np.pi, eps)
        traj = evolve(kg_system(1), DEC, eps, gaussian_state(g, eps), SolverConfig(t_final=0.5, record_every=50))
        assert traj.status == "ok"
        assert all(b > a for a, b in zip(traj.times, traj.times[1:]))
        assert traj.times[-1] == 0.5
        assert all(f.grid == traj.snapshots[0].grid for f in traj.snapshots)
        assert max(f.imag_residue() for f in traj.snapshots) <= 1e-10

    def test_blowup_reported(self):
        s = HyperbolicSystem(np.zeros((1, 1, 1)), np.zeros((1, 1)), np.ones((1, 1, 1)), 0.0)
        dec = numeric_spectral_decomposition(s, 1)
        U0 = Field(Grid(1, 4, 1.0), np.ones((1, 4)))
        traj = evolve(s, dec, 1.0, U0, SolverConfig(t_final=2.0, dt=0.01, record_every=1, dealias=False))
        assert traj.status == "blowup"
        assert 0.9 < traj.last_valid_time <= 1.0 + 0.01
        assert traj.steps < 200

    def test_component_mismatch(self):
        with pytest.raises(ValueError):
            evolve(kg_system(1), DEC, 0.5, Field(Grid(1, 8, 1.0), np.zeros((2, 8))), SolverConfig(t_final=0.1))

    def test_step_halving_default(self):
        eps = 0.2
        g = Grid(1, 512, 40 * np.pi, eps)
        U0 = gaussian_state(g, eps)
        cfg = SolverConfig(t_final=1.0)
        _, dt = cfg.steps(eps)
        a = evolve(kg_system(1), DEC, eps, U0, cfg).final.data
        b = evolve(kg_system(1), DEC, eps, U0, cfg.with_(dt=dt / 2)).final.data
        assert sobolev_norm_array(g, a - b, 2) <= 1e-5


class TestSelfConvergence:
    @pytest.mark.parametrize("scheme,target", [("strang", 2.0), ("lie", 1.0)])
    def test_orders(self, scheme, target):
        eps = 0.2
        g = Grid(1, 512, 40 * np.pi, eps)
        res = self_convergence(kg_system(1), DEC, eps, gaussian_state(g, eps), SolverConfig(t_final=1.0, scheme=scheme))
        assert res.status == "ok" and abs(res.order - target) <= 0.3

    def test_linear_is_machine_noise(self):
        eps = 0.2
        g = Grid(1, 128, 16 * np.pi, eps)
        res = self_convergence(kg_system(1, 0.0), DEC, eps, gaussian_state(g, eps), SolverConfig(t_final=0.2))
        assert res.status == "machine-noise" and res.order is None


class TestPerturbation:
    def wkb(self, grid, lam=1.0, zero=False):
        phi0, psi0 = gaussian_data(grid)
        if zero:
            phi0, psi0 = 0 * phi0, 0 * psi0
        return WkbSolution(Envelope.from_data(Field(grid, phi0), Field(grid, psi0)), lam)

    def test_trivial_case_stays_zero(self):
        eps = 0.2
        g = Grid(1, 64, 8 * np.pi, eps)
        wkb = self.wkb(g, 0.0, zero=True)
        psi = Field(g, np.zeros((3, 64)))
        traj = evolve_perturbation(kg_system(1, 0.0), DEC, eps, wkb, psi, SolverConfig(t_final=0.1))
        assert not np.any(traj.final.data)

    def test_zero_envelope_is_linear_propagation(self, rng):
        eps = 0.2
        g = Grid(1, 64, 8 * np.pi, eps)
        wkb = self.wkb(g, 1.0, zero=True)
        psi = Field(g, random_band_limited(g, 3, rng, band=8))
        traj = evolve_perturbation(kg_system(1, 0.0), DEC, eps, wkb, psi, SolverConfig(t_final=0.2, dealias=False, record_every=10))
        base = sobolev_norm(psi)
        assert all(abs(sobolev_norm(f) - base) <= 1e-11 * base for f in traj.snapshots)

    @pytest.mark.slow
    def test_matches_direct_difference(self):
        # M = 1024 keeps the 2/3 truncation off the quadratic terms of U_a
        eps = 0.2
        g = Grid(1, 1024, 40 * np.pi, eps)
        wkb = self.wkb(g)
        s = kg_system(1)
        U0 = gaussian_state(g, eps)
        cfg = SolverConfig(t_final=1.0, c_dt=1 / 80)
        full = evolve(s, DEC, eps, U0, cfg).final.data
        dot = evolve_perturbation(s, DEC, eps, wkb, initial_defect(wkb, U0, eps), cfg).final.data
        recon = (full - evaluate_Ua(wkb, 1.0, eps).data) / eps
        assert sobolev_norm_array(g, recon - dot, 2) <= 1e-4
