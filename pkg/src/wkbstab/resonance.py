"""Resonances, transparency exponents, singular localization and normal forms.

Indices ``(j, j', p)`` are 1-based in the branch labels and p is +1 or -1.
The phase of an index is ``lambda_j - lambda_j' - p omega`` and its interaction
coefficient is ``Pi_j B(e_p) Pi_j'`` with ``e_p`` the unit generator of
``ker(-i p omega + A0)``.

Operators act on the diagonalised unknown: J*N components, block j holding the
Pi_j(eps D) part.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field as dc_field
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .fourier import Field, Grid, MatrixSymbol, operator_norm_probe, sobolev_norm_array
from .model import HyperbolicSystem, SpectralDecomposition, polarization_vector
from .operators import Compose, LinearOp, Multiplier, Pointwise, Scale, Sum

__all__ = [
    "ResonanceIndex",
    "CutoffSpec",
    "AlphaEstimate",
    "ResonanceModel",
    "LocalizedOperators",
    "bump",
    "all_indices",
    "KG_NON_STRONG",
    "neumann_inverse",
    "NeumannRefused",
    "fit_slope",
]

KG_NON_STRONG = frozenset({(1, 3, 1), (2, 3, -1)})


class ResonanceIndex(NamedTuple):
    j: int
    jp: int
    p: int

    def validate(self, J: int) -> "ResonanceIndex":
        if not (1 <= self.j <= J and 1 <= self.jp <= J) or self.p not in (-1, 1):
            raise ValueError(f"index {tuple(self)} out of range for J={J}")
        return self


def all_indices(J: int) -> List[ResonanceIndex]:
    return [ResonanceIndex(j, jp, p) for j in range(1, J + 1) for jp in range(1, J + 1) for p in (1, -1)]


def bump(r) -> np.ndarray:
    """1 on [0, 1], 0 on [2, inf), quintic smoothstep in between."""
    r = np.asarray(r, dtype=float)
    s = np.clip(r - 1.0, 0.0, 1.0)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


@dataclass(frozen=True)
class CutoffSpec:
    h: float

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("cutoff width h must be positive")

    def chi_of_phase(self, phase) -> np.ndarray:
        return bump(np.abs(phase) / self.h)


def fit_slope(x, y, confidence: float = 0.95) -> dict:
    """OLS fit of log y against log x with a confidence band on the slope."""
    from scipy import stats

    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    res = stats.linregress(lx, ly)
    n = len(lx)
    if n > 2:
        half = stats.t.ppf(0.5 + confidence / 2, n - 2) * res.stderr
    else:
        half = float("nan")
    resid = ly - (res.intercept + res.slope * lx)
    return {
        "slope": float(res.slope),
        "intercept": float(res.intercept),
        "ci_low": float(res.slope - half),
        "ci_high": float(res.slope + half),
        "rms_residual": float(np.sqrt(np.mean(resid**2))),
    }


@dataclass
class AlphaEstimate:
    index: ResonanceIndex
    alpha: Optional[float]
    kind: str  # "fitted" | "empty-resonance" | "identically-zero"
    lower_bound_c: Optional[float] = None
    fit_rms: Optional[float] = None
    strong_ratio_slope: Optional[float] = None
    strong_ratio_sup: Optional[float] = None
    shells: list = dc_field(default_factory=list)  # (r, count, max coef, max ratio)
    empty_shells: list = dc_field(default_factory=list)

    @property
    def strongly_transparent(self) -> bool:
        if self.kind in ("identically-zero", "empty-resonance"):
            return True
        return self.alpha is not None and self.alpha >= 0.95 and (self.strong_ratio_slope or 0.0) > -0.05


def default_xi_samples(d: int, seed: int = 0) -> np.ndarray:
    """Radial samples with log-spaced radii in [1e-6, 10] plus a uniform box grid."""
    radii = np.logspace(-6, 1, 3000)
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
        box = np.linspace(-10, 10, 4001)[:, None]
    else:
        rng = np.random.default_rng(seed)
        dirs = rng.standard_normal((62, d))
        dirs = np.vstack([dirs / np.linalg.norm(dirs, axis=1, keepdims=True), np.eye(d), -np.eye(d)])
        box = rng.uniform(-10, 10, (4000, d))
    radial = (dirs[:, None, :] * radii[None, :, None]).reshape(-1, d)
    return np.vstack([np.zeros((1, d)), radial, box])


class ResonanceModel:
    """Phases, coefficients and normal-form symbols for one system."""

    def __init__(
        self,
        system: HyperbolicSystem,
        decomp: SpectralDecomposition,
        J1: Optional[Iterable[Tuple[int, int, int]]] = None,
    ):
        self.system = system
        self.decomp = decomp
        e1 = polarization_vector(system, 1)
        self.e = {1: e1, -1: np.conj(e1)}
        self.Be = {p: system.bilinear_matrix(self.e[p]) for p in (1, -1)}
        self._J1 = None if J1 is None else frozenset(ResonanceIndex(*i) for i in J1)

    @property
    def J(self) -> int:
        return self.decomp.J

    def _idx(self, idx) -> ResonanceIndex:
        return ResonanceIndex(*idx).validate(self.J)

    def phase(self, idx, xi) -> np.ndarray:
        idx = self._idx(idx)
        xi = np.asarray(xi, dtype=float)
        single = xi.ndim <= 1
        pts = np.atleast_2d(xi.reshape(1, -1) if single else xi)
        lam = self.decomp.lambdas(pts)
        out = lam[idx.j - 1] - lam[idx.jp - 1] - idx.p * self.system.omega
        return float(out[0]) if single else out

    def interaction_coefficient(self, idx, xi) -> np.ndarray:
        idx = self._idx(idx)
        xi = np.asarray(xi, dtype=float)
        single = xi.ndim <= 1
        pts = np.atleast_2d(xi.reshape(1, -1) if single else xi)
        Pj = self.decomp.projectors[idx.j - 1](pts)
        Pk = self.decomp.projectors[idx.jp - 1](pts)
        out = Pj @ self.Be[idx.p] @ Pk
        return out[0] if single else out

    def coefficient_symbol(self, idx) -> MatrixSymbol:
        idx = self._idx(idx)
        N = self.system.N
        return MatrixSymbol(N, N, 0, lambda xi: self.interaction_coefficient(idx, xi), name=f"coef{tuple(idx)}")

    # -------------------------------------------------------- exponent

    def estimate_alpha(
        self,
        idx,
        shells: Sequence[float] = tuple(np.logspace(-3, -1, 9)),
        xi_samples: Optional[np.ndarray] = None,
        zero_tol: float = 1e-13,
        empty_tol: float = 1e-9,
    ) -> AlphaEstimate:
        """Fit log max_{|phase| ~ r} ||coef|| against log r over the given shells.

        Shell r collects samples with |phase| in [r / q, r q), q the square root
        of the ratio between consecutive radii.
        """
        idx = self._idx(idx)
        xi = default_xi_samples(self.system.d) if xi_samples is None else np.atleast_2d(xi_samples)
        ph = np.abs(self.phase(idx, xi))
        coef = np.linalg.norm(self.interaction_coefficient(idx, xi), ord=2, axis=(-2, -1))
        if np.max(coef) <= zero_tol:
            return AlphaEstimate(idx, None, "identically-zero")
        if np.min(ph) > empty_tol:
            return AlphaEstimate(idx, 1.0, "empty-resonance", lower_bound_c=float(np.min(ph)))
        shells = np.sort(np.asarray(shells, dtype=float))
        q = math.sqrt(shells[1] / shells[0]) if len(shells) > 1 else 1.1
        est = AlphaEstimate(idx, None, "fitted")
        rs, cmax, ratio = [], [], []
        for r in shells:
            mask = (ph >= r / q) & (ph < r * q)
            if not np.any(mask):
                est.empty_shells.append(float(r))
                continue
            c = float(np.max(coef[mask]))
            rt = float(np.max(coef[mask] / ph[mask]))
            est.shells.append((float(r), int(mask.sum()), c, rt))
            rs.append(r)
            cmax.append(c)
            ratio.append(rt)
        if len(rs) < 2:
            return est
        fit = fit_slope(rs, cmax)
        est.alpha = fit["slope"]
        est.fit_rms = fit["rms_residual"]
        est.strong_ratio_slope = fit_slope(rs, ratio)["slope"]
        est.strong_ratio_sup = float(max(ratio))
        return est

    def classify(self, **kw) -> Dict[ResonanceIndex, AlphaEstimate]:
        return {idx: self.estimate_alpha(idx, **kw) for idx in all_indices(self.J)}

    @property
    def J1(self) -> FrozenSet[ResonanceIndex]:
        """Strongly transparent indices (numeric classification unless given)."""
        if self._J1 is None:
            est = self.classify()
            self._J1 = frozenset(i for i, e in est.items() if e.strongly_transparent)
        return self._J1

    def alpha(self, **kw) -> float:
        fitted = [e.alpha for e in self.classify(**kw).values() if e.kind == "fitted" and e.alpha is not None]
        return min(fitted) if fitted else 1.0

    # -------------------------------------------------------- cutoffs and normal forms

    def cutoff_chi(self, idx, spec: CutoffSpec, xi) -> np.ndarray:
        idx = self._idx(idx)
        ph = self.phase(idx, xi)
        if idx in self.J1:
            return np.zeros_like(np.asarray(ph, dtype=float))
        return spec.chi_of_phase(ph)

    def normal_form_values(self, idx, spec: CutoffSpec, xi) -> np.ndarray:
        """tilde M = -2i (1 - chi) coef / phase, zero where (1 - chi) coef vanishes."""
        idx = self._idx(idx)
        pts = np.atleast_2d(np.asarray(xi, dtype=float))
        ph = np.atleast_1d(self.phase(idx, pts))
        num = (1.0 - np.atleast_1d(self.cutoff_chi(idx, spec, pts)))[:, None, None] * self.interaction_coefficient(idx, pts)
        zero = np.max(np.abs(num), axis=(-2, -1)) == 0.0
        if np.any((ph == 0.0) & ~zero):
            raise ZeroDivisionError(f"phase vanishes where (1-chi) coef does not, index {tuple(idx)}")
        safe = np.where(zero, 1.0, ph)
        out = -2j * num / safe[:, None, None]
        out[zero] = 0.0
        return out

    def normal_form_symbol(self, idx, spec: CutoffSpec) -> MatrixSymbol:
        idx = self._idx(idx)
        N = self.system.N
        return MatrixSymbol(N, N, 0, lambda xi: self.normal_form_values(idx, spec, xi), name=f"Mtilde{tuple(idx)}")

    def refined_placement(self, idx) -> str:
        """'j-const' (cutoff right, g left) or 'jp-const' (cutoff left, g right)."""
        idx = self._idx(idx)
        if self.decomp.constant[idx.j - 1]:
            return "j-const"
        if self.decomp.constant[idx.jp - 1]:
            return "jp-const"
        raise ValueError(
            f"refined splitting needs a constant branch for index {tuple(idx)}; "
            f"lambda_{idx.j} and lambda_{idx.jp} both vary"
        )


# ------------------------------------------------------------------ operators


class LocalizedOperators:
    """B_1, its splittings, the normal-form operators M, Q and their defects at (t, eps).

    ``profiles`` maps p to the scalar field g_p (and ``dprofiles`` to its time
    derivative) such that U_{0,p} = g_p e_p.
    """

    def __init__(
        self,
        model: ResonanceModel,
        grid: Grid,
        eps: float,
        t: float,
        profiles: Dict[int, np.ndarray],
        dprofiles: Optional[Dict[int, np.ndarray]] = None,
    ):
        self.model = model
        self.grid = grid.with_eps(eps)
        self.eps = eps
        self.t = t
        self.N = model.system.N
        self.J = model.J
        self.JN = self.J * self.N
        self.g = {p: np.asarray(profiles[p]).reshape(self.grid.shape) for p in (1, -1)}
        dprofiles = dprofiles or {p: np.zeros(self.grid.shape, complex) for p in (1, -1)}
        self.dg = {p: np.asarray(dprofiles[p]).reshape(self.grid.shape) for p in (1, -1)}
        self.phase_factor = {p: np.exp(-1j * p * model.system.omega * t / eps**2) for p in (1, -1)}
        xi = eps * self.grid.wavenumbers.reshape(-1, self.grid.d)
        self._xi = xi
        self.P = self.grid.npoints
        nyq = self.grid.nyquist_mask.reshape(-1)
        self.Pi = []
        for j in range(self.J):
            T = np.array(model.decomp.projectors[j](xi))
            T[nyq] = 0.0
            self.Pi.append(T)
        self.lam = model.decomp.lambdas(xi)
        self._nyq = nyq

    # ---------------- table helpers

    def _shape(self, flat: np.ndarray) -> np.ndarray:
        return flat.reshape(self.grid.shape + flat.shape[1:])

    def _mult(self, flat: np.ndarray) -> Multiplier:
        return Multiplier(self.grid, self._shape(flat))

    def _pointwise(self, matrix: np.ndarray, g: np.ndarray) -> Pointwise:
        return Pointwise(self.grid, np.einsum("ab,...->ab...", matrix, g))

    def _scalar(self, g: np.ndarray, comps: int) -> Pointwise:
        return Pointwise.scalar(self.grid, g, comps)

    def _embed_left(self, j: int, block: np.ndarray) -> np.ndarray:
        out = np.zeros((self.P, self.JN, self.N), dtype=complex)
        out[:, j * self.N : (j + 1) * self.N, :] = block
        return out

    def _select_right(self, j: int, block: np.ndarray) -> np.ndarray:
        out = np.zeros((self.P, self.N, self.JN), dtype=complex)
        out[:, :, j * self.N : (j + 1) * self.N] = block
        return out

    def chi(self, idx, spec: CutoffSpec) -> np.ndarray:
        idx = ResonanceIndex(*idx)
        if idx in self.model.J1:
            return np.zeros(self.P)
        ph = self.lam[idx.j - 1] - self.lam[idx.jp - 1] - idx.p * self.model.system.omega
        return spec.chi_of_phase(ph)

    def Mtilde(self, idx, spec: CutoffSpec) -> np.ndarray:
        idx = ResonanceIndex(*idx)
        ph = self.lam[idx.j - 1] - self.lam[idx.jp - 1] - idx.p * self.model.system.omega
        coef = self.Pi[idx.j - 1] @ self.model.Be[idx.p] @ self.Pi[idx.jp - 1]
        num = (1.0 - self.chi(idx, spec))[:, None, None] * coef
        zero = np.max(np.abs(num), axis=(-2, -1)) == 0.0
        if np.any((ph == 0.0) & ~zero):
            raise ZeroDivisionError(f"phase vanishes where (1-chi) coef does not, index {tuple(idx)}")
        out = -2j * num / np.where(zero, 1.0, ph)[:, None, None]
        out[zero] = 0.0
        return out

    # ---------------- B_1 and its splittings

    def B1(self) -> LinearOp:
        S = np.concatenate(self.Pi, axis=1)  # (P, JN, N)
        R = np.concatenate(self.Pi, axis=2)  # (P, N, JN)
        terms = []
        for p in (1, -1):
            pw = self._pointwise(self.model.Be[p], self.g[p])
            terms.append(Scale(2 * self.phase_factor[p], Compose([self._mult(S), pw, self._mult(R)])))
        return Sum(terms)

    def _split_terms(self, weights: Dict[Tuple[int, int, int], Tuple[str, np.ndarray]]) -> LinearOp:
        """Assemble sum_p 2 e_p sum_{j,j'} [cutoff-weighted block].

        ``weights[idx] = (side, w)`` puts the per-mode weight w on the left
        ('left') or right ('right') of Pi_j B(U_{0,p}) Pi_j'.
        """
        terms = []
        for p in (1, -1):
            pw = self._pointwise(self.model.Be[p], self.g[p])
            left_groups = {jp: np.zeros((self.P, self.JN, self.N), complex) for jp in range(self.J)}
            right_groups = {j: np.zeros((self.P, self.N, self.JN), complex) for j in range(self.J)}
            used_l, used_r = set(), set()
            for j in range(self.J):
                for jp in range(self.J):
                    side, w = weights[(j + 1, jp + 1, p)]
                    if not np.any(w):
                        continue
                    if side == "left":
                        left_groups[jp][:, j * self.N : (j + 1) * self.N, :] += w[:, None, None] * self.Pi[j]
                        used_l.add(jp)
                    else:
                        right_groups[j][:, :, jp * self.N : (jp + 1) * self.N] += w[:, None, None] * self.Pi[jp]
                        used_r.add(j)
            for jp in sorted(used_l):
                R = self._select_right(jp, self.Pi[jp])
                terms.append(Scale(2 * self.phase_factor[p], Compose([self._mult(left_groups[jp]), pw, self._mult(R)])))
            for j in sorted(used_r):
                L = self._embed_left(j, self.Pi[j])
                terms.append(Scale(2 * self.phase_factor[p], Compose([self._mult(L), pw, self._mult(right_groups[j])])))
        if not terms:
            return Scale(0.0, self.B1())
        return Sum(terms)

    def split_B1(self, spec: CutoffSpec, variant: str = "plain") -> Tuple[LinearOp, LinearOp]:
        if variant not in ("plain", "refined"):
            raise ValueError("variant must be 'plain' or 'refined'")
        w_in, w_out = {}, {}
        ones = np.ones(self.P)
        for idx in all_indices(self.J):
            chi = self.chi(idx, spec)
            if variant == "plain" or idx in self.model.J1:
                side = "left"
            else:
                side = "right" if self.model.refined_placement(idx) == "j-const" else "left"
            w_in[tuple(idx)] = (side, chi)
            w_out[tuple(idx)] = (side, ones - chi)
        return self._split_terms(w_in), self._split_terms(w_out)

    # ---------------- normal forms

    def _normal_blocks(self, spec: CutoffSpec, p: int, order: str) -> Tuple[np.ndarray, np.ndarray]:
        """(right, left): big tables whose blocks compose as Mtilde o g and g o Mtilde."""
        right = np.zeros((self.P, self.JN, self.JN), complex)
        left = np.zeros_like(right)
        for j in range(self.J):
            for jp in range(self.J):
                idx = ResonanceIndex(j + 1, jp + 1, p)
                block = self.Mtilde(idx, spec)
                if order == "M":
                    target = right
                else:
                    target = left if self.q_order(idx) == "g-left" else right
                target[:, j * self.N : (j + 1) * self.N, jp * self.N : (jp + 1) * self.N] = block
        return right, left

    def q_order(self, idx) -> str:
        """Placement of g_p in the Q block: next to a constant branch when there is one.

        Strongly transparent blocks with no constant branch use g_p o Mtilde.
        """
        idx = ResonanceIndex(*idx)
        const = self.model.decomp.constant
        if idx not in self.model.J1:
            return "g-left" if self.model.refined_placement(idx) == "j-const" else "g-right"
        if const[idx.j - 1]:
            return "g-left"
        if const[idx.jp - 1]:
            return "g-right"
        return "g-left"

    def _normal_operator(self, spec: CutoffSpec, order: str, derivative: bool = False) -> LinearOp:
        terms = []
        for p in (1, -1):
            right, left = self._normal_blocks(spec, p, order)
            g = self.dg[p] if derivative else self.g[p]
            gs = self._scalar(g, self.JN)
            if np.any(right):
                terms.append(Scale(self.phase_factor[p], Compose([self._mult(right), gs])))
            if np.any(left):
                terms.append(Scale(self.phase_factor[p], Compose([gs, self._mult(left)])))
        if not terms:
            return Scale(0.0, Multiplier(self.grid, np.zeros(self.grid.shape + (self.JN, self.JN))))
        return Sum(terms)

    def build_M(self, spec: CutoffSpec) -> LinearOp:
        return self._normal_operator(spec, "M")

    def build_Q(self, spec: CutoffSpec) -> LinearOp:
        for idx in all_indices(self.J):
            if idx not in self.model.J1:
                self.model.refined_placement(idx)
        return self._normal_operator(spec, "Q")

    def eps2_dt(self, spec: CutoffSpec, order: str) -> LinearOp:
        """eps^2 d/dt of M or Q: phase part -i p omega X^{(p)} plus eps^2 (dg_p/dt) part."""
        terms = []
        for p in (1, -1):
            right, left = self._normal_blocks(spec, p, order)
            g = self._scalar(self.g[p], self.JN)
            dg = self._scalar(self.dg[p], self.JN)
            c = self.phase_factor[p]
            ph = -1j * p * self.model.system.omega
            if np.any(right):
                R = self._mult(right)
                terms.append(Scale(c * ph, Compose([R, g])))
                terms.append(Scale(c * self.eps**2, Compose([R, dg])))
            if np.any(left):
                Lm = self._mult(left)
                terms.append(Scale(c * ph, Compose([g, Lm])))
                terms.append(Scale(c * self.eps**2, Compose([dg, Lm])))
        return Sum(terms)

    def A1(self) -> Multiplier:
        table = np.zeros((self.P, self.JN, self.JN), complex)
        for j in range(self.J):
            for a in range(self.N):
                table[:, j * self.N + a, j * self.N + a] = self.lam[j]
        table[self._nyq] = 0.0
        return self._mult(table)

    def defect(self, spec: CutoffSpec, which: str = "M") -> LinearOp:
        """B_out - i[A_1, X] - eps^2 dX/dt with X = M (plain split) or Q (refined)."""
        if which not in ("M", "Q"):
            raise ValueError("which must be 'M' or 'Q'")
        variant = "plain" if which == "M" else "refined"
        _, Bout = self.split_B1(spec, variant)
        X = self.build_M(spec) if which == "M" else self.build_Q(spec)
        A1 = self.A1()
        comm = Sum([Compose([A1, X]), Scale(-1.0, Compose([X, A1]))])
        return Sum([Bout, Scale(-1j, comm), Scale(-1.0, self.eps2_dt(spec, which))])

    def constant_branch_commutator_residual(self, spec: CutoffSpec, probes: int = 3, seed: int = 0) -> float:
        """max over Q blocks touching a constant branch of
        ||(lambda_j Q_jj' - Q_jj' lambda_j') u - [(lambda_j - lambda_j') Mtilde](eps D)-ordered u|| / ||u||.

        The reference keeps g_p on the same side as Q, so the difference is
        exactly the commutator [lambda_const, g_p], which must vanish.
        """
        from .fourier import random_band_limited

        rng = np.random.default_rng(seed)
        worst = 0.0
        for idx in all_indices(self.J):
            j, jp, p = idx.j - 1, idx.jp - 1, idx.p
            if not (self.model.decomp.constant[j] or self.model.decomp.constant[jp]):
                continue
            block = self.Mtilde(idx, spec)
            if not np.any(block):
                continue
            g_left = self.q_order(idx) == "g-left"
            lam_j = self._mult(self.lam[j][:, None, None] * np.eye(self.N))
            lam_jp = self._mult(self.lam[jp][:, None, None] * np.eye(self.N))
            Mt = self._mult(block)
            gs = self._scalar(self.g[p], self.N)
            Qb = Compose([gs, Mt]) if g_left else Compose([Mt, gs])
            diff_sym = self._mult((self.lam[j] - self.lam[jp])[:, None, None] * block)
            ref = Compose([gs, diff_sym]) if g_left else Compose([diff_sym, gs])
            for _ in range(probes):
                u = random_band_limited(self.grid, self.N, rng)
                lhs = lam_j.apply(Qb.apply(u)) - Qb.apply(lam_jp.apply(u))
                diff = np.linalg.norm(lhs - ref.apply(u)) / np.linalg.norm(u)
                worst = max(worst, float(diff))
        return worst

    def norm(self, op: LinearOp, mu: float = 2.0, trials: int = 2, seed: int = 0, iterations: int = 25) -> float:
        return operator_norm_probe(op, mu, trials, seed, power_iterations=iterations)


class NeumannRefused(ValueError):
    pass


def neumann_inverse(
    op: LinearOp,
    field: Field,
    tol: float = 1e-10,
    norm_estimate: Optional[float] = None,
    s: float = 0.0,
    max_terms: int = 500,
    seed: int = 0,
) -> Field:
    """(Id + op)^{-1} field via sum_k (-op)^k field, refusing when ||op|| >= 1/2."""
    q = norm_estimate
    if q is None:
        q = operator_norm_probe(op, s, 2, seed, power_iterations=30)
    if q >= 0.5:
        raise NeumannRefused(f"measured ||op|| = {q:.3f} >= 0.5")
    target = sobolev_norm_array(field.grid, field.data, s)
    result = field.data.copy()
    term = field.data.copy()
    for _ in range(max_terms):
        term = -op.apply(term)
        result = result + term
        if sobolev_norm_array(field.grid, term, s) <= 0.1 * tol * max(target, 1e-300):
            break
    out = Field(field.grid, result)
    resid = sobolev_norm_array(field.grid, result + op.apply(result) - field.data, s)
    if resid > tol * max(target, 1e-300):
        raise RuntimeError(f"Neumann series did not reach tolerance (residual {resid:.2e})")
    return out
