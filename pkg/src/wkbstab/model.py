"""Symmetric hyperbolic systems  dU/dt + (1/eps) A(dx) U + (1/eps^2) A0 U = B(U, U).

``A(dx) = sum_j A_j d_j`` with real symmetric ``A_j``, ``A0`` real skew and
``B`` a symmetric bilinear map stored as a tensor ``B[i, j, k]`` so that
``B(x, y)_i = sum_jk B[i, j, k] x_j y_k``.

The Klein-Gordon instance uses ``U = (w, v, u)`` with ``w`` in R^d, and models
``eps^2 u_tt - Laplace u + u / eps^2 = -lambda u^2`` through ``w = eps grad u``,
``v = eps^2 u_t``.
"""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from .fourier import MatrixSymbol, japanese_bracket

__all__ = [
    "HyperbolicSystem",
    "SpectralDecomposition",
    "HarmonicProjector",
    "ClusterAmbiguityError",
    "ConditionResult",
    "ConditionReport",
    "kg_system",
    "kg_spectral_decomposition",
    "kg_e1",
    "CASCADE_TO_UNIT",
    "numerical_decomposition",
    "numeric_spectral_decomposition",
    "harmonic_projector",
    "polarization_vector",
    "check_conditions",
    "load_system",
    "system_from_dict",
]

# U_{0,1} = g0 (0, -i, 1) = (sqrt(2) g0) e1 with e1 the unit generator.
CASCADE_TO_UNIT = np.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class HyperbolicSystem:
    A: np.ndarray  # (d, N, N)
    A0: np.ndarray  # (N, N)
    B: np.ndarray  # (N, N, N), symmetric in the last two slots
    omega: float = 1.0
    name: str = "custom"

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        A0 = np.asarray(self.A0, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ValueError("A must have shape (d, N, N)")
        N = A.shape[1]
        if A0.shape != (N, N) or B.shape != (N, N, N):
            raise ValueError("A0 must be (N, N) and B must be (N, N, N)")
        for name, val in (("A", A), ("A0", A0), ("B", B)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def N(self) -> int:
        return self.A0.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[0]

    def symbol(self, xi) -> np.ndarray:
        """calA(xi) = A(xi) + A0 / i, vectorised over xi of shape (n, d)."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        return np.einsum("nj,jab->nab", xi, self.A) - 1j * self.A0

    def A_symbol(self) -> MatrixSymbol:
        return MatrixSymbol(self.N, self.N, 1, self.symbol, hermitian=True, name="calA")

    def derivative_symbol(self) -> MatrixSymbol:
        """Symbol of A(dx): i A(xi)."""
        A = self.A
        return MatrixSymbol(
            self.N, self.N, 1, lambda xi: 1j * np.einsum("nj,jab->nab", xi, A), name="A(dx)"
        )

    @functools.cached_property
    def _B_entries(self):
        idx = np.argwhere(self.B != 0)
        return [(int(i), int(j), int(k), float(self.B[i, j, k])) for i, j, k in idx]

    def bilinear(self, x, y) -> np.ndarray:
        """B(x, y) with vectors in the leading axis; trailing axes broadcast."""
        x, y = np.asarray(x), np.asarray(y)
        shape = np.broadcast_shapes(x.shape[1:], y.shape[1:])
        out = np.zeros((self.N,) + shape, dtype=np.result_type(x, y, float))
        for i, j, k, val in self._B_entries:
            out[i] += val * x[j] * y[k]
        return out

    def bilinear_matrix(self, e) -> np.ndarray:
        """The matrix of V -> B(e, V)."""
        return np.einsum("ijk,j->ik", self.B, np.asarray(e, dtype=complex))

    def with_(self, **changes) -> "HyperbolicSystem":
        kw = dict(A=self.A, A0=self.A0, B=self.B, omega=self.omega, name=self.name)
        kw.update(changes)
        return HyperbolicSystem(**kw)

    @property
    def bilinear_nilpotent(self) -> bool:
        """True when B only writes to components it never reads.

        Then dU/dt = B(U, U) has the exact flow U + t B(U, U).
        """
        outputs = np.any(self.B != 0, axis=(1, 2))
        inputs = np.any(self.B != 0, axis=(0, 2)) | np.any(self.B != 0, axis=(0, 1))
        return not np.any(outputs & inputs)


def kg_system(d: int = 1, lambda_c: float = 1.0) -> HyperbolicSystem:
    if d < 1:
        raise ValueError("d must be >= 1")
    N = d + 2
    v, u = d, d + 1
    A = np.zeros((d, N, N))
    for j in range(d):
        A[j, j, v] = A[j, v, j] = -1.0
    A0 = np.zeros((N, N))
    A0[v, u], A0[u, v] = 1.0, -1.0
    B = np.zeros((N, N, N))
    B[v, u, u] = -float(lambda_c)
    return HyperbolicSystem(A, A0, B, 1.0, name=f"klein-gordon(d={d}, lambda={lambda_c})")


def kg_e1(d: int, unit: bool = True) -> np.ndarray:
    """Generator (0_d, -i, 1) of ker(-i + A0), optionally normalised."""
    e = np.zeros(d + 2, dtype=complex)
    e[d], e[d + 1] = -1j, 1.0
    return e / CASCADE_TO_UNIT if unit else e


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Eigenvalue symbols lambda_j and projector symbols Pi_j of calA(xi)."""

    eigenvalues: Tuple[Callable[[np.ndarray], np.ndarray], ...]
    projectors: Tuple[MatrixSymbol, ...]
    constant: Tuple[bool, ...]
    d: int
    N: int

    @property
    def J(self) -> int:
        return len(self.projectors)

    def lambdas(self, xi) -> np.ndarray:
        """(J, n) eigenvalues at xi of shape (n, d)."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        return np.stack([np.broadcast_to(f(xi), (xi.shape[0],)) for f in self.eigenvalues])

    def projector_stack(self, xi) -> np.ndarray:
        """(J, n, N, N) projectors at xi."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        return np.stack([P(xi) for P in self.projectors])

    def lambda_symbol(self, j: int) -> MatrixSymbol:
        f = self.eigenvalues[j]
        return MatrixSymbol.scalar(lambda xi: np.broadcast_to(f(xi), (len(xi),)), 1, f"lambda_{j+1}")

    def invariant_residuals(self, system: HyperbolicSystem, xi) -> dict:
        """Worst-case residuals of the decomposition identities over xi samples."""
        P = self.projector_stack(xi)
        lam = self.lambdas(xi)
        eye = np.eye(self.N)
        total = np.sum(P, axis=0)
        res_sum = np.max(np.linalg.norm(total - eye, ord=2, axis=(-2, -1)))
        res_orth = 0.0
        for j, k in itertools.product(range(self.J), repeat=2):
            prod = P[j] @ P[k]
            target = P[j] if j == k else 0.0
            res_orth = max(res_orth, np.max(np.linalg.norm(prod - target, ord=2, axis=(-2, -1))))
        recon = np.einsum("jn,jnab->nab", lam, P)
        res_recon = np.max(np.linalg.norm(recon - system.symbol(xi), ord=2, axis=(-2, -1)))
        res_herm = np.max(np.abs(P - np.conj(np.swapaxes(P, -1, -2))))
        return {
            "sum_identity": float(res_sum),
            "orthogonality": float(res_orth),
            "reconstruction": float(res_recon),
            "hermitian": float(res_herm),
        }


def _kg_projector_fn(d: int, sign: float):
    def fn(xi):
        br = japanese_bracket(xi)
        lam = sign * br
        n = xi.shape[0]
        vec = np.empty((n, d + 2), dtype=complex)
        vec[:, :d] = -xi / lam[:, None]
        vec[:, d] = 1.0
        vec[:, d + 1] = 1j / lam
        return 0.5 * vec[:, :, None] * np.conj(vec[:, None, :])

    return fn


def _kg_pi3_fn(d: int):
    def fn(xi):
        n = xi.shape[0]
        br2 = 1.0 + np.sum(xi**2, axis=-1)
        out = np.zeros((n, d + 2, d + 2), dtype=complex)
        out[:, :d, :d] = np.eye(d) - xi[:, :, None] * xi[:, None, :] / br2[:, None, None]
        out[:, :d, d + 1] = -1j * xi / br2[:, None]
        out[:, d + 1, :d] = 1j * xi / br2[:, None]
        out[:, d + 1, d + 1] = (br2 - 1.0) / br2
        return out

    return fn


def kg_spectral_decomposition(d: int = 1) -> SpectralDecomposition:
    """Closed form: lambda = <xi>, -<xi>, 0.

    Pi_{1,2} = v v^H / 2 with v = (-xi/lambda, 1, i/lambda); Pi_3 is the
    complement, of rank d.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    N = d + 2
    P1 = MatrixSymbol(N, N, 0, _kg_projector_fn(d, 1.0), True, "Pi_1")
    P2 = MatrixSymbol(N, N, 0, _kg_projector_fn(d, -1.0), True, "Pi_2")
    P3 = MatrixSymbol(N, N, 0, _kg_pi3_fn(d), True, "Pi_3")
    lams = (
        lambda xi: japanese_bracket(xi),
        lambda xi: -japanese_bracket(xi),
        lambda xi: np.zeros(np.atleast_2d(xi).shape[0]),
    )
    return SpectralDecomposition(lams, (P1, P2, P3), (False, False, True), d, N)


class ClusterAmbiguityError(ValueError):
    """Eigenvalue grouping is not well defined at the declared tolerance."""


def numerical_decomposition(
    system: HyperbolicSystem, xi, cluster_tol: float = 1e-8
) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Eigenvalues (ascending, one per cluster) and cluster projectors at one xi.

    Eigenvalues closer than ``cluster_tol`` are merged; if a chain of small gaps
    spans more than ``cluster_tol`` the grouping is ambiguous and an error is
    raised.
    """
    mat = system.symbol(np.asarray(xi, dtype=float).reshape(1, -1))[0]
    if np.max(np.abs(mat - mat.conj().T)) > 1e-12 * max(1.0, np.max(np.abs(mat))):
        raise ValueError("calA(xi) is not Hermitian")
    w, V = np.linalg.eigh(mat)
    groups: List[List[int]] = [[0]]
    for i in range(1, len(w)):
        if w[i] - w[i - 1] < cluster_tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    values, projectors = [], []
    for g in groups:
        spread = w[g[-1]] - w[g[0]]
        if spread >= cluster_tol:
            raise ClusterAmbiguityError(
                f"eigenvalues {w[g]} chain within tolerance {cluster_tol} but span {spread:.3e}"
            )
        values.append(float(np.mean(w[g])))
        Vg = V[:, g]
        projectors.append(Vg @ Vg.conj().T)
    return np.array(values), projectors


def numeric_spectral_decomposition(system: HyperbolicSystem, J: int, cluster_tol: float = 1e-8):
    """SpectralDecomposition built from eigh, for systems with J stable clusters."""

    def parts(xi):
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        lams = np.empty((J, xi.shape[0]))
        projs = np.empty((J, xi.shape[0], system.N, system.N), dtype=complex)
        for n, x in enumerate(xi):
            vals, ps = numerical_decomposition(system, x, cluster_tol)
            if len(vals) != J:
                raise ClusterAmbiguityError(f"expected {J} clusters at xi={x}, found {len(vals)}")
            lams[:, n] = vals
            projs[:, n] = ps
        return lams, projs

    lam_fns = tuple((lambda j: (lambda xi: parts(xi)[0][j]))(j) for j in range(J))
    syms = tuple(
        MatrixSymbol(system.N, system.N, 0, (lambda j: (lambda xi: parts(xi)[1][j]))(j), True, f"Pi_{j+1}")
        for j in range(J)
    )
    return SpectralDecomposition(lam_fns, syms, (False,) * J, system.d, system.N)


@dataclass(frozen=True, eq=False)
class HarmonicProjector:
    p: int
    pi_p: np.ndarray
    Lp: np.ndarray
    Lp_inv: np.ndarray

    @property
    def rank(self) -> int:
        return int(round(np.trace(self.pi_p).real))


def harmonic_projector(system: HyperbolicSystem, p: int, rank_tol: float = 1e-10) -> HarmonicProjector:
    """Orthogonal projector onto ker(-i p omega + A0) and the partial inverse of L_p."""
    Lp = -1j * p * system.omega * np.eye(system.N) + system.A0
    U, s, Vh = np.linalg.svd(Lp)
    null = s <= rank_tol * max(1.0, s[0] if s.size else 1.0)
    K = Vh[null].conj().T
    pi = K @ K.conj().T
    inv_s = np.where(null, 0.0, 1.0 / np.where(null, 1.0, s))
    Lp_inv = (Vh.conj().T * inv_s) @ U.conj().T
    return HarmonicProjector(p, pi, Lp, Lp_inv)


def polarization_vector(system: HyperbolicSystem, p: int = 1) -> np.ndarray:
    """Unit generator e_p of a one-dimensional ker(-i p omega + A0).

    The phase is fixed so that the last nonzero component is real positive,
    which reproduces (0, -i, 1)/sqrt(2) for Klein-Gordon.
    """
    hp = harmonic_projector(system, p)
    if hp.rank != 1:
        raise ValueError(f"ker(-i p omega + A0) has dimension {hp.rank}, expected 1")
    col = hp.pi_p[:, np.argmax(np.abs(np.diag(hp.pi_p)))]
    e = col / np.linalg.norm(col)
    nz = np.nonzero(np.abs(e) > 1e-12)[0][-1]
    return e * (abs(e[nz]) / e[nz])


# ---------------------------------------------------------------- conditions


@dataclass
class ConditionResult:
    name: str
    passed: bool
    residual: float
    witness: str = ""


@dataclass
class ConditionReport:
    results: List[ConditionResult] = dc_field(default_factory=list)
    tol: float = 1e-10

    def add(self, name, residual, witness="", tol=None):
        tol = self.tol if tol is None else tol
        residual = float(residual)
        self.results.append(ConditionResult(name, bool(residual <= tol), residual, witness))

    def __getitem__(self, name) -> ConditionResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def passed(self) -> bool:
        return bool(self.results) and all(r.passed for r in self.results)

    def table(self) -> str:
        lines = [f"{'check':32s} {'pass':5s} {'residual':>11s}  witness"]
        for r in self.results:
            lines.append(f"{r.name:32s} {str(r.passed):5s} {r.residual:11.3e}  {r.witness}")
        return "\n".join(lines)


def _bilinear_of_matrices(system: HyperbolicSystem, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Tensor T[i, a, b] = B(P[:, a], Q[:, b])_i."""
    return np.einsum("ijk,ja,kb->iab", system.B, P, Q)


def _worst(current, value, witness):
    return (value, witness) if value > current[0] else current


def check_conditions(
    system: HyperbolicSystem,
    decomp: Optional[SpectralDecomposition],
    xi_samples,
    tol: float = 1e-10,
    p_max: int = 4,
    U01: Optional[np.ndarray] = None,
) -> ConditionReport:
    """Sampled verification of the structural hypotheses.

    Checks: symmetry of A_j, skewness of A0, symmetry of B, the dispersion
    relation, Hermiticity of calA, the decomposition identities (when a
    decomposition is given), polarization of ``U01`` (optional, vectors in the
    leading axis), and Conditions 2, 3, 4 together with weak transparency over
    harmonics |p| <= p_max.
    """
    xi = np.atleast_2d(np.asarray(xi_samples, dtype=float))
    if xi.size == 0:
        raise ValueError("empty xi sample set")
    report = ConditionReport(tol=tol)
    rng = np.random.default_rng(12345)
    omega = system.omega

    report.add("A_j symmetric", max(np.max(np.abs(a - a.T)) for a in system.A), tol=0.0)
    report.add("A0 skew-symmetric", np.max(np.abs(system.A0 + system.A0.T)), tol=0.0)
    x, y = rng.standard_normal((2, system.N, 8)) + 1j * rng.standard_normal((2, system.N, 8))
    report.add("B symmetric", np.max(np.abs(system.bilinear(x, y) - system.bilinear(y, x))), tol=1e-14)
    det = abs(np.linalg.det(-1j * omega * np.eye(system.N) + system.A0))
    report.add("dispersion relation", det, tol=1e-12)
    S = system.symbol(xi)
    report.add("calA Hermitian", np.max(np.abs(S - np.conj(np.swapaxes(S, -1, -2)))), tol=1e-14)

    if decomp is not None:
        for key, val in decomp.invariant_residuals(system, xi).items():
            report.add(f"decomposition {key}", val, tol=max(tol, 1e-12) if key != "hermitian" else 1e-12)

    hp = {p: harmonic_projector(system, p) for p in range(-2 * p_max, 2 * p_max + 1)}

    if U01 is not None:
        U01 = np.asarray(U01)
        L1 = hp[1].Lp
        num = np.linalg.norm(np.einsum("ab,b...->a...", L1, U01))
        den = max(np.linalg.norm(U01), 1e-300)
        report.add("condition 1 (polarization)", num / den)

    Axi = np.einsum("nj,jab->nab", xi, system.A)
    worst2 = (0.0, "")
    for p in range(-p_max, p_max + 1):
        pi = hp[p].pi_p
        r = np.linalg.norm(pi @ Axi @ pi, ord=2, axis=(-2, -1))
        k = int(np.argmax(r))
        worst2 = _worst(worst2, r[k], f"p={p}, xi={xi[k].round(4).tolist()}")
    report.add("condition 2", worst2[0], worst2[1])

    worst3, worst_wt, worst4b = (0.0, ""), (0.0, ""), (0.0, "")
    for p in range(-p_max, p_max + 1):
        pi = hp[p].pi_p
        total = np.zeros((system.N, system.N, system.N), dtype=complex)
        for p1 in range(-p_max, p_max + 1):
            p2 = p - p1
            if abs(p2) > p_max:
                continue
            T = _bilinear_of_matrices(system, hp[p1].pi_p, hp[p2].pi_p)
            total += T
            wt = np.max(np.abs(np.einsum("ai,ibc->abc", pi, T)))
            worst_wt = _worst(worst_wt, wt, f"p={p}, p1={p1}")
        v = np.max(np.abs(np.einsum("ai,ibc->abc", pi, total)))
        worst3 = _worst(worst3, v, f"p={p}")
        # second part of condition 4, per xi sample
        for n in range(xi.shape[0]):
            acc = np.einsum("ab,bi,icd->acd", pi @ Axi[n], hp[p].Lp_inv, total)
            for p1 in range(-p_max, p_max + 1):
                p2 = p - p1
                if abs(p2) > p_max:
                    continue
                inner = hp[p2].Lp_inv @ Axi[n] @ hp[p2].pi_p
                acc = acc + 2 * np.einsum("ai,icd->acd", pi, _bilinear_of_matrices(system, hp[p1].pi_p, inner))
            worst4b = _worst(worst4b, np.max(np.abs(acc)), f"p={p}, xi={xi[n].round(4).tolist()}")
    report.add("condition 3", worst3[0], worst3[1])
    report.add("weak transparency", worst_wt[0], worst_wt[1])

    worst4a = (0.0, "")
    for p in range(-p_max, p_max + 1):
        pi, Li = hp[p].pi_p, hp[p].Lp_inv
        r = np.linalg.norm(pi @ Axi @ Li @ Axi @ Li @ Axi @ pi, ord=2, axis=(-2, -1))
        k = int(np.argmax(r))
        worst4a = _worst(worst4a, r[k], f"p={p}, xi={xi[k].round(4).tolist()}")
    report.add("condition 4 (linear part)", worst4a[0], worst4a[1])
    report.add("condition 4 (bilinear part)", worst4b[0], worst4b[1])
    return report


# ---------------------------------------------------------------- text loader


def system_from_dict(spec: dict) -> HyperbolicSystem:
    """Build a system from a mapping with keys A, A0, B, omega (and N, d optional).

    ``B`` is a list of ``{i, j, k, value}`` entries (0-based); each entry is
    symmetrised so that B[i, j, k] = B[i, k, j] = value.
    """
    A = np.asarray(spec["A"], dtype=float)
    if A.ndim == 2:
        A = A[None]
    A0 = np.asarray(spec["A0"], dtype=float)
    N = A0.shape[0]
    if "N" in spec and int(spec["N"]) != N:
        raise ValueError("declared N disagrees with A0")
    if "d" in spec and int(spec["d"]) != A.shape[0]:
        raise ValueError("declared d disagrees with A")
    B = np.zeros((N, N, N))
    for entry in spec.get("B", []) or []:
        i, j, k, val = int(entry["i"]), int(entry["j"]), int(entry["k"]), float(entry["value"])
        B[i, j, k] = B[i, k, j] = val
    return HyperbolicSystem(A, A0, B, float(spec.get("omega", 1.0)), spec.get("name", "custom"))


def load_system(path) -> HyperbolicSystem:
    with open(Path(path)) as fh:
        data = yaml.safe_load(fh)
    if data.get("kind") == "klein-gordon":
        return kg_system(int(data.get("d", 1)), float(data.get("lambda_c", 1.0)))
    return system_from_dict(data)
