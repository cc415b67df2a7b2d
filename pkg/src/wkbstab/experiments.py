"""Command line drivers for the verification suites and the stability sweep.

Each command writes ``<out>/<command>/rows.csv`` (one measurement per line),
``summary.txt`` (checks, fits, config hash, seed, build) and ``timing.csv``
(wall-clock only; excluded from the reproducibility contract).

Exit codes: 0 all declared checks pass, 1 a check failed, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .fourier import Field, Grid, sobolev_norm_array
from .model import (
    HyperbolicSystem,
    check_conditions,
    kg_e1,
    kg_spectral_decomposition,
    kg_system,
    load_system,
    numeric_spectral_decomposition,
    numerical_decomposition,
)
from .resonance import (
    KG_NON_STRONG,
    CutoffSpec,
    LocalizedOperators,
    ResonanceModel,
    all_indices,
    fit_slope,
)
from .solver import SolverConfig, evolve, evolve_perturbation
from .wkb import (
    Envelope,
    WkbSolution,
    evaluate_Ua,
    gaussian_data,
    initial_defect,
    kg_initial_state,
    residual,
)

__all__ = ["ExperimentConfig", "SweepReport", "Check", "load_config", "run_command", "main", "COMMANDS"]


DEFAULT_THRESHOLDS = {
    "condition_tol": 1e-10,
    "alpha_target": 0.5,
    "alpha_tol": 0.05,
    "ratio_slope_target": -0.5,
    "ratio_slope_tol": 0.1,
    "residual_band_max": 3.0,
    "residual_consistency_max": 1e-6,  # aliasing of cubic products at dx ~ 0.25
    "bin_slope_range": [0.4, 0.6],
    "mdefect_slope_range": [0.4, 0.6],
    "qdefect_slope_range": [0.85, 1.15],
    "split_exactness_max": 1e-11,
    "constant_branch_max": 1e-12,
    "stability_slope_min": 0.9,
    "stability_band_max": 3.0,
    "schrodinger_slope_min": 0.9,
    "boundary_mass_max": 1e-8,
    "perturbation_agreement_max": 1e-4,
}


@dataclass
class ExperimentConfig:
    d: int = 1
    M: int = 512
    L_pi: float = 40.0  # L = L_pi * pi
    eps_list: List[float] = dc_field(default_factory=lambda: [0.2, 0.1, 0.05])
    T: float = 0.5
    sigma: float = 2.0
    mu: float = 2.0
    lambda_c: float = 1.0
    data: str = "gaussian"  # gaussian | zero-envelope
    seed: int = 0
    out_dir: str = "results"
    c_dt: float = 1.0 / 40.0
    snapshots: int = 200
    system: str = "klein-gordon"  # or a path to a system description
    negative_control: bool = True
    informational_checks: List[str] = dc_field(default_factory=lambda: ["condition 4 (bilinear part)"])
    xi_samples: int = 256
    p_max: int = 4
    shells: List[float] = dc_field(default_factory=lambda: [float(r) for r in np.logspace(-3, -1, 9)])
    op_M: int = 1024
    op_L_pi: float = 8.0
    op_eps_list: List[float] = dc_field(default_factory=lambda: [0.025, 0.0125, 0.00625, 0.003125])
    op_t: float = 0.5
    op_probes: int = 2
    op_iterations: int = 40
    perturbation_check: bool = False
    jobs: int = 1
    quick: bool = False
    thresholds: Dict[str, object] = dc_field(default_factory=dict)

    def __post_init__(self):
        self.eps_list = [float(e) for e in self.eps_list]
        if len(self.eps_list) < 3:
            raise ValueError("eps_list needs at least three values")
        ratios = [a / b for a, b in zip(self.eps_list[:-1], self.eps_list[1:])]
        for r in ratios:
            if r <= 1 or abs(math.log2(r) - round(math.log2(r))) > 1e-9:
                raise ValueError("eps_list must be decreasing and dyadically related")
        if not self.T > 0:
            raise ValueError("T must be positive")
        merged = dict(DEFAULT_THRESHOLDS)
        merged.update(self.thresholds or {})
        self.thresholds = merged

    @property
    def L(self) -> float:
        return self.L_pi * math.pi

    def grid(self, eps: float = 1.0) -> Grid:
        return Grid(self.d, self.M, self.L, eps)

    def hash(self) -> str:
        # where results are written and how many workers compute them do not change them
        kw = {k: v for k, v in dataclasses.asdict(self).items() if k not in ("out_dir", "jobs")}
        payload = json.dumps(kw, sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def quick_version(self) -> "ExperimentConfig":
        """Cheap variant for smoke tests; thresholds stay declared but may not be met."""
        kw = dataclasses.asdict(self)
        kw.update(
            quick=True,
            M=min(self.M, 256),
            L_pi=min(self.L_pi, 16.0),
            T=min(self.T, 0.05),
            snapshots=min(self.snapshots, 20),
            xi_samples=min(self.xi_samples, 32),
            op_M=min(self.op_M, 256),
            op_L_pi=min(self.op_L_pi, 8.0),
            op_eps_list=[0.1, 0.05, 0.025],
            op_iterations=min(self.op_iterations, 8),
            op_probes=1,
        )
        return ExperimentConfig(**kw)


def load_config(path: Optional[str] = None, **overrides) -> ExperimentConfig:
    data = {}
    if path:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    if "L" in data:
        data["L_pi"] = float(data.pop("L")) / math.pi
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**data)


@dataclass
class Check:
    name: str
    passed: bool
    value: object
    threshold: object
    informational: bool = False


@dataclass
class SweepReport:
    command: str
    config: ExperimentConfig
    columns: List[str]
    rows: List[list] = dc_field(default_factory=list)
    fits: Dict[str, dict] = dc_field(default_factory=dict)
    checks: List[Check] = dc_field(default_factory=list)
    notes: List[str] = dc_field(default_factory=list)
    timing: List[tuple] = dc_field(default_factory=list)

    def add_check(self, name, passed, value, threshold, informational=False):
        self.checks.append(Check(name, bool(passed), value, threshold, informational))

    def check(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def passed(self) -> bool:
        required = [c for c in self.checks if not c.informational]
        return bool(required) and all(c.passed for c in required)

    def summary(self) -> str:
        cfg = self.config
        out = io.StringIO()
        out.write(f"command: {self.command}\n")
        out.write(f"config_hash: {cfg.hash()}\nseed: {cfg.seed}\nbuild: wkbstab {__version__}\n")
        out.write(f"quick: {cfg.quick}\n\n")
        if self.fits:
            out.write("fits (log-log OLS, 95% band):\n")
            for name, f in self.fits.items():
                out.write(
                    f"  {name}: slope {f['slope']:.6f} [{f['ci_low']:.6f}, {f['ci_high']:.6f}]"
                    f" rms {f['rms_residual']:.3e}\n"
                )
            out.write("\n")
        out.write("checks:\n")
        for c in self.checks:
            tag = "PASS" if c.passed else "FAIL"
            if c.informational:
                tag += " (informational)"
            out.write(f"  [{tag}] {c.name}: value={_fmt(c.value)} threshold={_fmt(c.threshold)}\n")
        for n in self.notes:
            out.write(f"note: {n}\n")
        out.write(f"\noverall: {'PASS' if self.passed else 'FAIL'}\n")
        return out.getvalue()

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / self.command
        path.mkdir(parents=True, exist_ok=True)
        with open(path / "rows.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["config_hash", "seed"] + self.columns)
            h = self.config.hash()
            for row in self.rows:
                w.writerow([h, self.config.seed] + [_fmt(v) for v in row])
        (path / "summary.txt").write_text(self.summary())
        with open(path / "timing.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label", "seconds"])
            for label, sec in self.timing:
                w.writerow([label, f"{sec:.3f}"])
        return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


# ------------------------------------------------------------------ helpers


def _system(cfg: ExperimentConfig) -> HyperbolicSystem:
    if cfg.system in ("klein-gordon", "kg"):
        return kg_system(cfg.d, cfg.lambda_c)
    return load_system(cfg.system)


def _is_kg(cfg: ExperimentConfig) -> bool:
    return cfg.system in ("klein-gordon", "kg")


def _decomposition(cfg: ExperimentConfig, system: HyperbolicSystem):
    if _is_kg(cfg):
        return kg_spectral_decomposition(system.d)
    rng = np.random.default_rng(cfg.seed)
    vals, _ = numerical_decomposition(system, rng.standard_normal(system.d))
    return numeric_spectral_decomposition(system, len(vals))


def _initial_data(cfg: ExperimentConfig, grid: Grid):
    phi0, psi0 = gaussian_data(grid)
    if cfg.data == "gaussian":
        return phi0, psi0, None, None
    if cfg.data == "zero-envelope":
        # g0 = 0 with an O(1) initial defect carried by phi_eps
        zero = np.zeros(grid.shape)
        return zero, zero, phi0, psi0
    raise ValueError(f"unknown data choice {cfg.data!r}")


def _wkb(cfg: ExperimentConfig, grid: Grid) -> WkbSolution:
    phi0, psi0, _, _ = _initial_data(cfg, grid)
    return WkbSolution(Envelope.from_data(Field(grid, phi0), Field(grid, psi0)), cfg.lambda_c)


# ------------------------------------------------------------------ commands


def cmd_decompose_check(cfg: ExperimentConfig) -> SweepReport:
    system = _system(cfg)
    decomp = _decomposition(cfg, system)
    rng = np.random.default_rng(cfg.seed)
    xi = rng.standard_normal((cfg.xi_samples, system.d)) * 3.0
    xi[0] = 0.0
    U01 = None
    if _is_kg(cfg):
        grid = cfg.grid()
        g0 = _wkb(cfg, grid).envelope.at(0.0)
        U01 = kg_e1(system.d, unit=False)[:, None] * g0.reshape(1, -1)
    rep = check_conditions(system, decomp, xi, cfg.thresholds["condition_tol"], cfg.p_max, U01)
    report = SweepReport("decompose-check", cfg, ["check", "passed", "residual", "witness"])
    for r in rep.results:
        report.rows.append([r.name, r.passed, r.residual, r.witness])
        report.add_check(r.name, r.passed, r.residual, "declared tolerance", r.name in cfg.informational_checks)
    if cfg.negative_control:
        broken = system.with_(A0=system.A0 + 1e-3 * np.eye(system.N), name="negative control")
        nrep = check_conditions(broken, None, xi[:8], cfg.thresholds["condition_tol"], 1)
        failed = not nrep["A0 skew-symmetric"].passed
        report.rows.append(["negative control: A0 skew-symmetric", not failed, nrep["A0 skew-symmetric"].residual, "A0 + 1e-3 I"])
        report.add_check("negative control detected", failed, nrep["A0 skew-symmetric"].residual, "> 0")
    return report


def cmd_transparency(cfg: ExperimentConfig) -> SweepReport:
    system = _system(cfg)
    decomp = _decomposition(cfg, system)
    model = ResonanceModel(system, decomp)
    report = SweepReport(
        "transparency",
        cfg,
        ["j", "jp", "p", "kind", "alpha", "fit_rms", "strong_ratio_slope", "lower_bound_c", "strongly_transparent"],
    )
    estimates = model.classify(shells=cfg.shells)
    fitted = {}
    for idx, e in estimates.items():
        report.rows.append(
            [idx.j, idx.jp, idx.p, e.kind, e.alpha, e.fit_rms, e.strong_ratio_slope, e.lower_bound_c, e.strongly_transparent]
        )
        if e.kind == "fitted":
            fitted[tuple(idx)] = e
        for r in e.empty_shells:
            report.notes.append(f"index {tuple(idx)}: shell r={r:.3e} has no samples")
    th = cfg.thresholds
    non_strong = {i for i, e in estimates.items() if not e.strongly_transparent}
    alpha = min((e.alpha for e in fitted.values() if e.alpha is not None), default=1.0)
    report.fits["alpha (min fitted exponent)"] = {"slope": alpha, "ci_low": alpha, "ci_high": alpha, "rms_residual": 0.0}
    report.add_check("alpha", abs(alpha - th["alpha_target"]) <= th["alpha_tol"], alpha, f"{th['alpha_target']} +- {th['alpha_tol']}")
    for key, e in sorted(fitted.items()):
        report.add_check(f"alpha{key}", e.alpha is not None and abs(e.alpha - th["alpha_target"]) <= th["alpha_tol"], e.alpha,
                         f"{th['alpha_target']} +- {th['alpha_tol']}")
        s = e.strong_ratio_slope
        report.add_check(f"strong ratio slope{key}", s is not None and abs(s - th["ratio_slope_target"]) <= th["ratio_slope_tol"], s,
                         f"{th['ratio_slope_target']} +- {th['ratio_slope_tol']}")
    if _is_kg(cfg):
        got = {tuple(i) for i in non_strong}
        report.add_check("non-strong set matches closed form", got == set(KG_NON_STRONG), sorted(got), sorted(KG_NON_STRONG))
    return report


def cmd_wkb_residual(cfg: ExperimentConfig) -> SweepReport:
    system = _system(cfg)
    if not _is_kg(cfg):
        raise ValueError("the WKB cascade is implemented for Klein-Gordon only")
    report = SweepReport("wkb-residual", cfg, ["eps", "t", "defect_norm", "defect_over_eps2", "consistency", "psi_eps_norm"])
    ratios: Dict[str, List[float]] = {}
    worst_consistency = 0.0
    psi_norms = []
    for eps in cfg.eps_list:
        grid = cfg.grid(eps)
        wkb = _wkb(cfg, grid)
        phi0, psi0, phie, psie = _initial_data(cfg, grid)
        U0 = kg_initial_state(grid, phi0, psi0, eps, phie, psie)
        psi = initial_defect(wkb, U0, eps)
        pn = sobolev_norm_array(psi.grid, psi.data, cfg.sigma)
        psi_norms.append(pn)
        for label, t in (("0", 0.0), ("1/(2eps)", 0.5 / eps), ("1/eps", 1.0 / eps)):
            start = time.perf_counter()
            res = residual(wkb, t, eps, cfg.sigma)
            report.timing.append((f"residual eps={eps} t={label}", time.perf_counter() - start))
            ratio = res.norm / eps**2
            ratios.setdefault(label, []).append(ratio)
            worst_consistency = max(worst_consistency, res.consistency)
            report.rows.append([eps, t, res.norm, ratio, res.consistency, pn])
    th = cfg.thresholds
    for label in ("0", "1/eps"):
        vals = ratios[label]
        band = max(vals) / min(vals) if min(vals) > 0 else float("inf")
        report.add_check(f"residual/eps^2 band at t={label}", band <= th["residual_band_max"], band, th["residual_band_max"])
    report.add_check("defect = -eps^2 R consistency", worst_consistency <= th["residual_consistency_max"], worst_consistency,
                     th["residual_consistency_max"])
    # bounded means no growth as eps decreases; psi^eps may well shrink
    growth = max(psi_norms) / max(psi_norms[0], 1e-300)
    report.add_check("initial defect bounded across eps", growth <= th["residual_band_max"], growth, th["residual_band_max"])
    return report


def cmd_operator_scalings(cfg: ExperimentConfig) -> SweepReport:
    system = _system(cfg)
    if not _is_kg(cfg):
        raise ValueError("operator scalings need the Klein-Gordon WKB profile")
    decomp = _decomposition(cfg, system)
    model = ResonanceModel(system, decomp)
    grid = Grid(cfg.d, cfg.op_M, cfg.op_L_pi * math.pi, 1.0)
    wkb = _wkb(cfg, grid)
    t = cfg.op_t
    prof = {p: wkb.leading_profile(t, p) for p in (1, -1)}
    dprof = {p: wkb.leading_profile(t, p, True) for p in (1, -1)}
    report = SweepReport(
        "operator-scalings", cfg,
        ["eps", "h_M", "h_Q", "mu", "B_in", "B_out", "M_defect", "Q_defect", "B_in_plus_M_defect", "split_error", "constant_branch"],
    )
    series = {k: [] for k in ("B_in", "M_defect", "Q_defect", "total")}
    worst_split, worst_const = 0.0, 0.0
    norm = lambda op: ops.norm(op, cfg.mu, cfg.op_probes, cfg.seed, cfg.op_iterations)
    for eps in cfg.op_eps_list:
        start = time.perf_counter()
        ops = LocalizedOperators(model, grid, eps, t, prof, dprof)
        spec_M, spec_Q = CutoffSpec(eps), CutoffSpec(eps**2)
        B1 = ops.B1()
        rng = np.random.default_rng(cfg.seed)
        from .fourier import random_band_limited

        u = random_band_limited(ops.grid, ops.JN, rng)
        ref = np.linalg.norm(B1.apply(u))
        split_err = 0.0
        for spec in (spec_M, spec_Q):
            for variant in ("plain", "refined"):
                bi, bo = ops.split_B1(spec, variant)
                split_err = max(split_err, np.linalg.norm(bi.apply(u) + bo.apply(u) - B1.apply(u)) / ref)
        worst_split = max(worst_split, split_err)
        const = ops.constant_branch_commutator_residual(spec_Q, seed=cfg.seed)
        worst_const = max(worst_const, const)
        Bin, Bout = ops.split_B1(spec_M, "plain")
        nb, nbo = norm(Bin), norm(Bout)
        nm = norm(ops.defect(spec_M, "M"))
        nq = norm(ops.defect(spec_Q, "Q"))
        series["B_in"].append(nb)
        series["M_defect"].append(nm)
        series["Q_defect"].append(nq)
        series["total"].append(nb + nm)
        report.rows.append([eps, eps, eps**2, cfg.mu, nb, nbo, nm, nq, nb + nm, split_err, const])
        report.timing.append((f"eps={eps}", time.perf_counter() - start))
    eps = cfg.op_eps_list
    fb = fit_slope(eps, series["B_in"])  # h = eps, so slope in h equals slope in eps
    fm = fit_slope(eps, series["M_defect"])
    fq = fit_slope(eps, series["Q_defect"])
    ft = fit_slope(eps, series["total"])
    report.fits.update({"B_in vs h (h=eps)": fb, "M defect vs eps (h=eps)": fm, "Q defect vs eps (h=eps^2)": fq,
                        "B_in + M defect vs eps": ft})
    th = cfg.thresholds

    def in_range(v, r):
        return r[0] <= v <= r[1]

    report.add_check("B_in slope in h", in_range(fb["slope"], th["bin_slope_range"]), fb["slope"], th["bin_slope_range"])
    report.add_check("M defect slope in eps", in_range(fm["slope"], th["mdefect_slope_range"]), fm["slope"], th["mdefect_slope_range"])
    report.add_check("Q defect slope in eps", in_range(fq["slope"], th["qdefect_slope_range"]), fq["slope"], th["qdefect_slope_range"])
    report.add_check("B_in + B_out = B_1", worst_split <= th["split_exactness_max"], worst_split, th["split_exactness_max"])
    report.add_check("constant-branch commutators vanish in Q", worst_const <= th["constant_branch_max"], worst_const,
                     th["constant_branch_max"])
    return report


def _stability_run(args):
    cfg, eps = args
    system = _system(cfg)
    decomp = _decomposition(cfg, system)
    grid = cfg.grid(eps)
    wkb = _wkb(cfg, grid)
    phi0, psi0, phie, psie = _initial_data(cfg, grid)
    U0 = kg_initial_state(grid, phi0, psi0, eps, phie, psie)
    t_final = cfg.T / eps
    scfg = SolverConfig(t_final=t_final, c_dt=cfg.c_dt, sigma=cfg.sigma)
    n, dt = scfg.steps(eps)
    every = max(1, n // cfg.snapshots)
    scfg = scfg.with_(record_every=every)
    start = time.perf_counter()
    traj = evolve(system, decomp, eps, U0, scfg)
    runtime = time.perf_counter() - start
    xs = grid.x[0] if grid.d == 1 else grid.x
    edge = np.any((grid.x < 0.05 * grid.L) | (grid.x > 0.95 * grid.L), axis=0)
    rows = []
    for t, snap in zip(traj.times, traj.snapshots):
        Ua = evaluate_Ua(wkb, t, eps).data
        err = sobolev_norm_array(grid, snap.data - Ua, cfg.sigma)
        v = wkb.envelope.at(t)
        ph = np.exp(-1j * t / eps**2)
        schro = snap.data[-1] - (ph * v + np.conj(ph * v))
        serr = sobolev_norm_array(grid, schro[None], cfg.sigma)
        mass = np.sum(np.abs(snap.data) ** 2, axis=0)
        frac = float(np.sum(mass[edge]) / max(np.sum(mass), 1e-300))
        imag = float(np.max(np.abs(snap.data.imag)) / max(1.0, np.max(np.abs(snap.data))))
        rows.append([eps, t, err, serr, frac, imag])
    pert = None
    if cfg.perturbation_check:
        pcfg = SolverConfig(t_final=min(1.0, t_final), c_dt=min(cfg.c_dt, 1 / 80), sigma=cfg.sigma)
        psi = initial_defect(wkb, U0, eps)
        full = evolve(system, decomp, eps, U0, pcfg)
        dot = evolve_perturbation(system, decomp, eps, wkb, psi, pcfg)
        rec = (full.final.data - evaluate_Ua(wkb, pcfg.t_final, eps).data) / eps
        pert = sobolev_norm_array(grid, rec - dot.final.data, cfg.sigma)
    return {"eps": eps, "rows": rows, "status": traj.status, "last": traj.last_valid_time, "steps": traj.steps,
            "dt": dt, "runtime": runtime, "perturbation_gap": pert}


def cmd_stability_sweep(cfg: ExperimentConfig) -> SweepReport:
    if not _is_kg(cfg):
        raise ValueError("the stability sweep compares against the Klein-Gordon WKB solution")
    jobs = [(cfg, eps) for eps in cfg.eps_list]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_stability_run, jobs))
    else:
        results = [_stability_run(j) for j in jobs]
    report = SweepReport("stability-sweep", cfg, ["eps", "t", "error_H_sigma", "schrodinger_error", "boundary_mass_fraction", "imag_residue"])
    E, S, horizons = [], [], []
    worst_frac, worst_imag = 0.0, 0.0
    blowups = []
    for res in results:
        eps = res["eps"]
        report.rows.extend(res["rows"])
        errs = np.array([r[2] for r in res["rows"]])
        serrs = np.array([r[3] for r in res["rows"]])
        times = np.array([r[1] for r in res["rows"]])
        E.append(float(errs.max()))
        S.append(float(serrs.max()))
        ok = np.maximum.accumulate(errs) <= 10 * eps
        horizons.append(float(times[ok].max()) if ok.any() else 0.0)
        worst_frac = max(worst_frac, max(r[4] for r in res["rows"]))
        worst_imag = max(worst_imag, max(r[5] for r in res["rows"]))
        if res["status"] != "ok":
            blowups.append((eps, res["last"]))
        report.timing.append((f"eps={eps} steps={res['steps']}", res["runtime"]))
        report.notes.append(
            f"eps={eps}: steps={res['steps']} dt={res['dt']!r} E={E[-1]!r} E/eps={E[-1] / eps!r} "
            f"S={S[-1]!r} S/eps={S[-1] / eps!r} horizon(E<=10eps)={horizons[-1]!r} status={res['status']}"
        )
        if res["perturbation_gap"] is not None:
            report.add_check(f"perturbation cross-check eps={eps}", res["perturbation_gap"] <= cfg.thresholds["perturbation_agreement_max"],
                             res["perturbation_gap"], cfg.thresholds["perturbation_agreement_max"])
    eps = cfg.eps_list
    th = cfg.thresholds
    report.add_check("no blow-up", not blowups, blowups or "none", "none")
    fe, fs = fit_slope(eps, E), fit_slope(eps, S)
    report.fits["E(eps)"] = fe
    report.fits["Schrodinger error"] = fs
    band = max(e / x for e, x in zip(E, eps)) / min(e / x for e, x in zip(E, eps))
    sband = max(e / x for e, x in zip(S, eps)) / min(e / x for e, x in zip(S, eps))
    report.add_check("E/eps band", band <= th["stability_band_max"], band, th["stability_band_max"])
    report.add_check("E slope", fe["slope"] >= th["stability_slope_min"], fe["slope"], th["stability_slope_min"])
    report.add_check("Schrodinger error/eps band", sband <= th["stability_band_max"], sband, th["stability_band_max"])
    report.add_check("Schrodinger error slope", fs["slope"] >= th["schrodinger_slope_min"], fs["slope"], th["schrodinger_slope_min"])
    report.add_check("boundary mass fraction", worst_frac <= th["boundary_mass_max"], worst_frac, th["boundary_mass_max"])
    report.add_check("reality preserved", worst_imag <= 1e-10, worst_imag, 1e-10)
    return report


COMMANDS = {
    "decompose-check": cmd_decompose_check,
    "transparency": cmd_transparency,
    "wkb-residual": cmd_wkb_residual,
    "operator-scalings": cmd_operator_scalings,
    "stability-sweep": cmd_stability_sweep,
}


def run_command(name: str, cfg: ExperimentConfig, write: bool = True) -> SweepReport:
    if name not in COMMANDS:
        raise ValueError(f"unknown command {name!r}")
    start = time.perf_counter()
    report = COMMANDS[name](cfg)
    report.timing.append(("total", time.perf_counter() - start))
    if write:
        report.write(cfg.out_dir)
    return report


def _parse_eps(text: Optional[str]):
    if text is None:
        return None
    return [float(x) for x in text.replace(" ", "").split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wkbstab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="YAML experiment configuration")
    ap.add_argument("--out", help="output directory (default from config)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--eps", help="comma separated eps list")
    ap.add_argument("--quick", action="store_true", help="cheap smoke-test settings")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, out_dir=args.out, seed=args.seed, eps_list=_parse_eps(args.eps))
        if args.quick:
            cfg = cfg.quick_version()
        report = run_command(args.command, cfg)
    except Exception as exc:  # runtime errors map to exit code 2
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(report.summary())
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
