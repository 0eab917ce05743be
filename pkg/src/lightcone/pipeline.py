"""End-to-end experiment pipelines behind the command line.

``build``      assemble and export operators with their basis manifest
``verify``     run the algebraic/grid/model check suites and report measured vs bound
``run``        build, filter, propagate, probe, fit and persist
``fit``        replay the fits offline from a persisted trajectory
``threshold``  ionisation-threshold ladder and exponential-decay report

Every output file carries the config hash and package version.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from lightcone import __version__
from lightcone.config import ExperimentConfig
from lightcone.evolve import propagate
from lightcone.fock import (FockBasis, annihilator, bound_check_field_energy, bound_check_numbers,
                            build_fock_basis, ccr_residual, creator, dgamma_apply, field_operator,
                            number_operator, second_quantize)
from lightcone.grid import PhotonGrid, algebraic_packet, build_photon_grid, gaussian_packet
from lightcone.io import read_json, read_trajectory_csv, write_json, write_state, write_trajectory_csv
from lightcone.model import (ModelSpec, System, WindowProfile, assemble_hamiltonian, assemble_transformed,
                             build_system, estimate_ionization_threshold, exponential_decay_report,
                             pauli_fierz_unitary, spectral_filter)
from lightcone.operators import HermitianOperator
from lightcone.probe import (ProbeError, ProbeSpec, cone_conjugation_residual, cone_time_limit,
                             heisenberg_inequality_audit, lightcone_decay_fit, outside_cone_mass,
                             photon_momentum_density, photon_position_density, position_diagonal, propagation_values,
                             small_momentum_growth)

log = logging.getLogger(__name__)


class ConeBoxError(ValueError):
    """Requested final time takes the cone outside the position box."""

    def __init__(self, T: float, t_max: float):
        super().__init__(f"evolve.T = {T:g} lets the cone leave the position box; the largest valid T is {t_max:.17g}")
        self.T = T
        self.t_max = t_max


# ---------------------------------------------------------------------------
# builders from the config


def make_grid(cfg: ExperimentConfig) -> PhotonGrid:
    g = cfg["grid"]
    return build_photon_grid(g["dim"], g["M"], g["dk"], g["mode"])


def make_model_spec(cfg: ExperimentConfig, grid: PhotonGrid | None = None) -> ModelSpec:
    m = cfg["model"]
    grid = grid or make_grid(cfg)
    return ModelSpec(grid, n_x=m["n_x"], dx=m["dx"], V0=m["V0"], sigma=m["sigma"], K=m["K"], mu=m["mu"],
                     coupling_scale=m["coupling_scale"], n_max=cfg["fock"]["n_max"],
                     direction=tuple(m["direction"]))


def probe_specs(cfg: ExperimentConfig) -> list[ProbeSpec]:
    p = cfg["probe"]
    return [ProbeSpec(c, p["beta"], p["gamma"], p["delta"], p["epsilon"], p["nu"]) for c in p["c"]]


def time_grid(cfg: ExperimentConfig, grid: PhotonGrid) -> np.ndarray:
    e = cfg["evolve"]
    t_max = min(cone_time_limit(grid, c) for c in cfg["probe"]["c"])
    T = e["T"] if e["T"] is not None else t_max
    if T > t_max * (1 + 1e-12):
        raise ConeBoxError(T, t_max)
    if T <= e["t0"]:
        raise ConeBoxError(T, t_max)
    return np.linspace(e["t0"], T, e["samples"])


def _name(prefix: str, value: float) -> str:
    return f"{prefix}{value:g}"


def growth_deltas(cfg: ExperimentConfig) -> list[float]:
    ds = list(cfg["probe"]["growth_deltas"])
    if cfg["run"]["kind"] == "interacting" and cfg["probe"]["delta"] not in ds:
        ds.append(cfg["probe"]["delta"])
    return sorted(set(ds))


def header(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.hash, "version": __version__, "run": cfg["run"]["name"]}


# ---------------------------------------------------------------------------
# build


def cmd_build(cfg: ExperimentConfig, out) -> dict:
    """Assemble the run's Hamiltonians and export them as COO text with the basis manifest."""
    out = Path(out)
    grid = make_grid(cfg)
    written = []
    if cfg["run"]["kind"] == "free_photon":
        basis = build_fock_basis(grid, cfg["fock"]["n_max"])
        ops = {"H_f": free_hamiltonian(basis)}
        manifest = {"basis": basis.manifest(), "n_x": 1}
    else:
        system = build_system(make_model_spec(cfg, grid))
        ops = {"H": assemble_hamiltonian(system), "H_tilde": assemble_transformed(system)}
        manifest = {"basis": system.basis.manifest(), "n_x": system.n_x, "model": system.spec.manifest(),
                    "ordering_full": "x_index * fock_dim + fock_index", "coupling_constants":
                    system.couplings.constants}
    for name, op in ops.items():
        path = out / f"{name}.coo"
        op.export_coo(path, {**header(cfg), **manifest, "operator": name, "dimension": op.dim,
                             "nnz": int(op.matrix.nnz)})
        written.append(path.name)
    report = {**header(cfg), "files": sorted(written), "manifest": manifest}
    write_json(out / "build.json", report)
    return report


def free_hamiltonian(basis: FockBasis) -> HermitianOperator:
    grid = basis.grid
    return second_quantize(basis, sp.diags(grid.mode_omega.astype(complex)))


# ---------------------------------------------------------------------------
# verify


@dataclass
class Check:
    name: str
    measured: float
    bound: float
    hard: bool = True
    relation: str = "<="

    @property
    def ok(self) -> bool:
        if self.relation == "<=":
            return bool(self.measured <= self.bound)
        return bool(self.measured >= self.bound)

    def as_dict(self) -> dict:
        return {"name": self.name, "measured": self.measured, "bound": self.bound, "relation": self.relation,
                "hard": self.hard, "ok": self.ok}


@dataclass
class VerifyReport:
    suite: str
    checks: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks if c.hard)

    def as_dict(self) -> dict:
        return {"suite": self.suite, "passed": self.passed, "checks": [c.as_dict() for c in self.checks]}


SUITES = ("fock", "grid", "model", "all")


def _rng_vec(rng, n):
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def suite_fock(seed: int) -> list[Check]:
    from lightcone.oracle import TensorOracle

    rng = np.random.default_rng(seed)
    checks = []
    grid = build_photon_grid(1, 4, 0.5)
    basis = build_fock_basis(grid, 3)
    f, g = _rng_vec(rng, 4), _rng_vec(rng, 4)
    checks.append(Check("ccr residual, sectors below n_max", ccr_residual(basis, f, g, seed=seed), 1e-12))
    oracle = TensorOracle(basis)
    t = _rng_vec(rng, 16).reshape(4, 4)
    t = t + t.conj().T
    pairs = [
        ("a(f) vs tensor oracle", annihilator(basis, f).dense(), oracle.annihilator(f)),
        ("a*(f) vs tensor oracle", creator(basis, f).dense(), oracle.creator(f)),
        ("dGamma(t) vs tensor oracle", second_quantize(basis, t).dense(), oracle.dgamma(t)),
        ("Phi(f) vs tensor oracle", field_operator(basis, f).dense(), oracle.field(f)),
        ("dGamma(1) vs N", second_quantize(basis, np.eye(4)).dense(), number_operator(basis).dense()),
    ]
    for name, a, b in pairs:
        checks.append(Check(name, float(np.abs(a - b).max()), 1e-12))
    for rep in bound_check_numbers(basis, f) + bound_check_field_energy(basis, f):
        checks.append(Check(rep.name, rep.measured, rep.bound * (1 + 1e-12) + 1e-14))
    psi = _rng_vec(rng, basis.dim)
    direct = second_quantize(basis, t).matrix @ psi
    checks.append(Check("dGamma apply vs assembled", float(np.abs(dgamma_apply(basis, t, psi) - direct).max()),
                        1e-12))
    return checks


def suite_grid(seed: int) -> list[Check]:
    from lightcone.calculus import eig_apply, hs_apply
    from lightcone.grid import hardy_ratio, position_operator
    from lightcone.symbols import bracket_symbol

    rng = np.random.default_rng(seed)
    checks = []
    grid = build_photon_grid(1, 64, 0.25)
    W = grid.dft_matrix()
    checks.append(Check("DFT unitarity", float(np.abs(W.conj().T @ W - np.eye(grid.size)).max()), 1e-12))
    Y = position_operator(grid)
    checks.append(Check("position operator Hermitian", float(np.abs(Y - Y.conj().T).max()), 1e-12))
    # Hardy-type ratio for s = 1/4 (1-D admits s < 1/2) stays bounded on random packets
    worst = max(hardy_ratio(grid, 0.25, _rng_vec(rng, grid.size)) for _ in range(4))
    checks.append(Check("Hardy ratio s=1/4 (report)", worst, 10.0, hard=False))
    small = build_photon_grid(1, 8, 0.5)
    A = position_operator(small)
    G = bracket_symbol(-0.5)
    diff = float(np.abs(hs_apply(A, G).dense() - eig_apply(A, G)).max())
    checks.append(Check("Helffer-Sjostrand vs eigendecomposition", diff, 1e-6))
    return checks


def suite_model(seed: int) -> list[Check]:
    from lightcone.model import FROZEN_CONSTANTS, transform_report

    checks = []
    grid = build_photon_grid(1, 4, 0.5)
    spec = ModelSpec(grid, n_x=7, dx=0.5, V0=3.0, sigma=1.0, coupling_scale=0.1, n_max=3)
    system = build_system(spec)
    H = assemble_hamiltonian(system)
    Ht = assemble_transformed(system)
    checks.append(Check("H Hermitian", H.hermiticity_residual(), 1e-12))
    checks.append(Check("H_tilde Hermitian", Ht.hermiticity_residual(), 1e-12))
    U = pauli_fierz_unitary(system).toarray()
    checks.append(Check("unitarity of U", float(np.abs(U @ U.conj().T - np.eye(U.shape[0])).max()), 1e-12))
    for k, v in sorted(system.couplings.constants.items()):
        checks.append(Check(f"coupling estimate constant {k}", float(v), FROZEN_CONSTANTS[k]))
    rep = transform_report(system)
    checks.append(Check("conjugation leak, sectors below n_max-2 (report)", rep.leak, float("inf"), hard=False))
    checks.append(Check("conjugation leak, field part", rep.leak_field, 1e-4))
    checks.append(Check("cone observable conjugation, vacuum sector",
                        cone_conjugation_residual(system, 0.5, 1.0, below=0), 1e-4))
    th = estimate_ionization_threshold(system, [0.5, 1.0, 1.5], H=H)
    checks.append(Check("threshold ladder monotone", float(th.monotone), 1.0, relation=">="))
    checks.append(Check("threshold above ground energy", th.margin, 0.0, relation=">="))
    return checks


def cmd_verify(suite: str, seed: int = 0) -> VerifyReport:
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {SUITES}")
    start = time.perf_counter()
    names = ["fock", "grid", "model"] if suite == "all" else [suite]
    fns = {"fock": suite_fock, "grid": suite_grid, "model": suite_model}
    checks = []
    for n in names:
        checks += fns[n](seed)
    return VerifyReport(suite, checks, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# threshold and filtering


def threshold_radii(cfg: ExperimentConfig, spec: ModelSpec) -> list[float]:
    radii = cfg["threshold"]["radii"]
    if radii is None:
        half = spec.box_length / 2
        radii = [0.4 * half, 0.6 * half, 0.8 * half]
    return [float(r) for r in radii]


def filter_window(cfg: ExperimentConfig, ground: float, sigma_hat: float) -> WindowProfile:
    f = cfg["filter"]
    gap = sigma_hat - ground
    return WindowProfile(ground - f["below"], ground + f["top_fraction"] * gap, f["ramp_fraction"] * gap)


def particle_packet(cfg: ExperimentConfig, system: System) -> np.ndarray:
    w = cfg["packet"]["width"]
    u = np.kron(np.exp(-system.spec.x**2 / (2 * w * w)), system.basis.vacuum())
    return u / np.linalg.norm(u)


@dataclass
class FilteredState:
    system: System
    H: HermitianOperator
    threshold: object
    window: WindowProfile
    psi: np.ndarray
    tail_bound: float


def filtered_state(cfg: ExperimentConfig, system: System, H: HermitianOperator) -> FilteredState:
    th = estimate_ionization_threshold(system, threshold_radii(cfg, system.spec), H=H)
    chi = filter_window(cfg, th.ground_energy, th.sigma_hat)
    f = cfg["filter"]
    filt = spectral_filter(H, chi, th.sigma_hat, f["margin"], f["method"], f["degree"])
    psi = filt.apply(particle_packet(cfg, system))
    nrm = np.linalg.norm(psi)
    if nrm == 0:
        raise ValueError("the filtered state vanishes; widen the filter window")
    return FilteredState(system, H, th, chi, psi / nrm, filt.tail_bound)


def threshold_report(cfg: ExperimentConfig, fs: FilteredState) -> dict:
    delta = cfg["filter"]["delta"]
    top = fs.window.support_top
    dec = exponential_decay_report(fs.system, fs.psi, delta, fs.threshold.sigma_hat, top)
    return {**header(cfg), "threshold": fs.threshold.as_dict(), "filter": {
        "lo": fs.window.lo, "hi": fs.window.hi, "ramp": fs.window.ramp, "support_top": top,
        "method": cfg["filter"]["method"], "chebyshev_tail_bound": fs.tail_bound},
        "decay": dec.as_dict()}


def cmd_threshold(cfg: ExperimentConfig, out) -> dict:
    system = build_system(make_model_spec(cfg))
    H = assemble_transformed(system)
    report = threshold_report(cfg, filtered_state(cfg, system, H))
    write_json(Path(out) / "sigma_hat.json", report)
    return report


# ---------------------------------------------------------------------------
# run


def _free_setup(cfg: ExperimentConfig, grid: PhotonGrid):
    basis = build_fock_basis(grid, cfg["fock"]["n_max"])
    pk = cfg["packet"]
    if pk["kind"] == "algebraic":
        u = algebraic_packet(grid, pk["width"], pk["power"])
    else:
        u = gaussian_packet(grid, pk["width"])
    psi = np.zeros(basis.dim, dtype=complex)
    psi[basis.sector_slice(1)] = u
    return basis, free_hamiltonian(basis), psi


class _Sampler:
    """Computes every observable of one sample from a single density evaluation."""

    def __init__(self, cfg, basis: FockBasis, H, n_x: int, with_phi: bool):
        self.cfg, self.basis, self.H, self.n_x = cfg, basis, H, n_x
        self.with_phi = with_phi
        self.grid = basis.grid
        self.specs = probe_specs(cfg)
        self.deltas = growth_deltas(cfg)
        self._key = None
        self._vals: dict = {}

    def names(self) -> list[str]:
        out = []
        for s in self.specs:
            out += [_name("mass_c", s.c), _name("sharp_c", s.c)]
            if self.with_phi:
                out += [_name("phi_c", s.c), _name("dphi_c", s.c)]
        out += [_name("growth_d", d) for d in self.deltas]
        return out

    def _compute(self, psi, t):
        basis, grid = self.basis, self.grid
        pos = photon_position_density(basis, psi, self.n_x)
        mom = photon_momentum_density(basis, psi, self.n_x)
        vals = {}
        for s in self.specs:
            cm = outside_cone_mass(basis, psi, s.c, t, self.n_x, density=pos)
            vals[_name("mass_c", s.c)] = cm.smooth
            vals[_name("sharp_c", s.c)] = cm.sharp
            if self.with_phi:
                vals[_name("phi_c", s.c)] = float(np.sum(propagation_values(grid, s, t) * pos))
                vals[_name("dphi_c", s.c)] = self._dphi(s, psi, t, pos)
        for d in self.deltas:
            vals[_name("growth_d", d)] = float(np.sum(grid.mode_omega ** (-d) * mom))
        return vals

    def _dphi(self, s: ProbeSpec, psi, t, pos) -> float:
        """``<D Phi_t> = <d_t Phi_t> + 2 Im <Phi_t psi, H psi>``."""
        h = 1e-4 * t
        dvals = (propagation_values(self.grid, s, t + h) - propagation_values(self.grid, s, t - h)) / (2 * h)
        one = position_diagonal(self.grid, propagation_values(self.grid, s, t))
        phi_psi = dgamma_apply(self.basis, one, psi, self.n_x)
        return float(np.sum(dvals * pos) + 2.0 * np.vdot(phi_psi, self.H @ psi).imag)

    def observable(self, name):
        def f(psi, t):
            key = (float(t), id(psi))
            if key != self._key:
                self._vals = self._compute(psi, t)
                self._key = key
            return self._vals[name]

        return f


def probe_manifest(cfg: ExperimentConfig, grid: PhotonGrid, times: np.ndarray) -> dict:
    p = cfg["probe"]
    return {**header(cfg), "kind": cfg["run"]["kind"], "c": list(p["c"]), "beta": p["beta"], "gamma": p["gamma"],
            "delta": p["delta"], "epsilon": p["epsilon"], "nu": p["nu"], "fit_tol": p["fit_tol"],
            "growth_deltas": growth_deltas(cfg), "t0": float(times[0]), "T": float(times[-1]),
            "t_box": {_name("c", c): cone_time_limit(grid, c) for c in p["c"]}}


def compute_fits(series: dict, probe: dict) -> dict:
    """Decay, growth and (when present) Heisenberg-audit fits from persisted series."""
    t = np.asarray(series["t"], dtype=float)
    decay, growth, audit = [], [], []
    for c in probe["c"]:
        t_box = min(probe["t_box"][_name("c", c)], probe["T"])
        gamma = probe["gamma"] if probe["kind"] == "interacting" else 0.0
        fit = lightcone_decay_fit(t, series[_name("mass_c", c)], c, gamma, t_box, probe["t0"], probe["fit_tol"])
        entry = fit.as_dict()
        entry["expected_fail"] = bool(c <= 1.0)
        decay.append(entry)
        if probe["kind"] == "interacting":
            spec = ProbeSpec(c, probe["beta"], probe["gamma"], probe["delta"], probe["epsilon"], probe["nu"])
            try:
                rep = heisenberg_inequality_audit(t, series[_name("dphi_c", c)], series[_name("phi_c", c)],
                                                  series[_name("growth_d", probe["delta"])], spec)
                audit.append({"c": c, **rep.as_dict()})
            except ProbeError as exc:
                audit.append({"c": c, "skipped": str(exc)})
    for d in probe["growth_deltas"]:
        growth.append(small_momentum_growth(t, series[_name("growth_d", d)], d, probe["t0"]).as_dict())
    out = {"config_hash": probe["config_hash"], "version": probe["version"], "decay": decay, "growth": growth}
    if probe["kind"] == "interacting":
        out["audit"] = audit
    return out


@dataclass
class RunResult:
    out: Path
    files: list
    fits: dict
    trajectory: object


def cmd_run(cfg: ExperimentConfig, out) -> RunResult:
    out = Path(out)
    grid = make_grid(cfg)
    times = time_grid(cfg, grid)
    files = []
    if cfg["run"]["kind"] == "free_photon":
        basis, H, psi0 = _free_setup(cfg, grid)
        n_x = 1
        manifest = {"basis": basis.manifest(), "n_x": 1}
        sampler = _Sampler(cfg, basis, H, 1, with_phi=False)
    else:
        for s in probe_specs(cfg):
            s.validate("propagation")
        system = build_system(make_model_spec(cfg, grid))
        H = assemble_transformed(system)
        fs = filtered_state(cfg, system, H)
        write_json(out / "sigma_hat.json", threshold_report(cfg, fs))
        files.append("sigma_hat.json")
        basis, psi0, n_x = system.basis, fs.psi, system.n_x
        manifest = {"basis": basis.manifest(), "n_x": n_x, "model": system.spec.manifest()}
        sampler = _Sampler(cfg, basis, H, n_x, with_phi=True)
    observables = {name: sampler.observable(name) for name in sampler.names()}
    thin = cfg["io"]["thin"]
    tr = propagate(H, psi0, times, tol=cfg["evolve"]["tol"], observables=observables, keep_every=thin or None)
    probe = probe_manifest(cfg, grid, times)
    write_trajectory_csv(out / "trajectory.csv", tr.times, tr.norm_series, tr.energy_series, tr.observables,
                         cfg.hash, {"version": __version__, "propagator": tr.propagator_stats,
                                    "norm_drift": tr.norm_drift, "energy_drift": tr.energy_drift})
    files += ["trajectory.csv", "trajectory.json"]
    write_json(out / "probe.json", probe)
    files.append("probe.json")
    series = {"t": tr.times, **tr.observables}
    fits = compute_fits(series, probe)
    write_json(out / "fits.json", fits)
    files.append("fits.json")
    if thin:
        for i in sorted(tr.states):
            name = f"state_{i:05d}.txt"
            write_state(out / name, tr.states[i], {**header(cfg), **manifest, "t": float(tr.times[i])})
            files += [name, name + ".json"]
    write_json(out / "manifest.json", {**header(cfg), "config": cfg.data, "files": sorted(files),
                                       "basis": manifest})
    return RunResult(out, sorted(files), fits, tr)


def cmd_fit(trajectory_csv, probe_json, out=None) -> dict:
    series = read_trajectory_csv(trajectory_csv)
    probe = read_json(probe_json)
    missing = [n for n in _required_columns(probe) if n not in series]
    if missing:
        from lightcone.io import CSVFormatError

        raise CSVFormatError(f"{trajectory_csv}: missing columns {missing}")
    fits = compute_fits(series, probe)
    if out is not None:
        write_json(Path(out) / "fits.json", fits)
    return fits


def _required_columns(probe: dict) -> list[str]:
    cols = [_name("mass_c", c) for c in probe["c"]] + [_name("growth_d", d) for d in probe["growth_deltas"]]
    if probe["kind"] == "interacting":
        cols += [_name("phi_c", c) for c in probe["c"]] + [_name("dphi_c", c) for c in probe["c"]]
    return cols


__all__ = ["ConeBoxError", "cmd_build", "cmd_verify", "cmd_run", "cmd_fit", "cmd_threshold", "compute_fits",
           "Check", "VerifyReport", "SUITES"]
