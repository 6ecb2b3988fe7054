"""Scattering scenarios: configuration, presets, and the mesh-to-error pipeline."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .aim import build_aim_operator
from .geometry import build_rwg, load_mesh, make_plate_mesh, make_sphere_mesh
from .krylov import diag_preconditioner, solve
from .mom import ETA0, Formulation, PlaneWave, assemble_mom, excitation
from .rcs import bistatic_rcs, default_grid, mie_rcs, rcs_error
from .slab_fft import OccupancyMask, distributed_fft3, plan_slabs

WAVELENGTH = 1.0
SCATTERERS = ("plate", "sphere", "mesh")
REFERENCES = ("mie", "dense-mom", "high-order-aim")
# error budgets against analytic and numerical references
BUDGETS = {"mie": 0.01, "dense-mom": 0.005, "high-order-aim": 0.005}


class ScenarioError(ValueError):
    """The scenario is inconsistent; raised before any computation."""


@dataclass
class Scenario:
    """One scattering run. Lengths are in wavelengths."""

    scatterer: str = "plate"
    size: float = 1.0  # plate side or sphere radius
    mesh_path: str | None = None
    edge: float = 1.0 / 9  # target mesh edge
    formulation: str = "EFIE"
    alpha: float | None = None
    order: int = 3
    gamma: int = 3
    spacing: float | None = None
    tol: float = 1e-4
    max_iter: int = 2000
    restart: int = 50
    reference: str = "dense-mom"
    reference_order: int = 5
    dense_cap: int = 20000
    ranks: int = 1
    strategy: str = "p2p"
    n_theta: int = 181
    n_phi: int = 360
    seed: int = 0
    name: str = ""

    def validate(self) -> None:
        if self.scatterer not in SCATTERERS:
            raise ScenarioError(f"scatterer must be one of {SCATTERERS}")
        if self.reference not in REFERENCES:
            raise ScenarioError(f"reference must be one of {REFERENCES}")
        if self.reference == "mie" and self.scatterer != "sphere":
            raise ScenarioError("a Mie reference exists only for spheres")
        if self.scatterer == "mesh" and not self.mesh_path:
            raise ScenarioError("scatterer 'mesh' needs mesh_path")
        if self.size <= 0 or self.edge <= 0 or self.tol <= 0:
            raise ScenarioError("size, edge and tol must be positive")
        if self.order < 1 or self.gamma < 0:
            raise ScenarioError("order must be >= 1 and gamma >= 0")
        if self.ranks < 1:
            raise ScenarioError("ranks must be >= 1")
        if self.strategy not in ("collective", "p2p"):
            raise ScenarioError("strategy must be 'collective' or 'p2p'")
        try:
            Formulation(self.formulation, self.alpha)
        except ValueError as exc:
            raise ScenarioError(str(exc)) from None

    @property
    def form(self) -> Formulation:
        return Formulation(self.formulation, self.alpha)

    @property
    def budget(self) -> float:
        return BUDGETS[self.reference]

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ScenarioError(f"unknown scenario fields: {sorted(extra)}")
        sc = cls(**data)
        sc.validate()
        return sc

    @classmethod
    def from_json(cls, path) -> "Scenario":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: {exc}") from None
        if not isinstance(data, dict):
            raise ScenarioError(f"{path}: expected a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "plate-1": Scenario("plate", 1.0, name="plate-1"),
    "plate-2": Scenario("plate", 2.0, name="plate-2"),
    "plate-4": Scenario("plate", 4.0, reference="high-order-aim", name="plate-4"),
    "plate-8": Scenario("plate", 8.0, reference="high-order-aim", name="plate-8"),
    "sphere-1": Scenario("sphere", 1.0, formulation="CFIE", alpha=0.6, reference="mie",
                         name="sphere-1"),
    "sphere-2": Scenario("sphere", 2.0, formulation="CFIE", alpha=0.6, reference="mie",
                         name="sphere-2"),
}


def plate_for_mean_edge(side: float, mean_edge: float, wavelength: float = WAVELENGTH):
    """Plate mesh with a whole number of squares per wavelength.

    The count is the one whose mean edge comes closest to ``mean_edge``; a
    square of side h split once has edges h, h and sqrt(2) h.
    """
    per_wavelength = max(1, round(wavelength * (2 + np.sqrt(2)) / 3 / mean_edge))
    return make_plate_mesh(side, wavelength / per_wavelength)


def scenario_basis(sc: Scenario):
    if sc.scatterer == "plate":
        mesh = plate_for_mean_edge(sc.size * WAVELENGTH, sc.edge * WAVELENGTH)
    elif sc.scatterer == "sphere":
        mesh = make_sphere_mesh(sc.size * WAVELENGTH, sc.edge * WAVELENGTH)
    else:
        mesh = load_mesh(sc.mesh_path)
    return build_rwg(mesh)


@dataclass
class SimulationResult:
    report: dict
    currents: np.ndarray
    rcs: object
    reference_rcs: object
    history: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.report["passed"])


def _plane_wave() -> PlaneWave:
    # x-polarized wave travelling toward -z
    return PlaneWave((0.0, 0.0, -1.0), (1.0, 0.0, 0.0), 2 * np.pi / WAVELENGTH)


def _reference_pattern(sc: Scenario, basis, pw, theta, phi, timings):
    t0 = time.perf_counter()
    k = pw.k
    if sc.reference == "mie":
        pat = mie_rcs(sc.size * WAVELENGTH, k, theta, phi)
    elif sc.reference == "dense-mom":
        if basis.n > sc.dense_cap:
            raise ScenarioError(f"N = {basis.n} exceeds the dense cap {sc.dense_cap}")
        Z = assemble_mom(basis, k, sc.form)
        I = np.linalg.solve(Z, excitation(basis, pw, sc.form))
        pat = bistatic_rcs(I, basis, k, theta, phi)
    else:
        op = build_aim_operator(basis, WAVELENGTH, sc.form, sc.reference_order, sc.gamma,
                                sc.spacing)
        res = solve(op, excitation(basis, pw, sc.form), diag_preconditioner(op),
                    tol=sc.tol / 10, max_iter=sc.max_iter, restart=sc.restart)
        if not res.converged:
            raise RuntimeError("reference AIM solve did not converge")
        pat = bistatic_rcs(res.x, basis, k, theta, phi)
    timings["reference"] = time.perf_counter() - t0
    return pat


def _fft_check(sc: Scenario, op, currents) -> dict:
    """Run the first forward grid FFT of the solved currents on simulated ranks."""
    grids = (op.source_matrix @ currents).reshape((4,) + op.grid.dims)
    padded = np.zeros(op.grid.doubled_dims, dtype=complex)
    nx, ny, nz = op.grid.dims
    padded[:nx, :ny, :nz] = grids[0]
    plan = plan_slabs(padded.shape, sc.ranks)
    mask = OccupancyMask.from_array(plan, padded) if sc.strategy == "p2p" else None
    run = distributed_fft3(padded, sc.ranks, sc.strategy, mask=mask, seed=sc.seed)
    ref = np.fft.fftn(padded)
    err = float(np.linalg.norm(run.output - ref) / max(np.linalg.norm(ref), 1e-300))
    return {"ranks": sc.ranks, "strategy": sc.strategy, "rel_error": err,
            "bytes_sent": run.bytes_sent, "msgs_sent": run.msgs_sent}


def run_scenario(sc: Scenario, out_dir=None) -> SimulationResult:
    """Mesh, build the AIM operator, solve, compute RCS, and score it.

    With ``out_dir`` the report, RCS and residual history are written there
    as ``report.json``, ``rcs.csv`` and ``residual.csv``.
    """
    sc.validate()
    timings: dict = {}
    t0 = time.perf_counter()
    basis = scenario_basis(sc)
    timings["mesh"] = time.perf_counter() - t0
    if sc.reference == "dense-mom" and basis.n > sc.dense_cap:
        raise ScenarioError(f"N = {basis.n} exceeds the dense cap {sc.dense_cap}")
    form = sc.form
    form.check(basis)
    pw = _plane_wave()

    t0 = time.perf_counter()
    op = build_aim_operator(basis, WAVELENGTH, form, sc.order, sc.gamma, sc.spacing)
    timings["build"] = time.perf_counter() - t0
    timings.update({f"build_{k}": v for k, v in op.timings.items()})

    t0 = time.perf_counter()
    rhs = excitation(basis, pw, form)
    res = solve(op, rhs, diag_preconditioner(op), tol=sc.tol, max_iter=sc.max_iter,
                restart=sc.restart)
    timings["solve"] = time.perf_counter() - t0

    theta, phi = default_grid(sc.n_theta, sc.n_phi)
    t0 = time.perf_counter()
    pattern = bistatic_rcs(res.x, basis, pw.k, theta, phi)
    timings["rcs"] = time.perf_counter() - t0
    ref = _reference_pattern(sc, basis, pw, theta, phi, timings)
    err = rcs_error(pattern, ref)

    report = {
        "scenario": sc.to_dict(),
        "N": basis.n,
        "N_C": op.grid.n_nodes,
        "grid_dims": list(op.grid.dims),
        "near_entries": op.near_count,
        "iterations": res.iterations,
        "converged": res.converged,
        "residual": res.residual,
        "err_vv": err,
        "budget": sc.budget,
        "passed": bool(res.converged and err < sc.budget),
        "timings": timings,
        "memory_bytes": op.memory_bytes(),
        "flops_per_matvec": op.flops_per_matvec(),
    }
    if sc.ranks > 1:
        report["fft_check"] = _fft_check(sc, op, res.x)
    result = SimulationResult(report, res.x, pattern, ref, list(res.history))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(report, indent=2))
        pattern.to_csv(out / "rcs.csv")
        res.to_csv(out / "residual.csv")
    return result
