"""Analytic time and memory model of the parallel solvers on a multi-core cluster.

The model prices one AIM iteration as local sparse work (near-zone matvec,
projection and interpolation) spread over all P cores, FFT work spread over
at most ``slab_cap`` cores, and the slab transposes of the forward and inverse
FFTs. With pure message passing, all P = M*T cores are ranks and the T ranks
of a processor share one network interface; with the hybrid scheme only the
M processors are ranks and their T threads share the rank's slab.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .slab_fft import BYTES_PER_POINT, transpose_traffic

N_GRIDS = 4
TRANSPOSES_PER_ITER = 2 * N_GRIDS  # forward and inverse FFT of every grid
NEAR_ENTRY_BYTES = 20  # complex128 value plus int32 column index
STENCIL_NODES = 64  # (M+1)^3 for M = 3
GRID_ARRAYS = 1 + 2 * N_GRIDS  # kernel spectrum plus padded grids and their spectra
VECTORS = 52  # GMRES(50) basis plus solution and right-hand side
FILL_FLOPS_PER_ENTRY = 8000.0  # four triangle pairs of 7x7 points, ~40 flops per point pair
GEOMETRY_BYTES_PER_UNKNOWN = 200
RANK_OVERHEAD_BYTES = 64 * 2 ** 20
# thread synchronisation points per iteration in the hybrid scheme: one on
# each side of every transpose, plus the near-zone and stencil loops
SYNC_REGIONS_PER_ITER = 2 * TRANSPOSES_PER_ITER + 2

SCHEMES = ("message-passing", "hybrid")
REGIMES = ("latency-limited", "bandwidth-limited", "grid-limited", "compute-bound")


@dataclass(frozen=True)
class MachineParams:
    """Cost of one flop, one message and one byte, and cores per processor in use.

    Defaults are the Ranger cluster figures; ``t_sync`` is the cost of one
    barrier among the threads of a processor.
    """

    t_fl: float = 0.45e-9
    t_lat: float = 4.5e-6
    t_bw: float = 1e-9
    T: int = 1
    t_sync: float = 2e-6
    M: int = 1
    max_threads: int = 4

    def __post_init__(self):
        for name in ("t_fl", "t_lat", "t_bw", "t_sync"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 1 <= self.T <= self.max_threads:
            raise ValueError(f"T must lie in 1..{self.max_threads}")
        if self.M < 1:
            raise ValueError("M must be positive")

    @property
    def P(self) -> int:
        return self.M * self.T

    def with_threads(self, T: int) -> "MachineParams":
        return replace(self, T=T)

    @classmethod
    def from_json(cls, path) -> "MachineParams":
        with open(path) as fh:
            return cls(**json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


RANGER = MachineParams()


@dataclass(frozen=True)
class ProblemDescriptor:
    """Size data of one AIM problem."""

    N: int
    grid_dims: tuple
    near_entries: int
    scatterer: str = "plate"
    stencil_nodes: int = STENCIL_NODES
    label: str = ""

    def __post_init__(self):
        if self.N < 1 or self.near_entries < 0:
            raise ValueError("N must be positive and the near count non-negative")
        if self.scatterer not in ("plate", "sphere", "complex"):
            raise ValueError(f"unknown scatterer class {self.scatterer!r}")
        object.__setattr__(self, "grid_dims", tuple(int(n) for n in self.grid_dims))

    @property
    def grid_points(self) -> int:
        return int(np.prod(self.grid_dims))

    @property
    def doubled_points(self) -> int:
        return 8 * self.grid_points

    @property
    def doubled_dims(self) -> tuple:
        return tuple(2 * n for n in self.grid_dims)

    @property
    def slab_cap(self) -> int:
        """Largest useful rank count of the slab FFT: min(2 N^cx, 2 N^cy)."""
        return 2 * min(self.grid_dims[0], self.grid_dims[1])

    @classmethod
    def from_operator(cls, op, scatterer: str = "plate", label: str = "") -> "ProblemDescriptor":
        return cls(op.n, op.grid.dims, op.near_count, scatterer,
                   (op.grid.order + 1) ** 3, label)

    # -- work and traffic ---------------------------------------------------
    def local_flops(self) -> float:
        """Near-zone matvec plus projection and interpolation on all grids."""
        return 8.0 * self.near_entries + 8.0 * 2 * N_GRIDS * self.stencil_nodes * self.N

    def fft_flops(self) -> float:
        n2 = self.doubled_points
        return N_GRIDS * (2 * 5.0 * n2 * np.log2(n2) + 6.0 * n2)

    def flops_per_iteration(self) -> float:
        return self.local_flops() + self.fft_flops()

    def near_bytes(self) -> float:
        return NEAR_ENTRY_BYTES * self.near_entries

    def grid_bytes(self) -> float:
        return GRID_ARRAYS * BYTES_PER_POINT * self.doubled_points

    def parallel_bytes(self) -> float:
        stencil = 2 * N_GRIDS * self.stencil_nodes * self.N * NEAR_ENTRY_BYTES
        return self.near_bytes() + self.grid_bytes() + stencil + VECTORS * 16.0 * self.N

    def replicated_bytes(self) -> float:
        return GEOMETRY_BYTES_PER_UNKNOWN * self.N


def transpose_cost(ranks: int, doubled_dims) -> tuple[float, float]:
    """(messages, bytes) sent per rank, averaged, in one slab transpose.

    Uses the same accounting as the simulated transport, so the totals equal
    the measured ones exactly.
    """
    if ranks <= 1:
        return 0.0, 0.0
    msgs, nbytes = transpose_traffic(doubled_dims, ranks)
    return msgs / ranks, nbytes / ranks


def classify_mom_regime(machine: MachineParams, scheme: str) -> str:
    """Scalability regime of the dense MOM solve from the machine constants."""
    if scheme == "message-passing":
        bound = np.sqrt(machine.t_fl * machine.t_lat * machine.T)
    elif scheme == "hybrid":
        bound = np.sqrt(machine.t_fl * machine.t_lat / machine.T)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return "latency-limited" if machine.t_bw < bound else "bandwidth-limited"


@dataclass(frozen=True)
class IterationCost:
    compute: float
    latency: float
    bandwidth: float

    @property
    def communication(self) -> float:
        return self.latency + self.bandwidth

    @property
    def total(self) -> float:
        return self.compute + self.latency + self.bandwidth


def _ranks_in_transpose(scheme: str, fft_cores: float, T: int) -> float:
    if scheme == "message-passing":
        return fft_cores
    return max(1.0, fft_cores // T) if np.isfinite(fft_cores) else fft_cores / T


def iteration_cost(problem: ProblemDescriptor, machine: MachineParams, scheme: str,
                   P: int, cap: bool = True) -> IterationCost:
    """Per-iteration cost at P = M*T cores; ``cap=False`` ignores the slab limit.

    The slab FFT cannot use more than ``slab_cap`` cores, so cores beyond the
    cap sit idle and the time stays at its value at the cap.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    T = machine.T
    if P < 1 or P % T:
        raise ValueError(f"P={P} must be a positive multiple of T={T}")
    S = problem.slab_cap if cap else np.inf
    fft_cores = min(P, S)
    compute = machine.t_fl * problem.flops_per_iteration() / fft_cores
    if scheme == "hybrid" and T > 1:
        compute += SYNC_REGIONS_PER_ITER * machine.t_sync
    ranks = int(_ranks_in_transpose(scheme, fft_cores, T))
    sharing = T if scheme == "message-passing" else 1
    msgs, nbytes = transpose_cost(ranks, problem.doubled_dims)
    lat = TRANSPOSES_PER_ITER * sharing * msgs * machine.t_lat
    bw = TRANSPOSES_PER_ITER * sharing * nbytes * machine.t_bw
    return IterationCost(compute, lat, bw)


def memory_per_core(problem: ProblemDescriptor, machine: MachineParams, scheme: str, P: int) -> float:
    """Maximum bytes per core: parallel share plus replicated data and rank overhead.

    For the hybrid scheme the per-rank footprint is divided by the T threads
    sharing it.
    """
    T = machine.T
    per_rank_fixed = problem.replicated_bytes() + RANK_OVERHEAD_BYTES
    share = problem.parallel_bytes() / P
    if scheme == "message-passing":
        return share + per_rank_fixed
    return share + per_rank_fixed / T


def fill_time(problem: ProblemDescriptor, machine: MachineParams, P: int,
              flops_per_entry: float = FILL_FLOPS_PER_ENTRY) -> float:
    return problem.near_entries * flops_per_entry * machine.t_fl / P


def predict_fill_and_memory(problem: ProblemDescriptor, machine: MachineParams, scheme: str,
                            P: int) -> tuple[float, float]:
    return fill_time(problem, machine, P), memory_per_core(problem, machine, scheme, P)


def _smooth_cost(problem, machine, scheme, P: float) -> IterationCost:
    """Uncapped cost with P treated as a real number."""
    T = machine.T
    compute = machine.t_fl * problem.flops_per_iteration() / P
    ranks = max(P if scheme == "message-passing" else P / T, 1.0)
    sharing = T if scheme == "message-passing" else 1
    n2 = problem.doubled_points
    return IterationCost(
        compute,
        TRANSPOSES_PER_ITER * sharing * (ranks - 1) * machine.t_lat,
        TRANSPOSES_PER_ITER * sharing * BYTES_PER_POINT * n2 * (ranks - 1) / ranks ** 2 * machine.t_bw)


def unconstrained_optimum(problem: ProblemDescriptor, machine: MachineParams, scheme: str) -> float:
    """Core count minimising the per-iteration time when the slab cap is ignored."""
    from scipy.optimize import minimize_scalar

    def f(logp):
        return _smooth_cost(problem, machine, scheme, np.exp(logp)).total

    hi = np.log(max(64.0 * problem.slab_cap, 2.0 * machine.T))
    res = minimize_scalar(f, bounds=(np.log(machine.T), hi), method="bounded",
                          options={"xatol": 1e-8})
    return float(np.exp(res.x))


def classify_aim_regime(problem: ProblemDescriptor, machine: MachineParams, scheme: str) -> str:
    """Regime label of the AIM solve.

    grid-limited when the uncapped optimum needs at least as many cores as
    there are slabs; otherwise the communication term that dominates at the
    optimum names the regime.
    """
    p_star = unconstrained_optimum(problem, machine, scheme)
    if p_star >= problem.slab_cap:
        return "grid-limited"
    c = _smooth_cost(problem, machine, scheme, p_star)
    return "latency-limited" if c.latency >= c.bandwidth else "bandwidth-limited"


@dataclass
class CurvePoint:
    M: int
    T: int
    P: int
    time: float
    memory: float
    regime: str
    fill: float = 0.0


@dataclass
class ScalingCurve:
    scheme: str
    machine: MachineParams
    problem: ProblemDescriptor
    points: list = field(default_factory=list)
    regime: str = "compute-bound"

    @property
    def P(self) -> np.ndarray:
        return np.array([p.P for p in self.points])

    @property
    def times(self) -> np.ndarray:
        return np.array([p.time for p in self.points])

    @property
    def memory(self) -> np.ndarray:
        return np.array([p.memory for p in self.points])

    def minimum(self) -> tuple[int, float]:
        i = int(np.argmin(self.times))
        return self.points[i].P, self.points[i].time

    def rows(self) -> list[dict]:
        return [{"scheme": self.scheme, "M": p.M, "T": p.T, "P": p.P,
                 "time_s_per_iter": p.time, "mem_bytes_per_core": p.memory,
                 "regime": p.regime} for p in self.points]


CURVE_COLUMNS = ["scheme", "M", "T", "P", "time_s_per_iter", "mem_bytes_per_core", "regime"]


def write_curves_csv(curves, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS)
        out.writeheader()
        for c in curves:
            for row in c.rows():
                out.writerow(row)


def default_core_counts(problem: ProblemDescriptor, T: int, beyond_cap: float = 8.0) -> list[int]:
    """Powers of two times T up to ``beyond_cap`` times the slab cap, plus the cap itself."""
    S = problem.slab_cap
    top = beyond_cap * S
    out = []
    M = 1
    while M * T <= top:
        out.append(M * T)
        M *= 2
    cap = (S // T) * T
    if cap >= T:
        out.append(cap)
    return sorted(set(out))


def predict_solve_curve(problem: ProblemDescriptor, machine: MachineParams, scheme: str,
                        P_values=None) -> ScalingCurve:
    """Per-iteration time and per-core memory over a range of core counts.

    Core counts above the slab cap are accepted and modelled as idle extra
    cores, which shows the plateau a capped curve ends in. Points before the
    curve minimum are labelled compute-bound; the rest carry the problem's
    regime.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if P_values is None:
        P_values = default_core_counts(problem, machine.T)
    P_values = sorted(int(p) for p in P_values)
    if not P_values or P_values[0] < 1:
        raise ValueError("core counts must be positive")
    if len(set(P_values)) != len(P_values):
        raise ValueError("core counts must be distinct")
    if any(p % machine.T for p in P_values):
        raise ValueError("every core count must be a multiple of T")
    curve = ScalingCurve(scheme, machine, problem)
    times = [iteration_cost(problem, machine, scheme, P).total for P in P_values]
    if len(P_values) > 1:
        curve.regime = classify_aim_regime(problem, machine, scheme)
    i_min = int(np.argmin(times))
    for i, (P, t) in enumerate(zip(P_values, times)):
        label = "compute-bound" if (i < i_min or len(P_values) == 1) else curve.regime
        curve.points.append(CurvePoint(P // machine.T, machine.T, P, t,
                                       memory_per_core(problem, machine, scheme, P), label,
                                       fill_time(problem, machine, P)))
    return curve


def is_plateau(times: np.ndarray, start: int, rel: float = 0.05) -> bool:
    """True when every value from ``start`` on lies within ``rel`` of the last one."""
    tail = np.asarray(times[start:], dtype=float)
    return len(tail) >= 2 and bool(np.all(np.abs(tail - tail[-1]) <= rel * tail[-1]))


# -- presets ---------------------------------------------------------------

# near-zone entries per unknown for gamma = 3, M = 3 at a spacing of a tenth
# of a wavelength, measured on desk-scale operators (see scripts/calibrate.py)
NEAR_PER_UNKNOWN = {"plate": 466.5, "sphere": 577.0, "complex": 577.0}

TABLE_PRESETS = {
    "table1": [
        (1, 280, (12, 12, 4)), (2, 1160, (20, 20, 4)), (4, 4720, (36, 36, 4)),
        (8, 19040, (72, 72, 4)), (16, 76840, (144, 144, 4)), (32, 306560, (288, 288, 4)),
        (64, 1227520, (576, 576, 4)), (128, 4912640, (1152, 1152, 4)),
        (256, 19655680, (2304, 2304, 4)),
    ],
    "table2": [
        (1, 3384, (24, 24, 24)), (2, 10947, (48, 48, 48)), (4, 44595, (64, 64, 64)),
        (8, 179130, (128, 128, 128)), (16, 742059, (256, 256, 256)),
        (32, 2903916, (512, 512, 512)), (64, 11601048, (1024, 1024, 1024)),
    ],
    "table3": [
        (6.8, 23217, (75, 75, 32)), (13.6, 92868, (144, 144, 48)),
        (27.2, 341472, (256, 256, 96)), (54.4, 1485888, (480, 480, 144)),
        (108.8, 5943552, (960, 960, 288)),
    ],
}
_CLASS = {"table1": "plate", "table2": "sphere", "table3": "complex"}


def preset_names() -> list[str]:
    out = []
    for table, rows in TABLE_PRESETS.items():
        out += [f"{table}:{size:g}lambda" for size, _, _ in rows]
    return out


def preset(name: str, near_per_unknown: dict | None = None) -> ProblemDescriptor:
    """Problem descriptor for a table row, e.g. ``"table2:1lambda"``."""
    try:
        table, size = name.split(":")
        size = float(size.removesuffix("lambda"))
        rows = TABLE_PRESETS[table]
    except (ValueError, KeyError):
        raise ValueError(f"unknown preset {name!r}; choose from {preset_names()}") from None
    for s, N, dims in rows:
        if abs(s - size) < 1e-9:
            cls = _CLASS[table]
            per = (near_per_unknown or NEAR_PER_UNKNOWN)[cls]
            return ProblemDescriptor(N, dims, int(min(per * N, N * N)), cls, STENCIL_NODES, name)
    raise ValueError(f"unknown preset {name!r}; choose from {preset_names()}")


def table_presets(table: str) -> list[ProblemDescriptor]:
    return [preset(f"{table}:{s:g}lambda") for s, _, _ in TABLE_PRESETS[table]]


def grid_memory_crossover(problems) -> float:
    """N beyond which grid storage exceeds the near-zone matrix along a problem series.

    The log of the ratio of the two is interpolated linearly in log N
    between consecutive problems, and the last crossing is reported; ``inf``
    when the near-zone matrix dominates at the largest problem.
    """
    probs = sorted(problems, key=lambda p: p.N)
    logn = np.log([p.N for p in probs])
    logr = np.log([p.grid_bytes() / max(p.near_bytes(), 1.0) for p in probs])
    losing = np.flatnonzero(logr < 0)
    if len(losing) == 0:
        return float(probs[0].N)
    i = losing[-1]
    if i == len(probs) - 1:
        return float("inf")
    t = -logr[i] / (logr[i + 1] - logr[i])
    return float(np.exp(logn[i] + t * (logn[i + 1] - logn[i])))


# -- AIM versus dense MOM ---------------------------------------------------

@dataclass(frozen=True)
class AimCostModel:
    """Per-unknown constants of an AIM problem family.

    The base grid has ``cells_per_root_n[a] * sqrt(N) + pad`` nodes along
    axis a: the scatterer extent in cells grows as sqrt(N) for a surface mesh
    of fixed edge length, and ``pad`` is the M + 1 stencil margin. A flat
    plate has zero growth along its normal, a sphere grows along all axes.
    """

    near_per_unknown: float
    cells_per_root_n: tuple
    pad: int = 4
    fill_cost_per_entry: float = 1.0
    mom_fill_cost_per_entry: float = 1.0
    stencil_nodes: int = STENCIL_NODES

    def grid_dims(self, N):
        root = np.sqrt(np.asarray(N, dtype=float))
        return [c * root + self.pad for c in self.cells_per_root_n]

    def doubled_points(self, N):
        nx, ny, nz = self.grid_dims(N)
        return 8.0 * nx * ny * nz

    def near(self, N):
        N = np.asarray(N, dtype=float)
        return np.minimum(self.near_per_unknown * N, N * N)

    def fill(self, N):
        return self.fill_cost_per_entry * self.near(N)

    def near_memory(self, N):
        return NEAR_ENTRY_BYTES * self.near(N)

    def grid_memory(self, N):
        return GRID_ARRAYS * BYTES_PER_POINT * self.doubled_points(N)

    def memory(self, N):
        N = np.asarray(N, dtype=float)
        return (self.near_memory(N) + 2 * N_GRIDS * self.stencil_nodes * NEAR_ENTRY_BYTES * N
                + self.grid_memory(N))

    def solve(self, N):
        N = np.asarray(N, dtype=float)
        n2 = np.maximum(self.doubled_points(N), 2.0)
        return (8.0 * self.near(N) + 8.0 * 2 * N_GRIDS * self.stencil_nodes * N
                + N_GRIDS * (10.0 * n2 * np.log2(n2) + 6.0 * n2))

    def grid_memory_crossover(self, n_min: float = 1e2, n_max: float = 1e10) -> float:
        """N beyond which grid storage exceeds the near-zone matrix for good.

        Tiny problems are excluded in effect: there the near count is capped
        at N^2 and the padded grid wins trivially. Returns ``inf`` when the
        near-zone matrix still dominates at ``n_max``.
        """
        from scipy.optimize import brentq

        def f(logn):
            n = np.exp(logn)
            return float(np.log(self.grid_memory(n) / self.near_memory(n)))

        logs = np.linspace(np.log(n_min), np.log(n_max), 400)
        vals = np.array([f(x) for x in logs])
        losing = np.flatnonzero(vals < 0)
        if len(losing) == 0:
            return float(n_min)
        i = losing[-1]
        if i == len(logs) - 1:
            return float("inf")
        return float(np.exp(brentq(f, logs[i], logs[i + 1], xtol=1e-12)))

    @classmethod
    def from_problem(cls, problem: ProblemDescriptor, pad: int = 4, **kw) -> "AimCostModel":
        root = np.sqrt(problem.N)
        cells = tuple(max(n - pad, 0) / root for n in problem.grid_dims)
        return cls(problem.near_entries / problem.N, cells, pad,
                   stencil_nodes=problem.stencil_nodes, **kw)


# frozen output of scripts/calibrate.py: structure of the 8-wavelength plate
# (grid 84 x 84 x 4, N = 19040) and the 1-wavelength sphere (24^3, N = 3630);
# fill cost ratio timed on the 2-wavelength plate
FILL_COST_RATIO = 1.34
FAMILY_MODELS = {
    "plate": AimCostModel(466.5, (80 / 19040 ** 0.5, 80 / 19040 ** 0.5, 0.0), 4,
                          FILL_COST_RATIO),
    "sphere": AimCostModel(577.4, (20 / 3630 ** 0.5,) * 3, 4, FILL_COST_RATIO),
}


def family_model(scatterer: str) -> AimCostModel:
    try:
        return FAMILY_MODELS[scatterer]
    except KeyError:
        raise ValueError(f"no calibrated model for {scatterer!r}") from None


def mom_fill(N, cost_per_entry: float = 1.0):
    return cost_per_entry * np.asarray(N, dtype=float) ** 2


def mom_memory(N):
    """Dense complex128 impedance matrix."""
    return 16.0 * np.asarray(N, dtype=float) ** 2


def mom_solve(N):
    """Flops of a dense complex matvec."""
    return 8.0 * np.asarray(N, dtype=float) ** 2


@dataclass(frozen=True)
class Crossover:
    N: float
    fill_N: float
    memory_N: float
    solve_N: float


def crossover_vs_mom(model: AimCostModel, n_min: float = 2.0, n_max: float = 1e9,
                     samples: int = 4000, mom_cost: tuple | None = None) -> Crossover:
    """Smallest N on a log grid beyond which AIM fill, memory and solve all beat MOM.

    ``mom_cost`` may override the MOM (fill, memory, solve) callables, for
    example to make them share the AIM constants.
    """
    N = np.unique(np.round(np.geomspace(n_min, n_max, samples)))
    fill_m, mem_m, solve_m = mom_cost or (
        lambda n: mom_fill(n, model.mom_fill_cost_per_entry), mom_memory, mom_solve)
    wins = {
        "fill": model.fill(N) < fill_m(N),
        "memory": model.memory(N) < mem_m(N),
        "solve": model.solve(N) < solve_m(N),
    }

    def first_stable(mask):
        # first N from which AIM wins at every larger sample
        losing = np.flatnonzero(~mask)
        if len(losing) == 0:
            return float(N[0])
        if losing[-1] == len(N) - 1:
            return float("inf")
        return float(N[losing[-1] + 1])

    parts = {k: first_stable(v) for k, v in wins.items()}
    return Crossover(max(parts.values()), parts["fill"], parts["memory"], parts["solve"])
