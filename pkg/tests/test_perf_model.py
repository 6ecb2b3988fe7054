import csv
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from aims import perf_model as pm
from aims.perf_model import (RANGER, SCHEMES, AimCostModel, MachineParams, ProblemDescriptor,
                             classify_mom_regime, crossover_vs_mom, family_model,
                             grid_memory_crossover, iteration_cost, memory_per_core, mom_memory,
                             predict_solve_curve, preset, table_presets, transpose_cost)
from aims.slab_fft import distributed_fft3

PLATE8 = preset("table1:8lambda")


# -- dense MOM regimes --------------------------------------------------------

@pytest.mark.parametrize("T", [1, 2, 3, 4])
@pytest.mark.parametrize("scheme", SCHEMES)
def test_ranger_is_latency_limited(T, scheme):
    assert classify_mom_regime(RANGER.with_threads(T), scheme) == "latency-limited"


def test_slow_network_is_bandwidth_limited():
    slow = MachineParams(t_bw=1e-6)
    for scheme in SCHEMES:
        assert classify_mom_regime(slow, scheme) == "bandwidth-limited"


@pytest.mark.parametrize("T", [1, 2, 4])
def test_boundary_counts_as_bandwidth_limited(T):
    fl, lat = RANGER.t_fl, RANGER.t_lat
    mp = MachineParams(t_bw=float(np.sqrt(fl * lat * T)), T=T)
    hy = MachineParams(t_bw=float(np.sqrt(fl * lat / T)), T=T)
    assert classify_mom_regime(mp, "message-passing") == "bandwidth-limited"
    assert classify_mom_regime(hy, "hybrid") == "bandwidth-limited"


def test_machine_validation():
    with pytest.raises(ValueError):
        MachineParams(t_fl=0.0)
    with pytest.raises(ValueError):
        MachineParams(T=5)
    with pytest.raises(ValueError):
        classify_mom_regime(RANGER, "shared")


# -- per-iteration model -------------------------------------------------------

@given(st.sampled_from(SCHEMES), st.sampled_from([1, 2, 4]), st.integers(0, 12),
       st.floats(1e-7, 1e-4), st.floats(1.0, 10.0))
def test_latency_never_helps(scheme, T, logm, t_lat, factor):
    P = T * 2 ** logm
    slow = MachineParams(t_lat=t_lat * factor, T=T)
    fast = MachineParams(t_lat=t_lat, T=T)
    assert (iteration_cost(PLATE8, slow, scheme, P).total
            >= iteration_cost(PLATE8, fast, scheme, P).total)


@given(st.sampled_from(SCHEMES), st.sampled_from([1, 2, 4]), st.integers(0, 11))
def test_more_cores_never_raise_compute(scheme, T, logm):
    m = RANGER.with_threads(T)
    P = T * 2 ** logm
    a = iteration_cost(PLATE8, m, scheme, P).compute
    b = iteration_cost(PLATE8, m, scheme, 2 * P).compute
    assert b <= a


@given(st.sampled_from([2, 3, 4]), st.integers(0, 10), st.sampled_from(pm.preset_names()))
def test_hybrid_communicates_less(T, logm, name):
    problem = preset(name)
    m = RANGER.with_threads(T)
    P = T * 2 ** logm
    hy = iteration_cost(problem, m, "hybrid", P).communication
    mp = iteration_cost(problem, m, "message-passing", P).communication
    assert hy <= mp


def test_invalid_core_counts():
    m = RANGER.with_threads(4)
    with pytest.raises(ValueError):
        iteration_cost(PLATE8, m, "hybrid", 6)
    with pytest.raises(ValueError):
        predict_solve_curve(PLATE8, m, "hybrid", [4, 4])
    with pytest.raises(ValueError):
        predict_solve_curve(PLATE8, m, "ring")


@pytest.mark.parametrize("dims, ranks", [((16, 12, 6), 4), ((24, 24, 8), 6), ((10, 10, 4), 3)])
def test_model_traffic_and_flops_equal_measurement(rng, dims, ranks):
    a = rng.normal(size=dims) + 0j
    run = distributed_fft3(a, ranks, "collective")
    msgs, nbytes = transpose_cost(ranks, dims)
    assert msgs * ranks == run.msgs_sent
    assert nbytes * ranks == run.bytes_sent
    n = int(np.prod(dims))
    measured = sum(s.fft_flops for s in run.stats)
    assert measured == pytest.approx(5.0 * n * np.log2(n), rel=1e-12)


def test_problem_fft_flops_count_every_grid():
    problem = ProblemDescriptor(100, (6, 6, 4), 1000)
    n2 = 8 * 6 * 6 * 4
    assert problem.fft_flops() == pytest.approx(4 * (2 * 5.0 * n2 * np.log2(n2) + 6.0 * n2))


# -- memory ------------------------------------------------------------------

def _fixed(problem, machine, scheme, P):
    fixed = problem.replicated_bytes() + pm.RANK_OVERHEAD_BYTES
    return fixed if scheme == "message-passing" else fixed / machine.T


@pytest.mark.parametrize("scheme", SCHEMES)
def test_doubling_cores_halves_the_parallel_share(scheme):
    m = RANGER.with_threads(4)
    shares = [memory_per_core(PLATE8, m, scheme, P) - _fixed(PLATE8, m, scheme, P)
              for P in (4, 8, 16, 32)]
    for a, b in zip(shares, shares[1:]):
        assert b == pytest.approx(a / 2, rel=1e-12)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_memory_flattens_to_replicated_level(scheme):
    problem = preset("table1:32lambda")
    m = RANGER.with_threads(4)
    Ps = [4 * 2 ** i for i in range(12)]
    mem = np.array([memory_per_core(problem, m, scheme, P) for P in Ps])
    assert np.all(np.diff(mem) < 0)
    floor = problem.replicated_bytes() + pm.RANK_OVERHEAD_BYTES
    floor = floor if scheme == "message-passing" else floor / 4
    assert np.all(mem > floor)
    assert abs(mem[-1] / floor - 1) < 0.1


def test_hybrid_footprint_is_smaller():
    m = RANGER.with_threads(4)
    for P in (4, 64, 1024):
        assert (memory_per_core(PLATE8, m, "hybrid", P)
                < memory_per_core(PLATE8, m, "message-passing", P))


def test_dense_memory():
    assert mom_memory(1e4) == 16.0 * 1e8


def test_sphere_grid_overtakes_near_zone_near_1e5():
    sphere = family_model("sphere")
    n_model = sphere.grid_memory_crossover()
    n_table = grid_memory_crossover(table_presets("table2"))
    for n in (n_model, n_table):
        assert 10 ** 4.5 <= n <= 10 ** 5.5
    # below it the near zone dominates, above it the grid does
    assert sphere.near_memory(n_model / 3) > sphere.grid_memory(n_model / 3)
    assert sphere.near_memory(n_model * 3) < sphere.grid_memory(n_model * 3)


def test_plate_grid_never_overtakes():
    assert family_model("plate").grid_memory_crossover() == float("inf")
    assert grid_memory_crossover(table_presets("table1")) == float("inf")


def test_cost_model_reproduces_its_calibration_grid():
    problem = ProblemDescriptor(3630, (24, 24, 24), 2096000, "sphere")
    model = AimCostModel.from_problem(problem)
    assert np.allclose(model.grid_dims(3630), (24, 24, 24))
    assert model.doubled_points(3630) == pytest.approx(problem.doubled_points)
    plate = AimCostModel.from_problem(PLATE8)
    assert np.allclose(plate.grid_dims(PLATE8.N), PLATE8.grid_dims)


# -- crossover -------------------------------------------------------------------

def test_plate_crossover_against_dense():
    cross = crossover_vs_mom(family_model("plate"))
    assert 5e2 <= cross.N <= 5e3
    assert cross.N == max(cross.fill_N, cross.memory_N, cross.solve_N)


def test_equal_constants_cross_immediately():
    nlogn = lambda n: n * np.log2(n)  # noqa: E731
    square = lambda n: np.asarray(n, float) ** 2  # noqa: E731
    model = SimpleNamespace(fill=nlogn, memory=nlogn, solve=nlogn, mom_fill_cost_per_entry=1.0)
    assert crossover_vs_mom(model, mom_cost=(square, square, square)).N == 2.0


def test_unknown_family():
    with pytest.raises(ValueError):
        family_model("airplane")


# -- curves --------------------------------------------------------------------------

def test_single_core_count_is_compute_bound():
    curve = predict_solve_curve(PLATE8, RANGER, "message-passing", [1])
    assert curve.regime == "compute-bound"
    assert [p.regime for p in curve.points] == ["compute-bound"]


def test_message_passing_has_interior_minimum():
    problem = PLATE8
    curve = predict_solve_curve(problem, RANGER.with_threads(4), "message-passing")
    i = int(np.argmin(curve.times))
    assert curve.regime == "latency-limited"
    assert 0 < i
    upto = curve.times[i:][curve.P[i:] <= problem.slab_cap]
    assert len(upto) >= 2 and np.all(np.diff(upto) > 0)


def test_hybrid_plateaus_at_cap():
    problem = PLATE8
    curve = predict_solve_curve(problem, RANGER.with_threads(4), "hybrid")
    assert curve.regime == "grid-limited"
    at_cap = list(curve.P).index(max(p for p in curve.P if p <= problem.slab_cap))
    assert pm.is_plateau(curve.times, at_cap, rel=1e-12)
    ratio = (predict_solve_curve(problem, RANGER.with_threads(4), "message-passing").minimum()[1]
             / curve.minimum()[1])
    assert 1.0 < ratio <= 4.0


def test_presets():
    assert preset("table2:1lambda").grid_dims == (24, 24, 24)
    assert len(table_presets("table1")) == 9
    with pytest.raises(ValueError):
        preset("table9:1lambda")
    with pytest.raises(ValueError):
        preset("table1:3lambda")


def test_curve_csv(tmp_path):
    curves = [predict_solve_curve(PLATE8, RANGER, s) for s in SCHEMES]
    path = tmp_path / "curves.csv"
    pm.write_curves_csv(curves, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["scheme", "M", "T", "P", "time_s_per_iter", "mem_bytes_per_core", "regime"]
    assert len(rows) == 1 + sum(len(c.points) for c in curves)
