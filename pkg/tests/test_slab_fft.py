import numpy as np
import pytest
from hypothesis import given, strategies as st

from aims.aim import AuxGrid, green_samples, kernel_spectrum
from aims.slab_fft import (BYTES_PER_POINT, IntegrityError, OccupancyMask, balanced_ranges,
                           distributed_fft3, plan_slabs, transform_flops, transpose_traffic)

from oracles import direct_convolution


def _random(rng, dims):
    return rng.normal(size=dims) + 1j * rng.normal(size=dims)


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# -- plans ---------------------------------------------------------------------

def test_even_plan():
    plan = plan_slabs((24, 24, 8), 6)
    assert [len(c) for c in plan.cols] == [4] * 6
    assert [len(r) for r in plan.rows] == [4] * 6
    assert plan.block_points(2, 5) == 8 * 24 * 24 // 36


def test_single_rank_plan_is_whole_grid():
    plan = plan_slabs((10, 6, 3), 1)
    assert plan.cols == (range(0, 10),) and plan.rows == (range(0, 6),)


def test_uneven_plan():
    plan = plan_slabs((10, 10, 4), 3)
    assert [len(c) for c in plan.cols] == [4, 3, 3]
    assert [c.start for c in plan.cols] == [0, 4, 7]


@given(st.integers(1, 40), st.integers(1, 40))
def test_ranges_partition(n, parts):
    if parts > n:
        parts = n
    ranges = balanced_ranges(n, parts)
    assert ranges[0].start == 0 and ranges[-1].stop == n
    assert all(a.stop == b.start for a, b in zip(ranges, ranges[1:]))
    sizes = [len(r) for r in ranges]
    assert max(sizes) - min(sizes) <= 1


def test_too_many_ranks():
    with pytest.raises(ValueError, match="slab count"):
        plan_slabs((8, 4, 4), 5)
    with pytest.raises(ValueError):
        distributed_fft3(np.zeros((4, 4, 4)), 5)
    with pytest.raises(ValueError):
        plan_slabs((8, 8, 8), 0)


# -- forward and inverse ----------------------------------------------------------

@pytest.mark.parametrize("strategy", ["collective", "p2p"])
@pytest.mark.parametrize("ranks", [1, 2, 3, 4, 8])
def test_forward_matches_serial(rng, strategy, ranks):
    a = _random(rng, (16, 12, 6))
    run = distributed_fft3(a, ranks, strategy)
    assert _rel(run.output, np.fft.fftn(a)) <= 1e-12


def test_four_ranks_on_cube(rng):
    a = _random(rng, (16, 16, 16))
    run = distributed_fft3(a, 4, "collective")
    assert _rel(run.output, np.fft.fftn(a)) <= 1e-12
    slab_bytes = 4 * 16 * 16 * BYTES_PER_POINT
    for rec in run.rank_records():
        assert rec["bytes_sent"] == slab_bytes * 3 // 4
        assert rec["msgs_sent"] == 3


def test_single_rank_sends_nothing(rng):
    a = _random(rng, (6, 6, 6))
    for strategy in ("collective", "p2p"):
        run = distributed_fft3(a, 1, strategy)
        assert run.msgs_sent == 0
        assert _rel(run.output, np.fft.fftn(a)) <= 1e-12


@pytest.mark.parametrize("ranks", [1, 2, 4])
@pytest.mark.parametrize("strategy", ["collective", "p2p"])
def test_round_trip(rng, ranks, strategy):
    a = _random(rng, (8, 8, 5))
    fwd = distributed_fft3(a, ranks, strategy).output
    back = distributed_fft3(fwd, ranks, strategy, inverse=True).output
    assert _rel(back, a) <= 1e-12


@given(st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_strategies_agree(ranks, seed):
    a = _random(np.random.default_rng(seed), (12, 6, 3))
    coll = distributed_fft3(a, ranks, "collective").output
    p2p = distributed_fft3(a, ranks, "p2p").output
    assert _rel(p2p, coll) <= 1e-12


def test_unknown_strategy():
    with pytest.raises(ValueError, match="strategy"):
        distributed_fft3(np.zeros((4, 4, 4)), 2, "ring")


# -- occupancy --------------------------------------------------------------------

def _half(rng, dims):
    a = np.zeros(dims, complex)
    a[: dims[0] // 2] = _random(rng, (dims[0] // 2,) + dims[1:])
    return a


def test_half_occupancy_halves_traffic(rng):
    dims = (32, 32, 8)
    a = _half(rng, dims)
    plan = plan_slabs(dims, 4)
    mask = OccupancyMask.from_array(plan, a)
    assert mask.fraction() == 0.5
    coll = distributed_fft3(a, 4, "collective")
    p2p = distributed_fft3(a, 4, "p2p", mask=mask)
    assert 0.4 <= p2p.bytes_sent / coll.bytes_sent <= 0.6
    assert _rel(p2p.output, coll.output) <= 1e-12
    # the empty ranks skipped their 2-D transforms
    assert [s.ffts_2d for s in p2p.stats] == [8, 8, 0, 0]


def test_full_occupancy_traffic_is_equal(rng):
    a = _random(rng, (16, 16, 4))
    plan = plan_slabs(a.shape, 4)
    coll = distributed_fft3(a, 4, "collective")
    p2p = distributed_fft3(a, 4, "p2p", mask=OccupancyMask.full(plan))
    assert p2p.bytes_sent == coll.bytes_sent
    assert transpose_traffic(a.shape, 4) == (coll.msgs_sent, coll.bytes_sent)


def test_one_occupied_slab_with_eight_ranks(rng):
    dims = (16, 16, 4)
    plan = plan_slabs(dims, 8)
    a = np.zeros(dims, complex)
    c = plan.cols[3]
    a[c.start:c.stop] = _random(rng, (len(c), 16, 4))
    run = distributed_fft3(a, 8, "p2p", mask=OccupancyMask.from_array(plan, a))
    sent = [rec["msgs_sent"] for rec in run.rank_records()]
    assert sent == [0, 0, 0, 7, 0, 0, 0, 0]
    assert _rel(run.output, np.fft.fftn(a)) <= 1e-12


def test_inverse_skips_unneeded_columns(rng):
    dims = (16, 8, 4)
    plan = plan_slabs(dims, 4)
    mask = OccupancyMask.from_x_extent(plan, 8)
    spec = _random(rng, dims)
    run = distributed_fft3(spec, 4, "p2p", mask=mask, inverse=True)
    assert [s.ffts_2d for s in run.stats] == [4, 4, 0, 0]
    full = np.fft.ifftn(spec)
    assert _rel(run.output[:8], full[:8]) <= 1e-12
    assert not np.any(run.output[8:])


def test_mask_integrity_check(rng):
    a = _random(rng, (8, 8, 2))
    plan = plan_slabs(a.shape, 2)
    lying = OccupancyMask((True, False))
    with pytest.raises(IntegrityError):
        distributed_fft3(a, 2, "p2p", mask=lying, check=True)


def test_traffic_model_counts_occupied_slabs():
    msgs, nbytes = transpose_traffic((32, 32, 8), 4, occupied=[True, True, False, False])
    assert msgs == 2 * 3
    assert nbytes == 2 * 8 * 24 * 8 * BYTES_PER_POINT
    full = transform_flops((32, 32, 8), 4)
    half = transform_flops((32, 32, 8), 4, occupied=[True, True, False, False])
    assert half < full


# -- convolution ------------------------------------------------------------------

@pytest.mark.parametrize("strategy", ["collective", "p2p"])
@pytest.mark.parametrize("ranks", [1, 2, 4])
def test_distributed_convolution_matches_direct_sum(rng, strategy, ranks):
    grid = AuxGrid(np.zeros(3), 0.1, (4, 4, 4), 3)
    src = _random(rng, (4, 4, 4))
    padded = np.zeros(grid.doubled_dims, complex)
    padded[:4, :4, :4] = src
    plan = plan_slabs(grid.doubled_dims, ranks)
    mask = OccupancyMask.from_x_extent(plan, 4)
    kw = {"mask": mask} if strategy == "p2p" else {}
    spec = distributed_fft3(padded, ranks, strategy, **kw).output
    spec *= kernel_spectrum(grid, 2 * np.pi).spectrum
    field = distributed_fft3(spec, ranks, strategy, inverse=True, **kw).output[:4, :4, :4]
    ref = direct_convolution(src, lambda off: green_samples(off, grid.spacing, 2 * np.pi))
    assert _rel(field, ref) <= 1e-12
