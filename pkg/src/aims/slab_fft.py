"""Slab-decomposed distributed 3-D FFT over a :class:`~aims.transport.TransportGroup`.

Before the transpose rank r holds a column slab, the x-range ``plan.cols[r]``
of the full (X, Y, Z) array; after it rank r holds the row slab, the y-range
``plan.rows[r]``. Forward transforms do 2-D FFTs over (y, z) on columns, a
global transpose, and 1-D FFTs over x on rows; inverse transforms mirror that.

Two transpose strategies are provided: a blocking all-to-all, and a
point-to-point exchange that posts its receives first, overlaps sends with the
2-D FFTs, and lets ranks without data skip work and messages altogether.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .transport import Endpoint, TransportGroup

BYTES_PER_POINT = 16  # complex128


class IntegrityError(RuntimeError):
    """A slab marked as empty holds nonzero data."""


def balanced_ranges(n: int, parts: int) -> list[range]:
    """Contiguous ranges; part r starts at r*base + min(r, remainder)."""
    base, rem = divmod(n, parts)
    return [range(r * base + min(r, rem), (r + 1) * base + min(r + 1, rem)) for r in range(parts)]


@dataclass(frozen=True)
class SlabPlan:
    dims: tuple
    ranks: int
    cols: tuple = field(init=False)
    rows: tuple = field(init=False)

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"invalid grid dims {self.dims}")
        if self.ranks < 1:
            raise ValueError("need at least one rank")
        if self.ranks > min(dims[0], dims[1]):
            raise ValueError(f"{self.ranks} ranks exceed the slab count {min(dims[0], dims[1])}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "cols", tuple(balanced_ranges(dims[0], self.ranks)))
        object.__setattr__(self, "rows", tuple(balanced_ranges(dims[1], self.ranks)))

    def column_shape(self, r: int) -> tuple:
        return (len(self.cols[r]), self.dims[1], self.dims[2])

    def row_shape(self, r: int) -> tuple:
        return (self.dims[0], len(self.rows[r]), self.dims[2])

    def block_points(self, row_rank: int, col_rank: int) -> int:
        """Grid points in the intersection of a row slab and a column slab."""
        return len(self.cols[col_rank]) * len(self.rows[row_rank]) * self.dims[2]

    def scatter_columns(self, array: np.ndarray) -> list:
        return [np.ascontiguousarray(array[c.start:c.stop]) for c in self.cols]

    def scatter_rows(self, array: np.ndarray) -> list:
        return [np.ascontiguousarray(array[:, r.start:r.stop]) for r in self.rows]

    def gather_columns(self, slabs) -> np.ndarray:
        return np.concatenate(slabs, axis=0)

    def gather_rows(self, slabs) -> np.ndarray:
        return np.concatenate(slabs, axis=1)


def plan_slabs(dims, ranks: int) -> SlabPlan:
    return SlabPlan(tuple(dims), int(ranks))


@dataclass(frozen=True)
class OccupancyMask:
    """Which column slabs hold nonzero input (forward) or are needed as output (inverse)."""

    columns: tuple

    @classmethod
    def full(cls, plan: SlabPlan) -> "OccupancyMask":
        return cls(tuple([True] * plan.ranks))

    @classmethod
    def from_x_extent(cls, plan: SlabPlan, x_stop: int, x_start: int = 0) -> "OccupancyMask":
        """Slabs overlapping the x index range [x_start, x_stop)."""
        return cls(tuple(c.start < x_stop and c.stop > x_start for c in plan.cols))

    @classmethod
    def from_array(cls, plan: SlabPlan, array: np.ndarray) -> "OccupancyMask":
        return cls(tuple(bool(np.any(array[c.start:c.stop])) for c in plan.cols))

    def fraction(self) -> float:
        return sum(self.columns) / len(self.columns)


@dataclass
class RankStats:
    fft_flops: float = 0.0
    ffts_2d: int = 0
    ffts_1d: int = 0


def _flops(n: int) -> float:
    return 5.0 * n * np.log2(n) if n > 1 else 0.0


def _fft2(a, stats: RankStats, inverse=False):
    if a.shape[0] == 0:
        return a
    stats.ffts_2d += a.shape[0]
    stats.fft_flops += a.shape[0] * _flops(a.shape[1] * a.shape[2])
    f = scipy.fft.ifft2 if inverse else scipy.fft.fft2
    return f(a, axes=(1, 2))


def _fft1(a, stats: RankStats, inverse=False):
    stats.ffts_1d += a.shape[1] * a.shape[2]
    stats.fft_flops += a.shape[1] * a.shape[2] * _flops(a.shape[0])
    f = scipy.fft.ifft if inverse else scipy.fft.fft
    return f(a, axis=0)


def _check_shape(local, shape):
    if local.shape != shape:
        raise ValueError(f"local slab has shape {local.shape}, plan expects {shape}")


def fft3_forward_collective(ep: Endpoint, plan: SlabPlan, local: np.ndarray,
                            stats: RankStats | None = None, phase: str = "fwd") -> np.ndarray:
    """Column slab in, row slab of the 3-D DFT out, via one all-to-all."""
    stats = stats if stats is not None else RankStats()
    r = ep.rank
    _check_shape(local, plan.column_shape(r))
    a = _fft2(np.asarray(local, dtype=complex), stats)
    blocks = [np.ascontiguousarray(a[:, rw.start:rw.stop]) for rw in plan.rows]
    received = ep.all_to_all(blocks, phase=phase)
    return _fft1(np.concatenate(received, axis=0), stats)


def fft3_inverse_collective(ep: Endpoint, plan: SlabPlan, local: np.ndarray,
                            stats: RankStats | None = None, phase: str = "inv") -> np.ndarray:
    """Row slab of a spectrum in, column slab of the inverse 3-D DFT out."""
    stats = stats if stats is not None else RankStats()
    r = ep.rank
    _check_shape(local, plan.row_shape(r))
    a = _fft1(np.asarray(local, dtype=complex), stats, inverse=True)
    blocks = [np.ascontiguousarray(a[c.start:c.stop]) for c in plan.cols]
    received = ep.all_to_all(blocks, phase=phase)
    return _fft2(np.concatenate(received, axis=1), stats, inverse=True)


def fft3_forward_p2p(ep: Endpoint, plan: SlabPlan, local: np.ndarray,
                     mask: OccupancyMask | None = None, stats: RankStats | None = None,
                     phase: str = "fwd", check: bool = False) -> np.ndarray:
    """Point-to-point forward transform.

    Receives are posted first, then the 2-D FFTs run, then blocks are sent and
    finally the receives are awaited before the 1-D FFTs. Ranks whose column
    slab is marked empty compute nothing and send nothing; their blocks are
    zeros at the receivers.
    """
    stats = stats if stats is not None else RankStats()
    mask = mask or OccupancyMask.full(plan)
    r = ep.rank
    _check_shape(local, plan.column_shape(r))
    handles = {j: ep.post_recv(j, (phase, r, j)) for j in range(plan.ranks)
               if j != r and mask.columns[j]}
    own = None
    if mask.columns[r]:
        a = _fft2(np.asarray(local, dtype=complex), stats)
        for i, rw in enumerate(plan.rows):
            if i != r:
                ep.send(i, (phase, i, r), np.ascontiguousarray(a[:, rw.start:rw.stop]))
        own = a[:, plan.rows[r].start:plan.rows[r].stop]
    elif check and np.any(local):
        raise IntegrityError(f"rank {r}: column slab marked empty holds nonzero data")
    out = np.zeros(plan.row_shape(r), dtype=complex)
    for j, c in enumerate(plan.cols):
        if j == r:
            if own is not None:
                out[c.start:c.stop] = own
        elif j in handles:
            out[c.start:c.stop] = ep.wait(handles[j])
    return _fft1(out, stats)


def fft3_inverse_p2p(ep: Endpoint, plan: SlabPlan, local: np.ndarray,
                     mask: OccupancyMask | None = None, stats: RankStats | None = None,
                     phase: str = "inv") -> np.ndarray:
    """Point-to-point inverse transform.

    Only ranks whose column slab is marked as needed receive data and run the
    2-D inverse FFTs; the others return zeros.
    """
    stats = stats if stats is not None else RankStats()
    mask = mask or OccupancyMask.full(plan)
    r = ep.rank
    _check_shape(local, plan.row_shape(r))
    handles = {}
    if mask.columns[r]:
        handles = {j: ep.post_recv(j, (phase, r, j)) for j in range(plan.ranks) if j != r}
    a = _fft1(np.asarray(local, dtype=complex), stats, inverse=True)
    for i, c in enumerate(plan.cols):
        if i != r and mask.columns[i]:
            ep.send(i, (phase, i, r), np.ascontiguousarray(a[c.start:c.stop]))
    if not mask.columns[r]:
        return np.zeros(plan.column_shape(r), dtype=complex)
    out = np.empty(plan.column_shape(r), dtype=complex)
    cr = plan.cols[r]
    for j, rw in enumerate(plan.rows):
        out[:, rw.start:rw.stop] = a[cr.start:cr.stop] if j == r else ep.wait(handles[j])
    return _fft2(out, stats, inverse=True)


STRATEGIES = ("collective", "p2p")


@dataclass
class FftRun:
    """Result of :func:`distributed_fft3`: gathered output plus traffic and flop records."""

    output: np.ndarray
    plan: SlabPlan
    group: TransportGroup
    stats: list

    @property
    def bytes_sent(self) -> int:
        return self.group.totals().bytes_sent

    @property
    def msgs_sent(self) -> int:
        return self.group.totals().msgs_sent

    def rank_records(self) -> list[dict]:
        recs = []
        for r in range(self.plan.ranks):
            c = self.group.rank_totals(r)
            recs.append({"rank": r, "msgs_sent": c.msgs_sent, "bytes_sent": c.bytes_sent,
                         "msgs_recv": c.msgs_recv, "bytes_recv": c.bytes_recv,
                         "fft_flops": self.stats[r].fft_flops})
        return recs


def distributed_fft3(array: np.ndarray, ranks: int, strategy: str = "collective",
                     mask: OccupancyMask | None = None, inverse: bool = False,
                     seed: int | None = None, jitter: float = 0.0, check: bool = False) -> FftRun:
    """Scatter ``array`` over ``ranks`` simulated ranks, transform, and gather.

    Forward transforms take the array in column-slab layout and gather row
    slabs; inverse transforms do the reverse. The gathered output is the full
    array either way.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    array = np.asarray(array)
    plan = plan_slabs(array.shape, ranks)
    group = TransportGroup(ranks, seed=seed, jitter=jitter)
    stats = [RankStats() for _ in range(ranks)]
    slabs = plan.scatter_rows(array) if inverse else plan.scatter_columns(array)

    def body(ep):
        st = stats[ep.rank]
        local = slabs[ep.rank]
        if strategy == "collective":
            if inverse:
                return fft3_inverse_collective(ep, plan, local, st)
            return fft3_forward_collective(ep, plan, local, st)
        if inverse:
            return fft3_inverse_p2p(ep, plan, local, mask, st)
        return fft3_forward_p2p(ep, plan, local, mask, st, check=check)

    parts = group.run(body)
    out = plan.gather_columns(parts) if inverse else plan.gather_rows(parts)
    return FftRun(out, plan, group, stats)


def _range_sizes(n: int, parts: int) -> np.ndarray:
    base, rem = divmod(n, parts)
    return base + (np.arange(parts) < rem)


def transpose_traffic(dims, ranks: int, occupied=None) -> tuple[int, int]:
    """(messages, bytes) of one slab transpose, summed over ranks.

    ``occupied`` lists which column slabs take part (all by default); this is
    the exact count produced by the point-to-point strategy, and by the
    collective one when every slab takes part.
    """
    X, Y, Z = (int(n) for n in dims)
    if not 1 <= ranks <= min(X, Y):
        raise ValueError(f"{ranks} ranks exceed the slab count {min(X, Y)}")
    cx = _range_sizes(X, ranks)
    ry = _range_sizes(Y, ranks)
    occ = np.ones(ranks, bool) if occupied is None else np.asarray(occupied, bool)
    msgs = int(occ.sum()) * (ranks - 1)
    points = int(np.sum(cx[occ] * (Y - ry[occ]) * Z))
    return msgs, points * BYTES_PER_POINT


def transform_flops(dims, ranks: int, occupied=None) -> float:
    """FFT flops of one forward transform summed over ranks (5 n log2 n per FFT)."""
    plan = plan_slabs(dims, ranks)
    occ = [True] * ranks if occupied is None else list(occupied)
    X, Y, Z = plan.dims
    two_d = sum(len(c) for c, o in zip(plan.cols, occ) if o) * _flops(Y * Z)
    return two_d + Y * Z * _flops(X)
