"""Adaptive integral method: grid projection, FFT propagation and near-zone correction.

Each basis function is represented on a regular auxiliary grid by four scalar
source distributions (the three Cartesian current components and the surface
charge). Stencils of (M+1)^3 nodes reproduce the multipole moments of those
distributions up to order M along every axis. The far interaction is then a
discrete convolution with sampled Green's-function values, evaluated by FFT on
a grid doubled along every axis, and pairs of nearby basis functions get the
difference between the exact Galerkin entry and the grid-mediated value.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .geometry import RwgSet, TriMesh
from .mom import EFIE, ETA0, FOUR_PI, Formulation, mom_entries
from .quadrature import map_points, rule

N_GRIDS = 4  # x, y, z current components and charge
BYTES_COMPLEX = 16
POINT_LIKE = 1e-2  # extents below this many cells count as zero


def build_threads() -> int:
    """Worker count for build-phase parallelism, capped by ``AIMS_THREADS``."""
    raw = os.environ.get("AIMS_THREADS", "")
    try:
        cap = int(raw)
    except ValueError:
        cap = 1
    return max(1, cap)


@dataclass(frozen=True, eq=False)
class AuxGrid:
    """Regular grid of nodes origin + spacing * (i, j, k), 0 <= i < dims[0], ...."""

    origin: np.ndarray
    spacing: float
    dims: tuple
    order: int = 3

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if len(dims) != 3 or min(dims) < self.order + 1:
            raise ValueError(f"grid dims {dims} must be at least {self.order + 1} per axis")
        if self.spacing <= 0:
            raise ValueError("grid spacing must be positive")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))

    @property
    def doubled_dims(self) -> tuple:
        return tuple(2 * n for n in self.dims)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_doubled(self) -> int:
        return int(np.prod(self.doubled_dims))

    def node(self, ijk) -> np.ndarray:
        return self.origin + self.spacing * np.asarray(ijk, dtype=float)

    def flat_index(self, ijk) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.asarray(ijk).T), self.dims)

    def stencil_start(self, points) -> np.ndarray:
        """First node index (per axis) of the stencil nearest to each point."""
        u = (np.asarray(points, dtype=float) - self.origin) / self.spacing
        start = np.floor(u - (self.order - 1) / 2 + 1e-9).astype(np.int64)
        return np.clip(start, 0, np.asarray(self.dims) - self.order - 1)

    def to_dict(self) -> dict:
        return {"origin": self.origin.tolist(), "spacing": self.spacing,
                "dims": list(self.dims), "order": self.order}


def build_aux_grid(mesh: TriMesh, wavelength: float, order: int = 3,
                   spacing: float | None = None) -> AuxGrid:
    """Grid with spacing wavelength/10 covering the mesh plus the stencil reach.

    Along each axis the node count is ceil(extent/d) + order + 1, and the mesh
    box starts order/2 cells inside the grid, so that every stencil centred on
    a point of the mesh box fits. Axes shorter than ``POINT_LIKE`` cells
    count as zero extent, so a point-like mesh gets the minimal grid.
    """
    if order < 1:
        raise ValueError("moment order must be at least 1")
    d = wavelength / 10.0 if spacing is None else float(spacing)
    lo, hi = mesh.bounding_box()
    extent = hi - lo
    cells = np.ceil(extent / d - 1e-9).astype(int)
    # an axis spanning a tiny fraction of a cell is treated as a single plane
    cells[extent < POINT_LIKE * d] = 0
    dims = np.maximum(cells, 0) + order + 1
    origin = lo - d * order / 2
    return AuxGrid(origin, d, tuple(int(n) for n in dims), order)


def _inverse_vandermonde(order: int) -> np.ndarray:
    """W with sum_a W[i, a] t_j^a = delta_ij for nodes t = -order/2 .. order/2."""
    t = np.arange(order + 1) - order / 2
    V = t[None, :] ** np.arange(order + 1)[:, None]  # V[a, i] = t_i^a
    return np.linalg.inv(V)


def stencil_from_moments(moments: np.ndarray, order: int) -> np.ndarray:
    """Tensor-product moment matching.

    ``moments[..., a, b, c]`` are moments in cell units about the stencil-box
    centre; the result ``coef[..., i, j, k]`` satisfies
    sum_ijk coef t_i^a t_j^b t_k^c = moments[a, b, c] for every a, b, c <= order.
    """
    W = _inverse_vandermonde(order)
    return np.einsum("ia,jb,kc,...abc->...ijk", W, W, W, moments, optimize=True)


def point_stencil(point, grid: AuxGrid, weight: complex = 1.0):
    """Stencil of a point source of the given strength: (start (3,), coef (M+1,)*3)."""
    M = grid.order
    p = np.asarray(point, dtype=float)
    start = grid.stencil_start(p[None])[0]
    centre = grid.node(start + M / 2)
    t = (p - centre) / grid.spacing
    powers = t[:, None] ** np.arange(M + 1)[None, :]  # (3, M+1)
    mom = weight * np.einsum("a,b,c->abc", powers[0], powers[1], powers[2])
    return start, stencil_from_moments(mom, M)


def _moment_rule(order: int):
    # the integrand is a linear function times a polynomial of degree 3*order
    return rule(f"g{(3 * order + 2) // 2 + 1}")


@dataclass(frozen=True, eq=False)
class Stencils:
    """Per-basis projection coefficients.

    ``start[n]`` is the first node of the (M+1)^3 stencil box of basis n and
    ``source[n, g]`` the coefficients for grid g in (Jx, Jy, Jz, charge).
    ``curl`` holds test coefficients of the functionals A_c -> <f x n, curl A>
    restricted to each component, present when built with ``with_curl``.
    """

    grid: AuxGrid
    start: np.ndarray
    source: np.ndarray
    curl: np.ndarray | None = None

    @property
    def order(self) -> int:
        return self.grid.order

    @property
    def n(self) -> int:
        return len(self.start)

    def node_indices(self) -> np.ndarray:
        """(N, (M+1)^3) flat grid indices of every stencil node."""
        M = self.order
        off = np.stack(np.meshgrid(*[np.arange(M + 1)] * 3, indexing="ij"), -1).reshape(-1, 3)
        nodes = self.start[:, None, :] + off[None]
        return np.ravel_multi_index((nodes[..., 0], nodes[..., 1], nodes[..., 2]), self.grid.dims)


def project_basis(basis: RwgSet, grid: AuxGrid, with_curl: bool = False,
                  chunk: int = 2048) -> Stencils:
    """Moment-matched stencils for every basis function of ``basis``."""
    mesh = basis.mesh
    M = grid.order
    d = grid.spacing
    start = grid.stencil_start(basis.centers)
    centre = grid.node(start + M / 2)
    bary, w = _moment_rule(M)
    src = np.empty((basis.n, N_GRIDS) + (M + 1,) * 3)
    curl = np.empty((basis.n, 3) + (M + 1,) * 3) if with_curl else None
    sides = (
        (basis.plus, basis.plus_local, 1.0),
        (basis.minus, basis.minus_local, -1.0),
    )
    exps = np.arange(M + 1)
    for s in range(0, basis.n, chunk):
        idx = slice(s, min(basis.n, s + chunk))
        mom_f = 0.0
        mom_q = 0.0
        mom_w = 0.0
        for tri, loc, sgn in sides:
            t = tri[idx]
            T = mesh.vertices[mesh.triangles[t]]
            A = mesh.areas[t]
            r = map_points(T, bary)                                   # (B, Q, 3)
            wq = w[None] * A[:, None]
            free = T[np.arange(len(t)), loc[idx]]
            scale = sgn * basis.length[idx] / (2 * A)
            f = scale[:, None, None] * (r - free[:, None, :])          # (B, Q, 3)
            u = (r - centre[idx][:, None, :]) / d
            pw = u[..., None] ** exps                                  # (B, Q, 3, M+1)
            mono = np.einsum("nqa,nqb,nqc->nqabc", pw[:, :, 0], pw[:, :, 1], pw[:, :, 2])
            mom_f = mom_f + np.einsum("nq,nqx,nqabc->nxabc", wq, f, mono)
            mom_q = mom_q + np.einsum("nq,n,nqabc->nabc", wq, 2 * scale, mono)
            if with_curl:
                wv = np.cross(f, mesh.normals[t][:, None, :])
                mom_w = mom_w + np.einsum("nq,nqx,nqabc->nxabc", wq, wv, mono)
        src[idx, :3] = stencil_from_moments(mom_f, M)
        src[idx, 3] = stencil_from_moments(mom_q, M)
        if with_curl:
            curl[idx] = stencil_from_moments(_curl_functionals(mom_w, d), M)
    return Stencils(grid, start, src, curl)


def _derivative(mom: np.ndarray, axis: int, d: float) -> np.ndarray:
    """Functional p -> int w dp/dx_axis, from moments of w (axis counted from the end)."""
    out = np.zeros_like(mom)
    M = mom.shape[-1] - 1
    ax = mom.ndim - 3 + axis
    shape = [1] * mom.ndim
    shape[ax] = M
    fac = np.arange(1, M + 1).reshape(shape) / d
    dst = [slice(None)] * mom.ndim
    srcs = [slice(None)] * mom.ndim
    dst[ax] = slice(1, None)
    srcs[ax] = slice(0, M)
    out[tuple(dst)] = fac * mom[tuple(srcs)]
    return out


def _curl_functionals(mom_w: np.ndarray, d: float) -> np.ndarray:
    """Per-component moments of A -> int w . curl A, for w given by its moments."""
    wx, wy, wz = mom_w[:, 0], mom_w[:, 1], mom_w[:, 2]
    return np.stack([
        _derivative(wy, 2, d) - _derivative(wz, 1, d),
        _derivative(wz, 0, d) - _derivative(wx, 2, d),
        _derivative(wx, 1, d) - _derivative(wy, 0, d),
    ], axis=1)


def test_coefficients(stencils: Stencils, form: Formulation, k: float, eta: float = ETA0) -> np.ndarray:
    """Testing-side coefficients per grid, combining EFIE and MFIE weights."""
    a = form.alpha
    out = np.empty(stencils.source.shape, dtype=complex)
    out[:, :3] = a * 1j * k * eta * stencils.source[:, :3]
    out[:, 3] = -a * (1j * eta / k) * stencils.source[:, 3]
    if form.uses_mfie:
        if stencils.curl is None:
            raise ValueError("stencils were built without curl functionals")
        out[:, :3] -= (1 - a) * eta * stencils.curl
    return out


test_coefficients.__test__ = False  # not a pytest test


def green_samples(offsets: np.ndarray, spacing: float, k: float) -> np.ndarray:
    """g at lattice offsets (..., 3) in cells, with g(0) = 0."""
    r = spacing * np.linalg.norm(np.asarray(offsets, dtype=float), axis=-1)
    safe = np.where(r > 0, r, 1.0)
    return np.where(r > 0, np.exp(-1j * k * safe) / (FOUR_PI * safe), 0.0)


def circulant_offsets(n: int) -> np.ndarray:
    """Signed lattice offset represented by each index of a length-2n circulant axis."""
    i = np.arange(2 * n)
    return np.where(i < n, i, i - 2 * n)


@dataclass(frozen=True, eq=False)
class KernelSpectrum:
    dims: tuple
    spectrum: np.ndarray

    @property
    def nbytes(self) -> int:
        return int(self.spectrum.nbytes)


def kernel_samples(grid: AuxGrid, k: float) -> np.ndarray:
    ox, oy, oz = (circulant_offsets(n) for n in grid.dims)
    off = np.stack(np.meshgrid(ox, oy, oz, indexing="ij"), axis=-1)
    return green_samples(off, grid.spacing, k)


def kernel_spectrum(grid: AuxGrid, k: float, workers: int | None = None) -> KernelSpectrum:
    """3-D DFT of the circulant embedding of g on the doubled grid."""
    spec = scipy.fft.fftn(kernel_samples(grid, k), workers=workers or build_threads())
    return KernelSpectrum(grid.doubled_dims, spec)


def fft_flops(n: int) -> float:
    """Nominal 5 n log2 n flop count of a complex FFT of n points."""
    return 5.0 * n * np.log2(n) if n > 1 else 0.0


def near_pairs(stencils: Stencils, gamma: int) -> tuple[np.ndarray, np.ndarray]:
    """(rows, cols) of all ordered pairs whose stencil boxes lie within gamma cells.

    Pairs are listed with every (m, n) and its mirror (n, m), plus the diagonal.
    """
    reach = stencils.order + gamma
    tree = cKDTree(stencils.start.astype(float))
    pairs = tree.query_pairs(reach + 0.5, p=np.inf, output_type="ndarray")
    diag = np.arange(stencils.n)
    rows = np.concatenate([diag, pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([diag, pairs[:, 1], pairs[:, 0]])
    order = np.lexsort((cols, rows))
    return rows[order], cols[order]


def _local_reach(grid: AuxGrid, gamma: int) -> np.ndarray:
    """Largest useful start-offset per axis between two stencils of this grid."""
    M = grid.order
    return np.minimum(M + gamma, np.asarray(grid.dims) - M - 1)


def grid_interactions(stencils: Stencils, test: np.ndarray, rows, cols, gamma: int,
                      k: float, chunk_sources: int = 256,
                      pair_block: int = 16384) -> np.ndarray:
    """Grid-mediated values sum_g test[m, g]^T G source[n, g] for the given pairs.

    The field of each source stencil is evaluated once on a local box that
    covers every test stencil within ``gamma`` cells, then gathered per pair.
    """
    grid = stencils.grid
    M = grid.order
    S = M + 1
    reach = _local_reach(grid, gamma)
    lo = -reach
    L = 2 * reach + S  # local box: offsets lo .. reach + M
    # W[j, rho] = g(d |rho - j|) for stencil node j and box offset rho
    box = np.stack(np.meshgrid(*[np.arange(lo[a], lo[a] + L[a]) for a in range(3)],
                               indexing="ij"), -1).reshape(-1, 3)
    nodes = np.stack(np.meshgrid(*[np.arange(S)] * 3, indexing="ij"), -1).reshape(-1, 3)
    W = green_samples(box[None, :, :] - nodes[:, None, :], grid.spacing, k)  # (S^3, L^3)

    rows = np.asarray(rows)
    cols = np.asarray(cols)
    out = np.empty(len(rows), dtype=complex)
    by_col = np.argsort(cols, kind="stable")
    sorted_cols = cols[by_col]
    bounds = np.searchsorted(sorted_cols, np.arange(0, stencils.n + chunk_sources, chunk_sources))
    src = stencils.source.reshape(stencils.n, N_GRIDS, -1)
    tst = test.reshape(stencils.n, N_GRIDS, -1)
    for b in range(len(bounds) - 1):
        sel = by_col[bounds[b]:bounds[b + 1]]
        if len(sel) == 0:
            continue
        c0 = b * chunk_sources
        c1 = min(stencils.n, c0 + chunk_sources)
        psi = np.einsum("ngj,jr->ngr", src[c0:c1], W, optimize=True)  # (B, 4, L^3)
        psi = psi.reshape(c1 - c0, N_GRIDS, *L)
        for s in range(0, len(sel), pair_block):
            part = sel[s:s + pair_block]
            m = rows[part]
            n = cols[part]
            delta = stencils.start[m] - stencils.start[n] - lo      # (P, 3)
            pos = delta[:, None, :] + nodes[None]                    # (P, S^3, 3)
            gathered = psi[(n - c0)[:, None, None], np.arange(N_GRIDS)[None, :, None],
                           pos[:, None, :, 0], pos[:, None, :, 1], pos[:, None, :, 2]]
            out[part] = np.einsum("pgj,pgj->p", tst[m], gathered)
    return out


def _stencil_matrix(stencils: Stencils, coef: np.ndarray) -> sp.csr_matrix:
    """Sparse (4 * n_nodes, N) matrix placing each stencil on the stacked grids."""
    n_nodes = stencils.grid.n_nodes
    idx = stencils.node_indices()                                  # (N, S^3)
    N, S3 = idx.shape
    rows = (np.arange(N_GRIDS)[None, :, None] * n_nodes + idx[:, None, :]).ravel()
    cols = np.repeat(np.arange(N), N_GRIDS * S3)
    vals = coef.reshape(N, N_GRIDS, S3).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(N_GRIDS * n_nodes, N))


@dataclass(eq=False)
class AimOperator:
    """Fast matrix-vector product y = Z_near x + grid propagation of x.

    Build with :func:`build_aim_operator`. The operator is immutable after the
    build; every ``matvec`` call allocates its own work arrays.
    """

    basis: RwgSet
    grid: AuxGrid
    stencils: Stencils
    form: Formulation
    k: float
    gamma: int
    kernel: KernelSpectrum | None
    near: sp.csr_matrix
    mom_diagonal: np.ndarray | None
    source_matrix: sp.csr_matrix
    test_matrix_t: sp.csr_matrix
    fft_workers: int = 1
    timings: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple:
        return (self.basis.n, self.basis.n)

    @property
    def n(self) -> int:
        return self.basis.n

    @property
    def near_count(self) -> int:
        return int(self.near.nnz)

    def _propagate(self, grids: np.ndarray) -> np.ndarray:
        nx, ny, nz = self.grid.dims
        padded = np.zeros((N_GRIDS,) + self.grid.doubled_dims, dtype=complex)
        padded[:, :nx, :ny, :nz] = grids
        spec = scipy.fft.fftn(padded, axes=(1, 2, 3), workers=self.fft_workers)
        spec *= self.kernel.spectrum[None]
        field_ = scipy.fft.ifftn(spec, axes=(1, 2, 3), workers=self.fft_workers)
        return field_[:, :nx, :ny, :nz]

    def far_matvec(self, x: np.ndarray) -> np.ndarray:
        if self.kernel is None:
            raise RuntimeError("operator was built without numerical data")
        grids = (self.source_matrix @ x).reshape((N_GRIDS,) + self.grid.dims)
        return self.test_matrix_t @ self._propagate(grids).ravel()

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got shape {x.shape}")
        x = x.astype(complex)
        return self.near @ x + self.far_matvec(x)

    __matmul__ = matvec

    def diag(self) -> np.ndarray:
        """Exact Galerkin diagonal (self terms are held in the near correction)."""
        if self.mom_diagonal is None:
            raise RuntimeError("operator was built without numerical data")
        return self.mom_diagonal.copy()

    def flops_per_matvec(self) -> float:
        """Nominal real flops of one matvec (complex multiply-add = 8 flops)."""
        n2 = self.grid.n_doubled
        stencil_nnz = self.source_matrix.nnz + self.test_matrix_t.nnz
        return (8.0 * self.near.nnz + 8.0 * stencil_nnz
                + N_GRIDS * (2 * fft_flops(n2) + 6.0 * n2))

    def memory_bytes(self) -> dict:
        near = self.near.nnz * (BYTES_COMPLEX + 4) + (self.n + 1) * 4
        kernel = self.grid.n_doubled * BYTES_COMPLEX
        stencil = (self.source_matrix.nnz + self.test_matrix_t.nnz) * (BYTES_COMPLEX + 4)
        work = 2 * N_GRIDS * self.grid.n_doubled * BYTES_COMPLEX
        return {"near": int(near), "kernel": int(kernel), "stencils": int(stencil),
                "fft_work": int(work)}

    def summary(self) -> dict:
        return {
            "N": self.n,
            "grid_dims": list(self.grid.dims),
            "doubled_dims": list(self.grid.doubled_dims),
            "spacing": self.grid.spacing,
            "moment_order": self.grid.order,
            "gamma": self.gamma,
            "near_entries": self.near_count,
            "kernel_bytes": self.grid.n_doubled * BYTES_COMPLEX,
            "formulation": self.form.kind,
            "alpha": self.form.alpha,
            "flops_per_matvec": self.flops_per_matvec(),
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def _pattern_matrix(n, rows, cols, vals=None) -> sp.csr_matrix:
    if vals is None:
        vals = np.zeros(len(rows), dtype=complex)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    mat.sum_duplicates()
    return mat


def build_aim_operator(basis: RwgSet, wavelength: float, form: Formulation = EFIE,
                       order: int = 3, gamma: int = 3, spacing: float | None = None,
                       eta: float = ETA0, structure_only: bool = False,
                       threads: int | None = None, chunk_pairs: int = 40000) -> AimOperator:
    """Build grid, stencils, kernel spectrum and near correction.

    With ``structure_only`` the near-correction values and the kernel are not
    computed; the result can report sizes and flop counts but cannot multiply.
    """
    import time

    form.check(basis)
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    threads = threads or build_threads()
    k = 2 * np.pi / wavelength
    timings = {}
    t0 = time.perf_counter()
    grid = build_aux_grid(basis.mesh, wavelength, order, spacing)
    st = project_basis(basis, grid, with_curl=form.uses_mfie)
    test = test_coefficients(st, form, k, eta)
    P = _stencil_matrix(st, st.source.astype(complex))
    Qt = _stencil_matrix(st, test).T.tocsr()
    timings["stencils"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    rows, cols = near_pairs(st, gamma)
    timings["near_pairs"] = time.perf_counter() - t0
    if structure_only:
        return AimOperator(basis, grid, st, form, k, gamma, None,
                           _pattern_matrix(basis.n, rows, cols), None, P, Qt, threads, timings)

    t0 = time.perf_counter()
    kernel = kernel_spectrum(grid, k, threads)
    timings["kernel"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    chunks = [slice(s, min(len(rows), s + chunk_pairs)) for s in range(0, len(rows), chunk_pairs)]

    def fill(c):
        return mom_entries(basis, rows[c], cols[c], k, form, eta)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            exact = np.concatenate(list(pool.map(fill, chunks)))
    else:
        exact = np.concatenate([fill(c) for c in chunks]) if chunks else np.zeros(0, complex)
    timings["near_mom"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    gridded = grid_interactions(st, test, rows, cols, gamma, k)
    timings["near_grid"] = time.perf_counter() - t0
    near = _pattern_matrix(basis.n, rows, cols, exact - gridded)
    diag = exact[rows == cols][np.argsort(rows[rows == cols])]
    return AimOperator(basis, grid, st, form, k, gamma, kernel, near, diag, P, Qt, threads, timings)
