"""Triangular surface meshes and RWG basis sets for the benchmark scatterers."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Raised when a mesh violates a structural invariant."""


class MeshFormatError(ValueError):
    """Raised when a mesh file cannot be parsed."""

    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Triangulated surface. Vertices in meters, triangles as vertex-index triples."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError("vertices must have shape (nv, 3)")
        if t.ndim != 2 or t.shape[1] != 3 or len(t) == 0:
            raise MeshError("triangles must have shape (nt, 3) with nt > 0")
        if t.min() < 0 or t.max() >= len(v):
            raise MeshError("triangle references a vertex out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        self.validate()

    def validate(self) -> None:
        t = self.triangles
        same = (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])
        bad = np.flatnonzero(same | (self.areas <= 0.0))
        if len(bad):
            raise MeshError(f"degenerate triangle {int(bad[0])}: {t[bad[0]].tolist()}")
        counts = self._edge_counts
        over = np.flatnonzero(counts > 2)
        if len(over):
            e = self._unique_edges[over[0]]
            raise MeshError(f"non-manifold edge {e.tolist()} shared by {int(counts[over[0]])} triangles")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def _edge_table(self):
        t = self.triangles
        # local edge i is opposite local vertex i
        pairs = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1).reshape(-1, 2)
        keys = np.sort(pairs, axis=1)
        uniq, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        return uniq, inv.reshape(-1), counts

    @property
    def _unique_edges(self) -> np.ndarray:
        return self._edge_table[0]

    @property
    def _edge_counts(self) -> np.ndarray:
        return self._edge_table[2]

    @cached_property
    def edges(self) -> np.ndarray:
        """(E, 2) sorted vertex pairs."""
        return self._edge_table[0]

    @cached_property
    def triangle_edges(self) -> np.ndarray:
        """(F, 3) edge index of the edge opposite each local vertex."""
        return self._edge_table[1].reshape(-1, 3)

    @cached_property
    def edge_triangles(self) -> np.ndarray:
        """(E, 2) adjacent triangles per edge, -1 where absent (boundary)."""
        inv = self._edge_table[1]
        out = np.full((self.n_edges, 2), -1, dtype=np.int64)
        tri = np.repeat(np.arange(self.n_triangles), 3)
        order = np.argsort(inv, kind="stable")
        inv_s, tri_s = inv[order], tri[order]
        first = np.ones(len(inv_s), dtype=bool)
        first[1:] = inv_s[1:] != inv_s[:-1]
        out[inv_s[first], 0] = tri_s[first]
        out[inv_s[~first], 1] = tri_s[~first]
        return out

    @property
    def is_closed(self) -> bool:
        return bool(np.all(self._edge_counts == 2))

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._cross, axis=1)

    @cached_property
    def normals(self) -> np.ndarray:
        """Unit normals following the right-hand rule on vertex order."""
        return self._cross / np.linalg.norm(self._cross, axis=1, keepdims=True)

    @cached_property
    def _cross(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        return np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)

    @property
    def mean_edge(self) -> float:
        return float(self.edge_lengths.mean())

    @property
    def surface_area(self) -> float:
        return float(self.areas.sum())

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass(frozen=True, eq=False)
class RwgSet:
    """RWG basis functions, one per edge shared by two triangles.

    On the plus triangle f(r) = l/(2A+) (r - v+); on the minus triangle
    f(r) = l/(2A-) (v- - r), where v± are the vertices opposite the edge.
    """

    mesh: TriMesh
    edge: np.ndarray
    plus: np.ndarray
    minus: np.ndarray
    plus_local: np.ndarray
    minus_local: np.ndarray
    length: np.ndarray

    @property
    def n(self) -> int:
        return len(self.edge)

    def __len__(self) -> int:
        return self.n

    @cached_property
    def free_plus(self) -> np.ndarray:
        return self.mesh.vertices[self.mesh.triangles[self.plus, self.plus_local]]

    @cached_property
    def free_minus(self) -> np.ndarray:
        return self.mesh.vertices[self.mesh.triangles[self.minus, self.minus_local]]

    @cached_property
    def centers(self) -> np.ndarray:
        """Midpoints of the defining edges."""
        e = self.mesh.edges[self.edge]
        return 0.5 * (self.mesh.vertices[e[:, 0]] + self.mesh.vertices[e[:, 1]])

    @cached_property
    def triangle_slots(self) -> np.ndarray:
        """(F, 3) basis index per (triangle, local free vertex), -1 when none."""
        slots = np.full((self.mesh.n_triangles, 3), -1, dtype=np.int64)
        idx = np.arange(self.n)
        slots[self.plus, self.plus_local] = idx
        slots[self.minus, self.minus_local] = idx
        return slots

    @cached_property
    def triangle_coeffs(self) -> np.ndarray:
        """(F, 3) signed length s*l multiplying the half-basis (r - v_i)/(2A)."""
        c = np.zeros((self.mesh.n_triangles, 3))
        c[self.plus, self.plus_local] = self.length
        c[self.minus, self.minus_local] = -self.length
        return c


def build_rwg(mesh: TriMesh) -> RwgSet:
    """One RWG basis per edge with exactly two adjacent triangles."""
    et = mesh.edge_triangles
    interior = np.flatnonzero(et[:, 1] >= 0)
    if len(interior) == 0:
        raise MeshError("mesh has no interior edges")
    plus, minus = et[interior, 0], et[interior, 1]
    te = mesh.triangle_edges
    plus_local = np.argmax(te[plus] == interior[:, None], axis=1)
    minus_local = np.argmax(te[minus] == interior[:, None], axis=1)
    return RwgSet(
        mesh=mesh,
        edge=interior,
        plus=plus,
        minus=minus,
        plus_local=plus_local,
        minus_local=minus_local,
        length=mesh.edge_lengths[interior],
    )


def make_plate_mesh(side: float, max_edge: float) -> TriMesh:
    """Square plate in the z=0 plane centred at the origin.

    An n x n grid of squares, n = ceil(side / max_edge), each split along
    alternating diagonals.
    """
    if side <= 0 or max_edge <= 0:
        raise ValueError("side and max_edge must be positive")
    if max_edge > side * (1 + 1e-12):
        raise ValueError("max_edge must not exceed side")
    n = int(np.ceil(side / max_edge - 1e-9))
    xs = np.linspace(-side / 2, side / 2, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])

    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    i, j = i.ravel(), j.ravel()
    v00 = i * (n + 1) + j
    v10 = (i + 1) * (n + 1) + j
    v01 = i * (n + 1) + j + 1
    v11 = (i + 1) * (n + 1) + j + 1
    even = (i + j) % 2 == 0
    tris = np.concatenate([
        np.column_stack([v00, v10, v11])[even],
        np.column_stack([v00, v11, v01])[even],
        np.column_stack([v00, v10, v01])[~even],
        np.column_stack([v10, v11, v01])[~even],
    ])
    return TriMesh(verts, tris)


_PHI = (1 + 5 ** 0.5) / 2
_ICO_VERTS = np.array([
    [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
    [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
    [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
], dtype=float)
_ICO_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
])


def make_icosphere(radius: float, frequency: int = 1) -> TriMesh:
    """Geodesic sphere: each icosahedron face split into frequency**2 triangles.

    frequency=1 is the bare icosahedron (12 vertices, 20 faces, 30 edges).
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    n = int(frequency)
    if n < 1:
        raise ValueError("frequency must be >= 1")
    base = _ICO_VERTS / np.linalg.norm(_ICO_VERTS, axis=1, keepdims=True)
    ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    keep = ii + jj <= n
    ii, jj = ii[keep], jj[keep]
    local = {(a, b): k for k, (a, b) in enumerate(zip(ii.tolist(), jj.tolist()))}
    sub = []
    for a in range(n):
        for b in range(n - a):
            sub.append((local[a, b], local[a + 1, b], local[a, b + 1]))
            if a + b < n - 1:
                sub.append((local[a + 1, b], local[a + 1, b + 1], local[a, b + 1]))
    sub = np.array(sub)

    pts, tris = [], []
    for f, (A, B, C) in enumerate(_ICO_FACES):
        p = base[A] + np.outer(ii / n, base[B] - base[A]) + np.outer(jj / n, base[C] - base[A])
        pts.append(p)
        tris.append(sub + f * len(ii))
    pts = np.concatenate(pts)
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    tris = np.concatenate(tris)

    # merge the copies of vertices shared along icosahedron edges
    _, first, inv = np.unique(np.round(pts, 9), axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    verts = pts[first[order]] * radius
    tris = remap[inv.reshape(-1)][tris]

    p = verts[tris]
    nrm = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    flip = np.einsum("ij,ij->i", nrm, p.mean(axis=1)) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return TriMesh(verts, tris)


def make_sphere_mesh(radius: float, max_edge: float) -> TriMesh:
    """Closed icosphere centred at the origin with mean edge <= max_edge."""
    if radius <= 0 or max_edge <= 0:
        raise ValueError("radius and max_edge must be positive")
    if max_edge >= radius:
        raise ValueError("max_edge must be smaller than the radius")
    # the mean chord of a frequency-n icosphere is close to 1.1 r / n
    n = max(1, int(np.floor(1.05 * radius / max_edge)))
    mesh = make_icosphere(radius, n)
    while mesh.mean_edge > max_edge:
        n += 1
        mesh = make_icosphere(radius, n)
    return mesh


def refine_uniform(mesh: TriMesh) -> TriMesh:
    """Split every triangle into four through its edge midpoints.

    New vertices stay on the flat facets; curved surfaces are not reprojected.
    """
    e = mesh.edges
    nv = mesh.n_vertices
    mids = 0.5 * (mesh.vertices[e[:, 0]] + mesh.vertices[e[:, 1]])
    verts = np.concatenate([mesh.vertices, mids])
    t = mesh.triangles
    m = nv + mesh.triangle_edges  # midpoint opposite each local vertex
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    m_bc, m_ca, m_ab = m[:, 0], m[:, 1], m[:, 2]
    tris = np.concatenate([
        np.column_stack([a, m_ab, m_ca]),
        np.column_stack([m_ab, b, m_bc]),
        np.column_stack([m_ca, m_bc, c]),
        np.column_stack([m_ab, m_bc, m_ca]),
    ])
    return TriMesh(verts, tris)


def write_mesh(mesh: TriMesh, path) -> None:
    lines = [f"{mesh.n_vertices} {mesh.n_triangles}"]
    lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> TriMesh:
    """Read the plain-text mesh format.

    Line 1 holds ``nv nt``; then nv lines ``x y z`` and nt lines ``i j k``
    with 0-based vertex indices. ``#`` starts a comment.
    """
    rows = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        body = raw.split("#", 1)[0].split()
        if body:
            rows.append((lineno, body))
    if not rows:
        raise MeshFormatError(1, "empty mesh file")

    lineno, head = rows[0]
    if len(head) != 2:
        raise MeshFormatError(lineno, "header must be 'nv nt'")
    try:
        nv, nt = int(head[0]), int(head[1])
    except ValueError:
        raise MeshFormatError(lineno, "header counts must be integers") from None
    if nv < 3 or nt < 1:
        raise MeshFormatError(lineno, "need at least 3 vertices and 1 triangle")
    if len(rows) - 1 < nv + nt:
        last = rows[-1][0]
        raise MeshFormatError(last, f"expected {nv + nt} data lines, found {len(rows) - 1}")
    if len(rows) - 1 > nv + nt:
        raise MeshFormatError(rows[nv + nt + 1][0], "unexpected trailing data")

    verts = np.empty((nv, 3))
    for k in range(nv):
        lineno, body = rows[1 + k]
        if len(body) != 3:
            raise MeshFormatError(lineno, "vertex line needs 3 coordinates")
        try:
            verts[k] = [float(x) for x in body]
        except ValueError:
            raise MeshFormatError(lineno, "bad vertex coordinate") from None
        if not np.all(np.isfinite(verts[k])):
            raise MeshFormatError(lineno, "non-finite vertex coordinate")

    tris = np.empty((nt, 3), dtype=np.int64)
    for k in range(nt):
        lineno, body = rows[1 + nv + k]
        if len(body) != 3:
            raise MeshFormatError(lineno, "triangle line needs 3 indices")
        try:
            tris[k] = [int(x) for x in body]
        except ValueError:
            raise MeshFormatError(lineno, "triangle indices must be integers") from None
        if tris[k].min() < 0 or tris[k].max() >= nv:
            raise MeshFormatError(lineno, f"vertex index out of range 0..{nv - 1}")
        if len(set(tris[k].tolist())) < 3:
            raise MeshError(f"degenerate triangle {k} (line {lineno}): repeated vertex index")
    return TriMesh(verts, tris)
