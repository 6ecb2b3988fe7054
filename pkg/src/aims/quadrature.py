"""Triangle quadrature rules and analytic static-potential integrals over flat triangles."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

# 7-point degree-5 rule (Dunavant); barycentric points, weights sum to 1
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
TRI7_POINTS = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
TRI7_WEIGHTS = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


@lru_cache(maxsize=None)
def collapsed_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Duffy-collapsed Gauss-Legendre rule with n*n points, exact to degree 2n-2."""
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1)
    w = 0.5 * w
    u, v = np.meshgrid(x, x, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    s = u.ravel()
    t = (v * (1 - u)).ravel()
    weights = (wu * wv * (1 - u)).ravel() * 2.0
    bary = np.column_stack([1 - s - t, s, t])
    bary.setflags(write=False)
    weights.setflags(write=False)
    return bary, weights


@lru_cache(maxsize=None)
def edge_graded_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule with both coordinates clustered toward their ends.

    The cubic map 3x^2 - 2x^3 crowds points against all three edges and
    vertices, which suits integrands that are continuous but have
    logarithmic derivatives on the triangle boundary, as the potential of an
    adjacent triangle does.
    """
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1)
    phi = x * x * (3 - 2 * x)
    dphi = 3 * w * x * (1 - x)
    u, v = np.meshgrid(phi, phi, indexing="ij")
    wu, wv = np.meshgrid(dphi, dphi, indexing="ij")
    s = (u * (1 - v)).ravel()
    t = (u * v).ravel()
    weights = (wu * wv * u).ravel() * 2.0
    bary = np.column_stack([1 - s - t, s, t])
    bary.setflags(write=False)
    weights.setflags(write=False)
    return bary, weights


def rule(order: int | str = 7) -> tuple[np.ndarray, np.ndarray]:
    """Return (barycentric points, weights summing to 1).

    ``7`` is the Dunavant rule; ``"gN"`` selects the collapsed Gauss rule with
    N*N points and ``"eN"`` its edge-graded variant.
    """
    if order == 7:
        return TRI7_POINTS, TRI7_WEIGHTS
    if isinstance(order, str) and order[:1] in ("g", "e") and order[1:].isdigit():
        n = int(order[1:])
        return collapsed_rule(n) if order[0] == "g" else edge_graded_rule(n)
    raise ValueError(f"unknown triangle rule {order!r}")


def map_points(tri: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """Physical points for triangles ``tri`` (..., 3, 3) -> (..., q, 3)."""
    return np.einsum("qi,...ic->...qc", bary, tri)


def _dot(x, y):
    return x[..., 0] * y[..., 0] + x[..., 1] * y[..., 1] + x[..., 2] * y[..., 2]


def _log_ratio(Rp, lp, Rm, lm):
    """ln((R+ + l+)/(R- + l-)) evaluated without cancellation."""
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = np.log((Rp + lp) / (Rm + lm))
        mirrored = np.log((Rm - lm) / (Rp - lp))
    use_mirror = (lm < 0) & (lp < 0) | ~np.isfinite(direct)
    out = np.where(use_mirror, mirrored, direct)
    return np.where(np.isfinite(out), out, 0.0)


def static_integrals(r: np.ndarray, tri: np.ndarray):
    """Closed-form integrals of 1/R over a flat triangle: ``(k0, k1, kg)``.

    See :func:`static_moments`, which also returns the moments of R.
    """
    return static_moments(r, tri)[:3]


def static_moments(r: np.ndarray, tri: np.ndarray):
    """Closed-form integrals of 1/R, R and R**3 over a flat triangle.

    Parameters
    ----------
    r : (..., 3) observation points
    tri : (..., 3, 3) triangle vertices, broadcastable against ``r``

    Returns
    -------
    k0 : (...,)    int 1/R dS'
    k1 : (..., 3)  int (r' - r)/R dS'
    kg : (..., 3)  int grad_r (1/R) dS'
    s1 : (...,)    int R dS'
    j1 : (..., 3)  int (r' - r) R dS'
    s3 : (...,)    int R**3 dS'
    j3 : (..., 3)  int (r' - r) R**3 dS'

    Notes
    -----
    Each surface integral reduces to line integrals of R**q along the edges,
    which follow from the recursion
    int R**q dl = (l R**q + q R0**2 int R**(q-2) dl) / (q + 1).
    With d the height of r over the plane and u_i the outward edge normals,
    int R**q dS' = (sum_i t_i int_i R**q dl + q d**2 int R**(q-2) dS') / (q + 2)
    and the in-plane part of int (r' - r) R**q dS' is
    sum_i u_i int_i R**(q+2) dl / (q + 2).
    """
    r = np.asarray(r, dtype=float)
    tri = np.asarray(tri, dtype=float)
    p0 = tri[..., 0, :]
    nrm = np.cross(tri[..., 1, :] - p0, tri[..., 2, :] - p0)
    n_hat = nrm / np.linalg.norm(nrm, axis=-1, keepdims=True)
    d = _dot(r - p0, n_hat)
    # points on the plane must not pick up a spurious solid-angle jump
    scale = np.linalg.norm(tri[..., 1, :] - p0, axis=-1)
    d = np.where(np.abs(d) < 1e-10 * scale, 0.0, d)
    absd = np.abs(d)
    dsq = d * d
    to_vertex = [r - tri[..., i, :] for i in range(3)]
    dist = [np.sqrt(_dot(v, v)) for v in to_vertex]

    k0 = np.zeros(d.shape)
    beta = np.zeros(d.shape)
    s1 = np.zeros(d.shape)
    s3 = np.zeros(d.shape)
    # per-edge scalars multiplying the outward edge normals
    c_g, c_1, c_3, c_5 = [], [], [], []
    u_hats = []
    for i in range(3):
        j = (i + 1) % 3
        edge = tri[..., j, :] - tri[..., i, :]
        length = np.linalg.norm(edge, axis=-1)
        l_hat = edge / length[..., None]
        u_hat = np.cross(l_hat, n_hat)  # outward in-plane edge normal
        u_hats.append(u_hat)
        # in-plane coordinates of the projected point along and across the edge
        lm = -_dot(to_vertex[i], l_hat)
        lp = lm + length
        t0 = -_dot(to_vertex[i], u_hat)
        Rm, Rp = dist[i], dist[j]
        R0sq = t0 * t0 + dsq
        f = _log_ratio(Rp, lp, Rm, lm)
        beta += np.arctan2(t0 * lp, R0sq + absd * Rp) - np.arctan2(t0 * lm, R0sq + absd * Rm)
        Rp2, Rm2 = Rp * Rp, Rm * Rm
        a1, b1 = lp * Rp, lm * Rm
        line1 = 0.5 * (a1 - b1 + R0sq * f)  # int R dl
        a1, b1 = a1 * Rp2, b1 * Rm2
        line3 = 0.25 * (a1 - b1 + 3 * R0sq * line1)  # int R^3 dl
        a1, b1 = a1 * Rp2, b1 * Rm2
        line5 = (a1 - b1 + 5 * R0sq * line3) / 6  # int R^5 dl
        k0 += t0 * f
        s1 += t0 * line1
        s3 += t0 * line3
        c_g.append(f)
        c_1.append(line1)
        c_3.append(line3)
        c_5.append(line5)

    def along_normals(coeffs):
        return sum(c[..., None] * u for c, u in zip(coeffs, u_hats))

    k0 = k0 - absd * beta
    k1 = along_normals(c_1) - (d * k0)[..., None] * n_hat
    kg = -along_normals(c_g) - (np.sign(d) * beta)[..., None] * n_hat
    s1 = (s1 + dsq * k0) / 3
    j1 = along_normals(c_3) / 3 - (d * s1)[..., None] * n_hat
    s3 = (s3 + 3 * dsq * s1) / 5
    j3 = along_normals(c_5) / 5 - (d * s3)[..., None] * n_hat
    return k0, k1, kg, s1, j1, s3, j3
