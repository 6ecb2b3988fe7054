"""Galerkin RWG method of moments: EFIE/CFIE matrix entries and plane-wave excitation.

Time convention exp(+jwt); Green's function g(R) = exp(-jkR) / (4 pi R).

Entries are assembled from triangle-pair blocks over half-bases
h_i(r) = (r - v_i) / (2A); a basis is s*l*h_i on each of its two triangles.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.constants import epsilon_0, mu_0

from .geometry import RwgSet
from .quadrature import map_points, rule, static_moments

ETA0 = float(np.sqrt(mu_0 / epsilon_0))
FOUR_PI = 4.0 * np.pi


@dataclass(frozen=True)
class PlaneWave:
    direction: tuple = (0.0, 0.0, -1.0)
    polarization: tuple = (1.0, 0.0, 0.0)
    k: float = 2 * np.pi
    amplitude: complex = 1.0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        p = np.asarray(self.polarization, dtype=float)
        if self.k <= 0:
            raise ValueError("wavenumber must be positive")
        if abs(np.linalg.norm(d) - 1) > 1e-12 or abs(np.linalg.norm(p) - 1) > 1e-12:
            raise ValueError("direction and polarization must be unit vectors")
        if abs(d @ p) >= 1e-12:
            raise ValueError("polarization must be perpendicular to propagation")

    @property
    def wavelength(self) -> float:
        return 2 * np.pi / self.k

    def e_field(self, r: np.ndarray) -> np.ndarray:
        d = np.asarray(self.direction, dtype=float)
        p = np.asarray(self.polarization, dtype=float)
        phase = np.exp(-1j * self.k * (r @ d))
        return self.amplitude * phase[..., None] * p


@dataclass(frozen=True)
class Formulation:
    kind: str = "EFIE"
    alpha: float = field(default=None)

    def __post_init__(self):
        kind = self.kind.upper()
        if kind not in ("EFIE", "CFIE"):
            raise ValueError(f"unknown formulation {self.kind!r}")
        alpha = self.alpha
        if alpha is None:
            alpha = 1.0 if kind == "EFIE" else 0.6
        if kind == "EFIE" and alpha != 1.0:
            raise ValueError("EFIE has no combination parameter")
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "alpha", float(alpha))

    @property
    def uses_mfie(self) -> bool:
        return self.alpha < 1.0

    def check(self, basis: RwgSet) -> None:
        if self.kind == "CFIE" and not basis.mesh.is_closed:
            raise ValueError("CFIE requires a closed surface")


EFIE = Formulation("EFIE")


# test-triangle rule for the closed-form part of pairs that share a vertex;
# that part has logarithmic derivatives on the shared boundary
TOUCH_RULE = "e16"


def _singular_mask(mesh, p, q, factor):
    c = mesh.centroids
    reach = np.linalg.norm(mesh.vertices[mesh.triangles] - c[:, None], axis=2).max(axis=1)
    dist = np.linalg.norm(c[p] - c[q], axis=1)
    return dist < factor * (reach[p] + reach[q])


def touching(mesh, p, q) -> np.ndarray:
    """True where triangles p[b] and q[b] share at least one vertex."""
    tp = mesh.triangles[p]
    tq = mesh.triangles[q]
    return (tp[:, :, None] == tq[:, None, :]).any(axis=(1, 2))


def _half_bases(T, A, r):
    """h_i(r) = (r - v_i) / 2A for points r (B, x, 3) -> (B, x, 3 bases, 3)."""
    return (r[:, :, None, :] - T[:, None, :, :]) / (2 * A[:, None, None, None])


def _pair_geometry(mesh, p, q, order, singular_factor, static_order=None):
    """Quadrature data for triangle pairs; the closed-form part of near pairs
    is sampled on the test triangle with ``static_order`` (default ``order``)."""
    bary, w = rule(order)
    g = {}
    g["Tp"] = Tp = mesh.vertices[mesh.triangles[p]]
    g["Tq"] = Tq = mesh.vertices[mesh.triangles[q]]
    g["Ap"] = Ap = mesh.areas[p]
    g["Aq"] = Aq = mesh.areas[q]
    g["rp"] = rp = map_points(Tp, bary)
    rq = map_points(Tq, bary)
    g["wp"] = wp = w[None] * Ap[:, None]
    wq = w[None] * Aq[:, None]
    g["P"] = _half_bases(Tp, Ap, rp)
    g["Q"] = _half_bases(Tq, Aq, rq)
    g["D"] = D = rp[:, :, None, :] - rq[:, None, :, :]
    R = np.linalg.norm(D, axis=-1)
    g["zero"] = zero = R < 1e-14 * np.sqrt(Ap)[:, None, None]
    g["R"] = np.where(zero, 1.0, R)
    g["W"] = wp[:, :, None] * wq[:, None, :]
    g["sing"] = sing = _singular_mask(mesh, p, q, singular_factor)
    s = np.flatnonzero(sing)
    if static_order is None or static_order == order:
        rs, ws, Ps = rp[s], wp[s], g["P"][s]
    else:
        bs, wts = rule(static_order)
        rs = map_points(Tp[s], bs)
        ws = wts[None] * Ap[s][:, None]
        Ps = _half_bases(Tp[s], Ap[s], rs)
    g["s"], g["rs"], g["ws"], g["Ps"] = s, rs, ws, Ps
    if len(s):
        g["moments"] = static_moments(rs, Tq[s][:, None])
    return g


def _series_coefficients(k):
    """exp(-jkR)/R = 1/R + c1 R + c3 R**3 + (smooth even powers) + O(R**5)."""
    return -0.5 * k * k, k ** 4 / 24


def _efie_parts(g, k):
    """int h_i . h_j g and int g / (Ap Aq).

    On near pairs the odd-power terms 1/R, R and R**3 of the kernel's
    expansion are integrated over the source triangle in closed form; what
    is left is smooth enough for the product rule.
    """
    R, zero, sing = g["R"], g["zero"], g["sing"]
    c1, c3 = _series_coefficients(k)
    gr = np.exp(-1j * k * R) / (FOUR_PI * R)
    gr = np.where(sing[:, None, None], gr - (1 / R + c1 * R + c3 * R ** 3) / FOUR_PI, gr)
    gr = np.where(zero, -1j * k / FOUR_PI, gr)
    Ap, Aq = g["Ap"], g["Aq"]
    e_sca = np.einsum("bxy,bxy->b", g["W"], gr) / (Ap * Aq)
    e_vec = np.einsum("bxy,bxic,byjc->bij", g["W"] * gr, g["P"], g["Q"], optimize=True)
    s = g["s"]
    if len(s):
        k0, k1, _, s1, j1, s3, j3 = g["moments"]
        a0 = k0 + c1 * s1 + c3 * s3
        a1 = k1 + c1 * j1 + c3 * j3
        ws = g["ws"] / FOUR_PI
        e_sca[s] += np.einsum("bx,bx->b", ws, a0) / (Ap[s] * Aq[s])
        # int (r' - v_j) K dS' = int (r' - r) K dS' + (r - v_j) int K dS'
        rv = g["rs"][:, :, None, :] - g["Tq"][s][:, None, :, :]
        inner = (a1[:, :, None, :] + rv * a0[:, :, None, None]) / (2 * Aq[s])[:, None, None, None]
        e_vec[s] += np.einsum("bx,bxic,bxjc->bij", ws, g["Ps"], inner)
    return e_vec, e_sca


def _mfie_part(g, k, normals):
    """int h_i . n x (grad g x h_j), principal value."""
    R, zero, sing, D = g["R"], g["zero"], g["sing"], g["D"]
    c1, c3 = _series_coefficients(k)
    # grad g = g1 (r - r'); the extracted terms contribute (dK/dR) / R
    g1 = -(1 + 1j * k * R) * np.exp(-1j * k * R) / (FOUR_PI * R ** 3)
    g1 = np.where(sing[:, None, None], g1 - (-1 / R ** 3 + c1 / R + 3 * c3 * R) / FOUR_PI, g1)
    g1 = np.where(zero, 0.0, g1)
    P, Q = g["P"], g["Q"]
    WG = g["W"] * g1
    PD = np.einsum("bxic,bxyc->bxyi", P, D)
    nQ = np.einsum("bc,byjc->byj", normals, Q)
    nD = np.einsum("bc,bxyc->bxy", normals, D)
    m_blk = (np.einsum("bxy,bxyi,byj->bij", WG, PD, nQ, optimize=True)
             - np.einsum("bxy,bxic,byjc->bij", WG * nD, P, Q, optimize=True))
    s = g["s"]
    if len(s):
        _, k1, kg, _, j1, _, _ = g["moments"]
        # int grad_r K dS', using grad R = -(r' - r)/R and grad R^3 = -3 (r' - r) R
        kg = kg - c1 * k1 - 3 * c3 * j1
        ws = g["ws"] / FOUR_PI
        nrm = normals[s]
        Qa = _half_bases(g["Tq"][s], g["Aq"][s], g["rs"])
        PK = np.einsum("bxic,bxc->bxi", g["Ps"], kg)
        nQa = np.einsum("bc,bxjc->bxj", nrm, Qa)
        nK = np.einsum("bc,bxc->bx", nrm, kg)
        m_blk[s] += (np.einsum("bx,bxi,bxj->bij", ws, PK, nQa)
                     - np.einsum("bx,bxic,bxjc->bij", ws * nK, g["Ps"], Qa))
    return m_blk


def _blocks(mesh, p, q, k, form, eta, order, singular_factor, static_order):
    swap = p > q
    pe, qe = np.where(swap, q, p), np.where(swap, p, q)
    g = _pair_geometry(mesh, pe, qe, order, singular_factor, static_order)
    e_vec, e_sca = _efie_parts(g, k)
    e_vec[swap] = e_vec[swap].transpose(0, 2, 1)
    same = p == q
    e_vec[same] = 0.5 * (e_vec[same] + e_vec[same].transpose(0, 2, 1))
    out = form.alpha * (1j * k * eta * e_vec - (1j * eta / k) * e_sca[:, None, None])
    if form.uses_mfie:
        if swap.any():
            g = _pair_geometry(mesh, p, q, order, singular_factor, static_order)
        m_blk = _mfie_part(g, k, mesh.normals[p])
        gram = np.einsum("bx,bxic,bxjc->bij", g["wp"], g["P"], g["P"])
        gram[~same] = 0.0
        out = out + (1 - form.alpha) * eta * (0.5 * gram - m_blk)
    return out


def triangle_blocks(mesh, p, q, k, form: Formulation = EFIE, eta=ETA0, order=7,
                    singular_factor=1.5, touch_order=TOUCH_RULE) -> np.ndarray:
    """Interaction of the three half-bases of triangle p[b] (test) with those of q[b].

    Returns (B, 3, 3) complex; Z_mn is the sum over the two triangles of each
    basis of s_m l_m s_n l_n times these blocks.

    Parameters
    ----------
    order : triangle rule for both triangles of a pair (see ``quadrature.rule``)
    singular_factor : pairs closer than this times their summed circumradii
        get the singular part of the kernel integrated in closed form
    touch_order : test-triangle rule for that closed-form part when the two
        triangles share a vertex

    EFIE blocks are always evaluated with the lower triangle index as the
    test triangle, so the assembled EFIE matrix is exactly symmetric.
    """
    p = np.asarray(p, dtype=np.int64)
    q = np.asarray(q, dtype=np.int64)
    out = np.empty((len(p), 3, 3), dtype=complex)
    touch = touching(mesh, p, q)
    for sel, static_order in ((~touch, order), (touch, touch_order)):
        if sel.any():
            out[sel] = _blocks(mesh, p[sel], q[sel], k, form, eta, order, singular_factor,
                               static_order)
    return out


def _slot_matrix(basis: RwgSet) -> sp.csr_matrix:
    """Sparse (N, 3F) map from triangle half-bases to basis functions."""
    slots = basis.triangle_slots.ravel()
    coeff = basis.triangle_coeffs.ravel()
    cols = np.flatnonzero(slots >= 0)
    return sp.csr_matrix((coeff[cols], (slots[cols], cols)),
                         shape=(basis.n, slots.size))


def assemble_mom(basis: RwgSet, k: float, form: Formulation = EFIE, eta=ETA0,
                 order=7, chunk_pairs=12000) -> np.ndarray:
    """Dense N x N Galerkin impedance matrix."""
    form.check(basis)
    mesh = basis.mesh
    nt = mesh.n_triangles
    C = _slot_matrix(basis).tocsc()
    Z = np.zeros((basis.n, basis.n), dtype=complex)
    rows_per = max(1, chunk_pairs // nt)
    allq = np.arange(nt)
    for start in range(0, nt, rows_per):
        tp = np.arange(start, min(nt, start + rows_per))
        p = np.repeat(tp, nt)
        q = np.tile(allq, len(tp))
        blk = triangle_blocks(mesh, p, q, k, form, eta, order)
        # (len(tp), nt, 3, 3) -> (3*len(tp), 3*nt)
        blk = blk.reshape(len(tp), nt, 3, 3).transpose(0, 2, 1, 3).reshape(3 * len(tp), 3 * nt)
        cols = slice(3 * tp[0], 3 * (tp[-1] + 1))
        right = (C @ blk.T).T  # (3*len(tp), N)
        Z += C[:, cols] @ right
    return Z


def mom_entries(basis: RwgSet, rows, cols, k: float, form: Formulation = EFIE, eta=ETA0,
                order=7, chunk_pairs=20000) -> np.ndarray:
    """Selected impedance entries Z[rows[i], cols[i]]."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    mesh = basis.mesh
    nt = mesh.n_triangles
    tri = np.stack([basis.plus, basis.minus], axis=1)
    loc = np.stack([basis.plus_local, basis.minus_local], axis=1)
    sgn = np.array([1.0, -1.0])

    # the four triangle pairs of every basis pair
    tp = np.repeat(tri[rows], 2, axis=1)          # (B, 4): ++, +-, -+, --
    tq = np.tile(tri[cols], (1, 2))
    keys = (tp * nt + tq).ravel()
    uniq, inv = np.unique(keys, return_inverse=True)
    blocks = np.empty((len(uniq), 3, 3), dtype=complex)
    for s in range(0, len(uniq), chunk_pairs):
        u = uniq[s:s + chunk_pairs]
        blocks[s:s + chunk_pairs] = triangle_blocks(mesh, u // nt, u % nt, k, form, eta, order)

    li = np.repeat(loc[rows], 2, axis=1).ravel()
    lj = np.tile(loc[cols], (1, 2)).ravel()
    sign = (np.repeat(np.broadcast_to(sgn, (len(rows), 2)), 2, axis=1)
            * np.tile(sgn, (len(rows), 2))).ravel()
    vals = blocks[inv, li, lj] * sign
    return vals.reshape(-1, 4).sum(axis=1) * basis.length[rows] * basis.length[cols]


def excitation(basis: RwgSet, pw: PlaneWave, form: Formulation = EFIE, eta=ETA0,
               order=7) -> np.ndarray:
    """Tested incident field: alpha <f, E> + (1 - alpha) eta <f, n x H>."""
    form.check(basis)
    mesh = basis.mesh
    bary, w = rule(order)
    T = mesh.vertices[mesh.triangles]
    r = map_points(T, bary)                        # (F, q, 3)
    wa = w[None] * mesh.areas[:, None]
    h = (r[:, :, None, :] - T[:, None, :, :]) / (2 * mesh.areas[:, None, None, None])
    E = pw.e_field(r)
    field_t = form.alpha * E
    if form.uses_mfie:
        kd = np.asarray(pw.direction, dtype=float)
        nxkxe = np.cross(mesh.normals[:, None, :], np.cross(kd, E))
        field_t = field_t + (1 - form.alpha) * nxkxe  # eta * H = k x E
    tested = np.einsum("fq,fqic,fqc->fi", wa, h, field_t)
    return _slot_matrix(basis) @ tested.ravel()
