"""Bistatic RCS from RWG currents, Mie reference for a PEC sphere, and the RMS error metric."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import spherical_jn, spherical_yn

from .geometry import RwgSet
from .mom import ETA0
from .quadrature import map_points, rule


@dataclass(frozen=True, eq=False)
class RcsPattern:
    """sigma[channel] has shape (len(theta), len(phi)), in m^2.

    Channel ``"vv"`` is the theta-polarized scattered component, ``"hh"`` the
    phi-polarized one, both for the same incident wave.
    """

    theta: np.ndarray
    phi: np.ndarray
    sigma: dict = field(default_factory=dict)

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float)
        ph = np.asarray(self.phi, dtype=float)
        if np.any(np.diff(th) <= 0) or np.any(np.diff(ph) <= 0):
            raise ValueError("angle grids must be strictly increasing")
        for name, s in self.sigma.items():
            if np.shape(s) != (len(th), len(ph)):
                raise ValueError(f"channel {name} has wrong shape")
            if np.any(np.asarray(s) < 0):
                raise ValueError("sigma must be non-negative")
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "phi", ph)

    @property
    def vv(self) -> np.ndarray:
        return self.sigma["vv"]

    def scaled(self, factor: float) -> "RcsPattern":
        return RcsPattern(self.theta, self.phi, {c: factor * s for c, s in self.sigma.items()})

    def to_csv(self, path) -> None:
        chans = [c for c in ("vv", "hh") if c in self.sigma]
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["theta_deg", "phi_deg"] + [f"sigma_{c}_m2" for c in chans])
            for i, th in enumerate(self.theta):
                for j, ph in enumerate(self.phi):
                    out.writerow([f"{np.degrees(th):.6f}", f"{np.degrees(ph):.6f}"]
                                 + [f"{self.sigma[c][i, j]:.10e}" for c in chans])


def default_grid(n_theta: int = 181, n_phi: int = 360) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint grids on (0, pi) and (0, 2 pi)."""
    theta = (np.arange(n_theta) + 0.5) * np.pi / n_theta
    phi = (np.arange(n_phi) + 0.5) * 2 * np.pi / n_phi
    return theta, phi


def quadrature_weights(theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """sin(theta) dtheta dphi on a uniform midpoint grid."""
    dth = np.pi / len(theta) if len(theta) > 1 else np.pi
    dph = 2 * np.pi / len(phi) if len(phi) > 1 else 2 * np.pi
    return np.outer(np.sin(theta) * dth, np.full(len(phi), dph))


def _spherical_frame(theta, phi):
    st, ct = np.sin(theta)[:, None], np.cos(theta)[:, None]
    sp_, cp = np.sin(phi)[None], np.cos(phi)[None]
    r_hat = np.stack(np.broadcast_arrays(st * cp, st * sp_, ct * np.ones_like(cp)), axis=-1)
    th_hat = np.stack(np.broadcast_arrays(ct * cp, ct * sp_, -st * np.ones_like(cp)), axis=-1)
    ph_hat = np.stack(np.broadcast_arrays(-sp_ * np.ones_like(st), cp * np.ones_like(st),
                                          np.zeros_like(st * cp)), axis=-1)
    return r_hat, th_hat, ph_hat


def current_samples(currents, basis: RwgSet, order=7):
    """Surface current at quadrature points: (points (Q,3), weights (Q,), J (Q,3))."""
    mesh = basis.mesh
    bary, w = rule(order)
    T = mesh.vertices[mesh.triangles]
    r = map_points(T, bary)
    slots = basis.triangle_slots
    coef = np.where(slots >= 0, basis.triangle_coeffs, 0.0) * np.where(
        slots >= 0, np.asarray(currents)[np.maximum(slots, 0)], 0.0)
    h = (r[:, :, None, :] - T[:, None, :, :]) / (2 * mesh.areas[:, None, None, None])
    J = np.einsum("fi,fqic->fqc", coef, h)
    wq = w[None] * mesh.areas[:, None]
    return r.reshape(-1, 3), wq.ravel(), J.reshape(-1, 3)


def bistatic_rcs(currents, basis: RwgSet, k: float, theta=None, phi=None,
                 e0: float = 1.0, eta=ETA0, chunk=512) -> RcsPattern:
    """sigma = 4 pi |F|^2 / |E0|^2 for the far field F of the RWG current."""
    currents = np.asarray(currents)
    if not np.all(np.isfinite(currents)):
        raise ValueError("currents must be finite")
    if theta is None or phi is None:
        theta, phi = default_grid()
    theta, phi = np.asarray(theta, dtype=float), np.asarray(phi, dtype=float)
    r_hat, th_hat, ph_hat = _spherical_frame(theta, phi)
    pts, wq, J = current_samples(currents, basis)
    Jw = J * wq[:, None]
    dirs = r_hat.reshape(-1, 3)
    N = np.empty((len(dirs), 3), dtype=complex)
    for s in range(0, len(dirs), chunk):
        phase = np.exp(1j * k * (dirs[s:s + chunk] @ pts.T))
        N[s:s + chunk] = phase @ Jw
    N = N.reshape(len(theta), len(phi), 3)
    pref = -1j * k * eta / (4 * np.pi)
    f_th = pref * np.einsum("tpc,tpc->tp", N, th_hat)
    f_ph = pref * np.einsum("tpc,tpc->tp", N, ph_hat)
    scale = 4 * np.pi / abs(e0) ** 2
    return RcsPattern(theta, phi, {"vv": scale * np.abs(f_th) ** 2, "hh": scale * np.abs(f_ph) ** 2})


def mie_nmax(ka: float) -> int:
    return int(np.ceil(ka + 4 * ka ** (1 / 3) + 2))


def mie_coefficients(ka: float, n_max: int):
    """PEC sphere coefficients a_n = [x j_n]'/[x h_n]', b_n = j_n/h_n for n = 1..n_max."""
    n = np.arange(1, n_max + 1)
    j = spherical_jn(n, ka)
    y = spherical_yn(n, ka)
    jp = spherical_jn(n, ka, derivative=True)
    yp = spherical_yn(n, ka, derivative=True)
    h = j + 1j * y
    hp = jp + 1j * yp
    a = (j + ka * jp) / (h + ka * hp)
    b = j / h
    return n, a, b


def mie_amplitudes(ka: float, scatter_angle: np.ndarray, n_max: int | None = None):
    """Scattering amplitudes S1, S2 at the given scattering angles."""
    if n_max is None:
        n_max = mie_nmax(ka)
    n, a, b = mie_coefficients(ka, n_max)
    mu = np.cos(np.asarray(scatter_angle, dtype=float))
    pi_n = np.zeros((n_max + 1,) + mu.shape)
    tau_n = np.zeros_like(pi_n)
    pi_n[1] = 1.0
    tau_n[1] = mu
    for m in range(2, n_max + 1):
        pi_n[m] = ((2 * m - 1) * mu * pi_n[m - 1] - m * pi_n[m - 2]) / (m - 1)
        tau_n[m] = m * mu * pi_n[m] - (m + 1) * pi_n[m - 1]
    c = (2 * n + 1) / (n * (n + 1))
    S1 = np.tensordot(c * a, pi_n[1:], axes=1) + np.tensordot(c * b, tau_n[1:], axes=1)
    S2 = np.tensordot(c * a, tau_n[1:], axes=1) + np.tensordot(c * b, pi_n[1:], axes=1)
    return S1, S2


def mie_rcs(radius: float, k: float, theta=None, phi=None, n_max: int | None = None) -> RcsPattern:
    """Bistatic RCS of a PEC sphere for an x-polarized wave travelling toward -z."""
    if k * radius <= 0:
        raise ValueError("k * radius must be positive")
    if theta is None or phi is None:
        theta, phi = default_grid()
    theta, phi = np.asarray(theta, dtype=float), np.asarray(phi, dtype=float)
    # incidence along -z: the scattering angle is pi - theta
    S1, S2 = mie_amplitudes(k * radius, np.pi - theta, n_max)
    vv = 4 * np.pi / k ** 2 * np.outer(np.abs(S2) ** 2, np.cos(phi) ** 2)
    hh = 4 * np.pi / k ** 2 * np.outer(np.abs(S1) ** 2, np.sin(phi) ** 2)
    return RcsPattern(theta, phi, {"vv": vv, "hh": hh})


def mie_total_cross_section(radius: float, k: float, n_max: int | None = None) -> float:
    ka = k * radius
    n, a, b = mie_coefficients(ka, n_max or mie_nmax(ka))
    return float(2 * np.pi / k ** 2 * np.sum((2 * n + 1) * (np.abs(a) ** 2 + np.abs(b) ** 2)))


def rcs_error(test: RcsPattern, ref: RcsPattern, channel: str = "vv") -> float:
    """Weighted relative RMS difference of sigma over the sphere of directions."""
    if test.theta.shape != ref.theta.shape or test.phi.shape != ref.phi.shape \
            or not np.allclose(test.theta, ref.theta) or not np.allclose(test.phi, ref.phi):
        raise ValueError("patterns are sampled on different angle grids")
    w = quadrature_weights(ref.theta, ref.phi)
    den = np.sum(w * np.abs(ref.sigma[channel]) ** 2)
    if den == 0:
        raise ValueError("reference pattern is identically zero")
    num = np.sum(w * np.abs(test.sigma[channel] - ref.sigma[channel]) ** 2)
    return float(np.sqrt(num / den))
