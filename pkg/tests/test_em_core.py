import numpy as np
import pytest
from hypothesis import given, strategies as st

from aims.geometry import TriMesh, build_rwg, make_sphere_mesh
from aims.mom import (EFIE, ETA0, Formulation, PlaneWave, assemble_mom, excitation, mom_entries,
                      triangle_blocks)
from aims.quadrature import map_points, rule
from aims.rcs import (RcsPattern, bistatic_rcs, default_grid, mie_nmax, mie_rcs,
                      mie_total_cross_section, quadrature_weights, rcs_error)
from oracles import rwg_efie_entry

K = 2 * np.pi
CFIE = Formulation("CFIE", 0.6)


@pytest.fixture(scope="module")
def strip():
    """Three triangles in a row: two bases sharing the middle triangle."""
    v = np.array([[0, 0, 0], [0.1, 0, 0], [0, 0.1, 0], [0.1, 0.1, 0], [0.2, 0.1, 0]], float)
    mesh = TriMesh(v, [[0, 1, 2], [1, 3, 2], [1, 4, 3]])
    basis = build_rwg(mesh)
    assert basis.n == 2
    return basis


@pytest.fixture(scope="module")
def z_plate(small_plate):
    return assemble_mom(small_plate, K)


def test_two_basis_entries_match_oracle(strip):
    Z = assemble_mom(strip, K)
    O = np.array([[rwg_efie_entry(strip.mesh, strip, m, n, K, n_outer=12, n_inner=24)
                   for n in range(2)] for m in range(2)])
    assert np.max(np.abs(Z - O) / np.abs(O)) < 1e-6


def test_efie_reciprocity(z_plate):
    assert np.max(np.abs(z_plate - z_plate.T)) / np.max(np.abs(z_plate)) < 1e-6


def test_selected_entries_agree_with_dense(small_plate, z_plate, rng):
    rows = rng.integers(0, small_plate.n, 50)
    cols = rng.integers(0, small_plate.n, 50)
    assert np.allclose(mom_entries(small_plate, rows, cols, K), z_plate[rows, cols], rtol=1e-13, atol=0)


def test_cfie_at_alpha_one_is_efie(small_sphere):
    a = assemble_mom(small_sphere, K, Formulation("CFIE", 1.0))
    assert np.array_equal(a, assemble_mom(small_sphere, K, EFIE))


def test_cfie_needs_closed_surface(small_plate):
    with pytest.raises(ValueError, match="closed"):
        assemble_mom(small_plate, K, CFIE)


@pytest.mark.parametrize("kind, alpha", [("EFIE", 0.5), ("CFIE", 1.5), ("MFIE", None)])
def test_formulation_validation(kind, alpha):
    with pytest.raises(ValueError):
        Formulation(kind, alpha)


@pytest.mark.parametrize("form", [EFIE, CFIE])
def test_extraction_matches_plain_quadrature(small_sphere, form):
    """Away from the singularity, subtracting and re-adding the series terms is exact."""
    mesh = small_sphere.mesh
    c = mesh.centroids
    p = np.zeros(mesh.n_triangles, dtype=int)
    dist = np.linalg.norm(c - c[0], axis=1)
    q = np.flatnonzero((dist > 2.5 * mesh.mean_edge) & (dist < 4 * mesh.mean_edge))[:5]
    p = p[:len(q)]
    with_extraction = triangle_blocks(mesh, p, q, K, form, order="g12", singular_factor=10.0)
    plain = triangle_blocks(mesh, p, q, K, form, order="g12", singular_factor=0.0)
    assert np.allclose(with_extraction, plain, rtol=1e-9, atol=1e-9 * np.abs(plain).max())


def test_self_terms_converge_with_the_touch_rule(small_plate):
    mesh = small_plate.mesh
    p = np.array([0, 0, 0])
    q = np.array([0, 1, 2])
    coarse = triangle_blocks(mesh, p, q, K, touch_order="e16")
    fine = triangle_blocks(mesh, p, q, K, touch_order="e32")
    assert np.max(np.abs(coarse - fine)) / np.max(np.abs(fine)) < 1e-6


def test_plane_wave_validation():
    with pytest.raises(ValueError):
        PlaneWave((0, 0, 1), (0, 0, 1))
    with pytest.raises(ValueError):
        PlaneWave((0, 0, 2), (1, 0, 0))
    with pytest.raises(ValueError):
        PlaneWave(k=-1.0)


@given(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_excitation_is_linear_in_amplitude(small_plate, amp):
    base = excitation(small_plate, PlaneWave(amplitude=1.0))
    assert np.allclose(excitation(small_plate, PlaneWave(amplitude=amp)), amp * base, atol=1e-12)


@pytest.mark.parametrize("form_name", ["EFIE", "CFIE"])
def test_flipped_polarization_negates_excitation(small_plate, small_sphere, form_name):
    basis, form = (small_plate, EFIE) if form_name == "EFIE" else (small_sphere, CFIE)
    a = excitation(basis, PlaneWave((0, 0, -1), (1, 0, 0)), form)
    b = excitation(basis, PlaneWave((0, 0, -1), (-1, 0, 0)), form)
    assert np.array_equal(a, -b)


def test_small_basis_at_origin_sees_origin_phase():
    h = 1e-3
    v = np.array([[-h, -h, 0], [h, -h, 0], [h, h, 0], [-h, h, 0]])
    basis = build_rwg(TriMesh(v, [[0, 1, 2], [0, 2, 3]]))
    amp = np.exp(0.7j)
    pol = np.array([0.8, 0, 0.6])
    V = excitation(basis, PlaneWave((0.6, 0, -0.8), tuple(pol), K, amp))
    # integral of f over its support: (l/2) (c+ - v+) + (l/2) (v- - c-)
    mesh = basis.mesh
    c = mesh.centroids
    moment = 0.5 * basis.length[0] * (c[basis.plus[0]] - basis.free_plus[0]
                                      + basis.free_minus[0] - c[basis.minus[0]])
    static = amp * (pol @ moment)
    assert abs(np.angle(V[0] / static)) < (K * h) ** 2
    assert abs(V[0] / static - 1) < (K * h) ** 2


def test_excitation_matches_direct_quadrature(small_plate):
    """Tested field from a fine independent rule on each half-basis."""
    pw = PlaneWave((0.3, 0.4, -np.sqrt(0.75)), (1, 0, 0.3 / np.sqrt(0.75)) / np.linalg.norm(
        [1, 0, 0.3 / np.sqrt(0.75)]), K)
    V = excitation(small_plate, pw)
    mesh, b = small_plate.mesh, small_plate
    bary, w = rule("g16")
    ref = np.zeros(b.n, complex)
    for tri, loc, sgn in ((b.plus, b.plus_local, 1), (b.minus, b.minus_local, -1)):
        T = mesh.vertices[mesh.triangles[tri]]
        r = map_points(T, bary)
        free = T[np.arange(b.n), loc]
        f = sgn * (b.length / (2 * mesh.areas[tri]))[:, None, None] * (r - free[:, None])
        ref += np.einsum("q,bqc,bqc->b", w, f, pw.e_field(r)) * mesh.areas[tri]
    assert np.max(np.abs(V - ref)) / np.max(np.abs(ref)) < 1e-6


def test_rcs_of_zero_current_is_zero(small_plate):
    pat = bistatic_rcs(np.zeros(small_plate.n), small_plate, K, *default_grid(19, 36))
    assert np.all(pat.vv == 0) and np.all(pat.sigma["hh"] == 0)


@given(st.complex_numbers(min_magnitude=0.1, max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_rcs_scales_with_current_squared(small_plate, c):
    x = np.random.default_rng(5).normal(size=small_plate.n) + 0j
    grid = default_grid(9, 12)
    a = bistatic_rcs(x, small_plate, K, *grid)
    b = bistatic_rcs(c * x, small_plate, K, *grid)
    assert np.allclose(b.vv, abs(c) ** 2 * a.vv, rtol=1e-10, atol=0)


def test_rcs_rejects_non_finite_current(small_plate):
    x = np.zeros(small_plate.n)
    x[0] = np.nan
    with pytest.raises(ValueError):
        bistatic_rcs(x, small_plate, K)


def _truncation_change(ka, pointwise):
    theta, phi = default_grid()
    n = mie_nmax(ka)
    a = mie_rcs(1.0, ka, theta, phi, n)
    b = mie_rcs(1.0, ka, theta, phi, n + 10)
    worst = 0.0
    for ch in ("vv", "hh"):
        diff = np.abs(a.sigma[ch] - b.sigma[ch])
        if pointwise:
            big = b.sigma[ch] > 0
            worst = max(worst, np.max(diff[big] / b.sigma[ch][big]))
        else:
            worst = max(worst, diff.max() / b.sigma[ch].max())
    return worst


@pytest.mark.parametrize("ka", [0.5, 3.0, 2 * np.pi, 4 * np.pi])
def test_mie_truncation_converged(ka):
    assert _truncation_change(ka, pointwise=False) < 1e-10


@pytest.mark.xfail(strict=True, reason="deep pattern nulls move by ~2e-10 of their own value "
                   "when ten terms are added beyond the prescribed truncation")
def test_mie_truncation_converged_at_every_null():
    assert _truncation_change(2 * np.pi, pointwise=True) < 1e-10


@pytest.mark.parametrize("ka", [0.3, 2 * np.pi, 12.0])
def test_mie_total_cross_section_two_ways(ka):
    # Gauss nodes in cos(theta) and a uniform phi grid integrate the pattern exactly
    x, w = np.polynomial.legendre.leggauss(80)
    theta = np.arccos(x[::-1])
    wt = w[::-1]
    phi = (np.arange(64) + 0.5) * 2 * np.pi / 64
    pat = mie_rcs(1.0, ka, theta, phi)
    total = (pat.vv + pat.sigma["hh"]).sum(axis=1) @ wt * (2 * np.pi / 64) / (4 * np.pi)
    assert total == pytest.approx(mie_total_cross_section(1.0, ka), rel=1e-8)


def test_mie_pattern_mirror_symmetry():
    theta, phi = default_grid()
    pat = mie_rcs(1.0, K, theta, phi)
    assert np.allclose(pat.vv, pat.vv[:, ::-1], rtol=1e-12, atol=0)
    assert np.allclose(pat.sigma["hh"], pat.sigma["hh"][:, ::-1], rtol=1e-12, atol=1e-300)


def test_mie_small_sphere_is_rayleigh():
    a, k = 1.0, 0.01
    # incidence travels toward -z, so theta = 0 is backscatter
    pat = mie_rcs(a, k, np.array([1e-9, np.pi / 2]), np.array([0.0, 0.5]))
    rayleigh = np.pi * a ** 2 * (k * a) ** 4
    assert pat.vv[0, 0] == pytest.approx(9 * rayleigh, rel=1e-3)
    assert pat.vv[1, 0] == pytest.approx(rayleigh, rel=1e-3)


def test_quadrature_weights_cover_the_sphere():
    w = quadrature_weights(*default_grid())
    assert abs(w.sum() / (4 * np.pi) - 1) < 1e-3


def _pattern(values, theta=None, phi=None):
    theta = np.linspace(0.1, 3.0, values.shape[0]) if theta is None else theta
    phi = np.linspace(0.1, 6.0, values.shape[1]) if phi is None else phi
    return RcsPattern(theta, phi, {"vv": values})


@given(st.floats(1e-3, 1e3))
def test_rcs_error_identities(scale):
    ref = _pattern(np.random.default_rng(0).uniform(0.1, 2.0, (7, 9)))
    test = _pattern(np.random.default_rng(1).uniform(0.1, 2.0, (7, 9)))
    assert rcs_error(ref, ref) == 0.0
    assert rcs_error(ref.scaled(2.0), ref) == 1.0
    assert rcs_error(test.scaled(scale), ref.scaled(scale)) == pytest.approx(rcs_error(test, ref), rel=1e-12)


def test_rcs_error_rejects_bad_input():
    ref = _pattern(np.ones((4, 5)))
    with pytest.raises(ValueError, match="grids"):
        rcs_error(_pattern(np.ones((4, 6))), ref)
    with pytest.raises(ValueError, match="zero"):
        rcs_error(ref, _pattern(np.zeros((4, 5))))
    with pytest.raises(ValueError):
        RcsPattern(np.array([0.2, 0.1]), np.array([0.0]), {})
    with pytest.raises(ValueError):
        _pattern(-np.ones((2, 2)))


def test_pattern_csv(tmp_path):
    pat = mie_rcs(1.0, K, *default_grid(3, 4))
    path = tmp_path / "rcs.csv"
    pat.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "theta_deg,phi_deg,sigma_vv_m2,sigma_hh_m2"
    assert len(lines) == 1 + 12


def test_small_sphere_solution_is_physical():
    """The solved CFIE current scatters like the Mie sphere and no more."""
    small_sphere = build_rwg(make_sphere_mesh(0.3, 0.08))
    pw = PlaneWave()
    Z = assemble_mom(small_sphere, K, CFIE)
    x = np.linalg.solve(Z, excitation(small_sphere, pw, CFIE))
    xg, wg = np.polynomial.legendre.leggauss(40)
    theta = np.arccos(xg[::-1])
    phi = (np.arange(48) + 0.5) * 2 * np.pi / 48
    pat = bistatic_rcs(x, small_sphere, K, theta, phi)
    total = (pat.vv + pat.sigma["hh"]).sum(axis=1) @ wg[::-1] * (2 * np.pi / 48) / (4 * np.pi)
    exact = mie_total_cross_section(0.3, K)
    assert abs(total / exact - 1) < 0.05
    assert total < 4 * np.pi * 0.3 ** 2
    err = rcs_error(bistatic_rcs(x, small_sphere, K, *default_grid(61, 72)),
                    mie_rcs(0.3, K, *default_grid(61, 72)))
    assert err < 0.05
