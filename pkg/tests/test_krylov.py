import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aims.aim import build_aim_operator, build_aux_grid
from aims.krylov import DiagonalPreconditioner, diag_preconditioner, solve
from aims.mom import EFIE, PlaneWave, assemble_mom, excitation


def _system(seed, n, shift=4.0):
    rng = np.random.default_rng(seed)
    A = shift * np.eye(n) + (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) / np.sqrt(n)
    b = rng.normal(size=n) + 1j * rng.normal(size=n)
    return A, b


def test_identity_operator():
    b = np.arange(1, 6) + 1j
    pre = diag_preconditioner(np.eye(5))
    assert np.array_equal(pre(b), b)
    rep = solve(np.eye(5), b, pre)
    assert rep.iterations == 1 and rep.converged
    assert np.allclose(rep.x, b, rtol=1e-14)


def test_diagonal_system_in_one_iteration():
    d = np.array([1.0, 2j, -3.0, 0.5 + 0.5j])
    b = np.ones(4, complex)
    rep = solve(np.diag(d), b, diag_preconditioner(np.diag(d)))
    assert rep.iterations == 1
    assert np.allclose(rep.x, b / d, rtol=1e-13)


def test_zero_diagonal_rejected():
    with pytest.raises(ZeroDivisionError):
        diag_preconditioner(np.diag([1.0, 0.0, 2.0]))


def test_zero_rhs_rejected():
    with pytest.raises(ValueError):
        solve(np.eye(3), np.zeros(3))


@settings(max_examples=15)
@given(st.integers(0, 10 ** 6), st.integers(5, 80), st.sampled_from([2, 5, 50]))
def test_reported_residual_is_recomputed(seed, n, restart):
    A, b = _system(seed, n)
    rep = solve(A, b, diag_preconditioner(A), tol=1e-6, restart=restart)
    assert rep.converged
    independent = np.linalg.norm(b - A @ rep.x) / np.linalg.norm(b)
    assert abs(rep.residual - independent) <= 1e-12
    assert rep.residual <= 1e-6
    assert np.allclose(rep.x, np.linalg.solve(A, b), rtol=1e-4, atol=1e-4 * np.abs(rep.x).max())


def test_max_iter_reports_failure():
    A, b = _system(1, 60, shift=0.0)
    rep = solve(A, b, tol=1e-12, max_iter=3, restart=50)
    assert not rep.converged
    assert rep.iterations == 3
    assert rep.residual > 1e-12


def test_callable_operator():
    A, b = _system(2, 20)
    rep = solve(lambda v: A @ v, b, DiagonalPreconditioner(np.diag(A)))
    assert rep.converged and rep.residual <= 1e-4


def test_history_csv(tmp_path):
    A, b = _system(3, 30)
    rep = solve(A, b, diag_preconditioner(A), tol=1e-8)
    path = tmp_path / "history.csv"
    rep.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["iter", "rel_residual"]
    assert len(rows) == len(rep.history) + 1
    assert float(rows[1][1]) == pytest.approx(1.0)
    assert float(rows[-1][1]) <= 1e-8


def test_solver_is_operator_agnostic(small_plate):
    pw = PlaneWave()
    dense = assemble_mom(small_plate, pw.k, EFIE)
    grid = build_aux_grid(small_plate.mesh, 1.0, 3)
    aim = build_aim_operator(small_plate, 1.0, EFIE, gamma=max(grid.dims))
    b = excitation(small_plate, pw, EFIE)
    assert np.allclose(aim.diag(), np.diag(dense), rtol=1e-10, atol=0)
    rd = solve(dense, b, diag_preconditioner(dense), tol=1e-8)
    ra = solve(aim, b, diag_preconditioner(aim), tol=1e-8)
    assert rd.converged and ra.converged
    assert np.linalg.norm(rd.x - ra.x) / np.linalg.norm(rd.x) < 1e-6
