"""Right-preconditioned restarted GMRES with a diagonal preconditioner."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class SolverBreakdown(RuntimeError):
    """GMRES could not make progress even after a restart."""


@dataclass
class SolveReport:
    """Outcome of an iterative solve.

    ``history`` holds the relative residual after every inner iteration
    (entry 0 is the initial residual); ``residual`` is recomputed from the
    returned solution as ||b - A x|| / ||b||.
    """

    x: np.ndarray
    iterations: int
    history: list = field(default_factory=list)
    matvecs: int = 0
    residual: float = float("nan")
    converged: bool = False
    restarts: int = 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["iter", "rel_residual"])
            for i, r in enumerate(self.history):
                out.writerow([i, f"{r:.12e}"])


class DiagonalPreconditioner:
    """Applies x -> x / diag(A)."""

    def __init__(self, diagonal):
        d = np.asarray(diagonal)
        if np.any(d == 0):
            raise ZeroDivisionError("operator has a zero diagonal entry")
        self.diagonal = d
        self._inv = 1.0 / d

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self._inv * x


def _as_matvec(operator) -> Callable[[np.ndarray], np.ndarray]:
    if callable(operator) and not hasattr(operator, "matvec") and not isinstance(operator, np.ndarray):
        return operator
    if hasattr(operator, "matvec"):
        return operator.matvec
    A = operator
    return lambda v: A @ v


def operator_diagonal(operator) -> np.ndarray:
    if hasattr(operator, "diag"):
        return np.asarray(operator.diag())
    if hasattr(operator, "diagonal"):
        return np.asarray(operator.diagonal())
    raise TypeError("operator does not expose its diagonal")


def diag_preconditioner(operator) -> DiagonalPreconditioner:
    """Jacobi preconditioner from the operator's diagonal."""
    return DiagonalPreconditioner(operator_diagonal(operator))


def _givens(a, b):
    """Rotation (c, s) with [c s; -conj(s) c] [a; b] = [r; 0], c real."""
    if b == 0:
        return 1.0, 0.0
    if a == 0:
        return 0.0, np.conj(b) / abs(b)
    t = np.hypot(abs(a), abs(b))
    c = abs(a) / t
    s = (a / abs(a)) * np.conj(b) / t
    return c, s


def solve(operator, rhs, precond=None, tol: float = 1e-4, max_iter: int = 2000,
          restart: int = 50, x0=None) -> SolveReport:
    """Solve A x = rhs with GMRES(restart), right preconditioned.

    Stops when the relative residual ||rhs - A x|| / ||rhs|| drops below
    ``tol``; the residual is monitored through the Arnoldi recurrence and
    confirmed by an explicit product at the end of each cycle. On
    ``max_iter`` exhaustion the report is returned with ``converged=False``.
    A breakdown that stalls progress triggers one fresh restart, then
    :class:`SolverBreakdown`.
    """
    matvec = _as_matvec(operator)
    b = np.asarray(rhs, dtype=complex)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        raise ValueError("right-hand side must be nonzero")
    if precond is None:
        precond = lambda v: v  # noqa: E731
    n = len(b)
    x = np.zeros(n, dtype=complex) if x0 is None else np.asarray(x0, dtype=complex).copy()
    report = SolveReport(x=x, iterations=0)

    r = b - matvec(x) if x0 is not None else b.copy()
    report.matvecs += int(x0 is not None)
    beta = np.linalg.norm(r)
    report.history.append(beta / bnorm)
    stalls = 0
    while beta / bnorm > tol and report.iterations < max_iter:
        m = min(restart, max_iter - report.iterations)
        V = np.zeros((m + 1, n), dtype=complex)
        H = np.zeros((m + 1, m), dtype=complex)
        cs = np.zeros(m)
        sn = np.zeros(m, dtype=complex)
        g = np.zeros(m + 1, dtype=complex)
        g[0] = beta
        V[0] = r / beta
        j_done = 0
        happy = False
        for j in range(m):
            w = matvec(precond(V[j]))
            report.matvecs += 1
            for i in range(j + 1):  # modified Gram-Schmidt
                H[i, j] = np.vdot(V[i], w)
                w = w - H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            happy = H[j + 1, j] <= 1e-14 * beta
            if not happy:
                V[j + 1] = w / H[j + 1, j]
            for i in range(j):
                hi, hi1 = H[i, j], H[i + 1, j]
                H[i, j] = cs[i] * hi + sn[i] * hi1
                H[i + 1, j] = -np.conj(sn[i]) * hi + cs[i] * hi1
            cs[j], sn[j] = _givens(H[j, j], H[j + 1, j])
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -np.conj(sn[j]) * g[j]
            g[j] = cs[j] * g[j]
            j_done = j + 1
            report.iterations += 1
            report.history.append(abs(g[j + 1]) / bnorm)
            if happy or abs(g[j + 1]) / bnorm <= tol:
                break
        if j_done and H[j_done - 1, j_done - 1] == 0:
            stalls += 1
            if stalls > 1:
                raise SolverBreakdown("singular Hessenberg matrix after restart")
            r = b - matvec(x)
            report.matvecs += 1
            beta = np.linalg.norm(r)
            report.restarts += 1
            continue
        y = np.linalg.solve(np.triu(H[:j_done, :j_done]), g[:j_done])
        x = x + precond(y @ V[:j_done])
        r = b - matvec(x)
        report.matvecs += 1
        new_beta = np.linalg.norm(r)
        if new_beta >= beta * (1 - 1e-12):
            stalls += 1
            if stalls > 1:
                raise SolverBreakdown(
                    f"GMRES stagnated at relative residual {new_beta / bnorm:.3e}")
        else:
            stalls = 0
        beta = new_beta
        report.restarts += 1
        report.history[-1] = beta / bnorm
    report.x = x
    report.restarts = max(0, report.restarts - 1)
    report.residual = float(np.linalg.norm(b - matvec(x)) / bnorm)
    report.matvecs += 1
    report.converged = report.residual <= tol
    return report
