"""Sparse solves used by the cell problems.

All singular systems are handled by bordering: the operator is augmented by
one row and one column that fix the gauge (or the normalization) and make
the augmented matrix nonsingular.  The default backend is a sparse LU
factorization; ``method="gmres"`` uses ILU-preconditioned GMRES and
``method="dense"`` a dense LAPACK solve (small systems and test oracles).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import IncompatibleRHS, NonPositiveNullvector, NotConverged, ShiftSingular
from .grid import SparseOperator

DENSE_LIMIT = 2000


@dataclass(frozen=True)
class SolveReport:
    residual_norm: float
    iterations: int
    converged: bool


def _bordered(A, col, row):
    n = A.shape[0]
    return sp.bmat([[A, sp.csc_matrix(col.reshape(n, 1))], [sp.csr_matrix(row.reshape(1, n)), None]], format="csc")


def _solve(K, rhs, method, tol):
    """Solve ``K x = rhs``; returns ``(x, iterations)``."""
    if method == "direct":
        try:
            return spla.splu(K.tocsc()).solve(rhs), 1
        except RuntimeError as exc:
            raise NotConverged(f"sparse LU failed: {exc}") from exc
    if method == "dense":
        if K.shape[0] > DENSE_LIMIT + 1:
            raise ValueError(f"dense solve limited to n <= {DENSE_LIMIT}")
        return la.solve(K.toarray(), rhs), 1
    if method == "gmres":
        ilu = spla.spilu(K.tocsc(), drop_tol=1e-6, fill_factor=20)
        P = spla.LinearOperator(K.shape, ilu.solve, dtype=K.dtype)
        count = [0]

        def cb(_):
            count[0] += 1

        x, info = spla.gmres(K, rhs, M=P, rtol=tol * 1e-2, atol=0.0, restart=200, maxiter=50, callback=cb,
                             callback_type="pr_norm")
        if info != 0:
            raise NotConverged(f"GMRES stopped with info={info}")
        return x, count[0]
    raise ValueError(f"unknown method {method!r}")


def nullvector(op: SparseOperator, tol: float = 1e-10, method: str = "direct"):
    """Positive kernel vector of the Fokker-Planck operator at theta = 0.

    Normalized so that ``sum(v) * weight = 1``.  Raises
    ``NonPositiveNullvector`` if some entry is not strictly positive.
    """
    A = op.matrix
    n = A.shape[0]
    w = np.full(n, op.weight)
    K = _bordered(A, np.ones(n), w)
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    x, its = _solve(K, rhs, method, tol)
    v = np.real_if_close(x[:n])
    v = v / (v.sum() * op.weight)
    res = np.linalg.norm(A @ v) / np.linalg.norm(v)
    report = SolveReport(float(res), its, bool(res <= tol))
    if not report.converged:
        raise NotConverged(f"nullvector residual {res:.2e} > {tol:.2e}")
    if not np.all(v > 0):
        raise NonPositiveNullvector(f"{np.sum(v <= 0)} non-positive entries in the invariant density")
    return v, report


def solve_singular_compatible(op: SparseOperator, rhs, pi, tol: float = 1e-10, method: str = "direct"):
    """Solve ``M psi = rhs`` on the range of a singular generator.

    ``pi`` spans the kernel of the adjoint, so the system is solvable iff
    ``<rhs, pi> = 0``.  The returned solution has zero mean,
    ``sum(psi) * weight = 0``.
    """
    A = op.matrix
    n = A.shape[0]
    rhs = np.asarray(rhs)
    compat = abs(np.vdot(pi, rhs)) * op.weight
    if compat > 10 * tol:
        raise IncompatibleRHS(f"<rhs, pi> = {compat:.3e} exceeds {10 * tol:.1e}")
    K = _bordered(A, np.asarray(pi, dtype=A.dtype), np.full(n, op.weight))
    x, its = _solve(K, np.concatenate([rhs, [0.0]]).astype(K.dtype), method, tol)
    psi = x[:n]
    if not np.iscomplexobj(rhs) and not np.iscomplexobj(A.data):
        psi = psi.real
    res = np.sqrt(np.sum(np.abs(A @ psi - rhs) ** 2) * op.weight)
    report = SolveReport(float(res), its, bool(res <= tol))
    if not report.converged:
        raise NotConverged(f"singular solve residual {res:.2e} > {tol:.2e}")
    return psi, report


def _fix_phase(v):
    k = int(np.argmax(np.abs(v)))
    return v * (abs(v[k]) / v[k])


def eigen_shift_invert(op: SparseOperator, shift: complex, tol: float = 1e-9, maxiter: int = 50, v0=None):
    """Eigenpair of ``op`` nearest to ``shift`` by shift-and-invert iteration.

    The eigenvector has unit 2-norm and its largest-magnitude entry is real
    and positive.  Convergence is declared when
    ``||M v - lambda v|| <= tol``.
    """
    A = op.matrix.astype(complex)
    n = A.shape[0]
    K = (A - shift * sp.identity(n, dtype=complex, format="csc")).tocsc()
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:
        raise ShiftSingular(f"factorization at shift {shift} failed: {exc}") from exc
    v = np.ones(n, dtype=complex) if v0 is None else np.asarray(v0, dtype=complex).copy()
    v /= np.linalg.norm(v)
    lam = np.vdot(v, A @ v)
    res = np.inf
    for it in range(1, maxiter + 1):
        w = lu.solve(v)
        if not np.all(np.isfinite(w)):
            raise ShiftSingular(f"iteration broke down at shift {shift}")
        v = w / np.linalg.norm(w)
        Av = A @ v
        lam = np.vdot(v, Av)
        res = np.linalg.norm(Av - lam * v)
        if res <= tol:
            return complex(lam), _fix_phase(v), SolveReport(float(res), it, True)
    raise NotConverged(f"shift-invert residual {res:.2e} after {maxiter} iterations")
