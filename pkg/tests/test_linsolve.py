import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp

from tubehomog.errors import IncompatibleRHS, NonPositiveNullvector, NotConverged, ShiftSingular
from tubehomog.geometry import finger, slanted_finger, straight
from tubehomog.grid import SparseOperator, assemble_fokker_planck, assemble_generator, rasterize
from tubehomog.linsolve import eigen_shift_invert, nullvector, solve_singular_compatible

METHODS = ["direct", "dense", "gmres"]


class TestNullvector:
    @pytest.mark.parametrize("V", [0.0, 3.0, -10.0])
    def test_straight_constant(self, V):
        g = rasterize(straight(), 1 / 8)
        pi, rep = nullvector(assemble_fokker_planck(g, V))
        assert np.allclose(pi, 1.0, atol=1e-12)
        assert rep.converged and rep.residual_norm <= 1e-10

    @pytest.mark.parametrize("spec", [finger(), slanted_finger()])
    def test_zero_drift_constant(self, spec):
        g = rasterize(spec, 1 / 16)
        pi, _ = nullvector(assemble_fokker_planck(g, 0.0))
        assert np.allclose(pi, 1 / g.volume, rtol=1e-12)

    @pytest.mark.parametrize("method", METHODS)
    def test_matches_dense_kernel(self, method):
        g = rasterize(finger(), 1 / 8)
        A = assemble_fokker_planck(g, 2.0)
        pi, _ = nullvector(A, method=method)
        ref = la.null_space(A.matrix.toarray())[:, 0]
        ref = ref / (ref.sum() * g.cell_volume)
        assert np.allclose(pi, ref, rtol=1e-9)

    def test_finger_positive_normalized_nonconstant(self):
        g = rasterize(finger(), 1 / 32)
        pi, _ = nullvector(assemble_fokker_planck(g, 2.0))
        assert np.all(pi > 0)
        assert abs(pi.sum() * g.cell_volume - 1) < 1e-12
        assert np.ptp(pi) > 0.1 * pi.mean()

    def test_large_peclet_positive(self):
        # cell Peclet number V h = 10; the density spans eight decades
        g = rasterize(slanted_finger(), 1 / 8)
        pi, _ = nullvector(assemble_fokker_planck(g, 80.0))
        assert np.all(pi > 0)

    def test_non_positive_kernel_rejected(self):
        # kernel spanned by (2, -1)
        A = SparseOperator(sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]])), 0.0, 0.0, "fokker_planck", 1.0)
        with pytest.raises(NonPositiveNullvector):
            nullvector(A)


class TestSingularSolve:
    def _setup(self, V=2.0, h=1 / 16):
        g = rasterize(finger(), h)
        pi, _ = nullvector(assemble_fokker_planck(g, V))
        return g, assemble_generator(g, V), pi

    def test_zero_rhs(self):
        g, M, pi = self._setup()
        psi, _ = solve_singular_compatible(M, np.zeros(g.n), pi)
        assert np.max(np.abs(psi)) < 1e-14

    @pytest.mark.parametrize("method", METHODS)
    def test_recovers_constructed_solution(self, method):
        g, M, pi = self._setup(h=1 / 8)
        rng = np.random.default_rng(3)
        x = rng.standard_normal(g.n)
        x -= x.mean()
        psi, rep = solve_singular_compatible(M, M @ x, pi, method=method)
        assert np.allclose(psi, x, atol=1e-9)
        assert abs(psi.sum()) < 1e-10

    def test_incompatible(self):
        g, M, pi = self._setup()
        with pytest.raises(IncompatibleRHS):
            solve_singular_compatible(M, pi, pi)

    def test_dense_limit(self):
        g, M, pi = self._setup(h=1 / 128)
        with pytest.raises(ValueError):
            solve_singular_compatible(M, np.zeros(g.n), pi, method="dense")

    def test_unknown_method(self):
        g, M, pi = self._setup(h=1 / 8)
        with pytest.raises(ValueError):
            solve_singular_compatible(M, np.zeros(g.n), pi, method="cg")


class TestShiftInvert:
    def test_kernel_at_zero(self):
        g = rasterize(finger(), 1 / 16)
        lam, v, rep = eigen_shift_invert(assemble_generator(g, 2.0, 0.0), 0.1)
        assert abs(lam) < 1e-9
        assert np.allclose(v, v[0], atol=1e-9)
        assert rep.converged

    def test_real_operator_real_eigenvalue(self):
        g = rasterize(slanted_finger(), 1 / 8)
        lam, _, _ = eigen_shift_invert(assemble_generator(g, 2.0, 0.0), -30.0)
        assert abs(lam.imag) < 1e-9

    @pytest.mark.parametrize("theta", [0.05, 0.3, -1.0])
    def test_matches_dense_eigensolver(self, theta):
        g = rasterize(finger(), 1 / 8)
        M = assemble_generator(g, 2.0, theta)
        ev = la.eigvals(M.matrix.toarray())
        shift = -0.5 + 2.0j * theta
        target = ev[np.argmin(np.abs(ev - shift))]
        lam, v, rep = eigen_shift_invert(M, shift)
        assert abs(lam - target) < 1e-8
        assert np.linalg.norm(M @ v - lam * v) <= 1e-9

    def test_straight_zero_drift_branch(self):
        h, theta = 1 / 16, 0.2
        g = rasterize(straight(), h)
        lam, _, _ = eigen_shift_invert(assemble_generator(g, 0.0, theta), -theta**2 + 1e-3)
        assert lam.real == pytest.approx(2 * (np.cos(theta * h) - 1) / h**2, abs=1e-9)
        assert lam.real == pytest.approx(-theta**2, rel=1e-3)

    def test_exactly_singular_shift(self):
        A = SparseOperator(sp.csr_matrix(np.diag([0.0, 1.0])), 0.0, 0.0, "generator", 1.0)
        with pytest.raises(ShiftSingular):
            eigen_shift_invert(A, 0.0)

    def test_not_converged(self):
        # two eigenvalues equidistant from the shift never separate
        A = SparseOperator(sp.csr_matrix(np.diag([-1.0, 1.0])), 0.0, 0.0, "generator", 1.0)
        with pytest.raises(NotConverged):
            eigen_shift_invert(A, 0.0, maxiter=5)
