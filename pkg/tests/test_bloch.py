import numpy as np
import pytest

import tubehomog.bloch as bloch
from tubehomog.bloch import (
    BlochSample,
    bloch_scan,
    check_negativity,
    default_thetas,
    negativity_scan,
    taylor_fit,
)
from tubehomog.effective import compute_effective
from tubehomog.errors import ContinuationBroken, NonNegativeRealPart, PoorFit
from tubehomog.geometry import finger, slanted_finger, straight
from tubehomog.grid import bernoulli, rasterize


def _straight_branch(theta, V, h):
    q = V * h
    return (bernoulli(-q) * (np.exp(1j * theta * h) - 1) + bernoulli(q) * (np.exp(-1j * theta * h) - 1)) / h**2


class TestScan:
    @pytest.mark.parametrize("V", [0.0, 3.0])
    def test_straight_closed_form(self, V):
        h = 1 / 16
        g = rasterize(straight(), h)
        for s in bloch_scan(g, V):
            assert abs(s.lam - _straight_branch(s.theta, V, h)) < 1e-9
            assert s.converged

    def test_order_follows_input(self):
        g = rasterize(finger(), 1 / 8)
        th = [0.05, 0.0, -0.1, 0.1, -0.05]
        assert [s.theta for s in bloch_scan(g, 2.0, th)] == th

    def test_kernel_at_zero(self):
        g = rasterize(slanted_finger(), 1 / 16)
        s0 = [s for s in bloch_scan(g, 2.0) if s.theta == 0][0]
        assert abs(s0.lam) <= 1e-9

    def test_conjugate_symmetry(self):
        g = rasterize(finger(), 1 / 16)
        lam = {s.theta: s.lam for s in bloch_scan(g, 2.0)}
        for t in lam:
            assert abs(lam[t] - np.conj(lam[-t])) <= 1e-9

    def test_requires_zero(self):
        g = rasterize(finger(), 1 / 8)
        with pytest.raises(ValueError):
            bloch_scan(g, 1.0, [0.1, -0.1])

    def test_rejects_large_theta(self):
        g = rasterize(finger(), 1 / 8)
        with pytest.raises(ValueError):
            bloch_scan(g, 1.0, [0.0, 4.0])

    def test_continuation_break_detected(self, monkeypatch):
        real = bloch.eigen_shift_invert

        def wrong(op, shift, *a, **k):
            lam, v, rep = real(op, shift, *a, **k)
            return (lam - 50.0 if op.theta != 0 else lam), v, rep

        monkeypatch.setattr(bloch, "eigen_shift_invert", wrong)
        g = rasterize(finger(), 1 / 8)
        with pytest.raises(ContinuationBroken):
            bloch_scan(g, 2.0)


class TestFit:
    @pytest.mark.parametrize("spec,V", [(finger(), 2.0), (slanted_finger(), 2.0), (finger(), 0.0)])
    def test_matches_pde(self, spec, V):
        g = rasterize(spec, 1 / 32)
        fit = taylor_fit(bloch_scan(g, V))
        pde, _, _ = compute_effective(g, V)
        assert fit.V_eff == pytest.approx(pde.V_eff, abs=5e-3 * max(1, abs(pde.V_eff)))
        assert fit.sigma2 == pytest.approx(pde.sigma2, abs=5e-3 * max(1, pde.sigma2))

    def test_synthetic_polynomial(self):
        th = np.array(default_thetas())
        lam = 1j * (1.7 * th + 0.3 * th**3) - 0.6 * th**2 + 0.2 * th**4
        fit = taylor_fit([BlochSample(t, l, 0.0, True) for t, l in zip(th, lam)])
        assert fit.V_eff == pytest.approx(1.7, abs=1e-12)
        assert fit.sigma2 == pytest.approx(0.6, abs=1e-12)
        assert fit.theta_max == pytest.approx(0.1)

    def test_nonsymmetric_list(self):
        s = [BlochSample(t, -t**2 + 0j, 0.0, True) for t in (0.0, 0.1, 0.2, 0.3, 0.4)]
        with pytest.raises(PoorFit):
            taylor_fit(s)

    def test_bad_polynomial(self):
        th = np.array(default_thetas())
        lam = np.where(th > 0, -1.0, 0.0) + 0j
        with pytest.raises(PoorFit):
            taylor_fit([BlochSample(t, l, 0.0, True) for t, l in zip(th, lam)])

    def test_default_thetas(self):
        th = default_thetas(0.2)
        assert len(th) == 9 and th[0] == pytest.approx(-0.2) and 0.0 in th


class TestNegativity:
    @pytest.mark.parametrize("spec", [straight(), finger(), slanted_finger()])
    @pytest.mark.parametrize("V", [0.0, 2.0])
    def test_negative_off_zero(self, spec, V):
        g = rasterize(spec, 1 / 16)
        margin, samples = negativity_scan(g, V, [-0.2, -0.1, -0.05, 0.05, 0.1, 0.2])
        assert margin > 0
        assert all(s.lam.real < 0 for s in samples)

    def test_zero_excluded(self):
        g = rasterize(finger(), 1 / 8)
        with pytest.raises(ValueError):
            negativity_scan(g, 0.0, [0.0, 0.1])

    def test_violation_reported(self):
        with pytest.raises(NonNegativeRealPart) as exc:
            check_negativity([BlochSample(0.1, 1e-3 + 0j, 0.0, True)])
        assert exc.value.theta == 0.1

    def test_zero_sample_ignored(self):
        assert check_negativity([BlochSample(0.0, 0j, 0.0, True), BlochSample(0.1, -0.5 + 0j, 0.0, True)]) == 0.5
