"""Acceptance gate: one recorded PASS/FAIL line per criterion.

Each test records its outcome (with the measured numbers) through the
``acceptance`` fixture before asserting, so the summary lists every
criterion even when one fails.
"""

import math

import numpy as np
import pytest

from tubehomog.bloch import bloch_scan, check_negativity, taylor_fit
from tubehomog.cli import main, ratchet_report
from tubehomog.deadzone import extrapolate_limit, sigma_scan, standard_family
from tubehomog.effective import compute_effective, diffusivity_defect_v0, small_v_slope
from tubehomog.geometry import finger, slanted_finger, straight
from tubehomog.grid import rasterize
from tubehomog.homog import run_homogenization
from tubehomog.montecarlo import McConfig, estimate_effective

FINGER_V = 2.0


def test_c01_straight_tube_exactness(acceptance, stopwatch):
    worst_v, worst_s, worst_pi = 0.0, 0.0, 0.0
    for V in (0.0, 3.0):
        p, f, _ = compute_effective(straight(), V, 1 / 32)
        worst_v = max(worst_v, *(abs(v - V) for v in (p.V_eff_cut, p.V_eff_vol, p.V_eff_lat)))
        worst_s = max(worst_s, abs(p.sigma2 - 1.0))
        worst_pi = max(worst_pi, float(np.ptp(f.pi)))
    elapsed = stopwatch()
    ok = worst_v <= 1e-10 and worst_s <= 1e-8 and worst_pi <= 1e-12 and elapsed < 5
    acceptance("C1 straight-tube exactness", ok,
               f"|dV|={worst_v:.1e} |dsigma2|={worst_s:.1e} ptp(pi)={worst_pi:.1e} t={elapsed:.1f}s")
    assert ok


def test_c02_three_drift_routes(acceptance, stopwatch):
    p, _, _ = compute_effective(finger(), FINGER_V, 1 / 32)
    elapsed = stopwatch()
    ok = p.route_spread <= 1e-8 and elapsed < 30
    acceptance("C2 three-route agreement", ok,
               f"V_eff={p.V_eff:.8f} spread={p.route_spread:.1e} t={elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_c03_bloch_matches_pde(acceptance, stopwatch):
    g = rasterize(finger(), 1 / 64)
    fit = taylor_fit(bloch_scan(g, FINGER_V))
    pde, _, _ = compute_effective(g, FINGER_V)
    dv = abs(fit.V_eff - pde.V_eff) / max(1, abs(pde.V_eff))
    ds = abs(fit.sigma2 - pde.sigma2) / max(1, pde.sigma2)
    elapsed = stopwatch()
    ok = dv <= 5e-3 and ds <= 5e-3 and elapsed < 180
    acceptance("C3 Bloch-PDE agreement", ok,
               f"V_eff {fit.V_eff:.6f}/{pde.V_eff:.6f} sigma2 {fit.sigma2:.6f}/{pde.sigma2:.6f} "
               f"rel {dv:.1e},{ds:.1e} t={elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_c04_monte_carlo_matches_pde(acceptance, stopwatch):
    cfg = McConfig(n_paths=20000, T=50.0, dt=1e-4, seed=0)
    est, _ = estimate_effective(finger(), FINGER_V, cfg)
    fine, _, _ = compute_effective(finger(), FINGER_V, 1 / 256)
    coarse, _, _ = compute_effective(finger(), FINGER_V, 1 / 128)
    elapsed = stopwatch()
    # the PDE error is estimated by the last grid refinement
    se_v = math.hypot(est.V_eff_se, fine.V_eff - coarse.V_eff)
    se_s = math.hypot(est.sigma2_se, fine.sigma2 - coarse.sigma2)
    zv = (est.V_eff - fine.V_eff) / se_v
    zs = (est.sigma2 - fine.sigma2) / se_s
    ok = abs(zv) <= 3 and abs(zs) <= 3 and elapsed < 300
    acceptance("C4 Monte Carlo-PDE agreement", ok,
               f"V_eff {est.V_eff:.5f}+-{est.V_eff_se:.5f} vs {fine.V_eff:.5f} (z={zv:+.2f}); "
               f"sigma2 {est.sigma2:.5f}+-{est.sigma2_se:.5f} vs {fine.sigma2:.5f} (z={zs:+.2f}) t={elapsed:.0f}s")
    assert ok


def test_c05_bloch_branch_properties(acceptance):
    thetas = [0.0, -0.2, -0.1, -0.05, 0.05, 0.1, 0.2]
    lam0, conj, margin = 0.0, 0.0, math.inf
    for spec in (straight(), finger(), slanted_finger()):
        g = rasterize(spec, 1 / 32)
        for V in (0.0, FINGER_V):
            samples = bloch_scan(g, V, thetas)
            lam = {s.theta: s.lam for s in samples}
            lam0 = max(lam0, abs(lam[0.0]))
            conj = max(conj, max(abs(lam[t] - np.conj(lam[-t])) for t in lam))
            margin = min(margin, check_negativity(samples))
    ok = lam0 <= 1e-9 and conj <= 1e-9 and margin > 0
    acceptance("C5 Bloch branch properties", ok,
               f"max|lambda0(0)|={lam0:.1e} conj={conj:.1e} min(-Re lambda)={margin:.2e}")
    assert ok


def test_c06_zero_drift_theorems(acceptance):
    geoms = [straight(), straight(3, 0.5), finger(), slanted_finger(), standard_family(3)(1 / 6).spec]
    hs = [1 / 32, 1 / 16, 1 / 32, 1 / 32, 1 / 12]
    worst_v, worst_id, max_sigma = 0.0, 0.0, 0.0
    for spec, h in zip(geoms, hs):
        p, f, g = compute_effective(spec, 0.0, h)
        worst_v = max(worst_v, abs(p.V_eff_cut), abs(p.V_eff_vol), abs(p.V_eff_lat))
        worst_id = max(worst_id, abs(p.sigma2 - diffusivity_defect_v0(g, f.psi)))
        if not spec.label.startswith("straight"):
            max_sigma = max(max_sigma, p.sigma2)
    ok = worst_v <= 1e-10 and max_sigma < 1 and worst_id <= 1e-8
    acceptance("C6 zero-drift theorems", ok,
               f"max|V_eff|={worst_v:.1e} max sigma2(non-cylinder)={max_sigma:.4f} identity={worst_id:.1e}")
    assert ok


def test_c07_small_drift_slope(acceptance):
    slope, s0, rel, veff = small_v_slope(finger(), 1 / 64, [-0.1, -0.05, 0.05, 0.1])
    mono = bool(np.all(np.diff(veff) > 0))
    ok = rel <= 0.02 and mono
    acceptance("C7 small-drift slope", ok, f"slope={slope:.6f} sigma0^2={s0:.6f} rel={rel:.1e} monotone={mono}")
    assert ok


@pytest.mark.slow
def test_c08_homogenization_rate(acceptance, stopwatch):
    runs = [run_homogenization(finger(), eps, 1 / 16) for eps in (1 / 8, 1 / 16)]
    sup = [r.comparison.sup_error for r in runs]
    ratio = sup[1] / sup[0]
    elapsed = stopwatch()
    ok = 1 / 3 <= ratio <= 1 / 1.4 and elapsed < 600
    acceptance("C8 homogenization rate", ok,
               f"supError {sup[0]:.3e} -> {sup[1]:.3e} ratio={ratio:.3f} t={elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_c09_dead_zone_law(acceptance, stopwatch):
    fam = standard_family(3)
    rows = sigma_scan(fam, [1 / 6, 1 / 12, 1 / 24], fam.base)
    fit = extrapolate_limit(rows)
    gaps = [abs(r.gap) for r in rows]
    mono = bool(np.all(np.diff(gaps) < 0))
    elapsed = stopwatch()
    ok = mono and fit.rel_limit_error <= 0.02 and 0.7 <= fit.rate <= 1.5 and elapsed < 600
    acceptance("C9 dead-zone law", ok,
               f"|gap|={[f'{g:.4g}' for g in gaps]} limit={fit.limit:.6f} leading={fit.leading_term:.6f} "
               f"rel={fit.rel_limit_error:.1e} p={fit.rate:.3f} t={elapsed:.0f}s")
    assert ok


def test_c10_ratchet(acceptance):
    rep = ratchet_report(slanted_finger(), FINGER_V, 1 / 32)
    sym = ratchet_report(finger(), FINGER_V, 1 / 32)
    ok = rep["resolved"] and rep["mirrorDefect"] <= 1e-8 and sym["mirrorDefect"] <= 1e-8
    acceptance("C10 ratchet asymmetry", ok,
               f"A={rep['asymmetry']:+.5f} errorBar={rep['errorBar']:.1e} sign={rep['sign']:+d} "
               f"mirrorDefect={rep['mirrorDefect']:.1e} (symmetric finger A={sym['asymmetry']:.1e})")
    assert ok


def test_c11_determinism(acceptance, tmp_path, capsys):
    mc = ["mc", "--geom", "preset:finger", "--v", "2", "--paths", "500", "--t", "2", "--dt", "1e-3", "--seed", "4"]
    pde = ["cell", "--geom", "preset:finger", "--v", "2", "--h", "1/32"]
    same = []
    for args, files in ((mc, ("mc.json", "mc_batches.csv")), (pde, ("cell.json",))):
        outs = []
        for k in range(2):
            d = tmp_path / f"{args[0]}{k}"
            assert main(args + ["--out", str(d)]) == 0
            outs.append([(d / f).read_bytes() for f in files])
        same.append(outs[0] == outs[1])
    capsys.readouterr()
    ok = all(same)
    acceptance("C11 determinism", ok, f"mc identical={same[0]} pde identical={same[1]}")
    assert ok
