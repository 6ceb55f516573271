"""Effective drift and diffusivity from the cell problems.

The invariant density ``pi`` is the positive kernel vector of the discrete
Fokker-Planck operator.  The harmonic coordinate is ``v1 = s + psi1`` with a
periodic ``psi1`` solving ``M psi1 = V_eff - M s``.  The drift is evaluated
three ways (flux through one cross-section, volume average of the flux,
lateral-boundary trace), and the diffusivity is the pi-weighted Dirichlet
energy of ``v1``.

The discrete versions of the three drift formulas are exact summation-by-
parts rearrangements of each other, so they agree to solver precision on
every grid, not only in the limit h -> 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidForNonzeroV, PoorFit
from .geometry import CellDomain, TubeSpec
from .grid import (
    Grid,
    _face_coefficients,
    assemble_fokker_planck,
    bernoulli,
    generator_from_adjoint,
    rasterize,
    unwrapped_s_gradient,
)
from .linsolve import SolveReport, nullvector, solve_singular_compatible

LINEAR_TOL = 1e-10


@dataclass(frozen=True)
class CorrectorFields:
    pi: np.ndarray
    psi: np.ndarray
    s: np.ndarray
    report: SolveReport | None = None

    @property
    def v1(self):
        """Harmonic coordinate at cell centres (s taken in the unit cell)."""
        return self.s + self.psi


@dataclass
class EffectiveParams:
    V: float
    V_eff_cut: float
    V_eff_vol: float
    V_eff_lat: float
    sigma2: float
    h: float
    label: str = ""
    residuals: dict = field(default_factory=dict)

    @property
    def V_eff(self):
        return self.V_eff_lat

    @property
    def route_spread(self):
        v = (self.V_eff_cut, self.V_eff_vol, self.V_eff_lat)
        return max(abs(a - b) for a in v for b in v)

    def to_record(self):
        return {
            "V": self.V,
            "V_eff": {"cut": self.V_eff_cut, "vol": self.V_eff_vol, "lat": self.V_eff_lat},
            "sigma2": self.sigma2,
            "routeSpread": self.route_spread,
            "h": self.h,
            "geometryLabel": self.label,
        }


def invariant_density(grid: Grid, V: float, tol: float = LINEAR_TOL):
    pi, _ = nullvector(assemble_fokker_planck(grid, V, 0.0), tol)
    return pi


def cut_fluxes(grid: Grid, pi, V: float):
    """Total drift-diffusion flux of ``pi`` through every s-layer of faces.

    Entry ``i`` is the flux through the faces between layers ``i`` and
    ``i + 1`` (the last entry is the seam).  For the exact kernel vector all
    entries coincide.
    """
    ca, cb = _face_coefficients(grid, V)
    sf = grid.face_axis == 0
    flux = (ca[sf] * pi[grid.face_a[sf]] - cb[sf] * pi[grid.face_b[sf]]) / grid.h * grid.face_area
    return np.bincount(grid.face_layer[sf], weights=flux, minlength=grid.n_layers)


def _lateral_trace(grid: Grid, pi, V: float):
    """Exponentially fitted boundary integral of ``n_1 pi`` over S^l.

    On a lateral s-face with outward normal ``+1`` the trace weight is
    ``B(-Vh)``, with normal ``-1`` it is ``-B(Vh)``.  Both tend to ``n_1`` as
    ``h -> 0``; the fitted weights make this form coincide with the discrete
    flux through a cross-section.
    """
    lat = grid.lat_axis == 0
    sign = grid.lat_sign[lat]
    q = V * grid.h
    weight = np.where(sign > 0, bernoulli(-q), -bernoulli(q))
    return float(np.sum(weight * pi[grid.lat_cell[lat]]) * grid.face_area)


def effective_drift(grid: Grid, pi, V: float, layer: int | None = None):
    """Return ``(V_eff_cut, V_eff_vol, V_eff_lat)``.

    ``cut`` is the flux through one cross-section (the seam by default),
    ``vol`` is ``V`` minus the discrete integral of ``d pi / ds`` and
    ``lat`` is ``V`` minus the lateral-boundary trace of ``n_1 pi``.
    """
    fluxes = cut_fluxes(grid, pi, V)
    cut = float(fluxes[grid.n_layers - 1 if layer is None else layer])

    # discrete integral of d pi/ds: fitted differences across s-faces plus
    # the drift mass missing from the half cells next to lateral s-faces
    ca, cb = _face_coefficients(grid, V)
    sf = grid.face_axis == 0
    pa, pb = pi[grid.face_a[sf]], pi[grid.face_b[sf]]
    fitted = 0.5 * (ca[sf] + cb[sf])
    dpi = np.sum(fitted * (pb - pa)) * grid.face_area
    face_mass = np.sum(0.5 * (pa + pb)) * grid.cell_volume
    vol = float(V - (dpi + V * (1.0 - face_mass)))

    lat = float(V - _lateral_trace(grid, pi, V))
    return cut, vol, lat


def corrector(grid: Grid, V: float, pi, V_eff: float | None = None, tol: float = LINEAR_TOL) -> CorrectorFields:
    """Periodic part ``psi1`` of the harmonic coordinate ``v1 = s + psi1``.

    Solves ``M psi1 = V_eff - M s`` with zero mean.  By default ``V_eff`` is
    the lateral-boundary value computed from ``pi``, which makes the system
    compatible to rounding.
    """
    if V_eff is None:
        V_eff = effective_drift(grid, pi, V)[2]
    M = generator_from_adjoint(assemble_fokker_planck(grid, V, 0.0))
    rhs = V_eff - unwrapped_s_gradient(grid, V)
    psi, report = solve_singular_compatible(M, rhs, pi, tol)
    s = grid.centers[:, 0] - np.floor(grid.centers[:, 0])
    return CorrectorFields(pi, psi, s, report)


def _v1_jumps(grid: Grid, psi):
    """Face increments of v1 = s + psi (the seam jump of s is unwrapped)."""
    dpsi = psi[grid.face_b] - psi[grid.face_a]
    return dpsi + np.where(grid.face_axis == 0, grid.h, 0.0)


def effective_diffusivity(grid: Grid, fields: CorrectorFields, face_mean: str = "arithmetic"):
    """pi-weighted Dirichlet energy of the harmonic coordinate.

    Quadrature over interior and seam faces; lateral faces add nothing.
    """
    dv = _v1_jumps(grid, fields.psi)
    pa, pb = fields.pi[grid.face_a], fields.pi[grid.face_b]
    if face_mean == "arithmetic":
        pf = 0.5 * (pa + pb)
    elif face_mean == "harmonic":
        pf = 2.0 * pa * pb / (pa + pb)
    else:
        raise ValueError(face_mean)
    return float(np.sum((dv / grid.h) ** 2 * pf) * grid.cell_volume)


def dirichlet_energy_psi(grid: Grid, psi):
    """Energy of ``psi1`` including the boundary half cells next to lateral
    s-faces, where its gradient is fixed by ``d psi1/dn = -n_1``."""
    dpsi = psi[grid.face_b] - psi[grid.face_a]
    interior = np.sum((dpsi / grid.h) ** 2) * grid.cell_volume
    n_lat = np.count_nonzero(grid.lat_axis == 0)
    return float(interior + 0.5 * n_lat * grid.cell_volume)


def diffusivity_defect_v0(grid: Grid, psi, V: float = 0.0):
    """``1 - |grad psi1|^2 / |cell|``; valid only without drift."""
    if V != 0:
        raise InvalidForNonzeroV("the energy-defect formula holds only for V = 0")
    return 1.0 - dirichlet_energy_psi(grid, psi) / grid.volume


def compute_effective(geometry: TubeSpec | CellDomain | Grid, V: float | None = None, h: float | None = None,
                      tol: float = LINEAR_TOL) -> tuple[EffectiveParams, CorrectorFields, Grid]:
    """Full cell pipeline: density, drift (three ways), corrector, diffusivity."""
    if isinstance(geometry, Grid):
        grid = geometry
        label = grid.label
    else:
        spec = geometry if isinstance(geometry, TubeSpec) else geometry.spec
        if V is None:
            V = spec.drift
        grid = rasterize(geometry, h)
        label = spec.label
    if V is None:
        raise ValueError("drift V is required")
    pi, pi_report = nullvector(assemble_fokker_planck(grid, V, 0.0), tol)
    cut, vol, lat = effective_drift(grid, pi, V)
    fields = corrector(grid, V, pi, lat, tol)
    sigma2 = effective_diffusivity(grid, fields)
    params = EffectiveParams(float(V), cut, vol, lat, sigma2, grid.h, label,
                             {"pi": pi_report, "psi": fields.report})
    return params, fields, grid


def small_v_slope(geometry, h: float, Vlist, tol: float = LINEAR_TOL):
    """Slope of ``V_eff(V)`` at ``V = 0`` versus the zero-drift diffusivity.

    Fits ``V_eff = a V + c V^3`` over a symmetric list of drifts.  Returns
    ``(slope, sigma0sq, rel_deviation, V_eff_values)``.
    """
    Vs = np.asarray(sorted(Vlist), dtype=float)
    if not np.allclose(np.sort(-Vs), Vs) or np.any(np.abs(Vs) > 0.2) or np.any(Vs == 0):
        raise ValueError("Vlist must be symmetric about 0, nonzero, with |V| <= 0.2")
    grid = rasterize(geometry, h)
    veff = np.array([compute_effective(grid, V, tol=tol)[0].V_eff for V in Vs])
    A = np.column_stack([Vs, Vs**3])
    coef, *_ = np.linalg.lstsq(A, veff, rcond=None)
    if np.max(np.abs(A @ coef - veff)) > 1e-3 * np.max(np.abs(veff)):
        raise PoorFit("odd cubic does not describe V_eff(V) near 0")
    sigma0 = compute_effective(grid, 0.0, tol=tol)[0].sigma2
    slope = float(coef[0])
    return slope, sigma0, abs(slope - sigma0) / sigma0, veff
