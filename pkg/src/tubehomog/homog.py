"""Direct check of the homogenization limit on a long strip of periods.

The full problem ``du/dt = L u`` is evolved on a strip of ``n_periods`` cells
from slowly varying data ``phi(eps s, z)``.  Its cross-section average is
compared with the one-dimensional solution ``w`` of
``dw/dt = sigma^2 w'' + V_eff w'`` whose initial profile is the
``pi``-weighted cross-section integral of ``phi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import BoundaryContaminated, SolverDiverged
from .effective import compute_effective
from .geometry import TubeSpec
from .grid import Grid, assemble_fokker_planck, assemble_generator, rasterize
from .linsolve import nullvector

CONTAMINATION_TOL = 1e-6
GUARD_PERIODS = 2


def compact_envelope(y):
    """``(1 - y^2)^3`` on ``|y| < 1``, zero outside."""
    y = np.asarray(y, dtype=float)
    return np.where(np.abs(y) < 1, (1 - y**2) ** 3, 0.0)


def separable(envelope: Callable = compact_envelope, profile: Callable | None = None):
    """Initial datum ``phi(y, z) = envelope(y) * profile(z)``."""

    def phi(y, z):
        out = envelope(y)
        if profile is not None:
            out = out * profile(z)
        return out

    return phi


def default_n_periods(eps: float, sigma2: float, t_final: float, support: float = 2.0, tails: float = 5.5):
    """Strip length leaving ``tails`` standard deviations of the heat kernel
    (plus the guard periods) on each side of the initial support."""
    spread = math.sqrt(2 * sigma2 * t_final)
    return int(math.ceil(support / eps + 2 * tails * spread + 2 * GUARD_PERIODS))


@dataclass
class StripProblem:
    spec: TubeSpec
    n_periods: int
    eps: float
    t_final: float
    h: float
    dt: float | None = None
    V: float = 0.0
    phi: Callable = field(default_factory=separable)
    support: float = 2.0

    def __post_init__(self):
        if self.dt is None:
            self.dt = self.h**2
        if self.eps <= 0 or self.t_final <= 0 or self.dt <= 0:
            raise ValueError("eps, t_final and dt must be positive")

    @property
    def center(self):
        return 0.5 * self.n_periods

    def check_length(self, sigma2: float):
        need = self.support / self.eps + 6 * math.sqrt(2 * sigma2 * self.t_final)
        if self.n_periods < need:
            raise ValueError(f"strip of {self.n_periods} periods is shorter than the required {need:.1f}")


@dataclass(frozen=True)
class StripSolution:
    grid: Grid
    u: np.ndarray
    u0: np.ndarray
    pi: np.ndarray
    t: float
    mass0: float
    mass: float
    steps: int

    @property
    def mass_drift_rate(self):
        return abs(self.mass - self.mass0) / self.t


@dataclass(frozen=True)
class HomogComparison:
    sup_error: float
    l2_error: float
    sup_error_pointwise: float
    t: float
    eps: float

    def to_record(self):
        return {"eps": self.eps, "t": self.t, "supError": self.sup_error, "l2Error": self.l2_error,
                "supErrorPointwise": self.sup_error_pointwise}


def strip_density(cell_grid: Grid, pi_cell, strip: Grid):
    """Periodic extension of the cell density to the strip cells."""
    N = cell_grid.shape[0]
    vox = strip.voxels.copy()
    vox[:, 0] %= N
    idx = cell_grid.index[tuple(vox.T)]
    if np.any(idx < 0):
        raise ValueError("strip and cell grids do not match")
    return pi_cell[idx]


def layer_coordinates(grid: Grid):
    return (np.arange(grid.shape[0]) + 0.5) * grid.h


def layer_sum(grid: Grid, values):
    return np.bincount(grid.voxels[:, 0], weights=values, minlength=grid.shape[0])


def homogenized_initial(grid: Grid, pi, phi: Callable, eps: float, center: float = 0.0):
    """Initial profile of the 1-D problem and the cell-averaged datum.

    Returns ``(w0, phibar)`` on the s-layers of ``grid``: ``w0`` is the
    midpoint quadrature of ``pi * phi`` over each cross-section and
    ``phibar`` the integral of ``pi * phi(y, .)`` over a full cell at the
    layer's slow coordinate ``y``.  ``pi`` is the periodic cell density
    (unit integral over one cell) sampled on ``grid``.
    """
    s = grid.centers[:, 0]
    z = grid.centers[:, 1:]
    y = eps * (s - center)
    w0 = layer_sum(grid, pi * phi(y, z)) * grid.face_area
    # full-cell quadrature at the slow coordinate of every layer
    N = int(round(1 / grid.h))
    first = grid.voxels[:, 0] < N
    yl = eps * (layer_coordinates(grid) - center)
    zc, pc = z[first], pi[first]
    phibar = np.array([np.sum(pc * phi(np.full(len(pc), yy), zc)) for yy in yl]) * grid.cell_volume
    return w0, phibar


def effective_1d_solution(w0, ds: float, V_eff: float, sigma2: float, t: float):
    """Heat-kernel solution of ``dw/dt = sigma2 w'' + V_eff w'`` on the lattice.

    ``w(s_i) = sum_j K(s_i + V_eff t - s_j) w0_j ds`` with the Gaussian
    kernel of variance ``2 sigma2 t``.
    """
    if t <= 0 or sigma2 <= 0:
        raise ValueError("t and sigma2 must be positive")
    w0 = np.asarray(w0, dtype=float)
    n = len(w0)
    m = np.arange(-(n - 1), n) * ds + V_eff * t
    k = np.exp(-(m**2) / (4 * sigma2 * t)) / math.sqrt(4 * math.pi * sigma2 * t)
    return np.convolve(w0, k)[n - 1 : 2 * n - 1] * ds


def evolve_strip(p: StripProblem, check_every: int = 200, guard_ends: bool = True) -> StripSolution:
    """Backward-Euler evolution of the generator on the closed strip.

    With ``guard_ends`` the final state must keep its mass away from the
    closed ends (``BoundaryContaminated`` otherwise).
    """
    cell = rasterize(p.spec, p.h)
    pi_cell, _ = nullvector(assemble_fokker_planck(cell, p.V, 0.0))
    grid = rasterize(p.spec, p.h, n_periods=p.n_periods, periodic=False)
    pi = strip_density(cell, pi_cell, grid)
    M = assemble_generator(grid, p.V, 0.0).matrix
    A = (sp.identity(grid.n, format="csc") - p.dt * M).tocsc()
    lu = spla.splu(A)
    y = p.eps * (grid.centers[:, 0] - p.center)
    u = np.asarray(p.phi(y, grid.centers[:, 1:]), dtype=float) * np.ones(grid.n)
    u0 = u.copy()
    bound = np.max(np.abs(u0)) * (1 + 1e-8)
    mass0 = float(np.sum(u * pi) * grid.cell_volume)
    n_steps = int(round(p.t_final / p.dt))
    for k in range(1, n_steps + 1):
        u = lu.solve(u)
        if k % check_every == 0 or k == n_steps:
            if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > bound:
                raise SolverDiverged(f"strip solution left the bound {bound:g} at step {k}")
    if guard_ends:
        _check_ends(grid, u, pi)
    mass = float(np.sum(u * pi) * grid.cell_volume)
    return StripSolution(grid, u, u0, pi, n_steps * p.dt, mass0, mass, n_steps)


def _check_ends(grid: Grid, u, pi):
    s = grid.centers[:, 0]
    L = grid.shape[0] * grid.h
    weight = np.abs(u) * pi
    total = weight.sum()
    near = weight[(s < GUARD_PERIODS) | (s > L - GUARD_PERIODS)].sum()
    if total > 0 and near / total > CONTAMINATION_TOL:
        raise BoundaryContaminated(f"{near / total:.2e} of the mass lies within {GUARD_PERIODS} periods of an end")


def cross_section_average(grid: Grid, u):
    counts = np.bincount(grid.voxels[:, 0], minlength=grid.shape[0])
    return layer_sum(grid, u) / counts


def compare_homogenization(grid: Grid, u, w, t: float, eps: float) -> HomogComparison:
    """Errors of the cross-section average (and of ``u`` itself) against ``w``."""
    ubar = cross_section_average(grid, u)
    diff = ubar - w
    pointwise = np.abs(u - w[grid.voxels[:, 0]])
    return HomogComparison(
        sup_error=float(np.max(np.abs(diff))),
        l2_error=float(np.sqrt(np.sum(diff**2) * grid.h)),
        sup_error_pointwise=float(np.max(pointwise)),
        t=float(t),
        eps=float(eps),
    )


@dataclass(frozen=True)
class HomogRun:
    eps: float
    comparison: HomogComparison
    moving_frame: HomogComparison
    solution: StripSolution
    s: np.ndarray
    ubar: np.ndarray
    w: np.ndarray


def run_homogenization(spec: TubeSpec, eps: float, h: float, V: float = 0.0, tau: float = 1.0,
                       n_periods: int | None = None, dt: float | None = None, phi: Callable | None = None):
    """Evolve the strip to ``t = tau / eps^2`` and compare with ``w``.

    The moving-frame comparison uses ``wbar``, the 1-D solution started from
    the cell-averaged datum ``phibar`` instead of the oscillating ``w0``.
    """
    params, _, _ = compute_effective(spec, V, h)
    t_final = tau / eps**2
    if n_periods is None:
        n_periods = default_n_periods(eps, params.sigma2, t_final)
    prob = StripProblem(spec, n_periods, eps, t_final, h, dt, V, phi or separable())
    prob.check_length(params.sigma2)
    sol = evolve_strip(prob)
    w0, phibar = homogenized_initial(sol.grid, sol.pi, prob.phi, eps, prob.center)
    w = effective_1d_solution(w0, h, params.V_eff, params.sigma2, sol.t)
    wbar = effective_1d_solution(phibar, h, params.V_eff, params.sigma2, sol.t)
    comp = compare_homogenization(sol.grid, sol.u, w, sol.t, eps)
    moving = compare_homogenization(sol.grid, sol.u, wbar, sol.t, eps)
    return HomogRun(eps, comp, moving, sol, layer_coordinates(sol.grid), cross_section_average(sol.grid, sol.u), w)
