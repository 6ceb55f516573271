"""Voxel grids on the periodicity cell and finite-volume operators.

The Fokker-Planck operator uses exponentially fitted (Scharfetter-Gummel)
fluxes along ``s`` so that the stationary density stays positive for any
cell Peclet number ``V h``.  Lateral faces carry zero total flux, which is
the conservative form of the Robin condition ``(d/dn - V n_1) pi = 0``.
The generator is the conjugate transpose of the Fokker-Planck operator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import DisconnectedGrid, NonconformingSpacing
from .geometry import PERIOD, CellDomain, TubeSpec, build_cell


def bernoulli(x):
    """B(x) = x / (exp(x) - 1), with B(0) = 1."""
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    nz = np.abs(x) > 1e-12
    out[nz] = x[nz] / np.expm1(x[nz])
    small = ~nz
    out[small] = 1.0 - 0.5 * x[small]
    return out if out.ndim else float(out)


@dataclass
class Grid:
    """Uniform voxelization of one cell (or of a strip of several periods).

    Faces between two active cells are stored with ``a`` on the low side and
    ``b`` on the high side of ``axis``.  Seam faces join the last s-layer to
    the first one.  Lateral faces have one active cell and an outward normal
    ``sign`` along ``axis``.
    """

    h: float
    dim: int
    shape: tuple[int, ...]
    index: np.ndarray
    voxels: np.ndarray
    centers: np.ndarray
    z0: tuple[float, ...]
    face_a: np.ndarray
    face_b: np.ndarray
    face_axis: np.ndarray
    face_seam: np.ndarray
    face_layer: np.ndarray
    lat_cell: np.ndarray
    lat_axis: np.ndarray
    lat_sign: np.ndarray
    periodic: bool = True
    n_periods: int = 1
    label: str = ""
    _layer_cells: list = field(default=None, repr=False)

    @property
    def n(self):
        return len(self.voxels)

    @property
    def cell_volume(self):
        return self.h**self.dim

    @property
    def face_area(self):
        return self.h ** (self.dim - 1)

    @property
    def volume(self):
        return self.n * self.cell_volume

    @property
    def n_layers(self):
        return self.shape[0]

    @property
    def s(self):
        return self.centers[:, 0]

    def layer_cells(self, i):
        """Indices of the active cells in s-layer ``i``."""
        if self._layer_cells is None:
            order = np.argsort(self.voxels[:, 0], kind="stable")
            bounds = np.searchsorted(self.voxels[order, 0], np.arange(self.shape[0] + 1))
            self._layer_cells = [order[bounds[k] : bounds[k + 1]] for k in range(self.shape[0])]
        return self._layer_cells[i]

    def s_faces(self):
        return self.face_axis == 0

    def lateral_s_faces(self):
        return self.lat_axis == 0

    def field_norm(self, u):
        """Discrete L2 norm with cell-volume weights."""
        return float(np.sqrt(np.sum(np.abs(u) ** 2) * self.cell_volume))


def _lattice_index(x, h, what):
    k = x / h
    r = round(k)
    if abs(k - r) > 1e-9:
        raise NonconformingSpacing(f"{what} = {x:g} is not on the lattice of spacing h = {h:g}")
    return int(r)


def rasterize(domain: CellDomain | TubeSpec, h: float, n_periods: int = 1, periodic: bool = True) -> Grid:
    """Voxelize the cell with spacing ``h``.

    Every box coordinate must be an integer multiple of ``h``.  With
    ``periodic=False`` the ``n_periods`` copies form a strip whose two ends
    are closed (reported as lateral faces normal to ``s``).
    """
    if isinstance(domain, TubeSpec):
        domain = build_cell(domain)
    spec = domain.spec
    d = spec.dim
    N = _lattice_index(PERIOD, h, "1/h")
    if N <= 0:
        raise NonconformingSpacing("h must be positive")
    z0 = tuple(min(b.lo[k] for b in spec.boxes) for k in range(1, d))
    z1 = tuple(max(b.hi[k] for b in spec.boxes) for k in range(1, d))
    for b in spec.boxes:
        for k in range(d):
            _lattice_index(b.lo[k], h, f"box coordinate x{k}")
            _lattice_index(b.hi[k], h, f"box coordinate x{k}")
    nz = [_lattice_index(z1[k] - z0[k], h, "transverse extent") for k in range(d - 1)]
    mask = np.zeros((N,) + tuple(nz), dtype=bool)
    for b in spec.boxes:
        i0 = _lattice_index(b.lo[0], h, "s")
        i1 = _lattice_index(b.hi[0], h, "s")
        s_idx = np.arange(i0, i1) % N
        sl = [s_idx]
        for k in range(1, d):
            j0 = _lattice_index(b.lo[k] - z0[k - 1], h, "z")
            j1 = _lattice_index(b.hi[k] - z0[k - 1], h, "z")
            sl.append(np.arange(j0, j1))
        mask[np.ix_(*sl)] = True
    if n_periods > 1:
        mask = np.concatenate([mask] * n_periods, axis=0)
    grid = _grid_from_mask(mask, h, z0, periodic)
    grid.n_periods = n_periods
    grid.label = spec.label
    return grid


def _grid_from_mask(mask, h, z0, periodic):
    d = mask.ndim
    shape = mask.shape
    index = np.full(shape, -1, dtype=np.int64)
    voxels = np.argwhere(mask)
    index[tuple(voxels.T)] = np.arange(len(voxels))
    centers = (voxels + 0.5) * h
    centers[:, 1:] += np.asarray(z0)

    fa, fb, fax, fseam, flayer = [], [], [], [], []
    lc, lax, lsg = [], [], []
    for axis in range(d):
        lo = index
        hi_ = np.roll(index, -1, axis=axis)
        n_ax = shape[axis]
        # face between position j and j+1 along axis; j = n_ax - 1 wraps
        pos = np.indices(shape)[axis]
        wrap = pos == n_ax - 1
        seam = wrap & (axis == 0) & periodic
        open_end = wrap & ~seam
        both = (lo >= 0) & (hi_ >= 0) & ~open_end
        fa.append(lo[both])
        fb.append(hi_[both])
        fax.append(np.full(both.sum(), axis))
        fseam.append(seam[both])
        flayer.append(pos[both])
        # lateral faces: active on one side only
        up = (lo >= 0) & ((hi_ < 0) | open_end)
        lc.append(lo[up])
        lax.append(np.full(up.sum(), axis))
        lsg.append(np.full(up.sum(), 1))
        lo_prev = np.roll(index, 1, axis=axis)
        first = pos == 0
        open_start = first & (not (axis == 0 and periodic))
        down = (index >= 0) & ((lo_prev < 0) | open_start)
        lc.append(index[down])
        lax.append(np.full(down.sum(), axis))
        lsg.append(np.full(down.sum(), -1))

    grid = Grid(
        h=float(h),
        dim=d,
        shape=shape,
        index=index,
        voxels=voxels,
        centers=centers,
        z0=tuple(z0),
        face_a=np.concatenate(fa),
        face_b=np.concatenate(fb),
        face_axis=np.concatenate(fax),
        face_seam=np.concatenate(fseam).astype(bool),
        face_layer=np.concatenate(flayer),
        lat_cell=np.concatenate(lc),
        lat_axis=np.concatenate(lax),
        lat_sign=np.concatenate(lsg),
        periodic=periodic,
    )
    n = grid.n
    adj = sp.coo_matrix((np.ones(len(grid.face_a)), (grid.face_a, grid.face_b)), shape=(n, n))
    ncomp = connected_components(adj, directed=False)[0]
    if ncomp != 1:
        raise DisconnectedGrid(f"voxel grid has {ncomp} components")
    return grid


@dataclass(frozen=True)
class SparseOperator:
    """A sparse operator on the cells of a grid.

    ``kind`` is ``"fokker_planck"`` for the density operator M*_theta and
    ``"generator"`` for its conjugate transpose M_theta.
    """

    matrix: sp.csr_matrix
    theta: float
    V: float
    kind: str
    weight: float

    @property
    def n(self):
        return self.matrix.shape[0]

    def __matmul__(self, u):
        return self.matrix @ u


def _face_coefficients(grid: Grid, V: float):
    """Weights multiplying u_a and u_b in the flux from a to b (times h^2)."""
    q = np.where(grid.face_axis == 0, V * grid.h, 0.0)
    return bernoulli(-q), bernoulli(q)


def _seam_phase(theta):
    if np.isclose(abs(theta), np.pi, rtol=0, atol=1e-15):
        return -1.0
    if theta == 0:
        return 1.0
    return np.exp(1j * theta)


def assemble_fokker_planck(grid: Grid, V: float, theta: float = 0.0) -> SparseOperator:
    """Conservative Fokker-Planck operator for ``Delta pi - V d pi/ds``.

    The flux density from cell ``a`` to the cell ``b`` on its high side is
    ``(B(-q) u_a - B(q) u_b) / h`` with ``q = V h`` on s-faces and ``q = 0``
    on transverse faces.  At the seam the value of the s = 0 cell seen from
    the last layer carries the phase ``exp(i theta)``; the reverse coupling
    carries ``exp(-i theta)``.
    """
    if not -np.pi - 1e-12 <= theta <= np.pi + 1e-12:
        raise ValueError("theta must lie in [-pi, pi]")
    ca, cb = _face_coefficients(grid, V)
    inv_h2 = 1.0 / grid.h**2
    a, b = grid.face_a, grid.face_b
    phase = _seam_phase(theta)
    dtype = complex if isinstance(phase, complex) else float
    ph_ab = np.where(grid.face_seam, phase, 1.0).astype(dtype)
    ph_ba = np.conj(ph_ab) if dtype is complex else ph_ab
    rows = np.concatenate([a, a, b, b])
    cols = np.concatenate([a, b, a, b])
    vals = np.concatenate([-ca, cb * ph_ab, ca * ph_ba, -cb]) * inv_h2
    n = grid.n
    M = sp.csr_matrix((vals.astype(dtype), (rows, cols)), shape=(n, n))
    M.sum_duplicates()
    return SparseOperator(M, float(theta), float(V), "fokker_planck", grid.cell_volume)


def generator_from_adjoint(op: SparseOperator) -> SparseOperator:
    """Conjugate transpose: M = (M*)^H, and vice versa."""
    kind = "generator" if op.kind == "fokker_planck" else "fokker_planck"
    M = op.matrix.conj().T.tocsr() if np.iscomplexobj(op.matrix.data) else op.matrix.T.tocsr()
    M.sort_indices()
    return SparseOperator(M, op.theta, op.V, kind, op.weight)


def assemble_generator(grid: Grid, V: float, theta: float = 0.0) -> SparseOperator:
    return generator_from_adjoint(assemble_fokker_planck(grid, V, theta))


def unwrapped_s_gradient(grid: Grid, V: float):
    """The generator applied to the axial coordinate, seam jump unwrapped.

    ``(M s)_a`` only sees s-neighbours; each present neighbour contributes
    ``+-h`` times its coupling.  Missing neighbours (lateral s-faces) drop
    out, which is how the Neumann datum ``d psi/dn = -n_1`` of the periodic
    part enters the corrector right-hand side.
    """
    ca, cb = _face_coefficients(grid, V)
    sf = grid.face_axis == 0
    out = np.zeros(grid.n)
    np.add.at(out, grid.face_a[sf], ca[sf] / grid.h)
    np.add.at(out, grid.face_b[sf], -cb[sf] / grid.h)
    return out


def dump_coo(op: SparseOperator, path):
    """Write the operator as ``row,col,re,im`` CSV."""
    coo = op.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "re", "im"])
        for k in order:
            v = complex(coo.data[k])
            w.writerow([int(coo.row[k]), int(coo.col[k]), repr(v.real), repr(v.imag)])
