"""Monte Carlo estimates of the effective parameters.

Paths follow ``dX = V e_1 dt + sqrt(2) dW`` (generator ``Delta + V d/ds``)
with normal reflection at the tube wall.  Each Euler-Maruyama increment is
traced through the exact box partition of the cell; whenever the segment
hits a wall the remaining displacement along that axis is mirrored, which is
specular reflection of the straight-line step.

With ``scheme="bridge"`` (the default) the axial component at walls normal
to ``s`` is instead corrected exactly: the extremum of the Brownian bridge
between the two endpoints is sampled and the excursion past the wall is
added back, as the Skorokhod map prescribes.  Specular folding of the
straight-line step converges slowly in ``dt`` near such walls, and its bias
dominates the axial statistics at practical step sizes.

Every path draws from its own stream spawned from the master seed by path
index, so results do not depend on the order in which paths are run.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import GeometryError, ReflectionStuck
from .geometry import CellDomain, build_cell

MAX_FOLDS = 8


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 20000
    T: float = 50.0
    dt: float = 1e-4
    seed: int = 0
    initial: str = "uniform"
    scheme: str = "bridge"

    def validate(self, domain: CellDomain):
        if self.dt <= 0 or self.T <= 0 or self.n_paths < 2:
            raise ValueError("need dt > 0, T > 0 and at least two paths")
        if self.initial != "uniform":
            raise ValueError(f"unsupported initial distribution {self.initial!r}")
        if self.scheme not in ("bridge", "specular"):
            raise ValueError(f"unknown reflection scheme {self.scheme!r}")
        extent = min(min(np.subtract(b.hi, b.lo)) for b in domain.spec.boxes)
        if math.sqrt(2 * self.dt) > 0.25 * extent:
            raise ValueError(f"dt = {self.dt:g} is too large for the smallest box extent {extent:g}")

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))


@dataclass(frozen=True)
class McEstimate:
    V_eff: float
    V_eff_se: float
    sigma2: float
    sigma2_se: float
    n_paths: int
    T: float
    dt: float

    def to_record(self):
        return {"V_eff": self.V_eff, "V_eff_se": self.V_eff_se, "sigma2": self.sigma2,
                "sigma2_se": self.sigma2_se, "nPaths": self.n_paths, "T": self.T, "dt": self.dt}


class _Walls:
    """Partition arrays padded to three axes for the compiled kernels."""

    def __init__(self, domain: CellDomain):
        part = domain.partition
        self.dim = domain.dim
        self.es = np.ascontiguousarray(part.edges[0], dtype=float)
        self.e1 = np.ascontiguousarray(part.edges[1], dtype=float)
        active = part.active
        if self.dim == 3:
            self.e2 = np.ascontiguousarray(part.edges[2], dtype=float)
        else:
            self.e2 = np.array([0.0, 1.0])
            active = active[:, :, None]
        self.active = np.ascontiguousarray(active, dtype=np.uint8)

    def args(self):
        return self.es, self.e1, self.e2, self.active


@numba.njit(cache=True)
def _advance(s, z1, z2, per, ci, cj, ck, d0, d1, d2, es, e1, e2, active):
    ns = es.shape[0] - 1
    n1 = e1.shape[0] - 1
    n2 = e2.shape[0] - 1
    folds = 0
    while True:
        tmin = 1.0
        kmin = -1
        if d0 > 0.0:
            t = (per + es[ci + 1] - s) / d0
            if t < tmin:
                tmin, kmin = t, 0
        elif d0 < 0.0:
            t = (per + es[ci] - s) / d0
            if t < tmin:
                tmin, kmin = t, 0
        if d1 > 0.0:
            t = (e1[cj + 1] - z1) / d1
            if t < tmin:
                tmin, kmin = t, 1
        elif d1 < 0.0:
            t = (e1[cj] - z1) / d1
            if t < tmin:
                tmin, kmin = t, 1
        if d2 > 0.0:
            t = (e2[ck + 1] - z2) / d2
            if t < tmin:
                tmin, kmin = t, 2
        elif d2 < 0.0:
            t = (e2[ck] - z2) / d2
            if t < tmin:
                tmin, kmin = t, 2
        if kmin < 0:
            return s + d0, z1 + d1, z2 + d2, per, ci, cj, ck, True
        if tmin < 0.0:
            tmin = 0.0
        s += tmin * d0
        z1 += tmin * d1
        z2 += tmin * d2
        rest = 1.0 - tmin
        d0 *= rest
        d1 *= rest
        d2 *= rest
        if kmin == 0:
            if d0 > 0.0:
                s = per + es[ci + 1]
                ni, nper = ci + 1, per
                if ni == ns:
                    ni, nper = 0, per + 1
            else:
                s = per + es[ci]
                ni, nper = ci - 1, per
                if ni < 0:
                    ni, nper = ns - 1, per - 1
            if active[ni, cj, ck]:
                ci, per = ni, nper
            else:
                d0 = -d0
                folds += 1
        elif kmin == 1:
            if d1 > 0.0:
                z1 = e1[cj + 1]
                nj = cj + 1
            else:
                z1 = e1[cj]
                nj = cj - 1
            if 0 <= nj < n1 and active[ci, nj, ck]:
                cj = nj
            else:
                d1 = -d1
                folds += 1
        else:
            if d2 > 0.0:
                z2 = e2[ck + 1]
                nk = ck + 1
            else:
                z2 = e2[ck]
                nk = ck - 1
            if 0 <= nk < n2 and active[ci, cj, nk]:
                ck = nk
            else:
                d2 = -d2
                folds += 1
        if folds > MAX_FOLDS:
            return s, z1, z2, per, ci, cj, ck, False


@numba.njit(cache=True)
def _locate(x, edges):
    return np.searchsorted(edges, x, side="right") - 1


@numba.njit(cache=True)
def _s_walls(per, ci, cj, ck, es, active):
    """Nearest walls normal to s along the s-row of cell ``ci``.

    Returns ``(lo, hi, c_lo, c_hi)``: unwrapped wall positions (or
    ``-inf``/``inf``) and the partition cells lying against them.
    """
    ns = es.shape[0] - 1
    lo, c_lo = -np.inf, -1
    c, p = ci, per
    for _ in range(ns):
        nc, nper = c - 1, p
        if nc < 0:
            nc, nper = ns - 1, p - 1
        if not active[nc, cj, ck]:
            lo, c_lo = p + es[c], c
            break
        c, p = nc, nper
    hi, c_hi = np.inf, -1
    c, p = ci, per
    for _ in range(ns):
        nc, nper = c + 1, p
        if nc == ns:
            nc, nper = 0, p + 1
        if not active[nc, cj, ck]:
            hi, c_hi = p + es[c + 1], c
            break
        c, p = nc, nper
    return lo, hi, c_lo, c_hi


@numba.njit(cache=True)
def _wall_extent(c, side, cj, ck, e1, e2, active):
    """Transverse box over which the s-wall next to cell ``c`` continues.

    ``side`` is -1 for a wall on the low-s face of ``c`` and +1 for the
    high-s face.  A bound is infinite where the extent ends at a transverse
    wall, since a path cannot leave through it.
    """
    ns = active.shape[0]
    nb = (c + side) % ns
    n1 = e1.shape[0] - 1
    n2 = e2.shape[0] - 1
    j = cj
    while j > 0 and active[c, j - 1, ck] and not active[nb, j - 1, ck]:
        j -= 1
    lo1 = e1[j] if j > 0 and active[c, j - 1, ck] else -np.inf
    j = cj
    while j < n1 - 1 and active[c, j + 1, ck] and not active[nb, j + 1, ck]:
        j += 1
    hi1 = e1[j + 1] if j < n1 - 1 and active[c, j + 1, ck] else np.inf
    k = ck
    while k > 0 and active[c, cj, k - 1] and not active[nb, cj, k - 1]:
        k -= 1
    lo2 = e2[k] if k > 0 and active[c, cj, k - 1] else -np.inf
    k = ck
    while k < n2 - 1 and active[c, cj, k + 1] and not active[nb, cj, k + 1]:
        k += 1
    hi2 = e2[k + 1] if k < n2 - 1 and active[c, cj, k + 1] else np.inf
    return lo1, hi1, lo2, hi2


# bridge crossings with probability below exp(-SCREEN) are not sampled
SCREEN = 16.0


@numba.njit(cache=True)
def _bridge_exits(rng, x, y, bound, dt):
    """Whether a free Brownian bridge (variance rate 2) from ``x`` to ``y``
    over ``dt`` reaches ``bound``; returns ``(hit, u)`` with the uniform used,
    which fixes the extremum when ``hit`` holds."""
    g = (bound - x) * (bound - y)
    if g <= 0.0:
        return True, 1.0 - rng.random()
    if g > SCREEN * dt:
        return False, 1.0
    u = 1.0 - rng.random()
    return u < math.exp(-g / dt), u


@numba.njit(cache=True)
def _bridge_stays(rng, x, y, lo, hi, dt):
    if lo > -np.inf and _bridge_exits(rng, x, y, lo, dt)[0]:
        return False
    if hi < np.inf and _bridge_exits(rng, x, y, hi, dt)[0]:
        return False
    return True


@numba.njit(cache=True)
def _bridge_push(rng, s, d0, z1, d1, z2, d2, dt, wlo, whi, xlo, xhi):
    """Skorokhod correction of the axial increment at walls normal to s.

    Given both endpoints, the extremum of the free axial path over the step
    is that of a Brownian bridge (variance rate 2), sampled exactly; the
    excursion past the wall is added back as the local-time push.  The push
    is applied only if the transverse bridges stay within the extent of the
    wall (``xlo``/``xhi`` hold its four transverse bounds); otherwise the
    step is left to specular folding.
    """
    b = s + d0
    if wlo > -np.inf:
        hit, u = _bridge_exits(rng, s, b, wlo, dt)
        if hit and _bridge_stays(rng, z1, z1 + d1, xlo[0], xlo[1], dt) and \
                _bridge_stays(rng, z2, z2 + d2, xlo[2], xlo[3], dt):
            m = 0.5 * (s + b - math.sqrt((b - s) ** 2 - 4.0 * dt * math.log(u)))
            b += wlo - m
    if whi < np.inf:
        hit, u = _bridge_exits(rng, s, b, whi, dt)
        if hit and _bridge_stays(rng, z1, z1 + d1, xhi[0], xhi[1], dt) and \
                _bridge_stays(rng, z2, z2 + d2, xhi[2], xhi[3], dt):
            M = 0.5 * (s + b + math.sqrt((b - s) ** 2 - 4.0 * dt * math.log(u)))
            b -= M - whi
    return b - s


@numba.njit(cache=True)
def _wall_data(per, ci, cj, ck, es, e1, e2, active):
    wlo, whi, c_lo, c_hi = _s_walls(per, ci, cj, ck, es, active)
    xlo = (-np.inf, np.inf, -np.inf, np.inf)
    xhi = xlo
    if c_lo >= 0:
        xlo = _wall_extent(c_lo, -1, cj, ck, e1, e2, active)
    if c_hi >= 0:
        xhi = _wall_extent(c_hi, 1, cj, ck, e1, e2, active)
    return wlo, whi, xlo, xhi


@numba.njit(cache=True)
def _simulate_path(rng, n_steps, dt, V, dim, es, e1, e2, active, bridge):
    ns = es.shape[0] - 1
    # uniform start in the cell by rejection from the bounding box
    while True:
        s = rng.random()
        z1 = e1[0] + (e1[-1] - e1[0]) * rng.random()
        z2 = e2[0] + (e2[-1] - e2[0]) * rng.random() if dim == 3 else 0.5
        ci = min(_locate(s, es), ns - 1)
        cj = _locate(z1, e1)
        ck = _locate(z2, e2)
        if cj < e1.shape[0] - 1 and ck < e2.shape[0] - 1 and active[ci, cj, ck]:
            break
    s0 = s
    per = 0
    amp = math.sqrt(2.0 * dt)
    near = math.sqrt(SCREEN * dt)
    lo0, hi0, lo1, hi1, lo2, hi2 = es[ci], es[ci + 1], e1[cj], e1[cj + 1], e2[ck], e2[ck + 1]
    wlo, whi, xlo, xhi = _wall_data(per, ci, cj, ck, es, e1, e2, active)
    for step in range(n_steps):
        d0 = V * dt + amp * rng.standard_normal()
        d1 = amp * rng.standard_normal()
        d2 = amp * rng.standard_normal() if dim == 3 else 0.0
        if bridge:
            # a wall crossing of the bridge is possible only within ``near``
            a0 = s + d0
            if min(s, a0) - wlo < near or whi - max(s, a0) < near:
                d0 = _bridge_push(rng, s, d0, z1, d1, z2, d2, dt, wlo, whi, xlo, xhi)
        # fast path: the step stays inside the current partition cell
        a0, a1, a2 = s + d0, z1 + d1, z2 + d2
        if lo0 < a0 < hi0 and lo1 < a1 < hi1 and lo2 < a2 < hi2:
            s, z1, z2 = a0, a1, a2
            continue
        pci, pcj, pck, pper = ci, cj, ck, per
        out = _advance(s, z1, z2, per, ci, cj, ck, d0, d1, d2, es, e1, e2, active)
        if out[7]:
            s, z1, z2, per, ci, cj, ck = out[0], out[1], out[2], out[3], out[4], out[5], out[6]
        else:
            # fold budget exhausted: redo the step as 2, 4, 8 or 16 substeps
            done = False
            for level in range(1, 5):
                m = 2**level
                sub = dt / m
                a_sub = math.sqrt(2.0 * sub)
                ts, tz1, tz2, tper, tci, tcj, tck = s, z1, z2, per, ci, cj, ck
                good = True
                for _ in range(m):
                    n0 = rng.standard_normal()
                    n1 = rng.standard_normal()
                    n2 = rng.standard_normal() if dim == 3 else 0.0
                    e0 = V * sub + a_sub * n0
                    if bridge:
                        tlo, thi, tx0, tx1 = _wall_data(tper, tci, tcj, tck, es, e1, e2, active)
                        e0 = _bridge_push(rng, ts, e0, tz1, a_sub * n1, tz2, a_sub * n2, sub, tlo, thi, tx0, tx1)
                    o = _advance(ts, tz1, tz2, tper, tci, tcj, tck, e0, a_sub * n1, a_sub * n2, es, e1, e2, active)
                    if not o[7]:
                        good = False
                        break
                    ts, tz1, tz2, tper, tci, tcj, tck = o[0], o[1], o[2], o[3], o[4], o[5], o[6]
                if good:
                    s, z1, z2, per, ci, cj, ck = ts, tz1, tz2, tper, tci, tcj, tck
                    done = True
                    break
            if not done:
                return s - s0, step
        lo0, hi0 = per + es[ci], per + es[ci + 1]
        if ci != pci or cj != pcj or ck != pck or per != pper:
            lo1, hi1, lo2, hi2 = e1[cj], e1[cj + 1], e2[ck], e2[ck + 1]
            if bridge:
                wlo, whi, xlo, xhi = _wall_data(per, ci, cj, ck, es, e1, e2, active)
    return s - s0, -1


def path_rng(seed: int, path: int):
    """Independent stream for one path, derived from the master seed."""
    return np.random.Generator(np.random.SFC64(np.random.SeedSequence(seed, spawn_key=(path,))))


def _domain(geometry) -> CellDomain:
    return geometry if isinstance(geometry, CellDomain) else build_cell(geometry)


def _active_cell(s, z1, z2, es, e1, e2, active):
    """Indices of an active partition cell whose closure contains the point.

    A point on a face between an active and an inactive cell belongs to the
    active one, so that a step starting on a wall still sees that wall.
    Returns ``(ci, cj, ck, wrap)``; ``wrap`` is -1 when the point at ``s = 0``
    is taken as the end of the previous period.
    """
    cand = []
    for c, e in ((s, es), (z1, e1), (z2, e2)):
        k = min(int(np.searchsorted(e, c, side="right") - 1), len(e) - 2)
        cand.append([(k, 0)] + ([(k - 1, 0)] if k > 0 and c == e[k] else []))
    if s == es[0]:
        cand[0].append((len(es) - 2, -1))
    for i, wrap in cand[0]:
        for j, _ in cand[1]:
            for k, _ in cand[2]:
                if active[i, j, k]:
                    return i, j, k, wrap
    raise GeometryError(f"point {(s, z1, z2)} is not in an active cell")


def step_reflect(geometry, x, V: float, dt: float, noise, rng=None):
    """One reflected Euler-Maruyama step from ``x`` with given normal draws.

    ``x[0]`` is the unwrapped axial coordinate.  If the fold budget is
    exhausted the step is retried as substeps with fresh noise from ``rng``;
    without ``rng`` that raises ``ReflectionStuck``.
    """
    domain = _domain(geometry)
    walls = _Walls(domain)
    x = np.asarray(x, dtype=float)
    noise = np.asarray(noise, dtype=float)
    d = domain.dim
    if x.shape != (d,) or noise.shape != (d,):
        raise ValueError("position and noise must have the tube dimension")
    if not domain.contains(x):
        raise GeometryError(f"start point {tuple(x)} is outside the tube")
    per = math.floor(x[0])
    es, e1, e2, active = walls.args()
    z2 = x[2] if d == 3 else 0.5
    ci, cj, ck, wrap = _active_cell(x[0] - per, x[1], z2, es, e1, e2, active)
    per += wrap
    amp = math.sqrt(2 * dt)
    disp = V * dt * np.eye(d)[0] + amp * noise
    out = _advance(x[0], x[1], z2, per, ci, cj, ck, disp[0], disp[1], disp[2] if d == 3 else 0.0, es, e1, e2, active)
    if not out[7]:
        if rng is None:
            raise ReflectionStuck(f"more than {MAX_FOLDS} reflections in one step; reduce dt")
        y = x
        for _ in range(2):
            y = step_reflect(domain, y, V, dt / 2, rng.standard_normal(d), rng)
        return y
    return np.array(out[:d])


def _summarize(ds, T, cfg):
    n = len(ds)
    mean = ds.mean()
    var = ds.var(ddof=1)
    m4 = np.mean((ds - mean) ** 4)
    return McEstimate(
        V_eff=float(mean / T),
        V_eff_se=float(math.sqrt(var / n) / T),
        sigma2=float(var / (2 * T)),
        sigma2_se=float(math.sqrt(max(m4 - var**2, 0.0) / n) / (2 * T)),
        n_paths=n,
        T=cfg.T,
        dt=cfg.dt,
    )


def simulate_displacements(geometry, V: float, cfg: McConfig, paths=None):
    """Axial displacements ``s(T) - s(0)`` for the requested path indices."""
    domain = _domain(geometry)
    cfg.validate(domain)
    walls = _Walls(domain)
    idx = range(cfg.n_paths) if paths is None else paths
    out = np.empty(len(idx))
    for j, p in enumerate(idx):
        ds, fail = _simulate_path(path_rng(cfg.seed, p), cfg.n_steps, cfg.dt, float(V), walls.dim, *walls.args(),
                                  cfg.scheme == "bridge")
        if fail >= 0:
            raise ReflectionStuck(f"reflection failed at step {fail}", path=p)
        out[j] = ds
    return out


def estimate_effective(geometry, V: float, cfg: McConfig, n_batches: int = 10):
    """Estimate ``V_eff = E[ds]/T`` and ``sigma^2 = Var[ds]/(2T)``.

    Returns ``(estimate, batches)`` where ``batches`` holds the running
    estimate after each block of paths, for convergence tables.
    """
    ds = simulate_displacements(geometry, V, cfg)
    est = _summarize(ds, cfg.T, cfg)
    batches = []
    edges = np.linspace(0, cfg.n_paths, n_batches + 1).astype(int)
    for k in edges[1:]:
        if k >= 2:
            batches.append((int(k), _summarize(ds[:k], cfg.T, cfg)))
    return est, batches


def write_batches_csv(path, batches):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["paths", "V_eff", "V_eff_se", "sigma2", "sigma2_se"])
        for k, e in batches:
            w.writerow([k, repr(e.V_eff), repr(e.V_eff_se), repr(e.sigma2), repr(e.sigma2_se)])
