"""Periodic tube geometries built from axis-aligned boxes.

A tube is periodic in the axial coordinate ``s = x[0]`` with period 1.  One
period (the cell) is described as a union of boxes; the transverse
coordinates ``z = x[1:]`` are bounded.  Boxes may overlap and may cross the
seam ``s = 1`` (their s-interval lies in ``[0, 2)``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ChannelMismatch, DegenerateBox, DisconnectedCell, GeometryError

PERIOD = 1.0
_DIGITS = 12


def _snap(x):
    return float(round(float(x), _DIGITS)) + 0.0


@dataclass(frozen=True)
class Box:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(_snap(v) for v in self.lo)
        hi = tuple(_snap(v) for v in self.hi)
        if len(lo) != len(hi):
            raise GeometryError("box corners have different dimensions")
        if any(b <= a for a, b in zip(lo, hi)):
            raise DegenerateBox(f"box {lo} -> {hi} has zero or negative extent")
        if hi[0] - lo[0] > PERIOD + 1e-12:
            raise GeometryError("box is longer than one period in s")
        # reduce the s-interval so that 0 <= lo_s < 1
        shift = np.floor(lo[0] / PERIOD) * PERIOD
        if shift:
            lo = (_snap(lo[0] - shift),) + lo[1:]
            hi = (_snap(hi[0] - shift),) + hi[1:]
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return len(self.lo)

    @property
    def volume(self):
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def contains(self, x):
        """True if ``x`` (s taken mod 1) lies in the closed box."""
        s = x[0] % PERIOD
        for k in range(1, self.dim):
            if not self.lo[k] <= x[k] <= self.hi[k]:
                return False
        return self.lo[0] <= s <= self.hi[0] or self.lo[0] <= s + PERIOD <= self.hi[0]

    def to_dict(self):
        return {"lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class TubeSpec:
    """One period of a tube together with the axial drift ``V``."""

    dim: int
    boxes: tuple[Box, ...]
    drift: float = 0.0
    label: str = ""
    period: float = field(default=PERIOD, init=False)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise GeometryError(f"dim must be 2 or 3, got {self.dim}")
        boxes = tuple(b if isinstance(b, Box) else Box(*b) for b in self.boxes)
        if not boxes:
            raise GeometryError("a tube needs at least one box")
        for b in boxes:
            if b.dim != self.dim:
                raise GeometryError(f"box {b} does not have dimension {self.dim}")
        object.__setattr__(self, "boxes", boxes)
        object.__setattr__(self, "drift", float(self.drift))

    def with_drift(self, V):
        return TubeSpec(self.dim, self.boxes, V, self.label)

    def to_dict(self):
        return {
            "dim": self.dim,
            "drift": self.drift,
            "label": self.label,
            "boxes": [b.to_dict() for b in self.boxes],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data):
        try:
            boxes = tuple(Box(tuple(b["lo"]), tuple(b["hi"])) for b in data["boxes"])
            return cls(int(data["dim"]), boxes, float(data.get("drift", 0.0)), str(data.get("label", "")))
        except (KeyError, TypeError) as exc:
            raise GeometryError(f"malformed geometry record: {exc}") from exc

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


class Partition:
    """Exact rectilinear partition of the cell induced by all box faces.

    Every partition cell is either fully inside or fully outside the union,
    so connectivity and volume can be computed exactly.  The Monte Carlo
    walker uses the same partition to locate walls.
    """

    def __init__(self, spec: TubeSpec):
        self.dim = spec.dim
        s_pts = {0.0, PERIOD}
        for b in spec.boxes:
            s_pts.add(_snap(b.lo[0] % PERIOD))
            s_pts.add(_snap(b.hi[0] % PERIOD) if b.hi[0] != PERIOD else PERIOD)
        edges = [np.array(sorted(s_pts))]
        for k in range(1, spec.dim):
            edges.append(np.array(sorted({b.lo[k] for b in spec.boxes} | {b.hi[k] for b in spec.boxes})))
        self.edges = edges
        centers = [0.5 * (e[1:] + e[:-1]) for e in edges]
        shape = tuple(len(c) for c in centers)
        active = np.zeros(shape, dtype=bool)
        grids = np.meshgrid(*centers, indexing="ij")
        for b in spec.boxes:
            inside = (grids[0] >= b.lo[0]) & (grids[0] <= b.hi[0])
            inside |= (grids[0] + PERIOD >= b.lo[0]) & (grids[0] + PERIOD <= b.hi[0])
            for k in range(1, spec.dim):
                inside &= (grids[k] >= b.lo[k]) & (grids[k] <= b.hi[k])
            active |= inside
        self.active = active
        widths = [np.diff(e) for e in edges]
        vol = widths[0]
        for w in widths[1:]:
            vol = np.multiply.outer(vol, w)
        self.cell_volumes = vol

    @property
    def volume(self):
        return float(self.cell_volumes[self.active].sum())

    def n_components(self):
        shape = self.active.shape
        idx = np.full(shape, -1)
        idx[self.active] = np.arange(self.active.sum())
        rows, cols = [], []
        for axis in range(self.dim):
            a = idx
            b = np.roll(idx, -1, axis=axis)
            if axis > 0:
                # no wrap across transverse extent
                sl = [slice(None)] * self.dim
                sl[axis] = slice(0, shape[axis] - 1)
                a, b = a[tuple(sl)], b[tuple(sl)]
            m = (a >= 0) & (b >= 0)
            rows.append(a[m])
            cols.append(b[m])
        n = int(self.active.sum())
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        graph = coo_matrix((np.ones(len(r)), (r, c)), shape=(n, n))
        return connected_components(graph, directed=False)[0]


@dataclass(frozen=True)
class CellDomain:
    spec: TubeSpec
    cell_volume: float
    partition: Partition = field(repr=False, compare=False)

    @property
    def dim(self):
        return self.spec.dim

    def contains(self, x):
        return any(b.contains(x) for b in self.spec.boxes)

    def boundary_class(self, x, tol=1e-12):
        """Classify a point of the closed cell.

        Returns one of ``"outside"``, ``"interior"``, ``"lateral"``,
        ``"seam-left"`` (on S_0) or ``"seam-right"`` (on S_1).  A point is
        lateral when a small probe in some axis direction leaves the union.
        """
        x = np.asarray(x, dtype=float)
        if not self.contains(x):
            return "outside"
        delta = 1e-9
        for k in range(self.dim):
            for sign in (-1.0, 1.0):
                y = x.copy()
                y[k] += sign * delta
                if not self.contains(y):
                    return "lateral"
        if abs(x[0]) < tol:
            return "seam-left"
        if abs(x[0] - PERIOD) < tol:
            return "seam-right"
        return "interior"


def build_cell(spec: TubeSpec) -> CellDomain:
    """Validate a tube spec and compute the exact cell volume.

    Raises ``DisconnectedCell`` if the union is not connected once ``s = 0``
    is glued to ``s = 1``.
    """
    part = Partition(spec)
    ncomp = part.n_components()
    if ncomp != 1:
        raise DisconnectedCell(f"glued cell has {ncomp} components")
    return CellDomain(spec, part.volume, part)


def mirror(spec: TubeSpec) -> TubeSpec:
    """Reflect the geometry through ``s -> 1 - s``; the drift is unchanged."""
    boxes = []
    for b in spec.boxes:
        lo_s, hi_s = _snap(PERIOD - b.hi[0]), _snap(PERIOD - b.lo[0])
        if lo_s < 0:
            lo_s, hi_s = _snap(lo_s + PERIOD), _snap(hi_s + PERIOD)
        boxes.append(Box((lo_s,) + b.lo[1:], (hi_s,) + b.hi[1:]))
    label = spec.label[:-7] if spec.label.endswith("-mirror") else spec.label + "-mirror"
    return TubeSpec(spec.dim, tuple(boxes), spec.drift, label)


def box_set(spec: TubeSpec):
    """Order-independent representation of the boxes, for comparisons."""
    return sorted((b.lo, b.hi) for b in spec.boxes)


# -- dead-zone geometries ---------------------------------------------------


@dataclass(frozen=True)
class DeadZoneGeometry:
    spec: TubeSpec
    eps: float
    vol0: float
    vol1: float
    channels: tuple[Box, ...]


def _touches(a: Box, b: Box, tol=1e-12):
    """True if two boxes share a face patch of positive (d-1)-measure."""
    for shift in (-PERIOD, 0.0, PERIOD):
        touching_axes = 0
        ok = True
        for k in range(a.dim):
            off = shift if k == 0 else 0.0
            lo = max(a.lo[k], b.lo[k] + off)
            hi = min(a.hi[k], b.hi[k] + off)
            if hi < lo - tol:
                ok = False
                break
            if hi - lo <= tol:
                touching_axes += 1
        if ok and touching_axes <= 1:
            return True
    return False


def _channel_box(base: TubeSpec, x0, eps, length):
    """Channel of cross-width ``eps`` leaving the base wall at ``x0``."""
    x0 = np.asarray(x0, dtype=float)
    for k in range(1, base.dim):
        for b in base.boxes:
            if abs(x0[k] - b.hi[k]) < 1e-12 and b.contains(x0):
                direction = 1.0
            elif abs(x0[k] - b.lo[k]) < 1e-12 and b.contains(x0):
                direction = -1.0
            else:
                continue
            probe = x0.copy()
            probe[k] += direction * 1e-9
            if any(bb.contains(probe) for bb in base.boxes):
                continue
            lo = x0 - 0.5 * eps
            hi = x0 + 0.5 * eps
            if direction > 0:
                lo[k], hi[k] = x0[k], x0[k] + length
            else:
                lo[k], hi[k] = x0[k] - length, x0[k]
            return Box(tuple(lo), tuple(hi)), k, direction
    raise ChannelMismatch(f"attach point {tuple(x0)} is not on a transverse wall of the base")


def deadzone_family(base: TubeSpec, cavity: Box, eps: float, length: float, attach) -> DeadZoneGeometry:
    """Attach a cavity to the base tube through channels of width ``eps``.

    ``attach`` is a single point on a transverse wall of the base or a
    sequence of such points (one channel each).  Every channel has square
    cross-section ``eps`` (in each non-channel axis) and the given length.
    """
    if eps <= 0:
        raise GeometryError("channel width must be positive")
    pts = np.atleast_2d(np.asarray(attach, dtype=float))
    base_cell = build_cell(base)
    cav = cavity if isinstance(cavity, Box) else Box(*cavity)
    channels = []
    for x0 in pts:
        ch, _, _ = _channel_box(base, x0, eps, length)
        if not any(_touches(ch, b) for b in base.boxes) or not _touches(ch, cav):
            raise ChannelMismatch(f"channel at {tuple(x0)} does not join base and cavity")
        channels.append(ch)
    label = f"{base.label}+deadzone(eps={eps:g})"
    spec = TubeSpec(base.dim, base.boxes + tuple(channels) + (cav,), 0.0, label)
    cell = build_cell(spec)
    return DeadZoneGeometry(spec, float(eps), base_cell.cell_volume, cell.cell_volume - base_cell.cell_volume, tuple(channels))


# -- presets ----------------------------------------------------------------


def straight(dim=2, height=1.0, drift=0.0) -> TubeSpec:
    hi = (1.0,) + (height,) * (dim - 1)
    return TubeSpec(dim, (Box((0.0,) * dim, hi),), drift, f"straight{dim}d")


def finger(drift=0.0) -> TubeSpec:
    """Main channel of height 1/4 with a symmetric finger of width 1/4."""
    return TubeSpec(
        2,
        (Box((0.0, 0.0), (1.0, 0.25)), Box((0.375, 0.25), (0.625, 1.0))),
        drift,
        "finger",
    )


def slanted_finger(drift=0.0) -> TubeSpec:
    """Finger leaning towards +s as a three-step staircase."""
    return TubeSpec(
        2,
        (
            Box((0.0, 0.0), (1.0, 0.25)),
            Box((0.375, 0.25), (0.5, 0.5)),
            Box((0.5, 0.375), (0.625, 0.75)),
            Box((0.625, 0.625), (0.75, 1.0)),
        ),
        drift,
        "slanted-finger",
    )


PRESETS = {
    "straight": straight,
    "straight3d": lambda drift=0.0: straight(3, 0.5, drift),
    "finger": finger,
    "slanted-finger": slanted_finger,
}


def load_geometry(ref: str) -> TubeSpec:
    """Load a geometry from a JSON file or ``preset:<name>``."""
    if ref.startswith("preset:"):
        name = ref.split(":", 1)[1]
        if name not in PRESETS:
            raise GeometryError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return PRESETS[name]()
    return TubeSpec.load(ref)
