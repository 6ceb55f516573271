"""Effective diffusivity of tubes with a dead-zone cavity behind narrow channels.

As the channel width ``eps`` shrinks at zero drift, the cavity still fills
up but carries no through-flux, so ``sigma^2(eps)`` tends to the base value
diluted by the extra volume, ``vol0 sigma0^2 / (vol0 + vol1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import json

import numpy as np
from scipy.optimize import brentq

from .effective import compute_effective
from .errors import GeometryError, PoorFit, UnresolvedChannel
from .geometry import Box, DeadZoneGeometry, TubeSpec, _channel_box, deadzone_family, straight


@dataclass(frozen=True)
class DeadZoneRow:
    eps: float
    sigma2: float
    vol0: float
    vol1: float
    sigma0sq: float
    h: float

    @property
    def leading_term(self):
        return self.vol0 * self.sigma0sq / (self.vol0 + self.vol1)

    @property
    def gap(self):
        return self.sigma2 - self.leading_term

    def to_record(self):
        return {"eps": self.eps, "h": self.h, "sigma2": self.sigma2, "vol0": self.vol0, "vol1": self.vol1,
                "leadingTerm": self.leading_term, "gap": self.gap}


@dataclass(frozen=True)
class DeadZoneFit:
    limit: float
    rate: float
    richardson_rate: float
    leading_term: float

    @property
    def rel_limit_error(self):
        return abs(self.limit - self.leading_term) / abs(self.leading_term)

    def to_record(self):
        return {"limit": self.limit, "rate": self.rate, "richardsonRate": self.richardson_rate,
                "leadingTerm": self.leading_term, "relLimitError": self.rel_limit_error}


@dataclass(frozen=True)
class DeadZoneFamily:
    """Base tube, cavity and attach points of a one-parameter family.

    ``cavity`` is given at zero wall thickness, touching the base wall that
    carries the attach points.  The member for width ``eps`` moves the cavity
    ``eps`` away from that wall and joins it by channels of width and length
    ``eps``.
    """

    base: TubeSpec
    cavity: Box
    attach: tuple

    def __call__(self, eps: float) -> DeadZoneGeometry:
        _, axis, direction = _channel_box(self.base, np.asarray(self.attach[0], dtype=float), eps, eps)
        shift = np.zeros(self.base.dim)
        shift[axis] = direction * eps
        cav = Box(tuple(np.add(self.cavity.lo, shift)), tuple(np.add(self.cavity.hi, shift)))
        return deadzone_family(self.base, cav, eps, eps, self.attach)

    def to_dict(self):
        return {"kind": "deadzone-family", "base": self.base.to_dict(), "cavity": self.cavity.to_dict(),
                "attach": [list(a) for a in self.attach]}

    @classmethod
    def from_dict(cls, data):
        if data.get("kind") != "deadzone-family":
            raise GeometryError("not a dead-zone family description")
        cav = data["cavity"]
        return cls(TubeSpec.from_dict(data["base"]), Box(tuple(cav["lo"]), tuple(cav["hi"])),
                   tuple(tuple(float(x) for x in a) for a in data["attach"]))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def standard_family(dim: int = 3, n_channels: int = 2) -> DeadZoneFamily:
    """Straight base of half width with a box cavity above its top wall.

    The base is ``[0,1] x [0,1/2]^(d-1)``; the cavity spans ``s`` in
    ``[1/6, 5/6]``, has height 1/2 and is joined by ``n_channels`` channels
    placed evenly along ``s``.
    """
    base = straight(dim=dim, height=0.5)
    cavity = Box((1 / 6, 0.5) + (0.0,) * (dim - 2), (5 / 6, 1.0) + (0.5,) * (dim - 2))
    attach = tuple((k / (n_channels + 1), 0.5) + (0.25,) * (dim - 2) for k in range(1, n_channels + 1))
    return DeadZoneFamily(base, cavity, attach)


def cavity_family(eps: float, dim: int = 3, n_channels: int = 2) -> DeadZoneGeometry:
    """Member of ``standard_family(dim, n_channels)`` for width ``eps``."""
    return standard_family(dim, n_channels)(eps)


def base_diffusivity(base: TubeSpec, h: float) -> float:
    """Zero-drift effective diffusivity of the tube without cavity."""
    return compute_effective(base, 0.0, h)[0].sigma2


def sigma_scan(family: Callable[[float], DeadZoneGeometry], eps_list, base: TubeSpec,
               h: float | Callable[[float], float] | None = None):
    """Rows ``(eps, sigma2, ...)`` for each channel width, ordered by decreasing eps.

    ``h`` defaults to ``eps / 2``; every ``h`` must resolve the channel with
    at least two cells.
    """
    rows = []
    for eps in sorted(eps_list, reverse=True):
        hh = eps / 2 if h is None else (h(eps) if callable(h) else h)
        if hh > eps / 2 + 1e-12:
            raise UnresolvedChannel(f"h = {hh:g} does not resolve a channel of width {eps:g}")
        geo = family(eps)
        params, _, _ = compute_effective(geo.spec, 0.0, hh)
        rows.append(DeadZoneRow(float(eps), params.sigma2, geo.vol0, geo.vol1, base_diffusivity(base, hh), float(hh)))
    return rows


def _limit_fit(eps, vals):
    """Exact fit of ``vals = L + C eps^p`` through three rows."""
    e1, e2, e3 = eps
    d12, d23 = vals[0] - vals[1], vals[1] - vals[2]
    if d12 == 0 or d23 == 0 or np.sign(d12) != np.sign(d23):
        raise PoorFit("rows are not monotone in eps")
    target = d12 / d23

    def f(p):
        return (e1**p - e2**p) / (e2**p - e3**p) - target

    try:
        p = brentq(f, 1e-3, 10.0)
    except ValueError as exc:
        raise PoorFit(f"no rate in (0, 10] matches the row differences: {exc}") from exc
    C = d23 / (e2**p - e3**p)
    return vals[2] - C * e3**p, p


def extrapolate_limit(rows) -> DeadZoneFit:
    """Extrapolate ``sigma2`` to ``eps -> 0`` and estimate the gap rate.

    The cavity volume moves slightly with ``eps``, so the ratio
    ``sigma2 / leading_term`` is extrapolated (``L + C eps^p`` through the
    three smallest widths) and rescaled by the leading term of the smallest
    width.  The reported rate is the least-squares slope of ``log|gap|``
    against ``log eps`` over all rows.
    """
    if len(rows) < 3:
        raise PoorFit("need at least three rows")
    rows = sorted(rows, key=lambda r: -r.eps)
    eps = np.array([r.eps for r in rows])
    if np.any(np.diff(eps) >= 0):
        raise PoorFit("rows need distinct widths")
    ratio = np.array([r.sigma2 / r.leading_term for r in rows])
    gap = np.array([r.gap for r in rows])
    L, p_rich = _limit_fit(eps[-3:], ratio[-3:])
    if np.any(gap == 0) or len(set(np.sign(gap))) > 1:
        raise PoorFit("gap changes sign or vanishes")
    p_fit = np.polyfit(np.log(eps), np.log(np.abs(gap)), 1)[0]
    lead = rows[-1].leading_term
    return DeadZoneFit(float(L * lead), float(p_fit), float(p_rich), lead)
