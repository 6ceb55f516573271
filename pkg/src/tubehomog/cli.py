"""Command-line entry point.

Every subcommand writes its result files and a ``manifest.json`` into
``--out``.  Result files depend only on the inputs (no timestamps), so
repeated runs produce identical bytes; the manifest records timing.

Exit codes: 0 success, 1 computational failure, 2 invariant violation.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction

import numpy as np

from . import __version__
from .bloch import THETA_MAX, bloch_scan, default_thetas, negativity_scan, taylor_fit
from .deadzone import DeadZoneFamily, extrapolate_limit, sigma_scan, standard_family
from .effective import compute_effective
from .errors import InvariantViolation, NonNegativeRealPart, NonPositiveNullvector, TubeError
from .geometry import PRESETS, box_set, build_cell, load_geometry, mirror
from .grid import rasterize
from .homog import run_homogenization
from .io import RunManifest, dumps, sha256_bytes, svg_boxes, svg_plot, write_csv, write_json
from .montecarlo import McConfig, estimate_effective

ROUTE_TOL = 1e-8
# solver tolerance added to the route spread when judging a ratchet asymmetry
ERROR_FLOOR = 1e-10

FAMILY_PRESETS = {"d3family": lambda: standard_family(3), "d2family": lambda: standard_family(2)}


def _number(text: str) -> float:
    """Parse ``0.03125``, ``1/32`` and similar."""
    try:
        return float(Fraction(text.strip()))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc


def _number_list(text: str):
    return [_number(t) for t in text.split(",") if t.strip()]


def _load_spec(ref):
    spec = load_geometry(ref)
    if ref.startswith("preset:"):
        data = spec.to_json().encode()
    else:
        with open(ref, "rb") as fh:
            data = fh.read()
    return spec, sha256_bytes(data)


def _load_family(ref):
    if ref.startswith("preset:"):
        name = ref.split(":", 1)[1]
        if name not in FAMILY_PRESETS:
            raise TubeError(f"unknown family preset {name!r}; choose from {sorted(FAMILY_PRESETS)}")
        fam = FAMILY_PRESETS[name]()
        return fam, sha256_bytes(dumps(fam.to_dict()).encode())
    with open(ref, "rb") as fh:
        data = fh.read()
    return DeadZoneFamily.load(ref), sha256_bytes(data)


def _emit(args, record, table=None):
    """Print the main record to stdout in the requested format."""
    if args.format == "csv" and table is not None:
        header, rows = table
        print(",".join(header))
        for row in rows:
            print(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    else:
        sys.stdout.write(dumps(record))


def _map(fn, items, workers):
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _manifest(args, label, digest, params, seed=None):
    os.makedirs(args.out, exist_ok=True)
    return RunManifest(args.command, label, digest, params, __version__, seed)


# -- subcommands ------------------------------------------------------------


def cmd_geom(args):
    spec, digest = _load_spec(args.geom)
    cell = build_cell(spec)
    record = {"label": spec.label, "dim": spec.dim, "volume": cell.cell_volume,
              "boxes": [b.to_dict() for b in spec.boxes], "symmetric": box_set(mirror(spec)) == box_set(spec)}
    man = _manifest(args, spec.label, digest, {})
    write_json(man.add(os.path.join(args.out, "geometry.json")), record)
    if spec.dim == 2:
        with open(man.add(os.path.join(args.out, "geometry.svg")), "w") as fh:
            fh.write(svg_boxes(spec.boxes))
    man.write(args.out)
    _emit(args, record)
    return 0


def cmd_cell(args):
    spec, digest = _load_spec(args.geom)
    V = spec.drift if args.v is None else args.v
    params, _, _ = compute_effective(spec, V, args.h)
    record = params.to_record()
    man = _manifest(args, spec.label, digest, {"V": V, "h": args.h})
    write_json(man.add(os.path.join(args.out, "cell.json")), record)
    man.write(args.out)
    _emit(args, record, (["V", "V_eff_cut", "V_eff_vol", "V_eff_lat", "sigma2", "routeSpread"],
                         [[params.V, params.V_eff_cut, params.V_eff_vol, params.V_eff_lat, params.sigma2,
                           params.route_spread]]))
    if params.route_spread > ROUTE_TOL:
        raise InvariantViolation(f"route spread {params.route_spread:.2e} exceeds {ROUTE_TOL:.0e}")
    return 0


def ratchet_report(spec, V, h):
    """Drift asymmetry ``A = V_eff(V) + V_eff(-V)`` with its error bar."""
    plus, _, grid = compute_effective(spec, V, h)
    minus, _, _ = compute_effective(grid, -V)
    mirrored, _, _ = compute_effective(mirror(spec), V, h)
    A = plus.V_eff + minus.V_eff
    err = plus.route_spread + minus.route_spread + ERROR_FLOOR
    symmetric = box_set(mirror(spec)) == box_set(spec)
    return {
        "V": V,
        "h": h,
        "V_eff_plus": plus.V_eff,
        "V_eff_minus": minus.V_eff,
        "sigma2_plus": plus.sigma2,
        "sigma2_minus": minus.sigma2,
        "asymmetry": A,
        "errorBar": err,
        "resolved": abs(A) > 10 * err,
        "sign": int(np.sign(A)) if abs(A) > err else 0,
        "mirrorDefect": abs(mirrored.V_eff + minus.V_eff),
        "symmetric": symmetric,
        "geometryLabel": spec.label,
    }


def cmd_ratchet(args):
    spec, digest = _load_spec(args.geom)
    V = abs(spec.drift if args.v is None else args.v)
    rep = ratchet_report(spec, V, args.h)
    man = _manifest(args, spec.label, digest, {"V": V, "h": args.h})
    write_json(man.add(os.path.join(args.out, "ratchet.json")), rep)
    man.write(args.out)
    _emit(args, rep)
    if rep["symmetric"] and abs(rep["asymmetry"]) > rep["errorBar"]:
        raise InvariantViolation(f"mirror-symmetric tube shows asymmetry {rep['asymmetry']:.2e}")
    if rep["mirrorDefect"] > ROUTE_TOL:
        raise InvariantViolation(f"mirror antisymmetry violated by {rep['mirrorDefect']:.2e}")
    return 0


def cmd_bloch(args):
    spec, digest = _load_spec(args.geom)
    V = spec.drift if args.v is None else args.v
    grid = rasterize(spec, args.h)
    samples = bloch_scan(grid, V, default_thetas(args.theta_max))
    fit = taylor_fit(samples)
    neg_thetas = [s * f * args.theta_max for f in (0.5, 1.0, 2.0) for s in (-1, 1)]
    margin, neg = negativity_scan(grid, V, neg_thetas)
    pde, _, _ = compute_effective(grid, V)
    lam = {s.theta: s.lam for s in samples}
    conj = max(abs(lam[t] - np.conj(lam[-t])) for t in lam)
    record = {"fit": fit.to_record(), "V": V, "h": args.h, "lambda0": abs(lam[0.0]), "conjugateDefect": float(conj),
              "negativityMargin": margin, "pde": {"V_eff": pde.V_eff, "sigma2": pde.sigma2},
              "geometryLabel": spec.label}
    man = _manifest(args, spec.label, digest, {"V": V, "h": args.h, "thetaMax": args.theta_max})
    merged = {s.theta: s for s in neg + samples}
    rows = [[s.theta, s.lam.real, s.lam.imag, s.residual] for _, s in sorted(merged.items())]
    write_csv(man.add(os.path.join(args.out, "bloch.csv")), ["theta", "re", "im", "residual"], rows)
    write_json(man.add(os.path.join(args.out, "bloch.json")), record)
    with open(man.add(os.path.join(args.out, "bloch.svg")), "w") as fh:
        th = [r[0] for r in rows]
        fh.write(svg_plot([("Re", th, [r[1] for r in rows]), ("Im", th, [r[2] for r in rows])],
                          title=f"lambda_0(theta), {spec.label}, V={V:g}", xlabel="theta", ylabel="lambda_0"))
    man.write(args.out)
    _emit(args, record, (["theta", "re", "im", "residual"], rows))
    return 0


def cmd_mc(args):
    spec, digest = _load_spec(args.geom)
    V = spec.drift if args.v is None else args.v
    cfg = McConfig(args.paths, args.t, args.dt, args.seed)
    est, batches = estimate_effective(spec, V, cfg)
    record = dict(est.to_record(), V=V, seed=args.seed, geometryLabel=spec.label)
    man = _manifest(args, spec.label, digest, {"V": V, "paths": args.paths, "T": args.t, "dt": args.dt}, args.seed)
    rows = [[k, e.V_eff, e.V_eff_se, e.sigma2, e.sigma2_se] for k, e in batches]
    header = ["paths", "V_eff", "V_eff_se", "sigma2", "sigma2_se"]
    write_csv(man.add(os.path.join(args.out, "mc_batches.csv")), header, rows)
    write_json(man.add(os.path.join(args.out, "mc.json")), record)
    man.write(args.out)
    _emit(args, record, (header, rows))
    return 0


def _strip_task(job):
    spec, eps, h, V, tau = job
    return run_homogenization(spec, eps, h, V, tau)


def cmd_strip(args):
    spec, digest = _load_spec(args.geom)
    V = 0.0 if args.v is None else args.v
    eps_list = sorted(args.eps_list or [1 / 8, 1 / 16], reverse=True)
    tau = 1.0 if args.t is None else args.t
    runs = _map(_strip_task, [(spec, e, args.h, V, tau) for e in eps_list], args.workers)
    man = _manifest(args, spec.label, digest, {"V": V, "h": args.h, "eps": eps_list, "tau": tau})
    series = []
    for k, r in enumerate(runs):
        path = man.add(os.path.join(args.out, f"strip_{k}.csv"))
        write_csv(path, ["s", "ubar", "w"], zip(r.s, r.ubar, r.w))
        series.append((f"eps={r.eps:g}", list(r.eps * (r.s - 0.5 * r.solution.grid.n_periods)), list(r.ubar - r.w)))
    sup = [r.comparison.sup_error for r in runs]
    record = {"runs": [dict(r.comparison.to_record(), movingFrameSupError=r.moving_frame.sup_error,
                            nPeriods=r.solution.grid.n_periods, massDriftRate=r.solution.mass_drift_rate)
                       for r in runs],
              "ratios": [sup[i + 1] / sup[i] for i in range(len(sup) - 1)], "V": V, "h": args.h,
              "geometryLabel": spec.label}
    write_json(man.add(os.path.join(args.out, "strip.json")), record)
    with open(man.add(os.path.join(args.out, "strip.svg")), "w") as fh:
        fh.write(svg_plot(series, title="ubar - w", xlabel="eps (s - centre)", ylabel="error"))
    man.write(args.out)
    _emit(args, record, (["eps", "supError", "l2Error"],
                         [[r.eps, r.comparison.sup_error, r.comparison.l2_error] for r in runs]))
    return 0


def _deadzone_task(job):
    family, eps, h = job
    return sigma_scan(family, [eps], family.base, h)[0]


def cmd_deadzone(args):
    family, digest = _load_family(args.geom)
    eps_list = sorted(args.eps_list or [1 / 6, 1 / 12, 1 / 24], reverse=True)
    rows = _map(_deadzone_task, [(family, e, args.h) for e in eps_list], args.workers)
    man = _manifest(args, family.base.label + "+deadzone", digest, {"eps": eps_list, "h": args.h})
    header = ["eps", "h", "sigma2", "leadingTerm", "gap"]
    table = [[r.eps, r.h, r.sigma2, r.leading_term, r.gap] for r in rows]
    write_csv(man.add(os.path.join(args.out, "deadzone.csv")), header, table)
    record = {"rows": [r.to_record() for r in rows], "dim": family.base.dim}
    if len(rows) >= 3:
        record["fit"] = extrapolate_limit(rows).to_record()
    write_json(man.add(os.path.join(args.out, "deadzone.json")), record)
    with open(man.add(os.path.join(args.out, "deadzone.svg")), "w") as fh:
        fh.write(svg_plot([("|gap|", [r.eps for r in rows], [abs(r.gap) for r in rows])], title="dead-zone gap",
                          xlabel="eps", ylabel="|gap|", logx=True, logy=True))
    man.write(args.out)
    _emit(args, record, (header, table))
    return 0


# -- parser -----------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="tubehomog", description="Effective transport in periodic tubes.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, geom_default="preset:finger"):
        sp.add_argument("--geom", default=geom_default,
                        help="geometry JSON file or preset:<name> (%s)" % ", ".join(sorted(PRESETS)))
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--format", choices=("json", "csv"), default="json", help="stdout format")

    sp = sub.add_parser("geom", help="describe a geometry")
    common(sp)
    sp.set_defaults(func=cmd_geom)

    for name, func, help_ in (("cell", cmd_cell, "effective parameters from the cell problems"),
                              ("ratchet", cmd_ratchet, "drift asymmetry under V -> -V")):
        sp = sub.add_parser(name, help=help_)
        common(sp)
        sp.add_argument("--v", type=_number, default=None, help="drift V (default: geometry drift)")
        sp.add_argument("--h", type=_number, default=1 / 32, help="grid spacing")
        sp.set_defaults(func=func)

    sp = sub.add_parser("bloch", help="principal Bloch eigenvalue and its Taylor fit")
    common(sp)
    sp.add_argument("--v", type=_number, default=None)
    sp.add_argument("--h", type=_number, default=1 / 64)
    sp.add_argument("--theta-max", type=_number, default=THETA_MAX)
    sp.set_defaults(func=cmd_bloch)

    sp = sub.add_parser("mc", help="Monte Carlo estimates")
    common(sp)
    sp.add_argument("--v", type=_number, default=None)
    sp.add_argument("--paths", type=int, default=20000)
    sp.add_argument("--t", type=_number, default=50.0, help="time horizon T")
    sp.add_argument("--dt", type=_number, default=1e-4)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_mc)

    sp = sub.add_parser("strip", help="homogenization check on a long strip")
    common(sp)
    sp.add_argument("--v", type=_number, default=None, help="drift V (default 0)")
    sp.add_argument("--h", type=_number, default=1 / 16)
    sp.add_argument("--eps-list", type=_number_list, default=None, help="comma-separated eps values")
    sp.add_argument("--t", type=_number, default=None, help="macroscopic time tau; t = tau / eps^2 (default 1)")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_strip)

    sp = sub.add_parser("deadzone", help="dead-zone scan over channel widths")
    common(sp, geom_default="preset:d3family")
    sp.add_argument("--eps-list", type=_number_list, default=None)
    sp.add_argument("--h", type=_number, default=None, help="fixed grid spacing (default eps/2)")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_deadzone)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InvariantViolation, NonPositiveNullvector, NonNegativeRealPart) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 2
    except (TubeError, OSError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
