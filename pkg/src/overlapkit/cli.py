"""Command-line interface.

Subcommands: ``density``, ``theory``, ``simulate``, ``compare``,
``burgers-check``.  Every command writes a CSV table with a ``#``
metadata header (or JSON with a ``meta`` object) and can additionally
render a figure with ``--plot``.

Exit codes: 0 success, 1 usage or parameter error, 2 acceptance-test
failure (``compare``), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import __version__
from .dataio import render_table, write_text
from .ensemble import (
    MatrixSpec,
    mc_rescaled_overlaps,
    resolve_threads,
)
from .errors import OverlapKitError, ParameterError
from .overlaps import (
    InitialOverlapTables,
    general_overlap_triple,
    mp_kernel_overlaps,
    mp_overlap_triple,
)
from .params import Dims, ShapeRatios
from .spectral import (
    AtomicStieltjes,
    MPSpec,
    SpectrumT0,
    bulk_grid,
    default_eps_schedule,
    evolve_stieltjes,
    mp_density,
    mp_edges,
    mp_hilbert,
    plemelj_boundary,
    quantile,
    tail_mass,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ACCEPTANCE = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError as err:
        raise ParameterError(f"cannot parse float list {text!r}") from err


def _parse_diagonal(text: str) -> np.ndarray:
    """Diagonal values, with value:count shorthand, e.g. '1:200,4:200'."""
    out: list[float] = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if ":" in item:
            value, _, count = item.partition(":")
            out.extend([float(value)] * int(count))
        else:
            out.append(float(item))
    if not out:
        raise ParameterError("empty diagonal specification")
    return np.asarray(out)


def build_parser() -> _Parser:
    parser = _Parser(prog="overlapkit", description=__doc__)
    parser.add_argument("--version", action="version",
                        version=f"overlapkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, *, ratios=True, matrix=False, mc=False, grid_default=15):
        if ratios:
            p.add_argument("--q", type=float, required=True,
                           help="column/row ratio of the full matrix")
            p.add_argument("--alpha", type=float, default=None,
                           help="kept-column fraction")
            p.add_argument("--beta", type=float, default=None,
                           help="kept-row fraction")
            p.add_argument("--t", type=float, required=True,
                           help="noise variance")
        p.add_argument("--grid", type=int, default=grid_default,
                       help="number of grid points")
        p.add_argument("--out", default=None,
                       help="output path (stdout when omitted)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--plot", default=None, metavar="PNG",
                       help="also render a figure to this file")
        p.add_argument("--eps-schedule", default=None,
                       help="comma list of offsets relative to the support width")
        if matrix:
            p.add_argument("--M", type=int, default=None,
                           help="row count of the full matrix")
            p.add_argument("--a-file", default=None,
                           help="starting matrix file (CSV or raw binary)")
            p.add_argument("--a-diag", default=None,
                           help="diagonal starting matrix, e.g. '1:200,4:200'")
        if mc:
            p.add_argument("--trials", type=int, default=200)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--threads", type=int, default=None)
        p.add_argument("--targets", default=None,
                       help="comma list of quantile fractions")

    p = sub.add_parser("density", help="spectral density and Hilbert transform")
    add_common(p, matrix=True, grid_default=50)
    p.add_argument("--mode", choices=("mp", "general"), default="mp")
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("theory", help="limiting overlap values")
    add_common(p, matrix=True)
    p.add_argument("--mode", choices=("mp", "general"), default="mp")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("simulate", help="Monte Carlo overlap estimates")
    add_common(p, mc=True)
    p.add_argument("--M", type=int, required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="theory vs Monte Carlo, with pass/fail")
    add_common(p, mc=True)
    p.add_argument("--M", type=int, required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("burgers-check",
                       help="validate the implicit transform equation")
    add_common(p, matrix=True, mc=True, grid_default=10)
    p.add_argument("--n-steps", type=int, default=2048)
    p.set_defaults(func=cmd_burgers_check)
    return parser


def _ratios_from_args(args) -> ShapeRatios:
    alpha = args.alpha if args.alpha is not None else 1.0
    beta = args.beta if args.beta is not None else 1.0
    return ShapeRatios(q=args.q, alpha=alpha, beta=beta, t=args.t)


def _meta(args, **extra) -> dict:
    # full config echo, minus the destinations (they do not affect the
    # computation, and identical reruns must be byte-identical)
    meta = {"version": __version__, "command": args.command}
    skip = {"func", "command", "out", "plot"}
    for key, value in sorted(vars(args).items()):
        if key in skip or value is None:
            continue
        meta[key.replace("_", "-")] = value
    meta.update(extra)
    return meta


def _starting_matrix(args, dims: Dims) -> MatrixSpec:
    if args.a_file and args.a_diag:
        raise ParameterError("give at most one of --a-file / --a-diag")
    if args.a_file:
        return MatrixSpec(dims=dims, kind="file", path=args.a_file)
    if args.a_diag is not None:
        return MatrixSpec(dims=dims, kind="diagonal",
                          diagonal=_parse_diagonal(args.a_diag))
    return MatrixSpec(dims=dims)


def _schedule(args, width: float) -> np.ndarray:
    if args.eps_schedule:
        rel = np.asarray(_parse_floats(args.eps_schedule))
        if rel.size < 3:
            raise ParameterError("eps schedule needs at least 3 entries")
        return rel * width
    return default_eps_schedule(width)


def _emit(args, columns, rows, meta):
    text = render_table(columns, rows, meta, fmt=args.format)
    write_text(args.out, text)


def _atoms_from_args(args, ratios: ShapeRatios) -> SpectrumT0:
    """Starting spectra (full, kept block) for the general mode."""
    if args.M is None:
        raise ParameterError("general mode needs --M to fix the matrix size")
    dims = Dims.from_ratios(args.M, ratios.q, ratios.alpha, ratios.beta)
    a = _starting_matrix(args, dims).materialize()
    return SpectrumT0.from_matrix(a, dims.m, dims.n)


def cmd_density(args) -> int:
    """Density/Hilbert grid for the full (and optionally truncated) spectrum."""
    ratios = _ratios_from_args(args)
    if ratios.t <= 0:
        raise ParameterError("density needs t > 0")
    spectra = [("full", MPSpec.full(ratios))]
    if args.alpha is not None or args.beta is not None:
        spectra.append(("truncated", MPSpec.truncated(ratios)))
    rows = []
    if args.mode == "mp":
        for name, spec in spectra:
            lo, hi = mp_edges(spec)
            for lam in np.linspace(lo, hi, args.grid + 2):
                try:
                    hil = mp_hilbert(spec, lam)
                except OverlapKitError:
                    hil = None
                rows.append((name, float(lam), float(mp_density(spec, lam)), hil))
    else:
        # interior rows only: the reference-window edges are branch
        # points, where the boundary extraction cannot converge
        spectrum0 = _atoms_from_args(args, ratios)
        for (name, spec), atoms, truncated in (
            (spectra[0], spectrum0.eigs, False),
            *(((spectra[1], spectrum0.tilde_eigs, True),) if len(spectra) > 1 else ()),
        ):
            lo, hi = mp_edges(spec)
            win_lo, win_hi = atoms.min() + lo, atoms.max() + hi
            width = win_hi - win_lo
            g0 = AtomicStieltjes(atoms)
            for lam in np.linspace(win_lo, win_hi, args.grid + 2)[1:-1]:
                dist = min(lam - win_lo, win_hi - lam)
                sched = _schedule(args, min(width, 4.0 * dist))
                bv = plemelj_boundary(
                    lambda p, tt: evolve_stieltjes(g0, p, tt, ratios,
                                                   truncated=truncated),
                    float(lam), ratios.t, sched,
                )
                rows.append((name, float(lam), bv.density, bv.hilbert))
    columns = ["spectrum", "lambda", "rho", "hilbert"]
    _emit(args, columns, rows, _meta(args))
    if args.plot:
        from .plotting import plot_density

        plot_density([dict(zip(columns, r)) for r in rows], args.plot)
    return EXIT_OK


def _theory_columns(with_kernel: bool) -> list[str]:
    cols = ["x", "y", "mu", "lambda", "vbar", "ubar", "wbar"]
    if with_kernel:
        cols += ["u1", "u2", "u3"]
    return cols


def _kernel_cells(ratios: ShapeRatios, mu: float, lam: float):
    k = mp_kernel_overlaps(ratios, mu, lam)
    return [k.u1_of_lambda, k.u2_of_mu, k.u3]


def cmd_theory(args) -> int:
    """Overlap limits on a quantile grid; the first row is the centered anchor."""
    ratios = _ratios_from_args(args)
    if ratios.t <= 0:
        raise ParameterError("theory needs t > 0")
    full, trunc = MPSpec.full(ratios), MPSpec.truncated(ratios)
    xs = _parse_floats(args.targets) if args.targets else [0.5]
    lam_grid = bulk_grid(full, args.grid)
    with_kernel = ratios.q < 1.0 and ratios.c_tilde > 1e-12

    tables = None
    if args.mode == "general":
        if args.M is None:
            raise ParameterError("general mode needs --M to fix the matrix size")
        dims = Dims.from_ratios(args.M, ratios.q, ratios.alpha, ratios.beta)
        a = _starting_matrix(args, dims).materialize()
        tables = InitialOverlapTables.from_matrix(a, dims)

    def evaluate(mu, lam):
        if args.mode == "mp":
            trip = mp_overlap_triple(ratios, mu, lam)
        else:
            trip = general_overlap_triple(tables, ratios, mu, lam)
        return [trip.vbar, trip.ubar, trip.wbar]

    rows = []
    anchor_lam = (1.0 + 1.0 / ratios.q) * ratios.t
    anchor_mu = (ratios.alpha + ratios.beta / ratios.q) * ratios.t
    points = [(tail_mass(trunc, anchor_mu), tail_mass(full, anchor_lam),
               anchor_mu, anchor_lam)]
    for x in xs:
        mu = quantile(trunc, x)
        for lam in lam_grid:
            points.append((x, tail_mass(full, lam), mu, float(lam)))
    for x, y, mu, lam in points:
        try:
            cells = evaluate(mu, lam)
            if with_kernel:
                cells += _kernel_cells(ratios, mu, lam)
        except OverlapKitError:
            cells = [None] * (3 + (3 if with_kernel else 0))
        rows.append([x, y, mu, lam] + cells)
    columns = _theory_columns(with_kernel)
    _emit(args, columns, rows, _meta(args, mode=args.mode))
    if args.plot:
        from .plotting import plot_theory

        plot_theory([dict(zip(columns, r)) for r in rows], args.plot)
    return EXIT_OK


def _bulk_targets(ratios: ShapeRatios, xs, grid: int):
    """(x, y) quantile targets spanning the full-spectrum bulk."""
    full = MPSpec.full(ratios)
    lam_points = bulk_grid(full, grid)
    ys = [float(tail_mass(full, lam)) for lam in lam_points]
    return [(x, y) for x in xs for y in ys]


def _simulate_rows(args, with_theory: bool):
    if getattr(args, "a_file", None) or getattr(args, "a_diag", None):
        raise ParameterError(
            "simulate/compare use the zero starting matrix; for general "
            "matrices use the library API"
        )
    dims = Dims.from_ratios(args.M, args.q,
                            args.alpha if args.alpha is not None else 1.0,
                            args.beta if args.beta is not None else 1.0)
    ratios = dims.ratios(args.t)
    xs = _parse_floats(args.targets) if args.targets else [0.5]
    targets = _bulk_targets(ratios, xs, args.grid)
    estimates = mc_rescaled_overlaps(
        MatrixSpec(dims=dims), args.t, targets, args.trials, args.seed,
        threads=args.threads,
    )
    full, trunc = MPSpec.full(ratios), MPSpec.truncated(ratios)
    rows = []
    n_pass = 0
    n_checks = 0
    for est in estimates:
        mu = quantile(trunc, est.x)
        lam = quantile(full, est.y)
        row = {"x": est.x, "y": est.y, "lambda": lam, "mu": mu}
        if with_theory:
            trip = mp_overlap_triple(ratios, mu, lam)
            theory = {"v": trip.vbar, "u": trip.ubar, "w": trip.wbar}
        for name in ("v", "u", "w"):
            e = getattr(est, name)
            if with_theory:
                row[f"{name}_theory"] = theory[name]
                n_checks += 1
                if abs(e.value - theory[name]) <= 3.0 * e.stderr:
                    n_pass += 1
            row[f"{name}_mc"] = e.value
            row[f"{name}_se"] = e.stderr
        rows.append(row)
    return dims, ratios, rows, n_pass, n_checks


def cmd_simulate(args) -> int:
    """Monte Carlo estimates over a bulk target grid."""
    _, _, rows, _, _ = _simulate_rows(args, with_theory=False)
    columns = list(rows[0].keys())
    _emit(args, columns, [[r[c] for c in columns] for r in rows], _meta(args))
    return EXIT_OK


def cmd_compare(args) -> int:
    """Theory and Monte Carlo side by side; exits 2 when the 3-se test fails."""
    _, _, rows, n_pass, n_checks = _simulate_rows(args, with_theory=True)
    fraction = n_pass / n_checks if n_checks else 0.0
    passed = fraction >= 0.9
    columns = list(rows[0].keys())
    meta = _meta(args, pass_fraction=fraction,
                 acceptance="pass" if passed else "fail")
    _emit(args, columns, [[r[c] for c in columns] for r in rows], meta)
    if args.plot:
        from .plotting import plot_compare

        plot_compare(rows, args.plot)
    if not passed:
        sys.stderr.write(
            f"compare: only {n_pass}/{n_checks} checks within 3 standard "
            f"errors (need 90%)\n"
        )
        return EXIT_ACCEPTANCE
    return EXIT_OK


def cmd_burgers_check(args) -> int:
    """Empirical transforms (diffusion endpoint and direct sample) vs solver."""
    from .sde import burgers_validate

    if args.M is None:
        raise ParameterError("burgers-check needs --M")
    N = int(round(args.q * args.M))
    dims = Dims(M=args.M, N=N, m=args.M, n=N)
    spec = _starting_matrix(args, dims)
    ratios = dims.ratios(args.t)
    lo, hi = mp_edges(MPSpec.full(ratios)) if args.t > 0 else (0.0, 1.0)
    a = spec.materialize()
    svals = np.linalg.svd(a, compute_uv=False)
    atom_lo = float(svals.min() ** 2) if svals.size else 0.0
    atom_hi = float(svals.max() ** 2) if svals.size else 0.0
    re = np.linspace(atom_lo + lo, atom_hi + hi, args.grid)
    z_grid = re + 1.0j
    result = burgers_validate(spec, args.t, args.n_steps, z_grid, args.seed)
    columns = ["re_z", "im_z", "g_sde_re", "g_sde_im", "g_direct_re",
               "g_direct_im", "g_theory_re", "g_theory_im", "dev_sde",
               "dev_direct", "residual"]
    rows = [
        [z.real, z.imag, gs.real, gs.imag, gd.real, gd.imag, gt.real, gt.imag,
         ds, dd, res]
        for z, gs, gd, gt, ds, dd, res in zip(
            result.z_grid, result.g_sde, result.g_direct, result.g_theory,
            result.dev_sde, result.dev_direct, result.residuals)
    ]
    meta = _meta(args, ks_statistic=result.ks_statistic,
                 max_deviation=result.max_deviation)
    _emit(args, columns, rows, meta)
    if args.plot:
        from .plotting import plot_burgers

        plot_burgers([dict(zip(columns, r)) for r in rows], args.plot)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "threads", None) is not None or args.command in (
        "simulate", "compare", "burgers-check",
    ):
        resolve_threads(getattr(args, "threads", None))
    try:
        return args.func(args)
    except ParameterError as err:
        sys.stderr.write(f"overlapkit: parameter error: {err}\n")
        return EXIT_USAGE
    except OverlapKitError as err:
        sys.stderr.write(f"overlapkit: numerical failure: {err}\n")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
