"""Limiting overlap functions between full and truncated singular vectors.

Three rescaled overlap channels are computed: squared right-vector
overlaps, squared left-vector overlaps, and the signed product of the
two.  For a zero starting matrix everything is in closed form; for a
general starting matrix the values come from a resolvent pipeline:
evolve the two Stieltjes transforms, map the evaluation points along
the characteristics, evaluate the time-zero double resolvents there,
propagate them to time ``t`` with explicit rational formulas, and peel
off the overlap functions by boundary-difference inversion.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad

from .ensemble import overlap_frames
from .errors import (
    EdgeProximityError,
    NearSingularDenominatorError,
    ParameterError,
    SingularInputError,
)
from .params import Dims, ShapeRatios
from .spectral import (
    AtomicStieltjes,
    MPSpec,
    SolverOptions,
    default_eps_schedule,
    evolve_stieltjes,
    extrapolate_to_zero,
    mp_density,
    mp_edges,
    plemelj_boundary,
)

__all__ = [
    "OverlapTriple",
    "KernelOverlaps",
    "CharacteristicPoint",
    "ResolventTriple",
    "InitialOverlapTables",
    "mp_overlap_triple",
    "mp_kernel_overlaps",
    "characteristic_point",
    "initial_resolvents",
    "propagate_resolvents",
    "evolved_resolvents",
    "invert_bulk",
    "invert_null_overlap",
    "general_overlap_triple",
    "normalization_check",
    "kernel_row_normalization",
]


@dataclass(frozen=True)
class OverlapTriple:
    """Rescaled overlap limits: right-squared, left-squared, signed product."""

    vbar: float
    ubar: float
    wbar: float


@dataclass(frozen=True)
class KernelOverlaps:
    """Left-vector overlap limits involving the truncation null spaces."""

    u1_of_lambda: float
    u2_of_mu: float
    u3: float


@dataclass(frozen=True)
class CharacteristicPoint:
    """Evaluation points mapped back to time zero along the characteristics."""

    z: complex
    ztilde: complex
    zt: complex
    ztp: complex
    zttilde: complex
    zttildep: complex


@dataclass(frozen=True)
class ResolventTriple:
    """Evaluators for the three double resolvents at a fixed time."""

    sv: Callable[[complex, complex], complex]
    su: Callable[[complex, complex], complex]
    sw: Callable[[complex, complex], complex]


def _bar_coordinates(r: ShapeRatios, mu: float, lam: float) -> tuple[float, float]:
    lam_bar = lam - (1.0 + 1.0 / r.q) * r.t
    mu_bar = mu - (r.alpha + r.beta / r.q) * r.t
    return lam_bar, mu_bar


def _shared_denominator(r: ShapeRatios, lam_bar: float, mu_bar: float) -> float:
    ab = r.alpha * r.beta
    return (1.0 - ab) ** 2 * r.t**2 + r.q * (lam_bar - mu_bar) * (
        ab * lam_bar - mu_bar
    )


def mp_overlap_triple(r: ShapeRatios, mu: float, lam: float) -> OverlapTriple:
    """Closed-form overlap limits for a zero starting matrix.

    Valid for ``lam`` and ``mu`` inside the respective supports; the
    shared denominator is positive there and a nonpositive value flags
    an out-of-bulk evaluation point.
    """
    if r.t <= 0:
        raise ParameterError("overlap limits require t > 0")
    lam_bar, mu_bar = _bar_coordinates(r, mu, lam)
    den = _shared_denominator(r, lam_bar, mu_bar)
    if den <= 0:
        raise EdgeProximityError(
            f"shared denominator {den:.3e} <= 0 at (mu={mu}, lam={lam}); "
            "point outside the joint bulk"
        )
    a, b, t, q = r.alpha, r.beta, r.t, r.q
    ab = a * b
    vbar = q * ((1 - a) * t * mu_bar + a * (1 - b) * t * lam_bar
                + (1 - ab) * (a + 1 / q) * t**2) / den
    ubar = q * ((1 - b) * t * mu_bar + b * (1 - a) * t * lam_bar
                + (1 - ab) * (1 + b / q) * t**2) / den
    wbar = q * (1 - ab) * t * np.sqrt(lam * mu) / den
    return OverlapTriple(vbar=float(vbar), ubar=float(ubar), wbar=float(wbar))


def mp_kernel_overlaps(r: ShapeRatios, mu: float, lam: float) -> KernelOverlaps:
    """Closed-form null-space overlap limits for a zero starting matrix.

    Requires both null spaces to be macroscopic: ``q < 1`` and
    ``beta > alpha q``.
    """
    if r.t <= 0:
        raise ParameterError("kernel overlap limits require t > 0")
    if r.q >= 1.0 or r.beta <= r.alpha * r.q + 1e-15:
        raise ParameterError(
            "degenerate null space: kernel overlaps need q < 1 and beta > alpha*q"
        )
    a, b, t, q = r.alpha, r.beta, r.t, r.q
    u1 = (1 - a) * t / (a * lam + (1 - a) * (1 / q - a) * t)
    u2 = (1 - b) * t / (mu + (1 - b) * (1 / q - a) * t)
    u3 = q / (1 - a * q)
    return KernelOverlaps(u1_of_lambda=float(u1), u2_of_mu=float(u2), u3=float(u3))


def characteristic_point(
    g: complex, gtilde: complex, z: complex, ztilde: complex, r: ShapeRatios
) -> CharacteristicPoint:
    """Map (z, ztilde) back along the characteristics given the transforms there."""
    t = r.t
    zt = 1.0 - t * g
    zttilde = 1.0 - r.alpha * t * gtilde
    return CharacteristicPoint(
        z=complex(z),
        ztilde=complex(ztilde),
        zt=zt,
        ztp=z * zt - r.c * t,
        zttilde=zttilde,
        zttildep=ztilde * zttilde - r.c_tilde * t,
    )


@dataclass(frozen=True)
class InitialOverlapTables:
    """Noise-free overlap tables between the two sets of singular vectors.

    ``lam0`` holds all N squared singular values of the starting matrix,
    ``mu0`` the n nonzero ones of its kept block.  ``v0`` (n x N) and
    ``w0`` (n x N) cover the nonzero truncated vectors; ``u0`` (m x M)
    also covers the in-block null completion rows.
    """

    lam0: np.ndarray
    mu0: np.ndarray
    v0: np.ndarray
    u0: np.ndarray
    w0: np.ndarray

    def __post_init__(self):
        for name in ("lam0", "mu0", "v0", "u0", "w0"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n, N = self.v0.shape
        m, M = self.u0.shape
        if self.lam0.shape != (N,) or self.mu0.shape != (n,):
            raise ParameterError("eigenvalue vectors inconsistent with table shapes")
        if self.w0.shape != (n, N):
            raise ParameterError("w0 must have the same shape as v0")
        for name in ("v0", "u0"):
            tab = getattr(self, name)
            if tab.min() < -1e-12 or tab.max() > 1.0 + 1e-12:
                raise ParameterError(f"{name} entries must lie in [0, 1]")
            if not np.allclose(tab.sum(axis=1), 1.0, atol=1e-8):
                raise ParameterError(f"rows of {name} must sum to 1")

    @property
    def dims(self) -> Dims:
        n, N = self.v0.shape
        m, M = self.u0.shape
        return Dims(M=M, N=N, m=m, n=n)

    @staticmethod
    def from_matrix(a: np.ndarray, dims: Dims) -> "InitialOverlapTables":
        """Tables from an explicit starting matrix, using the null-space
        conventions of the ensemble module."""
        full, trunc = overlap_frames(np.asarray(a, dtype=float), dims)
        n, N, m, M = dims.n, dims.N, dims.m, dims.M
        pv = trunc.right[:, :n].T @ full.right
        pu = trunc.left[:, :m].T @ full.left
        lam0 = np.zeros(N)
        lam0[: full.svals.size] = full.svals**2
        mu0 = trunc.svals[:n] ** 2
        return InitialOverlapTables(
            lam0=lam0, mu0=mu0, v0=pv**2, u0=pu**2, w0=pv * pu[:n, :N]
        )


def initial_resolvents(
    tables: InitialOverlapTables | None, r: ShapeRatios
) -> ResolventTriple:
    """Time-zero double resolvents as exact atom sums.

    With ``tables=None`` (zero starting matrix, all atoms at the origin)
    the sums collapse to ``alpha/(z*zt)``, ``beta/(q*z*zt)`` and ``0``.
    Evaluation closer than 1e-9 to an atom raises.
    """
    if tables is None:
        alpha, bq = r.alpha, r.beta / r.q

        def sv(z, zt):
            return alpha / (z * zt)

        def su(z, zt):
            return bq / (z * zt)

        def sw(z, zt):
            return 0.0j

        return ResolventTriple(sv=sv, su=su, sw=sw)

    d = tables.dims
    N = d.N
    lam_pad = np.concatenate([tables.lam0, np.zeros(d.M - d.N)])
    mu_pad = np.concatenate([tables.mu0, np.zeros(d.m - d.n)])
    w_weights = np.sqrt(np.outer(tables.mu0, tables.lam0)) * tables.w0

    def _kernel(z, atoms):
        dist = complex(z) - atoms
        if np.min(np.abs(dist)) < 1e-9:
            raise SingularInputError(
                f"evaluation point {z} within 1e-9 of a spectrum atom"
            )
        return 1.0 / dist

    def sv(z, zt):
        return complex(_kernel(zt, tables.mu0) @ tables.v0 @ _kernel(z, tables.lam0)) / N

    def su(z, zt):
        return complex(_kernel(zt, mu_pad) @ tables.u0 @ _kernel(z, lam_pad)) / N

    def sw(z, zt):
        return complex(_kernel(zt, tables.mu0) @ w_weights @ _kernel(z, tables.lam0)) / N

    return ResolventTriple(sv=sv, su=su, sw=sw)


def propagate_resolvents(
    s0: ResolventTriple, cp: CharacteristicPoint, t: float
) -> tuple[complex, complex, complex]:
    """Time-``t`` resolvent values from the time-zero triple.

    Evaluates the time-zero resolvents at the mapped products and
    combines them rationally; all three share the denominator
    ``(1 - t*sw0)^2 - zt*ztp*zttilde*zttildep*sv0*su0*t^2``.
    """
    big_z = cp.zt * cp.ztp
    big_zt = cp.zttilde * cp.zttildep
    sv0 = s0.sv(big_z, big_zt)
    su0 = s0.su(big_z, big_zt)
    sw0 = s0.sw(big_z, big_zt)
    cross = big_z * big_zt * sv0 * su0
    den = (1.0 - t * sw0) ** 2 - cross * t**2
    magnitude = abs(1.0 - t * sw0) ** 2 + abs(cross) * t**2
    if abs(den) < 1e-12 * (1.0 + magnitude):
        raise NearSingularDenominatorError(
            f"propagation denominator |D| = {abs(den):.3e} too small at "
            f"(z={cp.z}, ztilde={cp.ztilde}, t={t})"
        )
    sv = cp.zt * cp.zttilde * sv0 / den
    su = cp.ztp * cp.zttildep * su0 / (cp.z * cp.ztilde * den)
    sw = (sw0 * (1.0 - t * sw0) + cross * t) / den
    return sv, su, sw


def evolved_resolvents(
    tables: InitialOverlapTables | None,
    r: ShapeRatios,
    opts: SolverOptions = SolverOptions(),
) -> Callable[[complex, complex, float], tuple[complex, complex, complex]]:
    """Evaluator ``(z, ztilde, t) -> (sv, su, sw)`` for the evolved triple.

    Each call solves the two implicit transform equations (cached per
    evaluation point) before mapping and propagating.
    """
    if tables is None:
        g0 = AtomicStieltjes(np.zeros(1))
        g0t = AtomicStieltjes(np.zeros(1))
    else:
        g0 = AtomicStieltjes(tables.lam0)
        g0t = AtomicStieltjes(tables.mu0)
    s0 = initial_resolvents(tables, r)
    cache: dict[tuple[complex, float, bool], complex] = {}

    def _transform(point: complex, t: float, truncated: bool) -> complex:
        key = (complex(point), float(t), truncated)
        if key not in cache:
            cache[key] = evolve_stieltjes(
                g0t if truncated else g0, point, t, r, truncated=truncated, opts=opts
            )
        return cache[key]

    def triple(z: complex, ztilde: complex, t: float):
        g = _transform(z, t, False)
        gt = _transform(ztilde, t, True)
        cp = characteristic_point(g, gt, z, ztilde, r.with_t(t))
        return propagate_resolvents(s0, cp, t)

    return triple


def _boundary_difference(values_plus, values_minus, prefactors):
    return [
        (p - m).real * pref for p, m, pref in zip(values_plus, values_minus, prefactors)
    ]


def invert_bulk(
    res: Callable[[complex, complex], complex],
    mu: float,
    lam: float,
    t: float,
    rho: float,
    rhot: float,
    r: ShapeRatios,
    eps_schedule: Sequence[float],
    channel: str = "v",
    rho_floor: float = 1e-12,
    rhot_floor: float = 1e-12,
) -> float:
    """Bulk overlap value from a single evolved-resolvent evaluator.

    Takes the real part of the difference of ``res`` across the second
    cut, normalised by ``2 pi^2 alpha rhot rho``, and extrapolates the
    equal offsets in both variables to zero.  The ``w`` channel carries
    the extra ``1/sqrt(mu*lam)`` weight of its resolvent.
    """
    if rho <= rho_floor or rhot <= rhot_floor:
        raise EdgeProximityError(
            f"bulk guard violated: rho={rho:.4g} (floor {rho_floor:.4g}), "
            f"rhot={rhot:.4g} (floor {rhot_floor:.4g})"
        )
    if channel not in ("v", "u", "w"):
        raise ParameterError(f"unknown channel {channel!r}")
    pref = 1.0 / (2.0 * np.pi**2 * r.alpha * rhot * rho)
    if channel == "w":
        pref /= np.sqrt(mu * lam)
    eps = np.asarray(eps_schedule, dtype=float)
    vals = []
    for e in eps:
        plus = res(complex(lam, -e), complex(mu, e))
        minus = res(complex(lam, -e), complex(mu, -e))
        vals.append((plus - minus).real * pref)
    return float(extrapolate_to_zero(eps, vals).real)


def _invert_bulk_triple(triple, mu, lam, t, rho, rhot, r, eps_schedule):
    """Shared-evaluation version of invert_bulk for all three channels."""
    pref = 1.0 / (2.0 * np.pi**2 * r.alpha * rhot * rho)
    eps = np.asarray(eps_schedule, dtype=float)
    vals = {"v": [], "u": [], "w": []}
    for e in eps:
        plus = triple(complex(lam, -e), complex(mu, e), t)
        minus = triple(complex(lam, -e), complex(mu, -e), t)
        for idx, ch in enumerate(("v", "u", "w")):
            vals[ch].append((plus[idx] - minus[idx]).real * pref)
    vbar = float(extrapolate_to_zero(eps, vals["v"]).real)
    ubar = float(extrapolate_to_zero(eps, vals["u"]).real)
    wbar = float(extrapolate_to_zero(eps, vals["w"]).real / np.sqrt(mu * lam))
    return OverlapTriple(vbar=vbar, ubar=ubar, wbar=wbar)


def _null_schedule(r: ShapeRatios, case: str, point: float | None) -> np.ndarray:
    """Offset schedule for the null-space limits.

    Arguments pinned at the origin restrict the offsets to a fraction
    of the distance from the origin to the corresponding support, which
    is where the nearest singularity of the boundary function sits.
    """
    lo_f, hi_f = mp_edges(MPSpec.full(r))
    lo_t, hi_t = mp_edges(MPSpec.truncated(r))
    width = min(hi_f - lo_f, hi_t - lo_t)
    scales = [width]
    if case in ("u1", "u3"):
        scales.append(4.0 * lo_t)
    if case in ("u2", "u3"):
        scales.append(4.0 * lo_f)
    if case == "u1" and point is not None:
        scales.append(4.0 * min(point - lo_f, hi_f - point))
    if case == "u2" and point is not None:
        scales.append(4.0 * min(point - lo_t, hi_t - point))
    scale = min(s for s in scales if s > 0)
    return default_eps_schedule(max(scale, width / 4096.0))


def invert_null_overlap(
    res: Callable[[complex, complex], complex],
    case: str,
    point: float | None,
    t: float,
    r: ShapeRatios,
    eps_schedule: Sequence[float] | None = None,
    density: float | None = None,
) -> float:
    """Null-space overlap value from the left-squared resolvent evaluator.

    ``case`` selects which argument is pinned at the origin:

    * ``"u1"`` -- truncated index in the null range, ``point`` is the
      bulk position of the full spectrum;
    * ``"u2"`` -- full index in the null range, ``point`` is the bulk
      position of the truncated spectrum;
    * ``"u3"`` -- both indices in the null ranges, no ``point``.

    ``density`` is the spectral density at ``point``; when omitted it is
    taken from the closed-form law of the corresponding spectrum.
    """
    if r.q >= 1.0 and case in ("u2", "u3"):
        raise ParameterError("u2/u3 need q < 1 (nonempty full null space)")
    if r.c_tilde <= 1e-15 and case in ("u1", "u3"):
        raise ParameterError("u1/u3 need beta > alpha*q (nonempty block null space)")
    if eps_schedule is None:
        eps_schedule = _null_schedule(r, case, point)
    eps = np.asarray(eps_schedule, dtype=float)
    vals = []
    if case == "u1":
        if point is None:
            raise ParameterError("u1 needs a full-spectrum position")
        rho = mp_density(MPSpec.full(r), point) if density is None else density
        if rho <= 0:
            raise EdgeProximityError(f"density vanishes at lam={point}")
        pref = 1.0 / (np.pi * r.c_tilde * rho)
        for e in eps:
            s = res(complex(point, -e), complex(0.0, e))
            vals.append((1j * e * s).imag * pref)
    elif case == "u2":
        if point is None:
            raise ParameterError("u2 needs a truncated-spectrum position")
        rhot = mp_density(MPSpec.truncated(r), point) if density is None else density
        if rhot <= 0:
            raise EdgeProximityError(f"density vanishes at mu={point}")
        pref = 1.0 / (np.pi * r.alpha * r.c * rhot)
        for e in eps:
            s = res(complex(0.0, e), complex(point, -e))
            vals.append((1j * e * s).imag * pref)
    elif case == "u3":
        pref = 1.0 / (r.c_tilde * r.c)
        for e in eps:
            s = res(complex(0.0, e), complex(0.0, e))
            vals.append(((1j * e) ** 2 * s).real * pref)
    else:
        raise ParameterError(f"unknown kernel case {case!r}")
    return float(extrapolate_to_zero(eps, vals).real)


def _atom_spread(atoms: np.ndarray) -> float:
    atoms = np.asarray(atoms, dtype=float)
    return float(atoms.max() - atoms.min()) if atoms.size else 0.0


def _point_schedule(r: ShapeRatios, mu: float, lam: float,
                    spread_lam: float = 0.0, spread_mu: float = 0.0) -> np.ndarray:
    """Equal-offset schedule adapted to the evaluation point.

    The boundary transforms are analytic up to the nearest branch
    point, so the offsets must stay well below the distance from
    ``(mu, lam)`` to the closed-form support edges; away from the edges
    this reduces to the width-scaled default.
    """
    lo_f, hi_f = mp_edges(MPSpec.full(r))
    lo_t, hi_t = mp_edges(MPSpec.truncated(r))
    width = min(hi_f - lo_f + spread_lam, hi_t - lo_t + spread_mu)
    dist = min(lam - lo_f, hi_f - lam + spread_lam,
               mu - lo_t, hi_t - mu + spread_mu)
    scale = min(width, max(4.0 * dist, width / 64.0))
    return default_eps_schedule(scale)


def general_overlap_triple(
    tables: InitialOverlapTables | None,
    r: ShapeRatios,
    mu: float,
    lam: float,
    eps_schedule: Sequence[float] | None = None,
    opts: SolverOptions = SolverOptions(),
) -> OverlapTriple:
    """Overlap limits for a general starting matrix via the resolvent pipeline.

    Composes the implicit transform solves, the characteristic map, the
    time-zero atom sums, the rational propagation and the boundary
    inversion for all three channels.  Densities at ``(mu, lam)`` are
    extracted from the evolved transforms themselves.
    """
    if r.t <= 0:
        raise ParameterError("overlap limits require t > 0")
    if tables is None:
        g0 = AtomicStieltjes(np.zeros(1))
        g0t = AtomicStieltjes(np.zeros(1))
        spread_lam = spread_mu = 0.0
    else:
        g0 = AtomicStieltjes(tables.lam0)
        g0t = AtomicStieltjes(tables.mu0)
        spread_lam = _atom_spread(tables.lam0)
        spread_mu = _atom_spread(tables.mu0)
    if eps_schedule is None:
        eps_schedule = _point_schedule(r, mu, lam, spread_lam, spread_mu)

    rho = plemelj_boundary(
        lambda p, tt: evolve_stieltjes(g0, p, tt, r, opts=opts),
        lam, r.t, eps_schedule,
    ).density
    rhot = plemelj_boundary(
        lambda p, tt: evolve_stieltjes(g0t, p, tt, r, truncated=True, opts=opts),
        mu, r.t, eps_schedule,
    ).density
    if rho <= 0 or rhot <= 0:
        raise EdgeProximityError(
            f"vanishing density at (mu={mu}, lam={lam}): rho={rho}, rhot={rhot}"
        )
    triple = evolved_resolvents(tables, r, opts=opts)
    return _invert_bulk_triple(triple, mu, lam, r.t, rho, rhot, r, eps_schedule)


def _bulk_integral(r: ShapeRatios, fn) -> float:
    """Integral of fn(lam) against the full-spectrum density.

    Uses the substitution lam = lo + (hi-lo)*sin^2(theta), which removes
    both square-root edge factors of the density.
    """
    spec = MPSpec.full(r)
    lo, hi = mp_edges(spec)
    width = hi - lo

    def integrand(theta):
        s, c = np.sin(theta), np.cos(theta)
        lam = lo + width * s * s
        weight = width * width * s * s * c * c / (np.pi * spec.a * spec.t * lam)
        return fn(lam) * weight

    val, _ = quad(integrand, 0.0, np.pi / 2.0, limit=200, epsabs=1e-11, epsrel=1e-11)
    return float(val)


def normalization_check(r: ShapeRatios, mu: float) -> tuple[float, float]:
    """Sum rules for a bulk row: both integrals should equal 1.

    The right-vector channel integrates to 1 against the full density;
    the left-vector channel needs the extra null-space mass
    ``(1/q - 1) * u2(mu)`` whenever the full matrix is strictly tall.
    """
    vsum = _bulk_integral(r, lambda lam: mp_overlap_triple(r, mu, lam).vbar)
    usum = _bulk_integral(r, lambda lam: mp_overlap_triple(r, mu, lam).ubar)
    if r.q < 1.0:
        usum += r.c * mp_kernel_overlaps(r, mu, 1.0).u2_of_mu
    return vsum, usum


def kernel_row_normalization(r: ShapeRatios) -> float:
    """Sum rule for a null-space row: integral of u1 plus null mass, equals 1."""
    total = _bulk_integral(
        r, lambda lam: mp_kernel_overlaps(r, 1.0, lam).u1_of_lambda
    )
    total += r.c * mp_kernel_overlaps(r, 1.0, 1.0).u3
    return total
